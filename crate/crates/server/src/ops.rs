//! Blocking operations behind each route. Stores opened once stay resident,
//! with their partition cache, until a build or failed mutation replaces them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepmap_api::*;
use deepmap_core::bench::{compare, generate as synth, ingest_csv, run_workload};
use deepmap_core::cache::PartitionCache;
use deepmap_core::encoding::{decode_predictions, EncodedRelation, KeyCodec};
use deepmap_core::hybrid::{HybridMapping, HYBRID_FORMAT};
use deepmap_core::mhas::{mhas_search, write_trace_csv};
use deepmap_core::repr::{build_hybrid, build_store, open_store, stored_format};
use deepmap_core::store::{read_component, Store};
use deepmap_core::Error;

pub type OpResult<T> = Result<T, ApiError>;

/// Decompressed-partition budget of each resident store's query cache.
pub const QUERY_CACHE_BYTES: u64 = 64 << 20;

fn invalid(message: impl Into<String>) -> ApiError {
    ApiError {
        kind: ErrorKind::Invalid,
        message: message.into(),
    }
}

enum Opened {
    Hybrid(Box<HybridMapping>),
    Other(Box<dyn Store>),
}

impl Opened {
    fn store(&self) -> &dyn Store {
        match self {
            Opened::Hybrid(h) => h.as_ref(),
            Opened::Other(s) => s.as_ref(),
        }
    }
}

struct Resident {
    opened: Opened,
    cache: PartitionCache,
}

#[derive(Default)]
pub struct State {
    stores: Mutex<HashMap<PathBuf, Arc<Mutex<Resident>>>>,
}

fn canonical(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn load_relation(path: &Path) -> OpResult<EncodedRelation> {
    Ok(EncodedRelation::from_bytes(&read_component(path)?)?)
}

fn write_relation(rel: &EncodedRelation, path: &Path) -> OpResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    fs::write(path, rel.to_bytes()).map_err(Error::from)?;
    Ok(())
}

fn dataset_summary(path: &Path, rel: &EncodedRelation, pearson: Option<Vec<f64>>) -> DatasetSummary {
    DatasetSummary {
        path: path.to_path_buf(),
        rows: rel.len() as u64,
        key_columns: rel.key_codec.components().iter().map(|c| c.name.clone()).collect(),
        value_columns: rel.value_columns.iter().map(|c| c.name.clone()).collect(),
        fixed_width_bytes: rel.fixed_width_bytes(),
        fingerprint: rel.fingerprint(),
        pearson,
    }
}

fn store_summary(path: &Path, store: &dyn Store, arch: Option<String>) -> StoreSummary {
    let storage = store.storage();
    StoreSummary {
        path: path.to_path_buf(),
        label: store.label(),
        rows: store.row_count(),
        ratio: storage.ratio(),
        storage,
        memorization_fraction: store.memorization(),
        arch,
    }
}

/// Column positions of `wanted` inside `headers`.
fn positions(headers: &[String], wanted: &[String], what: &str) -> OpResult<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == w)
                .ok_or_else(|| invalid(format!("missing {what} column `{w}`")))
        })
        .collect()
}

fn key_names(codec: &KeyCodec) -> Vec<String> {
    codec.components().iter().map(|c| c.name.clone()).collect()
}

/// Key tuples of every row, parsed as integers.
fn parse_keys(codec: &KeyCodec, rows: &Rows) -> OpResult<Vec<Vec<i64>>> {
    let at = positions(&rows.headers, &key_names(codec), "key")?;
    rows.rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            at.iter()
                .map(|&i| {
                    let cell = row.get(i).ok_or_else(|| invalid(format!("row {r} is short")))?;
                    cell.trim()
                        .parse::<i64>()
                        .map_err(|_| invalid(format!("row {r}: key `{cell}` is not an integer")))
                })
                .collect()
        })
        .collect()
}

impl State {
    fn resident(&self, path: &Path) -> OpResult<Arc<Mutex<Resident>>> {
        let key = canonical(path);
        let mut stores = self.stores.lock().expect("store map poisoned");
        if let Some(r) = stores.get(&key) {
            return Ok(r.clone());
        }
        // Hybrids reopen as such so they accept mutations.
        let opened = if stored_format(path)? == HYBRID_FORMAT {
            Opened::Hybrid(Box::new(HybridMapping::load(path)?))
        } else {
            Opened::Other(open_store(path)?)
        };
        let r = Arc::new(Mutex::new(Resident {
            opened,
            cache: PartitionCache::new(QUERY_CACHE_BYTES),
        }));
        stores.insert(key, r.clone());
        Ok(r)
    }

    fn install(&self, path: &Path, opened: Opened) {
        let r = Resident {
            opened,
            cache: PartitionCache::new(QUERY_CACHE_BYTES),
        };
        self.stores
            .lock()
            .expect("store map poisoned")
            .insert(canonical(path), Arc::new(Mutex::new(r)));
    }

    fn forget(&self, path: &Path) {
        self.stores.lock().expect("store map poisoned").remove(&canonical(path));
    }

    pub fn generate(&self, req: GenerateRequest) -> OpResult<DatasetSummary> {
        let g = synth(&req.spec)?;
        write_relation(&g.relation, &req.out)?;
        tracing::info!(rows = g.relation.len(), out = %req.out.display(), "generated relation");
        Ok(dataset_summary(&req.out, &g.relation, Some(g.pearson)))
    }

    pub fn ingest(&self, req: IngestRequest) -> OpResult<DatasetSummary> {
        let rel = ingest_csv(&req.csv, &req.key_columns)?;
        write_relation(&rel, &req.out)?;
        tracing::info!(rows = rel.len(), out = %req.out.display(), "ingested relation");
        Ok(dataset_summary(&req.out, &rel, None))
    }

    pub fn build(&self, req: BuildRequest) -> OpResult<StoreSummary> {
        let rel = load_relation(&req.data)?;
        let opened = if req.repr.is_hybrid() {
            Opened::Hybrid(Box::new(build_hybrid(&rel, req.repr, &req.options)?))
        } else {
            Opened::Other(build_store(&rel, req.repr, &req.options)?)
        };
        opened.store().persist(&req.out)?;
        let arch = match &opened {
            Opened::Hybrid(h) => h.arch.clone(),
            Opened::Other(_) => None,
        };
        let summary = store_summary(&req.out, opened.store(), arch);
        tracing::info!(label = %summary.label, ratio = summary.ratio, "built store");
        self.install(&req.out, opened);
        Ok(summary)
    }

    pub fn search(&self, req: SearchRequest) -> OpResult<SearchSummary> {
        if !req.repr.is_hybrid() {
            return Err(invalid(format!("search builds a hybrid, not `{}`", req.repr)));
        }
        let rel = load_relation(&req.data)?;
        let out = mhas_search(&rel, &req.space, &req.config)?;
        let mut h = HybridMapping::build(&rel, out.net, req.options.hybrid_config(req.repr))?;
        h.arch = Some(out.arch.to_string());
        h.save(&req.out)?;
        if let Some(path) = &req.trace_out {
            let file = fs::File::create(path).map_err(Error::from)?;
            write_trace_csv(&out.trace, file)?;
        }
        let store = store_summary(&req.out, &h, h.arch.clone());
        tracing::info!(arch = %out.arch, final_loss = out.final_loss, "search finished");
        self.install(&req.out, Opened::Hybrid(Box::new(h)));
        Ok(SearchSummary {
            store,
            arch: out.arch.to_string(),
            best_loss: out.best_loss,
            final_loss: out.final_loss,
            iterations_run: out.iterations_run,
            stopped_early: out.stopped_early,
            controller: out.controller,
            trace: out.trace,
        })
    }

    pub fn query(&self, req: QueryRequest) -> OpResult<QueryResponse> {
        let resident = self.resident(&req.store)?;
        let r = resident.lock().expect("store poisoned");
        let store = r.opened.store();
        let codec = store.key_codec();
        let (tuples, encoded): (Vec<Vec<i64>>, Vec<Option<u64>>) = match &req.keys {
            KeySource::Explicit(rows) => {
                let tuples = parse_keys(codec, rows)?;
                // Keys outside the domain are absent, not errors.
                let encoded = tuples.iter().map(|t| codec.encode(t).ok()).collect();
                (tuples, encoded)
            }
            KeySource::Random { count, seed } => {
                let keys = store.keys(&r.cache)?;
                if keys.is_empty() && *count > 0 {
                    return Err(invalid("store holds no keys to sample"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let picked: Vec<u64> = (0..*count).map(|_| keys[rng.gen_range(0..keys.len())]).collect();
                let tuples = picked.iter().map(|&k| codec.decode(k)).collect::<Result<_, _>>()?;
                (tuples, picked.into_iter().map(Some).collect())
            }
        };
        let present: Vec<u64> = encoded.iter().flatten().copied().collect();
        let (answers, stats) = store.lookup_codes(&present, &r.cache)?;
        let mut it = answers.into_iter();
        let codes: Vec<Option<Vec<u32>>> = encoded.iter().map(|e| e.and_then(|_| it.next().flatten())).collect();
        let mut verified = false;
        if let Some(path) = &req.verify_against {
            let rel = load_relation(path)?;
            let row_of: HashMap<u64, usize> = rel.keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
            for (e, got) in encoded.iter().zip(&codes) {
                let want = e.and_then(|k| row_of.get(&k)).map(|&i| rel.row_codes(i));
                if &want != got {
                    return Err(Error::AnswerMismatch {
                        key: e.unwrap_or(u64::MAX),
                        expected: format!("{want:?}"),
                        actual: format!("{got:?}"),
                    }
                    .into());
                }
            }
            verified = true;
        }
        Ok(QueryResponse {
            key_columns: key_names(codec),
            value_columns: store.decode_map().columns.iter().map(|c| c.0.clone()).collect(),
            keys: tuples,
            values: decode_predictions(&codes, store.decode_map())?,
            stats,
            verified,
        })
    }

    /// Runs `f` on a resident hybrid and persists it; a failure drops the
    /// in-memory copy so the next request reloads the last saved state.
    fn mutate<F>(&self, path: &Path, f: F) -> OpResult<MutationSummary>
    where
        F: FnOnce(&mut HybridMapping) -> OpResult<(usize, bool)>,
    {
        let resident = self.resident(path)?;
        let mut r = resident.lock().expect("store poisoned");
        let Opened::Hybrid(h) = &mut r.opened else {
            return Err(ApiError {
                kind: ErrorKind::ReadOnly,
                message: format!("`{}` is a read-only representation", r.opened.store().label()),
            });
        };
        let outcome = f(h).and_then(|done| {
            h.save(path)?;
            Ok(done)
        });
        match outcome {
            Ok((rows_affected, retrained)) => Ok(MutationSummary {
                rows_affected,
                rows_total: h.exist.count_ones(),
                modified_bytes: h.modified_bytes,
                retrained,
                storage: h.storage(),
            }),
            Err(e) => {
                drop(r);
                self.forget(path);
                Err(e)
            }
        }
    }

    fn rows_with_values(h: &mut HybridMapping, rows: &Rows) -> OpResult<Vec<(u64, Vec<u32>)>> {
        let keys = parse_keys(&h.key_codec, rows)?;
        let names: Vec<String> = h.decode.columns.iter().map(|c| c.0.clone()).collect();
        let at = positions(&rows.headers, &names, "value")?;
        let mut out = Vec::with_capacity(keys.len());
        for (tuple, row) in keys.iter().zip(&rows.rows) {
            let values: Vec<String> = at.iter().map(|&i| row[i].clone()).collect();
            out.push((h.key_codec.encode(tuple)?, h.intern_values(&values)?));
        }
        Ok(out)
    }

    fn retrain_if_due(h: &mut HybridMapping, strategy: &Option<RetrainStrategy>) -> OpResult<bool> {
        match strategy {
            Some(s) => Ok(h.maybe_retrain(s)?),
            None => Ok(false),
        }
    }

    pub fn insert(&self, req: MutateRequest) -> OpResult<MutationSummary> {
        self.mutate(&req.store, |h| {
            let rows = Self::rows_with_values(h, &req.rows)?;
            h.insert(&rows)?;
            Ok((rows.len(), Self::retrain_if_due(h, &req.retrain)?))
        })
    }

    pub fn update(&self, req: MutateRequest) -> OpResult<MutationSummary> {
        self.mutate(&req.store, |h| {
            let rows = Self::rows_with_values(h, &req.rows)?;
            h.update(&rows)?;
            Ok((rows.len(), Self::retrain_if_due(h, &req.retrain)?))
        })
    }

    pub fn delete(&self, req: MutateRequest) -> OpResult<MutationSummary> {
        self.mutate(&req.store, |h| {
            let keys = parse_keys(&h.key_codec, &req.rows)?
                .iter()
                .map(|t| h.key_codec.encode(t))
                .collect::<Result<Vec<_>, _>>()?;
            h.delete(&keys)?;
            Ok((keys.len(), Self::retrain_if_due(h, &req.retrain)?))
        })
    }

    pub fn compact(&self, req: CompactRequest) -> OpResult<MutationSummary> {
        self.mutate(&req.store, |h| {
            h.compact()?;
            Ok((0, false))
        })
    }

    pub fn bench(&self, req: BenchRequest) -> OpResult<Report> {
        let rel = load_relation(&req.data)?;
        let resident = self.resident(&req.store)?;
        let r = resident.lock().expect("store poisoned");
        let report = run_workload(r.opened.store(), &rel, &req.workload)?;
        tracing::info!(label = %report.label, mean_ns = report.latency.total_ns, "workload finished");
        Ok(report)
    }

    pub fn compare(&self, req: CompareRequest) -> OpResult<Comparison> {
        Ok(compare(&req.reports)?)
    }
}
