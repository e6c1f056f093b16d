//! Typed round trips through a live server.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use deepmap_api::*;
use deepmap_client::Client;

async fn client() -> Client {
    let (addr, _) = deepmap_server::spawn(SocketAddr::from(([127, 0, 0, 1], 0)))
        .await
        .unwrap();
    Client::new(format!("http://{addr}/")).unwrap()
}

fn small_recipe() -> ModelRecipe {
    ModelRecipe {
        shared: vec![16],
        private: vec![8],
        train: TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.01,
            ..TrainConfig::default()
        },
        ..ModelRecipe::default()
    }
}

fn options() -> BuildOptions {
    BuildOptions {
        partition_bytes: 2048,
        model: RetrainStrategy::Fixed(small_recipe()),
        ..BuildOptions::default()
    }
}

async fn generate(c: &Client, dir: &Path, rows: u64) -> PathBuf {
    let out = dir.join("rel.bin");
    let summary = c
        .generate(&GenerateRequest {
            spec: SyntheticSpec::high_corr(rows, 2, 6, 32, 0.01, 11),
            out: out.clone(),
        })
        .await
        .unwrap();
    assert_eq!(summary.rows, rows);
    assert!(summary.pearson.unwrap().iter().all(|p| p.is_finite()));
    out
}

fn rows(headers: &[&str], rows: &[&[&str]]) -> Rows {
    Rows {
        headers: headers.iter().map(|s| s.to_string()).collect(),
        rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    }
}

async fn lookup(c: &Client, store: &Path, ids: &[&str]) -> Vec<Option<Vec<String>>> {
    let keys = rows(&["id"], &ids.iter().map(std::slice::from_ref).collect::<Vec<_>>());
    c.query(&QueryRequest {
        store: store.to_path_buf(),
        keys: KeySource::Explicit(keys),
        verify_against: None,
    })
    .await
    .unwrap()
    .values
}

#[tokio::test]
async fn ingested_csv_answers_like_its_source() {
    let c = client().await;
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("in.csv");
    std::fs::write(&csv, "region,shop,kind\n1,10,food\n1,11,toys\n2,10,food\n3,12,tools\n").unwrap();
    let data = dir.path().join("in.bin");
    let summary = c
        .ingest(&IngestRequest {
            csv,
            key_columns: vec!["region".into(), "shop".into()],
            out: data.clone(),
        })
        .await
        .unwrap();
    assert_eq!(summary.rows, 4);
    assert_eq!(summary.value_columns, ["kind"]);

    let store = dir.path().join("store");
    let built = c
        .build(&BuildRequest {
            data: data.clone(),
            repr: Repr::Dm,
            options: options(),
            out: store.clone(),
        })
        .await
        .unwrap();
    assert_eq!(built.rows, 4);
    let answer = c
        .query(&QueryRequest {
            store,
            keys: KeySource::Explicit(rows(&["shop", "region"], &[&["11", "1"], &["12", "3"], &["12", "1"]])),
            verify_against: Some(data),
        })
        .await
        .unwrap();
    assert!(answer.verified);
    assert_eq!(answer.key_columns, ["region", "shop"]);
    assert_eq!(answer.keys, [vec![1, 11], vec![3, 12], vec![1, 12]]);
    let kinds: Vec<Option<String>> = answer.values.into_iter().map(|v| v.map(|mut v| v.remove(0))).collect();
    assert_eq!(kinds, [Some("toys".into()), Some("tools".into()), None]);
}

#[tokio::test]
async fn mutations_compaction_and_retraining() {
    let c = client().await;
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&c, dir.path(), 3000).await;
    let store = dir.path().join("dm");
    c.build(&BuildRequest {
        data,
        repr: Repr::DmL,
        options: options(),
        out: store.clone(),
    })
    .await
    .unwrap();

    // The key domain is fixed at build time, so inserts reuse deleted keys.
    let gone = rows(&["id"], &[&["0"], &["1"], &["2"]]);
    let s = c
        .delete(&MutateRequest {
            store: store.clone(),
            rows: gone,
            retrain: None,
        })
        .await
        .unwrap();
    assert_eq!(s.rows_total, 2997);

    let fresh = rows(&["id", "c0", "c1"], &[&["1", "v1", "v2"], &["2", "brand-new", "v0"]]);
    let s = c
        .insert(&MutateRequest {
            store: store.clone(),
            rows: fresh.clone(),
            retrain: None,
        })
        .await
        .unwrap();
    assert_eq!((s.rows_affected, s.rows_total), (2, 2999));
    assert!(s.modified_bytes > 0 && !s.retrained);

    let dup = c
        .insert(&MutateRequest {
            store: store.clone(),
            rows: fresh,
            retrain: None,
        })
        .await
        .unwrap_err();
    assert_eq!(dup.kind(), Some(ErrorKind::Conflict));

    let outside = rows(&["id", "c0", "c1"], &[&["3000", "v1", "v1"]]);
    let e = c
        .insert(&MutateRequest {
            store: store.clone(),
            rows: outside,
            retrain: None,
        })
        .await
        .unwrap_err();
    assert_eq!(e.kind(), Some(ErrorKind::Invalid));

    c.update(&MutateRequest {
        store: store.clone(),
        rows: rows(&["id", "c0", "c1"], &[&["10", "v5", "v5"]]),
        retrain: None,
    })
    .await
    .unwrap();

    let want = |v: &[&str]| Some(v.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let check = |got: Vec<Option<Vec<String>>>| {
        assert_eq!(got, [None, want(&["v5", "v5"]), want(&["brand-new", "v0"])]);
    };
    check(lookup(&c, &store, &["0", "10", "2"]).await);

    let compacted = c.compact(&CompactRequest { store: store.clone() }).await.unwrap();
    assert_eq!(compacted.rows_total, 2999);
    check(lookup(&c, &store, &["0", "10", "2"]).await);

    // A large modified share with a retrain strategy rebuilds the model.
    let many: Vec<Vec<String>> = (100..1500)
        .map(|i| vec![i.to_string(), "v0".into(), "v0".into()])
        .collect();
    let s = c
        .update(&MutateRequest {
            store: store.clone(),
            rows: Rows {
                headers: vec!["id".into(), "c0".into(), "c1".into()],
                rows: many,
            },
            retrain: Some(RetrainStrategy::Fixed(small_recipe())),
        })
        .await
        .unwrap();
    assert!(s.retrained);
    assert_eq!(s.modified_bytes, 0);
    check(lookup(&c, &store, &["0", "10", "2"]).await);
    assert_eq!(lookup(&c, &store, &["1200"]).await, [want(&["v0", "v0"])]);
}

#[tokio::test]
async fn search_bench_and_compare() {
    let c = client().await;
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&c, dir.path(), 4000).await;

    let trace = dir.path().join("trace.csv");
    let found = c
        .search(&SearchRequest {
            data: data.clone(),
            space: SearchSpace {
                max_shared_layers: 1,
                max_private_layers: 1,
                layer_sizes: vec![8, 16],
                heads: 1,
            },
            config: SearchConfig {
                nt: 12,
                nm: 4,
                nc: 2,
                model_rows: 1024,
                eval_rows: 1024,
                controller_steps: Some(4),
                ..SearchConfig::desk()
            },
            repr: Repr::Dm,
            options: options(),
            out: dir.path().join("searched"),
            trace_out: Some(trace.clone()),
        })
        .await
        .unwrap();
    assert_eq!(found.store.arch.as_deref(), Some(found.arch.as_str()));
    assert!(found.best_loss.is_finite() && found.iterations_run > 0);
    assert!(std::fs::read_to_string(trace).unwrap().lines().count() > found.trace.len());

    let workload = WorkloadSpec {
        batch_size: 200,
        batches: 3,
        repeats: 2,
        absent_fraction: 0.25,
        ..WorkloadSpec::default()
    };
    let mut reports = Vec::new();
    for (name, repr) in [("searched", None), ("abc", Some(Repr::AbcZ)), ("hb", Some(Repr::Hb))] {
        let store = dir.path().join(name);
        if let Some(repr) = repr {
            c.build(&BuildRequest {
                data: data.clone(),
                repr,
                options: options(),
                out: store.clone(),
            })
            .await
            .unwrap();
        }
        reports.push(
            c.bench(&BenchRequest {
                store,
                data: data.clone(),
                workload: workload.clone(),
            })
            .await
            .unwrap(),
        );
    }
    // Same keys, same answers, whatever the representation.
    assert!(reports.windows(2).all(|w| w[0].answer_digest == w[1].answer_digest));

    let table = c
        .compare(&CompareRequest {
            reports: reports.clone(),
        })
        .await
        .unwrap();
    assert_eq!(table.batch_sizes, [200]);
    let labels: Vec<&str> = table.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["dm-z", "abc-z", "hb"]);

    let empty = c.compare(&CompareRequest { reports: vec![] }).await.unwrap_err();
    assert_eq!(empty.kind(), Some(ErrorKind::Invalid));
}

#[tokio::test]
async fn unreachable_server_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let c = Client::new(format!("http://{addr}")).unwrap();
    let e = c.health().await.unwrap_err();
    assert!(matches!(e, deepmap_client::ClientError::Transport(_)), "{e}");
    assert_eq!(e.kind(), None);
}
