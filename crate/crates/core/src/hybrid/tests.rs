use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoding::{ColumnSchema, EncodedRelation, KeyCodec};
use crate::neural::{Activation, Dense, Head, LayerSpec, TrainConfig};
use crate::store::KvText;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` keys spread over `[0, 2n)`; column values follow the low key bits with 20%
/// random rows, so a trained net gets most but not all rows right.
fn relation(n: usize, seed: u64) -> EncodedRelation {
    let mut r = rng(seed);
    let mut keys: Vec<u64> = (0..2 * n as u64).collect();
    for i in 0..n {
        let j = r.gen_range(i..keys.len());
        keys.swap(i, j);
    }
    keys.truncate(n);
    let schemas = vec![
        ColumnSchema::value("a").with_dictionary(["w", "x", "y", "z"]).unwrap(),
        ColumnSchema::value("b").with_dictionary(["p", "q", "r"]).unwrap(),
    ];
    let cols = vec![
        keys.iter()
            .map(|k| {
                if r.gen_bool(0.2) {
                    r.gen_range(0..4)
                } else {
                    ((k % 16) / 4) as u32
                }
            })
            .collect(),
        keys.iter()
            .map(|k| {
                if r.gen_bool(0.2) {
                    r.gen_range(0..3)
                } else {
                    (k % 8 % 3) as u32
                }
            })
            .collect(),
    ];
    EncodedRelation::new(KeyCodec::single("k", 0, 2 * n as u64).unwrap(), schemas, keys, cols).unwrap()
}

fn recipe(epochs: usize) -> ModelRecipe {
    ModelRecipe {
        shared: vec![16],
        private: vec![],
        train: TrainConfig {
            epochs,
            batch_size: 64,
            learning_rate: 0.01,
            stop_delta: 0.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn small_config() -> HybridConfig {
    HybridConfig {
        partition_target_bytes: 40 * 16,
        ..Default::default()
    }
}

fn trained(data: &EncodedRelation) -> HybridMapping {
    let (net, _) = recipe(15).fit(data).unwrap();
    HybridMapping::build(data, net, small_config()).unwrap()
}

fn zero_net(data: &EncodedRelation) -> MultiTaskNet {
    ModelRecipe {
        init_std: 0.0,
        ..recipe(0)
    }
    .untrained(data)
    .unwrap()
}

fn oracle(data: &EncodedRelation) -> BTreeMap<u64, Vec<u32>> {
    (0..data.len()).map(|i| (data.keys[i], data.row_codes(i))).collect()
}

fn assert_sweep(h: &HybridMapping, reference: &BTreeMap<u64, Vec<u32>>, domain: u64) {
    let keys: Vec<u64> = (0..domain).collect();
    let (got, _) = h.lookup(&keys, &PartitionCache::new(1 << 12)).unwrap();
    for (k, a) in keys.iter().zip(got) {
        assert_eq!(a.as_ref(), reference.get(k), "key {k}");
    }
}

/// Net mapping key k (span <= 16) straight to `values[k]` for one head.
fn perfect_net(values: &[u32], card: u32) -> MultiTaskNet {
    let f = KeyFeaturizer::new(&[values.len() as u64], 16).unwrap();
    let mut out = Dense::zeros(LayerSpec {
        in_dim: f.width(),
        out_dim: card as usize,
        activation: Activation::None,
    });
    for (k, &v) in values.iter().enumerate() {
        out.weights[k * card as usize + v as usize] = 10.0;
    }
    MultiTaskNet::new(
        f,
        vec![],
        vec![Head {
            tap: 0,
            layers: vec![out],
        }],
    )
    .unwrap()
}

#[test]
fn perfect_model_leaves_aux_empty() {
    let values = [0u32, 2, 1, 1, 0, 2, 2, 0, 1, 0];
    let data = EncodedRelation::new(
        KeyCodec::single("k", 0, 10).unwrap(),
        vec![ColumnSchema::value("v").with_dictionary(["a", "b", "c"]).unwrap()],
        (0..10).collect(),
        vec![values.to_vec()],
    )
    .unwrap();
    let h = HybridMapping::build(&data, perfect_net(&values, 3), HybridConfig::default()).unwrap();
    assert_eq!(h.aux.sealed_entries(), 0);
    assert_eq!(h.storage().aux, 8);
    assert_eq!(h.stats.memorization_fraction, 1.0);
    assert_sweep(&h, &oracle(&data), 12);
}

#[test]
fn uniform_model_misclassifies_every_nonzero_row() {
    let mut r = rng(3);
    let n = 10_000;
    let codes: Vec<u32> = (0..n).map(|_| r.gen_range(0..4)).collect();
    let data = EncodedRelation::new(
        KeyCodec::single("k", 0, n as u64).unwrap(),
        vec![ColumnSchema::value("v").with_dictionary(["a", "b", "c", "d"]).unwrap()],
        (0..n as u64).collect(),
        vec![codes.clone()],
    )
    .unwrap();
    let net = zero_net(&data);
    let pred = net.predict(&data.keys).unwrap();
    let h = HybridMapping::build(&data, net, HybridConfig::default()).unwrap();
    let expected = (0..n).filter(|&i| pred[0][i] != codes[i]).count() as u64;
    assert_eq!(h.stats.rows_misclassified, expected);
    let frac = expected as f64 / n as f64;
    assert!((frac - 0.75).abs() < 0.02, "{frac}");
    let rows = h.aux.merged_rows(0, &PartitionCache::unbounded()).unwrap();
    let stored: Vec<u64> = (0..rows.len() / 12)
        .map(|i| crate::store::row_key(&rows, 12, i))
        .collect();
    let want: Vec<u64> = (0..n as u64)
        .filter(|&k| pred[0][k as usize] != codes[k as usize])
        .collect();
    assert_eq!(stored, want);
}

#[test]
fn partitions_split_by_entry_count() {
    let n = 2500;
    let data = EncodedRelation::new(
        KeyCodec::single("k", 0, n).unwrap(),
        vec![ColumnSchema::value("v").with_dictionary(["a", "b"]).unwrap()],
        (0..n).collect(),
        vec![vec![1; n as usize]],
    )
    .unwrap();
    let config = HybridConfig {
        partition_target_bytes: 1000 * 12,
        ..Default::default()
    };
    let h = HybridMapping::build(&data, zero_net(&data), config).unwrap();
    let counts: Vec<u64> = h.aux.sealed.iter().map(|p| p.count).collect();
    assert_eq!(counts, vec![1000, 1000, 500]);
    for w in h.aux.sealed.windows(2) {
        assert!(w[0].max_key < w[1].min_key);
    }
}

#[test]
fn lookup_is_exact_and_rejects_absent_keys() {
    let data = relation(2000, 1);
    let h = trained(&data);
    assert!(h.stats.rows_misclassified > 0);
    assert!(h.stats.memorization_fraction > 0.5, "{:?}", h.stats);
    assert_sweep(&h, &oracle(&data), 4000 + 50);

    // an aux row wins over the model's differing prediction
    let cache = PartitionCache::unbounded();
    let mut stats = LookupStats::default();
    let first = h
        .aux
        .probe_sorted(h.store_id, &[h.aux.sealed[0].min_key], &cache, &mut stats)
        .unwrap();
    let k = h.aux.sealed[0].min_key;
    let Probe::Hit(stored) = &first[0] else {
        panic!("min key must be stored")
    };
    let model = h.predict_rows(&[k]).unwrap().remove(0);
    assert_ne!(&model, stored);
    assert_eq!(h.lookup(&[k], &cache).unwrap().0[0].as_ref(), Some(stored));
}

#[test]
fn batch_split_does_not_change_answers() {
    let data = relation(1500, 2);
    let h = trained(&data);
    let mut r = rng(5);
    let keys: Vec<u64> = (0..3000).map(|_| r.gen_range(0..3100)).collect();
    let cache = PartitionCache::new(2000);
    let (whole, stats) = h.lookup(&keys, &cache).unwrap();
    assert!(stats.partitions_decompressed <= h.aux.sealed.len() as u64);
    let mut pieces = Vec::new();
    for chunk in keys.chunks(77) {
        pieces.extend(h.lookup(chunk, &cache).unwrap().0);
    }
    assert_eq!(whole, pieces);
    assert!(cache.stats().peak_resident_bytes <= 2000);
}

#[test]
fn absent_only_batches_touch_no_partition() {
    let data = relation(500, 3);
    let h = trained(&data);
    let absent: Vec<u64> = (0..1000).filter(|k| !h.exist.contains(*k)).collect();
    let cache = PartitionCache::unbounded();
    let (got, stats) = h.lookup(&absent, &cache).unwrap();
    assert!(got.iter().all(Option::is_none));
    assert_eq!(stats.bytes_decompressed, 0);
}

#[test]
fn insert_follows_model_agreement() {
    let data = relation(800, 4);
    let mut h = trained(&data);
    let free: Vec<u64> = (0..1600).filter(|k| !h.exist.contains(*k)).take(2).collect();
    let pred = h.predict_rows(&free).unwrap();
    let overlay_before = h.aux.overlay.len();
    h.insert(&[(free[0], pred[0].clone())]).unwrap();
    assert_eq!(h.aux.overlay.len(), overlay_before);
    let wrong: Vec<u32> = pred[1].iter().map(|&c| (c + 1) % 3).collect();
    h.insert(&[(free[1], wrong.clone())]).unwrap();
    assert_eq!(h.aux.overlay.len(), overlay_before + 1);
    let cache = PartitionCache::unbounded();
    let got = h.lookup(&free, &cache).unwrap().0;
    assert_eq!(got, vec![Some(pred[0].clone()), Some(wrong)]);
    assert!(matches!(
        h.insert(&[(free[0], pred[0].clone())]),
        Err(Error::KeyAlreadyExists(_))
    ));
    assert!(matches!(
        h.insert(&[(1 << 40, pred[0].clone())]),
        Err(Error::KeyOutOfDomain(_))
    ));
    assert_eq!(h.modified_bytes, 2 * 16);
}

#[test]
fn delete_tombstones_sealed_rows() {
    let data = relation(800, 5);
    let mut h = trained(&data);
    let k = h.aux.sealed[0].min_key;
    let blobs: Vec<u64> = h.aux.sealed.iter().map(|p| p.blob.len()).collect();
    h.delete(&[k]).unwrap();
    assert_eq!(h.aux.overlay.get(&k), Some(&OverlayEntry::Tombstone));
    assert_eq!(h.aux.sealed.iter().map(|p| p.blob.len()).collect::<Vec<_>>(), blobs);
    assert_eq!(h.lookup(&[k], &PartitionCache::unbounded()).unwrap().0, vec![None]);
    assert!(matches!(h.delete(&[k]), Err(Error::KeyNotFound(_))));
}

#[test]
fn update_moves_rows_between_model_and_aux() {
    let data = relation(800, 6);
    let mut h = trained(&data);
    let cache = PartitionCache::unbounded();
    let k = h.aux.sealed[0].min_key;
    let pred = h.predict_rows(&[k]).unwrap().remove(0);
    h.update(&[(k, pred.clone())]).unwrap();
    assert_eq!(h.aux.overlay.get(&k), Some(&OverlayEntry::Tombstone));
    assert_eq!(h.lookup(&[k], &cache).unwrap().0[0].as_ref(), Some(&pred));

    let other = (0..1600).find(|&x| h.exist.contains(x) && x != k).unwrap();
    let p = h.predict_rows(&[other]).unwrap().remove(0);
    let wrong: Vec<u32> = p.iter().map(|&c| (c + 1) % 3).collect();
    h.update(&[(other, wrong.clone())]).unwrap();
    assert_eq!(h.aux.overlay.get(&other), Some(&OverlayEntry::Put(wrong.clone())));
    assert_eq!(h.lookup(&[other], &cache).unwrap().0[0].as_ref(), Some(&wrong));
    let absent = (0..1600).find(|&x| !h.exist.contains(x)).unwrap();
    assert!(matches!(h.update(&[(absent, wrong)]), Err(Error::KeyNotFound(_))));
}

#[test]
fn range_lookup_matches_scan() {
    let data = relation(1000, 7);
    let h = trained(&data);
    let reference = oracle(&data);
    let cache = PartitionCache::unbounded();
    let all = h.range_lookup(0, u64::MAX, &cache).unwrap();
    assert_eq!(all, reference.iter().map(|(k, v)| (*k, v.clone())).collect::<Vec<_>>());
    let mut r = rng(8);
    for _ in 0..50 {
        let lo = r.gen_range(0..2100);
        let hi = lo + r.gen_range(0..300);
        let got = h.range_lookup(lo, hi, &cache).unwrap();
        let want: Vec<(u64, Vec<u32>)> = reference.range(lo..=hi).map(|(k, v)| (*k, v.clone())).collect();
        assert_eq!(got, want);
    }
    assert!(h.range_lookup(5000, 6000, &cache).unwrap().is_empty());
    assert!(matches!(h.range_lookup(3, 2, &cache), Err(Error::InvalidRange { .. })));
}

#[test]
fn retrain_trigger_uses_original_fraction() {
    const GB: u64 = 1 << 30;
    assert!(retrain_due(200 * GB / 1000, GB / 1000 * 1000, 0.2));
    assert!(retrain_due(GB / 5 + 1, GB, 0.2));
    assert!(!retrain_due(GB / 5 - (1 << 20), GB, 0.2));
}

#[test]
fn maybe_retrain_below_threshold_is_a_no_op() {
    let data = relation(600, 9);
    let mut h = trained(&data);
    let k = (0..1200).find(|&x| h.exist.contains(x)).unwrap();
    h.delete(&[k]).unwrap();
    let size = h.total_size();
    let strategy = RetrainStrategy::Fixed(recipe(2));
    assert!(!h.maybe_retrain(&strategy).unwrap());
    assert_eq!(h.total_size(), size);
}

#[test]
fn retrain_preserves_logical_relation() {
    let data = relation(600, 10);
    let mut h = trained(&data);
    let mut reference = oracle(&data);
    let mut r = rng(11);
    let free: Vec<u64> = (0..1200).filter(|k| !h.exist.contains(*k)).take(150).collect();
    let rows: Vec<(u64, Vec<u32>)> = free
        .iter()
        .map(|&k| (k, vec![r.gen_range(0..4), r.gen_range(0..3)]))
        .collect();
    h.insert(&rows).unwrap();
    reference.extend(rows.iter().cloned());
    let strategy = RetrainStrategy::Fixed(recipe(3));
    assert!(h.maybe_retrain(&strategy).unwrap());
    assert_eq!(h.modified_bytes, 0);
    assert_eq!(h.retrains, 1);
    assert_eq!(h.stats.rows_total, reference.len() as u64);
    assert_sweep(&h, &reference, 1300);
}

#[test]
fn new_dictionary_values_land_in_aux() {
    let data = relation(300, 12);
    let mut h = trained(&data);
    let codes = h.intern_values(&["new".to_string(), "q".to_string()]).unwrap();
    assert_eq!(codes, vec![4, 1]);
    let free = (0..600).find(|k| !h.exist.contains(*k)).unwrap();
    h.insert(&[(free, codes.clone())]).unwrap();
    let (values, _) = h.lookup_values(&[free], &PartitionCache::unbounded()).unwrap();
    assert_eq!(values[0], Some(vec!["new".to_string(), "q".to_string()]));
    let relation = h.to_relation().unwrap();
    assert_eq!(relation.cardinalities(), vec![5, 3]);
}

#[test]
fn persist_round_trip_is_lazy_and_exact() {
    let data = relation(1500, 13);
    let mut h = trained(&data);
    let k = h.aux.sealed[1].min_key;
    h.delete(&[k]).unwrap();
    let mut reference = oracle(&data);
    reference.remove(&k);
    let dir = tempfile::tempdir().unwrap();
    h.save(dir.path()).unwrap();
    let loaded = HybridMapping::load(dir.path()).unwrap();
    assert_sweep(&loaded, &reference, 3100);
    assert_eq!(loaded.storage(), h.storage());

    let kv = KvText::parse(&std::fs::read_to_string(dir.path().join("manifest")).unwrap()).unwrap();
    let mut on_disk = 0;
    for name in ["model.dmnn", "exist.bv", "decode.map", "aux/overlay.log"] {
        on_disk += std::fs::metadata(dir.path().join(name)).unwrap().len();
    }
    for entry in std::fs::read_dir(dir.path().join("aux")).unwrap() {
        let e = entry.unwrap();
        if e.file_name().to_string_lossy().starts_with("part-") {
            on_disk += e.metadata().unwrap().len();
        }
    }
    assert_eq!(kv.require::<u64>("size.total").unwrap(), on_disk);
    assert_eq!(on_disk, h.total_size());

    // saving a loaded mapping elsewhere copies the untouched partitions
    let other = tempfile::tempdir().unwrap();
    loaded.save(other.path()).unwrap();
    assert_sweep(&HybridMapping::load(other.path()).unwrap(), &reference, 3100);
}

#[test]
fn missing_partition_fails_on_first_touch() {
    let data = relation(1500, 14);
    let h = trained(&data);
    let dir = tempfile::tempdir().unwrap();
    h.save(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("aux").join(crate::store::partition_file_name(0, "zst"))).unwrap();
    let loaded = HybridMapping::load(dir.path()).unwrap();
    let cache = PartitionCache::unbounded();
    let far = h.aux.sealed.last().unwrap().max_key;
    assert!(loaded.lookup(&[far], &cache).is_ok());
    let near = h.aux.sealed[0].min_key;
    assert!(matches!(
        loaded.lookup(&[near], &cache),
        Err(Error::MissingComponent(_))
    ));

    std::fs::remove_file(dir.path().join("model.dmnn")).unwrap();
    assert!(matches!(
        HybridMapping::load(dir.path()),
        Err(Error::MissingComponent(_))
    ));
    std::fs::write(dir.path().join("manifest"), "format=other\n").unwrap();
    assert!(matches!(
        HybridMapping::load(dir.path()),
        Err(Error::CorruptManifest(_))
    ));
}

#[test]
fn compact_keeps_answers() {
    let data = relation(1200, 15);
    let mut h = trained(&data);
    let mut reference = oracle(&data);
    let mut r = rng(16);
    for _ in 0..300 {
        let k = r.gen_range(0..2400u64);
        if reference.contains_key(&k) {
            if r.gen_bool(0.5) {
                h.delete(&[k]).unwrap();
                reference.remove(&k);
            } else {
                let v = vec![r.gen_range(0..4), r.gen_range(0..3)];
                h.update(&[(k, v.clone())]).unwrap();
                reference.insert(k, v);
            }
        } else {
            let v = vec![r.gen_range(0..4), r.gen_range(0..3)];
            h.insert(&[(k, v.clone())]).unwrap();
            reference.insert(k, v);
        }
    }
    assert_sweep(&h, &reference, 2500);
    h.compact().unwrap();
    assert!(h.aux.overlay.is_empty());
    assert_sweep(&h, &reference, 2500);
}

/// Randomized operations against a shadow map, checking a probe set after
/// every operation.
#[test]
fn random_operations_never_diverge() {
    let data = relation(400, 17);
    let mut h = trained(&data);
    let mut reference = oracle(&data);
    let mut r = rng(18);
    let domain = 800u64;
    let cache = PartitionCache::new(600);
    for step in 0..10_000 {
        let k = r.gen_range(0..domain);
        let v = vec![r.gen_range(0..4), r.gen_range(0..3)];
        match (reference.contains_key(&k), r.gen_range(0..3)) {
            (true, 0) => {
                h.delete(&[k]).unwrap();
                reference.remove(&k);
            }
            (true, _) => {
                h.update(&[(k, v.clone())]).unwrap();
                reference.insert(k, v);
            }
            (false, _) => {
                h.insert(&[(k, v.clone())]).unwrap();
                reference.insert(k, v);
            }
        }
        let probes: Vec<u64> = (0..8).map(|_| r.gen_range(0..domain)).chain([k]).collect();
        let (got, _) = h.lookup(&probes, &cache).unwrap();
        for (p, a) in probes.iter().zip(got) {
            assert_eq!(a.as_ref(), reference.get(p), "step {step} key {p}");
        }
        assert!(cache.resident_bytes() <= 600);
        if step % 2500 == 2499 {
            h.compact().unwrap();
        }
    }
    assert_sweep(&h, &reference, domain);
}
