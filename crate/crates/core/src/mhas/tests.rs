use super::*;
use crate::encoding::{ColumnSchema, KeyCodec};

/// Dense keys; `a = key % 8`, `b = (key / 8) % 4`.
fn periodic(n: u64) -> EncodedRelation {
    let keys: Vec<u64> = (0..n).collect();
    let schemas = vec![
        ColumnSchema::value("a")
            .with_dictionary((0..8).map(|i| format!("a{i}")))
            .unwrap(),
        ColumnSchema::value("b")
            .with_dictionary((0..4).map(|i| format!("b{i}")))
            .unwrap(),
    ];
    let cols = vec![
        keys.iter().map(|k| (k % 8) as u32).collect(),
        keys.iter().map(|k| ((k / 8) % 4) as u32).collect(),
    ];
    EncodedRelation::new(KeyCodec::single("k", 0, n).unwrap(), schemas, keys, cols).unwrap()
}

fn tiny_config(seed: u64) -> SearchConfig {
    SearchConfig {
        nt: 12,
        nm: 6,
        nc: 2,
        controller_batch: 256,
        controller_steps: Some(4),
        model_batch: 64,
        model_rows: 1024,
        m_epochs: 2,
        model_lr: 0.01,
        finetune_epochs: 3,
        controller_hidden: 8,
        eval_rows: 1024,
        seed,
        ..SearchConfig::default()
    }
}

fn tiny_space() -> SearchSpace {
    SearchSpace {
        layer_sizes: vec![8, 16],
        ..SearchSpace::default()
    }
}

#[test]
fn loss_matches_reported_ratio() {
    // 34 MB hybrid for a 343 MB table.
    let loss = compression_loss(20_000_000, 12_000_000, 1_500_000, 500_000, 343_000_000).unwrap();
    assert!((loss - 0.0991).abs() <= 1e-3, "{loss}");
    assert!(matches!(compression_loss(1, 1, 1, 1, 0), Err(Error::ZeroData)));
    assert_eq!(compression_loss(0, 0, 0, 0, 10).unwrap(), 0.0);
}

#[test]
fn config_validation() {
    assert!(SearchConfig::default().validate().is_ok());
    assert!(SearchConfig::desk().validate().is_ok());
    let c = SearchConfig {
        nm: 3,
        nc: 4,
        ..SearchConfig::default()
    };
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    assert_eq!(SearchConfig::default().controller_period(), 50);
}

#[test]
fn search_is_reproducible_and_improves() {
    let data = periodic(4096);
    let a = mhas_search(&data, &tiny_space(), &tiny_config(3)).unwrap();
    let b = mhas_search(&data, &tiny_space(), &tiny_config(3)).unwrap();
    let csv = |o: &SearchOutcome| {
        let mut buf = Vec::new();
        write_trace_csv(&o.trace, &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.arch, b.arch);
    assert_eq!(a.net, b.net);
    assert!(String::from_utf8(csv(&a))
        .unwrap()
        .starts_with("iteration,arch_id,loss,best_loss,phase\n"));

    let model_rows: Vec<&TraceRow> = a.trace.iter().filter(|r| r.phase == Phase::Model).collect();
    let controller_rows = a.trace.iter().filter(|r| r.phase == Phase::Controller).count();
    assert_eq!(model_rows.len(), 6);
    assert!((1..=2).contains(&controller_rows));
    assert!(a.trace.windows(2).all(|w| w[1].best_loss <= w[0].best_loss));
    assert!(a.best_loss < model_rows[0].loss || model_rows[0].loss == a.best_loss);
    assert!(a.final_loss < 1.0, "{}", a.final_loss);
    a.arch
        .validate(&SearchSpace {
            heads: 2,
            ..tiny_space()
        })
        .unwrap();
    assert_eq!(a.net.heads.len(), 2);
}

#[test]
fn different_seeds_differ() {
    let data = periodic(2048);
    let a = mhas_search(&data, &tiny_space(), &tiny_config(1)).unwrap();
    let b = mhas_search(&data, &tiny_space(), &tiny_config(2)).unwrap();
    assert_ne!(a.trace, b.trace);
}

#[test]
fn estimate_tracks_exact_loss() {
    let data = periodic(8192);
    let eval = Evaluator::new(&data, CodecId::Zstd);
    let mut bank = WeightBank::new(0, 0.05);
    let featurizer = KeyFeaturizer::new(&[8192], DEFAULT_RADIX).unwrap();
    let arch: ArchSpec = "in/16,s0/16|pi/8,p0/8|pi/8,p0/8".parse().unwrap();
    let m = bank.materialize(&arch, &featurizer, &data.cardinalities()).unwrap();
    let est = eval.estimate(&m.net, 0..data.len()).unwrap();
    let h = HybridMapping::build(&data, m.net.clone(), HybridConfig::default()).unwrap();
    let s = h.storage();
    let exact = compression_loss(s.model, s.aux, s.exist, s.decode, s.original).unwrap();
    // Whole-relation window: only partitioning separates the two.
    assert!((est - exact).abs() / exact < 0.1, "{est} vs {exact}");
}
