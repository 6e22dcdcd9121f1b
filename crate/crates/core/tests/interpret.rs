use eegfm_core::classifier::{Model, PreparedEpoch};
use eegfm_core::encoder::ConvLayerSpec;
use eegfm_core::interpret::{
    collect_attention, edge_budget, export_embeddings, key_channels, threshold_edges, write_connectivity,
    write_embeddings_csv, AttentionSummary,
};
use eegfm_core::rng::stream;
use eegfm_core::{
    ArtConfig, ArtEncoder, ChannelName, ChannelVocabulary, CheckpointSet, Classifier, ClassifierConfig, EpochRecord,
    GraphMode, VocabMode,
};
use proptest::prelude::*;

const NAMES: [&str; 4] = ["FP1", "FP2", "C3", "O1"];

fn tiny_model(n_channels: usize, mode: GraphMode, seed: u64) -> Model<f64> {
    let names: Vec<ChannelName> = NAMES[..n_channels]
        .iter()
        .map(|n| ChannelName::new(n).unwrap())
        .collect();
    let vocabulary = ChannelVocabulary::build_union(&[("d".to_string(), names)]).unwrap();
    let mut art = ArtConfig::new(vocabulary.len(), &[64]);
    art.d_model = 8;
    art.n_heads = 2;
    art.d_ff = 16;
    art.n_layers = 1;
    art.conv = vec![ConvLayerSpec {
        out_channels: 4,
        kernel: 5,
        stride: 2,
    }];
    let mut clf = ClassifierConfig::new(n_channels, 2, mode);
    clf.d_in = 8;
    clf.d_model = 8;
    clf.gat_heads = 2;
    clf.tx_layers = 1;
    clf.tx_heads = 2;
    clf.tx_d_ff = 16;
    Model {
        encoder: ArtEncoder::new(art, &mut stream(seed, "enc")).unwrap(),
        vocabulary,
        vocab_mode: VocabMode::Union,
        classifier: Classifier::new(clf, &mut stream(seed, "clf")).unwrap(),
    }
}

fn epochs(model: &Model<f64>, n: usize) -> Vec<PreparedEpoch<f64>> {
    let c = model.classifier.config().n_channels;
    let names: Vec<ChannelName> = NAMES[..c].iter().map(|n| ChannelName::new(n).unwrap()).collect();
    (0..n)
        .map(|k| {
            let samples: Vec<f32> = (0..c * 128)
                .map(|i| ((i * 7 + k * 13) % 23) as f32 / 11.0 - 1.0)
                .collect();
            let rec = EpochRecord::new("d", "d-s1", (k % 2) as u16, 64, names.clone(), samples).unwrap();
            model.prepare(&rec).unwrap()
        })
        .collect()
}

fn ensemble(mode: GraphMode, c: usize, members: u64) -> CheckpointSet<f64> {
    CheckpointSet::from_models(
        (0..members)
            .map(|s| (0.5, s as usize, tiny_model(c, mode, s)))
            .collect(),
        5,
    )
}

fn names(c: usize) -> Vec<String> {
    NAMES[..c].iter().map(|s| s.to_string()).collect()
}

#[test]
fn summary_rows_are_stochastic() {
    let set = ensemble(GraphMode::Gat, 4, 3);
    let eps = epochs(&set.entries()[0].model, 6);
    let refs: Vec<&PreparedEpoch<f64>> = eps.iter().collect();
    let s = collect_attention(&set, &refs, 1, names(4)).unwrap();
    for i in 0..4 {
        let row: f64 = (0..4).map(|j| s.at(i, j)).sum();
        assert!((row - 1.0).abs() < 1e-9);
        assert!((0..4).all(|j| (0.0..=1.0).contains(&s.at(i, j))));
    }
}

#[test]
fn single_channel_summary_is_one() {
    let set = ensemble(GraphMode::Gat, 1, 1);
    let eps = epochs(&set.entries()[0].model, 2);
    let refs: Vec<&PreparedEpoch<f64>> = eps.iter().collect();
    let s = collect_attention(&set, &refs, 0, names(1)).unwrap();
    assert_eq!(s.matrix.len(), 1);
    assert!((s.matrix[0] - 1.0).abs() < 1e-12);
}

#[test]
fn non_gat_modes_are_unsupported() {
    for mode in [GraphMode::Gcn, GraphMode::NoGraph] {
        let set = ensemble(mode, 4, 1);
        let eps = epochs(&set.entries()[0].model, 2);
        let refs: Vec<&PreparedEpoch<f64>> = eps.iter().collect();
        let err = collect_attention(&set, &refs, 0, names(4)).unwrap_err();
        assert!(matches!(err, eegfm_core::Error::Unsupported(_)), "{err}");
    }
}

#[test]
fn embeddings_have_one_row_per_epoch_and_are_deterministic() {
    let set = ensemble(GraphMode::Gat, 4, 2);
    let eps = epochs(&set.entries()[0].model, 5);
    let refs: Vec<&PreparedEpoch<f64>> = eps.iter().collect();
    let a = export_embeddings(&set, &refs, "d-s1").unwrap();
    let b = export_embeddings(&set, &refs, "d-s1").unwrap();
    assert_eq!(a.len(), 5);
    assert!(a.iter().all(|r| r.values.len() == 8));
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    write_embeddings_csv(&path, &a).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("subject,label,v0,"));
    assert_eq!(lines[1].split(',').count(), 10);
}

#[test]
fn connectivity_json_shape() {
    let s = AttentionSummary {
        class_label: 1,
        channels: names(4),
        matrix: vec![
            0.1, 0.6, 0.2, 0.1, //
            0.3, 0.3, 0.3, 0.1, //
            0.25, 0.25, 0.25, 0.25, //
            0.7, 0.1, 0.1, 0.1,
        ],
    };
    let g = threshold_edges(&s, 0.15).unwrap();
    let keys = key_channels(&g, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    write_connectivity(&path, &s, &g, &keys).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["class"], 1);
    assert_eq!(v["channels"].as_array().unwrap().len(), 4);
    let edges = v["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 2);
    assert_eq!(edges[0]["from"], "O1");
    assert_eq!(edges[0]["to"], "FP1");
    assert_eq!(edges[1]["from"], "FP1");
    assert_eq!(v["key_channels"], serde_json::json!(["FP1"]));
}

fn matrix_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..10).prop_flat_map(|c| {
        (
            Just(c),
            prop::collection::vec(prop_oneof![Just(0.5), 0.0..1.0f64], c * c),
        )
    })
}

proptest! {
    #[test]
    fn edge_count_is_exact((c, m) in matrix_strategy(), frac in 0.01..=1.0f64) {
        let s = AttentionSummary { class_label: 0, channels: (0..c).map(|i| i.to_string()).collect(), matrix: m };
        let g = threshold_edges(&s, frac).unwrap();
        prop_assert_eq!(g.edges.len(), edge_budget(c, frac));
        let mut deg = vec![0; c];
        for e in &g.edges {
            prop_assert!(e.from != e.to);
            deg[e.from] += 1;
            deg[e.to] += 1;
        }
        prop_assert_eq!(&deg, &g.degrees);
        let cutoff = g.edges.last().map_or(f64::INFINITY, |e| e.w);
        let kept: std::collections::HashSet<(usize, usize)> = g.edges.iter().map(|e| (e.from, e.to)).collect();
        for i in 0..c {
            for j in 0..c {
                if i != j && !kept.contains(&(i, j)) {
                    prop_assert!(s.at(i, j) <= cutoff);
                }
            }
        }
    }

    #[test]
    fn key_channels_are_monotone((c, m) in matrix_strategy(), frac in 0.05..=1.0f64, lo in 0usize..8, extra in 0usize..6) {
        let s = AttentionSummary { class_label: 0, channels: (0..c).map(|i| i.to_string()).collect(), matrix: m };
        let g = threshold_edges(&s, frac).unwrap();
        let low = key_channels(&g, lo);
        let high = key_channels(&g, lo + extra);
        prop_assert!(high.iter().all(|k| low.contains(k)));
        prop_assert!(low.windows(2).all(|w| g.degrees[w[0]] >= g.degrees[w[1]]));
    }
}
