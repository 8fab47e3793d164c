mod common;

use cldrm_core::data::TaskId;
use cldrm_core::io::*;
use cldrm_core::nn::{Mode, MultiHeadNet, TrunkConfig};
use cldrm_core::rng::SeededRng;
use common::*;

#[test]
fn four_head_checkpoint_lists_every_head() {
    let mut rng = SeededRng::new(2);
    let mut net = MultiHeadNet::build(&TrunkConfig::desk(), &mut rng).unwrap();
    for t in TaskId::ALL {
        net.append_head(t, t.spec().class_count(), &mut rng).unwrap();
        net.mark_all_old();
    }
    let back = decode_checkpoint(&encode_checkpoint(&Checkpoint::new(net.clone()))).unwrap().net;
    let widths: Vec<usize> = back.heads().iter().map(|h| h.class_count()).collect();
    assert_eq!(widths, vec![3, 2, 3, 4]);
    assert_eq!(back.head_tasks(), TaskId::ALL.to_vec());
    assert_eq!(back, net);
    let x = cldrm_core::Tensor::zeros(&[1, 3, 32, 32]);
    assert_eq!(back.forward_all_heads(&x, Mode::Eval).unwrap(), net.forward_all_heads(&x, Mode::Eval).unwrap());
}

#[test]
fn reruns_and_checkpoints_are_exact() {
    let (data, cfg) = tiny_setup();
    let r = persistence_checks(&data, &cfg, "1-2", 7);
    assert!(r.metrics_bytes > 0);
    assert!(r.metrics_identical, "{r:?}");
    assert!(r.logits_bit_exact, "{r:?}");
    assert!(r.newer_version_refused, "{r:?}");
}

#[test]
fn experiment_config_round_trips_and_replays_from_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 11;
    cfg.distill.temperature = 5.0;
    let path = dir.path().join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);
    let mut manifest = Manifest::new("train", &cfg);
    manifest.record("metrics.csv", b"x");
    let mpath = dir.path().join("manifest.json");
    manifest.write(&mpath).unwrap();
    assert_eq!(load_config(&mpath).unwrap(), cfg);
    assert_eq!(manifest.mismatches(dir.path()), vec!["metrics.csv".to_string()]);
}
