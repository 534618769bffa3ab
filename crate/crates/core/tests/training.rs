use crydet::audio::load_manifest;
use crydet::synth::write_corpus;
use crydet::train::{train_backbone, BackboneHyper};

/// On a separable synthetic set the 5-epoch moving average of training
/// loss never rises over the first 20 epochs.
#[test]
fn backbone_moving_average_loss_is_non_increasing() {
    let tmp = tempfile::tempdir().unwrap();
    write_corpus(tmp.path(), 60, 60, 8000, 1.0, 21).unwrap();
    let manifest = load_manifest(&tmp.path().join("manifest.csv")).unwrap();
    let hyper = BackboneHyper {
        epochs: 20,
        seed: 21,
        ..BackboneHyper::default()
    };
    let run = train_backbone(&manifest, &hyper).unwrap();
    let losses: Vec<f64> = run.log.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 20);
    let avg: Vec<f64> = losses
        .windows(5)
        .map(|w| w.iter().sum::<f64>() / 5.0)
        .collect();
    for (i, w) in avg.windows(2).enumerate() {
        assert!(w[1] <= w[0], "moving average rose at window {i}: {avg:?}");
    }
}

#[test]
fn backbone_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    write_corpus(tmp.path(), 10, 10, 8000, 1.0, 4).unwrap();
    let manifest = load_manifest(&tmp.path().join("manifest.csv")).unwrap();
    let hyper = BackboneHyper {
        epochs: 2,
        seed: 4,
        ..BackboneHyper::default()
    };
    let a = train_backbone(&manifest, &hyper).unwrap();
    let b = train_backbone(&manifest, &hyper).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.log, b.log);
}
