use rap_core::checkpoint::Checkpoint;
use rap_core::config::TrainConfig;
use rap_core::dataset::{synth_mixture, SynthConfig};
use rap_core::trainer::train;
use rap_core::RapError;

fn trained() -> (Checkpoint, rap_core::trainer::TrainedModel, TrainConfig) {
    let data = synth_mixture(&SynthConfig {
        classes: 4,
        n_per_class: 25,
        dim: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 2,
        warmup_epochs: 1,
        embed_dim: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(&data, &config).unwrap();
    let ckpt = Checkpoint::new(
        &model,
        &config,
        data.task.known_classes(),
        data.task.total_classes(),
    );
    (ckpt, model, config)
}

#[test]
fn save_load_restore_round_trip() {
    let (ckpt, model, config) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let restored = loaded.restore().unwrap();
    assert_eq!(restored.encoder, model.encoder);
    assert_eq!(restored.classifier, model.classifier);
    assert_eq!(restored.prototypes.mu, model.prototypes.mu);
    assert_eq!(restored.config, config);
}

#[test]
fn wrong_version_is_rejected() {
    let (mut ckpt, _, _) = trained();
    ckpt.version += 1;
    assert!(matches!(ckpt.restore(), Err(RapError::Checkpoint(_))));
}

#[test]
fn shape_mismatch_is_rejected() {
    let (mut ckpt, _, _) = trained();
    ckpt.encoder_bias.pop();
    assert!(matches!(ckpt.restore(), Err(RapError::Checkpoint(_))));
}

#[test]
fn unknown_fields_are_rejected() {
    let (ckpt, _, _) = trained();
    let mut value = serde_json::to_value(&ckpt).unwrap();
    value["extra"] = serde_json::json!(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(RapError::Json(_))));
}
