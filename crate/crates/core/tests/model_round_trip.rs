use bitr::model_file::*;
use bitr::pipeline::{fit_pipeline, PipelineConfig};
use bitr::policy::TrainConfig;
use bitr::simulation::{generate_covariates, generate_dataset, ScenarioSpec, ScenarioTag};

fn fitted() -> (ScenarioSpec, bitr::pipeline::FittedModel) {
    let spec = ScenarioSpec { n: 300, ..ScenarioSpec::new(ScenarioTag::Main, [5.0, 5.0]) };
    let d = generate_dataset(&spec, 12).unwrap();
    let cfg = PipelineConfig {
        train: TrainConfig { epochs: 30, ..Default::default() },
        seed: 4,
        ..Default::default()
    };
    (spec, fit_pipeline(&d, &cfg).unwrap())
}

#[test]
fn saved_model_reproduces_decisions_and_survival() {
    let (spec, model) = fitted();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    for x in generate_covariates(&spec, 500, 3) {
        assert_eq!(model.decide(&x), loaded.decide(&x));
        assert_eq!(model.policy(&x), loaded.policy(&x));
        assert_eq!(model.joint.survival_vector(1.0, 1.0, &x), loaded.joint.survival_vector(1.0, 1.0, &x));
    }
    assert_eq!(ModelFile::from_model(&model), ModelFile::from_model(&loaded));
}

#[test]
fn tampered_files_are_rejected() {
    let (_, model) = fitted();
    let good = ModelFile::from_model(&model);

    let mut wrong_version = good.clone();
    wrong_version.version = 99;
    assert!(wrong_version.into_model().is_err());

    let mut short_beta = good.clone();
    short_beta.marginals[0].beta.pop();
    assert!(short_beta.into_model().is_err());

    let mut bad_theta = good.clone();
    bad_theta.copulas[1].theta = f64::NAN;
    assert!(bad_theta.into_model().is_err());

    let mut missing_arm = good.clone();
    missing_arm.copulas.pop();
    assert!(missing_arm.into_model().is_err());

    let mut truncated = good.clone();
    truncated.network.weights.pop();
    assert!(truncated.into_model().is_err());

    let mut json = serde_json::to_value(&good).unwrap();
    json["extra"] = serde_json::json!(1);
    assert!(read_model(json.to_string().as_bytes()).is_err());
}
