use gensemcom::harness::config::{ExperimentConfig, NamedSteps, SourceKind, StepsSpec};
use gensemcom::Error;

#[test]
fn empty_file_gives_documented_defaults() {
    let cfg = ExperimentConfig::from_toml_str("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.schedule.steps, 50);
    assert_eq!((cfg.pipeline.t_f1, cfg.pipeline.t_f2), (5, 5));
    assert_eq!(cfg.pipeline.t_b, StepsSpec::Named(NamedSteps::Auto));
    assert_eq!(cfg.guidance.scale, 6.0);
    assert_eq!(cfg.guidance.cond, None);
    assert_eq!(cfg.channel.snr_db, 5.0);
    assert_eq!(cfg.sweep.snr_db, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    assert_eq!(cfg.sweep.seeds.len(), 20);
    assert_eq!(cfg.prop1.dim, 512);
    assert_eq!(cfg.prop1.n_samples, 20_000);
    assert_eq!(cfg.source.kind, SourceKind::Toy);
}

#[test]
fn minimal_file_overrides_only_what_it_names() {
    let cfg = ExperimentConfig::from_toml_str("[channel]\nsnr_db = 10.0\n").unwrap();
    assert_eq!(cfg.channel.snr_db, 10.0);
    assert_eq!(cfg.pipeline, ExperimentConfig::default().pipeline);
}

#[test]
fn unknown_section_and_key_are_named() {
    let err = ExperimentConfig::from_toml_str("[chanel]\nsnr_db = 5.0\n").unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("chanel")), "{err}");
    let err = ExperimentConfig::from_toml_str("[channel]\nsnr = 5.0\n").unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("snr")), "{err}");
}

#[test]
fn syntax_errors_report_the_line() {
    let err = ExperimentConfig::from_toml_str("[pipeline]\nt_f1 = 5\nt_f2 = = 5\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn invalid_values_are_config_errors() {
    for text in [
        "[pipeline]\nt_f1 = 40\nt_f2 = 20\n",
        "[pipeline]\nt_b = 0\n",
        "[pipeline]\nt_b = \"never\"\n",
        "[sweep]\nseeds = []\n",
        "[channel]\nsnr_db = nan\n",
        "[guidance]\ncond = 7\n",
        "[guidance]\nscale = -1.0\n",
        "[source]\nkind = \"toy\"\ndim = 7\n",
        "[denoiser]\nkind = \"mlp\"\n",
        "[prop1]\nn_samples = 100\n",
        "[output]\nplot_metric = \"psnr\"\n",
        "[schedule]\nbeta_start = 0.5\nbeta_end = 0.1\n",
    ] {
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text:?} -> {err:?}");
    }
}

#[test]
fn serialized_config_reparses_equal() {
    let text = r#"
        [schedule]
        kind = "linear"
        beta_start = 0.0001
        beta_end = 0.02
        [source]
        kind = "mixture"
        [[source.components]]
        weight = 0.25
        mean = [1.0, -1.0]
        variance = 0.3
        [[source.components]]
        weight = 0.75
        mean = 0.5
        variance = [0.2, 0.4]
        [pipeline]
        t_b = 12
        receiver_forward_mode = "stochastic"
        [guidance]
        cond = 1
        [channel]
        snr_db = inf
        model = "real_simplified"
        [sweep]
        snr_db = [-3.0, 7.5]
        seeds = [4, 9]
        [ablation]
        t_b = ["t_f", 20, "auto"]
        [output]
        dir = "somewhere"
        plot = false
    "#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg, again);
    let default = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_toml_str(&default.to_toml_string().unwrap()).unwrap(), default);
}

#[test]
fn relative_checkpoint_resolves_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "[denoiser]\nkind = \"mlp\"\ncheckpoint = \"model.ckpt\"\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.denoiser.checkpoint.unwrap(), dir.path().join("model.ckpt"));
    assert!(matches!(ExperimentConfig::load(&dir.path().join("missing.toml")), Err(Error::Config(_))));
}
