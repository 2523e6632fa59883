use gensemcom::denoiser::{AnalyticDenoiser, Denoiser, GaussianMixture};
use gensemcom::mlp::{draw_examples, smoothed_endpoints, train_denoiser, Mlp, TrainConfig};
use gensemcom::rng::{ids, normal_vec, stream};
use gensemcom::schedule::NoiseSchedule;
use rand::Rng;

#[test]
fn backprop_matches_central_differences() {
    let source = GaussianMixture::standard_normal(2).unwrap();
    let schedule = NoiseSchedule::latent_default();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let model = Mlp::init(2, 8, 2, &mut stream(seed, ids::INIT)).unwrap();
        let batch = draw_examples(&source, &schedule, 6, true, 0.3, &mut stream(seed, ids::TRAINING)).unwrap();
        let (_, grad) = model.loss_and_grad(&batch).unwrap();
        let h = 1e-5;
        for i in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let fd = (plus.batch_loss(&batch).unwrap() - minus.batch_loss(&batch).unwrap()) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs());
            // Parameters with (near-)zero gradient, e.g. unused one-hot inputs,
            // are compared absolutely.
            let err = if scale > 1e-6 { (grad[i] - fd).abs() / scale } else { (grad[i] - fd).abs() };
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst:e}");
}

#[test]
fn trained_network_tracks_the_analytic_predictor() {
    let d = 2;
    let source = GaussianMixture::standard_normal(d).unwrap();
    let schedule = NoiseSchedule::latent_default();
    let model = Mlp::init(d, 32, 0, &mut stream(0, ids::INIT)).unwrap();
    let cfg = TrainConfig { iterations: 5000, ..TrainConfig::default() };
    let out = train_denoiser(model, &source, &schedule, &cfg).unwrap();
    let (head, tail) = smoothed_endpoints(&out.losses, 10);
    assert!(tail <= 0.5 * head, "loss {head} -> {tail}");

    let analytic = AnalyticDenoiser::new(source, schedule.clone());
    let mut rng = stream(99, ids::VALIDATION);
    let (mut num, mut den) = (0.0, 0.0);
    for _ in 0..2000 {
        let t = rng.random_range(1..=schedule.t_train());
        let z = normal_vec(&mut rng, d);
        let want = analytic.predict(&z, t, None).unwrap();
        let got = out.model.predict(&z, t, None).unwrap();
        num += want.iter().zip(&got).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        den += want.iter().map(|a| a * a).sum::<f64>();
    }
    let rel = (num / den).sqrt();
    println!("relative RMSE vs analytic predictor: {rel:.4}");
    assert!(rel < 0.15, "relative RMSE {rel}");
}

#[test]
fn trained_pipeline_mse_tracks_analytic_pipeline() {
    use gensemcom::harness::ExperimentConfig;
    use gensemcom::pipeline::run_trial;

    let d = 4;
    let source = GaussianMixture::standard_normal(d).unwrap();
    let cfg = ExperimentConfig::default();
    let setup = cfg.diffusion_setup().unwrap();
    let pipe = cfg.pipeline_config(10.0).unwrap();
    let trained =
        train_denoiser(Mlp::init(d, 64, 0, &mut stream(0, ids::INIT)).unwrap(), &source, &setup.schedule, &TrainConfig::default())
            .unwrap();
    let analytic = AnalyticDenoiser::new(source.clone(), setup.schedule.clone());
    let settings = cfg.metric_settings();
    let mut mlp_mse = vec![];
    let mut ref_mse = vec![];
    for seed in 0..5 {
        mlp_mse.push(run_trial(&setup, &pipe, &source, &trained.model, 200, seed, &settings).unwrap().metrics.mse);
        ref_mse.push(run_trial(&setup, &pipe, &source, &analytic, 200, seed, &settings).unwrap().metrics.mse);
    }
    let (m, r) = (mlp_mse.iter().sum::<f64>(), ref_mse.iter().sum::<f64>());
    assert!(m <= 2.0 * r && r <= 2.0 * m, "mlp pipeline mse {m} vs analytic {r}");
}
