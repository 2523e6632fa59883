//! ᾱ_t against products evaluated in 50-digit arithmetic.

use gensemcom::schedule::{NoiseSchedule, ScheduleKind};

#[test]
fn alpha_bar_matches_high_precision_products() {
    let text = include_str!("golden/alpha_bar.txt");
    let mut checked = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let kind = match f[0] {
            "linear" => ScheduleKind::Linear,
            "scaled_linear" => ScheduleKind::ScaledLinear,
            other => panic!("unknown kind {other}"),
        };
        let s = NoiseSchedule::new(kind, f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap()).unwrap();
        let t: usize = f[4].parse().unwrap();
        let want: f64 = f[5].parse().unwrap();
        let got = s.alpha_bar(t);
        assert!(((got - want) / want).abs() < 1e-12, "{line}: got {got:e}");
        checked += 1;
    }
    assert_eq!(checked, 12);
}

#[test]
fn latent_default_reference_levels() {
    let s = NoiseSchedule::latent_default();
    assert!((s.alpha_bar(100) - 0.8955).abs() < 5e-5);
    assert!((s.alpha_bar(200) - 0.7552).abs() < 5e-5);
    assert!((s.alpha_bar(1000) - 0.00466).abs() < 5e-6);
    assert_eq!(s.alpha_bar(0), 1.0);
}
