use fedtwin::dynsys::{ks_generate, ks_generate_from, ks_rk4_reference, KsConfig};

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn etdrk4_tracks_fine_rk4_on_the_attractor() {
    // a state on the attractor after the default spin-up
    let warm = KsConfig { t_end: 0.25, ..KsConfig::default() };
    let u0 = ks_generate(&warm, 3).unwrap().column(0).to_vec();
    assert!(u0.iter().any(|v| v.abs() > 1.0));

    let cfg = KsConfig { spinup_from: 0.0, t_end: 1.0, ..KsConfig::default() };
    let coarse = ks_generate_from(&cfg, &u0).unwrap();
    for (k, t) in cfg.sample_times().unwrap().into_iter().enumerate() {
        let fine = ks_rk4_reference(&cfg, &u0, t, cfg.dt / 100.0).unwrap();
        let err = rel_l2(&coarse.column(k).to_vec(), &fine);
        assert!(err < 1e-4, "t = {t}: {err:e}");
    }
}

#[test]
fn long_run_is_bounded_and_mean_free() {
    let cfg = KsConfig::default();
    let snaps = ks_generate(&cfg, 0).unwrap();
    assert_eq!(snaps.cols(), 10_000);
    let max = snaps.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max < 10.0, "max |u| = {max}");
    assert!(max > 1.0, "run decayed: max |u| = {max}");
    for j in 0..snaps.cols() {
        let mean = snaps.column(j).mean().unwrap();
        assert!(mean.abs() < 1e-10, "column {j}: mean {mean:e}");
    }
}
