use crem_core::calibration::{nls_estimate, CalibrationConfig, Measurement};
use crem_core::dataio::{
    generate_synthetic, linspace, to_measurements, RobotConfig, SyntheticSpec,
};
use crem_core::model::{RobotParams, UncertaintyParams};

fn dataset(k_true: UncertaintyParams, samples: usize, noise: f64, seed: u64) -> Vec<Measurement> {
    let cfg = RobotConfig::new(RobotParams::reference());
    let spec = SyntheticSpec {
        k_true,
        theta: 45f64.to_radians(),
        delta: 0.0,
        q_s: linspace(0.0, 40.0, samples),
        noise_sigma: noise,
        seed,
    };
    to_measurements(&generate_synthetic(&cfg, &spec).unwrap(), &cfg).unwrap()
}

#[test]
fn noiseless_parameters_are_recovered_across_a_grid() {
    let p = RobotParams::reference();
    let cfg = CalibrationConfig::default();
    for k0 in [0.05, 0.2, 0.5] {
        for kq in [0.005, 0.025, 0.05] {
            let truth = UncertaintyParams::new(k0, 0.0, kq);
            let r = nls_estimate(
                &dataset(truth, 60, 0.0, 0),
                &p,
                &cfg,
                UncertaintyParams::ZERO,
            )
            .unwrap();
            assert!(
                (r.k.k0 - k0).abs() <= 0.01 * k0,
                "k0 {} for {truth:?}",
                r.k.k0
            );
            assert!(
                (r.k.k_q - kq).abs() <= 0.01 * kq,
                "kq {} for {truth:?}",
                r.k.k_q
            );
            assert_eq!(r.k.k_theta, 0.0);
        }
    }
}

#[test]
fn objective_never_increases() {
    let p = RobotParams::reference();
    let truth = UncertaintyParams::new(0.2, 0.0, 0.025);
    let r = nls_estimate(
        &dataset(truth, 60, 0.0, 0),
        &p,
        &CalibrationConfig::default(),
        UncertaintyParams::ZERO,
    )
    .unwrap();
    for w in r.trace.windows(2) {
        assert!(w[1].objective <= w[0].objective);
    }
}

#[test]
fn noisy_fit_lands_near_the_noise_floor() {
    let p = RobotParams::reference();
    let truth = UncertaintyParams::new(0.2, 0.0, 0.025);
    let sigma_um = 2.0;
    let r = nls_estimate(
        &dataset(truth, 120, sigma_um / 1000.0, 7),
        &p,
        &CalibrationConfig::default(),
        UncertaintyParams::ZERO,
    )
    .unwrap();
    assert!((r.k.k0 - 0.2).abs() <= 0.02, "{:?}", r.k);
    assert!((r.k.k_q - 0.025).abs() <= 0.0025, "{:?}", r.k);
    let rmse = r.final_rmse_um();
    assert!((sigma_um / 2.0..=2.0 * sigma_um).contains(&rmse), "{rmse}");
}
