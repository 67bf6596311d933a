use pufferkit::framework::{DataFunction, PPFramework};
use pufferkit::infotheory::{exhaustive_mechanism_mi, McConfig, MechanismKernel};
use pufferkit::mechanisms::{
    calibrate_gaussian, calibrate_gaussian_sensitivity, calibrate_laplace,
    calibrate_laplace_sensitivity, gaussian_variance, laplace_scale,
};

const BINARY_DP: &str = r#"
    n = 2
    k = 1
    preset = "dp"
    [theta]
    kind = "discrete"
    alphabet = [0.0, 1.0]
    uniform = true
    members = [[0.4, 0.1, 0.2, 0.3], [0.05, 0.45, 0.45, 0.05]]
"#;

fn gaussian_dp(s: f64) -> PPFramework {
    PPFramework::from_toml_str(&format!(
        "n = 4\nk = 1\npreset = \"dp\"\n[theta]\nkind = \"product_gaussian\"\nm = 1.0\ns = {s}\n"
    ))
    .unwrap()
}

#[test]
fn calibrated_noise_shrinks_with_eps_and_grows_with_variance() {
    let f = DataFunction::sum(4, 1);
    let mc = McConfig::default();
    let eps_grid = [0.05, 0.1, 0.5, 1.0, 2.0];
    for calibrate in [calibrate_laplace, calibrate_gaussian] {
        let mut last = f64::INFINITY;
        for &eps in &eps_grid {
            let v = calibrate(&gaussian_dp(1.0), &f, eps, &mc)
                .unwrap()
                .b_or_sigma2();
            assert!(v <= last, "not monotone in eps at {eps}");
            last = v;
        }
        let mut last = 0.0;
        for s in [0.25, 1.0, 4.0] {
            let v = calibrate(&gaussian_dp(s), &f, 0.5, &mc)
                .unwrap()
                .b_or_sigma2();
            assert!(v >= last, "not monotone in variance at s = {s}");
            last = v;
        }
    }
    for pair in eps_grid.windows(2) {
        assert!(
            laplace_scale(&[1.0, 2.0], pair[1]).unwrap()
                <= laplace_scale(&[1.0, 2.0], pair[0]).unwrap()
        );
        assert!(
            gaussian_variance(&[1.0, 2.0], pair[1]).unwrap()
                <= gaussian_variance(&[1.0, 2.0], pair[0]).unwrap()
        );
        let b = |d: f64, e: f64| {
            calibrate_laplace_sensitivity(d, 2, e)
                .unwrap()
                .b_or_sigma2()
        };
        let g = |d: f64, e: f64| {
            calibrate_gaussian_sensitivity(d, 2, e, false)
                .unwrap()
                .b_or_sigma2()
        };
        assert!(b(1.0, pair[1]) <= b(1.0, pair[0]) && b(1.0, pair[0]) <= b(2.0, pair[0]));
        assert!(g(1.0, pair[1]) <= g(1.0, pair[0]) && g(1.0, pair[0]) <= g(2.0, pair[0]));
    }
}

#[test]
fn calibrated_noise_passes_the_discrete_oracle() {
    let fw = PPFramework::from_toml_str(BINARY_DP).unwrap();
    let mc = McConfig::default();
    for f in [
        DataFunction::sum(2, 1),
        DataFunction::row(1),
        DataFunction::average(2, 1),
    ] {
        for eps in [0.1, 0.5, 1.5] {
            for report in [
                calibrate_laplace(&fw, &f, eps, &mc).unwrap(),
                calibrate_gaussian(&fw, &f, eps, &mc).unwrap(),
            ] {
                let kernel = MechanismKernel::AdditiveNoise {
                    f: f.clone(),
                    noise: report.noise.clone(),
                };
                let oracle = exhaustive_mechanism_mi(&fw, &kernel).unwrap();
                assert!(
                    oracle.value <= eps + oracle.tolerance,
                    "{} {} eps {eps}: {} > {eps}",
                    report.method,
                    f.label(),
                    oracle.value
                );
            }
        }
    }
}

#[test]
fn gaussian_needs_less_energy_than_laplace_at_small_eps() {
    let f = DataFunction::average(4, 1);
    let mc = McConfig::default();
    for eps in [0.01, 0.05, 0.1] {
        let b = calibrate_laplace(&gaussian_dp(1.0), &f, eps, &mc)
            .unwrap()
            .b_or_sigma2();
        let s2 = calibrate_gaussian(&gaussian_dp(1.0), &f, eps, &mc)
            .unwrap()
            .b_or_sigma2();
        assert!(s2 < 2.0 * b * b, "eps {eps}: {s2} vs {}", 2.0 * b * b);
    }
}
