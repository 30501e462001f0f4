use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use trapcool::analysis::{
    detuning_grid, estimate_sigma_f, fit_constant, fit_sigma_f, p_from_ratio, ratio_from_p, robustness, scan_resonance,
    ResonanceCurve,
};
use trapcool::dynamics::exchange_time;
use trapcool::electrode::ElectrodeBasis;
use trapcool::montecarlo::VoltageNoise;
use trapcool::protocols::default_tables;
use trapcool::solver::DoubleWellSpec;
use trapcool::Species;

const KB: f64 = 1.380_649e-23;

fn basis() -> Arc<ElectrodeBasis> {
    static B: OnceLock<Arc<ElectrodeBasis>> = OnceLock::new();
    Arc::clone(B.get_or_init(|| Arc::new(ElectrodeBasis::default_analytic())))
}

fn resonance() -> &'static ResonanceCurve {
    static R: OnceLock<ResonanceCurve> = OnceLock::new();
    R.get_or_init(|| {
        let b = basis();
        let tables = default_tables(&b).unwrap();
        let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.6e-3, 0.0);
        let tau = exchange_time(&spec.species_a, &spec.species_b, spec.omega_a, spec.omega_b, spec.s0());
        let grid = detuning_grid(1.0 / (2.0 * tau), 6.0, 17);
        scan_resonance(&spec, &b, &tables, 0.005 * KB, &grid).unwrap()
    })
}

#[test]
fn resonance_width_matches_the_exchange_time() {
    let r = resonance();
    let fit = r.fit.expect("Lorentzian fit converges");
    assert!(
        (fit.gamma - r.gamma_predicted).abs() < 0.1 * r.gamma_predicted,
        "{fit:?} vs {}",
        r.gamma_predicted
    );
    assert!(fit.center.abs() < 0.5 * r.gamma_predicted);
    let centre = r.detunings.iter().position(|d| *d == 0.0).unwrap();
    assert!(r.transfer_fractions[centre] > 0.999);
    assert!(r.transfer_fractions.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn resonance_curve_is_symmetric_about_its_center() {
    // mirror pairs about zero differ only by what the fitted center offset
    // explains
    let r = resonance();
    let fit = r.fit.unwrap();
    let n = r.detunings.len();
    for i in 0..n / 2 {
        let (a, b) = (r.detunings[i], r.detunings[n - 1 - i]);
        assert!((a + b).abs() < 1e-9);
        let measured = r.transfer_fractions[i] - r.transfer_fractions[n - 1 - i];
        let explained = fit.eval(a) - fit.eval(b);
        assert!(
            (measured - explained).abs() <= 2.0 * fit.residual * fit.amplitude,
            "{i}: {measured} vs {explained}"
        );
    }
}

#[test]
fn narrow_grids_are_rejected() {
    let b = basis();
    let tables = default_tables(&b).unwrap();
    let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.6e-3, 0.0);
    assert!(scan_resonance(&spec, &b, &tables, 0.005 * KB, &[-1.0, 0.0, 1.0]).is_err());
}

#[test]
fn frequency_noise_scales_inversely_with_frequency() {
    let b = basis();
    let noise = VoltageNoise::default();
    let freqs = [350e3, 400e3, 450e3, 500e3];
    let points: Vec<_> = freqs
        .iter()
        .map(|&f| {
            let spec = DoubleWellSpec::compensated(Species::proton(), f, 0.7e-3, 0.0);
            estimate_sigma_f(&spec, &b, &noise, 200, 8).unwrap()
        })
        .collect();
    let fit = fit_sigma_f(&points).unwrap();
    assert!(fit.residual < 0.1, "{fit:?}");
    // γ falls as 1/f too, so γ/(2σ_f) stays put
    let be = Species::beryllium9_ion();
    let ratios: Vec<f64> = points
        .iter()
        .map(|p| {
            let g = 1.0 / (2.0 * exchange_time(&Species::proton(), &be, TAU * p.f, TAU * p.f, p.s0));
            robustness(g, p.sigma_f).0
        })
        .collect();
    let c = fit_constant(&ratios).unwrap();
    assert!(c.residual < 0.15, "{ratios:?}");
}

#[test]
fn frequency_noise_is_linear_in_voltage_noise() {
    let b = basis();
    let spec = DoubleWellSpec::compensated(Species::antiproton(), 450e3, 0.6e-3, 0.0);
    let one = estimate_sigma_f(&spec, &b, &VoltageNoise { sigma_v: 250e-9 }, 200, 3).unwrap();
    let two = estimate_sigma_f(&spec, &b, &VoltageNoise { sigma_v: 500e-9 }, 200, 3).unwrap();
    let stat = (2.0 / 199.0f64).sqrt();
    assert!(
        (two.sigma_f / one.sigma_f - 2.0).abs() < 2.0 * stat,
        "{} {}",
        one.sigma_f,
        two.sigma_f
    );
    let none = estimate_sigma_f(&spec, &b, &VoltageNoise::NONE, 20, 3).unwrap();
    assert_eq!(none.sigma_f, 0.0);
    assert_eq!(one.n_lost, 0);
}

#[test]
fn robustness_relation_reproduces_its_anchor_points() {
    assert_eq!(p_from_ratio(1.0), 0.5);
    assert!((ratio_from_p(0.8) - 2.0).abs() < 1e-15);
    assert!((p_from_ratio(2.0) - 0.8).abs() < 1e-15);
    let (ratio, p) = robustness(30.0, 7.5);
    assert_eq!(ratio, 2.0);
    assert!((p - 0.8).abs() < 1e-15);
}
