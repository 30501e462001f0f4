use std::f64::consts::TAU;
use std::sync::{Arc, OnceLock};

use trapcool::dynamics::{axial_frequency_at_energy, coulomb_detuning, exchange_time, TwoBody};
use trapcool::electrode::ElectrodeBasis;
use trapcool::potential::{AxialField, AxialPotential, BasisTables, ComposedPotential, HarmonicWell};
use trapcool::protocols::{
    build_sweep, default_tables, plan_ground_state_protocol, repetitions, run_coupling, run_harmonic_coupling,
    standard_sweep, CouplingSetup, HarmonicCouplingRun, StageKind, SweepInit, SweepRule, SweepRuntime,
};
use trapcool::solver::DoubleWellSpec;
use trapcool::Species;

const KB: f64 = 1.380_649e-23;

fn basis() -> Arc<ElectrodeBasis> {
    static B: OnceLock<Arc<ElectrodeBasis>> = OnceLock::new();
    Arc::clone(B.get_or_init(|| Arc::new(ElectrodeBasis::default_analytic())))
}

fn tables() -> Arc<BasisTables> {
    static T: OnceLock<Arc<BasisTables>> = OnceLock::new();
    Arc::clone(T.get_or_init(|| Arc::new(default_tables(&basis()).unwrap())))
}

fn at_rest(e_a: f64) -> SweepInit {
    SweepInit {
        e_a,
        phase_a: 0.0,
        e_b: 0.0,
        phases_b: vec![0.0],
    }
}

#[test]
fn resonant_exchange_in_solved_wells_is_nearly_complete() {
    for (species, f) in [(Species::proton(), 500e3), (Species::antiproton(), 450e3)] {
        let spec = DoubleWellSpec::compensated(species, f, 0.6e-3, 0.0);
        let setup = CouplingSetup::new(spec, &basis(), &tables()).unwrap();
        let run = HarmonicCouplingRun::over_exchange(&setup, 0.005 * KB);
        let out = run_harmonic_coupling(&setup, &run).unwrap();
        assert!(
            out.transfer_fraction > 0.999,
            "{:?}: {}",
            species.label,
            out.transfer_fraction
        );
        assert!(out.e_fin <= out.e_init);
    }
}

#[test]
fn zero_initial_energy_stays_zero_in_a_solved_well() {
    let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.6e-3, 0.0);
    let setup = CouplingSetup::new(spec, &basis(), &tables()).unwrap();
    let run = HarmonicCouplingRun::over_exchange(&setup, 0.0);
    let out = run_harmonic_coupling(&setup, &run).unwrap();
    assert!(out.e_init.abs() < 1e-12 * KB && out.e_fin.abs() < 1e-12 * KB);
}

#[test]
fn runs_shorter_than_an_exchange_are_rejected() {
    let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.6e-3, 0.0);
    let setup = CouplingSetup::new(spec, &basis(), &tables()).unwrap();
    let mut run = HarmonicCouplingRun::over_exchange(&setup, 0.01 * KB);
    run.duration = 0.5 * setup.tau_ex();
    assert!(run_harmonic_coupling(&setup, &run).is_err());
}

#[test]
fn detuned_transfer_follows_the_lorentzian() {
    // two coupled oscillators detuned by Δf move at most γ²/(γ² + Δf²) of
    // the energy, with γ = 1/(2τ_ex)
    let p = Species::proton();
    let be = Species::beryllium9_ion();
    let (f, s0) = (500e3, 0.6e-3);
    let f_be = f + coulomb_detuning(&p, &be, TAU * f, s0) / TAU;
    let tau = exchange_time(&p, &be, TAU * f, TAU * f_be, s0);
    let gamma = 1.0 / (2.0 * tau);
    for k in [3.0, 5.0] {
        let df = k * gamma;
        let wa = HarmonicWell {
            center: -0.5 * s0,
            curvature: p.curvature_for(TAU * f),
            half_width: 0.25e-3,
        };
        let wb = HarmonicWell {
            center: 0.5 * s0,
            curvature: be.curvature_for(TAU * (f_be + df)),
            half_width: 0.25e-3,
        };
        let sys = TwoBody::new(p, be, &wa, &wb);
        let reference = sys.equilibrium(0.0, (wa.center, wb.center)).unwrap();
        let run = HarmonicCouplingRun {
            e_init: 0.01 * KB,
            duration: 1.05 * tau,
            phase_a: 0.0,
            e_b: 0.0,
            phase_b: 0.0,
            trace_stride: 0,
        };
        let out = run_coupling(&sys, &reference, &run, 20e-9).unwrap();
        let oracle = gamma * gamma / (gamma * gamma + df * df);
        assert!(
            (out.transfer_fraction - oracle).abs() < 0.1 * oracle,
            "{k}γ: {} vs {oracle}",
            out.transfer_fraction
        );
    }
}

#[test]
fn off_resonant_sweep_leaves_the_energy_unchanged() {
    let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.7e-3, 0.0);
    let schedule = build_sweep(&spec, &basis(), 470e3, 480e3, 5e-3, 5, SweepRule::Linear).unwrap();
    let runtime = SweepRuntime::new(schedule, &basis(), tables()).unwrap();
    let out = runtime.run(&at_rest(0.05 * KB), None, 1, 0).unwrap();
    assert!(
        (out.e_fin - out.e_init).abs() < 1e-2 * out.e_init,
        "{} vs {}",
        out.e_fin,
        out.e_init
    );
}

#[test]
fn zero_duration_sweep_returns_the_initial_energy() {
    let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.7e-3, 0.0);
    let schedule = build_sweep(&spec, &basis(), 470e3, spec.f_b(), 0.0, 4, SweepRule::GammaSquared).unwrap();
    let runtime = SweepRuntime::new(schedule, &basis(), tables()).unwrap();
    let out = runtime.run(&at_rest(0.2 * KB), None, 2, 0).unwrap();
    assert_eq!(out.e_fin, out.e_init);
}

#[test]
fn two_waypoints_make_a_single_linear_ramp() {
    let spec = DoubleWellSpec::compensated(Species::antiproton(), 500e3, 0.7e-3, 0.0);
    let schedule = build_sweep(&spec, &basis(), 470e3, 500e3, 1e-3, 2, SweepRule::GammaSquared).unwrap();
    assert_eq!(schedule.waypoints, vec![(0.0, 470e3), (1e-3, 500e3)]);
    let runtime = SweepRuntime::new(schedule.clone(), &basis(), tables()).unwrap();
    let field = runtime.field(None);
    let t = tables();
    let mid: Vec<f64> = schedule.voltages[0]
        .voltages
        .iter()
        .zip(&schedule.voltages[1].voltages)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let direct = t.combine(&mid);
    for z in [-0.5e-3, 0.0, 0.31e-3] {
        let a = field.local_at(z, 0.5e-3);
        let b = direct.local(z);
        assert!((a.value - b.value).abs() < 1e-12 * b.value.abs().max(1e-3));
        assert!((a.curvature - b.curvature).abs() < 1e-9 * b.curvature.abs().max(1.0));
    }
}

#[test]
fn standard_sweeps_have_published_durations_and_monotone_waypoints() {
    for (species, duration) in [(Species::proton(), 0.180), (Species::antiproton(), 0.242)] {
        let s = standard_sweep(&species, &basis()).unwrap();
        assert_eq!(s.duration(), duration);
        assert_eq!(s.waypoints.first().unwrap().1, 470e3);
        for w in s.waypoints.windows(2) {
            assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
        }
    }
}

#[test]
fn sweep_never_adds_energy_to_the_particle() {
    let species = Species::proton();
    let runtime = SweepRuntime::new(standard_sweep(&species, &basis()).unwrap(), &basis(), tables()).unwrap();
    for (e_k, phase) in [(0.3, 0.0), (1.5, 0.37), (3.0, 0.81)] {
        let init = SweepInit {
            phase_a: phase,
            ..at_rest(e_k * KB)
        };
        let out = runtime.run(&init, None, 1, 0).unwrap();
        assert!(
            out.e_fin <= out.e_init * (1.0 + 1e-3),
            "{e_k} K: {} -> {}",
            out.e_init,
            out.e_fin
        );
    }
}

#[test]
fn cooled_trajectories_cross_the_ion_frequency() {
    // a slow sweep over the last kilohertz below resonance
    let species = Species::antiproton();
    let spec = DoubleWellSpec::compensated(species, 500e3, 0.7e-3, 0.0);
    let schedule = build_sweep(&spec, &basis(), 499e3, spec.f_b(), 0.3, 5, SweepRule::GammaSquared).unwrap();
    let (f_lo, f_hi) = (schedule.waypoints[0].1, schedule.waypoints.last().unwrap().1);
    let start = ComposedPotential::new(basis(), schedule.voltages[0].voltages.clone()).unwrap();
    let runtime = SweepRuntime::new(schedule, &basis(), tables()).unwrap();
    let freq = |e: f64| axial_frequency_at_energy(&start, &species, e, spec.z_a0, 4e-4).unwrap();
    let mut cooled = 0;
    for e_k in [1.0, 2.0, 4.0] {
        let out = runtime.run(&at_rest(e_k * KB), None, 1, 0).unwrap();
        let f_init = freq(out.e_init);
        if out.e_fin < 0.9 * out.e_init {
            cooled += 1;
            assert!(f_init >= f_lo && f_init <= f_hi, "{e_k} K at {f_init} Hz");
            let f_fin = freq(out.e_fin);
            assert!(
                f_fin > f_init && (f_fin - f_hi).abs() < 50.0,
                "{e_k} K: {f_init} -> {f_fin}"
            );
        } else {
            assert!(f_init < f_lo || f_init > f_hi, "{e_k} K at {f_init} Hz was not cooled");
        }
    }
    assert_eq!(cooled, 2);
}

#[test]
#[ignore = "the surrogate well is too harmonic for the standard sweep rate; see the acceptance report"]
fn four_kelvin_proton_is_cooled_below_half_a_kelvin() {
    let species = Species::proton();
    let runtime = SweepRuntime::new(standard_sweep(&species, &basis()).unwrap(), &basis(), tables()).unwrap();
    let out = runtime.run(&at_rest(4.0 * KB), None, 2, 0).unwrap();
    assert!(out.e_fin < 0.5 * KB, "{} K", out.e_fin / KB);
}

#[test]
fn plans_add_up_to_the_published_totals() {
    let p = plan_ground_state_protocol(&Species::proton()).unwrap();
    let a = plan_ground_state_protocol(&Species::antiproton()).unwrap();
    // 2×180 + 4×29.4 + 3×4.6 and 2×242 + 4×20.8 + 3×4.6 (ms)
    assert!((p.total_time() - 0.4914).abs() < 2e-4, "{}", p.total_time());
    assert!((a.total_time() - 0.5810).abs() < 2e-4, "{}", a.total_time());
    assert!((p.total_time() - 0.490).abs() < 0.005);
    assert!((a.total_time() - 0.580).abs() < 0.005);
    let kinds: Vec<StageKind> = p.stages.iter().map(|s| s.kind).collect();
    assert_eq!(
        kinds,
        vec![StageKind::Sweep, StageKind::Harmonic, StageKind::GroundState]
    );
}

#[test]
fn repetitions_are_the_smallest_sufficient_count() {
    for (start, target, p) in [(1.0, 1e-3, 0.8), (0.5, 1e-3, 0.8), (2.0, 0.3, 0.5)] {
        let k = repetitions(start, target, p);
        let remaining = |n: usize| start * (1.0f64 - p).powi(n as i32);
        assert!(remaining(k) <= target);
        assert!(k == 0 || remaining(k - 1) >= target);
    }
}
