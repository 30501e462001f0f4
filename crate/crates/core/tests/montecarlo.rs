use std::sync::Arc;

use rand::Rng;
use trapcool::electrode::ElectrodeBasis;
use trapcool::montecarlo::{
    run_campaign, run_samples, sample_initial_energy, sample_rng, BoltzmannSampler, CampaignConfig, Outcome,
    SampleDraw, VoltageNoise,
};
use trapcool::protocols::{build_sweep, default_tables, SweepRule, SweepRuntime};
use trapcool::solver::DoubleWellSpec;
use trapcool::{Error, Species};

const KB: f64 = 1.380_649e-23;

fn short_runtime() -> SweepRuntime {
    let basis = Arc::new(ElectrodeBasis::default_analytic());
    let tables = Arc::new(default_tables(&basis).unwrap());
    let spec = DoubleWellSpec::compensated(Species::proton(), 500e3, 0.7e-3, 0.0);
    let schedule = build_sweep(&spec, &basis, 470e3, spec.f_b(), 2e-4, 3, SweepRule::GammaSquared).unwrap();
    SweepRuntime::new(schedule, &basis, tables).unwrap()
}

#[test]
fn boltzmann_mean_matches_the_temperature() {
    let sampler = BoltzmannSampler { temperature: 4.0 };
    let mut rng = sample_rng(11, 0);
    let n = 100_000;
    let mean = (0..n).map(|_| sampler.sample(&mut rng)).sum::<f64>() / n as f64;
    let sigma = 4.0 * KB / (n as f64).sqrt();
    assert!((mean - 4.0 * KB).abs() < 3.0 * sigma, "{}", mean / KB);
}

#[test]
fn tail_above_the_proton_depth_matches_the_trapping_claim() {
    let p = (-9.4f64 / 4.0).exp();
    assert!((p - 0.095).abs() < 0.001);
    let sampler = BoltzmannSampler::default();
    let mut rng = sample_rng(5, 3);
    let n = 100_000;
    let above = (0..n).filter(|_| sampler.sample(&mut rng) > 9.4 * KB).count() as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((above - p).abs() < 4.0 * sigma, "{above}");
}

#[test]
fn inverse_cdf_is_finite_on_the_whole_unit_interval() {
    assert_eq!(sample_initial_energy(4.0, 0.0), 0.0);
    let top = sample_initial_energy(4.0, 1.0 - f64::EPSILON);
    assert!(top.is_finite() && top > 0.0);
    let median = sample_initial_energy(4.0, 0.5);
    assert!((median - 4.0 * KB * 2f64.ln()).abs() < 1e-12 * median);
}

#[test]
fn noise_offsets_have_the_requested_spread() {
    let noise = VoltageNoise::default();
    let mut rng = sample_rng(99, 1);
    let draws: Vec<f64> = (0..1000).flat_map(|_| noise.draw(1, &mut rng)).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - 250e-9).abs() < 0.1 * 250e-9, "{sd}");
    assert!(mean.abs() < 4.0 * 250e-9 / n.sqrt());
}

#[test]
fn zero_noise_leaves_voltages_unchanged() {
    let v = [1.0, -2.5, 0.25];
    let mut rng = sample_rng(1, 1);
    assert_eq!(VoltageNoise::NONE.apply(&v, &mut rng), v.to_vec());
}

#[test]
fn draws_are_reproducible_and_independent_across_indices() {
    let s = BoltzmannSampler::default();
    let n = VoltageNoise::default();
    let a = SampleDraw::draw(42, 17, &s, &n, 9, 2);
    let b = SampleDraw::draw(42, 17, &s, &n, 9, 2);
    let c = SampleDraw::draw(42, 18, &s, &n, 9, 2);
    assert_eq!(a, b);
    assert_ne!(a.e_init, c.e_init);
    assert_eq!(a.offsets.len(), 9);
    assert_eq!(a.phases_b.len(), 2);
    // the noise amplitude does not shift the other draws
    let quiet = SampleDraw::draw(42, 17, &s, &VoltageNoise::NONE, 9, 2);
    assert_eq!(quiet.e_init, a.e_init);
    assert_eq!(quiet.phases_b, a.phases_b);
}

#[test]
fn streams_differ_between_seeds() {
    let x: u64 = sample_rng(1, 0).random();
    let y: u64 = sample_rng(2, 0).random();
    assert_ne!(x, y);
}

#[test]
fn failures_are_recorded_per_sample() {
    let mut cfg = CampaignConfig::new(50, 3);
    cfg.threads = Some(2);
    let d = run_samples(&cfg, 9, |s| {
        if s.index % 5 == 0 {
            Err(Error::Untrapped("escaped".into()))
        } else if s.index % 7 == 0 {
            Err(Error::Collision {
                t: 0.0,
                min_separation: 1e-6,
            })
        } else {
            Ok(0.5 * s.e_init)
        }
    })
    .unwrap();
    assert_eq!(d.samples.len(), 50);
    assert_eq!(d.count(Outcome::Untrapped), 10);
    assert_eq!(d.count(Outcome::Collided), 6);
    assert_eq!(d.count(Outcome::Cooled), 34);
    assert_eq!(d.final_energies().len(), 34);
    let total: f64 = d.histogram(0.1).iter().map(|b| b.density * (b.high - b.low)).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn untrapped_fraction_follows_the_boltzmann_tail() {
    let runtime = short_runtime();
    let mut cfg = CampaignConfig::new(600, 2024);
    cfg.n_sweeps = 1;
    let d = run_campaign(&runtime, &cfg).unwrap();
    let p = (-runtime.depth_a / 4.0).exp();
    let n = d.samples.len() as f64;
    let observed = d.count(Outcome::Untrapped) as f64 / n;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((observed - p).abs() < 3.0 * sigma, "{observed} vs {p}");
    assert_eq!(d.count(Outcome::Failed), 0);
}

#[test]
fn campaigns_do_not_depend_on_the_thread_count() {
    let runtime = short_runtime();
    let csv = |threads| {
        let mut cfg = CampaignConfig::new(12, 77);
        cfg.threads = Some(threads);
        let d = run_campaign(&runtime, &cfg).unwrap();
        let mut buf = Vec::new();
        d.write_samples_csv(&mut buf).unwrap();
        buf
    };
    let one = csv(1);
    assert_eq!(one, csv(4));
    assert_eq!(one, csv(1));
}
