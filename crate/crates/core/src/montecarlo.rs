//! Boltzmann initialization, static voltage noise and the Monte Carlo
//! campaign driver.
//!
//! Every sample owns a ChaCha20 stream selected by its index under the
//! master seed, and its random numbers are drawn in a fixed order. Results
//! therefore do not depend on how samples are spread over threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::K_B;
use crate::error::{Error, Result};
use crate::protocols::{ground_state_energy, SweepInit, SweepRuntime};

/// Deterministic generator for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoltzmannSampler {
    /// K
    pub temperature: f64,
}

impl Default for BoltzmannSampler {
    fn default() -> Self {
        Self { temperature: 4.0 }
    }
}

impl BoltzmannSampler {
    /// Energy (J) from ρ(E) ∝ exp(−E / k_B T) by inverting the CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        sample_initial_energy(self.temperature, u)
    }
}

/// Inverse CDF of the 1D Boltzmann distribution at uniform deviate `u` ∈ [0, 1).
pub fn sample_initial_energy(temperature: f64, u: f64) -> f64 {
    -K_B * temperature * (-u).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoltageNoise {
    /// Standard deviation per electrode (V).
    pub sigma_v: f64,
}

impl Default for VoltageNoise {
    fn default() -> Self {
        Self { sigma_v: 250e-9 }
    }
}

impl VoltageNoise {
    pub const NONE: VoltageNoise = VoltageNoise { sigma_v: 0.0 };

    /// One independent Gaussian offset per electrode, held for a whole run.
    pub fn draw<R: Rng + ?Sized>(&self, n_electrodes: usize, rng: &mut R) -> Vec<f64> {
        if self.sigma_v == 0.0 {
            // keep the stream position independent of sigma
            for _ in 0..n_electrodes {
                let _: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
            }
            return vec![0.0; n_electrodes];
        }
        let normal = Normal::new(0.0, self.sigma_v).expect("finite sigma");
        (0..n_electrodes).map(|_| normal.sample(rng)).collect()
    }

    /// `voltages` plus one draw of offsets.
    pub fn apply<R: Rng + ?Sized>(&self, voltages: &[f64], rng: &mut R) -> Vec<f64> {
        let d = self.draw(voltages.len(), rng);
        voltages.iter().zip(d).map(|(v, d)| v + d).collect()
    }
}

/// Random inputs of one sample, drawn in this order: E_init, phase of a,
/// ⁹Be⁺ phases (one per sweep), electrode offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub index: usize,
    /// J
    pub e_init: f64,
    pub phase_a: f64,
    pub phases_b: Vec<f64>,
    /// V
    pub offsets: Vec<f64>,
}

impl SampleDraw {
    pub fn draw(
        seed: u64,
        index: usize,
        sampler: &BoltzmannSampler,
        noise: &VoltageNoise,
        n_electrodes: usize,
        n_sweeps: usize,
    ) -> Self {
        let mut rng = sample_rng(seed, index as u64);
        let e_init = sampler.sample(&mut rng);
        let phase_a = rng.random();
        let phases_b = (0..n_sweeps.max(1)).map(|_| rng.random()).collect();
        let offsets = noise.draw(n_electrodes, &mut rng);
        Self {
            index,
            e_init,
            phase_a,
            phases_b,
            offsets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Cooled,
    Untrapped,
    Collided,
    /// Any other numerical failure; makes the campaign partial.
    Failed,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Cooled => "cooled",
            Outcome::Untrapped => "untrapped",
            Outcome::Collided => "collided",
            Outcome::Failed => "failed",
        }
    }

    fn from_error(e: &Error) -> Self {
        match e {
            Error::Untrapped(_) => Outcome::Untrapped,
            Error::Collision { .. } => Outcome::Collided,
            _ => Outcome::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub index: usize,
    /// J
    pub e_init: f64,
    /// J; `None` unless the trajectory completed.
    pub e_fin: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CampaignConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub sampler: BoltzmannSampler,
    pub noise: VoltageNoise,
    pub n_sweeps: usize,
    /// Worker cap; `None` uses all cores.
    pub threads: Option<usize>,
    /// Start ⁹Be⁺ at ħω/2 with a random phase instead of at rest.
    pub zero_point_be: bool,
}

impl CampaignConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            sampler: BoltzmannSampler::default(),
            noise: VoltageNoise::default(),
            n_sweeps: 2,
            threads: None,
            zero_point_be: true,
        }
    }
}

/// Runs `stage` for every sample on a pool of `config.threads` workers.
/// `stage` returns E_fin (J); errors become outcomes, never aborts.
pub fn run_samples<F>(config: &CampaignConfig, n_electrodes: usize, stage: F) -> Result<EnergyDistribution>
where
    F: Fn(&SampleDraw) -> Result<f64> + Sync,
{
    if config.n_samples == 0 {
        return Err(Error::Config("a campaign needs at least one sample".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let samples = pool.install(|| {
        (0..config.n_samples)
            .into_par_iter()
            .map(|i| {
                let d = SampleDraw::draw(
                    config.seed,
                    i,
                    &config.sampler,
                    &config.noise,
                    n_electrodes,
                    config.n_sweeps,
                );
                match stage(&d) {
                    Ok(e) => SampleRecord {
                        index: i,
                        e_init: d.e_init,
                        e_fin: Some(e),
                        outcome: Outcome::Cooled,
                    },
                    Err(err) => SampleRecord {
                        index: i,
                        e_init: d.e_init,
                        e_fin: None,
                        outcome: Outcome::from_error(&err),
                    },
                }
            })
            .collect()
    });
    Ok(EnergyDistribution { samples })
}

/// Sweep campaign: every sample runs the schedule `config.n_sweeps` times
/// under its own static electrode offsets.
pub fn run_campaign(runtime: &SweepRuntime, config: &CampaignConfig) -> Result<EnergyDistribution> {
    let n_el = runtime.schedule.voltages[0].voltages.len();
    let depth = runtime.depth_a * K_B;
    let e_b = if config.zero_point_be {
        ground_state_energy(runtime.schedule.waypoints[0].1)
    } else {
        0.0
    };
    run_samples(config, n_el, |d| {
        if d.e_init >= depth {
            return Err(Error::Untrapped("initial energy above the well depth".into()));
        }
        let init = SweepInit {
            e_a: d.e_init,
            phase_a: d.phase_a,
            e_b,
            phases_b: if config.zero_point_be {
                d.phases_b.clone()
            } else {
                vec![0.0]
            },
        };
        let noise = (config.noise.sigma_v > 0.0).then_some(&d.offsets[..]);
        runtime.run(&init, noise, config.n_sweeps, 0).map(|o| o.e_fin)
    })
}

/// Per-sample results of a campaign with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyDistribution {
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    /// K
    pub low: f64,
    pub high: f64,
    /// 1/K; bins integrate to one.
    pub density: f64,
}

/// Normalized histogram of `values` (K) with bins of `width` from zero.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() || !(width > 0.0) {
        return Vec::new();
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let n_bins = ((max / width).floor() as usize + 1).max(1);
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let i = ((v.max(0.0) / width) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let norm = 1.0 / (values.len() as f64 * width);
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            low: i as f64 * width,
            high: (i + 1) as f64 * width,
            density: c as f64 * norm,
        })
        .collect()
}

/// Fraction of `values` strictly below `threshold`.
pub fn fraction_below(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v < threshold).count() as f64 / values.len() as f64
}

/// Upper edge of the bin after which the histogram density falls the most.
pub fn drop_edge(values: &[f64], width: f64) -> Option<f64> {
    let h = histogram(values, width);
    h.windows(2)
        .map(|w| (w[0].density - w[1].density, w[0].high))
        .filter(|(d, _)| *d > 0.0)
        .fold(None, |best: Option<(f64, f64)>, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .map(|(_, e)| e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub n_samples: usize,
    pub n_cooled: usize,
    pub n_untrapped: usize,
    pub n_collided: usize,
    pub n_failed: usize,
    /// Mean-energy temperatures (K) of the initial and final energies.
    pub initial_temperature: f64,
    pub final_temperature: Option<f64>,
    /// (threshold K, fraction of trapped samples below it)
    pub fractions_below: Vec<(f64, f64)>,
    /// K
    pub drop_edge: Option<f64>,
    pub fraction_below_edge: Option<f64>,
    pub bin_width: f64,
}

/// Default histogram bin width (K).
pub const DEFAULT_BIN_WIDTH: f64 = 0.02;

impl EnergyDistribution {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.samples.iter().filter(|s| s.outcome == outcome).count()
    }

    /// Initial energies of all samples (K).
    pub fn initial_energies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.e_init / K_B).collect()
    }

    /// Final energies of completed trajectories (K).
    pub fn final_energies(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.e_fin.map(|e| e / K_B)).collect()
    }

    /// Fraction of completed trajectories that end below `threshold` (K).
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        fraction_below(&self.final_energies(), threshold)
    }

    /// Temperature from the mean final energy, ⟨E⟩ = k_B T (K).
    pub fn mean_energy_temperature(&self) -> Option<f64> {
        let e = self.final_energies();
        (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64)
    }

    pub fn histogram(&self, width: f64) -> Vec<HistogramBin> {
        histogram(&self.final_energies(), width)
    }

    pub fn summary(&self, thresholds: &[f64], bin_width: f64) -> CampaignSummary {
        let fin = self.final_energies();
        let init = self.initial_energies();
        let edge = drop_edge(&fin, bin_width);
        CampaignSummary {
            n_samples: self.samples.len(),
            n_cooled: self.count(Outcome::Cooled),
            n_untrapped: self.count(Outcome::Untrapped),
            n_collided: self.count(Outcome::Collided),
            n_failed: self.count(Outcome::Failed),
            initial_temperature: init.iter().sum::<f64>() / init.len().max(1) as f64,
            final_temperature: self.mean_energy_temperature(),
            fractions_below: thresholds.iter().map(|&t| (t, fraction_below(&fin, t))).collect(),
            drop_edge: edge,
            fraction_below_edge: edge.map(|e| fraction_below(&fin, e)),
            bin_width,
        }
    }

    /// `index,E_init_K,E_fin_K,outcome`; E_fin is empty for lost samples.
    pub fn write_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "E_init_K", "E_fin_K", "outcome"])?;
        for s in &self.samples {
            w.write_record([
                s.index.to_string(),
                format!("{:.17e}", s.e_init / K_B),
                s.e_fin.map(|e| format!("{:.17e}", e / K_B)).unwrap_or_default(),
                s.outcome.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `bin_low_K,bin_high_K,density`
pub fn write_histogram_csv<W: Write>(writer: W, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_low_K", "bin_high_K", "density"])?;
    for b in bins {
        w.write_record([
            format!("{:.6e}", b.low),
            format!("{:.6e}", b.high),
            format!("{:.9e}", b.density),
        ])?;
    }
    w.flush()?;
    Ok(())
}
