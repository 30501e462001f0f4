//! Resonance scans, frequency-fluctuation estimates, robustness and the
//! required power-supply stability.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{Species, K_B};
use crate::dynamics::exchange_time;
use crate::electrode::ElectrodeBasis;
use crate::error::{Error, Result};
use crate::montecarlo::{sample_rng, VoltageNoise};
use crate::potential::{AxialPotential, BasisTables};
use crate::protocols::{harmonic_boundary, run_harmonic_coupling, CouplingSetup, HarmonicCouplingRun};
use crate::solver::{locate_minimum, optimize_offset, refine_offset, solve_spec, DoubleWellSpec, OffsetScan};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Normalized RMS residual √(Σ(y − ŷ)² / Σy²).
fn residual(y: &[f64], yhat: impl Iterator<Item = f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        num += (a - b) * (a - b);
        den += a * a;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Fit(format!("{} abscissae for {} values", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Fit(format!("need at least {min} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    Ok(())
}

/// y = slope·x + intercept
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// x at which the line reaches y.
    pub fn invert(&self, y: f64) -> Option<f64> {
        (self.slope != 0.0).then(|| (y - self.intercept) / self.slope)
    }
}

pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    check_xy(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok(LinearFit {
        slope,
        intercept,
        residual: residual(y, x.iter().map(|a| slope * a + intercept)),
    })
}

/// Which single-coefficient model a [`ScaleFit`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleModel {
    /// c·x²
    Quadratic,
    /// c/x
    Reciprocal,
    /// c
    Constant,
}

impl ScaleModel {
    fn basis(&self, x: f64) -> f64 {
        match self {
            ScaleModel::Quadratic => x * x,
            ScaleModel::Reciprocal => 1.0 / x,
            ScaleModel::Constant => 1.0,
        }
    }
}

/// y = coefficient·g(x) for one of the [`ScaleModel`] shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleFit {
    pub model: ScaleModel,
    pub coefficient: f64,
    pub residual: f64,
}

impl ScaleFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficient * self.model.basis(x)
    }
}

pub fn fit_scale(model: ScaleModel, x: &[f64], y: &[f64]) -> Result<ScaleFit> {
    check_xy(x, y, 1)?;
    let (mut sgy, mut sgg) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let g = model.basis(*a);
        sgy += g * b;
        sgg += g * g;
    }
    if !(sgg > 0.0) || !sgg.is_finite() {
        return Err(Error::Fit("degenerate model basis".into()));
    }
    let c = sgy / sgg;
    Ok(ScaleFit {
        model,
        coefficient: c,
        residual: residual(y, x.iter().map(|a| c * model.basis(*a))),
    })
}

pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Result<ScaleFit> {
    fit_scale(ScaleModel::Quadratic, x, y)
}

pub fn fit_reciprocal(x: &[f64], y: &[f64]) -> Result<ScaleFit> {
    fit_scale(ScaleModel::Reciprocal, x, y)
}

pub fn fit_constant(y: &[f64]) -> Result<ScaleFit> {
    fit_scale(ScaleModel::Constant, &vec![1.0; y.len()], y)
}

/// A·γ² / ((x − x₀)² + γ²)
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub center: f64,
    /// Half width at half maximum, in the units of x.
    pub gamma: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn eval(&self, x: f64) -> f64 {
        lorentzian(self.amplitude, self.center, self.gamma, x)
    }
}

pub fn lorentzian(amplitude: f64, center: f64, gamma: f64, x: f64) -> f64 {
    let d = x - center;
    amplitude * gamma * gamma / (d * d + gamma * gamma)
}

/// Levenberg–Marquardt least squares for the three Lorentzian parameters.
pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<LorentzianFit> {
    check_xy(x, y, 4)?;
    let (i_max, &a0) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if !(a0 > 0.0) {
        return Err(Error::Fit("no positive peak".into()));
    }
    let above: Vec<f64> = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v >= 0.5 * a0)
        .map(|(a, _)| *a)
        .collect();
    let span =
        above.iter().copied().fold(f64::NEG_INFINITY, f64::max) - above.iter().copied().fold(f64::INFINITY, f64::min);
    let xr = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p = Vector3::new(a0, x[i_max], if span > 0.0 { 0.5 * span } else { 0.05 * xr });
    let sse = |p: &Vector3<f64>| -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - lorentzian(p[0], p[1], p[2], *a);
                r * r
            })
            .sum()
    };
    let mut cost = sse(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (a, b) in x.iter().zip(y) {
            let d = a - p[1];
            let g2 = p[2] * p[2];
            let den = d * d + g2;
            let m = p[0] * g2 / den;
            let j = Vector3::new(
                g2 / den,
                p[0] * g2 * 2.0 * d / (den * den),
                p[0] * 2.0 * p[2] * d * d / (den * den),
            );
            jtj += j * j.transpose();
            jtr += j * (b - m);
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj;
            for k in 0..3 {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = lhs.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let c = sse(&trial);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(1e-300);
                let small = step
                    .iter()
                    .zip(trial.iter())
                    .all(|(s, v)| s.abs() <= 1e-13 * v.abs().max(1e-300));
                p = trial;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if small || rel < 1e-16 {
                    return finish(p, x, y, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            return finish(p, x, y, iterations);
        }
    }
    Err(Error::Fit(format!(
        "Lorentzian fit did not converge in {iterations} iterations"
    )))
}

fn finish(p: Vector3<f64>, x: &[f64], y: &[f64], iterations: usize) -> Result<LorentzianFit> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit("Lorentzian parameters diverged".into()));
    }
    Ok(LorentzianFit {
        amplitude: p[0],
        center: p[1],
        gamma: p[2].abs(),
        residual: residual(y, x.iter().map(|a| lorentzian(p[0], p[1], p[2], *a))),
        iterations,
    })
}

/// Transfer fraction against detuning with its Lorentzian fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResonanceCurve {
    pub f: f64,
    pub s0: f64,
    /// Hz, relative to the compensated resonance.
    pub detunings: Vec<f64>,
    pub transfer_fractions: Vec<f64>,
    pub fit: Option<LorentzianFit>,
    pub fit_error: Option<String>,
    /// γ from 2γ = 1/τ_ex (Hz).
    pub gamma_predicted: f64,
}

/// `n` detunings evenly covering ±`span`·γ.
pub fn detuning_grid(gamma: f64, span: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| gamma * span * (2.0 * i as f64 / (n - 1).max(1) as f64 - 1.0))
        .collect()
}

/// Exchanges at ⁹Be⁺ frequency f_b + Δf for each Δf in `detunings`, where
/// f_b already carries the Coulomb compensation, each over its own τ_ex.
pub fn scan_resonance(
    spec: &DoubleWellSpec,
    basis: &Arc<ElectrodeBasis>,
    tables: &BasisTables,
    e_init: f64,
    detunings: &[f64],
) -> Result<ResonanceCurve> {
    let tau = exchange_time(&spec.species_a, &spec.species_b, spec.omega_a, spec.omega_b, spec.s0());
    let gamma = 1.0 / (2.0 * tau);
    let lo = detunings.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = detunings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= -5.0 * gamma * (1.0 - 1e-9) && hi >= 5.0 * gamma * (1.0 - 1e-9)) {
        return Err(Error::Config(format!(
            "detuning grid [{lo}, {hi}] Hz must span ±5γ = ±{:.3} Hz",
            5.0 * gamma
        )));
    }
    let fractions = detunings
        .par_iter()
        .map(|df| {
            let s = spec.with_f_b(spec.f_b() + df);
            let setup = CouplingSetup::new(s, basis, tables)?;
            let mut run = HarmonicCouplingRun::over_exchange(&setup, e_init);
            run.duration = 1.05 * setup.tau_ex();
            run_harmonic_coupling(&setup, &run).map(|o| o.transfer_fraction.clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fit, fit_error) = match fit_lorentzian(detunings, &fractions) {
        Ok(f) if f.center >= lo && f.center <= hi => (Some(f), None),
        Ok(f) => (None, Some(format!("fitted center {} Hz outside the scan", f.center))),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ResonanceCurve {
        f: spec.f_a(),
        s0: spec.s0(),
        detunings: detunings.to_vec(),
        transfer_fractions: fractions,
        fit,
        fit_error,
        gamma_predicted: gamma,
    })
}

impl ResonanceCurve {
    /// `detuning_Hz,transfer_fraction,fit`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["detuning_Hz", "transfer_fraction", "fit"])?;
        for (d, p) in self.detunings.iter().zip(&self.transfer_fractions) {
            let fit = self.fit.map(|f| format!("{:.9e}", f.eval(*d))).unwrap_or_default();
            w.write_record([format!("{d:.6e}"), format!("{p:.9e}"), fit])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Spread of the ⁹Be⁺-minus-particle frequency difference under noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyFluctuation {
    /// Particle frequency of the spec (Hz).
    pub f: f64,
    pub s0: f64,
    pub sigma_v: f64,
    /// Hz
    pub sigma_f: f64,
    /// Mean shift of the difference from its noiseless value (Hz).
    pub mean_shift: f64,
    pub n_used: usize,
    pub n_lost: usize,
    #[serde(skip)]
    pub differences: Vec<f64>,
}

fn local_frequency(p: &dyn AxialPotential, s: &Species, guess: f64, radius: f64) -> Result<f64> {
    let z = locate_minimum(p, s, guess, radius)?;
    s.omega_for(p.local(z).curvature)
        .map(|w| w / TAU)
        .ok_or_else(|| Error::Untrapped("minimum lost under noise".into()))
}

/// Monte Carlo estimate of σ_f: every sample perturbs the solved voltages,
/// relocates both minima and takes the difference of their frequencies.
pub fn estimate_sigma_f(
    spec: &DoubleWellSpec,
    basis: &Arc<ElectrodeBasis>,
    noise: &VoltageNoise,
    n_samples: usize,
    seed: u64,
) -> Result<FrequencyFluctuation> {
    let radius = basis.geometry().inner_radius;
    let (v, p) = solve_spec(spec, basis)?;
    let za = locate_minimum(&p, &spec.species_a, spec.z_a0, radius)?;
    let zb = locate_minimum(&p, &spec.species_b, spec.z_b0, radius)?;
    let base = local_frequency(&p, &spec.species_b, zb, radius)? - local_frequency(&p, &spec.species_a, za, radius)?;
    let n_el = v.voltages.len();
    let diffs: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let q = p.offset(&noise.draw(n_el, &mut rng));
            let fa = local_frequency(&q, &spec.species_a, za, radius).ok()?;
            let fb = local_frequency(&q, &spec.species_b, zb, radius).ok()?;
            Some(fb - fa - base)
        })
        .collect();
    let used: Vec<f64> = diffs.iter().flatten().copied().collect();
    let n = used.len();
    if n < 2 {
        return Err(Error::Pipeline {
            stage: "sigma_f".into(),
            message: format!("only {n} of {n_samples} noise samples kept both minima"),
        });
    }
    let mean = used.iter().sum::<f64>() / n as f64;
    let var = used.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(FrequencyFluctuation {
        f: spec.f_a(),
        s0: spec.s0(),
        sigma_v: noise.sigma_v,
        sigma_f: var.sqrt(),
        mean_shift: mean,
        n_used: n,
        n_lost: n_samples - n,
        differences: used,
    })
}

/// Reciprocal fit σ_f = c/f over a frequency scan.
pub fn fit_sigma_f(points: &[FrequencyFluctuation]) -> Result<ScaleFit> {
    let f: Vec<f64> = points.iter().map(|p| p.f).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sigma_f).collect();
    fit_reciprocal(&f, &s)
}

/// γ / (2σ_f)
pub fn robustness_ratio(gamma: f64, sigma_f: f64) -> f64 {
    gamma / (2.0 * sigma_f)
}

/// Transferable fraction p for a robustness ratio: ratio = 1/√(1/p − 1).
pub fn p_from_ratio(ratio: f64) -> f64 {
    let r2 = ratio * ratio;
    r2 / (1.0 + r2)
}

pub fn ratio_from_p(p: f64) -> f64 {
    1.0 / (1.0 / p - 1.0).sqrt()
}

/// (γ/(2σ_f), p)
pub fn robustness(gamma: f64, sigma_f: f64) -> (f64, f64) {
    let r = robustness_ratio(gamma, sigma_f);
    (r, p_from_ratio(r))
}

/// Datasheet stability of the comparison power supply (V peak to peak).
pub const REFERENCE_VPP: f64 = 0.5e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub s0: f64,
    /// Largest coolable energy (K) and its frequency (Hz).
    pub e_max: f64,
    pub f_emax: f64,
    /// Hz
    pub gamma: f64,
    /// σ_f at the reference noise and f_Emax (Hz).
    pub sigma_f: f64,
    pub robustness: f64,
    /// Fraction transferable with 95.4% confidence at the reference noise.
    pub p_at_95: f64,
    /// Largest σ_f that still gives the target fraction (Hz).
    pub sigma_f_target: f64,
    /// Required stability at the 68.3% line (V peak to peak).
    pub required_vpp: f64,
    /// Same requirement at the 95.4% line.
    pub required_vpp_2sigma: f64,
    pub meets_reference: bool,
}

/// Inputs of the stability pipeline for one separation.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityInput {
    pub species_a: Species,
    pub s0: f64,
    /// K
    pub e_max: Option<f64>,
    /// E_max (K) against particle frequency (Hz).
    pub harmonic_fit: Option<LinearFit>,
    /// σ_f (Hz) against frequency (Hz) at `sigma_v`.
    pub sigma_fit: Option<ScaleFit>,
    pub sigma_v: f64,
    pub target_p: f64,
}

/// E_max → f_Emax (harmonic fit) → σ_f (reciprocal fit) → σ_f at the
/// target p (robustness relation with γ at f_Emax) → V_pp.
pub fn required_voltage_stability(input: &StabilityInput) -> Result<RobustnessReport> {
    let stage = |stage: &str, message: &str| Error::Pipeline {
        stage: stage.into(),
        message: message.into(),
    };
    let e_max = input
        .e_max
        .ok_or_else(|| stage("harmonic_boundary", "no maximum coolable energy"))?;
    let hfit = input
        .harmonic_fit
        .as_ref()
        .ok_or_else(|| stage("harmonic_fit", "no linear fit of E_max against frequency"))?;
    let f = hfit
        .invert(e_max)
        .filter(|f| *f > 0.0)
        .ok_or_else(|| stage("harmonic_fit", "fit does not reach E_max at a positive frequency"))?;
    let sfit = input
        .sigma_fit
        .as_ref()
        .ok_or_else(|| stage("sigma_f_fit", "no reciprocal fit of sigma_f"))?;
    let sigma_f = sfit.eval(f);
    if !(sigma_f > 0.0) {
        return Err(stage("sigma_f_fit", "non-positive sigma_f at f_Emax"));
    }
    let be = Species::beryllium9_ion();
    let gamma = 1.0 / (2.0 * exchange_time(&input.species_a, &be, TAU * f, TAU * f, input.s0));
    let (ratio, p) = robustness(gamma, sigma_f);
    let sigma_target = gamma / (2.0 * ratio_from_p(input.target_p));
    let vpp = 4.0 * input.sigma_v * sigma_target / sigma_f;
    Ok(RobustnessReport {
        s0: input.s0,
        e_max,
        f_emax: f,
        gamma,
        sigma_f,
        robustness: ratio,
        p_at_95: p,
        sigma_f_target: sigma_target,
        required_vpp: vpp,
        required_vpp_2sigma: 0.5 * vpp,
        meets_reference: vpp >= REFERENCE_VPP,
    })
}

/// Harmonic boundary and well depth of particle a at one (f, s₀).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRange {
    pub f: f64,
    pub s0: f64,
    /// K
    pub depth: f64,
    /// K; `None` when the boundary could not be found.
    pub e_max: Option<f64>,
    pub max_voltage: f64,
}

/// Harmonic boundaries over a frequency scan at fixed s₀ and midpoint
/// offset, with the ⁹Be⁺ frequency compensated.
pub fn energy_ranges(
    species: &Species,
    s0: f64,
    delta_s0: f64,
    freqs: &[f64],
    basis: &Arc<ElectrodeBasis>,
    tables: &BasisTables,
    threshold: f64,
) -> Result<Vec<EnergyRange>> {
    freqs
        .par_iter()
        .map(|&f| {
            let spec = DoubleWellSpec::compensated(*species, f, s0, delta_s0);
            let setup = CouplingSetup::new(spec, basis, tables)?;
            let e_max = harmonic_boundary(&setup, threshold).ok();
            Ok(EnergyRange {
                f,
                s0,
                depth: setup.wells.a.depth,
                e_max,
                max_voltage: setup.voltages.max_abs(),
            })
        })
        .collect()
}

/// Midpoint offset maximizing the harmonic boundary at (f, s₀).
pub fn harmonic_offset_scan(
    species: &Species,
    f: f64,
    s0: f64,
    offsets: &[f64],
    basis: &Arc<ElectrodeBasis>,
    tables: &BasisTables,
    threshold: f64,
) -> OffsetScan {
    let spec = DoubleWellSpec::compensated(*species, f, s0, 0.0);
    optimize_offset(&spec, offsets, |s| {
        let setup = CouplingSetup::new(*s, basis, tables)?;
        harmonic_boundary(&setup, threshold)
    })
}

/// Offset search levels (half-width, step) in metres: 25 µm over the full
/// ±150 µm range, then 5 µm and 1 µm around the two best points.
pub const OFFSET_LEVELS: [(f64, f64); 3] = [(150e-6, 25e-6), (20e-6, 5e-6), (4e-6, 1e-6)];

/// Coarse-to-fine search for the midpoint offset maximizing the harmonic
/// boundary at (f, s₀).
pub fn optimize_harmonic_offset(
    species: &Species,
    f: f64,
    s0: f64,
    basis: &Arc<ElectrodeBasis>,
    tables: &BasisTables,
    threshold: f64,
) -> OffsetScan {
    let spec = DoubleWellSpec::compensated(*species, f, s0, 0.0);
    refine_offset(&spec, &OFFSET_LEVELS, 2, 150e-6, |s| {
        let setup = CouplingSetup::new(*s, basis, tables)?;
        harmonic_boundary(&setup, threshold)
    })
}

/// `E_init` grid used by tests and reports (J), evenly spaced in K.
pub fn kelvin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| K_B * (lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64))
        .collect()
}
