//! Constrained voltage solving and well characterization.
//!
//! The electrode voltages V solve A V = t, where each row of A holds one
//! derivative of every basis function at one target minimum: field nulls,
//! curvature targets m ω² / q, and optionally nulls of the 3rd and 4th
//! derivatives. Rows are rescaled by Rᵐ (R the trap radius, m the
//! derivative order) before the SVD so that mixed orders are balanced; the
//! minimum-norm solution of an exact system does not depend on that scaling.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{Species, K_B};
use crate::dynamics::coulomb_detuning;
use crate::electrode::ElectrodeBasis;
use crate::error::{Error, Result};
use crate::potential::{AxialPotential, ComposedPotential};

/// Voltage magnitude above which a solution is flagged.
pub const VOLTAGE_WARNING_LIMIT: f64 = 10.0;

/// Smallest accepted σ_min / σ_max of the balanced constraint matrix.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWellSpec {
    pub species_a: Species,
    pub species_b: Species,
    /// Target minimum of particle a (m).
    pub z_a0: f64,
    /// Target minimum of particle b (m).
    pub z_b0: f64,
    /// rad/s
    pub omega_a: f64,
    /// rad/s
    pub omega_b: f64,
    /// Offset of the pair midpoint from the central electrode, positive
    /// toward particle b (m).
    pub delta_s0: f64,
    /// Also null the 3rd and 4th derivatives at both minima.
    pub null_higher_orders: bool,
}

impl DoubleWellSpec {
    /// Particle a on the negative side, particle b on the positive side,
    /// midpoint shifted by `delta_s0` toward b. Frequencies in Hz.
    pub fn new(species_a: Species, species_b: Species, f_a: f64, f_b: f64, s0: f64, delta_s0: f64) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        Self {
            species_a,
            species_b,
            z_a0: delta_s0 - 0.5 * s0,
            z_b0: delta_s0 + 0.5 * s0,
            omega_a: tau * f_a,
            omega_b: tau * f_b,
            delta_s0,
            null_higher_orders: true,
        }
    }

    /// Particle a at `f`, the ⁹Be⁺ well raised by the Coulomb detuning so
    /// that both coupled frequencies coincide.
    pub fn compensated(species_a: Species, f: f64, s0: f64, delta_s0: f64) -> Self {
        let be = Species::beryllium9_ion();
        let tau = 2.0 * std::f64::consts::PI;
        let df = coulomb_detuning(&species_a, &be, tau * f, s0) / tau;
        Self::new(species_a, be, f, f + df, s0, delta_s0)
    }

    pub fn s0(&self) -> f64 {
        (self.z_b0 - self.z_a0).abs()
    }

    pub fn f_a(&self) -> f64 {
        self.omega_a / (2.0 * std::f64::consts::PI)
    }

    pub fn f_b(&self) -> f64 {
        self.omega_b / (2.0 * std::f64::consts::PI)
    }

    pub fn with_f_b(mut self, f_b: f64) -> Self {
        self.omega_b = 2.0 * std::f64::consts::PI * f_b;
        self
    }

    pub fn with_offset(mut self, delta_s0: f64) -> Self {
        let mid_shift = delta_s0 - self.delta_s0;
        self.z_a0 += mid_shift;
        self.z_b0 += mid_shift;
        self.delta_s0 = delta_s0;
        self
    }

    pub fn n_rows(&self) -> usize {
        if self.null_higher_orders {
            8
        } else {
            4
        }
    }

    pub fn validate(&self, basis: &ElectrodeBasis) -> Result<()> {
        if self.z_a0 == self.z_b0 {
            return Err(Error::Config("target minima must differ".into()));
        }
        if !(self.omega_a > 0.0 && self.omega_b > 0.0) {
            return Err(Error::Config("target frequencies must be positive".into()));
        }
        let (lo, hi) = basis.domain();
        for z in [self.z_a0, self.z_b0] {
            if !(z > lo && z < hi) {
                return Err(Error::Domain { z, lo, hi });
            }
        }
        Ok(())
    }
}

/// Balanced constraint system A V = t.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    /// Rows multiplied by `row_scales`.
    pub matrix: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// Factor applied to each SI row (Rᵐ for derivative order m).
    pub row_scales: Vec<f64>,
    pub row_labels: Vec<String>,
}

impl ConstraintSystem {
    /// Unscaled (SI) matrix row `r`.
    pub fn si_row(&self, r: usize) -> Vec<f64> {
        self.matrix.row(r).iter().map(|v| v / self.row_scales[r]).collect()
    }

    pub fn si_target(&self, r: usize) -> f64 {
        self.targets[r] / self.row_scales[r]
    }
}

pub fn assemble_constraints(spec: &DoubleWellSpec, basis: &ElectrodeBasis) -> Result<ConstraintSystem> {
    spec.validate(basis)?;
    let rows = spec.n_rows();
    let n = basis.n_electrodes();
    if rows > n {
        return Err(Error::InfeasibleSpec { rows, electrodes: n });
    }
    let r = basis.geometry().inner_radius;
    let da = basis.derivatives_all(spec.z_a0)?;
    let db = basis.derivatives_all(spec.z_b0)?;
    let curv_a = spec.species_a.curvature_for(spec.omega_a);
    let curv_b = spec.species_b.curvature_for(spec.omega_b);
    let mut layout: Vec<(usize, bool, f64, String)> = vec![
        (1, true, 0.0, "d1(z_a)".into()),
        (1, false, 0.0, "d1(z_b)".into()),
        (2, true, curv_a, "d2(z_a)".into()),
        (2, false, curv_b, "d2(z_b)".into()),
    ];
    if spec.null_higher_orders {
        layout.extend([
            (3, true, 0.0, "d3(z_a)".into()),
            (3, false, 0.0, "d3(z_b)".into()),
            (4, true, 0.0, "d4(z_a)".into()),
            (4, false, 0.0, "d4(z_b)".into()),
        ]);
    }
    let mut matrix = DMatrix::zeros(rows, n);
    let mut targets = DVector::zeros(rows);
    let mut row_scales = Vec::with_capacity(rows);
    let mut row_labels = Vec::with_capacity(rows);
    for (i, (order, at_a, target, label)) in layout.into_iter().enumerate() {
        let scale = r.powi(order as i32);
        let d = if at_a { &da } else { &db };
        for e in 0..n {
            matrix[(i, e)] = d[e][order] * scale;
        }
        targets[i] = target * scale;
        row_scales.push(scale);
        row_labels.push(label);
    }
    Ok(ConstraintSystem {
        matrix,
        targets,
        row_scales,
        row_labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoltageSet {
    pub voltages: Vec<f64>,
    /// Largest SI violation over all rows.
    pub residual: f64,
    /// Largest relative violation, |row residual| / (|row|·|V| + |target|).
    pub relative_residual: f64,
    /// Euclidean norm (V).
    pub norm: f64,
    pub warnings: Vec<String>,
}

impl VoltageSet {
    pub fn max_abs(&self) -> f64 {
        self.voltages.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Minimum-norm exact solution through the SVD pseudoinverse.
pub fn solve_min_norm(system: &ConstraintSystem) -> Result<VoltageSet> {
    let a = &system.matrix;
    let (rows, cols) = a.shape();
    if rows > cols {
        return Err(Error::InfeasibleSpec { rows, electrodes: cols });
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma = &svd.singular_values;
    let s_max = sigma.max();
    let (i_min, s_min) = sigma.argmin();
    let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
    if ratio < RANK_TOLERANCE {
        let combination = u.column(i_min).iter().copied().collect();
        return Err(Error::RankDeficient { ratio, combination });
    }
    let ut_t = u.transpose() * &system.targets;
    let mut x = DVector::zeros(cols);
    for k in 0..sigma.len() {
        x += v_t.row(k).transpose() * (ut_t[k] / sigma[k]);
    }
    let ax = a * &x;
    let mut residual: f64 = 0.0;
    let mut relative_residual: f64 = 0.0;
    for r in 0..rows {
        let violation = (ax[r] - system.targets[r]).abs();
        let magnitude = a.row(r).norm() * x.norm() + system.targets[r].abs();
        residual = residual.max(violation / system.row_scales[r]);
        if magnitude > 0.0 {
            relative_residual = relative_residual.max(violation / magnitude);
        }
    }
    let voltages: Vec<f64> = x.iter().copied().collect();
    let warnings = voltages
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > VOLTAGE_WARNING_LIMIT)
        .map(|(i, v)| format!("electrode {} at {v:.3} V exceeds {VOLTAGE_WARNING_LIMIT} V", i + 1))
        .collect();
    Ok(VoltageSet {
        norm: x.norm(),
        voltages,
        residual,
        relative_residual,
        warnings,
    })
}

pub fn compose(voltages: &VoltageSet, basis: &Arc<ElectrodeBasis>) -> Result<ComposedPotential> {
    ComposedPotential::new(Arc::clone(basis), voltages.voltages.clone())
}

/// Assemble, solve and compose in one step.
pub fn solve_spec(spec: &DoubleWellSpec, basis: &Arc<ElectrodeBasis>) -> Result<(VoltageSet, ComposedPotential)> {
    let system = assemble_constraints(spec, basis)?;
    let v = solve_min_norm(&system)?;
    let p = compose(&v, basis)?;
    Ok((v, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// One particle's well in a composed potential.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WellInfo {
    pub z_min: f64,
    /// Small-oscillation frequency from the curvature (Hz).
    pub f_local: f64,
    /// Potential energy q Φ at the minimum (J).
    pub energy_min: f64,
    /// Barrier height over the minimum on the escape side (K).
    pub depth: f64,
    pub escape_side: Side,
    /// Positions of the barrier maxima (or domain ends) on either side.
    pub barrier_left: f64,
    pub barrier_right: f64,
    /// Interval where the potential energy lies below the escape barrier.
    pub trapping_region: (f64, f64),
    /// Largest energy cooled below threshold by harmonic coupling (K),
    /// filled in by the protocols module.
    pub harmonic_boundary: Option<f64>,
    pub harmonic_region: Option<(f64, f64)>,
}

impl WellInfo {
    pub fn depth_joule(&self) -> f64 {
        self.depth * K_B
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WellCharacterization {
    pub a: WellInfo,
    pub b: WellInfo,
}

fn field_scale(potential: &dyn AxialPotential, z: f64, radius: f64) -> f64 {
    let l = potential.local(z);
    l.slope.abs().max(l.curvature.abs() * radius).max(1e-300)
}

/// Root of g on [lo, hi] where g(lo) and g(hi) have opposite signs;
/// bisection guarded Newton with g' supplied.
fn bracketed_root(mut lo: f64, mut hi: f64, tol_g: f64, g: impl Fn(f64) -> (f64, f64)) -> f64 {
    let (glo, _) = g(lo);
    let (ghi, _) = g(hi);
    if glo == 0.0 {
        return lo;
    }
    if ghi == 0.0 {
        return hi;
    }
    let increasing = glo < ghi;
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (gz, dg) = g(z);
        if gz.abs() <= tol_g {
            return z;
        }
        if (gz < 0.0) == increasing {
            lo = z;
        } else {
            hi = z;
        }
        let newton = z - gz / dg;
        z = if dg != 0.0 && newton > lo.min(hi) && newton < lo.max(hi) {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo).abs() < 1e-16 {
            break;
        }
    }
    z
}

const SCAN_STEP: f64 = 1e-6;

fn scan_diagnostics(potential: &dyn AxialPotential, charge: f64, around: f64) -> Vec<(f64, f64)> {
    let (dlo, dhi) = potential.domain();
    (-50..=50)
        .map(|i| around + i as f64 * 10e-6)
        .filter(|z| *z >= dlo && *z <= dhi)
        .map(|z| (z, charge * potential.local(z).value / K_B))
        .collect()
}

/// Locates the potential-energy minimum of `species` closest to `guess`.
pub fn locate_minimum(potential: &dyn AxialPotential, species: &Species, guess: f64, radius: f64) -> Result<f64> {
    let q = species.charge;
    let du = |z: f64| {
        let l = potential.local(z);
        (q * l.slope, q * l.curvature)
    };
    let (dlo, dhi) = potential.domain();
    let fail = |message: String| Error::Characterization {
        message,
        scan: scan_diagnostics(potential, q, guess),
    };
    // walk downhill until the slope changes sign
    let (g0, _) = du(guess);
    let dir = if g0 > 0.0 { -1.0 } else { 1.0 };
    let mut step = 1e-7;
    let mut a = guess;
    let mut b = guess + dir * step;
    loop {
        if b < dlo || b > dhi || (b - guess).abs() > 300e-6 {
            return Err(fail(format!("no potential minimum within 300 µm of {guess:e} m")));
        }
        let (gb, _) = du(b);
        if (gb > 0.0) == (dir > 0.0) || gb == 0.0 {
            break;
        }
        a = b;
        step *= 1.6;
        b += dir * step;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if du(lo).0 >= 0.0 && du(hi).0 <= 0.0 {
        return Err(fail("bracket does not contain a minimum".into()));
    }
    let tol = 1e-12 * field_scale(potential, guess, radius) * q.abs();
    let z = bracketed_root(lo, hi, tol, du);
    if du(z).1 <= 0.0 {
        return Err(fail(format!("stationary point at {z:e} m is not a minimum")));
    }
    Ok(z)
}

/// Walks from the minimum toward `dir` until the potential energy stops
/// rising; returns (position, energy) of the barrier or the domain end.
fn find_barrier(potential: &dyn AxialPotential, q: f64, z_min: f64, dir: f64, radius: f64) -> (f64, f64) {
    let (dlo, dhi) = potential.domain();
    let edge = if dir > 0.0 { dhi } else { dlo };
    let du = |z: f64| {
        let l = potential.local(z);
        (q * l.slope, q * l.curvature)
    };
    let mut prev = z_min;
    let mut z = z_min + dir * SCAN_STEP;
    while (edge - z) * dir > 0.0 {
        // rising means dU/dz has the sign of dir
        if du(z).0 * dir <= 0.0 {
            let (lo, hi) = if prev < z { (prev, z) } else { (z, prev) };
            let tol = 1e-12 * field_scale(potential, z, radius) * q.abs();
            let zb = bracketed_root(lo, hi, tol, du);
            return (zb, q * potential.local(zb).value);
        }
        prev = z;
        z += dir * SCAN_STEP;
    }
    (edge, q * potential.local(edge).value)
}

/// Where the potential energy first reaches `level` between `z_min` and
/// `z_end`.
fn crossing(potential: &dyn AxialPotential, q: f64, z_min: f64, z_end: f64, level: f64) -> f64 {
    let u = |z: f64| q * potential.local(z).value - level;
    if u(z_end) <= 0.0 {
        return z_end;
    }
    let (mut inside, mut outside) = (z_min, z_end);
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if u(mid) < 0.0 {
            inside = mid;
        } else {
            outside = mid;
        }
        if (outside - inside).abs() < 1e-13 {
            break;
        }
    }
    0.5 * (inside + outside)
}

pub fn characterize_well(
    potential: &dyn AxialPotential,
    species: &Species,
    guess: f64,
    radius: f64,
) -> Result<WellInfo> {
    let q = species.charge;
    let z_min = locate_minimum(potential, species, guess, radius)?;
    let l = potential.local(z_min);
    let f_local = species.omega_for(l.curvature).ok_or_else(|| Error::Characterization {
        message: "curvature does not confine the particle".into(),
        scan: scan_diagnostics(potential, q, z_min),
    })? / (2.0 * std::f64::consts::PI);
    let u_min = q * l.value;
    let (zl, ul) = find_barrier(potential, q, z_min, -1.0, radius);
    let (zr, ur) = find_barrier(potential, q, z_min, 1.0, radius);
    let (barrier, escape_side) = if ul - u_min <= ur - u_min {
        (ul - u_min, Side::Left)
    } else {
        (ur - u_min, Side::Right)
    };
    if barrier <= 0.0 {
        return Err(Error::Characterization {
            message: "no confining barrier around the minimum".into(),
            scan: scan_diagnostics(potential, q, z_min),
        });
    }
    let level = u_min + barrier;
    let trapping_region = (
        crossing(potential, q, z_min, zl, level),
        crossing(potential, q, z_min, zr, level),
    );
    Ok(WellInfo {
        z_min,
        f_local,
        energy_min: u_min,
        depth: barrier / K_B,
        escape_side,
        barrier_left: zl,
        barrier_right: zr,
        trapping_region,
        harmonic_boundary: None,
        harmonic_region: None,
    })
}

impl WellInfo {
    /// Records a harmonic boundary (K) and derives the matching z-interval.
    pub fn set_harmonic_boundary(&mut self, potential: &dyn AxialPotential, species: &Species, e_max: f64) {
        let level = self.energy_min + e_max.min(self.depth) * K_B;
        let q = species.charge;
        self.harmonic_boundary = Some(e_max);
        self.harmonic_region = Some((
            crossing(potential, q, self.z_min, self.barrier_left, level),
            crossing(potential, q, self.z_min, self.barrier_right, level),
        ));
    }
}

/// Finds both minima, their local frequencies, depths and trapping regions.
pub fn characterize(
    potential: &dyn AxialPotential,
    spec: &DoubleWellSpec,
    radius: f64,
) -> Result<WellCharacterization> {
    Ok(WellCharacterization {
        a: characterize_well(potential, &spec.species_a, spec.z_a0, radius)?,
        b: characterize_well(potential, &spec.species_b, spec.z_b0, radius)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetScan {
    pub best_offset: f64,
    pub best_value: Option<f64>,
    /// (Δs₀, objective) per grid point; `None` where evaluation failed.
    pub table: Vec<(f64, Option<f64>)>,
}

/// Offset grid from -max to +max in steps of `step`.
pub fn offset_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

/// Scans Δs₀ and keeps the value maximizing `objective` (typically
/// the harmonic-boundary energy). Ties and the absence of any
/// improvement over Δs₀ = 0 resolve to 0.
pub fn optimize_offset<F>(spec: &DoubleWellSpec, offsets: &[f64], objective: F) -> OffsetScan
where
    F: Fn(&DoubleWellSpec) -> Result<f64> + Sync,
{
    let table: Vec<(f64, Option<f64>)> = offsets
        .par_iter()
        .map(|&d| (d, objective(&spec.with_offset(d)).ok()))
        .collect();
    best_of(table)
}

fn best_of(table: Vec<(f64, Option<f64>)>) -> OffsetScan {
    let at_zero = table.iter().find(|(d, _)| *d == 0.0).and_then(|(_, v)| *v);
    let mut best_offset: f64 = 0.0;
    let mut best_value = at_zero;
    for &(d, v) in &table {
        if let Some(v) = v {
            let better = match best_value {
                None => true,
                Some(b) => v > b || (v == b && d.abs() < best_offset.abs()),
            };
            if better {
                best_offset = d;
                best_value = Some(v);
            }
        }
    }
    OffsetScan {
        best_offset,
        best_value,
        table,
    }
}

/// Coarse-to-fine variant of [`optimize_offset`]. `levels` holds
/// (half-width, step) pairs: the first is a grid around zero, each later
/// one is laid around the `keep` best points found so far. Offsets stay
/// within ±`limit`.
pub fn refine_offset<F>(
    spec: &DoubleWellSpec,
    levels: &[(f64, f64)],
    keep: usize,
    limit: f64,
    objective: F,
) -> OffsetScan
where
    F: Fn(&DoubleWellSpec) -> Result<f64> + Sync,
{
    let key = |d: f64| (d * 1e9).round() as i64;
    let mut table: Vec<(f64, Option<f64>)> = Vec::new();
    for (level, &(half, step)) in levels.iter().enumerate() {
        let centers: Vec<f64> = if level == 0 {
            vec![0.0]
        } else {
            let mut ranked: Vec<(f64, f64)> = table.iter().filter_map(|&(d, v)| v.map(|v| (d, v))).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.abs().total_cmp(&b.0.abs())));
            ranked.iter().take(keep.max(1)).map(|r| r.0).collect()
        };
        let mut fresh: Vec<f64> = Vec::new();
        for c in centers {
            for g in offset_grid(half, step) {
                let d = ((c + g) * 1e9).round() / 1e9;
                if d.abs() <= limit * (1.0 + 1e-12)
                    && !table.iter().any(|p| key(p.0) == key(d))
                    && !fresh.iter().any(|&p| key(p) == key(d))
                {
                    fresh.push(d);
                }
            }
        }
        table.extend(optimize_offset(spec, &fresh, &objective).table);
    }
    table.sort_by(|a, b| a.0.total_cmp(&b.0));
    best_of(table)
}

/// Writes `z,phi,dphi,d2phi` rows on `n` points spanning [lo, hi].
pub fn write_potential_report<W: Write>(
    writer: W,
    potential: &ComposedPotential,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["z_m", "phi_V", "dphi_V_per_m", "d2phi_V_per_m2"])?;
    for i in 0..n {
        let z = lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64;
        let d = potential.derivatives(z)?;
        w.write_record([z, d[0], d[1], d[2]].iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
