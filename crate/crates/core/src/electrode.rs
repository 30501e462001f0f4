//! Per-electrode on-axis basis potentials φᵢ(z).
//!
//! Two sources are supported. The analytic surrogate solves Laplace's
//! equation inside an ideal grounded cylinder of radius R whose wall is held
//! at 1 V on one electrode, 0 V on the others, with linear ramps across the
//! gaps. The domain [-L, L] is closed by grounded end planes, so the on-axis
//! potential is a sine series
//!
//! ```text
//! φ(z) = Σₙ bₙ sin(kₙ (z + L)) / I₀(kₙ R),   kₙ = nπ / 2L,
//! ```
//!
//! with bₙ the sine coefficients of the trapezoidal wall profile. Every term
//! is analytic, so derivatives are summed term by term.
//!
//! The import path takes tabulated φᵢ and φᵢ′ (for example from a finite
//! element model) and fits a C⁴ quintic spline per electrode.

use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{inv_bessel_i0, QuinticSpline};

/// Highest derivative order provided by a basis.
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapGeometry {
    pub n_electrodes: usize,
    /// m
    pub electrode_width: f64,
    /// m
    pub gap: f64,
    /// m
    pub inner_radius: f64,
    /// Half-length of the simulation domain (m); the ends are grounded.
    pub axial_extent: f64,
}

impl Default for TrapGeometry {
    fn default() -> Self {
        let mut g = Self {
            n_electrodes: 9,
            electrode_width: 200e-6,
            gap: 50e-6,
            inner_radius: 400e-6,
            axial_extent: 0.0,
        };
        g.axial_extent = g.stack_half_length() + 2e-3;
        g
    }
}

impl TrapGeometry {
    /// Geometry with the grounded domain ends placed 2 mm beyond the stack.
    pub fn with_electrodes(n_electrodes: usize, electrode_width: f64, gap: f64, inner_radius: f64) -> Self {
        let mut g = Self {
            n_electrodes,
            electrode_width,
            gap,
            inner_radius,
            axial_extent: 0.0,
        };
        g.axial_extent = g.stack_half_length() + 2e-3;
        g
    }

    pub fn pitch(&self) -> f64 {
        self.electrode_width + self.gap
    }

    pub fn stack_half_length(&self) -> f64 {
        0.5 * (self.n_electrodes as f64 * self.electrode_width
            + (self.n_electrodes.saturating_sub(1)) as f64 * self.gap)
    }

    /// Axial centre of electrode `i` (0-based); the stack is centred at 0.
    pub fn electrode_center(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.n_electrodes as f64 - 1.0)) * self.pitch()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_electrodes < 5 {
            return Err(Error::Config(format!(
                "at least 5 electrodes are required, got {}",
                self.n_electrodes
            )));
        }
        for (name, v) in [
            ("electrode_width", self.electrode_width),
            ("gap", self.gap),
            ("inner_radius", self.inner_radius),
            ("axial_extent", self.axial_extent),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.axial_extent <= self.stack_half_length() + self.gap {
            return Err(Error::Config(format!(
                "axial extent {} m does not enclose the electrode stack (half-length {} m)",
                self.axial_extent,
                self.stack_half_length()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSource {
    AnalyticSurrogate,
    ImportedTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticBasisOptions {
    pub series_terms: usize,
    /// Allowed tail bound for derivative order m, relative to R⁻ᵐ.
    pub tail_tolerance: f64,
}

impl Default for AnalyticBasisOptions {
    fn default() -> Self {
        Self {
            series_terms: 200,
            tail_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
struct SineSeries {
    half_length: f64,
    /// kₙ for n = 1..=N
    k: Vec<f64>,
    /// Per electrode: bₙ / I₀(kₙR) scaled by kₙᵐ for m = 0..=4.
    coeffs: Vec<[Vec<f64>; MAX_ORDER + 1]>,
    /// Certified absolute tail bound per derivative order.
    tail_bounds: [f64; MAX_ORDER + 1],
}

impl SineSeries {
    fn evaluate_into(&self, z: f64, electrodes: &[usize], out: &mut [[f64; MAX_ORDER + 1]]) {
        let theta = PI * (z + self.half_length) / (2.0 * self.half_length);
        let (s1, c1) = theta.sin_cos();
        let n_terms = self.k.len();
        for o in out.iter_mut() {
            *o = [0.0; MAX_ORDER + 1];
        }
        let (mut s, mut c) = (s1, c1);
        for n in 0..n_terms {
            for (slot, &e) in out.iter_mut().zip(electrodes) {
                let a = &self.coeffs[e];
                slot[0] += a[0][n] * s;
                slot[1] += a[1][n] * c;
                slot[2] -= a[2][n] * s;
                slot[3] -= a[3][n] * c;
                slot[4] += a[4][n] * s;
            }
            // rotate by theta: sin((n+1)θ), cos((n+1)θ)
            let s_next = s * c1 + c * s1;
            c = c * c1 - s * s1;
            s = s_next;
        }
    }
}

#[derive(Debug, Clone)]
enum BasisKind {
    Analytic(SineSeries),
    Imported {
        splines: Vec<QuinticSpline>,
        derivative_mismatch: f64,
    },
}

/// Unit-voltage basis potentials for every electrode. Immutable and safe to
/// share between threads.
#[derive(Debug, Clone)]
pub struct ElectrodeBasis {
    geometry: TrapGeometry,
    source: BasisSource,
    domain: (f64, f64),
    kind: BasisKind,
}

fn trapezoid_coefficient(k: f64, half_length: f64, lo: f64, hi: f64, ramp: f64) -> f64 {
    // sine coefficient of a wall potential that rises linearly over
    // [lo - ramp, lo], stays at 1 over [lo, hi] and falls over [hi, hi + ramp]
    ((k * lo).sin() - (k * (lo - ramp)).sin() - (k * (hi + ramp)).sin() + (k * hi).sin()) / (half_length * ramp * k * k)
}

/// Builds the analytic ideal-cylinder surrogate basis.
pub fn build_analytic_basis(geometry: TrapGeometry, options: AnalyticBasisOptions) -> Result<ElectrodeBasis> {
    geometry.validate()?;
    if options.series_terms < 50 {
        return Err(Error::Config(format!(
            "series_terms must be at least 50, got {}",
            options.series_terms
        )));
    }
    let l = geometry.axial_extent;
    let r = geometry.inner_radius;
    let g = geometry.gap;
    let n_terms = options.series_terms;
    let k: Vec<f64> = (1..=n_terms).map(|n| n as f64 * PI / (2.0 * l)).collect();
    let damping: Vec<f64> = k.iter().map(|&kn| inv_bessel_i0(kn * r)).collect();
    let coeffs = (0..geometry.n_electrodes)
        .map(|e| {
            let c = geometry.electrode_center(e) + l;
            let lo = c - 0.5 * geometry.electrode_width;
            let hi = c + 0.5 * geometry.electrode_width;
            let base: Vec<f64> = k
                .iter()
                .zip(&damping)
                .map(|(&kn, &d)| trapezoid_coefficient(kn, l, lo, hi, g) * d)
                .collect();
            std::array::from_fn(|m| base.iter().zip(&k).map(|(b, kn)| b * kn.powi(m as i32)).collect())
        })
        .collect();

    // |bₙ| ≤ 4 / (L g kₙ²); sum the damped tail until it is negligible.
    let mut tail_bounds = [0.0; MAX_ORDER + 1];
    for n in n_terms + 1..n_terms + 100_000 {
        let kn = n as f64 * PI / (2.0 * l);
        let envelope = 4.0 / (l * g * kn * kn) * inv_bessel_i0(kn * r);
        let mut last = 0.0;
        for (m, bound) in tail_bounds.iter_mut().enumerate() {
            let term = envelope * kn.powi(m as i32);
            *bound += term;
            last = term;
        }
        if last <= 1e-18 * tail_bounds[MAX_ORDER] || last == 0.0 {
            break;
        }
    }
    for (m, &bound) in tail_bounds.iter().enumerate() {
        let relative = bound * r.powi(m as i32);
        if relative > options.tail_tolerance {
            return Err(Error::Truncation {
                order: m,
                bound: relative,
                tolerance: options.tail_tolerance,
            });
        }
    }
    Ok(ElectrodeBasis {
        geometry,
        source: BasisSource::AnalyticSurrogate,
        domain: (-l, l),
        kind: BasisKind::Analytic(SineSeries {
            half_length: l,
            k,
            coeffs,
            tail_bounds,
        }),
    })
}

impl ElectrodeBasis {
    /// Analytic surrogate with default geometry and series length.
    pub fn default_analytic() -> Self {
        build_analytic_basis(TrapGeometry::default(), AnalyticBasisOptions::default())
            .expect("default geometry is valid")
    }

    pub fn geometry(&self) -> &TrapGeometry {
        &self.geometry
    }

    pub fn source(&self) -> BasisSource {
        self.source
    }

    pub fn n_electrodes(&self) -> usize {
        match &self.kind {
            BasisKind::Analytic(s) => s.coeffs.len(),
            BasisKind::Imported { splines, .. } => splines.len(),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Certified absolute truncation bounds per derivative order (analytic
    /// source only).
    pub fn tail_bounds(&self) -> Option<[f64; MAX_ORDER + 1]> {
        match &self.kind {
            BasisKind::Analytic(s) => Some(s.tail_bounds),
            BasisKind::Imported { .. } => None,
        }
    }

    /// Largest relative mismatch between the imported spline slope and the
    /// supplied derivative samples (imported source only).
    pub fn derivative_mismatch(&self) -> Option<f64> {
        match &self.kind {
            BasisKind::Imported {
                derivative_mismatch, ..
            } => Some(*derivative_mismatch),
            BasisKind::Analytic(_) => None,
        }
    }

    fn check_domain(&self, z: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        let slack = 1e-12 * (hi - lo);
        if !(z >= lo - slack && z <= hi + slack) {
            return Err(Error::Domain { z, lo, hi });
        }
        Ok(())
    }

    fn check_electrode(&self, electrode: usize) -> Result<()> {
        if electrode >= self.n_electrodes() {
            return Err(Error::Config(format!(
                "electrode index {electrode} out of range (basis has {})",
                self.n_electrodes()
            )));
        }
        Ok(())
    }

    /// Derivative of order `order` (0..=4) of φ_electrode at z.
    pub fn evaluate(&self, electrode: usize, z: f64, order: usize) -> Result<f64> {
        if order > MAX_ORDER {
            return Err(Error::Config(format!("derivative order {order} exceeds {MAX_ORDER}")));
        }
        Ok(self.derivatives(electrode, z)?[order])
    }

    /// φ, φ′, φ″, φ‴, φ⁗ of one electrode at z.
    pub fn derivatives(&self, electrode: usize, z: f64) -> Result<[f64; MAX_ORDER + 1]> {
        self.check_electrode(electrode)?;
        self.check_domain(z)?;
        let mut out = [[0.0; MAX_ORDER + 1]];
        match &self.kind {
            BasisKind::Analytic(s) => s.evaluate_into(z, &[electrode], &mut out),
            BasisKind::Imported { splines, .. } => {
                for (m, o) in out[0].iter_mut().enumerate() {
                    *o = splines[electrode].eval(z, m);
                }
            }
        }
        Ok(out[0])
    }

    /// Derivatives of every electrode at z, indexed `[electrode][order]`.
    pub fn derivatives_all(&self, z: f64) -> Result<Vec<[f64; MAX_ORDER + 1]>> {
        self.check_domain(z)?;
        let n = self.n_electrodes();
        let mut out = vec![[0.0; MAX_ORDER + 1]; n];
        match &self.kind {
            BasisKind::Analytic(s) => {
                let idx: Vec<usize> = (0..n).collect();
                s.evaluate_into(z, &idx, &mut out);
            }
            BasisKind::Imported { splines, .. } => {
                for (o, s) in out.iter_mut().zip(splines) {
                    for (m, v) in o.iter_mut().enumerate() {
                        *v = s.eval(z, m);
                    }
                }
            }
        }
        Ok(out)
    }

    /// The same basis with electrodes reordered: electrode `i` of the result
    /// is electrode `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<ElectrodeBasis> {
        let n = self.n_electrodes();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Config(
                "permutation must list every electrode exactly once".into(),
            ));
        }
        let kind = match &self.kind {
            BasisKind::Analytic(s) => BasisKind::Analytic(SineSeries {
                coeffs: order.iter().map(|&i| s.coeffs[i].clone()).collect(),
                ..s.clone()
            }),
            BasisKind::Imported {
                splines,
                derivative_mismatch,
            } => BasisKind::Imported {
                splines: order.iter().map(|&i| splines[i].clone()).collect(),
                derivative_mismatch: *derivative_mismatch,
            },
        };
        Ok(ElectrodeBasis { kind, ..self.clone() })
    }
}

/// Tabulated basis samples on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    pub z: Vec<f64>,
    /// `phi[electrode][row]`
    pub phi: Vec<Vec<f64>>,
    /// `dphi[electrode][row]`
    pub dphi: Vec<Vec<f64>>,
}

impl BasisTable {
    /// Samples a basis on `n` uniformly spaced points spanning [lo, hi].
    pub fn sample(basis: &ElectrodeBasis, lo: f64, hi: f64, n: usize) -> Result<Self> {
        let h = (hi - lo) / (n - 1) as f64;
        let z: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let ne = basis.n_electrodes();
        let mut phi = vec![Vec::with_capacity(n); ne];
        let mut dphi = vec![Vec::with_capacity(n); ne];
        for &zi in &z {
            for (e, d) in basis.derivatives_all(zi)?.into_iter().enumerate() {
                phi[e].push(d[0]);
                dphi[e].push(d[1]);
            }
        }
        Ok(Self { z, phi, dphi })
    }

    /// Reads `z,phi_1,dphi_1,...,phi_n,dphi_n` CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let find = |name: &str| -> Result<usize> {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingestion {
                row: 0,
                column: name.to_owned(),
                message: "missing column".into(),
            })
        };
        let z_col = find("z")?;
        let n_electrodes = headers.iter().filter(|h| h.starts_with("phi_")).count();
        if n_electrodes == 0 {
            return Err(Error::Ingestion {
                row: 0,
                column: "phi_1".into(),
                message: "missing column".into(),
            });
        }
        let mut cols = Vec::with_capacity(n_electrodes);
        for e in 1..=n_electrodes {
            cols.push((find(&format!("phi_{e}"))?, find(&format!("dphi_{e}"))?));
        }
        let mut table = BasisTable {
            z: Vec::new(),
            phi: vec![Vec::new(); n_electrodes],
            dphi: vec![Vec::new(); n_electrodes],
        };
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let parse = |col: usize| -> Result<f64> {
                let name = headers[col].clone();
                let raw = record.get(col).ok_or_else(|| Error::Ingestion {
                    row,
                    column: name.clone(),
                    message: "missing value".into(),
                })?;
                let v: f64 = raw.parse().map_err(|_| Error::Ingestion {
                    row,
                    column: name.clone(),
                    message: format!("cannot parse '{raw}' as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion {
                        row,
                        column: name,
                        message: "non-finite value".into(),
                    });
                }
                Ok(v)
            };
            table.z.push(parse(z_col)?);
            for (e, &(pc, dc)) in cols.iter().enumerate() {
                table.phi[e].push(parse(pc)?);
                table.dphi[e].push(parse(dc)?);
            }
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["z".to_owned()];
        for e in 1..=self.phi.len() {
            header.push(format!("phi_{e}"));
            header.push(format!("dphi_{e}"));
        }
        w.write_record(&header)?;
        for (i, z) in self.z.iter().enumerate() {
            let mut rec = vec![format!("{z:e}")];
            for (p, d) in self.phi.iter().zip(&self.dphi) {
                rec.push(format!("{:e}", p[i]));
                rec.push(format!("{:e}", d[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds a basis from tabulated samples. When `geometry` is given, the
/// grid must resolve every electrode with at least ten samples.
pub fn import_basis(table: &BasisTable, geometry: Option<TrapGeometry>) -> Result<ElectrodeBasis> {
    let n = table.z.len();
    if n < 6 {
        return Err(Error::Ingestion {
            row: n,
            column: "z".into(),
            message: "at least 6 grid points are required".into(),
        });
    }
    for (e, (p, d)) in table.phi.iter().zip(&table.dphi).enumerate() {
        for (col, data) in [(format!("phi_{}", e + 1), p), (format!("dphi_{}", e + 1), d)] {
            if data.len() != n {
                return Err(Error::Ingestion {
                    row: data.len().min(n) + 1,
                    column: col,
                    message: "column length differs from z".into(),
                });
            }
            if let Some(row) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Ingestion {
                    row: row + 1,
                    column: col,
                    message: "non-finite value".into(),
                });
            }
        }
    }
    let z0 = table.z[0];
    let h = (table.z[n - 1] - z0) / (n - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::Ingestion {
            row: 1,
            column: "z".into(),
            message: "grid must be strictly increasing".into(),
        });
    }
    for (i, &z) in table.z.iter().enumerate() {
        if !z.is_finite() || (z - (z0 + i as f64 * h)).abs() > 1e-6 * h {
            return Err(Error::Ingestion {
                row: i + 1,
                column: "z".into(),
                message: format!("grid is not uniform (expected spacing {h:e} m)"),
            });
        }
    }
    let mut geometry = geometry.unwrap_or_else(|| TrapGeometry {
        n_electrodes: table.phi.len(),
        ..TrapGeometry::default()
    });
    if geometry.n_electrodes != table.phi.len() {
        return Err(Error::Ingestion {
            row: 0,
            column: format!("phi_{}", table.phi.len()),
            message: format!(
                "table has {} electrodes, geometry expects {}",
                table.phi.len(),
                geometry.n_electrodes
            ),
        });
    }
    if h > geometry.electrode_width / 10.0 {
        return Err(Error::Ingestion {
            row: 1,
            column: "z".into(),
            message: format!("spacing {h:e} m gives fewer than 10 samples per electrode width"),
        });
    }
    geometry.axial_extent = table.z[n - 1].abs().max(z0.abs());

    let mut derivative_mismatch: f64 = 0.0;
    let mut splines = Vec::with_capacity(table.phi.len());
    for (p, d) in table.phi.iter().zip(&table.dphi) {
        let left = (-25.0 * d[0] + 48.0 * d[1] - 36.0 * d[2] + 16.0 * d[3] - 3.0 * d[4]) / (12.0 * h);
        let right =
            (25.0 * d[n - 1] - 48.0 * d[n - 2] + 36.0 * d[n - 3] - 16.0 * d[n - 4] + 3.0 * d[n - 5]) / (12.0 * h);
        let spline = QuinticSpline::interpolate(z0, h, p, (d[0], d[n - 1]), (left, right))?;
        let scale = d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if scale > 0.0 {
            for (i, &di) in d.iter().enumerate() {
                let zi = z0 + i as f64 * h;
                derivative_mismatch = derivative_mismatch.max((spline.eval(zi, 1) - di).abs() / scale);
            }
        }
        splines.push(spline);
    }
    Ok(ElectrodeBasis {
        geometry,
        source: BasisSource::ImportedTable,
        domain: (z0, table.z[n - 1]),
        kind: BasisKind::Imported {
            splines,
            derivative_mismatch,
        },
    })
}

/// Reads and imports a basis CSV in one step.
pub fn import_basis_csv<R: Read>(reader: R, geometry: Option<TrapGeometry>) -> Result<ElectrodeBasis> {
    import_basis(&BasisTable::read_csv(reader)?, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> ElectrodeBasis {
        ElectrodeBasis::default_analytic()
    }

    #[test]
    fn default_geometry_matches_stack_layout() {
        let g = TrapGeometry::default();
        assert!((g.stack_half_length() - 1.1e-3).abs() < 1e-15);
        assert!((g.axial_extent - 3.1e-3).abs() < 1e-15);
        assert_eq!(g.electrode_center(4), 0.0);
        assert!((g.electrode_center(8) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let g = TrapGeometry {
            n_electrodes: 4,
            ..TrapGeometry::default()
        };
        assert!(matches!(g.validate(), Err(Error::Config(_))));
        let g = TrapGeometry {
            gap: -1.0,
            ..TrapGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn too_few_series_terms_is_config_error() {
        let opts = AnalyticBasisOptions {
            series_terms: 20,
            ..Default::default()
        };
        assert!(matches!(
            build_analytic_basis(TrapGeometry::default(), opts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tight_tolerance_reports_truncation_bound() {
        let opts = AnalyticBasisOptions {
            series_terms: 50,
            tail_tolerance: 1e-14,
        };
        match build_analytic_basis(TrapGeometry::default(), opts) {
            Err(Error::Truncation { bound, tolerance, .. }) => assert!(bound > tolerance),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn center_electrode_value_is_partial_penetration() {
        let b = basis();
        let v = b.evaluate(4, 0.0, 0).unwrap();
        assert!(v > 0.3 && v < 0.9, "phi_center(0) = {v}");
        let dense = build_analytic_basis(
            TrapGeometry::default(),
            AnalyticBasisOptions {
                series_terms: 2000,
                tail_tolerance: 1e-9,
            },
        )
        .unwrap();
        let reference = dense.evaluate(4, 0.0, 0).unwrap();
        assert!((v - reference).abs() < 1e-12, "{v} vs {reference}");
    }

    #[test]
    fn odd_derivative_vanishes_at_symmetry_point() {
        let b = basis();
        let d1 = b.evaluate(4, 0.0, 1).unwrap();
        let d3 = b.evaluate(4, 0.0, 3).unwrap();
        assert!(d1.abs() < 1e-9 * b.evaluate(4, 250e-6, 1).unwrap().abs());
        assert!(d3.abs() < 1e-9 * b.evaluate(4, 250e-6, 3).unwrap().abs());
    }

    #[test]
    fn potential_decays_toward_grounded_ends() {
        let b = basis();
        let peak = b.evaluate(8, b.geometry().electrode_center(8), 0).unwrap();
        let far = b.evaluate(0, 2.9e-3, 0).unwrap();
        assert!(far.abs() < 1e-3 * peak);
        assert!(b.evaluate(4, 3.1e-3, 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sum_of_all_electrodes_is_near_one_inside() {
        let b = basis();
        for z in [-3e-4, 0.0, 2e-4, 4e-4] {
            let s: f64 = b.derivatives_all(z).unwrap().iter().map(|d| d[0]).sum();
            // the wall ramps beyond the outer electrodes leak a few percent
            assert!((s - 1.0).abs() < 2e-2, "sum at {z} = {s}");
        }
    }

    #[test]
    fn mirror_electrodes_are_reflections() {
        let b = basis();
        let n = b.n_electrodes();
        for i in 0..n {
            for z in [-7e-4, -1e-4, 3.3e-4, 1.2e-3] {
                let a = b.derivatives(i, z).unwrap();
                let m = b.derivatives(n - 1 - i, -z).unwrap();
                for order in 0..=MAX_ORDER {
                    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                    let scale = a[order].abs().max(1e-9 * 400e-6_f64.powi(-(order as i32)));
                    assert!((a[order] - sign * m[order]).abs() < 1e-9 * scale);
                }
            }
        }
    }

    #[test]
    fn first_derivative_matches_central_difference() {
        let b = basis();
        let h = 1e-8;
        for z in [-6e-4, 1.7e-4, 9e-4] {
            let fd = (b.evaluate(3, z + h, 0).unwrap() - b.evaluate(3, z - h, 0).unwrap()) / (2.0 * h);
            let d = b.evaluate(3, z, 1).unwrap();
            assert!((fd - d).abs() < 1e-6 * d.abs(), "{fd} vs {d}");
        }
    }

    #[test]
    fn out_of_domain_is_reported() {
        let b = basis();
        assert!(matches!(b.evaluate(0, 4e-3, 0), Err(Error::Domain { .. })));
        assert!(matches!(b.evaluate(0, 0.0, 5), Err(Error::Config(_))));
        assert!(b.evaluate(9, 0.0, 0).is_err());
    }

    #[test]
    fn permutation_reorders_electrodes() {
        let b = basis();
        let order: Vec<usize> = (0..9).rev().collect();
        let p = b.permuted(&order).unwrap();
        assert_eq!(p.evaluate(0, 1e-4, 2).unwrap(), b.evaluate(8, 1e-4, 2).unwrap());
        assert!(b.permuted(&[0, 0, 1, 2, 3, 4, 5, 6, 7]).is_err());
    }

    #[test]
    fn constant_column_has_zero_derivatives() {
        let n = 101;
        let z: Vec<f64> = (0..n).map(|i| -1e-3 + i as f64 * 2e-5).collect();
        let table = BasisTable {
            phi: vec![vec![1.0; n]; 5],
            dphi: vec![vec![0.0; n]; 5],
            z,
        };
        let b = import_basis(&table, None).unwrap();
        let d = b.derivatives(2, 3.3e-4).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        // roundoff in the spline coefficients is amplified by h^-m
        for (m, v) in d.iter().enumerate().skip(1) {
            assert!(v.abs() * 2e-5_f64.powi(m as i32) < 1e-10, "{d:?}");
        }
    }

    #[test]
    fn nan_entry_is_ingestion_error() {
        let csv = "z,phi_1,dphi_1\n0.0,0.1,0.0\n1e-5,NaN,0.0\n2e-5,0.1,0.0\n";
        match BasisTable::read_csv(csv.as_bytes()) {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "phi_1");
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "z,phi_1\n0.0,0.1\n";
        match BasisTable::read_csv(csv.as_bytes()) {
            Err(Error::Ingestion { column, .. }) => assert_eq!(column, "dphi_1"),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn non_uniform_grid_is_rejected() {
        let mut z: Vec<f64> = (0..20).map(|i| i as f64 * 1e-5).collect();
        z[7] += 3e-6;
        let table = BasisTable {
            phi: vec![vec![0.0; 20]; 5],
            dphi: vec![vec![0.0; 20]; 5],
            z,
        };
        match import_basis(&table, None) {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!(row, 8);
                assert_eq!(column, "z");
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }
}
