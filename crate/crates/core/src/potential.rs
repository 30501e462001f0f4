//! Axial potentials seen by the particles.
//!
//! [`AxialPotential`] is a static Φ(z); [`AxialField`] may also depend on
//! time. Every static potential is a field through a blanket impl, so the
//! integrators only deal with fields.

use std::sync::Arc;

use crate::electrode::{ElectrodeBasis, MAX_ORDER};
use crate::error::{Error, Result};
use crate::numerics::HermiteTable;

pub use crate::numerics::Local;

/// Static on-axis electric potential Φ(z) in volts.
pub trait AxialPotential: Sync {
    fn local(&self, z: f64) -> Local;

    fn slope(&self, z: f64) -> f64 {
        self.local(z).slope
    }

    /// Interval on which the potential is defined.
    fn domain(&self) -> (f64, f64);
}

/// Possibly time-dependent potential Φ(z, t).
pub trait AxialField: Sync {
    fn local_at(&self, z: f64, t: f64) -> Local;

    fn slope_at(&self, z: f64, t: f64) -> f64 {
        self.local_at(z, t).slope
    }

    fn field_domain(&self) -> (f64, f64);
}

impl<T: AxialPotential + ?Sized> AxialField for T {
    #[inline]
    fn local_at(&self, z: f64, _t: f64) -> Local {
        self.local(z)
    }

    #[inline]
    fn slope_at(&self, z: f64, _t: f64) -> f64 {
        self.slope(z)
    }

    fn field_domain(&self) -> (f64, f64) {
        self.domain()
    }
}

/// A field frozen at one instant.
pub struct Frozen<'a, F: AxialField + ?Sized> {
    pub field: &'a F,
    pub t: f64,
}

impl<F: AxialField + ?Sized> AxialPotential for Frozen<'_, F> {
    fn local(&self, z: f64) -> Local {
        self.field.local_at(z, self.t)
    }

    fn slope(&self, z: f64) -> f64 {
        self.field.slope_at(z, self.t)
    }

    fn domain(&self) -> (f64, f64) {
        self.field.field_domain()
    }
}

/// Φ(z) = Σ Vᵢ φᵢ(z), evaluated exactly from the basis.
#[derive(Debug, Clone)]
pub struct ComposedPotential {
    basis: Arc<ElectrodeBasis>,
    voltages: Vec<f64>,
}

impl ComposedPotential {
    pub fn new(basis: Arc<ElectrodeBasis>, voltages: Vec<f64>) -> Result<Self> {
        if voltages.len() != basis.n_electrodes() {
            return Err(Error::Config(format!(
                "{} voltages given for {} electrodes",
                voltages.len(),
                basis.n_electrodes()
            )));
        }
        Ok(Self { basis, voltages })
    }

    pub fn basis(&self) -> &Arc<ElectrodeBasis> {
        &self.basis
    }

    pub fn voltages(&self) -> &[f64] {
        &self.voltages
    }

    /// Φ and its derivatives up to 4th order at z.
    pub fn derivatives(&self, z: f64) -> Result<[f64; MAX_ORDER + 1]> {
        let per = self.basis.derivatives_all(z)?;
        let mut out = [0.0; MAX_ORDER + 1];
        for (v, d) in self.voltages.iter().zip(&per) {
            for (o, x) in out.iter_mut().zip(d) {
                *o += v * x;
            }
        }
        Ok(out)
    }

    /// Same potential with every voltage multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            basis: Arc::clone(&self.basis),
            voltages: self.voltages.iter().map(|v| v * factor).collect(),
        }
    }

    /// Potential with voltages `self + offsets`.
    pub fn offset(&self, offsets: &[f64]) -> Self {
        Self {
            basis: Arc::clone(&self.basis),
            voltages: self.voltages.iter().zip(offsets).map(|(v, d)| v + d).collect(),
        }
    }

    fn clamp(&self, z: f64) -> f64 {
        let (lo, hi) = self.basis.domain();
        z.clamp(lo, hi)
    }
}

impl AxialPotential for ComposedPotential {
    fn local(&self, z: f64) -> Local {
        let d = self
            .derivatives(self.clamp(z))
            .expect("clamped coordinate lies in the basis domain");
        Local {
            value: d[0],
            slope: d[1],
            curvature: d[2],
        }
    }

    fn domain(&self) -> (f64, f64) {
        self.basis.domain()
    }
}

/// Quintic Hermite table of a potential; cheap to evaluate inside the
/// integrators. Outside the table the nearest end cell is extrapolated.
#[derive(Debug, Clone)]
pub struct TabulatedPotential {
    table: HermiteTable,
}

/// Default table spacing (m).
pub const DEFAULT_TABLE_SPACING: f64 = 1e-6;

impl TabulatedPotential {
    pub fn from_table(table: HermiteTable) -> Self {
        Self { table }
    }

    pub fn from_composed(p: &ComposedPotential, lo: f64, hi: f64, h: f64) -> Result<Self> {
        BasisTables::build(p.basis(), lo, hi, h).map(|t| t.combine(p.voltages()))
    }

    pub fn table(&self) -> &HermiteTable {
        &self.table
    }
}

impl AxialPotential for TabulatedPotential {
    #[inline]
    fn local(&self, z: f64) -> Local {
        self.table.eval(z)
    }

    #[inline]
    fn slope(&self, z: f64) -> f64 {
        self.table.slope(z)
    }

    fn domain(&self) -> (f64, f64) {
        self.table.domain()
    }
}

/// Per-electrode Hermite tables on a common grid; any voltage set is a
/// linear combination of them.
#[derive(Debug, Clone)]
pub struct BasisTables {
    tables: Vec<HermiteTable>,
}

impl BasisTables {
    pub fn build(basis: &ElectrodeBasis, lo: f64, hi: f64, h: f64) -> Result<Self> {
        let (dlo, dhi) = basis.domain();
        let lo = lo.max(dlo);
        let n = ((hi.min(dhi) - lo) / h).floor() as usize + 1;
        if n < 2 {
            return Err(Error::Config("table range must span at least one cell".into()));
        }
        let ne = basis.n_electrodes();
        let mut nodes = vec![Vec::with_capacity(n); ne];
        for i in 0..n {
            let z = lo + i as f64 * h;
            for (e, d) in basis.derivatives_all(z)?.into_iter().enumerate() {
                nodes[e].push([d[0], d[1], d[2]]);
            }
        }
        Ok(Self {
            tables: nodes.into_iter().map(|n| HermiteTable::new(lo, h, n)).collect(),
        })
    }

    pub fn n_electrodes(&self) -> usize {
        self.tables.len()
    }

    /// Table of Σ Vᵢ φᵢ.
    pub fn combine_table(&self, voltages: &[f64]) -> HermiteTable {
        let first = &self.tables[0];
        let (lo, _) = first.domain();
        let n = first.nodes().len();
        let mut nodes = vec![[0.0; 3]; n];
        for (t, &v) in self.tables.iter().zip(voltages) {
            if v == 0.0 {
                continue;
            }
            for (dst, src) in nodes.iter_mut().zip(t.nodes()) {
                dst[0] += v * src[0];
                dst[1] += v * src[1];
                dst[2] += v * src[2];
            }
        }
        HermiteTable::new(lo, first.spacing(), nodes)
    }

    pub fn combine(&self, voltages: &[f64]) -> TabulatedPotential {
        TabulatedPotential::from_table(self.combine_table(voltages))
    }
}

/// Exactly harmonic well Φ = ½ κ (z − c)², defined on c ± half_width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicWell {
    pub center: f64,
    /// V/m²; its sign must match the charge it confines.
    pub curvature: f64,
    pub half_width: f64,
}

impl AxialPotential for HarmonicWell {
    #[inline]
    fn local(&self, z: f64) -> Local {
        let d = z - self.center;
        Local {
            value: 0.5 * self.curvature * d * d,
            slope: self.curvature * d,
            curvature: self.curvature,
        }
    }

    #[inline]
    fn slope(&self, z: f64) -> f64 {
        self.curvature * (z - self.center)
    }

    fn domain(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }
}
