//! Cooling protocols: static harmonic coupling, the harmonic boundary, the
//! ⁹Be⁺ frequency sweep and the staged ground-state plan.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::constants::{Species, SpeciesLabel, HBAR, K_B};
use crate::dynamics::{
    exchange_time, CouplingAnalytics, EnergyReference, IntegratorConfig, TraceRow, TrajectoryState, TwoBody, Verlet,
};
use crate::electrode::ElectrodeBasis;
use crate::error::{Error, Result};
use crate::numerics::HermiteTable;
use crate::potential::{AxialField, BasisTables, ComposedPotential, Local, TabulatedPotential, DEFAULT_TABLE_SPACING};
use crate::solver::{characterize, solve_spec, DoubleWellSpec, VoltageSet, WellCharacterization};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Per-electrode tables over the whole basis domain at the default spacing.
pub fn default_tables(basis: &ElectrodeBasis) -> Result<BasisTables> {
    let (lo, hi) = basis.domain();
    BasisTables::build(basis, lo, hi, DEFAULT_TABLE_SPACING)
}

/// A solved, characterized static double well ready for integration.
#[derive(Debug, Clone)]
pub struct CouplingSetup {
    pub spec: DoubleWellSpec,
    pub voltages: VoltageSet,
    pub exact: ComposedPotential,
    pub table: TabulatedPotential,
    pub wells: WellCharacterization,
    pub dt: f64,
}

impl CouplingSetup {
    pub fn new(spec: DoubleWellSpec, basis: &Arc<ElectrodeBasis>, tables: &BasisTables) -> Result<Self> {
        let (voltages, exact) = solve_spec(&spec, basis)?;
        let table = tables.combine(&voltages.voltages);
        let wells = characterize(&exact, &spec, basis.geometry().inner_radius)?;
        let f_max = wells.a.f_local.max(wells.b.f_local);
        Ok(Self {
            dt: IntegratorConfig::for_frequency(f_max, 0.0).dt,
            spec,
            voltages,
            exact,
            table,
            wells,
        })
    }

    /// Two-body system on the tabulated potential, confined to the wells.
    pub fn system(&self) -> TwoBody<'_, TabulatedPotential, TabulatedPotential> {
        TwoBody::new(self.spec.species_a, self.spec.species_b, &self.table, &self.table).with_regions(
            (self.wells.a.barrier_left, self.wells.a.barrier_right),
            (self.wells.b.barrier_left, self.wells.b.barrier_right),
        )
    }

    pub fn reference(&self) -> Result<EnergyReference> {
        self.system().equilibrium(0.0, (self.wells.a.z_min, self.wells.b.z_min))
    }

    /// Exchange time and detuning at the solved local frequencies.
    pub fn analytics(&self) -> CouplingAnalytics {
        CouplingAnalytics::new(
            &self.spec.species_a,
            &self.spec.species_b,
            self.spec.omega_a,
            self.spec.omega_b,
            self.spec.s0(),
        )
    }

    pub fn tau_ex(&self) -> f64 {
        self.analytics().tau_ex
    }
}

/// Zero-point energy ħω/2 of a particle oscillating at `f` Hz.
pub fn ground_state_energy(f: f64) -> f64 {
    0.5 * HBAR * TAU * f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicCouplingRun {
    /// J
    pub e_init: f64,
    /// s; must cover at least one exchange time.
    pub duration: f64,
    /// Oscillation phase of particle a, fraction of a period.
    pub phase_a: f64,
    /// Initial energy of particle b (J).
    pub e_b: f64,
    pub phase_b: f64,
    /// Keep every n-th state in the trace; 0 keeps none.
    pub trace_stride: usize,
}

impl HarmonicCouplingRun {
    /// One exchange time plus a 25% margin, b at rest.
    pub fn over_exchange(setup: &CouplingSetup, e_init: f64) -> Self {
        Self {
            e_init,
            duration: 1.25 * setup.tau_ex(),
            phase_a: 0.0,
            e_b: 0.0,
            phase_b: 0.0,
            trace_stride: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingOutcome {
    /// E_a right after initialization (J).
    pub e_init: f64,
    /// Minimum of E_a over the run (J).
    pub e_fin: f64,
    pub t_min: f64,
    pub transfer_fraction: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Integrates any two-body system from the given initial conditions and
/// tracks the minimum of E_a.
pub fn run_coupling<Fa, Fb>(
    system: &TwoBody<'_, Fa, Fb>,
    reference: &EnergyReference,
    run: &HarmonicCouplingRun,
    dt: f64,
) -> Result<CouplingOutcome>
where
    Fa: AxialField + ?Sized,
    Fb: AxialField + ?Sized,
{
    let state = system.initialize(reference, 0.0, run.e_init, run.e_b, run.phase_a, run.phase_b, dt)?;
    let mut integ = Verlet::new(system, state, dt)?;
    let e0 = integ.energies(reference);
    let mut trace = Vec::new();
    if run.trace_stride > 0 {
        trace.push(TraceRow::new(&integ.state, &e0));
    }
    let n = (run.duration / dt).ceil() as usize;
    let (mut e_fin, mut t_min) = (e0.e_a, 0.0);
    for i in 1..=n {
        integ.advance(1)?;
        let e = integ.energies(reference);
        if e.e_a < e_fin {
            e_fin = e.e_a;
            t_min = integ.state.t;
        }
        if run.trace_stride > 0 && i % run.trace_stride == 0 {
            trace.push(TraceRow::new(&integ.state, &e));
        }
    }
    let transfer_fraction = if e0.e_a > 0.0 { 1.0 - e_fin / e0.e_a } else { 0.0 };
    Ok(CouplingOutcome {
        e_init: e0.e_a,
        e_fin,
        t_min,
        transfer_fraction,
        trace,
    })
}

/// Static harmonic-coupling run on a solved double well.
pub fn run_harmonic_coupling(setup: &CouplingSetup, run: &HarmonicCouplingRun) -> Result<CouplingOutcome> {
    let tau = setup.tau_ex();
    if run.duration < tau {
        return Err(Error::Config(format!(
            "run duration {:e} s is shorter than the exchange time {tau:e} s",
            run.duration
        )));
    }
    let system = setup.system();
    let reference = system.equilibrium(0.0, (setup.wells.a.z_min, setup.wells.b.z_min))?;
    run_coupling(&system, &reference, run, setup.dt)
}

/// Energy cooled below threshold by a harmonic exchange (K).
pub const HARMONIC_THRESHOLD_K: f64 = 1e-3;

/// Upper end of the contiguous range of initial energies (K), starting at
/// twice `threshold`, for which `final_energy` stays below `threshold` (K).
/// The range is bracketed by doubling up to `depth` (K) and then refined by
/// log-bisection to `resolution`. Scanning upward keeps isolated passing
/// energies above a failure out of the result. `final_energy` returns the
/// final energy in K, or an error for a lost trajectory (counted as a
/// failure).
pub fn harmonic_boundary_with(
    depth: f64,
    threshold: f64,
    resolution: f64,
    mut final_energy: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let mut scan = Vec::new();
    let mut passes = |e: f64, scan: &mut Vec<(f64, f64)>| -> Result<bool> {
        match final_energy(e) {
            Ok(fin) => {
                scan.push((e, fin));
                Ok(fin < threshold)
            }
            Err(err) if err.is_trajectory_failure() => {
                scan.push((e, f64::NAN));
                Ok(false)
            }
            Err(err) => Err(err),
        }
    };
    let top = depth * (1.0 - 1e-6);
    let mut lo = 2.0 * threshold;
    if lo >= top || !passes(lo, &mut scan)? {
        return Err(Error::Characterization {
            message: format!("final energy above {threshold} K even for E_init = {lo} K; resonance condition broken"),
            scan,
        });
    }
    let mut hi = loop {
        let next = (2.0 * lo).min(top);
        if !passes(next, &mut scan)? {
            break next;
        }
        if next >= top {
            return Ok(depth);
        }
        lo = next;
    };
    while hi / lo > 1.0 + resolution {
        let mid = (lo * hi).sqrt();
        if passes(mid, &mut scan)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Harmonic boundary of particle a in a solved double well (K).
pub fn harmonic_boundary(setup: &CouplingSetup, threshold: f64) -> Result<f64> {
    let system = setup.system();
    let reference = system.equilibrium(0.0, (setup.wells.a.z_min, setup.wells.b.z_min))?;
    let base = HarmonicCouplingRun::over_exchange(setup, 0.0);
    harmonic_boundary_with(setup.wells.a.depth, threshold, 0.01, |e| {
        let run = HarmonicCouplingRun {
            e_init: e * K_B,
            ..base
        };
        run_coupling(&system, &reference, &run, setup.dt).map(|o| o.e_fin / K_B)
    })
}

/// Waypoints of a ⁹Be⁺ frequency sweep with the solved voltages at each.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSchedule {
    pub spec: DoubleWellSpec,
    /// (time s, f_Be Hz)
    pub waypoints: Vec<(f64, f64)>,
    pub voltages: Vec<VoltageSet>,
}

impl SweepSchedule {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.0)
    }

    pub fn times(&self) -> Vec<f64> {
        self.waypoints.iter().map(|w| w.0).collect()
    }

    /// Largest |df/dt| / γ(f)² over the segments (dimensionless, γ in Hz).
    pub fn adiabaticity(&self) -> f64 {
        let sa = self.spec.species_a;
        let sb = self.spec.species_b;
        self.waypoints
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| {
                let rate = ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs();
                let f = 0.5 * (w[0].1 + w[1].1);
                let g = 1.0 / (2.0 * exchange_time(&sa, &sb, self.spec.omega_a, TAU * f, self.spec.s0()));
                rate / (g * g)
            })
            .fold(0.0, f64::max)
    }

    /// Writes `time_s, f_Be_Hz, V_1..V_n`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.voltages.first().map_or(0, |v| v.voltages.len());
        let mut header = vec!["time_s".to_string(), "f_Be_Hz".to_string()];
        header.extend((1..=n).map(|i| format!("V_{i}")));
        w.write_record(&header)?;
        for ((t, f), v) in self.waypoints.iter().zip(&self.voltages) {
            let mut row = vec![format!("{t:.12e}"), format!("{f:.12e}")];
            row.extend(v.voltages.iter().map(|x| format!("{x:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Waypoint placement along the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SweepRule {
    /// Local rate |df/dt| ∝ γ(f)², scaled to fill the requested duration.
    GammaSquared,
    /// Constant df/dt.
    Linear,
}

/// Waypoint times for frequencies `freqs` under `rule` over `duration`.
fn waypoint_times(spec: &DoubleWellSpec, freqs: &[f64], duration: f64, rule: SweepRule) -> Vec<f64> {
    let n = freqs.len();
    // γ² ∝ 1/√(ω_a ω_b)² ∝ 1/f_b, so dt ∝ df / γ² ∝ f df
    let weight = |f: f64| match rule {
        SweepRule::GammaSquared => {
            let g = 1.0 / (2.0 * exchange_time(&spec.species_a, &spec.species_b, spec.omega_a, TAU * f, spec.s0()));
            1.0 / (g * g)
        }
        SweepRule::Linear => 1.0,
    };
    let mut cum = vec![0.0; n];
    for i in 1..n {
        // Simpson over the segment
        let (f0, f1) = (freqs[i - 1], freqs[i]);
        let fm = 0.5 * (f0 + f1);
        cum[i] = cum[i - 1] + (f1 - f0).abs() * (weight(f0) + 4.0 * weight(fm) + weight(f1)) / 6.0;
    }
    let total = cum[n - 1];
    cum.iter()
        .enumerate()
        .map(|(i, c)| if i == n - 1 { duration } else { duration * c / total })
        .collect()
}

/// Solves the double well at every waypoint frequency; particle a stays at
/// its spec frequency. `f_start` and `f_end` may run in either direction.
pub fn build_sweep(
    spec: &DoubleWellSpec,
    basis: &Arc<ElectrodeBasis>,
    f_start: f64,
    f_end: f64,
    duration: f64,
    n_waypoints: usize,
    rule: SweepRule,
) -> Result<SweepSchedule> {
    if !(f_start > 0.0 && f_end > 0.0) || f_start == f_end {
        return Err(Error::Config(
            "sweep needs distinct positive start and end frequencies".into(),
        ));
    }
    if !(duration >= 0.0) {
        return Err(Error::Config("sweep duration must be non-negative".into()));
    }
    if n_waypoints < 2 {
        return Err(Error::Config("a sweep needs at least two waypoints".into()));
    }
    let freqs: Vec<f64> = (0..n_waypoints)
        .map(|i| f_start + (f_end - f_start) * i as f64 / (n_waypoints - 1) as f64)
        .collect();
    let times = waypoint_times(spec, &freqs, duration, rule);
    schedule_from_waypoints(spec, basis, times.into_iter().zip(freqs).collect())
}

/// Solves a user-supplied list of (time, f_Be) waypoints.
pub fn schedule_from_waypoints(
    spec: &DoubleWellSpec,
    basis: &Arc<ElectrodeBasis>,
    waypoints: Vec<(f64, f64)>,
) -> Result<SweepSchedule> {
    validate_waypoints(&waypoints)?;
    let voltages = waypoints
        .iter()
        .enumerate()
        .map(|(index, &(_, f))| {
            let wrap = |e: Error| Error::Waypoint {
                index,
                source: Box::new(e),
            };
            let (v, _) = solve_spec(&spec.with_f_b(f), basis).map_err(wrap)?;
            if let Some(w) = v.warnings.first() {
                return Err(wrap(Error::Config(w.clone())));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepSchedule {
        spec: *spec,
        waypoints,
        voltages,
    })
}

fn validate_waypoints(w: &[(f64, f64)]) -> Result<()> {
    if w.len() < 2 {
        return Err(Error::Config("a sweep needs at least two waypoints".into()));
    }
    if w[0].0 != 0.0 {
        return Err(Error::Config("the first waypoint must sit at t = 0".into()));
    }
    let zero = w.iter().all(|p| p.0 == 0.0);
    let dir = (w[1].1 - w[0].1).signum();
    for (i, p) in w.windows(2).enumerate() {
        if !zero && !(p[1].0 > p[0].0) {
            return Err(Error::Config(format!(
                "waypoint times not strictly increasing at row {}",
                i + 1
            )));
        }
        if dir == 0.0 || (p[1].1 - p[0].1).signum() != dir {
            return Err(Error::Config(format!(
                "waypoint frequencies not strictly monotone at row {}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Contents of a schedule file.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleFile {
    Frequencies(Vec<(f64, f64)>),
    Voltages { times: Vec<f64>, voltages: Vec<Vec<f64>> },
}

/// Reads a schedule CSV with columns `time_s, f_Be_Hz` or `time_s, V_1..V_n`.
/// A file holding both uses the frequencies.
pub fn read_schedule_csv<R: Read>(reader: R) -> Result<ScheduleFile> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("time_s").ok_or_else(|| Error::Ingestion {
        row: 0,
        column: "time_s".into(),
        message: "missing column".into(),
    })?;
    let f_col = col("f_Be_Hz");
    let v_cols: Vec<usize> = (1..).map_while(|i| col(&format!("V_{i}"))).collect();
    if f_col.is_none() && v_cols.is_empty() {
        return Err(Error::Ingestion {
            row: 0,
            column: "f_Be_Hz".into(),
            message: "need f_Be_Hz or V_1..V_n columns".into(),
        });
    }
    let mut times = Vec::new();
    let mut freqs = Vec::new();
    let mut volts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let parse = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Ingestion {
                    row,
                    column: headers.get(c).unwrap_or("").to_string(),
                    message: format!("'{s}' is not a finite number"),
                })
        };
        times.push(parse(t_col)?);
        match f_col {
            Some(c) => freqs.push(parse(c)?),
            None => volts.push(v_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?),
        }
    }
    Ok(if f_col.is_some() {
        ScheduleFile::Frequencies(times.into_iter().zip(freqs).collect())
    } else {
        ScheduleFile::Voltages { times, voltages: volts }
    })
}

/// Time-dependent potential linearly interpolated between waypoint tables,
/// plus an optional static noise table.
pub struct SweepField {
    times: Arc<Vec<f64>>,
    tables: Arc<Vec<HermiteTable>>,
    noise: Option<HermiteTable>,
}

impl SweepField {
    #[inline]
    fn segment(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 {
            return (0, 0.0);
        }
        let j = self.times.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
        let span = self.times[j + 1] - self.times[j];
        let w = if span > 0.0 {
            ((t - self.times[j]) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        (j, w)
    }
}

impl AxialField for SweepField {
    fn local_at(&self, z: f64, t: f64) -> Local {
        let (j, w) = self.segment(t);
        let mut l = self.tables[j].eval(z);
        if w > 0.0 {
            let r = self.tables[j + 1].eval(z);
            l.value += w * (r.value - l.value);
            l.slope += w * (r.slope - l.slope);
            l.curvature += w * (r.curvature - l.curvature);
        }
        if let Some(n) = &self.noise {
            let d = n.eval(z);
            l.value += d.value;
            l.slope += d.slope;
            l.curvature += d.curvature;
        }
        l
    }

    #[inline]
    fn slope_at(&self, z: f64, t: f64) -> f64 {
        let (j, w) = self.segment(t);
        let k = (j + 1).min(self.tables.len() - 1);
        self.tables[j].slope_lerp(&self.tables[k], w, self.noise.as_ref(), z)
    }

    fn field_domain(&self) -> (f64, f64) {
        self.tables[0].domain()
    }
}

/// Initial conditions of one sweep trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepInit {
    /// J
    pub e_a: f64,
    pub phase_a: f64,
    /// Energy given to ⁹Be⁺ at the start of every sweep (J).
    pub e_b: f64,
    /// Phase of ⁹Be⁺ for each sweep; the last entry is reused.
    pub phases_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    /// J
    pub e_init: f64,
    /// E_a at the last step of the final sweep (J).
    pub e_fin: f64,
    /// E_a at the end of each sweep (J).
    pub e_after: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Precomputed tables, regions and references for running a schedule.
pub struct SweepRuntime {
    pub schedule: SweepSchedule,
    pub dt: f64,
    pub region_a: (f64, f64),
    pub region_b: (f64, f64),
    /// Well minima (a, b) at the start and end of the sweep.
    pub start_minima: (f64, f64),
    pub end_minima: (f64, f64),
    /// Depth of particle a's well at the start of the sweep (K).
    pub depth_a: f64,
    times: Arc<Vec<f64>>,
    tables: Arc<Vec<HermiteTable>>,
    basis_tables: Arc<BasisTables>,
}

impl SweepRuntime {
    pub fn new(schedule: SweepSchedule, basis: &Arc<ElectrodeBasis>, basis_tables: Arc<BasisTables>) -> Result<Self> {
        let spec = &schedule.spec;
        let radius = basis.geometry().inner_radius;
        let start = ComposedPotential::new(Arc::clone(basis), schedule.voltages[0].voltages.clone())?;
        let end = ComposedPotential::new(
            Arc::clone(basis),
            schedule
                .voltages
                .last()
                .expect("at least two waypoints")
                .voltages
                .clone(),
        )?;
        let f0 = schedule.waypoints[0].1;
        let f1 = schedule.waypoints.last().expect("at least two waypoints").1;
        let w0 = characterize(&start, &spec.with_f_b(f0), radius)?;
        let w1 = characterize(&end, &spec.with_f_b(f1), radius)?;
        let f_max = schedule
            .waypoints
            .iter()
            .map(|w| w.1)
            .fold(spec.f_a(), f64::max)
            .max(w0.a.f_local)
            .max(w1.a.f_local);
        let tables = schedule
            .voltages
            .iter()
            .map(|v| basis_tables.combine_table(&v.voltages))
            .collect();
        Ok(Self {
            dt: IntegratorConfig::for_frequency(f_max, 0.0).dt,
            region_a: (w0.a.barrier_left, w0.a.barrier_right),
            region_b: (w0.b.barrier_left, w0.b.barrier_right),
            start_minima: (w0.a.z_min, w0.b.z_min),
            end_minima: (w1.a.z_min, w1.b.z_min),
            depth_a: w0.a.depth,
            times: Arc::new(schedule.times()),
            tables: Arc::new(tables),
            basis_tables,
            schedule,
        })
    }

    /// Potential of the schedule with static electrode offsets `noise` (V).
    pub fn field(&self, noise: Option<&[f64]>) -> SweepField {
        SweepField {
            times: Arc::clone(&self.times),
            tables: Arc::clone(&self.tables),
            noise: noise
                .filter(|n| n.iter().any(|&x| x != 0.0))
                .map(|n| self.basis_tables.combine_table(n)),
        }
    }

    /// Runs the schedule `n_sweeps` times, reinitializing ⁹Be⁺ before each
    /// sweep. A `trace_stride` above 0 records energies against the
    /// instantaneous equilibrium every that many steps.
    pub fn run(
        &self,
        init: &SweepInit,
        noise: Option<&[f64]>,
        n_sweeps: usize,
        trace_stride: usize,
    ) -> Result<SweepOutcome> {
        let field = self.field(noise);
        let spec = &self.schedule.spec;
        let system =
            TwoBody::new(spec.species_a, spec.species_b, &field, &field).with_regions(self.region_a, self.region_b);
        let duration = self.schedule.duration();
        let n_steps = (duration / self.dt).ceil() as usize;
        let dt = if n_steps > 0 {
            duration / n_steps as f64
        } else {
            self.dt
        };
        let ref_start = system.equilibrium(0.0, self.start_minima)?;
        let ref_end = system.equilibrium(duration, self.end_minima)?;
        let phase_b = |k: usize| init.phases_b.get(k).or(init.phases_b.last()).copied().unwrap_or(0.0);
        let mut state = system.initialize(&ref_start, 0.0, init.e_a, init.e_b, init.phase_a, phase_b(0), dt)?;
        let e_init = Verlet::new(&system, state, dt)?.energies(&ref_start).e_a;
        let mut e_after = Vec::with_capacity(n_sweeps);
        let mut trace = Vec::new();
        let mut guess = self.start_minima;
        for k in 0..n_sweeps {
            if k > 0 {
                state = reinit_b(&system, &ref_start, state, init.e_b, phase_b(k));
            }
            let mut integ = Verlet::new(&system, state, dt)?;
            let t_offset = k as f64 * duration;
            if trace_stride == 0 {
                integ.advance(n_steps)?;
            } else {
                for i in 0..=n_steps {
                    if i > 0 {
                        integ.advance(1)?;
                    }
                    if i % trace_stride == 0 {
                        let r = system.equilibrium(integ.state.t, guess)?;
                        guess = (r.z_a, r.z_b);
                        let mut row = TraceRow::new(&integ.state, &integ.energies(&r));
                        row.t += t_offset;
                        trace.push(row);
                    }
                }
            }
            e_after.push(integ.energies(&ref_end).e_a);
            state = integ.state;
            state.t = 0.0;
        }
        Ok(SweepOutcome {
            e_init,
            e_fin: e_after.last().copied().unwrap_or(e_init),
            e_after,
            trace,
        })
    }
}

/// ⁹Be⁺ back at its start-of-sweep equilibrium with energy `e_b`; particle a
/// keeps its position and velocity.
fn reinit_b<Fa: AxialField + ?Sized, Fb: AxialField + ?Sized>(
    system: &TwoBody<'_, Fa, Fb>,
    reference: &EnergyReference,
    state: TrajectoryState,
    e_b: f64,
    phase_b: f64,
) -> TrajectoryState {
    let mut s = TrajectoryState {
        t: 0.0,
        z_b: reference.z_b,
        v_b: 0.0,
        ..state
    };
    let d = (reference.z_a - reference.z_b).abs();
    let kc = 2.0 * system.coulomb_force(reference.z_a, reference.z_b).abs() / d;
    let kb = system.species_b.charge * system.field_b.local_at(reference.z_b, 0.0).curvature
        + kc * (system.species_a.charge * system.species_b.charge).signum();
    if e_b > 0.0 && kb > 0.0 {
        let amp = (2.0 * e_b / kb).sqrt();
        let w = (kb / system.species_b.mass).sqrt();
        let ph = TAU * phase_b;
        s.z_b += amp * ph.cos();
        s.v_b = -amp * w * ph.sin();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Sweep,
    Harmonic,
    GroundState,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Sweep => "sweep",
            StageKind::Harmonic => "harmonic",
            StageKind::GroundState => "ground_state",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolStage {
    pub kind: StageKind,
    /// Hz
    pub f_particle: f64,
    /// ⁹Be⁺ frequency, or the (start, end) range of a sweep (Hz).
    pub f_be: (f64, f64),
    /// m
    pub s0: f64,
    pub repetitions: usize,
    /// s
    pub duration: f64,
    /// Energy entering and targeted by the stage (K).
    pub e_start: f64,
    pub e_target: f64,
}

impl ProtocolStage {
    pub fn total(&self) -> f64 {
        self.repetitions as f64 * self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolPlan {
    pub species: SpeciesLabel,
    pub transfer_efficiency: f64,
    pub stages: Vec<ProtocolStage>,
}

impl ProtocolPlan {
    /// Total time excluding ⁹Be⁺ reinitialization (s).
    pub fn total_time(&self) -> f64 {
        self.stages.iter().map(ProtocolStage::total).sum()
    }
}

impl fmt::Display for ProtocolPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "species: {}", self.species)?;
        writeln!(f, "transfer_efficiency: {}", self.transfer_efficiency)?;
        writeln!(f, "stages:")?;
        for s in &self.stages {
            writeln!(f, "  - kind: {}", s.kind)?;
            writeln!(f, "    f_particle_Hz: {:.1}", s.f_particle)?;
            if s.f_be.0 == s.f_be.1 {
                writeln!(f, "    f_Be_Hz: {:.1}", s.f_be.0)?;
            } else {
                writeln!(f, "    f_Be_Hz: [{:.1}, {:.1}]", s.f_be.0, s.f_be.1)?;
            }
            writeln!(f, "    detuning_Hz: {:.1}", s.f_be.1 - s.f_particle)?;
            writeln!(f, "    s0_m: {:e}", s.s0)?;
            writeln!(f, "    repetitions: {}", s.repetitions)?;
            writeln!(f, "    duration_per_repetition_s: {:.6}", s.duration)?;
            writeln!(f, "    E_start_K: {:e}", s.e_start)?;
            writeln!(f, "    E_target_K: {:e}", s.e_target)?;
        }
        writeln!(f, "total_time_s: {:.6}", self.total_time())
    }
}

/// Smallest k with e_start (1 − p)^k < e_target.
pub fn repetitions(e_start: f64, e_target: f64, p: f64) -> usize {
    if e_start < e_target {
        return 0;
    }
    let k = ((e_target / e_start).ln() / (1.0 - p).ln()).floor() as usize + 1;
    // guard the floor against rounding at exact powers
    let mut k = k.saturating_sub(1).max(1);
    while e_start * (1.0 - p).powi(k as i32) >= e_target {
        k += 1;
    }
    k
}

/// Sweep durations (s) with the particle frequency of 500 kHz.
pub const PROTON_SWEEP_DURATION: f64 = 0.180;
pub const ANTIPROTON_SWEEP_DURATION: f64 = 0.242;

/// Waypoints of the standard sweep.
pub const SWEEP_WAYPOINTS: usize = 31;

/// Sweep duration for the species (s).
pub fn sweep_duration(species: &Species) -> Result<f64> {
    match species.label {
        SpeciesLabel::Proton => Ok(PROTON_SWEEP_DURATION),
        SpeciesLabel::Antiproton => Ok(ANTIPROTON_SWEEP_DURATION),
        other => Err(Error::Config(format!("no sweep duration for {other}"))),
    }
}

/// The first stage of the plan: particle at 500 kHz and s₀ = 0.7 mm, ⁹Be⁺
/// swept from 470 kHz up to the compensated resonance.
pub fn standard_sweep(species: &Species, basis: &Arc<ElectrodeBasis>) -> Result<SweepSchedule> {
    let spec = DoubleWellSpec::compensated(*species, 500e3, 0.7e-3, 0.0);
    build_sweep(
        &spec,
        basis,
        470e3,
        spec.f_b(),
        sweep_duration(species)?,
        SWEEP_WAYPOINTS,
        SweepRule::GammaSquared,
    )
}

/// Staged cooling plan for a proton or antiproton with a transfer
/// efficiency of 80% per harmonic exchange.
pub fn plan_ground_state_protocol(species: &Species) -> Result<ProtocolPlan> {
    let be = Species::beryllium9_ion();
    let p = 0.8;
    // sweep edge, harmonic target, ground-state n̄ ≈ 2 energy target
    let (sweep_t, sweep_edge, f_h, s0_h) = match species.label {
        SpeciesLabel::Proton => (PROTON_SWEEP_DURATION, 0.46, 400e3, 0.7e-3),
        SpeciesLabel::Antiproton => (ANTIPROTON_SWEEP_DURATION, 0.26, 450e3, 0.6e-3),
        other => return Err(Error::Config(format!("no cooling plan for {other}"))),
    };
    let f_g = 100e3;
    let s0_g = 0.6e-3;
    let e_harm = HARMONIC_THRESHOLD_K;
    let e_ground = 2.0 * HBAR * TAU * f_g / K_B;
    let detuned = |f: f64, s0: f64| f + crate::dynamics::coulomb_detuning(species, &be, TAU * f, s0) / TAU;
    let tau = |f: f64, s0: f64| exchange_time(species, &be, TAU * f, TAU * detuned(f, s0), s0);
    let stages = vec![
        ProtocolStage {
            kind: StageKind::Sweep,
            f_particle: 500e3,
            f_be: (470e3, 500e3),
            s0: 0.7e-3,
            repetitions: 2,
            duration: sweep_t,
            e_start: 4.0,
            e_target: sweep_edge,
        },
        ProtocolStage {
            kind: StageKind::Harmonic,
            f_particle: f_h,
            f_be: (detuned(f_h, s0_h), detuned(f_h, s0_h)),
            s0: s0_h,
            repetitions: repetitions(sweep_edge, e_harm, p),
            duration: tau(f_h, s0_h),
            e_start: sweep_edge,
            e_target: e_harm,
        },
        ProtocolStage {
            kind: StageKind::GroundState,
            f_particle: f_g,
            f_be: (detuned(f_g, s0_g), detuned(f_g, s0_g)),
            s0: s0_g,
            repetitions: repetitions(e_harm, e_ground, p),
            duration: tau(f_g, s0_g),
            e_start: e_harm,
            e_target: e_ground,
        },
    ];
    Ok(ProtocolPlan {
        species: species.label,
        transfer_efficiency: p,
        stages,
    })
}
