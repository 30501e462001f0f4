use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use trapcool::analysis::{
    detuning_grid, energy_ranges, estimate_sigma_f, fit_linear, fit_quadratic, fit_sigma_f, required_voltage_stability,
    scan_resonance, EnergyRange, FrequencyFluctuation, LinearFit, RobustnessReport, ScaleFit, StabilityInput,
};
use trapcool::constants::{species_by_name, K_B};
use trapcool::dynamics::write_trajectory_csv;
use trapcool::electrode::{build_analytic_basis, import_basis_csv, AnalyticBasisOptions, ElectrodeBasis, TrapGeometry};
use trapcool::montecarlo::{
    histogram, run_campaign, write_histogram_csv, BoltzmannSampler, CampaignConfig, Outcome, VoltageNoise,
};
use trapcool::plot::LinePlot;
use trapcool::potential::BasisTables;
use trapcool::protocols::{
    build_sweep, default_tables, plan_ground_state_protocol, read_schedule_csv, run_coupling, schedule_from_waypoints,
    sweep_duration, CouplingSetup, HarmonicCouplingRun, ScheduleFile, SweepInit, SweepRule, SweepRuntime,
    SweepSchedule,
};
use trapcool::solver::{characterize, solve_spec, write_potential_report, DoubleWellSpec, VOLTAGE_WARNING_LIMIT};
use trapcool::{Error, Species};

use crate::config::{Report, RuleChoice, RunConfig, SimulateMode};
use crate::{CliError, EXIT_OK, EXIT_PARTIAL};

type CmdResult = Result<u8, CliError>;

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    species: Species,
    basis: Arc<ElectrodeBasis>,
}

impl Context {
    fn new(mut cfg: RunConfig) -> Result<Self, CliError> {
        let species = species_by_name(&cfg.species)?;
        if let Some(t) = cfg.threads {
            // a second initialization in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
        }
        let basis = Arc::new(load_basis(&cfg)?);
        let out = cfg.resolve_output_dir();
        fs::create_dir_all(&out)?;
        fs::write(out.join("config.toml"), cfg.to_toml())?;
        Ok(Self {
            cfg,
            out,
            species,
            basis,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(self.path(name), text + "\n")?;
        Ok(())
    }

    fn write_svg(&self, name: &str, plot: &LinePlot) -> Result<(), CliError> {
        let provenance = format!("trapcool config sha256 {}", self.cfg.hash());
        fs::write(self.path(name), plot.to_svg(&provenance))?;
        Ok(())
    }

    fn spec(&self) -> DoubleWellSpec {
        let w = &self.cfg.well;
        let spec = DoubleWellSpec::compensated(self.species, w.f_hz, w.s0_m, w.delta_s0_m);
        match w.f_be_hz {
            Some(f) => spec.with_f_b(f),
            None => spec,
        }
    }

    fn tables(&self) -> Result<BasisTables, CliError> {
        Ok(default_tables(&self.basis)?)
    }
}

fn load_basis(cfg: &RunConfig) -> Result<ElectrodeBasis, CliError> {
    let g = &cfg.geometry;
    let geometry = TrapGeometry::with_electrodes(g.n_electrodes, g.electrode_width_m, g.gap_m, g.inner_radius_m);
    match &g.import_basis {
        Some(path) => {
            let file =
                File::open(path).map_err(|e| CliError::Config(format!("cannot open basis {}: {e}", path.display())))?;
            Ok(import_basis_csv(file, Some(geometry))?)
        }
        None => Ok(build_analytic_basis(
            geometry,
            AnalyticBasisOptions {
                series_terms: g.series_terms,
                ..AnalyticBasisOptions::default()
            },
        )?),
    }
}

fn build_schedule(ctx: &Context) -> Result<SweepSchedule, CliError> {
    let spec = ctx.spec();
    let s = &ctx.cfg.sweep;
    if let Some(path) = &s.schedule_file {
        let file =
            File::open(path).map_err(|e| CliError::Config(format!("cannot open schedule {}: {e}", path.display())))?;
        return match read_schedule_csv(file)? {
            ScheduleFile::Frequencies(w) => Ok(schedule_from_waypoints(&spec, &ctx.basis, w)?),
            ScheduleFile::Voltages { .. } => Err(CliError::Config(
                "voltage-only schedules carry no frequencies; supply time_s,f_Be_Hz".into(),
            )),
        };
    }
    let duration = match s.duration_s {
        Some(d) => d,
        None => sweep_duration(&ctx.species)?,
    };
    let rule = match s.rule {
        RuleChoice::GammaSquared => SweepRule::GammaSquared,
        RuleChoice::Linear => SweepRule::Linear,
    };
    Ok(build_sweep(
        &spec,
        &ctx.basis,
        s.f_start_hz,
        s.f_end_hz.unwrap_or(spec.f_b()),
        duration,
        s.n_waypoints,
        rule,
    )?)
}

fn warn(messages: &[String]) {
    for m in messages {
        eprintln!("warning: {m}");
    }
}

pub fn solve(cfg: RunConfig) -> CmdResult {
    let ctx = Context::new(cfg)?;
    let spec = ctx.spec();
    let (voltages, potential) = solve_spec(&spec, &ctx.basis)?;
    warn(&voltages.warnings);
    let wells = characterize(&potential, &spec, ctx.basis.geometry().inner_radius)?;

    let mut w = csv::Writer::from_writer(ctx.create("voltages.csv")?);
    w.write_record(["electrode", "voltage_V"]).map_err(Error::from)?;
    for (i, v) in voltages.voltages.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{v:.17e}")])
            .map_err(Error::from)?;
    }
    w.flush()?;
    let (lo, hi) = ctx.basis.domain();
    write_potential_report(ctx.create("potential.csv")?, &potential, lo, hi, 2001)?;

    let setup = CouplingSetup::new(spec, &ctx.basis, &ctx.tables()?)?;
    let a = setup.analytics();
    ctx.write_json(
        "wells.json",
        &json!({
            "species": ctx.species.label.to_string(),
            "f_Hz": spec.f_a(),
            "f_Be_Hz": spec.f_b(),
            "s0_m": spec.s0(),
            "delta_s0_m": spec.delta_s0,
            "voltages_V": voltages.voltages,
            "max_abs_voltage_V": voltages.max_abs(),
            "relative_residual": voltages.relative_residual,
            "warnings": voltages.warnings,
            "wells": wells,
            "coupling": a,
        }),
    )?;
    println!(
        "solved {} electrodes, max |V| = {:.4} V, depth = {:.3} K, tau_ex = {:.3} ms",
        voltages.voltages.len(),
        voltages.max_abs(),
        wells.a.depth,
        a.tau_ex * 1e3
    );
    Ok(EXIT_OK)
}

fn energy_plot(title: &str, rows: &[trapcool::dynamics::TraceRow]) -> LinePlot {
    LinePlot::new(title, "t (s)", "E (K)")
        .with_series("E_a", rows.iter().map(|r| (r.t, r.e_a / K_B)).collect())
        .with_series("E_Be", rows.iter().map(|r| (r.t, r.e_b / K_B)).collect())
}

pub fn simulate(cfg: RunConfig) -> CmdResult {
    let ctx = Context::new(cfg)?;
    let sim = ctx.cfg.simulate.clone();
    let tables = ctx.tables()?;
    let (trace, summary) = match sim.mode {
        SimulateMode::Harmonic => {
            let setup = CouplingSetup::new(ctx.spec(), &ctx.basis, &tables)?;
            let dt = ctx.cfg.integrator.dt_s.unwrap_or(setup.dt);
            let mut run = HarmonicCouplingRun::over_exchange(&setup, sim.e_init_k * K_B);
            run.duration = sim.duration_s.unwrap_or(run.duration);
            if run.duration.is_nan() || run.duration < 0.0 {
                return Err(CliError::Config("duration must be non-negative".into()));
            }
            run.phase_a = sim.phase;
            run.e_b = sim.e_be_k * K_B;
            run.trace_stride = sim.trace_stride.max(1);
            let system = setup.system();
            let out = run_coupling(&system, &setup.reference()?, &run, dt)?;
            let summary = json!({
                "mode": "harmonic",
                "dt_s": dt,
                "duration_s": run.duration,
                "tau_ex_s": setup.tau_ex(),
                "E_init_K": out.e_init / K_B,
                "E_min_K": out.e_fin / K_B,
                "t_min_s": out.t_min,
                "transfer_fraction": out.transfer_fraction,
            });
            (out.trace, summary)
        }
        SimulateMode::Sweep => {
            let schedule = build_schedule(&ctx)?;
            let mut runtime = SweepRuntime::new(schedule, &ctx.basis, Arc::new(tables))?;
            if let Some(dt) = ctx.cfg.integrator.dt_s {
                runtime.dt = dt;
            }
            let init = SweepInit {
                e_a: sim.e_init_k * K_B,
                phase_a: sim.phase,
                e_b: sim.e_be_k * K_B,
                phases_b: vec![0.0],
            };
            let out = runtime.run(&init, None, ctx.cfg.sweep.n_sweeps, sim.trace_stride.max(1))?;
            let summary = json!({
                "mode": "sweep",
                "dt_s": runtime.dt,
                "sweep_duration_s": runtime.schedule.duration(),
                "n_sweeps": ctx.cfg.sweep.n_sweeps,
                "E_init_K": out.e_init / K_B,
                "E_after_K": out.e_after.iter().map(|e| e / K_B).collect::<Vec<_>>(),
                "E_fin_K": out.e_fin / K_B,
            });
            (out.trace, summary)
        }
    };
    write_trajectory_csv(ctx.create("trajectory.csv")?, &trace)?;
    ctx.write_json("summary.json", &summary)?;
    if sim.plot {
        ctx.write_svg("energy.svg", &energy_plot("Energy evolution", &trace))?;
    }
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    Ok(EXIT_OK)
}

pub fn sweep(cfg: RunConfig) -> CmdResult {
    let ctx = Context::new(cfg)?;
    let schedule = build_schedule(&ctx)?;
    schedule.write_csv(ctx.create("schedule.csv")?)?;
    let max_v = schedule.voltages.iter().map(|v| v.max_abs()).fold(0.0, f64::max);
    let summary = json!({
        "species": ctx.species.label.to_string(),
        "f_particle_Hz": schedule.spec.f_a(),
        "f_Be_start_Hz": schedule.waypoints[0].1,
        "f_Be_end_Hz": schedule.waypoints.last().map(|w| w.1),
        "duration_s": schedule.duration(),
        "n_waypoints": schedule.waypoints.len(),
        "adiabaticity": schedule.adiabaticity(),
        "max_abs_voltage_V": max_v,
    });
    ctx.write_json("sweep.json", &summary)?;
    let plot = LinePlot::new("Sweep schedule", "t (s)", "f_Be (Hz)").with_series("f_Be", schedule.waypoints.clone());
    ctx.write_svg("schedule.svg", &plot)?;
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    Ok(EXIT_OK)
}

pub fn campaign(cfg: RunConfig) -> CmdResult {
    let Some(seed) = cfg.seed else {
        return Err(CliError::Config(
            "campaign requires --seed (or `seed` in the config)".into(),
        ));
    };
    let ctx = Context::new(cfg)?;
    let c = &ctx.cfg.campaign;
    let schedule = build_schedule(&ctx)?;
    let runtime = SweepRuntime::new(schedule, &ctx.basis, Arc::new(ctx.tables()?))?;
    let config = CampaignConfig {
        n_samples: c.n_samples,
        seed,
        sampler: BoltzmannSampler {
            temperature: c.temperature_k,
        },
        noise: VoltageNoise {
            sigma_v: ctx.cfg.noise.sigma_v,
        },
        n_sweeps: ctx.cfg.sweep.n_sweeps,
        threads: ctx.cfg.threads,
        zero_point_be: c.zero_point_be,
    };
    let dist = run_campaign(&runtime, &config)?;
    dist.write_samples_csv(ctx.create("samples.csv")?)?;
    let summary = dist.summary(&c.thresholds_k, c.bin_width_k);
    let finals = dist.final_energies();
    let bins_fin = histogram(&finals, c.bin_width_k);
    let bins_init = histogram(&dist.initial_energies(), c.bin_width_k);
    write_histogram_csv(ctx.create("histogram_final.csv")?, &bins_fin)?;
    write_histogram_csv(ctx.create("histogram_initial.csv")?, &bins_init)?;
    ctx.write_json("summary.json", &summary)?;
    let step = |bins: &[trapcool::montecarlo::HistogramBin]| -> Vec<(f64, f64)> {
        bins.iter()
            .flat_map(|b| [(b.low, b.density), (b.high, b.density)])
            .collect()
    };
    let mut plot = LinePlot::new("Energy distribution after the sweeps", "E (K)", "density (1/K)")
        .with_series("final", step(&bins_fin))
        .with_series("initial", step(&bins_init));
    if let Some(edge) = summary.drop_edge {
        plot = plot.with_series(
            "drop edge",
            vec![
                (edge, 0.0),
                (edge, bins_fin.iter().map(|b| b.density).fold(0.0, f64::max)),
            ],
        );
    }
    ctx.write_svg("histogram.svg", &plot)?;
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    let failed = dist.count(Outcome::Failed);
    if failed > 0 {
        eprintln!("warning: {failed} of {} samples failed numerically", c.n_samples);
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SigmaRow {
    s0_m: f64,
    delta_s0_m: f64,
    fit: Option<ScaleFit>,
    points: Vec<FrequencyFluctuation>,
}

#[derive(Serialize)]
struct RangeRow {
    s0_m: f64,
    delta_s0_m: f64,
    e_max_fit: Option<LinearFit>,
    depth_fit: Option<ScaleFit>,
    points: Vec<EnergyRange>,
}

pub fn analyze(cfg: RunConfig) -> CmdResult {
    let mut cfg = cfg;
    let seed = *cfg.seed.get_or_insert(0);
    let ctx = Context::new(cfg)?;
    let a = ctx.cfg.analyze.clone();
    let tables = ctx.tables()?;
    let wants = |r: Report| a.reports.contains(&r);
    let mut report = serde_json::Map::new();

    if wants(Report::Resonance) {
        let spec = ctx.spec();
        let tau = CouplingSetup::new(spec, &ctx.basis, &tables)?.tau_ex();
        let grid = detuning_grid(1.0 / (2.0 * tau), a.detuning_span, a.detuning_points);
        let curve = scan_resonance(&spec, &ctx.basis, &tables, a.e_init_k * K_B, &grid)?;
        curve.write_csv(ctx.create("resonance.csv")?)?;
        let mut plot = LinePlot::new("Resonance curve", "detuning (Hz)", "transferred fraction").with_series(
            "simulated",
            curve
                .detunings
                .iter()
                .copied()
                .zip(curve.transfer_fractions.iter().copied())
                .collect(),
        );
        if let Some(fit) = curve.fit {
            let fine = detuning_grid(curve.gamma_predicted, a.detuning_span, 201);
            plot = plot.with_series("Lorentzian fit", fine.iter().map(|&d| (d, fit.eval(d))).collect());
        }
        ctx.write_svg("resonance.svg", &plot)?;
        report.insert("resonance".into(), json!(curve));
    }

    let offset = |i: usize| ctx.cfg.delta_s0_for(i);
    let mut sigma_rows = Vec::new();
    if wants(Report::SigmaF) || wants(Report::Stability) {
        let noise = VoltageNoise {
            sigma_v: ctx.cfg.noise.sigma_v,
        };
        for (i, &s0) in a.s0_values_m.iter().enumerate() {
            let points = a
                .frequencies_hz
                .iter()
                .map(|&f| {
                    let spec = DoubleWellSpec::compensated(ctx.species, f, s0, offset(i));
                    estimate_sigma_f(&spec, &ctx.basis, &noise, a.sigma_samples, seed)
                })
                .collect::<trapcool::Result<Vec<_>>>()?;
            sigma_rows.push(SigmaRow {
                s0_m: s0,
                delta_s0_m: offset(i),
                fit: fit_sigma_f(&points).ok(),
                points,
            });
        }
        let mut w = csv::Writer::from_writer(ctx.create("sigma_f.csv")?);
        w.write_record(["s0_m", "f_Hz", "sigma_f_Hz", "mean_shift_Hz", "n_used", "n_lost"])
            .map_err(Error::from)?;
        for r in &sigma_rows {
            for p in &r.points {
                w.write_record([
                    format!("{:e}", r.s0_m),
                    format!("{:e}", p.f),
                    format!("{:.9e}", p.sigma_f),
                    format!("{:.9e}", p.mean_shift),
                    p.n_used.to_string(),
                    p.n_lost.to_string(),
                ])
                .map_err(Error::from)?;
            }
        }
        w.flush()?;
        report.insert("sigma_f".into(), json!(sigma_rows));
    }

    let mut range_rows = Vec::new();
    if wants(Report::EnergyRange) || wants(Report::Stability) {
        for (i, &s0) in a.s0_values_m.iter().enumerate() {
            let points = energy_ranges(
                &ctx.species,
                s0,
                offset(i),
                &a.frequencies_hz,
                &ctx.basis,
                &tables,
                a.threshold_k,
            )?;
            // fits use every point; the 10 V limit only caps E_max below
            let (f, e): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|p| p.e_max.map(|e| (p.f, e))).unzip();
            let (fd, d): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.f, p.depth)).unzip();
            range_rows.push(RangeRow {
                s0_m: s0,
                delta_s0_m: offset(i),
                e_max_fit: fit_linear(&f, &e).ok(),
                depth_fit: fit_quadratic(&fd, &d).ok(),
                points,
            });
        }
        let mut w = csv::Writer::from_writer(ctx.create("energy_ranges.csv")?);
        w.write_record(["s0_m", "f_Hz", "depth_K", "E_max_K", "max_abs_voltage_V"])
            .map_err(Error::from)?;
        for r in &range_rows {
            for p in &r.points {
                w.write_record([
                    format!("{:e}", r.s0_m),
                    format!("{:e}", p.f),
                    format!("{:.9e}", p.depth),
                    p.e_max.map(|e| format!("{e:.9e}")).unwrap_or_default(),
                    format!("{:.6e}", p.max_voltage),
                ])
                .map_err(Error::from)?;
            }
        }
        w.flush()?;
        let mut plot = LinePlot::new("Harmonic boundary", "f (Hz)", "E_max (K)");
        for r in &range_rows {
            plot = plot.with_series(
                &format!("s0 = {:.2} mm", r.s0_m * 1e3),
                r.points.iter().filter_map(|p| p.e_max.map(|e| (p.f, e))).collect(),
            );
        }
        ctx.write_svg("energy_ranges.svg", &plot)?;
        report.insert("energy_ranges".into(), json!(range_rows));
    }

    if wants(Report::Stability) {
        let reports: Vec<Result<RobustnessReport, String>> = range_rows
            .iter()
            .zip(&sigma_rows)
            .map(|(r, s)| {
                let e_max = r
                    .points
                    .iter()
                    .filter(|p| p.max_voltage <= VOLTAGE_WARNING_LIMIT)
                    .filter_map(|p| p.e_max)
                    .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
                required_voltage_stability(&StabilityInput {
                    species_a: ctx.species,
                    s0: r.s0_m,
                    e_max,
                    harmonic_fit: r.e_max_fit,
                    sigma_fit: s.fit,
                    sigma_v: ctx.cfg.noise.sigma_v,
                    target_p: a.target_p,
                })
                .map_err(|e| e.to_string())
            })
            .collect();
        let mut w = csv::Writer::from_writer(ctx.create("stability.csv")?);
        w.write_record([
            "s0_m",
            "E_max_K",
            "f_Emax_Hz",
            "gamma_Hz",
            "sigma_f_Hz",
            "robustness",
            "p",
            "required_Vpp_V",
            "required_Vpp_2sigma_V",
            "meets_reference",
        ])
        .map_err(Error::from)?;
        for r in reports.iter().flatten() {
            w.write_record([
                format!("{:e}", r.s0),
                format!("{:.6e}", r.e_max),
                format!("{:.6e}", r.f_emax),
                format!("{:.6e}", r.gamma),
                format!("{:.6e}", r.sigma_f),
                format!("{:.6e}", r.robustness),
                format!("{:.6e}", r.p_at_95),
                format!("{:.6e}", r.required_vpp),
                format!("{:.6e}", r.required_vpp_2sigma),
                r.meets_reference.to_string(),
            ])
            .map_err(Error::from)?;
        }
        w.flush()?;
        for e in reports.iter().filter_map(|r| r.as_ref().err()) {
            eprintln!("warning: stability pipeline: {e}");
        }
        report.insert(
            "stability".into(),
            json!(reports
                .iter()
                .map(|r| match r {
                    Ok(r) => json!(r),
                    Err(e) => json!({ "error": e }),
                })
                .collect::<Vec<_>>()),
        );
    }

    ctx.write_json("analysis.json", &report)?;
    println!("wrote {}", ctx.path("analysis.json").display());
    Ok(EXIT_OK)
}

pub fn plan(cfg: RunConfig) -> CmdResult {
    let ctx = Context::new(cfg)?;
    let plan = plan_ground_state_protocol(&ctx.species)?;
    let text = plan.to_string();
    fs::write(ctx.path("plan.yaml"), &text)?;
    ctx.write_json("plan.json", &plan)?;
    print!("{text}");
    Ok(EXIT_OK)
}
