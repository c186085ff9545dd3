//! Subcommand implementations. Computation fans out through the library's
//! rayon sweeps; every file is written from this thread after the joins.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use beamobs::beam_model::{assemble_at_indices, characteristic_residual_scaled};
use beamobs::estimate::{
    compare_placements, run_estimation, tip_load_deflection, ComparisonSettings, ComparisonTable, PlacementSpec,
};
use beamobs::export::{write_csv_table, write_json, write_json_table, SvgPlot};
use beamobs::gramian::{continuum_analytical_sweep, truncated_analytical_sweep};
use beamobs::placement::{baseline_placements, budget_sweep, optimize_placement, RelaxationOptions};
use beamobs::simulate::TimeGrid;
use beamobs::{project_initial_condition, ModalBasis};
use nalgebra::DMatrix;
use serde_json::json;

use crate::config::{ExperimentConfig, OutputFormat, SystemChoice};
use crate::CliError;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    out: PathBuf,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            cfg,
            out: cfg.output_dir.clone(),
        })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        let file = File::create(&path)?;
        println!("wrote {}", path.display());
        Ok(BufWriter::new(file))
    }

    /// Writes `name.csv` or `name.json` depending on the configured format.
    fn table(&self, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
        match self.cfg.format {
            OutputFormat::Csv => write_csv_table(self.create(&format!("{name}.csv"))?, header, rows)?,
            OutputFormat::Json => write_json_table(self.create(&format!("{name}.json"))?, header, rows)?,
        }
        Ok(())
    }

    fn json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        write_json(self.create(&format!("{name}.json"))?, value)?;
        Ok(())
    }

    fn svg(&self, name: &str, plot: &SvgPlot) -> Result<(), CliError> {
        plot.write(self.create(&format!("{name}.svg"))?)?;
        Ok(())
    }

    fn basis(&self, n_modes: usize) -> Result<ModalBasis, CliError> {
        let mut beam = self.cfg.beam.clone();
        beam.n_modes = n_modes;
        Ok(beam.build_basis()?)
    }

    fn time_grid(&self, basis: &ModalBasis) -> Result<TimeGrid, CliError> {
        let sim = &self.cfg.simulation;
        let period = basis.slowest_period();
        Ok(TimeGrid::new(sim.horizon_periods * period, period / sim.steps_per_period as f64)?)
    }

    fn gramians(&self, basis: &ModalBasis, system: SystemChoice) -> Result<Vec<DMatrix<f64>>, CliError> {
        let grid = self.time_grid(basis)?;
        let gramians = match system {
            SystemChoice::Truncated => truncated_analytical_sweep(basis, grid.horizon())?,
            SystemChoice::Continuum => continuum_analytical_sweep(basis, &grid, self.cfg.simulation.quadrature),
            SystemChoice::Both => unreachable!("callers expand `both`"),
        };
        Ok(gramians.into_iter().map(|g| g.into_matrix()).collect())
    }

    fn relaxation_options(&self) -> RelaxationOptions {
        RelaxationOptions {
            max_iterations: self.cfg.place.max_iterations,
            gap_tolerance: self.cfg.place.gap_tolerance,
            ..RelaxationOptions::default()
        }
    }
}

pub fn write_diagnostic(dir: &Path, err: &beamobs::Error) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let debug = format!("{err:?}");
    let kind = debug.split([' ', '(', '{']).next().unwrap_or("").to_string();
    let value = json!({ "status": "numerical-failure", "kind": kind, "message": err.to_string() });
    let text = serde_json::to_string_pretty(&value).map_err(std::io::Error::other)?;
    fs::write(dir.join("diagnostic.json"), text + "\n")
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn modes(ctx: &Context) -> Result<(), CliError> {
    let basis = ctx.basis(ctx.cfg.beam.n_modes)?;
    let n = basis.n_modes();
    let x = basis.grid();

    let mut header = vec!["x".to_string()];
    header.extend(columns("phi_", n));
    let rows: Vec<Vec<f64>> = (0..x.len())
        .map(|k| std::iter::once(x[k]).chain(basis.mode_shapes().row(k).iter().copied()).collect())
        .collect();
    ctx.table("modes", &header, &rows)?;

    let mut header = vec!["x".to_string()];
    header.extend(columns("phi_xx_", n));
    let curv_rows: Vec<Vec<f64>> = (0..x.len())
        .map(|k| std::iter::once(x[k]).chain(basis.curvatures().row(k).iter().copied()).collect())
        .collect();
    ctx.table("curvatures", &header, &curv_rows)?;

    let l = basis.spec().length();
    let header: Vec<String> = ["mode", "root_bl", "wavenumber", "omega", "norm", "scaled_residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let freq_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let bl = basis.roots()[i] * l;
            vec![
                (i + 1) as f64,
                bl,
                basis.roots()[i],
                basis.frequencies()[i],
                basis.norms()[i],
                characteristic_residual_scaled(bl),
            ]
        })
        .collect();
    ctx.table("frequencies", &header, &freq_rows)?;

    let mut shapes = SvgPlot::new("Mode shapes", "x [m]", "phi_i(x)");
    let mut curvs = SvgPlot::new("Mode shape curvatures", "x [m]", "phi_i,xx(x) [1/m^2]");
    for i in 0..n {
        shapes.line(&format!("mode {}", i + 1), (0..x.len()).map(|k| (x[k], rows[k][i + 1])).collect());
        curvs.line(&format!("mode {}", i + 1), (0..x.len()).map(|k| (x[k], curv_rows[k][i + 1])).collect());
    }
    ctx.svg("modes", &shapes)?;
    ctx.svg("curvatures", &curvs)?;
    Ok(())
}

pub fn scan(ctx: &Context) -> Result<(), CliError> {
    let counts = &ctx.cfg.scan.mode_counts;
    let max = *counts.iter().max().expect("validated non-empty");
    let full = ctx.basis(max)?;
    let x = full.grid().to_vec();
    for system in ctx.cfg.scan.system.variants() {
        let mut header = vec!["x".to_string()];
        let mut cols = Vec::new();
        for &n in counts {
            let basis = full.truncated(n)?;
            let grams = ctx.gramians(&basis, system)?;
            let js: Vec<f64> = grams
                .iter()
                .map(|g| beamobs::placement::metrics(g, ctx.cfg.scan.weight).j)
                .collect();
            header.push(format!("j_n{n}"));
            cols.push(js);
        }
        let rows: Vec<Vec<f64>> = (0..x.len())
            .map(|k| std::iter::once(x[k]).chain(cols.iter().map(|c| c[k])).collect())
            .collect();
        let name = format!("scan_{}", system.name());
        ctx.table(&name, &header, &rows)?;
        let mut plot = SvgPlot::new(&format!("Objective J(x), {} system", system.name()), "x [m]", "J").log_y();
        for (c, &n) in cols.iter().zip(counts) {
            plot.line(&format!("n_phi = {n}"), x.iter().copied().zip(c.iter().copied()).collect());
        }
        ctx.svg(&name, &plot)?;
    }
    Ok(())
}

pub fn place(ctx: &Context) -> Result<(), CliError> {
    let pc = &ctx.cfg.place;
    let basis = ctx.basis(pc.n_modes)?;
    let x = basis.grid().to_vec();
    for system in pc.system.variants() {
        let grams = ctx.gramians(&basis, system)?;
        let results = budget_sweep(&grams, &x, &pc.budgets, pc.weight, &ctx.relaxation_options());
        let solutions = results.into_iter().collect::<beamobs::Result<Vec<_>>>()?;
        let name = format!("placement_{}", system.name());

        let mut sensor_rows = Vec::new();
        let mut metric_rows = Vec::new();
        let mut markers = Vec::new();
        for (sol, &p) in solutions.iter().zip(&pc.budgets) {
            for (k, (&idx, &xs)) in sol.selection.iter().zip(&sol.locations).enumerate() {
                sensor_rows.push(vec![p as f64, k as f64, idx as f64, xs]);
                markers.push((p as f64, xs));
            }
            metric_rows.push(vec![
                p as f64,
                sol.metrics.j,
                sol.metrics.kappa,
                sol.metrics.nu,
                sol.relaxed.objective,
                sol.relaxed.lower_bound,
                sol.relaxed.iterations as f64,
            ]);
        }
        let header: Vec<String> = ["budget", "k", "index", "x"].iter().map(|s| s.to_string()).collect();
        ctx.table(&name, &header, &sensor_rows)?;
        let header: Vec<String> = ["budget", "j", "kappa", "nu", "relaxed_objective", "relaxed_lower_bound", "iterations"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        ctx.table(&format!("{name}_metrics"), &header, &metric_rows)?;
        ctx.json(
            &name,
            &json!({
                "system": system.name(),
                "n_modes": pc.n_modes,
                "weight": pc.weight,
                "candidates": x,
                "solutions": solutions,
            }),
        )?;
        let mut plot = SvgPlot::new(
            &format!("Selected sensor locations, {} system, n_phi = {}", system.name(), pc.n_modes),
            "budget p",
            "x [m]",
        );
        plot.markers("sensors", markers);
        ctx.svg(&name, &plot)?;
    }
    Ok(())
}

fn residual_plot(run: &beamobs::estimate::EstimationRun, state: usize, title: &str) -> SvgPlot {
    let mut plot = SvgPlot::new(title, "t [s]", "residual");
    let t = &run.times;
    plot.line("residual", t.iter().zip(&run.residuals).map(|(t, r)| (*t, r[state])).collect());
    plot.line("+3 sigma", t.iter().zip(&run.sigmas).map(|(t, s)| (*t, 3.0 * s[state])).collect());
    plot.line("-3 sigma", t.iter().zip(&run.sigmas).map(|(t, s)| (*t, -3.0 * s[state])).collect());
    plot
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    let ec = &ctx.cfg.estimate;
    let basis = ctx.basis(ec.n_modes)?;
    let x = basis.grid().to_vec();
    let grid = ctx.time_grid(&basis)?;
    let w0 = tip_load_deflection(&basis, ec.tip_deflection_m);
    let ic = project_initial_condition(&basis, &w0, &vec![0.0; x.len()])?;

    let mut placements: Vec<(String, PlacementSpec)> = Vec::new();
    for system in [SystemChoice::Truncated, SystemChoice::Continuum] {
        let grams = ctx.gramians(&basis, system)?;
        let sol = optimize_placement(&grams, &x, ec.budget, ec.weight, &ctx.relaxation_options())?;
        placements.push((format!("optimal-{}", system.name()), PlacementSpec::Fixed(sol.selection)));
    }
    let baselines = baseline_placements(&basis, ec.budget, ctx.cfg.seed)?;
    placements.push(("uniform".into(), PlacementSpec::Fixed(baselines.uniform)));
    placements.push(("curvature-peak".into(), PlacementSpec::Fixed(baselines.curvature_peak)));
    placements.push(("random".into(), PlacementSpec::Random { count: ec.budget }));

    let settings = ComparisonSettings {
        ukf: ec.ukf,
        horizon: grid.horizon(),
        dt: grid.dt(),
        n_trials: ec.trials,
        base_seed: ctx.cfg.seed,
        reference: "random".into(),
    };
    let table: ComparisonTable = compare_placements(&basis, &ic, &placements, &settings)?;

    let mut header = vec!["t".to_string()];
    header.extend(table.rows.iter().map(|r| r.name.clone()));
    let rows: Vec<Vec<f64>> = (0..table.times.len())
        .map(|k| std::iter::once(table.times[k]).chain(table.rows.iter().map(|r| r.median_trace[k])).collect())
        .collect();
    ctx.table("trace_comparison", &header, &rows)?;
    let mut plot = SvgPlot::new("Median trace of the state covariance", "t [s]", "trace P").log_y();
    for r in &table.rows {
        plot.line(&r.name, table.times.iter().copied().zip(r.median_trace.iter().copied()).collect());
    }
    ctx.svg("trace_comparison", &plot)?;

    for (name, spec) in &placements {
        let sensors = spec.indices(basis.grid_size(), ctx.cfg.seed)?;
        let sys = assemble_at_indices(&basis, &sensors)?;
        let config = ec.ukf.config(basis.n_modes(), sensors.len(), grid.dt());
        let run = run_estimation(&sys, &ic, &config, grid.horizon(), ctx.cfg.seed)?;
        let n = sys.state_dim();
        let mut header = vec!["t".to_string(), "trace".to_string(), "nees".to_string()];
        for i in 1..=n {
            header.push(format!("r_{i}"));
            header.push(format!("s3_{i}"));
        }
        let rows: Vec<Vec<f64>> = (0..run.times.len())
            .map(|k| {
                let mut row = vec![run.times[k], run.trace[k], run.nees[k]];
                for i in 0..n {
                    row.push(run.residuals[k][i]);
                    row.push(3.0 * run.sigmas[k][i]);
                }
                row
            })
            .collect();
        ctx.table(&format!("residuals_{name}"), &header, &rows)?;
        ctx.svg(
            &format!("residuals_{name}_eta1"),
            &residual_plot(&run, 0, &format!("eta_1 residual and 3-sigma bound, {name}")),
        )?;
        ctx.svg(
            &format!("residuals_{name}_etadot1"),
            &residual_plot(&run, basis.n_modes(), &format!("eta_dot_1 residual and 3-sigma bound, {name}")),
        )?;
    }

    let locations: serde_json::Map<String, serde_json::Value> = table
        .rows
        .iter()
        .map(|r| {
            let xs: Vec<f64> = r.first_trial_sensors.iter().map(|&i| x[i]).collect();
            (r.name.clone(), json!(xs))
        })
        .collect();
    ctx.json(
        "estimate_summary",
        &json!({
            "n_modes": ec.n_modes,
            "budget": ec.budget,
            "trials": ec.trials,
            "horizon": grid.horizon(),
            "dt": grid.dt(),
            "comparison": table,
            "first_trial_locations": locations,
        }),
    )?;
    Ok(())
}

pub fn repro(ctx: &Context) -> Result<(), CliError> {
    modes(ctx)?;
    scan(ctx)?;
    place(ctx)?;
    estimate(ctx)
}
