//! Unscented Kalman filtering of the modal state and Monte-Carlo comparison
//! of sensor layouts.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam_model::{assemble_at_indices, InitialCondition, ModalBasis, TruncatedSystem};
use crate::error::{Error, Result};
use crate::export::{finite_or_string, format_float, write_csv_row, write_json};
use crate::gramian::observability_matrix;
use crate::placement::random_placement;
use crate::simulate::{
    covariance_factor, propagate_closed_form, rk4_substeps, rk4_transition, standard_normal_vector,
    synthesize_measurements, TimeGrid,
};

/// `trace(P)` growth factor over the initial trace that flags divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Filter parameters and covariances for one sensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
    pub initial_covariance: DMatrix<f64>,
    pub dt: f64,
}

impl UkfConfig {
    pub fn state_dim(&self) -> usize {
        self.process_noise.nrows()
    }

    /// `lambda_s = alpha^2 (n + kappa) - n`.
    pub fn lambda(&self) -> f64 {
        let n = self.state_dim() as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn validate(&self, state_dim: usize, n_outputs: usize) -> Result<()> {
        for (what, m, d) in [
            ("process noise", &self.process_noise, state_dim),
            ("initial covariance", &self.initial_covariance, state_dim),
            ("measurement noise", &self.measurement_noise, n_outputs),
        ] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    actual: m.nrows(),
                });
            }
            covariance_factor(m)?;
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if state_dim as f64 + self.lambda() <= 0.0 {
            return Err(Error::invalid("kappa", "n + lambda must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Scalar filter settings from which a [`UkfConfig`] is built for any
/// number of modes and sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfSettings {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// `Q = process_noise * I`.
    pub process_noise: f64,
    /// `R = measurement_noise * I`.
    pub measurement_noise: f64,
    /// Initial variance of each `eta_i`.
    pub initial_displacement_variance: f64,
    /// Initial variance of each `eta_dot_i`.
    pub initial_velocity_variance: f64,
}

impl Default for UkfSettings {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
            process_noise: 1e-10,
            measurement_noise: 1e-4,
            initial_displacement_variance: 1e-2,
            initial_velocity_variance: 1e-4,
        }
    }
}

impl UkfSettings {
    pub fn config(&self, n_modes: usize, n_sensors: usize, dt: f64) -> UkfConfig {
        let n = 2 * n_modes;
        let p0 = DVector::from_fn(n, |i, _| {
            if i < n_modes {
                self.initial_displacement_variance
            } else {
                self.initial_velocity_variance
            }
        });
        UkfConfig {
            alpha: self.alpha,
            beta: self.beta,
            kappa: self.kappa,
            process_noise: DMatrix::identity(n, n) * self.process_noise,
            measurement_noise: DMatrix::identity(n_sensors, n_sensors) * self.measurement_noise,
            initial_covariance: DMatrix::from_diagonal(&p0),
            dt,
        }
    }
}

/// UKF bound to a truncated system. Prediction applies the RK4 map over
/// `dt`, subdivided so each substep honours the RK4 accuracy bound.
#[derive(Debug, Clone)]
pub struct UnscentedFilter {
    config: UkfConfig,
    transition: DMatrix<f64>,
    c: DMatrix<f64>,
    substeps: usize,
    gamma: f64,
    wm: Vec<f64>,
    wc: Vec<f64>,
}

impl UnscentedFilter {
    pub fn new(sys: &TruncatedSystem, config: UkfConfig) -> Result<Self> {
        let n = sys.state_dim();
        config.validate(n, sys.n_outputs())?;
        let lambda = config.lambda();
        let spread = n as f64 + lambda;
        let mut wm = vec![1.0 / (2.0 * spread); 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / spread;
        wc[0] = wm[0] + 1.0 - config.alpha * config.alpha + config.beta;
        let substeps = rk4_substeps(sys, config.dt);
        Ok(Self {
            transition: rk4_transition(sys, config.dt, substeps),
            c: sys.c().clone(),
            substeps,
            gamma: spread.sqrt(),
            wm,
            wc,
            config,
        })
    }

    pub fn config(&self) -> &UkfConfig {
        &self.config
    }
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Lower square-root factor of `cov` for sigma-point generation.
    /// Cholesky first, then once more with `1e-12 trace / n` jitter, then a
    /// symmetric eigen square root for semidefinite matrices.
    fn factor(&self, cov: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
        if let Some(ch) = cov.clone().cholesky() {
            return Ok(ch.l());
        }
        let n = cov.nrows();
        let jitter = 1e-12 * cov.trace() / n as f64;
        if jitter > 0.0 {
            let mut bumped = cov.clone();
            for i in 0..n {
                bumped[(i, i)] += jitter;
            }
            if let Some(ch) = bumped.cholesky() {
                return Ok(ch.l());
            }
        }
        covariance_factor(cov).map_err(|e| Error::Filter {
            step,
            reason: format!("covariance lost positive semidefiniteness: {e}"),
        })
    }

    fn sigma_points(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
        let n = mean.len();
        let s = self.factor(cov, step)? * self.gamma;
        let mut x = DMatrix::zeros(n, 2 * n + 1);
        x.set_column(0, mean);
        for i in 0..n {
            x.set_column(1 + i, &(mean + s.column(i)));
            x.set_column(1 + n + i, &(mean - s.column(i)));
        }
        Ok(x)
    }

    /// Weighted mean of transformed sigma points, accumulated relative to the
    /// central point: the central weight is of order `-1 / alpha^2`.
    fn weighted_mean(&self, y: &DMatrix<f64>) -> DVector<f64> {
        let y0 = y.column(0).clone_owned();
        let mut acc = DVector::zeros(y.nrows());
        for (i, col) in y.column_iter().enumerate().skip(1) {
            acc += (col - &y0) * self.wm[i];
        }
        y0 + acc
    }

    fn deviations(y: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut d = y.clone();
        for mut col in d.column_iter_mut() {
            col -= mean;
        }
        d
    }

    fn weighted_outer(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = a.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.wc[i];
        }
        scaled * b.transpose()
    }

    pub fn predict(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, step: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let x = self.sigma_points(mean, cov, step)?;
        let fx = &self.transition * x;
        let m = self.weighted_mean(&fx);
        let d = Self::deviations(&fx, &m);
        let p = self.weighted_outer(&d, &d) + &self.config.process_noise;
        Ok((m, symmetrize(p)))
    }

    pub fn update(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        y: &DVector<f64>,
        step: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let x = self.sigma_points(mean, cov, step)?;
        let yx = &self.c * &x;
        let y_hat = self.weighted_mean(&yx);
        let dy = Self::deviations(&yx, &y_hat);
        let dx = Self::deviations(&x, mean);
        let pyy = symmetrize(self.weighted_outer(&dy, &dy) + &self.config.measurement_noise);
        let pxy = self.weighted_outer(&dx, &dy);
        let chol = pyy.clone().cholesky().ok_or_else(|| Error::Filter {
            step,
            reason: "innovation covariance is singular".into(),
        })?;
        let gain = chol.solve(&pxy.transpose()).transpose();
        let m = mean + &gain * (y - y_hat);
        let p = cov - &gain * pyy * gain.transpose();
        Ok((m, symmetrize(p)))
    }

    /// Predict over one `dt`, then update with the measurement at the new time.
    pub fn step(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        y: &DVector<f64>,
        step: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (m, p) = self.predict(mean, cov, step)?;
        self.update(&m, &p, y, step)
    }
}

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// One UKF predict/update cycle.
pub fn ukf_step(
    filter: &UnscentedFilter,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    filter.step(mean, cov, y, 0)
}

/// Truth, estimates and covariance summaries of one filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationRun {
    pub times: Vec<f64>,
    pub sensors: Vec<f64>,
    pub truth: Vec<DVector<f64>>,
    pub estimates: Vec<DVector<f64>>,
    /// `estimate - truth`.
    pub residuals: Vec<DVector<f64>>,
    /// Square roots of the covariance diagonal.
    pub sigmas: Vec<DVector<f64>>,
    pub trace: Vec<f64>,
    /// Normalised estimation error squared `e^T P^-1 e`; NaN if `P` is singular.
    pub nees: Vec<f64>,
    pub seed: u64,
    pub diverged: bool,
}

impl EstimationRun {
    pub fn time_averaged_trace(&self) -> f64 {
        self.trace.iter().sum::<f64>() / self.trace.len() as f64
    }

    /// RMS over states of the final residual.
    pub fn terminal_rms(&self) -> f64 {
        let r = self.residuals.last().expect("run has at least one sample");
        (r.norm_squared() / r.len() as f64).sqrt()
    }

    /// Fraction of samples with every residual inside its 3-sigma bound.
    pub fn within_three_sigma(&self) -> f64 {
        let inside = self
            .residuals
            .iter()
            .zip(&self.sigmas)
            .filter(|(r, s)| r.iter().zip(s.iter()).all(|(ri, si)| ri.abs() <= 3.0 * si))
            .count();
        inside as f64 / self.residuals.len() as f64
    }

    /// Writes `t, trace, nees, r_1, s3_1, ..., r_n, s3_n` with `s3 = 3 sigma`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.residuals.first().map_or(0, |r| r.len());
        let mut header = vec!["t".to_string(), "trace".to_string(), "nees".to_string()];
        for i in 1..=n {
            header.push(format!("r_{i}"));
            header.push(format!("s3_{i}"));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![
                format_float(self.times[k]),
                format_float(self.trace[k]),
                format_float(self.nees[k]),
            ];
            for i in 0..n {
                row.push(format_float(self.residuals[k][i]));
                row.push(format_float(3.0 * self.sigmas[k][i]));
            }
            write_csv_row(&mut out, &row)?;
        }
        Ok(())
    }
}

fn nees(e: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    match p.clone().cholesky() {
        Some(ch) => e.dot(&ch.solve(e)),
        None => f64::NAN,
    }
}

/// Simulates the truth in closed form, synthesises noisy strains with
/// `seed` and filters them. The initial estimate is the truth plus a draw
/// from `N(0, P0)` on a separate stream of the same seed.
pub fn run_estimation(
    sys: &TruncatedSystem,
    ic: &InitialCondition,
    config: &UkfConfig,
    horizon: f64,
    seed: u64,
) -> Result<EstimationRun> {
    if sys.n_outputs() == 0 {
        return Err(Error::invalid("sensors", "at least one sensor is required"));
    }
    let rank = observability_matrix(sys).rank;
    if rank < sys.state_dim() {
        log::warn!(
            "sensor set {:?} is not observable (rank {rank} < {})",
            sys.sensor_locations(),
            sys.state_dim()
        );
    }
    let grid = TimeGrid::new(horizon, config.dt)?;
    let mut config = config.clone();
    config.dt = grid.dt();
    let filter = UnscentedFilter::new(sys, config)?;
    let truth = propagate_closed_form(sys, ic, &grid)?;
    let record = synthesize_measurements(&truth, &filter.config().measurement_noise, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let p0 = filter.config().initial_covariance.clone();
    let offset = covariance_factor(&p0)? * standard_normal_vector(&mut rng, sys.state_dim());
    let mut mean = &truth.states[0] + offset;
    let mut cov = p0.clone();
    let trace0 = p0.trace();

    let len = grid.n_samples();
    let mut estimates = Vec::with_capacity(len);
    let mut covs_diag = Vec::with_capacity(len);
    let mut traces = Vec::with_capacity(len);
    let mut nees_series = Vec::with_capacity(len);
    let mut diverged = false;
    for k in 0..len {
        if k > 0 {
            (mean, cov) = filter.step(&mean, &cov, &record.noisy[k], k)?;
        }
        let tr = cov.trace();
        if trace0 > 0.0 && tr > DIVERGENCE_FACTOR * trace0 {
            diverged = true;
        }
        nees_series.push(nees(&(&mean - &truth.states[k]), &cov));
        estimates.push(mean.clone());
        covs_diag.push(cov.diagonal().map(|v| v.max(0.0).sqrt()));
        traces.push(tr);
    }
    if diverged {
        log::warn!("filter diverged for sensors {:?} (seed {seed})", sys.sensor_locations());
    }
    let residuals = estimates.iter().zip(&truth.states).map(|(e, t)| e - t).collect();
    Ok(EstimationRun {
        times: truth.times.clone(),
        sensors: sys.sensor_locations().to_vec(),
        truth: truth.states,
        estimates,
        residuals,
        sigmas: covs_diag,
        trace: traces,
        nees: nees_series,
        seed,
        diverged,
    })
}

/// A layout to compare: fixed grid indices or a fresh random draw per seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementSpec {
    Fixed(Vec<usize>),
    Random { count: usize },
}

impl PlacementSpec {
    pub fn indices(&self, n_candidates: usize, seed: u64) -> Result<Vec<usize>> {
        match self {
            PlacementSpec::Fixed(v) => Ok(v.clone()),
            PlacementSpec::Random { count } => random_placement(n_candidates, *count, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSettings {
    pub ukf: UkfSettings,
    pub horizon: f64,
    pub dt: f64,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Name of the placement the reductions are measured against.
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    /// Median over trials of `trace(P)(t)`.
    #[serde(skip)]
    pub median_trace: Vec<f64>,
    /// Median over trials of the time-averaged `trace(P)`.
    pub median_time_averaged_trace: f64,
    /// Median over trials of the final residual RMS.
    pub median_terminal_rms: f64,
    /// `100 (1 - this / reference)` on the median time-averaged trace.
    #[serde(with = "finite_or_string")]
    pub percent_reduction: f64,
    pub diverged_trials: usize,
    /// Sensor grid indices used by the first trial.
    pub first_trial_sensors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    #[serde(skip)]
    pub times: Vec<f64>,
    pub reference: String,
    pub n_trials: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Writes `t` and the median `trace(P)` of every placement.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.rows.iter().map(|r| r.name.clone()));
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format_float(*t)];
            row.extend(self.rows.iter().map(|r| format_float(r.median_trace[k])));
            write_csv_row(&mut out, &row)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        write_json(out, self)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct TrialOutcome {
    sensors: Vec<usize>,
    trace: Vec<f64>,
    average: f64,
    terminal: f64,
    diverged: bool,
}

/// Runs every placement over `n_trials` seeds (`base_seed + trial`) and
/// summarises the covariance traces by their medians.
pub fn compare_placements(
    basis: &ModalBasis,
    ic: &InitialCondition,
    placements: &[(String, PlacementSpec)],
    settings: &ComparisonSettings,
) -> Result<ComparisonTable> {
    if placements.len() < 2 {
        return Err(Error::invalid("placements", "at least two placements are required"));
    }
    if settings.n_trials == 0 {
        return Err(Error::invalid("n_trials", "must be >= 1"));
    }
    let jobs: Vec<(usize, usize)> = (0..placements.len())
        .flat_map(|p| (0..settings.n_trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(p, trial)| {
            let seed = settings.base_seed.wrapping_add(trial as u64);
            let sensors = placements[p].1.indices(basis.grid_size(), seed)?;
            let sys = assemble_at_indices(basis, &sensors)?;
            let config = settings.ukf.config(basis.n_modes(), sensors.len(), settings.dt);
            let run = run_estimation(&sys, ic, &config, settings.horizon, seed)?;
            Ok(TrialOutcome {
                sensors,
                average: run.time_averaged_trace(),
                terminal: run.terminal_rms(),
                diverged: run.diverged,
                trace: run.trace,
            })
        })
        .collect::<Result<_>>()?;

    let times = TimeGrid::new(settings.horizon, settings.dt)?.times();
    let mut rows: Vec<ComparisonRow> = placements
        .iter()
        .enumerate()
        .map(|(p, (name, _))| {
            let trials = &outcomes[p * settings.n_trials..(p + 1) * settings.n_trials];
            let median_trace = (0..times.len())
                .map(|k| median(&mut trials.iter().map(|o| o.trace[k]).collect::<Vec<_>>()))
                .collect();
            ComparisonRow {
                name: name.clone(),
                median_trace,
                median_time_averaged_trace: median(&mut trials.iter().map(|o| o.average).collect::<Vec<_>>()),
                median_terminal_rms: median(&mut trials.iter().map(|o| o.terminal).collect::<Vec<_>>()),
                percent_reduction: f64::NAN,
                diverged_trials: trials.iter().filter(|o| o.diverged).count(),
                first_trial_sensors: trials[0].sensors.clone(),
            }
        })
        .collect();
    let reference = rows
        .iter()
        .find(|r| r.name == settings.reference)
        .map(|r| r.median_time_averaged_trace)
        .ok_or_else(|| Error::invalid("reference", format!("no placement named `{}`", settings.reference)))?;
    for row in &mut rows {
        row.percent_reduction = 100.0 * (1.0 - row.median_time_averaged_trace / reference);
    }
    Ok(ComparisonTable {
        times,
        reference: settings.reference.clone(),
        n_trials: settings.n_trials,
        rows,
    })
}

/// Static deflection of a cantilever under a tip load with tip
/// displacement `tip`: `w(x) = tip x^2 (3L - x) / (2 L^3)`.
pub fn tip_load_deflection(basis: &ModalBasis, tip: f64) -> Vec<f64> {
    let l = basis.spec().length();
    basis
        .grid()
        .iter()
        .map(|&x| tip * x * x * (3.0 * l - x) / (2.0 * l * l * l))
        .collect()
}
