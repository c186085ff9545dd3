//! Time propagation of the modal model and synthetic strain measurements.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::beam_model::{InitialCondition, ModalBasis, TruncatedSystem};
use crate::error::{Error, Result};
use crate::export::{format_float, write_csv_row};

/// Accuracy bound `dt * omega_max` for fixed-step RK4.
pub const RK4_STEP_LIMIT: f64 = 0.1;

/// Uniform time grid `t_k = k dt`, `k = 0..=n_steps`, ending exactly at the
/// horizon. The requested step is rounded so that it divides the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        let n_steps = ((horizon / dt).round() as usize).max(1);
        Ok(Self {
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn with_steps(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be >= 1"));
        }
        Self::new(horizon, horizon / n_steps as f64)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn n_samples(&self) -> usize {
        self.n_steps + 1
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|k| self.time(k)).collect()
    }
}

/// Cached `cos(omega_i t_k)` and `sin(omega_i t_k)` for a set of modes.
#[derive(Debug, Clone)]
pub struct ModalClock {
    frequencies: Vec<f64>,
    grid: TimeGrid,
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl ModalClock {
    pub fn new(frequencies: &[f64], grid: TimeGrid) -> Self {
        let times = grid.times();
        let (cos, sin) = frequencies
            .iter()
            .map(|&w| times.iter().map(|&t| (w * t).cos()).zip(times.iter().map(|&t| (w * t).sin())).unzip())
            .unzip();
        Self {
            frequencies: frequencies.to_vec(),
            grid,
            cos,
            sin,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }
    /// `cos(omega_i t_k)` for all k.
    pub fn cos(&self, mode: usize) -> &[f64] {
        &self.cos[mode]
    }
    /// `sin(omega_i t_k)` for all k.
    pub fn sin(&self, mode: usize) -> &[f64] {
        &self.sin[mode]
    }

    /// `eta_i(t_k)` for initial displacement `a1` and velocity `a2`.
    pub fn displacement(&self, mode: usize, a1: f64, a2: f64, k: usize) -> f64 {
        a1 * self.cos[mode][k] + a2 * self.sin[mode][k] / self.frequencies[mode]
    }

    pub fn velocity(&self, mode: usize, a1: f64, a2: f64, k: usize) -> f64 {
        -a1 * self.frequencies[mode] * self.sin[mode][k] + a2 * self.cos[mode][k]
    }

    /// Output of one sensor with strain gains `gains` for modal initial
    /// coefficients `(a1, a2)`.
    pub fn sensor_output(&self, gains: &[f64], a1: &[f64], a2: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.grid.n_samples()];
        for (i, &g) in gains.iter().enumerate() {
            if g == 0.0 || (a1[i] == 0.0 && a2[i] == 0.0) {
                continue;
            }
            let (c1, c2) = (g * a1[i], g * a2[i] / self.frequencies[i]);
            for (k, yk) in y.iter_mut().enumerate() {
                *yk += c1 * self.cos[i][k] + c2 * self.sin[i][k];
            }
        }
        y
    }
}

/// States `[eta; eta_dot]` and outputs sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t, H_1..H_n, y_1..y_p`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let p = self.outputs.first().map_or(0, |y| y.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("h_{i}")));
        header.extend((1..=p).map(|i| format!("y_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format_float(self.times[k])];
            row.extend(self.states[k].iter().map(|v| format_float(*v)));
            row.extend(self.outputs[k].iter().map(|v| format_float(*v)));
            write_csv_row(&mut out, &row)?;
        }
        Ok(())
    }
}

/// Exact modal solution
/// `eta_i(t) = alpha_1i cos(omega_i t) + alpha_2i sin(omega_i t) / omega_i`.
pub fn propagate_closed_form(sys: &TruncatedSystem, ic: &InitialCondition, grid: &TimeGrid) -> Result<Trajectory> {
    let n = sys.n_modes();
    if ic.alpha_displacement.len() != n || ic.alpha_velocity.len() != n {
        return Err(Error::DimensionMismatch {
            what: "initial condition modes",
            expected: n,
            actual: ic.alpha_displacement.len(),
        });
    }
    let clock = ModalClock::new(sys.frequencies(), *grid);
    Ok(closed_form_with_clock(sys, &ic.alpha_displacement, &ic.alpha_velocity, &clock))
}

/// Closed-form trajectory from a modal state `[eta(0); eta_dot(0)]`.
pub fn propagate_closed_form_state(sys: &TruncatedSystem, state: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let n = sys.n_modes();
    if state.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            what: "modal state",
            expected: 2 * n,
            actual: state.len(),
        });
    }
    let clock = ModalClock::new(sys.frequencies(), *grid);
    Ok(closed_form_with_clock(sys, &state[..n], &state[n..], &clock))
}

pub(crate) fn closed_form_with_clock(sys: &TruncatedSystem, a1: &[f64], a2: &[f64], clock: &ModalClock) -> Trajectory {
    let n = sys.n_modes();
    let grid = clock.grid();
    let mut states = Vec::with_capacity(grid.n_samples());
    let mut outputs = Vec::with_capacity(grid.n_samples());
    for k in 0..grid.n_samples() {
        let mut h = DVector::zeros(2 * n);
        for i in 0..n {
            h[i] = clock.displacement(i, a1[i], a2[i], k);
            h[n + i] = clock.velocity(i, a1[i], a2[i], k);
        }
        outputs.push(sys.c() * &h);
        states.push(h);
    }
    Trajectory {
        times: grid.times(),
        states,
        outputs,
    }
}

/// What to do when a step breaks the RK4 accuracy bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepPolicy {
    #[default]
    Reject,
    Warn,
}

fn check_step(sys: &TruncatedSystem, dt: f64, policy: StepPolicy) -> Result<()> {
    let product = dt * sys.max_frequency();
    if product >= RK4_STEP_LIMIT {
        match policy {
            StepPolicy::Reject => {
                return Err(Error::StepTooLarge {
                    dt,
                    product,
                    limit: RK4_STEP_LIMIT,
                })
            }
            StepPolicy::Warn => log::warn!("dt * omega_max = {product:.3} exceeds the RK4 bound {RK4_STEP_LIMIT}"),
        }
    }
    Ok(())
}

fn rk4_step(a: &DMatrix<f64>, h: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = a * h;
    let k2 = a * (h + &k1 * (0.5 * dt));
    let k3 = a * (h + &k2 * (0.5 * dt));
    let k4 = a * (h + &k3 * dt);
    h + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Fixed-step RK4 integration of `H' = A H`.
pub fn propagate_numeric(sys: &TruncatedSystem, h0: &[f64], grid: &TimeGrid, policy: StepPolicy) -> Result<Trajectory> {
    if h0.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: sys.state_dim(),
            actual: h0.len(),
        });
    }
    check_step(sys, grid.dt(), policy)?;
    let mut h = DVector::from_column_slice(h0);
    let mut states = Vec::with_capacity(grid.n_samples());
    let mut outputs = Vec::with_capacity(grid.n_samples());
    for k in 0..grid.n_samples() {
        if k > 0 {
            h = rk4_step(sys.a(), &h, grid.dt());
        }
        outputs.push(sys.c() * &h);
        states.push(h.clone());
    }
    Ok(Trajectory {
        times: grid.times(),
        states,
        outputs,
    })
}

/// Linear map of `substeps` RK4 steps of size `dt / substeps`.
///
/// For the linear modal model this is exactly the map applied by
/// [`propagate_numeric`], built once by integrating the identity columns.
pub fn rk4_transition(sys: &TruncatedSystem, dt: f64, substeps: usize) -> DMatrix<f64> {
    let n = sys.state_dim();
    let h = dt / substeps.max(1) as f64;
    let mut m = DMatrix::identity(n, n);
    for mut col in m.column_iter_mut() {
        let mut v = col.clone_owned();
        for _ in 0..substeps.max(1) {
            v = rk4_step(sys.a(), &v, h);
        }
        col.copy_from(&v);
    }
    m
}

/// Smallest number of RK4 substeps over `dt` that honours the accuracy bound.
pub fn rk4_substeps(sys: &TruncatedSystem, dt: f64) -> usize {
    let product = dt * sys.max_frequency();
    ((product / RK4_STEP_LIMIT).floor() as usize + 1).max(1)
}

/// Lower factor `L` with `L L^T = cov`. Positive semidefinite but singular
/// covariances fall back to a symmetric eigen square root.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::DimensionMismatch {
            what: "covariance columns",
            expected: cov.nrows(),
            actual: cov.ncols(),
        });
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let scale = sym.amax();
    if (cov - &sym).amax() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::invalid("covariance", "matrix is not symmetric"));
    }
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

pub(crate) fn standard_normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Clean and noisy strain records.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub times: Vec<f64>,
    pub clean: Vec<DVector<f64>>,
    pub noisy: Vec<DVector<f64>>,
    pub noise_covariance: DMatrix<f64>,
    pub seed: u64,
}

impl MeasurementRecord {
    /// Writes `t, y_1..y_p, y_noisy_1..y_noisy_p`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = self.noise_covariance.nrows();
        let mut header = vec!["t".to_string()];
        header.extend((1..=p).map(|i| format!("y_{i}")));
        header.extend((1..=p).map(|i| format!("y_noisy_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![format_float(self.times[k])];
            row.extend(self.clean[k].iter().map(|v| format_float(*v)));
            row.extend(self.noisy[k].iter().map(|v| format_float(*v)));
            write_csv_row(&mut out, &row)?;
        }
        Ok(())
    }
}

/// Adds `L z`, `z ~ N(0, I)`, `L L^T = noise_covariance`, to every output
/// sample. Deterministic for a given seed.
pub fn synthesize_measurements(traj: &Trajectory, noise_covariance: &DMatrix<f64>, seed: u64) -> Result<MeasurementRecord> {
    let p = traj.outputs.first().map_or(0, |y| y.len());
    if noise_covariance.nrows() != p {
        return Err(Error::DimensionMismatch {
            what: "noise covariance",
            expected: p,
            actual: noise_covariance.nrows(),
        });
    }
    let factor = covariance_factor(noise_covariance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = traj
        .outputs
        .iter()
        .map(|y| y + &factor * standard_normal_vector(&mut rng, p))
        .collect();
    Ok(MeasurementRecord {
        times: traj.times.clone(),
        clean: traj.outputs.clone(),
        noisy,
        noise_covariance: noise_covariance.clone(),
        seed,
    })
}

/// Which half of the initial state a perturbation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbationKind {
    Displacement,
    Velocity,
}

/// Outputs at `sensor_x` for the initial condition with mode `mode`
/// (zero-based) added and subtracted with amplitude `epsilon`, i.e. for
/// `w0 +- eps phi_j` or `w0_dot +- eps phi_j`.
///
/// Orthogonality makes the perturbed modal coefficients exactly
/// `alpha_j +- eps`, so the perturbation is applied to the coefficients.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_output_pair(
    basis: &ModalBasis,
    ic: &InitialCondition,
    mode: usize,
    kind: PerturbationKind,
    epsilon: f64,
    sensor_x: f64,
    grid: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let idx = basis.nearest_index(sensor_x)?;
    let clock = ModalClock::new(basis.frequencies(), *grid);
    perturbed_output_pair_with(&clock, &basis.strain_gains(idx), ic, mode, kind, epsilon)
}

/// [`perturbed_output_pair`] with precomputed trig tables and gains.
pub fn perturbed_output_pair_with(
    clock: &ModalClock,
    gains: &[f64],
    ic: &InitialCondition,
    mode: usize,
    kind: PerturbationKind,
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = clock.frequencies().len();
    if mode >= n {
        return Err(Error::invalid("mode", format!("must be < {n}, got {mode}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    let run = |sign: f64| {
        let mut a1 = ic.alpha_displacement.clone();
        let mut a2 = ic.alpha_velocity.clone();
        match kind {
            PerturbationKind::Displacement => a1[mode] += sign * epsilon,
            PerturbationKind::Velocity => a2[mode] += sign * epsilon,
        }
        clock.sensor_output(gains, &a1, &a2)
    };
    Ok((run(1.0), run(-1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam_model::{assemble_truncated_system, build_modal_basis, BeamSpec};

    fn setup(n: usize, sensors: &[f64]) -> (ModalBasis, TruncatedSystem) {
        let basis = build_modal_basis(&BeamSpec::aluminum_strip(), n, 501).unwrap();
        let sys = assemble_truncated_system(&basis, sensors).unwrap();
        (basis, sys)
    }

    #[test]
    fn grid_ends_at_horizon() {
        let g = TimeGrid::new(1.0, 0.3).unwrap();
        assert_eq!(g.n_steps(), 3);
        assert!((g.horizon() - 1.0).abs() < 1e-15);
        assert!(TimeGrid::new(0.0, 0.1).is_err());
        assert!(TimeGrid::new(1.0, -0.1).is_err());
    }

    #[test]
    fn mode_one_cosine() {
        let (basis, sys) = setup(3, &[0.0]);
        let ic = InitialCondition::from_modal(&basis, &[1.0, 0.0, 0.0], &[0.0; 3]).unwrap();
        let grid = TimeGrid::with_steps(basis.slowest_period(), 200).unwrap();
        let traj = propagate_closed_form(&sys, &ic, &grid).unwrap();
        let w = basis.frequencies()[0];
        for (t, h) in traj.times.iter().zip(&traj.states) {
            assert!((h[0] - (w * t).cos()).abs() < 1e-14);
            assert_eq!(h[1], 0.0);
        }
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let (basis, sys) = setup(4, &[0.3, 1.1]);
        let grid = TimeGrid::with_steps(1.0, 50).unwrap();
        let traj = propagate_closed_form(&sys, &InitialCondition::zero(&basis), &grid).unwrap();
        assert!(traj.states.iter().all(|h| h.amax() == 0.0));
        assert!(traj.outputs.iter().all(|y| y.amax() == 0.0));
    }

    #[test]
    fn velocity_only_peak() {
        let (basis, sys) = setup(2, &[0.0]);
        let ic = InitialCondition::from_modal(&basis, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let grid = TimeGrid::with_steps(basis.slowest_period(), 4000).unwrap();
        let traj = propagate_closed_form(&sys, &ic, &grid).unwrap();
        let peak = traj.states.iter().map(|h| h[0].abs()).fold(0.0, f64::max);
        let w = basis.frequencies()[0];
        assert!((peak - 1.0 / w).abs() < 1e-6 / w);
    }

    #[test]
    fn modal_energy_is_conserved() {
        let (basis, sys) = setup(5, &[0.2]);
        let ic = InitialCondition::from_modal(&basis, &[0.01, -0.02, 0.003, 0.0, 1e-4], &[0.5, 0.1, -0.2, 0.05, 0.0]).unwrap();
        let grid = TimeGrid::with_steps(2.0, 1000).unwrap();
        let traj = propagate_closed_form(&sys, &ic, &grid).unwrap();
        for i in 0..5 {
            let w = basis.frequencies()[i];
            let e0 = w * w * traj.states[0][i].powi(2) + traj.states[0][5 + i].powi(2);
            for h in &traj.states {
                let e = w * w * h[i].powi(2) + h[5 + i].powi(2);
                assert!((e - e0).abs() <= 1e-10 * e0.max(f64::MIN_POSITIVE), "mode {i}");
            }
        }
    }

    #[test]
    fn rk4_degenerate_dynamics_are_constant() {
        let sys = TruncatedSystem::from_gains(&[0.0], &DMatrix::from_element(1, 1, 1.0), vec![0.0]).unwrap();
        let grid = TimeGrid::with_steps(1.0, 10).unwrap();
        let traj = propagate_numeric(&sys, &[0.3, 0.0], &grid, StepPolicy::Reject).unwrap();
        assert!(traj.states.iter().all(|h| h[0] == 0.3 && h[1] == 0.0));
    }

    #[test]
    fn rk4_returns_after_one_period() {
        let (basis, _) = setup(1, &[0.0]);
        let sys = assemble_truncated_system(&basis, &[0.0]).unwrap();
        let period = basis.slowest_period();
        let grid = TimeGrid::with_steps(period, 200).unwrap();
        let h0 = [0.01, 0.05];
        let traj = propagate_numeric(&sys, &h0, &grid, StepPolicy::Reject).unwrap();
        let end = traj.states.last().unwrap();
        let w = basis.frequencies()[0];
        // Compare in energy-normalised coordinates.
        let scale = (w * w * h0[0] * h0[0] + h0[1] * h0[1]).sqrt();
        let err = (w * w * (end[0] - h0[0]).powi(2) + (end[1] - h0[1]).powi(2)).sqrt();
        assert!(err < 1e-6 * scale, "err {err:e}");
    }

    #[test]
    fn rk4_rejects_large_steps() {
        let (basis, sys) = setup(4, &[0.0]);
        let grid = TimeGrid::with_steps(basis.slowest_period(), 100).unwrap();
        let err = propagate_numeric(&sys, &[0.0; 8], &grid, StepPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
        assert!(propagate_numeric(&sys, &[0.0; 8], &grid, StepPolicy::Warn).is_ok());
    }

    #[test]
    fn transition_matrix_matches_stepping() {
        let (basis, sys) = setup(3, &[0.4]);
        let dt = basis.slowest_period() / 500.0;
        let subs = rk4_substeps(&sys, dt);
        assert!(dt / subs as f64 * sys.max_frequency() < RK4_STEP_LIMIT);
        let f = rk4_transition(&sys, dt, subs);
        let h0 = DVector::from_vec(vec![0.01, 0.0, -0.003, 0.1, 0.2, 0.0]);
        let fine = TimeGrid::with_steps(dt, subs).unwrap();
        let stepped = propagate_numeric(&sys, h0.as_slice(), &fine, StepPolicy::Reject).unwrap();
        let diff = (&f * &h0 - stepped.states.last().unwrap()).amax();
        assert!(diff < 1e-15 * h0.amax().max(1.0) * 10.0);
    }

    #[test]
    fn zero_noise_reproduces_clean_outputs() {
        let (basis, sys) = setup(3, &[0.1, 0.5]);
        let ic = InitialCondition::from_modal(&basis, &[0.01, 0.0, 0.0], &[0.0; 3]).unwrap();
        let traj = propagate_closed_form(&sys, &ic, &TimeGrid::with_steps(0.5, 20).unwrap()).unwrap();
        let rec = synthesize_measurements(&traj, &DMatrix::zeros(2, 2), 7).unwrap();
        assert_eq!(rec.clean, rec.noisy);
    }

    #[test]
    fn measurements_are_deterministic_per_seed() {
        let (basis, sys) = setup(2, &[0.1]);
        let traj = propagate_closed_form(&sys, &InitialCondition::zero(&basis), &TimeGrid::with_steps(0.5, 20).unwrap()).unwrap();
        let r = DMatrix::from_element(1, 1, 1e-4);
        let a = synthesize_measurements(&traj, &r, 11).unwrap();
        let b = synthesize_measurements(&traj, &r, 11).unwrap();
        let c = synthesize_measurements(&traj, &r, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.noisy, c.noisy);
    }

    #[test]
    fn non_psd_noise_is_rejected() {
        let (basis, sys) = setup(2, &[0.1, 0.2]);
        let traj = propagate_closed_form(&sys, &InitialCondition::zero(&basis), &TimeGrid::with_steps(0.5, 4).unwrap()).unwrap();
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            synthesize_measurements(&traj, &r, 1),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn central_difference_matches_closed_form() {
        let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 4, 501).unwrap();
        let ic = InitialCondition::from_modal(&basis, &[0.0; 4], &[0.0; 4]).unwrap();
        let grid = TimeGrid::with_steps(basis.slowest_period(), 400).unwrap();
        let x = 0.6;
        let idx = basis.nearest_index(x).unwrap();
        let gain = basis.strain_gains(idx)[2];
        let w = basis.frequencies()[2];
        for kind in [PerturbationKind::Displacement, PerturbationKind::Velocity] {
            let (p, m) = perturbed_output_pair(&basis, &ic, 2, kind, 1e-3, x, &grid).unwrap();
            for (k, t) in grid.times().iter().enumerate() {
                let expected = match kind {
                    PerturbationKind::Displacement => gain * (w * t).cos(),
                    PerturbationKind::Velocity => gain * (w * t).sin() / w,
                };
                let got = (p[k] - m[k]) / 2e-3;
                assert!((got - expected).abs() < 1e-10 * gain.abs());
            }
        }
    }

    #[test]
    fn perturbation_rejects_bad_inputs() {
        let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 2, 501).unwrap();
        let ic = InitialCondition::zero(&basis);
        let grid = TimeGrid::with_steps(0.1, 10).unwrap();
        assert!(perturbed_output_pair(&basis, &ic, 2, PerturbationKind::Velocity, 1e-3, 0.0, &grid).is_err());
        assert!(perturbed_output_pair(&basis, &ic, 0, PerturbationKind::Velocity, 0.0, 0.0, &grid).is_err());
    }
}
