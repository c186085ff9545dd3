//! Observability Gramians, the observability matrix and the single-sensor
//! determinant test.
//!
//! State ordering is `[eta; eta_dot]` throughout. The output of one sensor
//! for an initial state `[a1; a2]` is
//! `y(t) = sum_i g_i (a1_i cos(w_i t) + a2_i sin(w_i t) / w_i)`, so every
//! Gramian entry reduces to an integral of products of these kernels.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam_model::{ModalBasis, TruncatedSystem};
use crate::error::{Error, Result};
use crate::export::{format_float, json_number, write_csv_row, write_json};
use crate::quadrature::TimeQuadrature;
use crate::simulate::{perturbed_output_pair_with, ModalClock, PerturbationKind, TimeGrid};

/// Default perturbation size for empirical Gramians.
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramianKind {
    TruncatedAnalytical,
    TruncatedEmpirical,
    ContinuumAnalytical,
    ContinuumEmpirical,
}

impl GramianKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GramianKind::TruncatedAnalytical => "truncated-analytical",
            GramianKind::TruncatedEmpirical => "truncated-empirical",
            GramianKind::ContinuumAnalytical => "continuum-analytical",
            GramianKind::ContinuumEmpirical => "continuum-empirical",
        }
    }

    pub fn is_continuum(self) -> bool {
        matches!(self, GramianKind::ContinuumAnalytical | GramianKind::ContinuumEmpirical)
    }
}

/// Symmetric PSD Gramian with the settings it was computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    matrix: DMatrix<f64>,
    kind: GramianKind,
    sensors: Vec<f64>,
    horizon: f64,
    epsilon: Option<f64>,
    n_modes: usize,
}

impl Gramian {
    pub fn new(
        matrix: DMatrix<f64>,
        kind: GramianKind,
        sensors: Vec<f64>,
        horizon: f64,
        epsilon: Option<f64>,
        n_modes: usize,
    ) -> Self {
        let matrix = symmetrize(matrix);
        Self {
            matrix,
            kind,
            sensors,
            horizon,
            epsilon,
            n_modes,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
    pub fn kind(&self) -> GramianKind {
        self.kind
    }
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    pub fn sensors(&self) -> &[f64] {
        &self.sensors
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.matrix.clone().symmetric_eigen().eigenvalues
    }

    /// Frobenius distance to `other` relative to the norm of `other`.
    pub fn relative_error(&self, other: &Gramian) -> f64 {
        relative_frobenius(&self.matrix, &other.matrix)
    }

    /// Writes `# key=value` metadata lines followed by the matrix rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# kind={}", self.kind.as_str())?;
        let sensors: Vec<String> = self.sensors.iter().map(|x| format_float(*x)).collect();
        writeln!(out, "# sensors={}", sensors.join(";"))?;
        writeln!(out, "# horizon={}", format_float(self.horizon))?;
        match self.epsilon {
            Some(e) => writeln!(out, "# epsilon={}", format_float(e))?,
            None => writeln!(out, "# epsilon=none")?,
        }
        writeln!(out, "# n_modes={}", self.n_modes)?;
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("w_{j}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.matrix.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            write_csv_row(&mut out, &fields)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .matrix
            .row_iter()
            .map(|r| serde_json::Value::Array(r.iter().map(|v| json_number(*v)).collect()))
            .collect();
        serde_json::json!({
            "kind": self.kind.as_str(),
            "sensors": self.sensors,
            "horizon": json_number(self.horizon),
            "epsilon": self.epsilon.map(json_number),
            "n_modes": self.n_modes,
            "matrix": rows,
        })
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        write_json(out, &self.to_json())
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn relative_frobenius(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let diff = (a - reference).norm();
    let scale = reference.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("horizon", format!("must be > 0, got {horizon}")))
    }
}

fn check_frequencies(frequencies: &[f64]) -> Result<()> {
    match frequencies.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        Some(w) => Err(Error::invalid("frequencies", format!("must be > 0, got {w}"))),
        None => Ok(()),
    }
}

/// `sin(c t) / c`, with the limit `t` at `c = 0`.
fn sin_over(c: f64, t: f64) -> f64 {
    if c == 0.0 {
        t
    } else {
        (c * t).sin() / c
    }
}

/// `(1 - cos(c t)) / c`, written as `2 sin^2(c t / 2) / c` to avoid
/// cancellation; the limit at `c = 0` is 0.
fn one_minus_cos_over(c: f64, t: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        let s = (0.5 * c * t).sin();
        2.0 * s * s / c
    }
}

/// Exact integrals over `[0, t]` of the modal kernel products.
///
/// `cc[i][j] = int cos(w_i s) cos(w_j s)`, `ss[i][j] = int sin sin / (w_i w_j)`
/// and `cs[i][j] = int cos(w_i s) sin(w_j s) / w_j`.
#[derive(Debug, Clone)]
pub struct TrigIntegrals {
    horizon: f64,
    cc: DMatrix<f64>,
    ss: DMatrix<f64>,
    cs: DMatrix<f64>,
}

impl TrigIntegrals {
    pub fn new(frequencies: &[f64], horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        check_frequencies(frequencies)?;
        let n = frequencies.len();
        let t = horizon;
        let mut cc = DMatrix::zeros(n, n);
        let mut ss = DMatrix::zeros(n, n);
        let mut cs = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (frequencies[i], frequencies[j]);
                let diff = if i == j { 0.0 } else { a - b };
                cc[(i, j)] = 0.5 * (sin_over(diff, t) + sin_over(a + b, t));
                ss[(i, j)] = 0.5 * (sin_over(diff, t) - sin_over(a + b, t)) / (a * b);
                cs[(i, j)] = 0.5 * (one_minus_cos_over(a + b, t) + one_minus_cos_over(-diff, t)) / b;
            }
        }
        Ok(Self { horizon, cc, ss, cs })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Gramian for output-gain product `gg = G^T G` (n_phi x n_phi).
    pub fn gramian(&self, gg: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.cc.nrows();
        let mut w = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let g = gg[(i, j)];
                w[(i, j)] = g * self.cc[(i, j)];
                w[(n + i, n + j)] = g * self.ss[(i, j)];
                w[(i, n + j)] = g * self.cs[(i, j)];
                w[(n + j, i)] = w[(i, n + j)];
            }
        }
        w
    }
}

/// `W = int_0^t exp(A^T s) C^T C exp(A s) ds` in closed form.
pub fn truncated_analytical_gramian(sys: &TruncatedSystem, horizon: f64) -> Result<Gramian> {
    let trig = TrigIntegrals::new(sys.frequencies(), horizon)?;
    let g = sys.strain_gains();
    let w = trig.gramian(&(g.transpose() * &g));
    Ok(Gramian::new(
        w,
        GramianKind::TruncatedAnalytical,
        sys.sensor_locations().to_vec(),
        horizon,
        None,
        sys.n_modes(),
    ))
}

/// Single-sensor truncated analytical Gramians at every grid point.
pub fn truncated_analytical_sweep(basis: &ModalBasis, horizon: f64) -> Result<Vec<Gramian>> {
    let trig = TrigIntegrals::new(basis.frequencies(), horizon)?;
    Ok((0..basis.grid_size())
        .into_par_iter()
        .map(|idx| {
            let g = DVector::from_vec(basis.strain_gains(idx));
            Gramian::new(
                trig.gramian(&(&g * g.transpose())),
                GramianKind::TruncatedAnalytical,
                vec![basis.grid()[idx]],
                horizon,
                None,
                basis.n_modes(),
            )
        })
        .collect())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")))
    }
}

fn sensor_gains(basis: &ModalBasis, sensors: &[f64]) -> Result<Vec<Vec<f64>>> {
    sensors
        .iter()
        .map(|&x| basis.nearest_index(x).map(|idx| basis.strain_gains(idx)))
        .collect()
}

/// Empirical Gramian from `+-epsilon` perturbations of each of the `2 n_phi`
/// initial states about the zero state,
/// `W_ij = 1/(4 eps^2) int dy_i^T dy_j`.
pub fn truncated_empirical_gramian(
    basis: &ModalBasis,
    sensors: &[f64],
    epsilon: f64,
    grid: &TimeGrid,
    rule: TimeQuadrature,
) -> Result<Gramian> {
    check_epsilon(epsilon)?;
    if sensors.is_empty() {
        return Err(Error::invalid("sensors", "at least one sensor is required"));
    }
    let n = basis.n_modes();
    let gains = sensor_gains(basis, sensors)?;
    let clock = ModalClock::new(basis.frequencies(), *grid);
    let ic = crate::beam_model::InitialCondition::zero(basis);
    let weights = rule.weights(grid.n_samples(), grid.dt());

    // dy[state][sensor] is the output difference time series.
    let dy: Vec<Vec<Vec<f64>>> = (0..2 * n)
        .into_par_iter()
        .map(|state| {
            let (mode, kind) = if state < n {
                (state, PerturbationKind::Displacement)
            } else {
                (state - n, PerturbationKind::Velocity)
            };
            gains
                .iter()
                .map(|g| {
                    let (plus, minus) = perturbed_output_pair_with(&clock, g, &ic, mode, kind, epsilon)?;
                    Ok(plus.iter().zip(&minus).map(|(p, m)| p - m).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / (4.0 * epsilon * epsilon);
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..2 * n {
        for j in i..2 * n {
            let mut acc = 0.0;
            for s in 0..gains.len() {
                acc += weights
                    .iter()
                    .zip(&dy[i][s])
                    .zip(&dy[j][s])
                    .map(|((wk, a), b)| wk * a * b)
                    .sum::<f64>();
            }
            w[(i, j)] = acc * scale;
            w[(j, i)] = acc * scale;
        }
    }
    Ok(Gramian::new(
        w,
        GramianKind::TruncatedEmpirical,
        sensors.to_vec(),
        grid.horizon(),
        Some(epsilon),
        n,
    ))
}

/// 2x2 Gram matrix of two sampled columns.
fn gram2(c: &[f64], s: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let (mut w11, mut w12, mut w22) = (0.0, 0.0, 0.0);
    for ((wk, a), b) in weights.iter().zip(c).zip(s) {
        w11 += wk * a * a;
        w12 += wk * a * b;
        w22 += wk * b * b;
    }
    DMatrix::from_row_slice(2, 2, &[w11, w12, w12, w22])
}

fn continuum_analytical_from_gains(clock: &ModalClock, gains: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let n = gains.len();
    let ones = vec![1.0; n];
    let zeros = vec![0.0; n];
    let cos_col = clock.sensor_output(gains, &ones, &zeros);
    let sin_col = clock.sensor_output(gains, &zeros, &ones);
    gram2(&cos_col, &sin_col, weights)
}

/// Continuum Gramian at `x` with the modal sum truncated at the basis size.
///
/// The two columns are `sum_j g_j cos(w_j t)` and `sum_j g_j sin(w_j t) / w_j`.
pub fn continuum_analytical_gramian(basis: &ModalBasis, x: f64, grid: &TimeGrid, rule: TimeQuadrature) -> Result<Gramian> {
    let idx = basis.nearest_index(x)?;
    let clock = ModalClock::new(basis.frequencies(), *grid);
    let weights = rule.weights(grid.n_samples(), grid.dt());
    let w = continuum_analytical_from_gains(&clock, &basis.strain_gains(idx), &weights);
    Ok(Gramian::new(
        w,
        GramianKind::ContinuumAnalytical,
        vec![basis.grid()[idx]],
        grid.horizon(),
        None,
        basis.n_modes(),
    ))
}

/// [`continuum_analytical_gramian`] at every grid point.
pub fn continuum_analytical_sweep(basis: &ModalBasis, grid: &TimeGrid, rule: TimeQuadrature) -> Vec<Gramian> {
    let clock = ModalClock::new(basis.frequencies(), *grid);
    let weights = rule.weights(grid.n_samples(), grid.dt());
    (0..basis.grid_size())
        .into_par_iter()
        .map(|idx| {
            Gramian::new(
                continuum_analytical_from_gains(&clock, &basis.strain_gains(idx), &weights),
                GramianKind::ContinuumAnalytical,
                vec![basis.grid()[idx]],
                grid.horizon(),
                None,
                basis.n_modes(),
            )
        })
        .collect()
}

/// Per-mode perturbation sizes for the continuum empirical Gramian.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSizes {
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl PerturbationSizes {
    pub fn uniform(n_modes: usize, epsilon: f64) -> Self {
        Self {
            displacement: vec![epsilon; n_modes],
            velocity: vec![epsilon; n_modes],
        }
    }

    fn validate(&self, n_modes: usize) -> Result<()> {
        for v in [&self.displacement, &self.velocity] {
            if v.len() != n_modes {
                return Err(Error::DimensionMismatch {
                    what: "perturbation sizes",
                    expected: n_modes,
                    actual: v.len(),
                });
            }
            for &e in v {
                check_epsilon(e)?;
            }
        }
        Ok(())
    }

    fn representative(&self) -> f64 {
        self.displacement.iter().chain(&self.velocity).copied().fold(f64::INFINITY, f64::min)
    }
}

fn continuum_empirical_from_gains(
    clock: &ModalClock,
    gains: &[f64],
    ic: &crate::beam_model::InitialCondition,
    sizes: &PerturbationSizes,
    weights: &[f64],
) -> Result<DMatrix<f64>> {
    let len = clock.grid().n_samples();
    let mut columns = [vec![0.0; len], vec![0.0; len]];
    for (k, (kind, eps)) in [
        (PerturbationKind::Displacement, &sizes.displacement),
        (PerturbationKind::Velocity, &sizes.velocity),
    ]
    .into_iter()
    .enumerate()
    {
        for (j, &e) in eps.iter().enumerate() {
            let (plus, minus) = perturbed_output_pair_with(clock, gains, ic, j, kind, e)?;
            for (c, (p, m)) in columns[k].iter_mut().zip(plus.iter().zip(&minus)) {
                *c += (p - m) / (2.0 * e);
            }
        }
    }
    Ok(gram2(&columns[0], &columns[1], weights))
}

/// Continuum empirical Gramian: each column sums the central differences
/// `(y+ - y-) / (2 eps_kj)` over the modes.
pub fn continuum_empirical_gramian(
    basis: &ModalBasis,
    x: f64,
    sizes: &PerturbationSizes,
    grid: &TimeGrid,
    rule: TimeQuadrature,
) -> Result<Gramian> {
    sizes.validate(basis.n_modes())?;
    let idx = basis.nearest_index(x)?;
    let clock = ModalClock::new(basis.frequencies(), *grid);
    let weights = rule.weights(grid.n_samples(), grid.dt());
    let ic = crate::beam_model::InitialCondition::zero(basis);
    let w = continuum_empirical_from_gains(&clock, &basis.strain_gains(idx), &ic, sizes, &weights)?;
    Ok(Gramian::new(
        w,
        GramianKind::ContinuumEmpirical,
        vec![basis.grid()[idx]],
        grid.horizon(),
        Some(sizes.representative()),
        basis.n_modes(),
    ))
}

/// [`continuum_empirical_gramian`] at every grid point.
pub fn continuum_empirical_sweep(
    basis: &ModalBasis,
    sizes: &PerturbationSizes,
    grid: &TimeGrid,
    rule: TimeQuadrature,
) -> Result<Vec<Gramian>> {
    sizes.validate(basis.n_modes())?;
    let clock = ModalClock::new(basis.frequencies(), *grid);
    let weights = rule.weights(grid.n_samples(), grid.dt());
    let ic = crate::beam_model::InitialCondition::zero(basis);
    (0..basis.grid_size())
        .into_par_iter()
        .map(|idx| {
            let w = continuum_empirical_from_gains(&clock, &basis.strain_gains(idx), &ic, sizes, &weights)?;
            Ok(Gramian::new(
                w,
                GramianKind::ContinuumEmpirical,
                vec![basis.grid()[idx]],
                grid.horizon(),
                Some(sizes.representative()),
                basis.n_modes(),
            ))
        })
        .collect()
}

/// Stacked `[C; CA; ...; CA^(n-1)]` with its numerical rank.
#[derive(Debug, Clone)]
pub struct ObservabilityMatrix {
    /// The stacked matrix in the original coordinates.
    pub matrix: DMatrix<f64>,
    /// Singular values of the frequency-balanced matrix used for the rank.
    pub singular_values: DVector<f64>,
    pub rank: usize,
}

/// Builds the observability matrix and its numerical rank.
///
/// Powers of `A` grow like `omega_max^k`, so the rank is computed on the
/// similar pair `(C, A~)` with `A~ = [0 I; Omega / omega_max^2 0]` (state
/// scaling `diag(I, omega_max I)` plus time scaling by `omega_max`), which
/// has the same rank. Threshold: `sigma > sigma_max * max(rows, cols) * eps`.
pub fn observability_matrix(sys: &TruncatedSystem) -> ObservabilityMatrix {
    let n = sys.state_dim();
    let c = sys.c();
    let stack = |a: &DMatrix<f64>| {
        let mut o = DMatrix::zeros(n * c.nrows(), n);
        let mut block = c.clone();
        for k in 0..n {
            o.rows_mut(k * c.nrows(), c.nrows()).copy_from(&block);
            block = &block * a;
        }
        o
    };
    let matrix = stack(sys.a());
    let w_max = sys.max_frequency();
    let balanced_a = if w_max > 0.0 {
        let m = n / 2;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..m {
            a[(i, m + i)] = 1.0;
            a[(m + i, i)] = -(sys.frequencies()[i] / w_max).powi(2);
        }
        a
    } else {
        sys.a().clone()
    };
    let balanced = stack(&balanced_a);
    let singular_values = balanced.clone().svd(false, false).singular_values;
    let rank = numerical_rank(&singular_values, balanced.nrows().max(balanced.ncols()));
    ObservabilityMatrix {
        matrix,
        singular_values,
        rank,
    }
}

pub fn numerical_rank(singular_values: &DVector<f64>, dim: usize) -> usize {
    let smax = singular_values.max();
    if smax <= 0.0 {
        return 0;
    }
    let tol = smax * dim as f64 * f64::EPSILON;
    singular_values.iter().filter(|s| **s > tol).count()
}

/// Relative threshold below which a curvature factor counts as zero.
pub const CURVATURE_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub sensor_x: f64,
    pub rank: usize,
    /// Sign of `det(O_C)`: -1, 0 or 1.
    pub det_sign: i8,
    /// `ln |det(O_C)|`, `-inf` when the determinant vanishes.
    #[serde(with = "crate::export::finite_or_string")]
    pub log_abs_det: f64,
    /// `det(O_C)` itself; may overflow to infinity or underflow to zero.
    #[serde(with = "crate::export::finite_or_string")]
    pub det_o_c: f64,
    pub curvatures: Vec<f64>,
    pub curvature_zeros: Vec<bool>,
    pub observable: bool,
}

/// Single-sensor observability test from the factored determinant.
///
/// Reordering the rows of `O_C` into even and odd powers of `A` gives
/// `diag(V G, V G)` with `V` the Vandermonde matrix in `-omega_i^2` and
/// `G = diag(h phi_i,xx(x))`, hence
/// `det O_C = s * h^(2 n) prod_{i<j} (omega_i^2 - omega_j^2)^2 prod_k phi_k,xx(x)^2`
/// with the riffle sign `s = (-1)^(n (n - 1) / 2)`. Curvatures are evaluated
/// in closed form at `x`, which is not snapped to the grid.
pub fn single_sensor_determinant(basis: &ModalBasis, x: f64) -> Result<ObservabilityReport> {
    let length = basis.spec().length();
    if !(0.0..=length).contains(&x) {
        return Err(Error::SensorOutOfRange { x, length });
    }
    let n = basis.n_modes();
    let h = basis.spec().half_height();
    let curvatures: Vec<f64> = basis.modes().iter().map(|m| m.curvature(x)).collect();
    let scales: Vec<f64> = (0..n).map(|k| basis.curvatures().column(k).amax()).collect();
    let curvature_zeros: Vec<bool> = curvatures
        .iter()
        .zip(&scales)
        .map(|(c, s)| c.abs() < CURVATURE_ZERO_TOL * s)
        .collect();
    let nonzero = curvature_zeros.iter().filter(|z| !**z).count();
    let observable = nonzero == n;

    let w = basis.frequencies();
    let mut log_abs = 2.0 * n as f64 * h.ln();
    for i in 0..n {
        for j in i + 1..n {
            log_abs += 2.0 * (w[i] * w[i] - w[j] * w[j]).abs().ln();
        }
    }
    let det_sign: i8 = if observable {
        if (n * (n.saturating_sub(1)) / 2) % 2 == 0 {
            1
        } else {
            -1
        }
    } else {
        0
    };
    if observable {
        log_abs += curvatures.iter().map(|c| 2.0 * c.abs().ln()).sum::<f64>();
    } else {
        log_abs = f64::NEG_INFINITY;
    }
    let det_o_c = f64::from(det_sign) * log_abs.exp();
    Ok(ObservabilityReport {
        sensor_x: x,
        rank: 2 * nonzero,
        det_sign,
        log_abs_det: log_abs,
        det_o_c,
        curvatures,
        curvature_zeros,
        observable,
    })
}
