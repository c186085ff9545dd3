//! Observability measures, the convex sensor-activation relaxation, rounding
//! and baseline layouts.
//!
//! The relaxation is
//!
//! ```text
//! minimise    kappa + w_eff * nu
//! subject to  W(a) - I >= 0,  kappa I - W(a) >= 0,
//!             0 <= a_i <= nu,  sum a_i <= p nu
//! ```
//!
//! with `W(a) = sum a_i W_i / s0`, `s0 = lambda_min(sum W_i)` and
//! `w_eff = w / s0`. Dividing the Gramians by `s0` makes full activation
//! feasible; scaling the weight the same way keeps the optimum equal to that
//! of `J = kappa + w / lambda_min` in the original units. It is solved with a
//! primal log-barrier method.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::beam_model::ModalBasis;
use crate::error::{Error, Result};
use crate::export::{write_json, finite_or_string};
use crate::gramian::Gramian;

const POLISH_STEPS: usize = 4;

/// Default weight on `nu` in `J = kappa + w nu`.
pub const DEFAULT_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSet {
    #[serde(with = "finite_or_string")]
    pub lambda_min: f64,
    #[serde(with = "finite_or_string")]
    pub lambda_max: f64,
    /// `1 / lambda_min`; `+inf` for a singular Gramian.
    #[serde(with = "finite_or_string")]
    pub nu: f64,
    /// `lambda_max / lambda_min`; `+inf` for a singular Gramian.
    #[serde(with = "finite_or_string")]
    pub kappa: f64,
    #[serde(with = "finite_or_string")]
    pub j: f64,
    pub weight: f64,
}

impl MetricSet {
    pub fn is_singular(&self) -> bool {
        !self.nu.is_finite()
    }
}

/// `nu`, `kappa` and `J` of a symmetric Gramian. A Gramian whose smallest
/// eigenvalue is at most `d * eps * lambda_max` is reported as singular.
pub fn metrics(w: &DMatrix<f64>, weight: f64) -> MetricSet {
    let eig = w.clone().symmetric_eigen().eigenvalues;
    let lambda_min = eig.min();
    let lambda_max = eig.max();
    let tol = w.nrows() as f64 * f64::EPSILON * lambda_max;
    if lambda_max <= 0.0 || lambda_min <= tol {
        return MetricSet {
            lambda_min,
            lambda_max,
            nu: f64::INFINITY,
            kappa: f64::INFINITY,
            j: f64::INFINITY,
            weight,
        };
    }
    let nu = 1.0 / lambda_min;
    let kappa = lambda_max / lambda_min;
    MetricSet {
        lambda_min,
        lambda_max,
        nu,
        kappa,
        j: kappa + weight * nu,
        weight,
    }
}

/// Metrics of one Gramian per candidate location.
pub fn objective_scan(gramians: &[Gramian], weight: f64) -> Vec<MetricSet> {
    gramians.par_iter().map(|g| metrics(g.matrix(), weight)).collect()
}

fn sum_selected(gramians: &[DMatrix<f64>], selection: &[usize]) -> DMatrix<f64> {
    let d = gramians[0].nrows();
    selection.iter().fold(DMatrix::zeros(d, d), |acc, &i| acc + &gramians[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationOptions {
    /// Cap on the total number of Newton steps.
    pub max_iterations: usize,
    /// Stop once `theta / t <= gap_tolerance * |objective|`.
    pub gap_tolerance: f64,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub centering_tolerance: f64,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gap_tolerance: 1e-6,
            mu: 20.0,
            centering_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub barrier_t: f64,
    pub newton_steps: usize,
    pub objective: f64,
    pub gap: f64,
}

/// Solution of the relaxation in scaled units, plus its objective in the
/// original units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedSolution {
    /// `a_bar_i`, in `[0, nu_hat]`.
    pub activations: Vec<f64>,
    /// `a_i = a_bar_i / nu_hat`, in `[0, 1]`.
    pub recovered: Vec<f64>,
    pub kappa_hat: f64,
    pub nu_hat: f64,
    /// Upper bound on `1 / lambda_min` of `sum a_i W_i` in original units.
    pub nu_original: f64,
    /// `kappa_hat + w * nu_original` at the final iterate.
    pub objective: f64,
    /// Certified lower bound `objective - theta / t` on the relaxed optimum.
    pub lower_bound: f64,
    pub duality_gap: f64,
    /// `||grad(t f0 + phi)|| / (t ||grad f0||)` at the final iterate.
    pub stationarity: f64,
    /// Largest violation of any constraint, relative to `||W(a)||`.
    pub constraint_residual: f64,
    pub scale: f64,
    pub weight: f64,
    pub budget: usize,
    pub status: SolverStatus,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

struct Problem {
    g: Vec<DMatrix<f64>>,
    d: usize,
    m: usize,
    budget: f64,
    w_eff: f64,
    cap: f64,
}

struct Eval {
    value: f64,
    l1: DMatrix<f64>,
    l2: DMatrix<f64>,
}

impl Problem {
    fn theta(&self) -> f64 {
        (2 * self.d + 2 * self.m + 2) as f64
    }

    fn f0(&self, z: &DVector<f64>) -> f64 {
        z[self.m] + self.w_eff * z[self.m + 1]
    }

    fn weighted(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.d, self.d);
        for (gi, &a) in self.g.iter().zip(z.iter()) {
            w += gi * a;
        }
        w
    }

    /// Barrier value and slack Cholesky factors, or `None` if infeasible.
    fn barrier(&self, z: &DVector<f64>) -> Option<Eval> {
        let m = self.m;
        let (kappa, nu) = (z[m], z[m + 1]);
        let a = z.rows(0, m);
        let total: f64 = a.sum();
        let rest = self.budget * nu - total;
        let headroom = self.cap - nu;
        if a.iter().any(|v| *v <= 0.0 || *v >= nu) || rest <= 0.0 || headroom <= 0.0 {
            return None;
        }
        let w = self.weighted(z);
        let eye = DMatrix::<f64>::identity(self.d, self.d);
        let c1 = (&w - &eye).cholesky()?;
        let c2 = (eye * kappa - &w).cholesky()?;
        let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let (l1, l2) = (c1.l(), c2.l());
        let mut value = -logdet(&l1) - logdet(&l2);
        for &ai in a.iter() {
            value -= ai.ln() + (nu - ai).ln();
        }
        value -= rest.ln() + headroom.ln();
        if !value.is_finite() {
            return None;
        }
        Some(Eval { value, l1, l2 })
    }

    /// Gradient and Hessian of the barrier at a feasible point.
    fn derivatives(&self, z: &DVector<f64>, ev: &Eval) -> (DVector<f64>, DMatrix<f64>) {
        let (m, d) = (self.m, self.d);
        let nvar = m + 2;
        let q = d * (d + 1) / 2;
        let mut grad = DVector::zeros(nvar);
        let mut hess = DMatrix::zeros(nvar, nvar);

        let congruence = |l: &DMatrix<f64>, dm: &DMatrix<f64>| -> DMatrix<f64> {
            let x = l.solve_lower_triangular(dm).expect("cholesky factor is nonsingular");
            l.solve_lower_triangular(&x.transpose()).expect("cholesky factor is nonsingular")
        };
        let flatten = |k: &DMatrix<f64>, out: &mut [f64]| {
            let mut idx = 0;
            for a in 0..d {
                for b in a..d {
                    out[idx] = if a == b { k[(a, a)] } else { std::f64::consts::SQRT_2 * k[(a, b)] };
                    idx += 1;
                }
            }
        };

        let mut phi1 = DMatrix::zeros(m, q);
        let mut phi2 = DMatrix::zeros(m + 1, q);
        let mut row = vec![0.0; q];
        for (i, gi) in self.g.iter().enumerate() {
            let k1 = congruence(&ev.l1, gi);
            flatten(&k1, &mut row);
            phi1.row_mut(i).copy_from_slice(&row);
            grad[i] -= k1.trace();
            let k2 = -congruence(&ev.l2, gi);
            flatten(&k2, &mut row);
            phi2.row_mut(i).copy_from_slice(&row);
            grad[i] -= k2.trace();
        }
        let kk = congruence(&ev.l2, &DMatrix::identity(d, d));
        flatten(&kk, &mut row);
        phi2.row_mut(m).copy_from_slice(&row);
        grad[m] -= kk.trace();

        hess.view_mut((0, 0), (m, m)).copy_from(&(&phi1 * phi1.transpose()));
        let h2 = &phi2 * phi2.transpose();
        let mut block = hess.view_mut((0, 0), (m + 1, m + 1));
        block += h2;

        let nu = z[m + 1];
        let nu_idx = m + 1;
        let a = z.rows(0, m);
        for i in 0..m {
            let ai = a[i];
            let s = nu - ai;
            grad[i] += -1.0 / ai + 1.0 / s;
            grad[nu_idx] -= 1.0 / s;
            hess[(i, i)] += 1.0 / (ai * ai) + 1.0 / (s * s);
            hess[(i, nu_idx)] -= 1.0 / (s * s);
            hess[(nu_idx, i)] -= 1.0 / (s * s);
            hess[(nu_idx, nu_idx)] += 1.0 / (s * s);
        }
        let rest = self.budget * nu - a.sum();
        let mut dr = DVector::from_element(nvar, 0.0);
        dr.rows_mut(0, m).fill(-1.0);
        dr[nu_idx] = self.budget;
        grad -= &dr / rest;
        hess += &dr * dr.transpose() / (rest * rest);
        let headroom = self.cap - nu;
        grad[nu_idx] += 1.0 / headroom;
        hess[(nu_idx, nu_idx)] += 1.0 / (headroom * headroom);
        (grad, hess)
    }
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
        if let Some(ch) = h.cholesky() {
            return Some(-ch.solve(grad));
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    None
}

fn validate_gramians(gramians: &[DMatrix<f64>]) -> Result<usize> {
    let first = gramians
        .first()
        .ok_or_else(|| Error::invalid("gramians", "at least one candidate is required"))?;
    let d = first.nrows();
    for g in gramians {
        if g.nrows() != d || g.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "candidate gramian",
                expected: d,
                actual: g.nrows(),
            });
        }
    }
    Ok(d)
}

/// Solves the sensor-activation relaxation for budget `p`.
pub fn solve_relaxation(
    gramians: &[DMatrix<f64>],
    budget: usize,
    weight: f64,
    options: &RelaxationOptions,
) -> Result<RelaxedSolution> {
    let d = validate_gramians(gramians)?;
    if budget == 0 {
        return Err(Error::invalid("budget", "must be >= 1"));
    }
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::invalid("weight", format!("must be >= 0, got {weight}")));
    }
    let m = gramians.len();
    let all_on = sum_selected(gramians, &(0..m).collect::<Vec<_>>());
    let eig = all_on.clone().symmetric_eigen().eigenvalues;
    let s0 = eig.min();
    if !(s0 > d as f64 * f64::EPSILON * eig.max()) {
        return Err(Error::Infeasible(format!(
            "sum of all candidate gramians is singular (lambda_min = {s0:e})"
        )));
    }
    let g: Vec<DMatrix<f64>> = gramians.iter().map(|w| w / s0).collect();
    let w_eff = weight / s0;

    let a0 = 2.0;
    let nu0 = (1.1 * a0 * m as f64 / budget as f64).max(1.1 * a0);
    let lam_max = eig.max() / s0 * a0;
    let kappa0 = 1.1 * lam_max + 1.0;
    let mut z = DVector::from_element(m + 2, a0);
    z[m] = kappa0;
    z[m + 1] = nu0;
    let f_init = kappa0 + w_eff * nu0;
    let cap = if w_eff > 0.0 { 2.0 * f_init / w_eff } else { 10.0 * nu0 };
    let problem = Problem {
        g,
        d,
        m,
        budget: budget as f64,
        w_eff,
        cap,
    };
    let theta = problem.theta();
    let mut grad_f0 = DVector::zeros(m + 2);
    grad_f0[m] = 1.0;
    grad_f0[m + 1] = w_eff;

    let mut ev = problem
        .barrier(&z)
        .ok_or_else(|| Error::Infeasible("initial point is not strictly feasible".into()))?;
    let mut t = theta / problem.f0(&z).abs().max(1.0);
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut status = SolverStatus::MaxIterations;
    let mut stationarity;

    'outer: loop {
        let mut steps = 0;
        loop {
            let (bg, bh) = problem.derivatives(&z, &ev);
            let grad = &grad_f0 * t + bg;
            stationarity = grad.norm() / (t * grad_f0.norm());
            let Some(dir) = newton_direction(&bh, &grad) else {
                log::warn!("newton system could not be factorised");
                break 'outer;
            };
            let decrement = -grad.dot(&dir);
            let merit = |e: &Eval, zz: &DVector<f64>| t * problem.f0(zz) + e.value;
            let current = merit(&ev, &z);
            // Below this the merit function cannot resolve further progress.
            let floor = 64.0 * f64::EPSILON * (t * problem.f0(&z).abs() + ev.value.abs());
            if decrement / 2.0 <= options.centering_tolerance.max(floor) {
                break;
            }
            if iterations >= options.max_iterations {
                break 'outer;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-20 {
                let trial = &z + &dir * alpha;
                if let Some(te) = problem.barrier(&trial) {
                    if merit(&te, &trial) <= current - 0.25 * alpha * decrement {
                        accepted = Some((trial, te));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            iterations += 1;
            steps += 1;
            match accepted {
                Some((nz, ne)) => {
                    z = nz;
                    ev = ne;
                }
                None => break,
            }
        }
        let gap = theta / t;
        let objective = problem.f0(&z);
        trace.push(TraceEntry {
            barrier_t: t,
            newton_steps: steps,
            objective,
            gap,
        });
        if gap <= options.gap_tolerance * objective.abs() {
            status = SolverStatus::Converged;
            // Full Newton steps past the Armijo resolution limit tighten
            // stationarity at the final barrier parameter.
            for _ in 0..POLISH_STEPS {
                let (bg, bh) = problem.derivatives(&z, &ev);
                let grad = &grad_f0 * t + bg;
                let Some(dir) = newton_direction(&bh, &grad) else { break };
                let mut alpha = 1.0;
                let mut next = None;
                while alpha > 1e-6 {
                    let trial = &z + &dir * alpha;
                    if let Some(te) = problem.barrier(&trial) {
                        next = Some((trial, te));
                        break;
                    }
                    alpha *= 0.5;
                }
                let Some((nz, ne)) = next else { break };
                let (ng, _) = problem.derivatives(&nz, &ne);
                let new_stat = (&grad_f0 * t + ng).norm() / (t * grad_f0.norm());
                if new_stat >= stationarity {
                    break;
                }
                z = nz;
                ev = ne;
                stationarity = new_stat;
                iterations += 1;
            }
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        t *= options.mu;
    }

    let gap = theta / t;
    let objective = problem.f0(&z);
    let nu_hat = z[m + 1];
    let activations: Vec<f64> = z.rows(0, m).iter().copied().collect();
    let recovered = activations.iter().map(|a| a / nu_hat).collect();
    let wt = problem.weighted(&z);
    let eye = DMatrix::<f64>::identity(d, d);
    let e1 = (&wt - &eye).symmetric_eigen().eigenvalues.min();
    let e2 = (&eye * z[m] - &wt).symmetric_eigen().eigenvalues.min();
    let scalar_violation = activations
        .iter()
        .map(|a| (-a).max(a - nu_hat))
        .chain(std::iter::once(activations.iter().sum::<f64>() - budget as f64 * nu_hat))
        .fold(0.0_f64, f64::max);
    let constraint_residual = ((-e1).max(-e2).max(0.0) / wt.norm().max(1.0)).max(scalar_violation.max(0.0) / nu_hat);

    Ok(RelaxedSolution {
        activations,
        recovered,
        kappa_hat: z[m],
        nu_hat,
        nu_original: nu_hat / s0,
        objective,
        lower_bound: objective - gap,
        duality_gap: gap,
        stationarity,
        constraint_residual,
        scale: s0,
        weight,
        budget,
        status,
        iterations,
        trace,
    })
}

/// Binary placement recovered from a relaxation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementSolution {
    pub relaxed: RelaxedSolution,
    /// Selected candidate indices, ascending.
    pub selection: Vec<usize>,
    pub locations: Vec<f64>,
    pub metrics: MetricSet,
    /// Candidates added to repair a singular top-p selection.
    pub repaired: usize,
    /// Accepted neighbour swaps in the exchange sweep.
    pub swaps: usize,
}

impl PlacementSolution {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        write_json(out, self)
    }
}

/// Top-p rounding with a smaller-index tie-break, singular repair and one
/// sweep of neighbour exchange.
///
/// Candidates are assumed ordered by position, so a smaller index is closer
/// to the clamped end.
pub fn round_to_binary(
    relaxed: &RelaxedSolution,
    gramians: &[DMatrix<f64>],
    candidates: &[f64],
    budget: usize,
) -> Result<PlacementSolution> {
    validate_gramians(gramians)?;
    let m = gramians.len();
    if relaxed.recovered.len() != m || candidates.len() != m {
        return Err(Error::DimensionMismatch {
            what: "candidates",
            expected: m,
            actual: relaxed.recovered.len().min(candidates.len()),
        });
    }
    if budget == 0 {
        return Err(Error::invalid("budget", "must be >= 1"));
    }
    let weight = relaxed.weight;
    let j_of = |sel: &[usize]| metrics(&sum_selected(gramians, sel), weight);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| relaxed.recovered[b].total_cmp(&relaxed.recovered[a]));
    let mut selection: Vec<usize> = order[..budget.min(m)].to_vec();

    let mut repaired = 0;
    if j_of(&selection).is_singular() {
        while j_of(&selection).is_singular() {
            let base = sum_selected(gramians, &selection);
            let best = (0..m)
                .filter(|i| !selection.contains(i))
                .map(|i| (i, (&base + &gramians[i]).symmetric_eigen().eigenvalues.min()))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((i, _)) => {
                    selection.push(i);
                    repaired += 1;
                }
                None => return Err(Error::Rounding("no candidate set is observable".into())),
            }
        }
        while selection.len() > budget {
            let best = (0..selection.len())
                .map(|k| {
                    let mut trial = selection.clone();
                    trial.remove(k);
                    (k, j_of(&trial).j)
                })
                .filter(|(_, j)| j.is_finite())
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match best {
                Some((k, _)) => {
                    selection.remove(k);
                }
                None => {
                    return Err(Error::Rounding(format!(
                        "no observable subset of size {budget} reachable from the repaired selection"
                    )))
                }
            }
        }
    }
    selection.sort_unstable();

    let mut swaps = 0;
    let mut current = j_of(&selection).j;
    for k in 0..selection.len() {
        let s = selection[k];
        let neighbours = [s.checked_sub(1), (s + 1 < m).then_some(s + 1)];
        let mut best: Option<(usize, f64)> = None;
        for nb in neighbours.into_iter().flatten() {
            if selection.contains(&nb) {
                continue;
            }
            let mut trial = selection.clone();
            trial[k] = nb;
            let j = j_of(&trial).j;
            if j < current && best.is_none_or(|(_, bj)| j < bj) {
                best = Some((nb, j));
            }
        }
        if let Some((nb, j)) = best {
            selection[k] = nb;
            current = j;
            swaps += 1;
        }
    }
    selection.sort_unstable();

    Ok(PlacementSolution {
        relaxed: relaxed.clone(),
        locations: selection.iter().map(|&i| candidates[i]).collect(),
        metrics: j_of(&selection),
        selection,
        repaired,
        swaps,
    })
}

/// Relaxation followed by rounding.
pub fn optimize_placement(
    gramians: &[DMatrix<f64>],
    candidates: &[f64],
    budget: usize,
    weight: f64,
    options: &RelaxationOptions,
) -> Result<PlacementSolution> {
    let relaxed = solve_relaxation(gramians, budget, weight, options)?;
    round_to_binary(&relaxed, gramians, candidates, budget)
}

/// One placement per budget, solved in parallel.
pub fn budget_sweep(
    gramians: &[DMatrix<f64>],
    candidates: &[f64],
    budgets: &[usize],
    weight: f64,
    options: &RelaxationOptions,
) -> Vec<Result<PlacementSolution>> {
    budgets
        .par_iter()
        .map(|&p| optimize_placement(gramians, candidates, p, weight, options))
        .collect()
}

/// Reference layouts, as ascending grid indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Baselines {
    pub random: Vec<usize>,
    pub uniform: Vec<usize>,
    pub curvature_peak: Vec<usize>,
}

/// `p` grid indices drawn uniformly without replacement.
pub fn random_placement(n_candidates: usize, budget: usize, seed: u64) -> Result<Vec<usize>> {
    if budget > n_candidates {
        return Err(Error::invalid("budget", format!("{budget} exceeds {n_candidates} candidates")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sel = rand::seq::index::sample(&mut rng, n_candidates, budget).into_vec();
    sel.sort_unstable();
    Ok(sel)
}

/// `p` equally spaced grid indices including both ends; the midpoint for
/// `p = 1`.
pub fn uniform_placement(n_candidates: usize, budget: usize) -> Result<Vec<usize>> {
    if budget == 0 || budget > n_candidates {
        return Err(Error::invalid("budget", format!("must be in 1..={n_candidates}, got {budget}")));
    }
    if budget == 1 {
        return Ok(vec![(n_candidates - 1) / 2]);
    }
    let span = (n_candidates - 1) as f64;
    Ok((0..budget)
        .map(|k| (k as f64 * span / (budget - 1) as f64).round() as usize)
        .collect())
}

/// The `p` largest local maxima of `sum_k |phi_k,xx|`, topped up with the
/// largest remaining samples if there are fewer than `p` maxima.
pub fn curvature_peak_placement(basis: &ModalBasis, budget: usize) -> Result<Vec<usize>> {
    let n = basis.grid_size();
    if budget == 0 || budget > n {
        return Err(Error::invalid("budget", format!("must be in 1..={n}, got {budget}")));
    }
    let curv = basis.curvatures();
    let s: Vec<f64> = curv.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect();
    let is_peak = |i: usize| (i == 0 || s[i] >= s[i - 1]) && (i + 1 == n || s[i] >= s[i + 1]);
    let by_value = |idx: &mut Vec<usize>| idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut peaks: Vec<usize> = (0..n).filter(|&i| is_peak(i)).collect();
    by_value(&mut peaks);
    peaks.truncate(budget);
    if peaks.len() < budget {
        let mut rest: Vec<usize> = (0..n).filter(|i| !peaks.contains(i)).collect();
        by_value(&mut rest);
        peaks.extend(rest.into_iter().take(budget - peaks.len()));
    }
    peaks.sort_unstable();
    Ok(peaks)
}

pub fn baseline_placements(basis: &ModalBasis, budget: usize, seed: u64) -> Result<Baselines> {
    let n = basis.grid_size();
    Ok(Baselines {
        random: random_placement(n, budget, seed)?,
        uniform: uniform_placement(n, budget)?,
        curvature_peak: curvature_peak_placement(basis, budget)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam_model::{build_modal_basis, BeamSpec};

    #[test]
    fn identity_metrics() {
        let m = metrics(&DMatrix::identity(3, 3), 5.0);
        assert_eq!((m.nu, m.kappa, m.j), (1.0, 1.0, 6.0));
    }

    #[test]
    fn diagonal_metrics() {
        let m = metrics(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 5.0);
        assert!((m.nu - 1.0).abs() < 1e-15 && (m.kappa - 4.0).abs() < 1e-15 && (m.j - 9.0).abs() < 1e-14);
    }

    #[test]
    fn zero_gramian_is_singular() {
        let m = metrics(&DMatrix::zeros(4, 4), 5.0);
        assert!(m.is_singular() && m.j.is_infinite());
    }

    #[test]
    fn scaling_leaves_kappa() {
        let w = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let a = metrics(&w, 1.0);
        let b = metrics(&(&w * 7.0), 1.0);
        assert!((a.kappa - b.kappa).abs() < 1e-12 * a.kappa);
        assert!((b.nu - a.nu / 7.0).abs() < 1e-12 * a.nu);
    }

    fn diag2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![a, b]))
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let gs = vec![diag2(1.0, 0.1), diag2(0.1, 1.0)];
        let sol = solve_relaxation(&gs, 1, 0.0, &RelaxationOptions::default()).unwrap();
        assert_eq!(sol.status, SolverStatus::Converged);
        let split = sol.recovered[0] / (sol.recovered[0] + sol.recovered[1]);
        assert!((split - 0.5).abs() < 1e-3, "{split}");
        assert!((sol.objective - 1.0).abs() < 1e-5);
    }

    #[test]
    fn full_budget_is_no_worse_than_all_on() {
        let gs = vec![diag2(1.0, 0.2), diag2(0.3, 1.0), diag2(0.5, 0.5)];
        let sol = solve_relaxation(&gs, 3, 5.0, &RelaxationOptions::default()).unwrap();
        let all = metrics(&sum_selected(&gs, &[0, 1, 2]), 5.0);
        assert!(sol.lower_bound <= all.j + 1e-9);
        assert!(sol.constraint_residual < 1e-6);
    }

    #[test]
    fn infeasible_when_all_on_is_singular() {
        let gs = vec![diag2(1.0, 0.0), diag2(2.0, 0.0)];
        assert!(matches!(
            solve_relaxation(&gs, 1, 5.0, &RelaxationOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    fn fake_relaxed(recovered: Vec<f64>) -> RelaxedSolution {
        RelaxedSolution {
            activations: recovered.clone(),
            recovered,
            kappa_hat: 1.0,
            nu_hat: 1.0,
            nu_original: 1.0,
            objective: 0.0,
            lower_bound: 0.0,
            duality_gap: 0.0,
            stationarity: 0.0,
            constraint_residual: 0.0,
            scale: 1.0,
            weight: 0.0,
            budget: 1,
            status: SolverStatus::Converged,
            iterations: 0,
            trace: Vec::new(),
        }
    }

    #[test]
    fn rounding_takes_top_p() {
        let gs = vec![DMatrix::identity(1, 1); 4];
        let xs = [0.0, 1.0, 2.0, 3.0];
        let sol = round_to_binary(&fake_relaxed(vec![0.1, 0.9, 0.8, 0.1]), &gs, &xs, 2).unwrap();
        assert_eq!(sol.selection, vec![1, 2]);
    }

    #[test]
    fn rounding_tie_prefers_smaller_x() {
        let gs = vec![DMatrix::identity(1, 1); 3];
        let sol = round_to_binary(&fake_relaxed(vec![0.2, 0.5, 0.5]), &gs, &[0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(sol.selection, vec![1]);
    }

    #[test]
    fn rounding_repairs_singular_selection() {
        let gs = vec![diag2(1.0, 0.0), diag2(1.0, 0.0), diag2(0.0, 1.0)];
        let sol = round_to_binary(&fake_relaxed(vec![0.9, 0.8, 0.1]), &gs, &[0.0, 1.0, 2.0], 2).unwrap();
        assert!(!sol.metrics.is_singular());
        assert_eq!(sol.selection.len(), 2);
        assert!(sol.selection.contains(&2));
    }

    #[test]
    fn baselines() {
        let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 4, 101).unwrap();
        let a = baseline_placements(&basis, 10, 3).unwrap();
        let b = baseline_placements(&basis, 10, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.uniform.first(), Some(&0));
        assert_eq!(a.uniform.last(), Some(&100));
        assert!(a.curvature_peak.contains(&0));
        let full = baseline_placements(&basis, 101, 1).unwrap();
        let all: Vec<usize> = (0..101).collect();
        assert_eq!(full.random, all);
        assert_eq!(full.uniform, all);
        assert_eq!(full.curvature_peak, all);
        assert!(baseline_placements(&basis, 102, 1).is_err());
    }
}
