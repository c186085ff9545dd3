//! Modal description of a uniform clamped-free beam.
//!
//! Mode shapes are `phi(x) = cosh(bx) - cos(bx) + f (sin(bx) - sinh(bx))`
//! with `f = (cos bL + cosh bL) / (sin bL + sinh bL)` and `cos(bL) cosh(bL) = -1`.
//! The hyperbolic parts are always evaluated with `exp(-bL)` factored out, so
//! high modes neither overflow nor lose digits to `cosh - f sinh` cancellation.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{format_float, write_csv_row};
use crate::quadrature::simpson;

/// Largest `b L` for which `cosh(b L)` is finite in f64.
const COSH_OVERFLOW: f64 = 709.78;

/// Geometry and material of a rectangular, uniform beam (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamSpec {
    length: f64,
    width: f64,
    thickness: f64,
    elastic_modulus: f64,
    density: f64,
    area: f64,
    second_moment: f64,
    mass_per_length: f64,
    half_height: f64,
}

impl BeamSpec {
    pub fn new(
        length: f64,
        width: f64,
        thickness: f64,
        elastic_modulus: f64,
        density: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("length", length),
            ("width", width),
            ("thickness", thickness),
            ("elastic_modulus", elastic_modulus),
            ("density", density),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        let area = width * thickness;
        Ok(Self {
            length,
            width,
            thickness,
            elastic_modulus,
            density,
            area,
            second_moment: width * thickness.powi(3) / 12.0,
            mass_per_length: density * area,
            half_height: 0.5 * thickness,
        })
    }

    /// 2 m x 20 mm x 5 mm aluminium strip (E = 70 GPa, rho = 2700 kg/m^3).
    pub fn aluminum_strip() -> Self {
        Self::new(2.0, 0.02, 0.005, 70e9, 2700.0).expect("reference beam is valid")
    }

    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn width(&self) -> f64 {
        self.width
    }
    pub fn thickness(&self) -> f64 {
        self.thickness
    }
    pub fn elastic_modulus(&self) -> f64 {
        self.elastic_modulus
    }
    pub fn density(&self) -> f64 {
        self.density
    }
    pub fn area(&self) -> f64 {
        self.area
    }
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }
    pub fn mass_per_length(&self) -> f64 {
        self.mass_per_length
    }
    /// Distance from the neutral axis to the strain gauge surface.
    pub fn half_height(&self) -> f64 {
        self.half_height
    }

    /// `sqrt(E I / mu)`, so that `omega_i = b_i^2 * stiffness_ratio`.
    pub fn stiffness_ratio(&self) -> f64 {
        (self.elastic_modulus * self.second_moment / self.mass_per_length).sqrt()
    }
}

/// Key-value beam description as it appears in experiment config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub length_m: f64,
    pub width_m: f64,
    pub thickness_m: f64,
    pub elastic_modulus_pa: f64,
    pub density_kg_m3: f64,
    pub n_modes: usize,
    pub grid_size: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            length_m: 2.0,
            width_m: 0.02,
            thickness_m: 0.005,
            elastic_modulus_pa: 70e9,
            density_kg_m3: 2700.0,
            n_modes: 8,
            grid_size: 501,
        }
    }
}

impl BeamConfig {
    pub fn spec(&self) -> Result<BeamSpec> {
        BeamSpec::new(
            self.length_m,
            self.width_m,
            self.thickness_m,
            self.elastic_modulus_pa,
            self.density_kg_m3,
        )
    }

    pub fn build_basis(&self) -> Result<ModalBasis> {
        build_modal_basis(&self.spec()?, self.n_modes, self.grid_size)
    }
}

fn characteristic_scaled(x: f64) -> f64 {
    // cos(x) cosh(x) + 1 divided by cosh(x): same roots, bounded magnitude.
    x.cos() + 1.0 / x.cosh()
}

fn characteristic_scaled_derivative(x: f64) -> f64 {
    -x.sin() - x.tanh() / x.cosh()
}

/// Residual of `cos(x) cosh(x) + 1`.
pub fn characteristic_residual(x: f64) -> f64 {
    x.cos() * x.cosh() + 1.0
}

/// Residual of the characteristic equation divided by `cosh(x)`.
///
/// Beyond the first few roots `cosh(x)` amplifies the unavoidable half-ulp
/// error of an f64 root past any absolute threshold, so this is the
/// residual that root tolerances refer to.
pub fn characteristic_residual_scaled(x: f64) -> f64 {
    characteristic_scaled(x)
}

/// First `n_modes` positive roots of `cos(x) cosh(x) + 1 = 0`, ascending.
///
/// Each root is bisected inside `[(2i-1)pi/2 - 1, (2i-1)pi/2 + 1]` and then
/// given one Newton polish. `tol` bounds the scaled residual
/// `|cos(x) + 1/cosh(x)|`.
pub fn find_characteristic_roots(n_modes: usize, tol: f64) -> Result<Vec<f64>> {
    if n_modes == 0 {
        return Err(Error::invalid("n_modes", "need at least one mode"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    let mut roots = Vec::with_capacity(n_modes);
    for i in 1..=n_modes {
        let centre = (2 * i - 1) as f64 * FRAC_PI_2;
        let (mut lo, mut hi) = (centre - 1.0, centre + 1.0);
        let (mut g_lo, g_hi) = (characteristic_scaled(lo), characteristic_scaled(hi));
        if g_lo * g_hi > 0.0 {
            return Err(Error::RootBracket {
                index: i,
                reason: format!("no sign change on [{lo:.6}, {hi:.6}]"),
            });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let g_mid = characteristic_scaled(mid);
            if g_mid == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if g_lo * g_mid < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                g_lo = g_mid;
            }
        }
        let mut root = 0.5 * (lo + hi);
        let slope = characteristic_scaled_derivative(root);
        if slope != 0.0 {
            let polished = root - characteristic_scaled(root) / slope;
            if (polished - root).abs() <= (hi - lo).max(4.0 * f64::EPSILON * root)
                && characteristic_scaled(polished).abs() <= characteristic_scaled(root).abs()
            {
                root = polished;
            }
        }
        let residual = characteristic_scaled(root).abs();
        if residual >= tol {
            return Err(Error::RootBracket {
                index: i,
                reason: format!("scaled residual {residual:e} above tolerance {tol:e}"),
            });
        }
        if let Some(&prev) = roots.last() {
            let gap: f64 = root - prev;
            if (gap - PI).abs() > 1.0 {
                return Err(Error::RootBracket {
                    index: i,
                    reason: format!("spacing {gap:.4} to previous root is not ~pi; a root was lost"),
                });
            }
        }
        roots.push(root);
    }
    Ok(roots)
}

/// One clamped-free mode shape with its closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeShape {
    /// Wavenumber `b_i` in 1/m.
    beta: f64,
    /// `b_i L`.
    root: f64,
    sin_root: f64,
    cos_root: f64,
    /// `2 exp(-bL) (sin bL + sinh bL)`.
    scaled_denominator: f64,
    ratio: f64,
}

impl ModeShape {
    pub fn new(root: f64, length: f64) -> Self {
        let e = (-root).exp();
        let (sin_root, cos_root) = root.sin_cos();
        let scaled_denominator = 2.0 * sin_root * e + 1.0 - e * e;
        let ratio = (2.0 * cos_root * e + 1.0 + e * e) / scaled_denominator;
        Self {
            beta: root / length,
            root,
            sin_root,
            cos_root,
            scaled_denominator,
            ratio,
        }
    }

    pub fn wavenumber(&self) -> f64 {
        self.beta
    }

    /// The ratio `f_i(L)` multiplying the sine terms.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// `cosh(u) - f sinh(u)` and `sinh(u) - f cosh(u)` at `u = b x`.
    fn hyperbolic_parts(&self, x: f64) -> (f64, f64) {
        let u = self.beta * x;
        let s = self.root;
        let em_u = (-u).exp();
        let e_u2s = (u - 2.0 * s).exp();
        let e_us = (u - s).exp();
        let e_mus = (-u - s).exp();
        let even = em_u - e_u2s + self.sin_root * (e_us + e_mus) - self.cos_root * (e_us - e_mus);
        let odd = -(em_u + e_u2s) + self.sin_root * (e_us - e_mus) - self.cos_root * (e_us + e_mus);
        (even / self.scaled_denominator, odd / self.scaled_denominator)
    }

    pub fn value(&self, x: f64) -> f64 {
        let (even, _) = self.hyperbolic_parts(x);
        let (s, c) = (self.beta * x).sin_cos();
        even - c + self.ratio * s
    }

    pub fn slope(&self, x: f64) -> f64 {
        let (_, odd) = self.hyperbolic_parts(x);
        let (s, c) = (self.beta * x).sin_cos();
        self.beta * (odd + s + self.ratio * c)
    }

    pub fn curvature(&self, x: f64) -> f64 {
        let (even, _) = self.hyperbolic_parts(x);
        let (s, c) = (self.beta * x).sin_cos();
        self.beta * self.beta * (even + c - self.ratio * s)
    }
}

/// Roots, frequencies and grid samples of the first `n_modes` modes.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    spec: BeamSpec,
    modes: Vec<ModeShape>,
    roots: Vec<f64>,
    frequencies: Vec<f64>,
    grid: Vec<f64>,
    mode_shapes: DMatrix<f64>,
    curvatures: DMatrix<f64>,
    norms: Vec<f64>,
}

/// Samples mode shapes and curvatures on a uniform grid of `grid_size`
/// points spanning `[0, L]`.
pub fn build_modal_basis(spec: &BeamSpec, n_modes: usize, grid_size: usize) -> Result<ModalBasis> {
    if grid_size < 20 * n_modes {
        return Err(Error::invalid(
            "grid_size",
            format!("need at least {} points to resolve {n_modes} modes, got {grid_size}", 20 * n_modes),
        ));
    }
    let products = find_characteristic_roots(n_modes, 1e-12)?;
    if let Some((mode, &root)) = products.iter().enumerate().find(|(_, r)| **r > COSH_OVERFLOW) {
        return Err(Error::ModeOverflow { mode: mode + 1, root });
    }
    let length = spec.length();
    let modes: Vec<ModeShape> = products.iter().map(|&r| ModeShape::new(r, length)).collect();
    let roots: Vec<f64> = modes.iter().map(ModeShape::wavenumber).collect();
    let stiffness = spec.stiffness_ratio();
    let frequencies: Vec<f64> = roots.iter().map(|b| b * b * stiffness).collect();

    let step = length / (grid_size - 1) as f64;
    let mut grid: Vec<f64> = (0..grid_size).map(|k| k as f64 * step).collect();
    grid[grid_size - 1] = length;

    let mode_shapes = DMatrix::from_fn(grid_size, n_modes, |k, i| modes[i].value(grid[k]));
    let curvatures = DMatrix::from_fn(grid_size, n_modes, |k, i| modes[i].curvature(grid[k]));
    let norms = (0..n_modes)
        .map(|i| {
            let sq: Vec<f64> = mode_shapes.column(i).iter().map(|v| v * v).collect();
            simpson(&sq, step)
        })
        .collect();

    Ok(ModalBasis {
        spec: *spec,
        modes,
        roots,
        frequencies,
        grid,
        mode_shapes,
        curvatures,
        norms,
    })
}

impl ModalBasis {
    pub fn spec(&self) -> &BeamSpec {
        &self.spec
    }
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }
    pub fn modes(&self) -> &[ModeShape] {
        &self.modes
    }
    /// Wavenumbers `b_i` in 1/m.
    pub fn roots(&self) -> &[f64] {
        &self.roots
    }
    /// Natural frequencies in rad/s.
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }
    pub fn spacing(&self) -> f64 {
        self.spec.length() / (self.grid.len() - 1) as f64
    }
    /// `N x n_modes` samples of `phi_i`.
    pub fn mode_shapes(&self) -> &DMatrix<f64> {
        &self.mode_shapes
    }
    /// `N x n_modes` samples of `phi_i''`, evaluated in closed form.
    pub fn curvatures(&self) -> &DMatrix<f64> {
        &self.curvatures
    }
    /// `c_i = int_0^L phi_i^2 dx`.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Period of the slowest mode.
    pub fn slowest_period(&self) -> f64 {
        2.0 * PI / self.frequencies[0]
    }

    /// Basis restricted to its first `n_modes` modes.
    pub fn truncated(&self, n_modes: usize) -> Result<ModalBasis> {
        if n_modes == 0 || n_modes > self.n_modes() {
            return Err(Error::invalid(
                "n_modes",
                format!("must be in 1..={}, got {n_modes}", self.n_modes()),
            ));
        }
        Ok(ModalBasis {
            spec: self.spec,
            modes: self.modes[..n_modes].to_vec(),
            roots: self.roots[..n_modes].to_vec(),
            frequencies: self.frequencies[..n_modes].to_vec(),
            grid: self.grid.clone(),
            mode_shapes: self.mode_shapes.columns(0, n_modes).into_owned(),
            curvatures: self.curvatures.columns(0, n_modes).into_owned(),
            norms: self.norms[..n_modes].to_vec(),
        })
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest_index(&self, x: f64) -> Result<usize> {
        let length = self.spec.length();
        if !(x >= 0.0 && x <= length) {
            return Err(Error::SensorOutOfRange { x, length });
        }
        let idx = (x / self.spacing()).round() as usize;
        Ok(idx.min(self.grid.len() - 1))
    }

    /// Strain gains `h_l phi_i''(x_k)` of every mode at grid point `idx`.
    pub fn strain_gains(&self, idx: usize) -> Vec<f64> {
        let h = self.spec.half_height();
        self.curvatures.row(idx).iter().map(|c| h * c).collect()
    }

    /// `int_0^L phi_i phi_j dx` by composite Simpson on the grid.
    pub fn inner_product(&self, i: usize, j: usize) -> f64 {
        let prod: Vec<f64> = self
            .mode_shapes
            .column(i)
            .iter()
            .zip(self.mode_shapes.column(j).iter())
            .map(|(a, b)| a * b)
            .collect();
        simpson(&prod, self.spacing())
    }

    /// Largest `|<phi_i, phi_j>| / c_i` over all `i != j`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.n_modes();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(self.inner_product(i, j).abs() / self.norms[i]);
                }
            }
        }
        worst
    }

    /// Writes `x, phi_1..phi_n, phi_xx_1..phi_xx_n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n_modes();
        let mut header = vec!["x".to_string()];
        header.extend((1..=n).map(|i| format!("phi_{i}")));
        header.extend((1..=n).map(|i| format!("phi_xx_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (k, &x) in self.grid.iter().enumerate() {
            let mut row = vec![format_float(x)];
            row.extend(self.mode_shapes.row(k).iter().map(|v| format_float(*v)));
            row.extend(self.curvatures.row(k).iter().map(|v| format_float(*v)));
            write_csv_row(&mut out, &row)?;
        }
        Ok(())
    }
}

/// Modal LTI model `H' = A H`, `y = C H` with `H = [eta; eta_dot]`.
#[derive(Debug, Clone)]
pub struct TruncatedSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    frequencies: Vec<f64>,
    sensor_locations: Vec<f64>,
}

impl TruncatedSystem {
    /// Builds the block companion `A = [0 I; diag(-omega^2) 0]` and
    /// `C = [gains 0]` from per-sensor modal strain gains (`p x n_modes`).
    pub fn from_gains(
        frequencies: &[f64],
        gains: &DMatrix<f64>,
        sensor_locations: Vec<f64>,
    ) -> Result<Self> {
        let n_modes = frequencies.len();
        if gains.ncols() != n_modes {
            return Err(Error::DimensionMismatch {
                what: "strain gain columns",
                expected: n_modes,
                actual: gains.ncols(),
            });
        }
        if sensor_locations.len() != gains.nrows() {
            return Err(Error::DimensionMismatch {
                what: "sensor locations",
                expected: gains.nrows(),
                actual: sensor_locations.len(),
            });
        }
        let n = 2 * n_modes;
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n_modes {
            a[(i, n_modes + i)] = 1.0;
            a[(n_modes + i, i)] = -frequencies[i] * frequencies[i];
        }
        let mut c = DMatrix::zeros(gains.nrows(), n);
        c.columns_mut(0, n_modes).copy_from(gains);
        Ok(Self {
            a,
            c,
            frequencies: frequencies.to_vec(),
            sensor_locations,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }
    pub fn sensor_locations(&self) -> &[f64] {
        &self.sensor_locations
    }
    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }
    pub fn state_dim(&self) -> usize {
        2 * self.frequencies.len()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
    /// The displacement block of `C` (`p x n_modes`).
    pub fn strain_gains(&self) -> DMatrix<f64> {
        self.c.columns(0, self.n_modes()).into_owned()
    }
    pub fn max_frequency(&self) -> f64 {
        self.frequencies.iter().copied().fold(0.0, f64::max)
    }
}

/// Truncated system measured by strain gauges at `sensors` (metres). Each
/// location snaps to the nearest grid point.
pub fn assemble_truncated_system(basis: &ModalBasis, sensors: &[f64]) -> Result<TruncatedSystem> {
    let mut indices = Vec::with_capacity(sensors.len());
    for &x in sensors {
        let idx = basis.nearest_index(x)?;
        let snapped = basis.grid()[idx];
        if (snapped - x).abs() > 1e-9 * basis.spec().length() {
            log::warn!("sensor at x = {x} m snapped to grid point x = {snapped} m");
        }
        indices.push(idx);
    }
    assemble_at_indices(basis, &indices)
}

/// Truncated system with sensors at the given grid indices.
pub fn assemble_at_indices(basis: &ModalBasis, indices: &[usize]) -> Result<TruncatedSystem> {
    let n = basis.n_modes();
    let mut gains = DMatrix::zeros(indices.len(), n);
    let mut locations = Vec::with_capacity(indices.len());
    for (row, &idx) in indices.iter().enumerate() {
        if idx >= basis.grid_size() {
            return Err(Error::invalid(
                "sensor index",
                format!("{idx} beyond grid of {} points", basis.grid_size()),
            ));
        }
        for (col, g) in basis.strain_gains(idx).into_iter().enumerate() {
            gains[(row, col)] = g;
        }
        locations.push(basis.grid()[idx]);
    }
    TruncatedSystem::from_gains(basis.frequencies(), &gains, locations)
}

/// Beam initial state: sampled displacement/velocity and modal coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
    /// `alpha_{1,i}`: modal displacement coefficients.
    pub alpha_displacement: Vec<f64>,
    /// `alpha_{2,i}`: modal velocity coefficients.
    pub alpha_velocity: Vec<f64>,
    /// Max abs difference between samples and their modal reconstruction.
    pub displacement_residual: f64,
    pub velocity_residual: f64,
}

impl InitialCondition {
    /// Condition composed exactly of the given modal coefficients.
    pub fn from_modal(basis: &ModalBasis, alpha_displacement: &[f64], alpha_velocity: &[f64]) -> Result<Self> {
        let n = basis.n_modes();
        for (what, v) in [("displacement coefficients", alpha_displacement), ("velocity coefficients", alpha_velocity)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    actual: v.len(),
                });
            }
        }
        Ok(Self {
            displacement: reconstruct(basis, alpha_displacement),
            velocity: reconstruct(basis, alpha_velocity),
            alpha_displacement: alpha_displacement.to_vec(),
            alpha_velocity: alpha_velocity.to_vec(),
            displacement_residual: 0.0,
            velocity_residual: 0.0,
        })
    }

    pub fn zero(basis: &ModalBasis) -> Self {
        let n = basis.n_modes();
        Self::from_modal(basis, &vec![0.0; n], &vec![0.0; n]).expect("dimensions agree")
    }

    /// Condition whose modal state `[eta(0); eta_dot(0)]` equals `state`.
    pub fn from_state(basis: &ModalBasis, state: &[f64]) -> Result<Self> {
        let n = basis.n_modes();
        if state.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                what: "modal state",
                expected: 2 * n,
                actual: state.len(),
            });
        }
        Self::from_modal(basis, &state[..n], &state[n..])
    }

    /// `[eta(0); eta_dot(0)] = [alpha_1; alpha_2]`.
    pub fn state(&self) -> Vec<f64> {
        let mut s = self.alpha_displacement.clone();
        s.extend_from_slice(&self.alpha_velocity);
        s
    }
}

fn reconstruct(basis: &ModalBasis, coeffs: &[f64]) -> Vec<f64> {
    let shapes = basis.mode_shapes();
    (0..basis.grid_size())
        .map(|k| coeffs.iter().enumerate().map(|(i, a)| a * shapes[(k, i)]).sum())
        .collect()
}

/// Projects sampled displacement and velocity onto the modes:
/// `alpha_i = (1/c_i) int w phi_i dx`.
pub fn project_initial_condition(
    basis: &ModalBasis,
    displacement: &[f64],
    velocity: &[f64],
) -> Result<InitialCondition> {
    let n_grid = basis.grid_size();
    for (what, v) in [("displacement samples", displacement), ("velocity samples", velocity)] {
        if v.len() != n_grid {
            return Err(Error::DimensionMismatch {
                what,
                expected: n_grid,
                actual: v.len(),
            });
        }
    }
    let h = basis.spacing();
    let project = |samples: &[f64]| -> Vec<f64> {
        (0..basis.n_modes())
            .map(|i| {
                let prod: Vec<f64> = samples
                    .iter()
                    .zip(basis.mode_shapes().column(i).iter())
                    .map(|(w, p)| w * p)
                    .collect();
                simpson(&prod, h) / basis.norms()[i]
            })
            .collect()
    };
    let alpha_displacement = project(displacement);
    let alpha_velocity = project(velocity);
    let residual = |samples: &[f64], coeffs: &[f64]| {
        reconstruct(basis, coeffs)
            .iter()
            .zip(samples)
            .map(|(r, s)| (r - s).abs())
            .fold(0.0, f64::max)
    };
    Ok(InitialCondition {
        displacement_residual: residual(displacement, &alpha_displacement),
        velocity_residual: residual(velocity, &alpha_velocity),
        displacement: displacement.to_vec(),
        velocity: velocity.to_vec(),
        alpha_displacement,
        alpha_velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_basis(n: usize, grid: usize) -> ModalBasis {
        build_modal_basis(&BeamSpec::aluminum_strip(), n, grid).unwrap()
    }

    #[test]
    fn derived_section_properties() {
        let spec = BeamSpec::aluminum_strip();
        let i = 0.02 * 0.005f64.powi(3) / 12.0;
        assert!((spec.second_moment() - i).abs() / i < 1e-12);
        let mu = 2700.0 * 0.02 * 0.005;
        assert!((spec.mass_per_length() - mu).abs() / mu < 1e-12);
        assert_eq!(spec.half_height(), 0.0025);
    }

    #[test]
    fn rejects_non_positive_dimensions() {
        assert!(BeamSpec::new(2.0, 0.0, 0.005, 70e9, 2700.0).is_err());
        assert!(BeamSpec::new(-1.0, 0.02, 0.005, 70e9, 2700.0).is_err());
        assert!(BeamSpec::new(2.0, 0.02, 0.005, f64::NAN, 2700.0).is_err());
    }

    #[test]
    fn first_root_satisfies_unscaled_equation() {
        let roots = find_characteristic_roots(1, 1e-12).unwrap();
        assert!(characteristic_residual(roots[0]).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_root_requests() {
        assert!(find_characteristic_roots(0, 1e-12).is_err());
        assert!(find_characteristic_roots(3, 0.0).is_err());
    }

    #[test]
    fn clamped_end_conditions_hold_in_closed_form() {
        let basis = reference_basis(10, 501);
        for m in basis.modes() {
            assert!(m.value(0.0).abs() < 1e-13);
            assert!(m.slope(0.0).abs() < 1e-12 * m.wavenumber());
            let scale = m.wavenumber().powi(2);
            assert!(m.curvature(2.0).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn root_curvature_is_twice_wavenumber_squared() {
        let basis = reference_basis(6, 501);
        for m in basis.modes() {
            let expected = 2.0 * m.wavenumber().powi(2);
            assert!((m.curvature(0.0) - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn stable_form_matches_textbook_form_for_low_modes() {
        let basis = reference_basis(4, 501);
        for m in basis.modes() {
            let b = m.wavenumber();
            let l = 2.0;
            let f = ((b * l).cos() + (b * l).cosh()) / ((b * l).sin() + (b * l).sinh());
            for &x in &[0.1, 0.7, 1.3, 1.95] {
                let naive = (b * x).cosh() - (b * x).cos() + f * ((b * x).sin() - (b * x).sinh());
                assert!((m.value(x) - naive).abs() < 1e-9, "x = {x}");
                let naive_xx = b * b * ((b * x).cosh() + (b * x).cos() - f * ((b * x).sin() + (b * x).sinh()));
                assert!((m.curvature(x) - naive_xx).abs() < 1e-9 * b * b);
            }
        }
    }

    #[test]
    fn norms_equal_length() {
        // With this normalisation every clamped-free mode has c_i = L.
        let basis = reference_basis(10, 2001);
        for c in basis.norms() {
            assert!((c - 2.0).abs() < 1e-8, "c = {c}");
        }
    }

    #[test]
    fn grid_size_guard() {
        assert!(build_modal_basis(&BeamSpec::aluminum_strip(), 10, 199).is_err());
        assert!(build_modal_basis(&BeamSpec::aluminum_strip(), 10, 200).is_ok());
    }

    #[test]
    fn overflow_guard_rejects_extreme_mode_counts() {
        let err = build_modal_basis(&BeamSpec::aluminum_strip(), 230, 4600).unwrap_err();
        assert!(matches!(err, Error::ModeOverflow { .. }), "{err}");
    }

    #[test]
    fn assembled_system_structure() {
        let basis = reference_basis(3, 501);
        let sys = assemble_truncated_system(&basis, &[0.0, 1.0]).unwrap();
        let n = 3;
        for i in 0..2 * n {
            for j in 0..2 * n {
                let expected = if i < n && j == i + n {
                    1.0
                } else if i >= n && j == i - n {
                    -basis.frequencies()[i - n].powi(2)
                } else {
                    0.0
                };
                assert_eq!(sys.a()[(i, j)], expected);
            }
        }
        for r in 0..2 {
            for j in n..2 * n {
                assert_eq!(sys.c()[(r, j)], 0.0);
            }
        }
        let h = basis.spec().half_height();
        for i in 0..n {
            let expected = h * 2.0 * basis.roots()[i].powi(2);
            assert!((sys.c()[(0, i)] - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn free_end_row_vanishes() {
        let basis = reference_basis(8, 501);
        let sys = assemble_truncated_system(&basis, &[2.0]).unwrap();
        let root = assemble_truncated_system(&basis, &[0.0]).unwrap();
        assert!(sys.c().amax() < 1e-9 * root.c().amax());
    }

    #[test]
    fn off_beam_sensor_is_rejected() {
        let basis = reference_basis(2, 501);
        assert!(assemble_truncated_system(&basis, &[2.5]).is_err());
        assert!(assemble_truncated_system(&basis, &[-0.1]).is_err());
    }

    #[test]
    fn sensors_snap_to_nearest_grid_point() {
        let basis = reference_basis(2, 501);
        let sys = assemble_truncated_system(&basis, &[0.0051]).unwrap();
        assert!((sys.sensor_locations()[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let basis = reference_basis(8, 501);
        let zeros = vec![0.0; 501];
        let phi3: Vec<f64> = basis.mode_shapes().column(2).iter().copied().collect();
        let ic = project_initial_condition(&basis, &phi3, &zeros).unwrap();
        for (i, a) in ic.alpha_displacement.iter().enumerate() {
            let expected = if i == 2 { 1.0 } else { 0.0 };
            assert!((a - expected).abs() < 1e-6, "alpha_{i} = {a}");
        }
        assert!(ic.alpha_velocity.iter().all(|a| *a == 0.0));

        let ic = project_initial_condition(&basis, &zeros, &zeros).unwrap();
        assert!(ic.state().iter().all(|a| *a == 0.0));
    }

    #[test]
    fn projection_rejects_length_mismatch() {
        let basis = reference_basis(2, 501);
        assert!(project_initial_condition(&basis, &[0.0; 10], &[0.0; 501]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = BeamConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: BeamConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert!(serde_json::from_str::<BeamConfig>(r#"{"length_m": 2.0, "bogus": 1}"#).is_err());
    }

    #[test]
    fn csv_has_expected_shape() {
        let basis = reference_basis(2, 41);
        let mut buf = Vec::new();
        basis.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,phi_1,phi_2,phi_xx_1,phi_xx_2");
        assert_eq!(lines.count(), 41);
    }
}
