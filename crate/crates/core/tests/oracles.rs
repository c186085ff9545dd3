//! Independent oracles: values computed outside the library (high-precision
//! bisection, a textbook Kalman filter, chi-square quantiles) and frozen here.

use beamobs::beam_model::{assemble_at_indices, build_modal_basis, find_characteristic_roots, BeamSpec};
use beamobs::estimate::{run_estimation, UkfSettings, UnscentedFilter};
use beamobs::gramian::{observability_matrix, single_sensor_determinant};
use beamobs::placement::curvature_peak_placement;
use beamobs::simulate::{propagate_closed_form, synthesize_measurements, TimeGrid};
use beamobs::{assemble_truncated_system, InitialCondition};
use nalgebra::{DMatrix, DVector};

/// Roots of cos(x) cosh(x) + 1 from 50-digit bisection.
const ROOTS: [f64; 10] = [
    1.8751040687119612,
    4.6940911329741746,
    7.8547574382376126,
    10.995540734875467,
    14.137168391046471,
    17.278759532088236,
    20.420352251041251,
    23.561944901806444,
    26.703537555518299,
    29.845130209102817,
];

/// Natural frequencies [rad/s] of the 2 m x 20 mm x 5 mm aluminium strip.
const OMEGA: [f64; 10] = [
    6.4600708377481899,
    40.484572879068589,
    113.35797633588937,
    222.13639090667288,
    367.20737071894845,
    548.54422741906726,
    766.14855479938762,
    1020.0202649848313,
    1310.159362594025,
    1636.5658473918926,
];

/// Interior zeros of phi_k,xx on [0, 2] for modes 2..4 (all modes vanish at L too).
const CURVATURE_ZEROS: [&[f64]; 3] = [
    &[0.43311089899888135],
    &[0.26464481679398489, 0.99290425324588863],
    &[0.18887198609041557, 0.71182412366895466, 1.2833249644853228],
];

/// Plain f64 bisection on cos(x) + 1/cosh(x), written without the library.
fn bisect_root(i: usize) -> f64 {
    let g = |x: f64| x.cos() + 1.0 / x.cosh();
    let c = (2 * i - 1) as f64 * std::f64::consts::FRAC_PI_2;
    let (mut lo, mut hi) = (c - 1.0, c + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn roots_match_bisection_oracles() {
    let roots = find_characteristic_roots(10, 1e-12).unwrap();
    for (i, r) in roots.iter().enumerate() {
        assert!((r - ROOTS[i]).abs() < 1e-8, "root {}: {r} vs {}", i + 1, ROOTS[i]);
        assert!((r - bisect_root(i + 1)).abs() < 1e-8);
        assert!((r.cos() + 1.0 / r.cosh()).abs() < 1e-10);
    }
}

#[test]
fn tenth_root_is_near_its_asymptote() {
    let roots = find_characteristic_roots(10, 1e-12).unwrap();
    assert!((roots[9] - 19.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-6);
}

#[test]
fn frequencies_match_frozen_values() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 10, 501).unwrap();
    for (w, want) in basis.frequencies().iter().zip(OMEGA) {
        assert!((w - want).abs() < 1e-9 * want, "{w} vs {want}");
    }
    // ratio tends to ((2i-1)/(2i-3))^2
    let w = basis.frequencies();
    for i in 5..10 {
        let asym = ((2 * i + 1) as f64 / (2 * i - 1) as f64).powi(2);
        assert!((w[i] / w[i - 1] / asym - 1.0).abs() < 1e-6);
    }
}

#[test]
fn orthogonality_improves_with_refinement() {
    let spec = BeamSpec::aluminum_strip();
    let coarse = build_modal_basis(&spec, 10, 501).unwrap().orthogonality_defect();
    let fine = build_modal_basis(&spec, 10, 2001).unwrap().orthogonality_defect();
    assert!(coarse < 1e-6, "{coarse}");
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn curvature_matches_finite_differences() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 10, 2001).unwrap();
    let h = basis.spacing();
    let phi = basis.mode_shapes();
    let curv = basis.curvatures();
    for k in 0..10 {
        let scale = curv.column(k).amax();
        let worst = (1..basis.grid_size() - 1)
            .map(|j| {
                let fd = (phi[(j + 1, k)] - 2.0 * phi[(j, k)] + phi[(j - 1, k)]) / (h * h);
                (fd - curv[(j, k)]).abs() / scale
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "mode {}: {worst}", k + 1);
    }
}

#[test]
fn state_matrix_spectrum_is_imaginary() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 8, 501).unwrap();
    let sys = assemble_truncated_system(&basis, &[0.0]).unwrap();
    let eig = sys.a().clone().complex_eigenvalues();
    let wmax = OMEGA[7];
    let mut imag: Vec<f64> = eig.iter().map(|l| l.im).filter(|v| *v > 0.0).collect();
    imag.sort_by(f64::total_cmp);
    for l in eig.iter() {
        assert!(l.re.abs() < 1e-9 * wmax);
    }
    for (got, want) in imag.iter().zip(OMEGA) {
        assert!((got - want).abs() < 1e-9 * want);
    }
}

#[test]
fn curvature_zeros_break_single_sensor_observability() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 4, 501).unwrap();
    for (m, zeros) in CURVATURE_ZEROS.iter().enumerate() {
        let mode = &basis.modes()[m + 1];
        let scale = basis.curvatures().column(m + 1).amax();
        for &z in zeros.iter() {
            assert!(mode.curvature(z).abs() < 1e-10 * scale);
            let report = single_sensor_determinant(&basis, z).unwrap();
            assert!(!report.observable, "x = {z}");
            assert!(report.curvature_zeros[m + 1]);
        }
    }
    assert!(single_sensor_determinant(&basis, 0.0).unwrap().observable);
    assert!(single_sensor_determinant(&basis, 0.1).unwrap().observable);
}

#[test]
fn curvature_peak_layout_reaches_the_root() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 10, 501).unwrap();
    let s = curvature_peak_placement(&basis, 10).unwrap();
    assert!(s.contains(&0), "{s:?}");
}

fn test_ic(basis: &beamobs::ModalBasis) -> InitialCondition {
    let n = basis.n_modes();
    let a1: Vec<f64> = (0..n).map(|i| 0.01 / (i + 1) as f64).collect();
    let a2: Vec<f64> = (0..n).map(|i| if i == 0 { 0.02 } else { 0.0 }).collect();
    InitialCondition::from_modal(basis, &a1, &a2).unwrap()
}

/// Textbook linear Kalman filter on the same discrete transition.
#[test]
fn ukf_matches_linear_kalman_filter() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 4, 501).unwrap();
    let sys = assemble_at_indices(&basis, &[0, 60, 170, 300]).unwrap();
    let period = basis.slowest_period();
    let dt = period / 2000.0;
    let settings = UkfSettings::default();
    let config = settings.config(4, 4, dt);
    let filter = UnscentedFilter::new(&sys, config.clone()).unwrap();

    let grid = TimeGrid::with_steps(500.0 * dt, 500).unwrap();
    let truth = propagate_closed_form(&sys, &test_ic(&basis), &grid).unwrap();
    let meas = synthesize_measurements(&truth, &config.measurement_noise, 7).unwrap();

    let f = filter.transition().clone();
    let c = sys.c().clone();
    let q = config.process_noise.clone();
    let r = config.measurement_noise.clone();
    let x0 = &truth.states[0] + DVector::from_element(8, 1e-3);
    let (mut xu, mut pu) = (x0.clone(), config.initial_covariance.clone());
    let (mut xk, mut pk) = (x0, config.initial_covariance.clone());
    for k in 1..=500 {
        (xu, pu) = filter.step(&xu, &pu, &meas.noisy[k], k).unwrap();

        let xp = &f * &xk;
        let pp = &f * &pk * f.transpose() + &q;
        let s = &c * &pp * c.transpose() + &r;
        let gain = &pp * c.transpose() * s.clone().try_inverse().unwrap();
        xk = &xp + &gain * (&meas.noisy[k] - &c * &xp);
        let joseph = DMatrix::identity(8, 8) - &gain * &c;
        pk = &joseph * pp * joseph.transpose() + &gain * r.clone() * gain.transpose();

        let mean_err = (&xu - &xk).norm() / xk.norm();
        let cov_err = (&pu - &pk).norm() / pk.norm();
        assert!(mean_err < 1e-6, "step {k}: mean {mean_err:e}");
        assert!(cov_err < 1e-6, "step {k}: covariance {cov_err:e}");
    }
}

/// Chi-square(400)/20 central 95% interval: the mean of 20 independent
/// NEES values of a 20-state filter.
const NEES_MEAN_BAND: (f64, f64) = (17.324088268145733, 22.86527409830325);

#[test]
fn nees_is_consistent_over_twenty_seeds() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 10, 501).unwrap();
    let sys = assemble_at_indices(&basis, &[0, 5, 10, 15, 20, 25, 30, 35, 40, 45]).unwrap();
    let period = basis.slowest_period();
    // Calibrated: the truth carries no process noise, so neither does the filter.
    let settings = UkfSettings {
        process_noise: 0.0,
        ..UkfSettings::default()
    };
    let config = settings.config(10, 10, period / 2000.0);
    let ic = test_ic(&basis);
    let finals: Vec<f64> = (0..20)
        .map(|seed| {
            let run = run_estimation(&sys, &ic, &config, 0.25 * period, seed).unwrap();
            *run.nees.last().unwrap()
        })
        .collect();
    let mean = finals.iter().sum::<f64>() / 20.0;
    assert!(
        (NEES_MEAN_BAND.0..=NEES_MEAN_BAND.1).contains(&mean),
        "mean NEES {mean} outside {NEES_MEAN_BAND:?}"
    );
}

#[test]
fn root_sensor_beats_free_end_sensor() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 3, 501).unwrap();
    let period = basis.slowest_period();
    let config = UkfSettings::default().config(3, 1, period / 500.0);
    let ic = test_ic(&basis);
    let root = assemble_at_indices(&basis, &[0]).unwrap();
    let tip = assemble_at_indices(&basis, &[500]).unwrap();
    let at_root = run_estimation(&root, &ic, &config, period, 3).unwrap();
    let at_tip = run_estimation(&tip, &ic, &config, period, 3).unwrap();
    assert!(at_root.time_averaged_trace() < at_tip.time_averaged_trace());
}

#[test]
fn observability_rank_is_full_at_the_root() {
    let basis = build_modal_basis(&BeamSpec::aluminum_strip(), 4, 501).unwrap();
    let sys = assemble_truncated_system(&basis, &[0.0]).unwrap();
    assert_eq!(observability_matrix(&sys).rank, 8);
    let sys = assemble_truncated_system(&basis, &[CURVATURE_ZEROS[0][0]]).unwrap();
    let x = sys.sensor_locations()[0];
    // the snapped grid point is within a cell of the zero, not on it
    assert!((x - CURVATURE_ZEROS[0][0]).abs() <= basis.spacing());
}
