mod common;

use common::m1;
use deep2fbsde::dynamics::linear_model;
use deep2fbsde::sde::{fsde_step, sample_noise, sample_path, StepNoise, TimeGrid};
use nalgebra::DVector;
use rayon::prelude::*;

const PATHS: u64 = 100_000;

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

fn terminal_states(a: f64, c: f64, sigma: f64, u: f64, seed: u64) -> Vec<f64> {
    let grid = TimeGrid::new(250, 0.004).unwrap();
    let model = linear_model(m1(a), m1(1.0), m1(c), sigma, DVector::from_element(1, 1.0)).unwrap();
    let u = DVector::from_element(1, u);
    (0..PATHS)
        .into_par_iter()
        .map(|i| {
            let noise = sample_path(&grid, 1, seed, i);
            let mut x = model.x0().clone();
            for k in 0..grid.n_steps() {
                let coeff = model.eval(grid.time(k), &x).unwrap();
                let sn = StepNoise { step: k, dt: grid.dt(), dv: noise.dv(k), dw: noise.dw(k) };
                x = fsde_step(&x, &coeff, &u, model.sigma(), &sn).unwrap();
            }
            x[0]
        })
        .collect()
}

#[test]
fn ou_mean_matches_closed_form() {
    let xs = terminal_states(0.2, 0.1, 0.0, 0.0, 3);
    let (mean, var) = mean_and_var(&xs);
    let se = (var / PATHS as f64).sqrt();
    let exact = 0.2f64.exp();
    assert!((mean - exact).abs() <= 3.0 * se, "mean {mean} vs {exact} (se {se})");
}

#[test]
fn multiplicative_noise_variance_follows_ito_isometry() {
    // dx = σBu dv with u = 1: Var x(T) = σ²B²u²T.
    let xs = terminal_states(0.0, 0.0, 0.5, 1.0, 4);
    let (mean, var) = mean_and_var(&xs);
    let exact = 0.25;
    let se = exact * (2.0 / (PATHS as f64 - 1.0)).sqrt();
    assert!((var - exact).abs() <= 3.0 * se, "var {var} vs {exact} (se {se})");
    // drift u·T = 1 on top of x0 = 1
    assert!((mean - 2.0).abs() <= 3.0 * (exact / PATHS as f64).sqrt());
}

#[test]
fn dv_entries_have_zero_mean() {
    let grid = TimeGrid::new(250, 0.004).unwrap();
    let paths = sample_noise(&grid, 0, 400, 21);
    let dv: Vec<f64> = paths.iter().flat_map(|p| p.dv_all().iter().copied()).collect();
    assert_eq!(dv.len(), 100_000);
    let (mean, _) = mean_and_var(&dv);
    let se = (0.004f64 / dv.len() as f64).sqrt();
    assert!(mean.abs() <= 3.0 * se, "mean {mean}");
}

#[test]
fn dw_entries_have_variance_dt() {
    let grid = TimeGrid::new(50, 0.02).unwrap();
    let paths = sample_noise(&grid, 2, 1000, 22);
    let dw: Vec<f64> = paths.iter().flat_map(|p| p.dw_all().iter().copied()).collect();
    assert_eq!(dw.len(), 100_000);
    let (_, var) = mean_and_var(&dw);
    let se = 0.02 * (2.0 / (dw.len() as f64 - 1.0)).sqrt();
    assert!((var - 0.02).abs() <= 3.0 * se, "var {var}");
}

#[test]
fn dv_and_dw_are_uncorrelated() {
    let grid = TimeGrid::new(100, 0.01).unwrap();
    let paths = sample_noise(&grid, 1, 1000, 23);
    let n = (grid.n_steps() * paths.len()) as f64;
    let cov: f64 = paths.iter().flat_map(|p| p.dv_all().iter().zip(p.dw_all()).map(|(a, b)| a * b)).sum::<f64>() / n;
    // each product has std dt
    assert!(cov.abs() <= 3.0 * 0.01 / n.sqrt(), "cov {cov}");
}

#[test]
fn noise_shapes_and_reproducibility() {
    let grid = TimeGrid::new(5, 0.02).unwrap();
    let a = sample_noise(&grid, 2, 3, 7);
    assert_eq!(a.len(), 3);
    for p in &a {
        assert_eq!(p.dv_all().len(), 5);
        assert_eq!(p.dw_all().len(), 10);
    }
    assert_eq!(a, sample_noise(&grid, 2, 3, 7));
    assert_ne!(a, sample_noise(&grid, 2, 3, 8));
}
