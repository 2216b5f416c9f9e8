use deep2fbsde::cost::CostSpec;
use deep2fbsde::dynamics::{cartpole_model, quadcopter_model};
use deep2fbsde::net::{InitStrategy, NetworkParams};
use deep2fbsde::sde::{sample_noise, TimeGrid};
use deep2fbsde::training::gradcheck::{check_problem, random_instance};
use deep2fbsde::training::LossWeights;
use deep2fbsde::Problem;
use nalgebra::{DMatrix, DVector};

#[test]
fn randomized_linear_instances_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let inst = random_instance(seed).unwrap();
        let report = check_problem(&inst.problem, &inst.params, &inst.noise, &inst.weights, 1e-4).unwrap();
        let failed: Vec<_> = report.failures().map(|g| g.name.clone()).collect();
        assert!(report.passed(), "seed {seed}: {failed:?}");
        worst = worst.max(report.max_rel_err());
    }
    assert!(worst <= 1e-4);
}

#[test]
fn cartpole_gradients_match_finite_differences() {
    let model = cartpole_model(0.01, 1.0, 0.5, 0.125).unwrap().with_x0(DVector::from_vec(vec![0.1, 0.4, 0.0, -0.2])).unwrap();
    let cost = CostSpec::new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 0.1, 0.1])),
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 0.1, 0.1])),
        DVector::from_vec(vec![0.0, std::f64::consts::PI, 0.0, 0.0]),
    )
    .unwrap();
    let problem = Problem::new(model, cost, TimeGrid::new(4, 0.02).unwrap()).unwrap();
    let params = NetworkParams::init(InitStrategy::Xavier, 3, 4, &[4], 0.1).unwrap();
    let noise = sample_noise(&problem.grid, 4, 2, 9);
    let w = LossWeights { c4: 1.0, lambda: 5e-4, ..LossWeights::default() };
    let report = check_problem(&problem, &params, &noise, &w, 1e-4).unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn quadcopter_gradients_match_finite_differences() {
    let model = quadcopter_model(0.47, 4.86e-3, 4.86e-3, 8.8e-3, 0.225, 0.05, 0.05).unwrap();
    let x0 = DVector::from_fn(12, |i, _| 0.05 * (i as f64 - 5.0));
    let model = model.with_x0(x0).unwrap();
    let cost = CostSpec::new(
        DMatrix::identity(12, 12) * 0.1,
        DMatrix::identity(4, 4) * 10.0,
        DMatrix::identity(12, 12),
        DVector::zeros(12),
    )
    .unwrap();
    let problem = Problem::new(model, cost, TimeGrid::new(3, 0.01).unwrap()).unwrap();
    let params = NetworkParams::init(InitStrategy::Xavier, 5, 12, &[3], 0.1).unwrap();
    let noise = sample_noise(&problem.grid, 12, 2, 10);
    let report = check_problem(&problem, &params, &noise, &LossWeights::default(), 1e-4).unwrap();
    assert!(report.passed(), "{report:#?}");
}
