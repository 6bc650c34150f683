use xcf_core::flow::{run_flow, step_rk4, Backend, Branch, BreakdownReason, FlowConfig, FlowState};
use xcf_core::grid::{GridSpec, SyntheticMetric};
use xcf_core::presets::{build_preset, PresetId};
use xcf_core::tensor::{Sym2, Variance};

fn unit_hyperbolic() -> (Backend, Sym2) {
    let (algebra, state) = build_preset(PresetId::HyperbolicSolvable { alpha: 1.0, beta: 1.0 }).unwrap();
    (Backend::Homogeneous(algebra), state.q)
}

/// Fixed-step integration to `t_end`; returns the scale of `q` relative to the start.
fn integrate(backend: &Backend, q0: Sym2, t_end: f64, steps: usize) -> f64 {
    let dt = t_end / steps as f64;
    let mut state = FlowState::homogeneous(q0);
    for _ in 0..steps {
        state = step_rk4(backend, &state, dt, 1.0).unwrap();
    }
    state.metrics[0].get(0, 0) / q0.get(0, 0)
}

#[test]
fn rk4_error_is_fourth_order() {
    let (backend, q) = unit_hyperbolic();
    let exact = 5f64.sqrt();
    let errors: Vec<f64> = [4, 8, 16].iter().map(|&n| (integrate(&backend, q, 1.0, n) - exact).abs()).collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order > 3.8, "{errors:?}");
    }
}

#[test]
fn scaled_hyperbolic_data_follow_the_scaling_law() {
    let (backend, q) = unit_hyperbolic();
    for lambda in [0.5, 1.0, 2.0] {
        let q0 = q.scale(lambda);
        let config =
            FlowConfig { branch: Branch::Negative, t_end: 1.0, dt_init: 1e-3, etas: vec![], ..Default::default() };
        let trace = run_flow(&backend, &config, FlowState::homogeneous(q0)).unwrap();
        assert!(trace.breakdown.is_none());
        let c = trace.final_state.metrics[0].get(0, 0);
        let exact = (lambda * lambda + 4.0).sqrt();
        assert!(((c - exact) / exact).abs() < 1e-10, "lambda {lambda}: {c} vs {exact}");
    }
}

#[test]
fn round_sphere_becomes_extinct_at_a_quarter() {
    let (algebra, state) = build_preset(PresetId::Su2Round).unwrap();
    let config = FlowConfig { t_end: 1.0, adaptive: true, etas: vec![], ..Default::default() };
    let trace = run_flow(&Backend::Homogeneous(algebra), &config, FlowState::homogeneous(state.q)).unwrap();
    assert_eq!(trace.branch, Branch::Positive);
    let event = trace.breakdown.unwrap();
    assert_eq!(event.reason, BreakdownReason::HExceeded);
    assert!((event.t - 0.25).abs() < 1e-4, "{}", event.t);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let (algebra, state) = build_preset(PresetId::HyperbolicSolvable { alpha: 1.0, beta: 2.0 }).unwrap();
    let backend = Backend::Homogeneous(algebra);
    let config = FlowConfig { t_end: 0.5, adaptive: true, ..Default::default() };
    let a = run_flow(&backend, &config, FlowState::homogeneous(state.q)).unwrap();
    let b = run_flow(&backend, &config, FlowState::homogeneous(state.q)).unwrap();
    assert_eq!(a, b);

    let spec = GridSpec::new(12, 4).unwrap();
    let metric = SyntheticMetric { eps: 0.3, seed: 3, ..Default::default() }.generate(spec).unwrap();
    let grid = Backend::Grid(spec);
    let config = FlowConfig { branch: Branch::Negative, t_end: 2e-3, dt_init: 1e-3, ..Default::default() };
    let a = run_flow(&grid, &config, FlowState::from_grid(metric.clone()));
    let b = run_flow(&grid, &config, FlowState::from_grid(metric));
    assert_eq!(a, b);
}

#[test]
fn flat_grid_metric_does_not_move() {
    let spec = GridSpec::new(10, 2).unwrap();
    let identity = Sym2::identity(Variance::Covariant);
    let metric = xcf_core::grid::MetricGrid::constant(spec, identity).unwrap();
    let state = step_rk4(&Backend::Grid(spec), &FlowState::from_grid(metric), 0.1, 1.0).unwrap();
    assert!(state.metrics.iter().all(|g| *g == identity));
}
