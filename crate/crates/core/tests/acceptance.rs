//! Acceptance suite: one test per criterion, each enforcing its tolerance
//! and runtime limit. Run with `--nocapture` for measured values.

use std::time::Instant;

use stode_core::metrics::{multi_step_metrics, single_step_metrics};
use stode_core::verify::{self, Check};
use stode_core::Tensor;

struct Outcome {
    id: usize,
    title: &'static str,
    checks: Vec<Check>,
    seconds: f64,
    limit: f64,
}

impl Outcome {
    fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass) && self.seconds < self.limit
    }

    fn line(&self) -> String {
        let failed: Vec<String> = self.checks.iter().filter(|c| !c.pass).map(|c| c.to_string()).collect();
        let detail = if failed.is_empty() {
            format!("{} checks", self.checks.len())
        } else {
            failed.join("; ")
        };
        format!(
            "criterion {:>2} [{}] {:<44} {:>8.2}s (limit {}s) {}",
            self.id,
            if self.pass() { "PASS" } else { "FAIL" },
            self.title,
            self.seconds,
            self.limit,
            detail
        )
    }
}

fn run(id: usize, title: &'static str, limit: f64, f: impl FnOnce() -> stode_core::Result<Vec<Check>>) -> Outcome {
    let t = Instant::now();
    let checks = f().unwrap_or_else(|e| panic!("criterion {id} errored: {e}"));
    Outcome {
        id,
        title,
        checks,
        seconds: t.elapsed().as_secs_f64(),
        limit,
    }
}

fn close(name: &str, measured: f64, expected: f64) -> Check {
    Check {
        suite: "metrics",
        name: format!("{name} = {expected}"),
        measured,
        condition: "within 1e-9".into(),
        pass: (measured - expected).abs() <= 1e-9,
        seconds: 0.0,
    }
}

fn metric_hand_values() -> stode_core::Result<Vec<Check>> {
    let col = |v: &[f64]| Tensor::new(vec![v.len(), 1], v.to_vec());
    let s = single_step_metrics(&col(&[1.1, 2.1, 3.1])?, &col(&[1.0, 2.0, 3.0])?)?;
    let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec());
    let m = multi_step_metrics(&row(&[1.0, 6.0])?, &row(&[2.0, 4.0])?, Some(0.0))?;
    Ok(vec![
        close("single-step CORR", s.corr, 1.0),
        close("single-step RSE", s.rse, 0.03f64.sqrt() / 2.0f64.sqrt()),
        close("multi-step MAE", m.mae, 1.5),
        close("multi-step RMSE", m.rmse, 2.5f64.sqrt()),
        close("multi-step MAPE", m.mape, 50.0),
    ])
}

fn check(outcome: Outcome) {
    println!("{}", outcome.line());
    for c in &outcome.checks {
        println!("    {c}");
    }
    assert!(outcome.pass(), "{}", outcome.line());
}

#[test]
fn criterion_01_unit_step_diffusion_equals_khop_power() {
    check(run(1, "discrete equivalence, spatial", 1.0, verify::khop_equivalence));
}

#[test]
fn criterion_02_unit_step_aggregation_equals_residual_stack() {
    check(run(
        2,
        "discrete equivalence, temporal",
        5.0,
        verify::temporal_equivalence,
    ));
}

#[test]
fn criterion_03_convergence_orders_against_heat_kernel() {
    check(run(
        3,
        "convergence order against heat kernel",
        10.0,
        verify::convergence_orders,
    ));
}

#[test]
fn criterion_04_euler_error_within_a_priori_bound() {
    check(run(4, "Euler a-priori error bound", 10.0, || {
        Ok(vec![verify::euler_bound(20)?])
    }));
}

#[test]
fn criterion_05_oversmoothing_contrast() {
    check(run(5, "over-smoothing contrast", 5.0, verify::oversmoothing));
}

#[test]
fn criterion_06_end_to_end_gradients_match_finite_differences() {
    check(run(
        6,
        "end-to-end gradient integrity",
        60.0,
        verify::gradient_integrity,
    ));
}

#[test]
fn criterion_07_learned_graph_structure() {
    check(run(7, "graph learner structure", 5.0, || {
        Ok(vec![verify::learner_structure(100)?])
    }));
}

#[test]
fn criterion_08_receptive_field_ledger() {
    check(run(8, "receptive-field ledger", 5.0, verify::receptive_field_ledger));
}

#[test]
fn criterion_09_synthetic_chain_forecasting_and_recovery() {
    check(run(9, "synthetic chain forecasting", 300.0, || {
        verify::synthetic_forecasting(1)
    }));
}

#[test]
fn criterion_10_parameter_count_audit() {
    check(run(10, "parameter-count audit", 1.0, verify::parameter_audit));
}

#[test]
fn criterion_11_metric_hand_values() {
    check(run(11, "metric hand values", 1.0, metric_hand_values));
}
