use adjoint_lab_web::{adaptive_json, conservation_trace_json, order_study_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn order_study_reports_rk4_slope() {
    let v = parse(&order_study_json("burgers", "rk4", "20, 40, 80", 0.1).unwrap());
    let slope = v["slope"].as_f64().unwrap();
    assert!((slope - 4.0).abs() < 0.3, "{slope}");
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn adaptive_rows_show_broken_equivariance() {
    let v = parse(&adaptive_json(0.1, 0.1, 1.0, 1).unwrap());
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["residual"].as_f64().unwrap() > 1e-3));
    assert_eq!(v["passed"], true);
}

#[test]
fn lifted_series_is_flat() {
    let v = parse(&conservation_trace_json("heat", "heun", 10, 0.01, 1e-2, 7).unwrap());
    assert_eq!(v["t"].as_array().unwrap().len(), 11);
    assert!(v["lifted_drift"].as_f64().unwrap() <= 1e-12);
    assert!(v["perturbed_drift"].as_f64().unwrap() >= 1e-3);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(order_study_json("wave", "rk4", "20,40,80", 0.1).is_err());
    assert!(order_study_json("heat", "adaptive-euler", "20,40,80", 0.1).is_err());
    assert!(order_study_json("heat", "rk4", "20,x", 0.1).is_err());
    assert!(order_study_json("heat", "rk4", "20,40,100000", 0.1).is_err());
    assert!(conservation_trace_json("heat", "rk4", 0, 0.1, 0.1, 1).is_err());
}
