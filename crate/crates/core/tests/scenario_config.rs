use closedloop::scenario::{run_scenario, validate_config, validate_value, CheckType, Instance, Kind, Status};
use closedloop::Error;
use proptest::prelude::*;
use serde_json::{json, Value};

fn affine_flow1() -> Value {
    json!({
        "kind": "flow1",
        "instance": { "family": "affine_dirac", "mu": 2.0, "epsilon": 0.5, "theta0": 1.0 }
    })
}

fn schema_path(e: Error) -> String {
    match e {
        Error::Schema { path, .. } => path,
        other => panic!("expected a schema error, got {other:?}"),
    }
}

fn constraint_path(e: Error) -> String {
    match e {
        Error::Constraint { path, .. } => path,
        other => panic!("expected a constraint error, got {other:?}"),
    }
}

#[test]
fn minimal_flow1_echoes_rho_and_fills_defaults() {
    let c = validate_value(&affine_flow1()).unwrap();
    assert_eq!(c.kind, Kind::Flow1);
    assert_eq!(c.derived.rho, Some(0.25));
    assert_eq!(c.derived.beta_tau, Some(0.5));
    let s = &c.solver;
    assert_eq!(s.t0, Some(1.0));
    assert_eq!(s.t_end, Some(1.0 + 12.0 / 1.5));
    assert_eq!(s.h, Some(1e-3));
    assert_eq!(s.x0.as_deref(), Some(&[0.0][..]));
    assert_eq!(s.scheme.as_deref(), Some("forward_backward"));
    assert!(s.omega.is_none() && s.steps.is_none());
}

#[test]
fn missing_mu_is_reported_at_its_path() {
    let mut v = affine_flow1();
    v["instance"].as_object_mut().unwrap().remove("mu");
    assert_eq!(schema_path(validate_value(&v).unwrap_err()), "instance.mu");
}

#[test]
fn horizon_constraints() {
    let mut v = affine_flow1();
    v["solver"] = json!({ "t0": 2.0, "T": 1.0 });
    assert_eq!(constraint_path(validate_value(&v).unwrap_err()), "solver.T");
    v["solver"] = json!({ "t0": 0.0 });
    assert_eq!(constraint_path(validate_value(&v).unwrap_err()), "solver.t0");
    v["solver"] = json!({ "t0": -1.0, "T": 3.0 });
    assert_eq!(constraint_path(validate_value(&v).unwrap_err()), "solver.t0");
}

#[test]
fn schema_errors_name_the_offending_field() {
    let cases = [
        (json!({ "instance": affine_flow1()["instance"] }), "kind"),
        (json!({ "kind": "flow3", "instance": affine_flow1()["instance"] }), "kind"),
        (json!({ "kind": "flow1" }), "instance"),
        (
            json!({ "kind": "flow1", "instance": { "family": "affine_dirac", "mu": "two", "epsilon": 0.5, "theta0": 1 } }),
            "instance.mu",
        ),
        (
            json!({ "kind": "flow1", "instance": { "family": "affine_dirac", "mu": 2, "epsilon": 0.5, "theta0": 1, "extra": 1 } }),
            "instance.extra",
        ),
        (
            json!({ "kind": "flow1", "instance": affine_flow1()["instance"], "solver": { "omega": 0.1 } }),
            "solver.omega",
        ),
        (
            json!({ "kind": "flow1", "instance": affine_flow1()["instance"], "checks": [{ "type": "bogus" }] }),
            "checks[0].type",
        ),
        (
            json!({ "kind": "flow2", "instance": affine_flow1()["instance"] }),
            "solver.omega",
        ),
        (json!({ "kind": "flow1", "instance": { "family": "nope" } }), "instance.family"),
    ];
    for (value, path) in cases {
        assert_eq!(schema_path(validate_value(&value).unwrap_err()), path, "{value}");
    }
}

#[test]
fn constraint_errors_name_the_offending_field() {
    let inst = affine_flow1()["instance"].clone();
    let cases = [
        (
            json!({ "kind": "flow1", "instance": { "family": "affine_dirac", "mu": -2, "epsilon": 0.5, "theta0": 1 } }),
            "instance.mu",
        ),
        (json!({ "kind": "curvature", "instance": inst }), "instance.family"),
        (
            json!({ "kind": "flow1", "instance": inst, "solver": { "x0": [1.0, 2.0] } }),
            "solver.x0",
        ),
        (
            json!({ "kind": "flow1", "instance": inst, "checks": [{ "type": "contraction" }] }),
            "checks[0].type",
        ),
        (
            json!({ "kind": "flow1", "instance": inst, "derived": { "rho": 0.3 } }),
            "derived.rho",
        ),
        (
            json!({ "kind": "curvature", "instance": { "family": "graph_walk", "edges": [[0, 1]], "alpha": 1.5 } }),
            "instance.alpha",
        ),
        (
            json!({ "kind": "flow1", "instance": { "family": "projected_quadratic", "mu": 1, "epsilon": 0.1, "theta0": 1 }, "solver": { "x0": -1.0 } }),
            "solver.x0",
        ),
    ];
    for (value, path) in cases {
        assert_eq!(constraint_path(validate_value(&value).unwrap_err()), path, "{value}");
    }
}

#[test]
fn consistent_derived_values_are_accepted() {
    let mut v = affine_flow1();
    v["derived"] = json!({ "rho": 0.25, "mu": 2.0 });
    assert!(validate_value(&v).is_ok());
}

#[test]
fn invalid_json_is_an_error() {
    assert!(matches!(validate_config("{ not json"), Err(Error::Json(_))));
}

#[test]
fn affine_flow1_run_reports_the_rate() {
    let mut v = affine_flow1();
    v["checks"] = json!([{ "type": "envelope" }, { "type": "rate" }]);
    let run = run_scenario(&validate_value(&v).unwrap());
    let r = &run.report;
    assert_eq!(run.exit_code(), 0);
    assert_eq!(r.status, Status::Ok);
    assert!((r.fitted_rate.unwrap() - 1.5).abs() <= 0.015);
    assert_eq!(r.theoretical_rate, Some(1.5));
    assert_eq!(r.bound_satisfied, Some(true));
    assert!((r.equilibrium.as_ref().unwrap()[0] - 2.0 / 3.0).abs() <= 1e-10);
    let csv = run.csv.unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x_0,distance,envelope");
}

#[test]
fn flow2_with_bad_omega_and_strict_check_exits_2() {
    let v = json!({
        "kind": "flow2",
        "instance": { "family": "affine_dirac", "mu": 2.0, "epsilon": 0.2, "theta0": 1.0 },
        "solver": { "omega": 0.5, "T": 5.0 },
        "checks": [{ "type": "envelope" }]
    });
    let run = run_scenario(&validate_value(&v).unwrap());
    assert_eq!(run.exit_code(), 2);
    assert_eq!(run.report.status, Status::Violation);
    assert!(run.report.warnings.iter().any(|w| w.contains("damping condition")));

    let mut lenient = v.clone();
    lenient["checks"] = json!([{ "type": "damping_condition", "strict": false }]);
    let run = run_scenario(&validate_value(&lenient).unwrap());
    assert_eq!(run.exit_code(), 0);
    assert!(!run.report.checks[0].satisfied);

    let mut unchecked = v;
    unchecked["checks"] = json!([]);
    let run = run_scenario(&validate_value(&unchecked).unwrap());
    assert_eq!(run.exit_code(), 0);
    assert_eq!(run.report.bound_satisfied, None);
    assert!(!run.report.warnings.is_empty());
}

#[test]
fn curvature_two_point_reports_kappa() {
    let v = json!({
        "kind": "curvature",
        "instance": { "family": "graph_walk", "edges": [[0, 1]], "alpha": 0.3 },
        "checks": [{ "type": "envelope" }, { "type": "contraction" }]
    });
    let run = run_scenario(&validate_value(&v).unwrap());
    assert_eq!(run.exit_code(), 0);
    let kappa = run.report.metrics["kappa"].as_f64().unwrap();
    assert!((kappa - 0.6).abs() <= 1e-12);
    let eq = run.report.equilibrium.unwrap();
    assert!((eq[0] - 0.5).abs() <= 1e-12 && (eq[1] - 0.5).abs() <= 1e-12);
}

#[test]
fn runtime_errors_are_captured_with_exit_1() {
    // ρ = 3/2: the equilibrium map is not a contraction.
    let v = json!({
        "kind": "flow1",
        "instance": { "family": "affine_dirac", "mu": 2.0, "epsilon": 3.0, "theta0": 1.0 },
        "solver": { "T": 2.0 }
    });
    let run = run_scenario(&validate_value(&v).unwrap());
    assert_eq!(run.exit_code(), 1);
    assert_eq!(run.report.status, Status::Error);
    let err = run.report.error.unwrap();
    assert_eq!(err.kind, "ConditionViolated");
    assert!(run.csv.is_none());
}

#[test]
fn ispds_condition_violation_fails_checks_not_the_run() {
    let v = json!({
        "kind": "ispds",
        "instance": { "family": "scalar_saddle", "mu_p": 2, "mu_d": 2, "eps_p": 1.0, "theta_p": 1, "eps_d": 1.0, "theta_d": 0, "k": 1 },
        "solver": { "T": 3.0 },
        "checks": [{ "type": "envelope" }, { "type": "damping_condition" }]
    });
    let run = run_scenario(&validate_value(&v).unwrap());
    assert_eq!(run.exit_code(), 2);
    assert!(run.report.checks.iter().all(|c| !c.satisfied));
}

#[test]
fn equilibrium_kind_covers_the_saddle() {
    let v = json!({
        "kind": "equilibrium",
        "instance": { "family": "scalar_saddle", "mu_p": 2, "mu_d": 2, "eps_p": 0.2, "theta_p": 1, "eps_d": 0.2, "theta_d": 0, "k": 1 },
        "checks": [{ "type": "envelope", "tolerance": 1e-6 }]
    });
    let c = validate_value(&v).unwrap();
    assert!((c.derived.rho.unwrap() - 0.1).abs() <= 1e-15);
    let run = run_scenario(&c);
    assert_eq!(run.exit_code(), 0);
    let z = run.report.equilibrium.unwrap();
    assert!((z[0] - 0.42453).abs() <= 1e-5 && (z[1] - 0.23585).abs() <= 1e-5);
}

fn arb_instance() -> impl Strategy<Value = Value> {
    prop_oneof![
        (0.5f64..4.0, -0.4f64..0.4, prop::collection::vec(-2.0f64..2.0, 1..3)).prop_map(|(mu, e, t)| json!({
            "family": "affine_dirac", "mu": mu, "epsilon": e * mu, "theta0": t
        })),
        (0.5f64..4.0, -0.4f64..0.4, -2.0f64..2.0, 0.1f64..2.0).prop_map(|(mu, e, t, s)| json!({
            "family": "affine_gauss", "mu": mu, "epsilon": e * mu, "theta0": t, "sigma": s
        })),
        (0.5f64..4.0, -0.4f64..0.4, prop::collection::vec(-2.0f64..2.0, 1..3)).prop_map(|(mu, e, t)| json!({
            "family": "projected_quadratic", "mu": mu, "epsilon": e * mu, "theta0": t
        })),
    ]
}

fn arb_config() -> impl Strategy<Value = Value> {
    let kinds = prop::sample::select(vec!["equilibrium", "flow1", "w1"]);
    (
        kinds,
        arb_instance(),
        0.1f64..3.0,
        1.0f64..5.0,
        any::<u64>(),
        prop::option::of(0.5f64..3.0),
    )
        .prop_map(|(kind, inst, t0, span, seed, mult)| {
            let mut v = json!({ "kind": kind, "instance": inst, "solver": { "seed": seed } });
            if kind != "equilibrium" {
                v["solver"]["t0"] = json!(t0);
                v["solver"]["T"] = json!(t0 + span);
            }
            if let Some(m) = mult {
                v["checks"] = json!([{ "type": "envelope", "rate_multiplier": m, "strict": false }]);
            }
            v
        })
}

proptest! {
    #[test]
    fn config_round_trips(v in arb_config()) {
        let c = validate_value(&v).unwrap();
        let again = validate_config(&c.to_json_string()).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.to_json_string(), c.to_json_string());
    }

    #[test]
    fn rho_echo_matches_the_constants(mu in 0.1f64..10.0, e in -5.0f64..5.0) {
        let v = json!({
            "kind": "equilibrium",
            "instance": { "family": "affine_dirac", "mu": mu, "epsilon": e, "theta0": 0.0 }
        });
        let c = validate_value(&v).unwrap();
        prop_assert_eq!(c.derived.rho, Some(e.abs() / mu));
    }
}

#[test]
fn saddle_and_walk_configs_round_trip() {
    for v in [
        json!({
            "kind": "ispds",
            "instance": { "family": "scalar_saddle", "mu_p": 2, "mu_d": 3, "eps_p": 0.2, "theta_p": 1, "eps_d": -0.1, "theta_d": 0.5, "k": 2 },
            "checks": [{ "type": "damping_condition" }, { "type": "rate", "tolerance": 0.5 }]
        }),
        json!({
            "name": "walk",
            "kind": "curvature",
            "instance": { "family": "graph_walk", "n": 4, "edges": [[0, 1, 2.0], [1, 2], [2, 3]], "alpha": 0.5 },
            "solver": { "seed": 11, "steps": 5, "samples": 3 },
            "outputs": { "csv_path": "walk.csv" }
        }),
        json!({
            "kind": "flow2",
            "instance": { "family": "affine_gauss", "mu": 2, "epsilon": 0.2, "theta0": 1, "sigma": 0.3 },
            "solver": { "omega": 0.05, "v0": 1.0 }
        }),
    ] {
        let c = validate_value(&v).unwrap();
        assert_eq!(validate_config(&c.to_json_string()).unwrap(), c);
        if let Instance::GraphWalk { edges, .. } = &c.instance {
            assert_eq!(edges[1], (1, 2, 1.0));
        }
    }
}

#[test]
fn check_defaults_depend_on_the_type() {
    let mut v = affine_flow1();
    v["checks"] = json!([{ "type": "envelope" }, { "type": "rate" }]);
    let c = validate_value(&v).unwrap();
    assert_eq!(c.checks[0].check, CheckType::Envelope);
    assert_eq!(c.checks[0].tolerance, 1e-6);
    assert_eq!(c.checks[1].tolerance, 1e-2);
    assert!(c.checks.iter().all(|k| k.strict && k.rate_multiplier == 1.0));
}
