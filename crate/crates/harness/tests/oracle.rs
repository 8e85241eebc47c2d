use wgflow::SymMatrix;
use wgflow_harness::config::parse_config;
use wgflow_harness::experiment::{oracle_check, oracle_check_with, OracleCheckOptions};

#[test]
fn long_small_step_run_matches_closed_form() {
    let cfg = parse_config(
        "family = \"gaussian\"\ncomponents = 100\ndim = 2\nsteps = 2000\neta = 0.005\nparticles = 10000\ncheckpoint_every = 100\n",
    )
    .unwrap();
    let report = oracle_check(&cfg).unwrap();
    println!("{report}");
    assert!(report.passed(), "{report}");
    assert!(report.svrg_max_deviation.unwrap() <= 1e-12);
}

#[test]
fn wrong_sgld_diffusion_is_detected() {
    // Means (±1, ±1) give Var(ξ) = I exactly.
    let cfg = parse_config(
        "family = \"gaussian\"\nmeans = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]\nmethods = [\"ula\", \"sgld\"]\nsteps = 200\neta = 0.2\nparticles = 10000\ncheckpoint_every = 10\n",
    )
    .unwrap();
    let right = oracle_check(&cfg).unwrap();
    println!("{right}");
    assert!(right.comparisons[0].passed, "{right}");
    assert_eq!(right.svrg_max_deviation, None);

    let wrong = OracleCheckOptions {
        sgld_diffusion: Some(SymMatrix::identity(2)),
        ..Default::default()
    };
    let report = oracle_check_with(&cfg, &wrong).unwrap();
    println!("{report}");
    assert!(report.comparisons[0].passed, "{report}");
    assert!(!report.comparisons[1].passed, "{report}");
    assert!(!report.passed());
    // At this large step the correct matrix sits near the O(η) allowance;
    // the wrong one must be clearly worse.
    assert!(report.comparisons[1].worst_ratio > 1.2 * right.comparisons[1].worst_ratio, "{report}");
}
