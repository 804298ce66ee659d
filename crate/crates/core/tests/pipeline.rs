use friedrichs::config::{parse_config_str, Suite};
use friedrichs::run::{execute, Status};

fn config(kernel: &str, sizes: &str, suites: &str) -> friedrichs::config::ScenarioConfig {
    // tolerances loosened for the coarse grids used here
    parse_config_str(&format!(
        "[interval]\na = 0.0\nb = 1.0\n[grid]\nsizes = {sizes}\n[kernel]\n{kernel}\n[checks]\nsuites = {suites}\n\
         [tolerances]\nscattering_identity = 1e-2\nregularized = 5e-3\n"
    ))
    .unwrap()
}

#[test]
fn runs_are_deterministic_apart_from_timings() {
    let cfg = config(
        "family = \"sin-bump\"",
        "[41]",
        "[\"tkernel\", \"smatrix\", \"waveop\"]",
    );
    let a = execute(&cfg).unwrap();
    let b = execute(&cfg).unwrap();
    assert_eq!(a.without_timings(), b.without_timings());
    assert_eq!(
        serde_json::to_string(&a.without_timings()).unwrap(),
        serde_json::to_string(&b.without_timings()).unwrap()
    );
}

#[test]
fn full_suite_on_two_sizes_fills_refinement_tables() {
    let cfg = config(
        "family = \"separable\"",
        "[41, 61]",
        "[\"refinement\", \"waveop\", \"smatrix\", \"spectrum\", \"tkernel\"]",
    );
    assert_eq!(
        cfg.checks,
        vec![
            Suite::Spectrum,
            Suite::Tkernel,
            Suite::Smatrix,
            Suite::Waveop,
            Suite::Refinement
        ]
    );
    let rep = execute(&cfg).unwrap();
    assert!(rep.all_passed(), "{:#?}", rep.checks);
    for key in [
        "main_formula_residual",
        "intertwining_residual",
        "unitarity_defect",
        "k_hs_norm",
    ] {
        let rows = &rep.refinement[key];
        assert_eq!(rows.len(), 2, "{key}");
        assert_eq!((rows[0].n, rows[1].n), (41, 61));
    }
    let sv = &rep.data.ksvd.as_ref().unwrap().values;
    assert!(sv.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn free_kernel_passes_exactly() {
    let cfg = config(
        "family = \"zero\"\ndim = 2",
        "[41]",
        "[\"spectrum\", \"smatrix\", \"waveop\"]",
    );
    let rep = execute(&cfg).unwrap();
    assert!(rep.all_passed(), "{:#?}", rep.checks);
    let w = &rep.checks["waveop"];
    assert!(w.measured["main_formula_residual"] <= 1e-12);
    assert_eq!(w.measured["regularized_limit"], 0.0);
}

#[test]
fn embedded_suite_on_embedded_kernel() {
    let cfg = config(
        "family = \"embedded\"\neigenvalue = 0.5",
        "[101]",
        "[\"spectrum\", \"smatrix\", \"embedded\"]",
    );
    let rep = execute(&cfg).unwrap();
    let e = &rep.checks["embedded"];
    assert_eq!(e.status, Status::Pass, "{e:#?}");
    assert!(e.measured["eigenvalue_error"] <= 1e-6);
    assert!(e.measured["unprojected_condition"] >= 1e8);
    // the node on λₙ carries an interpolated column, so N = 101 is above the default tolerance
    assert_eq!(rep.checks["smatrix"].status, Status::Fail);
    let defect = rep.checks["smatrix"].measured["unitarity_defect"];
    assert!(defect > 1e-6 && defect <= 1e-4, "{defect:e}");
}
