use fedexcise::experiment::{run_cell, ExperimentConfig, Method, Setup, Trained};
use fedexcise::federation::{DataConfig, FederationConfig};
use fedexcise::metrics::{summary_csv, MiaConfig};
use fedexcise::unlearn::{durability_ratio, unique_drift, ExcisionReference, UnlearnPlan};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DataConfig { n_pairs: 160, n_concepts: 4, ..DataConfig::default() },
        federation: FederationConfig { clients: 4, rounds: 8, local_steps: 3, batch_size: 8, ..FederationConfig::default() },
        n_classes: 4,
        methods: vec![Method::Original, Method::Ease, Method::Retrain, Method::NoLock, Method::Retrain25],
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    cfg.eval.pool = 20;
    cfg.eval.mia = MiaConfig { n_shadows: 2, nonmember_pool: 60, background: 16, ..MiaConfig::default() };
    cfg
}

#[test]
fn no_op_plan_returns_trained_model() {
    let cfg = small();
    let trained = Trained::new(Setup::new(&cfg, 3).unwrap()).unwrap();
    let request = trained.setup.request().unwrap();
    let plan = UnlearnPlan { r2: 1, r3: 0, local_steps: Some(0), reference: ExcisionReference::Trained, ..cfg.plan.clone() };
    let out = trained.run_method_with(Method::Ease, &request, &plan).unwrap();
    assert!(out.w.max_abs_diff(&trained.w_n).unwrap() <= 1e-12);
}

#[test]
fn excision_erases_and_lock_bounds_drift() {
    let cfg = small();
    let trained = Trained::new(Setup::new(&cfg, 1).unwrap()).unwrap();
    let request = trained.setup.request().unwrap();
    let plan = UnlearnPlan { r2: 2, r3: 2, ..cfg.plan.clone() };
    let out = trained.run_method_with(Method::Ease, &request, &plan).unwrap();
    let trace = out.trace.unwrap();
    assert!(trace.post_projection_drift.iter().all(|d| *d <= 1e-10), "{:?}", trace.post_projection_drift);
    assert_eq!(trace.forget_similarity.len(), plan.r2 + plan.r3 + 1);
    assert_eq!(trace.rounds(), plan.r2 + plan.r3);
    assert!(durability_ratio(&trace, plan.r2, 0.05) <= 1.0);

    let bases = out.decomposition.unwrap().bases;
    let projected_once = UnlearnPlan { r2: 1, r3: 0, local_steps: Some(0), ..cfg.plan.clone() };
    let once = trained.run_method_with(Method::Ease, &request, &projected_once).unwrap();
    for d in unique_drift(&once.w, &trained.w_0, &bases).unwrap().values() {
        assert!(*d <= 1e-10);
    }
}

#[test]
fn cell_reports_and_communication() {
    let cfg = small();
    let out = run_cell(&cfg, 0).unwrap();
    let methods: Vec<&str> = out.reports.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["original", "ease", "retrain", "no_lock", "retrain_25"]);
    let comm = |m: &str| out.reports.iter().find(|r| r.method == m).unwrap().comm_mb.unwrap();
    assert_eq!(comm("original"), 0.0);
    assert!(comm("ease") < comm("retrain"));
    assert!(comm("retrain_25") < comm("retrain"));
    let retrain = out.reports.iter().find(|r| r.method == "retrain").unwrap();
    assert_eq!(retrain.gaps.get("f_r1"), Some(&0.0));
    assert!(out.reports.iter().all(|r| r.rho.is_some()));

    let again = run_cell(&cfg, 0).unwrap();
    assert_eq!(summary_csv(&out.reports), summary_csv(&again.reports));
    let other = run_cell(&cfg, 1).unwrap();
    assert_ne!(summary_csv(&out.reports), summary_csv(&other.reports));
}
