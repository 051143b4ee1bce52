use climb_core::eval::report::{bias_variance_csv, delta_rank_csv};
use climb_core::eval::{
    delta_rank_curve, random_removal_control, run_full_evaluation, run_full_evaluation_with_jobs, write_reports,
    EvalConfig, RunManifest, RANDOM_ARM,
};
use climb_core::recmodel::{fit_cooc, generate_synthetic, top_recommendation, CoocParams, SyntheticConfig};
use climb_core::{explain, CoocModel, ExplainConfig, InteractionDataset, Method};

fn small() -> (InteractionDataset, CoocModel) {
    let data = generate_synthetic(&SyntheticConfig::new(80, 300, 1.1, 12.0, 21)).unwrap();
    let model = fit_cooc(&data, CoocParams::default()).unwrap();
    (data, model)
}

fn quick_config() -> EvalConfig {
    EvalConfig { samples: 200, bootstraps: 6, ks: vec![0, 2, 4, 8], timing_users: 2, seed: 17, ..Default::default() }
}

#[test]
fn counts_partition_the_population() {
    let (data, model) = small();
    let cfg = quick_config();
    let eval = run_full_evaluation(&data, &model, &cfg).unwrap();
    assert!(eval.failures.is_empty(), "{:?}", eval.failures);
    assert_eq!(eval.delta_rank.users, data.user_count());
    for arm in cfg.arms() {
        // k = 0 is populated by everyone and identically zero
        let total: usize = (0..8).map(|r| eval.delta_rank.cell(&arm, r, 0).unwrap().n).sum();
        assert_eq!(total, data.user_count());
        for r in 0..8 {
            let c = eval.delta_rank.cell(&arm, r, 0).unwrap();
            assert_eq!((c.mean, c.std), (Some(0.0), Some(0.0)));
        }
    }
    // cell counts never grow with k
    for arm in cfg.arms() {
        for r in 0..8 {
            let ns: Vec<usize> = cfg.ks.iter().map(|&k| eval.delta_rank.cell(&arm, r, k).unwrap().n).collect();
            assert!(ns.windows(2).all(|w| w[0] >= w[1]), "{arm} rank {r}: {ns:?}");
        }
    }
    for u in &eval.bias_variance.users {
        assert!((u.mse - (u.bias_sq + u.variance)).abs() <= 1e-9);
        assert!(u.bias_sq >= 0.0 && u.variance >= 0.0);
    }
    let bv_users = eval.bias_variance.users.len() / 3 + eval.bias_variance.skipped.len();
    assert_eq!(bv_users, data.user_count());
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let (data, model) = small();
    let cfg = quick_config();
    let a = run_full_evaluation_with_jobs(&data, &model, &cfg, 1).unwrap();
    let b = run_full_evaluation_with_jobs(&data, &model, &cfg, 3).unwrap();
    let m = RunManifest::new("evaluate", cfg.seed, &cfg).unwrap();
    assert_eq!(delta_rank_csv(&a.delta_rank, &m).unwrap(), delta_rank_csv(&b.delta_rank, &m).unwrap());
    assert_eq!(bias_variance_csv(&a.bias_variance, &m).unwrap(), bias_variance_csv(&b.bias_variance, &m).unwrap());
    assert_eq!(a.bias_variance.users, b.bias_variance.users);
}

#[test]
fn harness_curves_match_standalone_calls() {
    let (data, model) = small();
    let cfg = EvalConfig { methods: vec![Method::Shap], timing_users: 0, ..quick_config() };
    let eval = run_full_evaluation(&data, &model, &cfg).unwrap();
    // recompute the rank-7 SHAP cell by hand
    let seg = &eval.segmentation;
    let mut values = Vec::new();
    for (idx, u) in data.users().iter().enumerate() {
        if seg.rank_of(u.user_id()) != Some(7) {
            continue;
        }
        let t = top_recommendation(&model, u).unwrap();
        let seed = climb_core::derive_seed(cfg.seed, "explain-shap", idx as u64);
        let e = explain(&model, u, t, Method::Shap, &cfg.explain_config(), seed).unwrap();
        values.push(delta_rank_curve(&model, u, &e, &[4]).unwrap()[0].unwrap());
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let cell = eval.delta_rank.cell("shap", 7, 4).unwrap();
    assert_eq!(cell.n, values.len());
    assert!((cell.mean.unwrap() - mean).abs() < 1e-12);
    // and the random arm
    let u = data.users().iter().find(|u| seg.rank_of(u.user_id()) == Some(7)).unwrap();
    let idx = data.users().iter().position(|v| v.user_id() == u.user_id()).unwrap();
    let r = random_removal_control(&model, u, &[4], climb_core::derive_seed(cfg.seed, "random-removal", idx as u64))
        .unwrap();
    assert!(r[0].is_some());
    assert!(eval.delta_rank.cell(RANDOM_ARM, 7, 4).is_some());
}

#[test]
fn empty_method_list_gives_empty_reports() {
    let (data, model) = small();
    let cfg = EvalConfig { methods: vec![], ..quick_config() };
    let eval = run_full_evaluation(&data, &model, &cfg).unwrap();
    assert!(eval.delta_rank.cells.is_empty());
    assert!(eval.bias_variance.cells.is_empty());
    assert!(eval.timing.rows.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let m = RunManifest::new("evaluate", cfg.seed, &cfg).unwrap();
    write_reports(&eval, &m, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("delta_rank.csv")).unwrap();
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body, vec!["method,sparsity_rank,k,mean,median,std,n"]);
}

#[test]
fn guided_removal_beats_random_on_synthetic_data() {
    // SHAP-guided removal should hurt the target more than random removal.
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let model = fit_cooc(&data, CoocParams::default()).unwrap();
    let cfg = ExplainConfig::with_samples(300);
    let (mut guided, mut random, mut n) = (0.0, 0.0, 0.0);
    for (idx, u) in data.users().iter().enumerate().filter(|(_, u)| u.d_prime() >= 12).take(120) {
        let t = top_recommendation(&model, u).unwrap();
        let e = explain(&model, u, t, Method::Shap, &cfg, idx as u64).unwrap();
        guided += delta_rank_curve(&model, u, &e, &[6]).unwrap()[0].unwrap();
        random += random_removal_control(&model, u, &[6], idx as u64).unwrap()[0].unwrap();
        n += 1.0;
    }
    assert!(n >= 100.0);
    assert!(guided / n < random / n, "guided {} vs random {}", guided / n, random / n);
}
