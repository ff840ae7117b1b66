use cmoe::experiments::{aggregate, run_sweep, Aggregate, Metric, SweepConfig};
use cmoe::{Scenario, ScenarioTag};

#[test]
fn consistency_at_ten_thousand() {
    let mut cfg = SweepConfig::new(Scenario::new(ScenarioTag::DistinguishableLaplace, 8));
    cfg.n_grid = vec![10_000];
    cfg.trials = 5;
    cfg.base_seed = 1;
    let records = run_sweep(&cfg).unwrap();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r.converged));
    let med = aggregate(&records, Metric::ErrEta, Aggregate::Median);
    assert!(med[0].1 < 0.1, "median err_eta {}", med[0].1);
}

#[test]
fn thread_count_does_not_change_records() {
    let mut cfg = SweepConfig::new(Scenario::new(ScenarioTag::NonDistEtaDrift, 3));
    cfg.n_grid = vec![300, 600];
    cfg.trials = 3;
    cfg.compute_hellinger = true;
    cfg.quad.x_mc_samples = 32;
    let run = |k| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .unwrap()
            .install(|| run_sweep(&cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}
