use pex_core::envs::{episode_returns, BehaviorGrade};
use pex_core::harness::{evaluate_actor, phase_rng, prepare_dataset, run_offline_phase, OfflineAlgo, RunConfig, EVAL_STREAM};

fn dataset_mean_score(cfg: &RunConfig) -> f64 {
    let data = prepare_dataset(cfg).unwrap();
    let spec = cfg.env().unwrap().spec().clone();
    let returns = episode_returns(&data.transitions());
    returns.iter().map(|&r| spec.normalized_score(r)).sum::<f64>() / returns.len() as f64
}

#[test]
fn bc_on_expert_maze_data_succeeds() {
    let cfg = RunConfig {
        offline_algo: OfflineAlgo::Bc,
        dataset_grade: BehaviorGrade::Expert,
        dataset_size: 50_000,
        offline_steps: 20_000,
        batch_size: 64,
        offline_eval_interval: 0,
        ablation: pex_core::bridge::AblationFlags {
            transfer_critic: Some(false),
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let data = prepare_dataset(&cfg).unwrap();
    let out = run_offline_phase(&cfg, &data).unwrap();
    let env = cfg.env().unwrap();
    let r = evaluate_actor(&env, &out.nets.actor, 50, &mut phase_rng(99, EVAL_STREAM)).unwrap();
    // Maze returns are 1 on success and 0 otherwise.
    assert!(r.mean_return >= 0.7, "success rate {}", r.mean_return);
}

#[test]
fn iql_beats_mixed_quality_maze_data() {
    let cfg = RunConfig {
        env_id: "pointmaze-medium".into(),
        dataset_grade: BehaviorGrade::MediumReplay,
        offline_steps: 50_000,
        batch_size: 64,
        offline_eval_interval: 0,
        ..RunConfig::default()
    };
    let baseline = dataset_mean_score(&cfg);
    let out = run_offline_phase(&cfg, &prepare_dataset(&cfg).unwrap()).unwrap();
    let score = out.final_score().unwrap();
    assert!(score > baseline, "iql {score} vs dataset {baseline}");
}

#[test]
fn iql_beats_medium_dense_data() {
    let cfg = RunConfig {
        env_id: "linereach".into(),
        dataset_grade: BehaviorGrade::Medium,
        offline_steps: 20_000,
        batch_size: 64,
        offline_eval_interval: 0,
        ..RunConfig::default()
    };
    let baseline = dataset_mean_score(&cfg);
    let out = run_offline_phase(&cfg, &prepare_dataset(&cfg).unwrap()).unwrap();
    let score = out.final_score().unwrap();
    assert!(score > baseline, "iql {score} vs dataset {baseline}");
}

#[test]
fn medium_maze_data_is_already_saturated() {
    // Medium-grade maze data reaches the goal in every episode, so no learner
    // can score strictly above it; see iql_beats_mixed_quality_maze_data.
    for env_id in ["pointmaze-umaze", "pointmaze-medium"] {
        let cfg = RunConfig {
            env_id: env_id.into(),
            ..RunConfig::default()
        };
        assert_eq!(dataset_mean_score(&cfg), 100.0, "{env_id}");
    }
}
