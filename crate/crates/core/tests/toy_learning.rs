use hopper_core::grpo::toy::{toy_policy_train, write_curve_csv, ToyTask, ToyTrainConfig};
use hopper_core::grpo::GrpoConfig;

fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks(width)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

#[test]
fn reward_rises_with_monotone_windows() {
    let run = toy_policy_train(&ToyTask::default(), &ToyTrainConfig::default()).unwrap();
    assert_eq!(run.curve.len(), 200);
    let rewards: Vec<f64> = run.curve.iter().map(|p| p.mean_reward).collect();
    assert!(rewards[199] > rewards[0], "{} vs {}", rewards[199], rewards[0]);
    let windows = window_means(&rewards, 20);
    assert_eq!(windows.len(), 10);
    for w in windows.windows(2) {
        assert!(w[1] >= w[0], "windows {windows:?}");
    }
}

#[test]
fn strong_kl_anchors_the_policy() {
    let cfg = ToyTrainConfig {
        grpo: GrpoConfig { kl_beta: 1e3, ..GrpoConfig::default() },
        ..ToyTrainConfig::default()
    };
    let run = toy_policy_train(&ToyTask::default(), &cfg).unwrap();
    let drift = run.policy.max_abs_diff(&run.initial);
    assert!(drift < 1e-2, "drift {drift}");
}

#[test]
fn same_seed_same_curve_and_csv_shape() {
    let cfg = ToyTrainConfig { steps: 15, ..ToyTrainConfig::default() };
    let a = toy_policy_train(&ToyTask::default(), &cfg).unwrap();
    let b = toy_policy_train(&ToyTask::default(), &cfg).unwrap();
    assert_eq!(a.curve, b.curve);
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &a.curve).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,mean_reward,kl,clip_fraction");
    assert_eq!(lines.len(), 16);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn toy_reward_branches() {
    let task = ToyTask::default();
    assert_eq!(task.reward(&[0, 1, 2]), 1.0);
    assert_eq!(task.reward(&[0, 1, 6]), -2.0);
    assert_eq!(task.reward(&[3, 4, 5]), 0.0);
}
