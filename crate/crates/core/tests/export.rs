mod common;

use hopper_core::bench::{build_clients, load_dataset, sample_groups, HarnessConfig, Workload};
use hopper_core::grpo::{
    compute_advantages, export_batch, import_batch, read_batch, write_batch, HashTokenizer,
};
use hopper_core::RolloutEngine;

fn sampled(concurrency: usize) -> (HarnessConfig, Vec<hopper_core::grpo::BatchGroup>) {
    let dir = common::fixtures_dir();
    let mut cfg = HarnessConfig::load(&dir.join("offline.toml")).unwrap();
    cfg.concurrency = concurrency;
    let prompts = load_dataset(&dir.join("train_prompts.jsonl"), None).unwrap();
    let clients = build_clients(&cfg, true, Workload::Training).unwrap();
    let engine = RolloutEngine::new(&*clients.planner, &*clients.toolcaller, &*clients.search, cfg.rollout);
    let groups = sample_groups(&prompts, &engine, &HashTokenizer::default(), &cfg).unwrap();
    (cfg, groups)
}

#[test]
fn three_prompts_by_twelve_round_trip() {
    let (cfg, groups) = sampled(8);
    assert_eq!(groups.len(), 3);
    assert!(groups.iter().all(|g| g.group.size() == 12));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.jsonl");
    export_batch(&groups, &cfg.grpo, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 36);
    let (header, back) = import_batch(&path).unwrap();
    assert_eq!(header.records, 36);
    assert_eq!(back, groups);
    // Rewards in a group differ, so the sampler produced a learning signal.
    assert!(groups.iter().any(|g| g.group.advantages.iter().any(|a| *a != 0.0)));
}

#[test]
fn export_is_byte_deterministic() {
    let (cfg, a) = sampled(1);
    let (_, b) = sampled(8);
    let mut x = Vec::new();
    let mut y = Vec::new();
    write_batch(&mut x, &a, &cfg.grpo).unwrap();
    write_batch(&mut y, &b, &cfg.grpo).unwrap();
    assert_eq!(x, y);
}

#[test]
fn flipping_one_reward_touches_one_group() {
    let (cfg, groups) = sampled(8);
    let mut flipped = groups.clone();
    let g = &mut flipped[1].group;
    g.rewards[0] = if g.rewards[0] == 1.0 { -2.0 } else { 1.0 };
    g.advantages = compute_advantages(&g.rewards, &cfg.grpo).unwrap();

    let mut before = Vec::new();
    let mut after = Vec::new();
    write_batch(&mut before, &groups, &cfg.grpo).unwrap();
    write_batch(&mut after, &flipped, &cfg.grpo).unwrap();
    let before = String::from_utf8(before).unwrap();
    let after = String::from_utf8(after).unwrap();
    for (i, (l, r)) in before.lines().zip(after.lines()).enumerate() {
        // Line 0 is the header; group 1 occupies lines 13..=24.
        let in_group_1 = (13..=24).contains(&i);
        if !in_group_1 {
            assert_eq!(l, r, "line {i} changed");
        }
    }
    let (_, back) = read_batch(after.as_bytes()).unwrap();
    assert_eq!(back[1].group.rewards, flipped[1].group.rewards);
    assert_eq!(back[0], groups[0]);
    assert_eq!(back[2], groups[2]);
}
