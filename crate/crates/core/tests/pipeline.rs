mod common;

use std::sync::Arc;

use common::{at, debias_config, item_id, ItemScript, World};
use vknow_core::corpus::{Decision, Stage};
use vknow_core::debias::{run_pipeline, Evidence};
use vknow_core::gateway::Gateway;

fn five() -> Arc<World> {
    let base = ItemScript::default();
    Arc::new(World::new(vec![
        // Transcript gives the answer away.
        ItemScript { sim: 0.9, ..base },
        // Just over the threshold.
        ItemScript { sim: 0.31, ..base },
        // Exactly on the threshold stays.
        ItemScript { sim: 0.3, ..base },
        // Two blind models solve it.
        ItemScript { blind_correct: 2, ..base },
        // One blind model is not a quorum.
        ItemScript { blind_correct: 1, ..base },
    ]))
}

#[test]
fn five_items_walk_down_to_two() {
    let world = five();
    let gw = Gateway::uncached(world.transport());
    let out = run_pipeline(&world.manifest(), &debias_config(), &gw, 11, at()).unwrap();

    assert_eq!(out.report.flow(), vec![5, 3, 2, 2, 2]);
    let ids: Vec<&str> = out.manifest.items.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids, ["q02", "q04"]);

    let s1: Vec<(&str, Decision)> = out.report.stage1.iter().map(|v| (v.item_id.as_str(), v.decision)).collect();
    assert_eq!(
        s1,
        [
            ("q00", Decision::Discarded),
            ("q01", Decision::Discarded),
            ("q02", Decision::Kept),
            ("q03", Decision::Kept),
            ("q04", Decision::Kept)
        ]
    );
    let flagged = |id: &str| match &out.report.stage2.iter().find(|v| v.item_id == id).unwrap().evidence {
        Evidence::Votes { flagged_models, .. } => *flagged_models,
        other => panic!("{other:?}"),
    };
    assert_eq!(flagged("q03"), 2);
    assert_eq!(flagged("q04"), 1);

    for item in &out.manifest.items {
        let stages: Vec<Stage> = item.provenance.iter().map(|r| r.stage).collect();
        assert_eq!(stages, [Stage::Ingest, Stage::AudioFilter, Stage::LanguageFilter, Stage::DistractorRewrite, Stage::Shuffle]);
        let k: usize = item.id[1..].parse().unwrap();
        assert_eq!(item.gold(), format!("gold answer {k}"));
        assert!(item.options.iter().filter(|o| o.as_str() != item.gold()).all(|o| o.starts_with("subtle distractor")));
    }
    assert_eq!(out.queue.len(), 2);
    assert_eq!(out.manifest.seed, Some(11));
}

#[test]
fn rejected_rewrites_keep_original_options() {
    let world = Arc::new(World::new(vec![ItemScript {
        rewrite_ok: false,
        ..ItemScript::default()
    }]));
    let gw = Gateway::uncached(world.transport());
    let original = world.manifest().items[0].options.clone();
    let out = run_pipeline(&world.manifest(), &debias_config(), &gw, 0, at()).unwrap();
    let rw = &out.report.rewrites[0];
    assert!(!rw.accepted);
    assert_eq!(rw.attempts, 3);
    let mut kept = out.manifest.items[0].options.clone();
    kept.sort();
    let mut orig = original;
    orig.sort();
    assert_eq!(kept, orig);
}

#[test]
fn replay_matches_recording() {
    let world = five();
    let dir = tempfile::tempdir().unwrap();
    let recorded = run_pipeline(&world.manifest(), &debias_config(), &common::recording(&world, dir.path()), 3, at()).unwrap();
    let replay = common::replaying(dir.path());
    let replayed = run_pipeline(&world.manifest(), &debias_config(), &replay, 3, at()).unwrap();
    assert_eq!(recorded.manifest, replayed.manifest);
    assert_eq!(recorded.report, replayed.report);
    assert_eq!(replay.stats().network_calls, 0);
    assert_eq!(item_id(2), replayed.manifest.items[0].id);
}
