use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vknow_core::corpus::{load_manifest, render_manifest, save_manifest, Decision, Manifest, QAItem, Stage, StageRecord, TaskDimension, VideoRef};

const ALPHABET: &[char] = &['a', 'Z', '0', ' ', '"', '\\', '\n', '\t', 'é', '中', '🎬', ',', '{', '}', '<', '>'];

fn text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    let mut s: String = (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect();
    // Non-blank so the item validates.
    s.insert(0, 'x');
    s
}

fn random_manifest(seed: u64, n: usize) -> Manifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|k| {
            let n_opts = rng.random_range(2..=6);
            let options: Vec<String> = (0..n_opts).map(|j| format!("{j}:{}", text(&mut rng, 12))).collect();
            let video = if rng.random_bool(0.5) {
                VideoRef::new(format!("videos/{k}.mp4"))
            } else {
                VideoRef::with_digest(format!("https://cdn.example/{k}.mp4"), format!("{:064x}", rng.random::<u128>()))
            };
            let mut item = QAItem::new(format!("item-{k:05}"), video, TaskDimension::ALL[rng.random_range(0..8)], text(&mut rng, 40), options, rng.random_range(0..n_opts));
            for _ in 0..rng.random_range(0..3) {
                let at = Utc.timestamp_opt(rng.random_range(0..2_000_000_000), rng.random_range(0..1_000_000_000)).unwrap();
                let sim: f64 = rng.random();
                item.push_record(StageRecord::new(Stage::AudioFilter, Decision::Kept, at).with("similarity", sim).with("note", text(&mut rng, 8)));
            }
            item
        })
        .collect();
    let mut m = Manifest::new(items);
    m.seed = rng.random_bool(0.5).then(|| rng.random());
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn ten_thousand_items_round_trip(seed in any::<u64>()) {
        let m = random_manifest(seed, 10_000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(render_manifest(&back).unwrap(), std::fs::read_to_string(&path).unwrap());
    }
}

#[test]
fn second_save_is_byte_identical() {
    let m = random_manifest(5, 3);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    save_manifest(&m, &a).unwrap();
    save_manifest(&load_manifest(&a).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
