use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, ItemResult};
use crate::corpus::{Manifest, TaskDimension, TaskGroup};
use crate::par::{self, Execution};

/// Accuracies in percent, unrounded. Tasks without items are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_task: BTreeMap<TaskDimension, f64>,
    pub counts: BTreeMap<TaskDimension, usize>,
    /// Item-weighted.
    pub overall: Option<f64>,
    pub wc: Option<f64>,
    pub hc: Option<f64>,
    /// Unweighted means of the task cells.
    pub overall_macro: Option<f64>,
    pub wc_macro: Option<f64>,
    pub hc_macro: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl AggregateReport {
    /// From per-task `(score_sum, item_count)`, where each item scores in
    /// `[0, 1]`.
    pub fn from_task_sums(sums: &BTreeMap<TaskDimension, (f64, usize)>) -> Self {
        let mut r = AggregateReport::default();
        let mut pools: BTreeMap<Option<TaskGroup>, (f64, usize)> = BTreeMap::new();
        for (&dim, &(score, count)) in sums.iter().filter(|(_, (_, n))| *n > 0) {
            r.per_task.insert(dim, score / count as f64 * 100.0);
            r.counts.insert(dim, count);
            for key in [None, Some(dim.group())] {
                let p = pools.entry(key).or_default();
                p.0 += score;
                p.1 += count;
            }
        }
        let micro = |k: Option<TaskGroup>| pools.get(&k).map(|(s, n)| s / *n as f64 * 100.0);
        r.overall = micro(None);
        r.wc = micro(Some(TaskGroup::WorldCentric));
        r.hc = micro(Some(TaskGroup::HumanCentric));
        let cells = |g: Option<TaskGroup>| -> Vec<f64> {
            r.per_task
                .iter()
                .filter(|(d, _)| g.is_none_or(|g| d.group() == g))
                .map(|(_, v)| *v)
                .collect()
        };
        r.overall_macro = mean(&cells(None));
        r.wc_macro = mean(&cells(Some(TaskGroup::WorldCentric)));
        r.hc_macro = mean(&cells(Some(TaskGroup::HumanCentric)));
        r
    }

    /// Cells in table order: Overall, IP, OA, OM, SA, WC, EA, MS, SR, SI, HC.
    pub fn table_row(&self) -> [Option<f64>; 11] {
        let t = |d| self.per_task.get(&d).copied();
        use TaskDimension::*;
        [
            self.overall,
            t(IP),
            t(OA),
            t(OM),
            t(SA),
            self.wc,
            t(EA),
            t(MS),
            t(SR),
            t(SI),
            self.hc,
        ]
    }
}

pub const TABLE_COLUMNS: [&str; 11] = ["Overall", "IP", "OA", "OM", "SA", "WC", "EA", "MS", "SR", "SI", "HC"];

/// Half-up to one decimal, for display only. The nudge absorbs binary
/// representation error on exact halves such as 45.475.
pub fn round1(x: f64) -> f64 {
    (x * 10.0 + 0.5 + 1e-9).floor() / 10.0
}

/// Per-task and aggregate accuracy of graded results.
pub fn aggregate(results: &[ItemResult], manifest: &Manifest) -> Result<AggregateReport, EvalError> {
    let index = manifest.index();
    let mut sums: BTreeMap<TaskDimension, (f64, usize)> = BTreeMap::new();
    for r in results {
        let item = index.get(r.item_id.as_str()).ok_or_else(|| EvalError::UnknownItem(r.item_id.clone()))?;
        let s = sums.entry(item.dimension).or_default();
        s.0 += f64::from(u8::from(r.correct));
        s.1 += 1;
    }
    Ok(AggregateReport::from_task_sums(&sums))
}

/// Expected accuracy of a uniform guesser: each item contributes
/// `1 / |options|`.
pub fn random_baseline(manifest: &Manifest) -> AggregateReport {
    let mut by_task: BTreeMap<TaskDimension, Vec<usize>> = BTreeMap::new();
    for item in &manifest.items {
        by_task.entry(item.dimension).or_default().push(item.options.len());
    }
    let mut sums = BTreeMap::new();
    for (dim, ns) in &by_task {
        let score: f64 = ns.iter().map(|&n| 1.0 / n as f64).sum();
        sums.insert(*dim, (score, ns.len()));
    }
    let mut r = AggregateReport::from_task_sums(&sums);
    // A task with one option count is exactly 100/n; skip the float sum.
    for (dim, ns) in &by_task {
        if ns.iter().all(|&n| n == ns[0]) {
            r.per_task.insert(*dim, 100.0 / ns[0] as f64);
        }
    }
    r
}

fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Monte-Carlo accuracy of a uniform guesser over `trials` passes of the
/// manifest. Chunks are seeded independently, so the result does not depend
/// on the execution mode.
pub fn simulate_random_guesser(manifest: &Manifest, trials: u64, seed: u64, exec: Execution) -> AggregateReport {
    const CHUNK: u64 = 20_000;
    let dims: Vec<TaskDimension> = TaskDimension::ALL.to_vec();
    let slot = |d: TaskDimension| dims.iter().position(|&x| x == d).expect("known dimension");
    let plan: Vec<(usize, u64, usize)> = manifest
        .items
        .iter()
        .map(|i| (slot(i.dimension), i.options.len() as u64, i.answer_index))
        .collect();
    let chunks = trials.div_ceil(CHUNK) as usize;
    let totals = par::sum_chunks(exec, chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = CHUNK.min(trials - c as u64 * CHUNK);
        let mut hits = vec![0.0; dims.len()];
        for _ in 0..n {
            for &(s, options, gold) in &plan {
                if bounded(&mut rng, options) as usize == gold {
                    hits[s] += 1.0;
                }
            }
        }
        hits
    });
    let mut sums = BTreeMap::new();
    for item in &manifest.items {
        sums.entry(item.dimension).or_insert((0.0, 0)).1 += 1;
    }
    for (d, s) in sums.iter_mut() {
        s.0 = totals.get(slot(*d)).copied().unwrap_or(0.0) / trials as f64;
    }
    AggregateReport::from_task_sums(&sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{QAItem, VideoRef};

    fn it(id: &str, dim: TaskDimension, n: usize) -> QAItem {
        QAItem::new(id, VideoRef::new("v"), dim, "?", (0..n).map(|k| format!("o{k}")).collect(), 0)
    }

    fn res(id: &str, correct: bool) -> ItemResult {
        ItemResult {
            item_id: id.into(),
            raw: String::new(),
            predicted: correct.then_some(0),
            correct,
            latency_secs: 0.0,
        }
    }

    #[test]
    fn rounding() {
        assert_eq!(round1(45.475), 45.5);
        assert_eq!(round1(31.25), 31.3);
        assert_eq!(round1(66.666), 66.7);
        assert_eq!(round1(50.0), 50.0);
        assert_eq!(round1(0.04), 0.0);
    }

    #[test]
    fn half_correct_everywhere() {
        let mut items = Vec::new();
        let mut results = Vec::new();
        for (k, d) in TaskDimension::ALL.iter().enumerate() {
            for j in 0..2 {
                let id = format!("{k}-{j}");
                items.push(it(&id, *d, 2));
                results.push(res(&id, j == 0));
            }
        }
        let r = aggregate(&results, &Manifest::new(items)).unwrap();
        assert!(r.per_task.values().all(|&v| v == 50.0));
        assert_eq!(r.overall, Some(50.0));
        assert_eq!(r.wc, r.wc_macro);
        assert_eq!(r.hc, r.hc_macro);
    }

    #[test]
    fn empty_task_absent() {
        let m = Manifest::new(vec![it("a", TaskDimension::IP, 2)]);
        let r = aggregate(&[res("a", true)], &m).unwrap();
        assert_eq!(r.per_task.len(), 1);
        assert_eq!(r.hc, None);
        assert_eq!(r.table_row()[2], None);
        assert!(aggregate(&[res("zz", true)], &m).is_err());
    }

    #[test]
    fn baseline_uniform_tasks() {
        let m = Manifest::new(vec![
            it("a", TaskDimension::IP, 2),
            it("b", TaskDimension::IP, 2),
            it("c", TaskDimension::MS, 4),
            it("d", TaskDimension::SR, 3),
        ]);
        let r = random_baseline(&m);
        assert_eq!(r.per_task[&TaskDimension::IP], 50.0);
        assert_eq!(r.per_task[&TaskDimension::MS], 25.0);
        assert_eq!(r.per_task[&TaskDimension::SR], 100.0 / 3.0);
    }

    #[test]
    fn simulation_is_execution_independent() {
        let m = Manifest::new(vec![it("a", TaskDimension::IP, 2), it("b", TaskDimension::SR, 3)]);
        let a = simulate_random_guesser(&m, 50_000, 7, Execution::Sequential);
        let b = simulate_random_guesser(&m, 50_000, 7, Execution::Parallel);
        assert_eq!(a, b);
        assert!((a.per_task[&TaskDimension::IP] - 50.0).abs() < 1.0);
    }
}
