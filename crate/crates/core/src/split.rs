//! Multi-label stratified train/validation/test partitioning and per-region sampling.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BinaryLabelSheet;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.64, 0.16, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Validation, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SplitError {
    #[error("degenerate fractions: {0}")]
    DegenerateFractions(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate report id {0:?}")]
    DuplicateId(String),
    #[error("region {region} has {available} reports, {requested} requested")]
    PoolTooSmall {
        region: String,
        available: usize,
        requested: usize,
    },
}

/// How fractional subset sizes are turned into integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRounding {
    /// Every subset but the last is rounded up; the last takes the remainder.
    #[default]
    CeilExceptLast,
    /// Floors, then leftover items go to the largest fractional parts.
    LargestRemainder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub assignments: IndexMap<String, Subset>,
}

impl SplitAssignment {
    pub fn members(&self, subset: Subset) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, s)| **s == subset)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for s in self.assignments.values() {
            out[*s as usize] += 1;
        }
        out
    }

    pub fn subset_of(&self, report_id: &str) -> Option<Subset> {
        self.assignments.get(report_id).copied()
    }
}

const EPS: f64 = 1e-9;

fn check_fractions(fractions: &[f64]) -> Result<(), SplitError> {
    if fractions.is_empty() {
        return Err(SplitError::DegenerateFractions("no fractions".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !f.is_finite() || **f <= 0.0) {
        return Err(SplitError::DegenerateFractions(format!("fraction {f} is not positive")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(SplitError::DegenerateFractions(format!("fractions sum to {sum}, not 1")));
    }
    Ok(())
}

/// Integer subset sizes summing to `n`.
pub fn subset_sizes(n: usize, fractions: &[f64], rounding: SizeRounding) -> Result<Vec<usize>, SplitError> {
    check_fractions(fractions)?;
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let sizes = match rounding {
        SizeRounding::CeilExceptLast => {
            let mut sizes = Vec::with_capacity(fractions.len());
            let mut left = n;
            for x in &exact[..exact.len() - 1] {
                let s = ((x - EPS).ceil().max(0.0) as usize).min(left);
                sizes.push(s);
                left -= s;
            }
            sizes.push(left);
            sizes
        }
        SizeRounding::LargestRemainder => {
            let mut sizes: Vec<usize> = exact.iter().map(|x| (x + EPS).floor() as usize).collect();
            let mut left = n - sizes.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..exact.len()).collect();
            // stable: earlier subsets win equal remainders
            order.sort_by(|&a, &b| {
                let ra = exact[a] - sizes[a] as f64;
                let rb = exact[b] - sizes[b] as f64;
                rb.partial_cmp(&ra).expect("finite")
            });
            for i in order {
                if left == 0 {
                    break;
                }
                sizes[i] += 1;
                left -= 1;
            }
            sizes
        }
    };
    Ok(sizes)
}

/// Iterative stratification with exact subset sizes.
///
/// Labels are processed rarest first; each of a label's unassigned positives goes
/// to the open subset with the largest remaining demand for that label, then the
/// most remaining room, then a seeded coin. Items without positives fill the
/// remaining room. A final swap pass then corrects labels that drifted through
/// co-occurrence.
pub fn stratified_split(corpus: &[BinaryLabelSheet], fractions: [f64; 3], seed: u64) -> Result<SplitAssignment, SplitError> {
    stratified_split_with(corpus, fractions, seed, SizeRounding::default())
}

pub fn stratified_split_with(
    corpus: &[BinaryLabelSheet],
    fractions: [f64; 3],
    seed: u64,
    rounding: SizeRounding,
) -> Result<SplitAssignment, SplitError> {
    if corpus.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let mut ids = HashSet::with_capacity(corpus.len());
    for s in corpus {
        if !ids.insert(s.report_id.as_str()) {
            return Err(SplitError::DuplicateId(s.report_id.clone()));
        }
    }
    let n = corpus.len();
    let sizes = subset_sizes(n, &fractions, rounding)?;
    let k = sizes.len();

    // label universe in first-seen order
    let mut labels: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, s) in corpus.iter().enumerate() {
        for (l, &v) in &s.labels {
            let e = labels.entry(l.as_str()).or_default();
            if v {
                e.push(i);
            }
        }
    }
    let positives: Vec<Vec<usize>> = labels.values().cloned().collect();
    let item_labels: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .filter(|(_, v)| **v)
                .map(|(l, _)| labels.get_index_of(l.as_str()).expect("indexed"))
                .collect()
        })
        .collect();

    let mut room: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let mut demand: Vec<Vec<f64>> = positives
        .iter()
        .map(|p| sizes.iter().map(|&s| p.len() as f64 * s as f64 / n as f64).collect())
        .collect();
    let mut slot: Vec<Option<usize>> = vec![None; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = vec![false; positives.len()];

    let assign = |item: usize, j: usize, slot: &mut Vec<Option<usize>>, room: &mut Vec<f64>, demand: &mut Vec<Vec<f64>>| {
        slot[item] = Some(j);
        room[j] -= 1.0;
        for &l in &item_labels[item] {
            demand[l][j] -= 1.0;
        }
    };

    loop {
        // rarest label by unassigned positives
        let next = (0..positives.len())
            .filter(|&l| !done[l])
            .map(|l| (l, positives[l].iter().filter(|&&i| slot[i].is_none()).count()))
            .filter(|&(_, c)| c > 0)
            .min_by_key(|&(l, c)| (c, l));
        let Some((label, _)) = next else { break };
        done[label] = true;
        let mut items: Vec<usize> = positives[label].iter().copied().filter(|&i| slot[i].is_none()).collect();
        items.shuffle(&mut rng);
        for item in items {
            let j = pick(&room, |j| demand[label][j], &mut rng);
            assign(item, j, &mut slot, &mut room, &mut demand);
        }
    }

    let mut rest: Vec<usize> = (0..n).filter(|&i| slot[i].is_none()).collect();
    rest.shuffle(&mut rng);
    for item in rest {
        let j = pick(&room, |j| room[j], &mut rng);
        assign(item, j, &mut slot, &mut room, &mut demand);
    }
    debug_assert!(room.iter().all(|r| r.abs() < EPS));
    debug_assert_eq!(k, 3);

    let mut slot: Vec<usize> = slot.into_iter().map(|j| j.expect("every item assigned")).collect();
    rebalance(&mut slot, &item_labels, &positives, &sizes);

    let assignments = corpus
        .iter()
        .zip(slot)
        .map(|(s, j)| (s.report_id.clone(), Subset::ALL[j]))
        .collect();
    Ok(SplitAssignment {
        seed,
        fractions,
        assignments,
    })
}

/// Size-preserving swaps that pull the worst-balanced label back within one item.
///
/// Labels that share many items (a broad category and its sub-categories) can
/// drift after the greedy pass. Each step takes the label with the largest
/// deviation and applies the swap between its most over- and under-filled
/// subsets that most reduces the summed squared deviation over all labels. Stops
/// when every label is within one item or no swap helps.
fn rebalance(slot: &mut [usize], item_labels: &[Vec<usize>], positives: &[Vec<usize>], sizes: &[usize]) {
    let n = slot.len() as f64;
    let k = sizes.len();
    let mut has = vec![vec![false; positives.len()]; slot.len()];
    for (i, ls) in item_labels.iter().enumerate() {
        for &l in ls {
            has[i][l] = true;
        }
    }
    let expected: Vec<Vec<f64>> = positives
        .iter()
        .map(|p| sizes.iter().map(|&s| p.len() as f64 * s as f64 / n).collect())
        .collect();
    let mut count = vec![vec![0i64; k]; positives.len()];
    for (i, ls) in item_labels.iter().enumerate() {
        for &l in ls {
            count[l][slot[i]] += 1;
        }
    }
    let dev = |count: &Vec<Vec<i64>>, l: usize, j: usize| count[l][j] as f64 - expected[l][j];

    let mut stuck = vec![false; positives.len()];
    for _ in 0..slot.len() * 4 {
        let worst = (0..positives.len())
            .filter(|&l| !stuck[l])
            .map(|l| (l, (0..k).map(|j| dev(&count, l, j).abs()).fold(0.0, f64::max)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite").then(b.0.cmp(&a.0)));
        let Some((label, d)) = worst else { break };
        if d <= 1.0 + EPS {
            break;
        }
        let hi = (0..k).max_by(|&a, &b| dev(&count, label, a).partial_cmp(&dev(&count, label, b)).expect("finite")).expect("k > 0");
        let lo = (0..k).min_by(|&a, &b| dev(&count, label, a).partial_cmp(&dev(&count, label, b)).expect("finite")).expect("k > 0");
        let mut best: Option<(f64, usize, usize)> = None;
        for a in positives[label].iter().copied().filter(|&a| slot[a] == hi) {
            for b in (0..slot.len()).filter(|&b| slot[b] == lo && !has[b][label]) {
                let mut delta = 0.0;
                for &m in &item_labels[a] {
                    if !has[b][m] {
                        delta += 2.0 * (dev(&count, m, lo) - dev(&count, m, hi)) + 2.0;
                    }
                }
                for &m in &item_labels[b] {
                    if !has[a][m] {
                        delta += 2.0 * (dev(&count, m, hi) - dev(&count, m, lo)) + 2.0;
                    }
                }
                if delta < -EPS && best.is_none_or(|(bd, _, _)| delta < bd - EPS) {
                    best = Some((delta, a, b));
                }
            }
        }
        match best {
            Some((_, a, b)) => {
                for &m in &item_labels[a] {
                    count[m][hi] -= 1;
                    count[m][lo] += 1;
                }
                for &m in &item_labels[b] {
                    count[m][lo] -= 1;
                    count[m][hi] += 1;
                }
                slot.swap(a, b);
                stuck.iter_mut().for_each(|s| *s = false);
            }
            None => stuck[label] = true,
        }
    }
}

/// Open subset maximizing `score`, then remaining room, then a random draw.
fn pick(room: &[f64], score: impl Fn(usize) -> f64, rng: &mut ChaCha8Rng) -> usize {
    let open: Vec<usize> = (0..room.len()).filter(|&j| room[j] > 0.5).collect();
    let best = open.iter().map(|&j| score(j)).fold(f64::NEG_INFINITY, f64::max);
    let tier: Vec<usize> = open.into_iter().filter(|&j| score(j) >= best - EPS).collect();
    let best_room = tier.iter().map(|&j| room[j]).fold(f64::NEG_INFINITY, f64::max);
    let tier: Vec<usize> = tier.into_iter().filter(|&j| room[j] >= best_room - EPS).collect();
    if tier.len() == 1 {
        tier[0]
    } else {
        tier[rng.random_range(0..tier.len())]
    }
}

/// Uniform sample without replacement of `n_per_region` ids from each region pool.
///
/// Selected ids keep their pool order.
pub fn sample_external(
    pool: &IndexMap<String, Vec<String>>,
    n_per_region: usize,
    seed: u64,
) -> Result<IndexMap<String, Vec<String>>, SplitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = IndexMap::with_capacity(pool.len());
    for (region, ids) in pool {
        if ids.len() < n_per_region {
            return Err(SplitError::PoolTooSmall {
                region: region.clone(),
                available: ids.len(),
                requested: n_per_region,
            });
        }
        let mut picked = sample(&mut rng, ids.len(), n_per_region).into_vec();
        picked.sort_unstable();
        out.insert(region.clone(), picked.into_iter().map(|i| ids[i].clone()).collect());
    }
    Ok(out)
}

/// Largest `|positives in subset - expected|` for each label with at least `min_positives`.
pub fn stratification_deviation(
    corpus: &[BinaryLabelSheet],
    split: &SplitAssignment,
    min_positives: usize,
) -> IndexMap<String, f64> {
    let n = corpus.len() as f64;
    let sizes = split.sizes();
    let mut counts: IndexMap<String, [usize; 3]> = IndexMap::new();
    for s in corpus {
        let j = split.subset_of(&s.report_id).expect("assigned") as usize;
        for (l, &v) in &s.labels {
            let e = counts.entry(l.clone()).or_default();
            if v {
                e[j] += 1;
            }
        }
    }
    counts
        .into_iter()
        .filter(|(_, c)| c.iter().sum::<usize>() >= min_positives)
        .map(|(l, c)| {
            let total = c.iter().sum::<usize>() as f64;
            let dev = (0..3)
                .map(|j| (c[j] as f64 - total * sizes[j] as f64 / n).abs())
                .fold(0.0, f64::max);
            (l, dev)
        })
        .collect()
}
