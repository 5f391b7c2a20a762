//! Brute-force reference implementations, written independently of the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn psi(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x == y {
        0.5
    } else {
        0.0
    }
}

fn split_classes(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let pos = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
    let neg = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
    (pos, neg)
}

/// Mann-Whitney AUC by exhaustive pair counting.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (pos, neg) = split_classes(scores, labels);
    let mut total = 0.0;
    for x in &pos {
        for y in &neg {
            total += psi(*x, *y);
        }
    }
    total / (pos.len() * neg.len()) as f64
}

/// J, sensitivity and specificity of the rule `score >= t`.
pub fn rule_j(scores: &[f64], labels: &[bool], t: f64) -> (f64, f64, f64) {
    let p = labels.iter().filter(|l| **l).count() as f64;
    let n = labels.len() as f64 - p;
    let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count() as f64;
    let tn = scores.iter().zip(labels).filter(|(s, l)| !**l && **s < t).count() as f64;
    (tp / p + tn / n - 1.0, tp / p, tn / n)
}

/// Youden optimum over every rule: -inf, +inf, each score and each adjacent midpoint.
///
/// Returns (threshold, J, sensitivity); ties by J within 1e-12, then sensitivity, then lower threshold.
pub fn youden_exhaustive(scores: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
    cands.extend(&sorted);
    for w in sorted.windows(2) {
        let m = (w[0] + w[1]) / 2.0;
        cands.push(if m > w[0] { m } else { w[1] });
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for t in cands {
        let (j, sens, _) = rule_j(scores, labels, t);
        let replace = match best {
            None => true,
            Some((bt, bj, bs)) => {
                j > bj + 1e-12 || ((j - bj).abs() <= 1e-12 && (sens > bs || (sens == bs && t < bt)))
            }
        };
        if replace {
            best = Some((t, j, sens));
        }
    }
    best.unwrap()
}

/// BH adjusted value of each p: min over p_j >= p_i of m * p_j / rank_j, capped at 1.
pub fn bh_brute(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            p.iter()
                .filter(|&&pj| pj >= pi)
                .map(|&pj| {
                    let rank = p.iter().filter(|&&pl| pl <= pj).count() as f64;
                    (m * pj / rank).min(1.0)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub struct DelongOracle {
    pub auc: f64,
    pub v10: Vec<f64>,
    pub v01: Vec<f64>,
}

/// Structural components from the psi kernel, O(mn).
pub fn delong_components(scores: &[f64], labels: &[bool]) -> DelongOracle {
    let (pos, neg) = split_classes(scores, labels);
    let v10: Vec<f64> = pos.iter().map(|x| neg.iter().map(|y| psi(*x, *y)).sum::<f64>() / neg.len() as f64).collect();
    let v01: Vec<f64> = neg.iter().map(|y| pos.iter().map(|x| psi(*x, *y)).sum::<f64>() / pos.len() as f64).collect();
    let auc = v10.iter().sum::<f64>() / v10.len() as f64;
    DelongOracle { auc, v10, v01 }
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    let ma = a.iter().sum::<f64>() / k;
    let mb = b.iter().sum::<f64>() / k;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0)
}

pub fn delong_var(c: &DelongOracle) -> f64 {
    sample_cov(&c.v10, &c.v10) / c.v10.len() as f64 + sample_cov(&c.v01, &c.v01) / c.v01.len() as f64
}

fn normal_p(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    2.0 * (1.0 - Normal::standard().cdf(z.abs()))
}

/// (z, p) of the paired test.
pub fn delong_paired_oracle(a: &[f64], b: &[f64], labels: &[bool]) -> (f64, f64) {
    let ca = delong_components(a, labels);
    let cb = delong_components(b, labels);
    let cov = sample_cov(&ca.v10, &cb.v10) / ca.v10.len() as f64 + sample_cov(&ca.v01, &cb.v01) / ca.v01.len() as f64;
    let var = delong_var(&ca) + delong_var(&cb) - 2.0 * cov;
    if ca.auc == cb.auc {
        return (0.0, 1.0);
    }
    let z = (ca.auc - cb.auc) / var.sqrt();
    (z, normal_p(z))
}

/// (z, p) of the unpaired test.
pub fn delong_unpaired_oracle(s1: &[f64], l1: &[bool], s2: &[f64], l2: &[bool]) -> (f64, f64) {
    let c1 = delong_components(s1, l1);
    let c2 = delong_components(s2, l2);
    if c1.auc == c2.auc {
        return (0.0, 1.0);
    }
    let z = (c1.auc - c2.auc) / (delong_var(&c1) + delong_var(&c2)).sqrt();
    (z, normal_p(z))
}

/// Random scored instance with both classes and injected ties (scores on a coarse grid).
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let grid = rng.random_range(2..=40u32) as f64;
    loop {
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|l| *l) && labels.iter().any(|l| !*l) {
            let scores = labels
                .iter()
                .map(|&l| {
                    let base: f64 = rng.random::<f64>() + if l { 0.3 } else { 0.0 };
                    (base * grid).round() / grid
                })
                .collect();
            return (scores, labels);
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Binormal sample: negatives N(0,1), positives N(d,1); population AUC is Phi(d / sqrt 2).
pub fn binormal(rng: &mut ChaCha8Rng, n_pos: usize, n_neg: usize, d: f64) -> (Vec<f64>, Vec<bool>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut scores = Vec::with_capacity(n_pos + n_neg);
    let mut labels = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos + n_neg {
        let z: f64 = StandardNormal.sample(rng);
        let pos = i < n_pos;
        scores.push(z + if pos { d } else { 0.0 });
        labels.push(pos);
    }
    (scores, labels)
}

pub fn binormal_auc(d: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(d / std::f64::consts::SQRT_2)
}
