//! Mann-Whitney U test with rank-biserial correlation and common-language
//! effect size.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Above this pooled size the normal approximation is used.
pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    #[serde(rename = "U")]
    pub u: f64,
    pub u_a: f64,
    pub u_b: f64,
    pub p_value: f64,
    pub method: PMethod,
    /// Exact permutation p-value, when the pooled size allows it.
    pub p_exact: Option<f64>,
    /// Normal approximation with tie and continuity correction.
    pub p_normal: f64,
    #[serde(rename = "RBC")]
    pub rbc: f64,
    #[serde(rename = "CLES")]
    pub cles: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Mid-ranks (1-based) of the pooled sample, doubled so they are integers.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share (i + j + 2) / 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// `U_A = #{a > b} + 0.5 #{a == b}`.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Two-sided exact p-value: the fraction of the `C(n, n_a)` group
/// assignments of the pooled values whose `|U_A - mean|` is at least the
/// observed one. Counted by dynamic programming over doubled rank sums.
pub fn exact_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (n_a, n) = (a.len(), a.len() + b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let max_sum: u64 = ranks.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum as usize + 1]; n_a + 1];
    ways[0][0] = 1.0;
    for &r in &ranks {
        for k in (1..=n_a).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            for s in (r as usize..=max_sum as usize).rev() {
                hi[0][s] += lo[k - 1][s - r as usize];
            }
        }
    }
    let total: f64 = ways[n_a].iter().sum();
    // doubled U_A = doubled R_A - n_a (n_a + 1); centre at n_a n_b
    let offset = (n_a * (n_a + 1)) as i64;
    let centre = (n_a * (n - n_a)) as i64;
    let observed: i64 = ranks[..n_a].iter().sum::<u64>() as i64 - offset;
    let dev = (observed - centre).abs();
    let extreme: f64 = ways[n_a]
        .iter()
        .enumerate()
        .filter(|&(s, &w)| w > 0.0 && ((s as i64 - offset) - centre).abs() >= dev)
        .map(|(_, &w)| w)
        .sum();
    (extreme / total).min(1.0)
}

/// Normal approximation with tie-corrected variance and a continuity
/// correction of one half.
pub fn normal_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (n_a, n_b) = (a.len() as f64, b.len() as f64);
    let n = n_a + n_b;
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n_a * n_b / 12.0
        * ((n + 1.0)
            - if n > 1.0 {
                tie_term / (n * (n - 1.0))
            } else {
                0.0
            });
    if !(var > 0.0) {
        return 1.0;
    }
    let dev = (u_statistic(a, b) - n_a * n_b / 2.0).abs();
    let z = ((dev - 0.5).max(0.0)) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "Mann-Whitney U needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "Mann-Whitney U samples contain NaN".into(),
        ));
    }
    let u_a = u_statistic(a, b);
    let nn = (a.len() * b.len()) as f64;
    let u_b = nn - u_a;
    let u = u_a.min(u_b);
    let p_exact = (a.len() + b.len() <= EXACT_LIMIT).then(|| exact_p_value(a, b));
    let p_normal = normal_p_value(a, b);
    Ok(UTestResult {
        u,
        u_a,
        u_b,
        p_value: p_exact.unwrap_or(p_normal),
        method: if p_exact.is_some() {
            PMethod::Exact
        } else {
            PMethod::Normal
        },
        p_exact,
        p_normal,
        rbc: 1.0 - 2.0 * u / nn,
        cles: u_a / nn,
        n_a: a.len(),
        n_b: b.len(),
    })
}
