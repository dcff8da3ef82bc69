use serde::{Deserialize, Serialize};

/// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`. Ties are dropped
/// before calling.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // Pascal rows scaled by 1/2 per step hold the binomial pmf directly;
    // halving is exact, so small n gives exact dyadic p-values
    let mut pmf = vec![1.0f64];
    for _ in 0..n {
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, p) in pmf.iter().enumerate() {
            next[k] += p * 0.5;
            next[k + 1] += p * 0.5;
        }
        pmf = next;
    }
    let tail: f64 = pmf[wins.min(n + 1)..].iter().sum();
    tail.min(1.0)
}

/// One-sided paired sign test of `candidate > baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub n: usize,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
    pub mean_candidate: f64,
    pub mean_baseline: f64,
}

impl SignTest {
    /// Pairs are `(candidate, baseline)`; a win is `candidate > baseline`.
    pub fn greater(pairs: &[(f64, f64)]) -> Self {
        let wins = pairs.iter().filter(|(a, b)| a > b).count();
        let losses = pairs.iter().filter(|(a, b)| a < b).count();
        let n = pairs.len();
        let mean = |f: fn(&(f64, f64)) -> f64| {
            if n == 0 {
                0.0
            } else {
                pairs.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            n,
            wins,
            losses,
            ties: n - wins - losses,
            p_value: sign_test_p(wins, losses),
            mean_candidate: mean(|p| p.0),
            mean_baseline: mean(|p| p.1),
        }
    }

    /// Same test with the roles of "better" reversed: a win is `candidate < baseline`.
    pub fn less(pairs: &[(f64, f64)]) -> Self {
        let flipped: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (-a, -b)).collect();
        let mut t = Self::greater(&flipped);
        t.mean_candidate = -t.mean_candidate;
        t.mean_baseline = -t.mean_baseline;
        t
    }

    pub fn significant(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
