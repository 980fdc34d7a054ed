//! Chance-adjusted agreement between two pixel labelings.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Co-occurrence counts of predicted (rows) and true (columns) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

fn dense_ids(labels: impl Iterator<Item = usize>) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let mapped = labels
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (mapped, ids.len())
}

impl ContingencyTable {
    /// Builds the table over pixels kept by `foreground_only` (truth label 0 dropped).
    pub fn new(pred: &[usize], truth: &[usize], foreground_only: bool) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::InvalidValue {
                what: "labelings",
                reason: format!("lengths differ: {} vs {}", pred.len(), truth.len()),
            });
        }
        let kept: Vec<(usize, usize)> = pred
            .iter()
            .zip(truth)
            .filter(|(_, &t)| !foreground_only || t != 0)
            .map(|(&p, &t)| (p, t))
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyPixelSet);
        }
        let (rows, n_rows) = dense_ids(kept.iter().map(|k| k.0));
        let (cols, n_cols) = dense_ids(kept.iter().map(|k| k.1));
        let mut counts = vec![vec![0u64; n_cols]; n_rows];
        for (r, c) in rows.iter().zip(&cols) {
            counts[*r][*c] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..n_cols).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            total: kept.len() as u64,
        })
    }

    /// True when the two labelings induce the same partition.
    pub fn is_identity(&self) -> bool {
        self.row_sums.len() == self.col_sums.len()
            && self.counts.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1)
    }
}

fn pairs(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index; 1 when both labelings are a single cluster.
pub fn ari(pred: &[usize], truth: &[usize], foreground_only: bool) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth, foreground_only)?;
    let index: f64 = t.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let b: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let all = pairs(t.total);
    let expected = if all > 0.0 { a * b / all } else { 0.0 };
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.total as f64;
    let mut mi = 0.0;
    for (u, row) in t.counts.iter().enumerate() {
        for (v, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (t.row_sums[u] as f64 * t.col_sums[v] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under the hypergeometric permutation model.
pub fn expected_mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.total as usize;
    let mut log_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        log_fact[k] = log_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &t.row_sums {
        let a = a as usize;
        for &b in &t.col_sums {
            let b = b as usize;
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = log_fact[a] + log_fact[b] + log_fact[n - a] + log_fact[n - b] - log_fact[n];
            for k in lo..=hi {
                let kf = k as f64;
                let log_p = fixed - log_fact[k] - log_fact[a - k] - log_fact[b - k] - log_fact[n + k - a - b];
                emi += kf / nf * (nf * kf / (a as f64 * b as f64)).ln() * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with arithmetic-mean normalization; 1 for
/// labelings that induce the same partition.
pub fn ami(pred: &[usize], truth: &[usize], foreground_only: bool) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth, foreground_only)?;
    if t.is_identity() {
        return Ok(1.0);
    }
    let n = t.total as f64;
    let mi = mutual_information(&t);
    let emi = expected_mutual_information(&t);
    let norm = 0.5 * (entropy(&t.row_sums, n) + entropy(&t.col_sums, n));
    let denom = norm - emi;
    if denom.abs() < 1e-15 {
        return Ok(0.0);
    }
    Ok((mi - emi) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_labelings_score_one() {
        let a = [0, 0, 1, 1, 2, 2, 2];
        let b = [5, 5, 3, 3, 9, 9, 9];
        assert_eq!(ari(&a, &b, false).unwrap(), 1.0);
        assert_eq!(ami(&a, &b, false).unwrap(), 1.0);
        assert_eq!(ari(&[1; 4], &[2; 4], false).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_is_chance() {
        let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        assert!(ari(&[4; 9], &truth, false).unwrap().abs() < 1e-15);
        assert!(ami(&[4; 9], &truth, false).unwrap().abs() < 1e-15);
    }

    #[test]
    fn six_pixel_pair_count() {
        // pred pairs together: (0,1) (2,3) (4,5); truth pairs: 3 + 3
        // agreeing pairs: (0,1) and (4,5) -> index 2, a = 3, b = 6, total 15
        let expected_index = 6.0 * 3.0 / 15.0;
        let want = (2.0 - expected_index) / (4.5 - expected_index);
        let got = ari(&[0, 0, 1, 1, 2, 2], &[0, 0, 0, 1, 1, 1], false).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn foreground_exclusion() {
        assert_eq!(ari(&[1, 2, 2], &[0, 0, 0], true).unwrap_err(), Error::EmptyPixelSet);
        // background pixels disagree but are ignored
        assert_eq!(ari(&[1, 2, 3, 3], &[0, 0, 1, 1], true).unwrap(), 1.0);
        assert!(ari(&[1], &[1, 2], false).is_err());
    }

    #[test]
    fn emi_of_singletons() {
        let t = ContingencyTable::new(&[0, 1, 2, 3], &[0, 1, 2, 3], false).unwrap();
        assert!((expected_mutual_information(&t) - 4f64.ln()).abs() < 1e-12);
    }
}
