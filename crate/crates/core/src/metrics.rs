//! Sequence metrics for predicted interaction orders: exact-match accuracy,
//! BLEU-3, METEOR and the Kendall / Spearman rank correlations.
//!
//! Sequences are slices of vocabulary ids. Correlation metrics compare token
//! ranks: the target fixes each token's rank as its position, and the
//! prediction's rank for the same token is its position in the prediction.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{IopError, Result};

pub fn accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(IopError::Input(format!(
            "prediction has {} tokens, target has {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(if pred == target { 1.0 } else { 0.0 })
}

fn ngram_counts(seq: &[usize], order: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    for gram in seq.windows(order) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram precision of `pred` against `target`.
pub fn ngram_precision(pred: &[usize], target: &[usize], order: usize) -> f64 {
    let total = pred.len().saturating_sub(order - 1);
    if total == 0 {
        return 0.0;
    }
    let reference = ngram_counts(target, order);
    let matched: usize = ngram_counts(pred, order)
        .into_iter()
        .map(|(gram, c)| c.min(reference.get(gram).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

/// Geometric mean of clipped 1-, 2- and 3-gram precisions, without brevity
/// penalty or smoothing.
pub fn bleu3(pred: &[usize], target: &[usize]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() < 3 {
        return Err(IopError::Input(format!(
            "BLEU-3 needs equal lengths of at least 3, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let p = [1, 2, 3].map(|k| ngram_precision(pred, target, k));
    if p.contains(&0.0) {
        return Ok(0.0);
    }
    Ok((p[0] * p[1] * p[2]).cbrt())
}

/// Exact-match METEOR with recall-weighted harmonic mean and cubic
/// fragmentation penalty.
pub fn meteor(pred: &[usize], target: &[usize]) -> f64 {
    if pred.is_empty() || target.is_empty() {
        return 0.0;
    }
    // Align each predicted token with the earliest unused target occurrence.
    let mut used = vec![false; target.len()];
    let mut alignment = Vec::new();
    for (i, tok) in pred.iter().enumerate() {
        if let Some(j) = (0..target.len()).find(|&j| !used[j] && target[j] == *tok) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let precision = matches as f64 / pred.len() as f64;
    let recall = matches as f64 / target.len() as f64;
    let fmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// For each prediction position, the target rank of the token there.
fn target_ranks_in_pred_order(pred: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if pred.len() != target.len() {
        return Err(IopError::NotPermutation);
    }
    let mut rank_of = HashMap::with_capacity(target.len());
    for (r, &tok) in target.iter().enumerate() {
        if rank_of.insert(tok, r).is_some() {
            return Err(IopError::Input("target repeats a token".into()));
        }
    }
    let mut seen = vec![false; target.len()];
    pred.iter()
        .map(|tok| {
            let r = *rank_of.get(tok).ok_or(IopError::NotPermutation)?;
            if std::mem::replace(&mut seen[r], true) {
                return Err(IopError::NotPermutation);
            }
            Ok(r)
        })
        .collect()
}

/// Counts inversions by merge sort.
fn count_inversions(xs: &mut [usize], buf: &mut Vec<usize>) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut xs[..mid], buf) + count_inversions(&mut xs[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if xs[i] <= xs[j] {
            buf.push(xs[i]);
            i += 1;
        } else {
            buf.push(xs[j]);
            inv += (mid - i) as u64;
            j += 1;
        }
    }
    buf.extend_from_slice(&xs[i..mid]);
    buf.extend_from_slice(&xs[j..n]);
    xs.copy_from_slice(buf);
    inv
}

/// Kendall's tau between prediction and target token ranks. The prediction
/// must be a permutation of the target.
pub fn kendall_tau(pred: &[usize], target: &[usize]) -> Result<f64> {
    let mut ranks = target_ranks_in_pred_order(pred, target)?;
    let m = ranks.len();
    if m < 2 {
        return Ok(1.0);
    }
    let pairs = (m * (m - 1) / 2) as f64;
    // Each inversion is a discordant pair; every other pair is concordant.
    let discordant = count_inversions(&mut ranks, &mut Vec::with_capacity(m)) as f64;
    Ok((pairs - 2.0 * discordant) / pairs)
}

/// Spearman's rho between prediction and target token ranks. The prediction
/// must be a permutation of the target.
pub fn spearman_rho(pred: &[usize], target: &[usize]) -> Result<f64> {
    let ranks = target_ranks_in_pred_order(pred, target)?;
    let m = ranks.len();
    if m < 2 {
        return Ok(1.0);
    }
    let d2: f64 = ranks
        .iter()
        .enumerate()
        .map(|(pos, &r)| {
            let d = pos as f64 - r as f64;
            d * d
        })
        .sum();
    let m = m as f64;
    Ok(1.0 - 6.0 * d2 / (m * (m * m - 1.0)))
}

/// Rank vectors for a possibly non-permutation prediction: each target token
/// is ranked by its first position in the prediction, and tokens missing from
/// the prediction share the last rank.
fn pad_ranks(pred: &[usize], target: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let m = target.len();
    let target_ranks = (0..m).map(|r| r as f64).collect();
    let pred_ranks = target
        .iter()
        .map(|tok| pred.iter().position(|p| p == tok).unwrap_or(m) as f64)
        .collect();
    (target_ranks, pred_ranks)
}

fn tau_a(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len();
    if m < 2 {
        return 1.0;
    }
    let mut score = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            score += ((x[i] - x[j]) * (y[i] - y[j])).signum();
        }
    }
    score / (m * (m - 1) / 2) as f64
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Score non-permutation predictions with padded ranks instead of
    /// skipping the correlation metrics.
    pub pad_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub accuracy: f64,
    pub bleu3: f64,
    pub meteor: f64,
    /// `None` when the prediction is not a permutation and padding is off.
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
}

pub fn score_sample(pred: &[usize], target: &[usize], opts: MetricOptions) -> Result<SampleMetrics> {
    let accuracy = accuracy(pred, target)?;
    let bleu3 = bleu3(pred, target)?;
    let meteor = meteor(pred, target);
    let (kendall_tau, spearman_rho) = match (kendall_tau(pred, target), spearman_rho(pred, target)) {
        (Ok(t), Ok(r)) => (Some(t), Some(r)),
        (Err(IopError::NotPermutation), _) if opts.pad_rank => {
            let (x, y) = pad_ranks(pred, target);
            (Some(tau_a(&x, &y)), Some(pearson(&x, &y)))
        }
        (Err(IopError::NotPermutation), _) => (None, None),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok(SampleMetrics {
        accuracy,
        bleu3,
        meteor,
        kendall_tau,
        spearman_rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: f64,
    pub bleu3: f64,
    pub meteor: f64,
    pub kendall_tau: f64,
    pub spearman_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub prediction: String,
    pub target: String,
    pub metrics: SampleMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: Vec<SampleRecord>,
    pub aggregate: AggregateMetrics,
    pub count: usize,
    /// Samples whose correlation metrics were undefined.
    pub skipped_correlation: usize,
}

/// Arithmetic means over `records`. Correlation means run over the records
/// where they are defined (0 if none are).
pub fn aggregate(records: Vec<SampleRecord>) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(IopError::EmptyAggregate);
    }
    let n = records.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| records.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let defined: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.metrics.kendall_tau?, r.metrics.spearman_rho?)))
        .collect();
    let corr_mean = |f: fn(&(f64, f64)) -> f64| {
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().map(f).sum::<f64>() / defined.len() as f64
        }
    };
    let aggregate = AggregateMetrics {
        accuracy: mean(|m| m.accuracy),
        bleu3: mean(|m| m.bleu3),
        meteor: mean(|m| m.meteor),
        kendall_tau: corr_mean(|p| p.0),
        spearman_rho: corr_mean(|p| p.1),
    };
    Ok(MetricReport {
        count: records.len(),
        skipped_correlation: records.len() - defined.len(),
        samples: records,
        aggregate,
    })
}

/// Aggregates records per group key, keeping groups separate.
pub fn aggregate_grouped<K: Ord>(
    records: impl IntoIterator<Item = (K, SampleRecord)>,
) -> Result<std::collections::BTreeMap<K, MetricReport>> {
    let mut groups: std::collections::BTreeMap<K, Vec<SampleRecord>> = Default::default();
    for (k, r) in records {
        groups.entry(k).or_default().push(r);
    }
    groups.into_iter().map(|(k, rs)| Ok((k, aggregate(rs)?))).collect()
}

impl MetricReport {
    /// One row per sample plus a trailing `summary` row.
    pub fn to_csv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("sample_id,prediction,target,accuracy,bleu3,meteor,kendall_tau,spearman_rho\n");
        for r in &self.samples {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.sample_id,
                r.prediction,
                r.target,
                m.accuracy,
                m.bleu3,
                m.meteor,
                fmt_opt(m.kendall_tau),
                fmt_opt(m.spearman_rho)
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "summary,,,{},{},{},{},{}\n",
            a.accuracy, a.bleu3, a.meteor, a.kendall_tau, a.spearman_rho
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3, 4, 5]).unwrap(), 1.0);
        assert!(accuracy(&[0, 1], &[0, 1, 2]).is_err());
    }

    #[test]
    fn bleu_cases() {
        assert_eq!(bleu3(&[A, B, C], &[A, B, C]).unwrap(), 1.0);
        assert_eq!(bleu3(&[B, A, C], &[A, B, C]).unwrap(), 0.0);
        let target = [0, 1, 2, 3, 4, 5];
        let pred = [0, 1, 2, 4, 3, 5];
        let expected = (1.0f64 * 0.4 * 0.25).cbrt();
        assert!((bleu3(&pred, &target).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.4642).abs() < 1e-4);
        assert!(bleu3(&[0, 1], &[0, 1]).is_err());
    }

    #[test]
    fn bleu_keeps_unigram_clipping_for_repeats() {
        // Repeated token: p1 = 2/3, p2 = 1/2 ("0 1" matches), p3 = 0.
        assert_eq!(ngram_precision(&[0, 1, 1], &[0, 1, 2], 1), 2.0 / 3.0);
        assert_eq!(ngram_precision(&[0, 1, 1], &[0, 1, 2], 2), 0.5);
        assert_eq!(bleu3(&[0, 1, 1], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn meteor_cases() {
        let exact = meteor(&[A, B, C], &[A, B, C]);
        assert!((exact - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert!((exact - 0.9815).abs() < 1e-4);
        let rotated = meteor(&[C, A, B], &[A, B, C]);
        assert!((rotated - (1.0 - 0.5 * (2.0f64 / 3.0).powi(3))).abs() < 1e-12);
        assert!((rotated - 0.852).abs() < 1e-3);
        assert_eq!(meteor(&[3, 4, 5], &[A, B, C]), 0.0);
    }

    #[test]
    fn meteor_partial_match() {
        // 2 matches in one chunk; P = R = 2/3.
        let got = meteor(&[0, 1, 1], &[0, 1, 2]);
        let f = 2.0 / 3.0;
        assert!((got - f * (1.0 - 0.5 * 0.125)).abs() < 1e-12);
    }

    #[test]
    fn kendall_and_spearman_cases() {
        assert_eq!(kendall_tau(&[A, B, C], &[A, B, C]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[C, B, A], &[A, B, C]).unwrap(), -1.0);
        // Prediction ranks (1, 3, 2).
        assert!((kendall_tau(&[A, C, B], &[A, B, C]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(spearman_rho(&[A, B, C], &[A, B, C]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[C, B, A], &[A, B, C]).unwrap(), -1.0);
        assert!((spearman_rho(&[A, C, B], &[A, B, C]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            kendall_tau(&[A, A, B], &[A, B, C]),
            Err(IopError::NotPermutation)
        ));
        assert!(matches!(
            spearman_rho(&[A, B], &[A, B, C]),
            Err(IopError::NotPermutation)
        ));
    }

    #[test]
    fn non_permutations_skip_or_pad() {
        let m = score_sample(&[0, 0, 1], &[0, 1, 2], MetricOptions::default()).unwrap();
        assert_eq!(m.kendall_tau, None);
        let padded = score_sample(&[0, 0, 1], &[0, 1, 2], MetricOptions { pad_rank: true }).unwrap();
        // Pred ranks (0, 2, 3) against (0, 1, 2): fully concordant.
        assert_eq!(padded.kendall_tau, Some(1.0));
        assert!(padded.spearman_rho.unwrap() > 0.9);
    }

    fn rec(id: usize, acc: f64, tau: Option<f64>) -> SampleRecord {
        SampleRecord {
            sample_id: id,
            prediction: String::new(),
            target: String::new(),
            metrics: SampleMetrics {
                accuracy: acc,
                bleu3: acc,
                meteor: 0.5,
                kendall_tau: tau,
                spearman_rho: tau,
            },
        }
    }

    #[test]
    fn aggregation() {
        let single = aggregate(vec![rec(0, 1.0, Some(0.2))]).unwrap();
        assert_eq!(single.aggregate.accuracy, 1.0);
        assert_eq!(single.aggregate.kendall_tau, 0.2);
        let two = aggregate(vec![rec(0, 1.0, Some(1.0)), rec(1, 0.0, None)]).unwrap();
        assert_eq!(two.aggregate.accuracy, 0.5);
        assert_eq!(two.aggregate.kendall_tau, 1.0);
        assert_eq!(two.skipped_correlation, 1);
        assert!(matches!(aggregate(vec![]), Err(IopError::EmptyAggregate)));
    }

    #[test]
    fn grouped_aggregation_keeps_groups_apart() {
        let groups = aggregate_grouped(vec![
            (("a", 3), rec(0, 1.0, None)),
            (("a", 4), rec(1, 0.0, None)),
            (("a", 3), rec(2, 1.0, None)),
        ])
        .unwrap();
        assert_eq!(groups[&("a", 3)].aggregate.accuracy, 1.0);
        assert_eq!(groups[&("a", 4)].aggregate.accuracy, 0.0);
    }

    #[test]
    fn csv_has_summary_row() {
        let r = aggregate(vec![rec(0, 1.0, Some(1.0))]).unwrap();
        let csv = r.to_csv();
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("summary,"));
        assert_eq!(last.split(',').count(), 8);
    }

    #[test]
    fn correlations_can_disagree_at_six_tokens() {
        // Sign agreement holds exhaustively up to five tokens but not at six.
        let target = [0, 1, 2, 3, 4, 5];
        let pred = [2, 3, 1, 4, 5, 0];
        let tau = kendall_tau(&pred, &target).unwrap();
        let rho = spearman_rho(&pred, &target).unwrap();
        assert!(tau > 0.0 && rho < 0.0, "tau {tau} rho {rho}");
    }

    fn perm_strategy(m: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..m).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn metrics_stay_in_range(
            target in perm_strategy(6),
            pred in prop::collection::vec(0usize..8, 6),
            pad in any::<bool>(),
        ) {
            let m = score_sample(&pred, &target, MetricOptions { pad_rank: pad }).unwrap();
            prop_assert!(m.accuracy == 0.0 || m.accuracy == 1.0);
            prop_assert!((0.0..=1.0).contains(&m.bleu3));
            prop_assert!((0.0..=1.0).contains(&m.meteor));
            for c in [m.kendall_tau, m.spearman_rho].into_iter().flatten() {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
            }
        }

        #[test]
        fn correlations_agree_in_sign(a in perm_strategy(5), b in perm_strategy(5)) {
            let tau = kendall_tau(&a, &b).unwrap();
            let rho = spearman_rho(&a, &b).unwrap();
            prop_assert!(tau * rho >= 0.0 || tau.abs() < 1e-12 || rho.abs() < 1e-12);
            prop_assert_eq!(tau == 1.0, a == b);
            prop_assert_eq!(rho == 1.0, a == b);
        }
    }
}
