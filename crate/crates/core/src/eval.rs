//! Prediction metrics: distributions, entropy, coverage, confusion and
//! recall, transition structure, and the action-extension report.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionId, HOURS_PER_DAY};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// One aligned (truth, prediction) day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub day: usize,
    pub truth: Vec<ActionId>,
    pub pred: Vec<ActionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Classes pooled for rare-action recall.
    pub rare: Vec<ActionId>,
    /// Action whose timing is reported separately, if any.
    pub new_action: Option<ActionId>,
    /// Inclusive hour window expected for `new_action`.
    pub window: (u8, u8),
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { rare: vec![ActionId(0), ActionId(3)], new_action: None, window: (11, 17) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// `matrix[true][pred]` counts.
    pub matrix: Vec<Vec<u64>>,
    /// `TP / (TP + FN)` per class; `None` when the class never occurs.
    pub recall: Vec<Option<f64>>,
    /// Pooled recall over the rare set; `None` when no rare class occurs.
    pub rare_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub truth: Vec<Vec<f64>>,
    pub pred: Vec<Vec<f64>>,
    /// Rows without any observed transition, filled uniformly.
    pub truth_flagged: Vec<bool>,
    pub pred_flagged: Vec<bool>,
    /// `Σ_j |T_true[i][j] - T_pred[i][j]|` per row.
    pub row_l1: Vec<f64>,
    /// Mean of `row_l1`.
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub action: ActionId,
    pub window: (u8, u8),
    pub true_counts: Vec<u32>,
    pub pred_counts: Vec<u32>,
    pub true_total: u64,
    pub pred_total: u64,
    /// `pred_total / true_total`, 0 when the action never occurs in truth.
    pub frequency_ratio: f64,
    pub true_hour_histogram: Vec<u64>,
    pub pred_hour_histogram: Vec<u64>,
    /// Share of predicted occurrences inside `window`; 0 when there are none.
    pub in_window_fraction: f64,
    /// Mean of (first predicted hour - first true hour) over days where both
    /// contain the action.
    pub mean_timing_offset: Option<f64>,
    pub never_predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_actions: usize,
    pub n_sequences: usize,
    pub n_steps: u64,
    pub freq_true: Vec<f64>,
    pub freq_pred: Vec<f64>,
    pub entropy_true: f64,
    pub entropy_pred: f64,
    /// `|entropy_pred - entropy_true|` in bits.
    pub delta_h: f64,
    pub coverage_covered: usize,
    pub coverage_total: usize,
    pub confusion: ConfusionReport,
    pub rare_set: Vec<ActionId>,
    pub transitions: TransitionReport,
    /// `Σ_c |freq_true[c] - freq_pred[c]|`.
    pub distribution_l1: f64,
    /// Share of hours predicted exactly.
    pub hourly_accuracy: f64,
    /// Share of days predicted exactly.
    pub exact_match_rate: f64,
    pub extension: Option<ExtensionReport>,
    pub sequences: Vec<SequenceRecord>,
}

fn check_actions(seqs: &[Vec<ActionId>], n_actions: usize) -> Result<()> {
    match seqs.iter().flatten().find(|a| a.index() >= n_actions) {
        Some(a) => Err(Error::invalid(format!("action {} outside the {n_actions}-action space", a.0))),
        None => Ok(()),
    }
}

fn class_counts(seqs: &[Vec<ActionId>], n_actions: usize) -> Vec<u64> {
    let mut c = vec![0u64; n_actions];
    for a in seqs.iter().flatten() {
        c[a.index()] += 1;
    }
    c
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

/// Empirical action frequencies over every step, and their entropy in bits.
pub fn entropy_and_distribution(seqs: &[Vec<ActionId>], n_actions: usize) -> Result<(Vec<f64>, f64)> {
    check_actions(seqs, n_actions)?;
    let counts = class_counts(seqs, n_actions);
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("entropy of an empty action set"));
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let h = entropy_bits(&freq);
    Ok((freq, h))
}

/// `(distinct predicted classes, n_actions)`.
pub fn coverage(pred: &[Vec<ActionId>], n_actions: usize) -> (usize, usize) {
    let counts = class_counts(pred, n_actions);
    (counts.iter().filter(|&&c| c > 0).count(), n_actions)
}

fn check_aligned(truth: &[Vec<ActionId>], pred: &[Vec<ActionId>]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!("{} true sequences vs {} predicted", truth.len(), pred.len())));
    }
    for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
        if t.len() != p.len() {
            return Err(Error::invalid(format!("sequence {i}: {} true steps vs {} predicted", t.len(), p.len())));
        }
    }
    Ok(())
}

pub fn confusion_and_recall(
    truth: &[Vec<ActionId>],
    pred: &[Vec<ActionId>],
    n_actions: usize,
    rare: &[ActionId],
) -> Result<ConfusionReport> {
    check_aligned(truth, pred)?;
    check_actions(truth, n_actions)?;
    check_actions(pred, n_actions)?;
    let mut matrix = vec![vec![0u64; n_actions]; n_actions];
    for (t, p) in truth.iter().zip(pred) {
        for (a, b) in t.iter().zip(p) {
            matrix[a.index()][b.index()] += 1;
        }
    }
    let recall = (0..n_actions)
        .map(|c| {
            let row: u64 = matrix[c].iter().sum();
            (row > 0).then(|| matrix[c][c] as f64 / row as f64)
        })
        .collect();
    let (mut tp, mut pos) = (0u64, 0u64);
    for r in rare.iter().filter(|r| r.index() < n_actions) {
        tp += matrix[r.index()][r.index()];
        pos += matrix[r.index()].iter().sum::<u64>();
    }
    let rare_recall = (pos > 0).then(|| tp as f64 / pos as f64);
    Ok(ConfusionReport { matrix, recall, rare_recall })
}

/// Row-normalized within-day transition matrix; empty rows become uniform
/// and are flagged.
pub fn transition_matrix(seqs: &[Vec<ActionId>], n_actions: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut counts = vec![vec![0u64; n_actions]; n_actions];
    for s in seqs {
        for w in s.windows(2) {
            counts[w[0].index()][w[1].index()] += 1;
        }
    }
    let mut flagged = vec![false; n_actions];
    let m = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                flagged[i] = true;
                vec![1.0 / n_actions as f64; n_actions]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    (m, flagged)
}

pub fn transition_similarity(truth: &[Vec<ActionId>], pred: &[Vec<ActionId>], n_actions: usize) -> Result<TransitionReport> {
    check_actions(truth, n_actions)?;
    check_actions(pred, n_actions)?;
    let (t, tf) = transition_matrix(truth, n_actions);
    let (p, pf) = transition_matrix(pred, n_actions);
    let row_l1: Vec<f64> =
        t.iter().zip(&p).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()).collect();
    let l1 = row_l1.iter().sum::<f64>() / n_actions as f64;
    Ok(TransitionReport { truth: t, pred: p, truth_flagged: tf, pred_flagged: pf, row_l1, l1 })
}

pub fn extension_report(
    truth: &[Vec<ActionId>],
    pred: &[Vec<ActionId>],
    action: ActionId,
    window: (u8, u8),
) -> Result<ExtensionReport> {
    check_aligned(truth, pred)?;
    let count = |s: &Vec<ActionId>| s.iter().filter(|&&a| a == action).count() as u32;
    let true_counts: Vec<u32> = truth.iter().map(count).collect();
    let pred_counts: Vec<u32> = pred.iter().map(count).collect();
    let true_total: u64 = true_counts.iter().map(|&c| c as u64).sum();
    let pred_total: u64 = pred_counts.iter().map(|&c| c as u64).sum();
    let histogram = |seqs: &[Vec<ActionId>]| {
        let mut h = vec![0u64; HOURS_PER_DAY];
        for s in seqs {
            for (hour, &a) in s.iter().enumerate() {
                if a == action && hour < HOURS_PER_DAY {
                    h[hour] += 1;
                }
            }
        }
        h
    };
    let true_hour_histogram = histogram(truth);
    let pred_hour_histogram = histogram(pred);
    let inside: u64 = pred_hour_histogram
        .iter()
        .enumerate()
        .filter(|(h, _)| (window.0 as usize..=window.1 as usize).contains(h))
        .map(|(_, &c)| c)
        .sum();
    let in_window_fraction = if pred_total > 0 { inside as f64 / pred_total as f64 } else { 0.0 };
    let first = |s: &Vec<ActionId>| s.iter().position(|&a| a == action);
    let offsets: Vec<f64> = truth
        .iter()
        .zip(pred)
        .filter_map(|(t, p)| Some(first(p)? as f64 - first(t)? as f64))
        .collect();
    let mean_timing_offset = (!offsets.is_empty()).then(|| offsets.iter().sum::<f64>() / offsets.len() as f64);
    Ok(ExtensionReport {
        action,
        window,
        true_counts,
        pred_counts,
        true_total,
        pred_total,
        frequency_ratio: if true_total > 0 { pred_total as f64 / true_total as f64 } else { 0.0 },
        true_hour_histogram,
        pred_hour_histogram,
        in_window_fraction,
        mean_timing_offset,
        never_predicted: pred_total == 0,
    })
}

/// Full report over aligned sequences.
pub fn evaluate(records: Vec<SequenceRecord>, n_actions: usize, cfg: &EvalConfig, exec: Exec) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let truth: Vec<Vec<ActionId>> = records.iter().map(|r| r.truth.clone()).collect();
    let pred: Vec<Vec<ActionId>> = records.iter().map(|r| r.pred.clone()).collect();
    check_aligned(&truth, &pred)?;
    let (freq_true, entropy_true) = entropy_and_distribution(&truth, n_actions)?;
    let (freq_pred, entropy_pred) = entropy_and_distribution(&pred, n_actions)?;
    let (coverage_covered, coverage_total) = coverage(&pred, n_actions);
    let confusion = confusion_and_recall(&truth, &pred, n_actions, &cfg.rare)?;
    let transitions = transition_similarity(&truth, &pred, n_actions)?;
    let extension = match cfg.new_action {
        Some(a) => Some(extension_report(&truth, &pred, a, cfg.window)?),
        None => None,
    };
    let hits = par::map(exec, &records, |r| {
        let h = r.truth.iter().zip(&r.pred).filter(|(a, b)| a == b).count() as u64;
        (h, h as usize == r.truth.len())
    });
    let n_steps: u64 = truth.iter().map(|s| s.len() as u64).sum();
    let correct: u64 = hits.iter().map(|h| h.0).sum();
    let exact = hits.iter().filter(|h| h.1).count();
    Ok(EvalReport {
        n_actions,
        n_sequences: records.len(),
        n_steps,
        distribution_l1: freq_true.iter().zip(&freq_pred).map(|(a, b)| (a - b).abs()).sum(),
        freq_true,
        freq_pred,
        entropy_true,
        entropy_pred,
        delta_h: (entropy_pred - entropy_true).abs(),
        coverage_covered,
        coverage_total,
        confusion,
        rare_set: cfg.rare.clone(),
        transitions,
        hourly_accuracy: correct as f64 / n_steps as f64,
        exact_match_rate: exact as f64 / records.len() as f64,
        extension,
        sequences: records,
    })
}

/// `(day, hour, true, predicted)` rows for the selected days, in report order.
pub fn plot_triples(report: &EvalReport, days: &[usize]) -> Vec<(usize, usize, ActionId, ActionId)> {
    report
        .sequences
        .iter()
        .filter(|r| days.is_empty() || days.contains(&r.day))
        .flat_map(|r| r.truth.iter().zip(&r.pred).enumerate().map(move |(h, (&t, &p))| (r.day, h, t, p)))
        .collect()
}

impl EvalReport {
    /// Confusion matrix as CSV with a `true\pred` header row.
    pub fn confusion_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\pred".to_string()];
        header.extend((0..self.n_actions).map(|c| c.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (c, row) in self.confusion.matrix.iter().enumerate() {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Hour-of-day histogram of the extension action, true vs predicted.
    pub fn hour_histogram_csv(&self) -> Result<Option<String>> {
        let Some(ext) = &self.extension else { return Ok(None) };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["hour", "true", "pred"]).map_err(csv_err)?;
        for h in 0..HOURS_PER_DAY {
            w.write_record([h.to_string(), ext.true_hour_histogram[h].to_string(), ext.pred_hour_histogram[h].to_string()])
                .map_err(csv_err)?;
        }
        finish_csv(w).map(Some)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(xs: &[u8]) -> Vec<ActionId> {
        xs.iter().map(|&x| ActionId(x)).collect()
    }

    #[test]
    fn entropy_reference_points() {
        let uniform = vec![seq(&[0, 1, 2, 3, 4, 5])];
        let (_, h) = entropy_and_distribution(&uniform, 6).unwrap();
        assert!((h - 6f64.log2()).abs() < 1e-12);
        let (f, h) = entropy_and_distribution(&[seq(&[5, 5, 5])], 6).unwrap();
        assert_eq!(h, 0.0);
        assert_eq!(f[5], 1.0);
        assert!(entropy_and_distribution(&[], 6).is_err());
    }

    #[test]
    fn coverage_counts_distinct_classes() {
        assert_eq!(coverage(&[seq(&[0, 1, 2]), seq(&[3, 4, 5])], 6), (6, 6));
        assert_eq!(coverage(&[seq(&[5; 24])], 6), (1, 6));
        assert_eq!(coverage(&[], 6), (0, 6));
    }

    #[test]
    fn recall_edge_cases() {
        let t = vec![seq(&[0, 1, 2, 3])];
        let r = confusion_and_recall(&t, &t, 6, &[ActionId(0), ActionId(3)]).unwrap();
        assert!(r.recall[..4].iter().all(|&x| x == Some(1.0)));
        assert_eq!(r.recall[4], None);
        assert_eq!(r.rare_recall, Some(1.0));
        let p = vec![seq(&[1, 1, 2, 3])];
        let r = confusion_and_recall(&t, &p, 6, &[ActionId(0), ActionId(3)]).unwrap();
        assert_eq!(r.recall[0], Some(0.0));
        assert_eq!(r.rare_recall, Some(0.5));
        assert!(confusion_and_recall(&t, &[seq(&[1])], 6, &[]).is_err());
    }

    #[test]
    fn cycle_versus_constant_transitions() {
        let r = transition_similarity(&[seq(&[1, 2, 1, 2, 1])], &[seq(&[1, 1, 1, 1, 1])], 6).unwrap();
        assert_eq!(r.row_l1[1], 2.0);
        assert!(!r.truth_flagged[2]);
        assert!(r.pred_flagged[2]);
        let same = transition_similarity(&[seq(&[1, 2, 3])], &[seq(&[1, 2, 3])], 6).unwrap();
        assert_eq!(same.l1, 0.0);
    }

    #[test]
    fn transitions_do_not_cross_days() {
        let (m, flagged) = transition_matrix(&[seq(&[1]), seq(&[2])], 3);
        assert!(flagged.iter().all(|&f| f));
        assert_eq!(m[1], vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn extension_single_day_shift() {
        let mut t = vec![ActionId(0); 24];
        let mut p = t.clone();
        t[12] = ActionId(6);
        p[16] = ActionId(6);
        let r = extension_report(&[t.clone()], &[p], ActionId(6), (11, 17)).unwrap();
        assert_eq!(r.frequency_ratio, 1.0);
        assert_eq!(r.mean_timing_offset, Some(4.0));
        assert_eq!(r.in_window_fraction, 1.0);
        let r = extension_report(&[t.clone()], &[vec![ActionId(0); 24]], ActionId(6), (11, 17)).unwrap();
        assert_eq!(r.frequency_ratio, 0.0);
        assert!(r.never_predicted);
        let none = vec![ActionId(1); 24];
        let r = extension_report(&[none.clone()], &[none], ActionId(6), (11, 17)).unwrap();
        assert_eq!((r.true_total, r.pred_total, r.frequency_ratio), (0, 0, 0.0));
    }

    #[test]
    fn extension_window_fraction() {
        let mut p = vec![ActionId(0); 24];
        p[13] = ActionId(6);
        let r = extension_report(&[vec![ActionId(0); 24]], &[p], ActionId(6), (11, 17)).unwrap();
        assert_eq!(r.in_window_fraction, 1.0);
    }

    #[test]
    fn csv_tables() {
        let rec = SequenceRecord { day: 3, truth: seq(&[0, 1]), pred: seq(&[0, 0]) };
        let rep = evaluate(vec![rec], 2, &EvalConfig::default(), Exec::Sequential).unwrap();
        assert_eq!(rep.confusion_csv().unwrap(), "true\\pred,0,1\n0,1,0\n1,1,0\n");
        assert_eq!(rep.hour_histogram_csv().unwrap(), None);
        assert_eq!(plot_triples(&rep, &[3]).len(), 2);
        assert_eq!(rep.hourly_accuracy, 0.5);
    }
}
