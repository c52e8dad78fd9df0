//! Confusion matrix and the evaluation formula suite: per-class accuracy,
//! specificity, precision, recall, and F1 with macro averages.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Fixed label order: alphabetical over the four classes.
pub const CLASS_NAMES: [&str; 4] = ["glioma", "meningioma", "no-tumor", "pituitary"];

pub const NUM_CLASSES: usize = 4;

/// 4x4 tally; rows are actual classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn at(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }
}

/// Tally (actual, predicted) pairs into a confusion matrix.
pub fn confusion(predicted: &[usize], actual: &[usize]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "confusion needs equal lengths, got {} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        if p >= NUM_CLASSES || a >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "label out of range: predicted {p}, actual {a}"
            )));
        }
        cm.counts[a][p] += 1;
    }
    Ok(cm)
}

/// One-vs-rest metrics for a single class. `zero_denominator` flags any
/// metric that hit the 0/0 convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_denominator: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest reduction for class `k`: TP is the diagonal entry, FP the rest
/// of column k, FN the rest of row k, TN everything else, then
/// accuracy = (TP+TN)/total, specificity = TN/(TN+FP),
/// precision = TP/(TP+FP), recall = TP/(TP+FN), F1 = 2PR/(P+R).
pub fn per_class_metrics(cm: &ConfusionMatrix, k: usize) -> Result<ClassMetrics> {
    if k >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!("class index {k} out of range")));
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("metrics on an empty confusion matrix".into()));
    }
    let tp = cm.counts[k][k];
    let fp: u64 = (0..NUM_CLASSES).filter(|&a| a != k).map(|a| cm.counts[a][k]).sum();
    let fn_: u64 = (0..NUM_CLASSES).filter(|&p| p != k).map(|p| cm.counts[k][p]).sum();
    let tn = total - tp - fp - fn_;

    let mut zero = false;
    let accuracy = (tp + tn) as f64 / total as f64;
    let specificity = ratio(tn, tn + fp, &mut zero);
    let precision = ratio(tp, tp + fp, &mut zero);
    let recall = ratio(tp, tp + fn_, &mut zero);
    let f1 = if precision + recall == 0.0 {
        zero = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassMetrics {
        tp,
        fp,
        fn_,
        tn,
        accuracy,
        specificity,
        precision,
        recall,
        f1,
        zero_denominator: zero,
    })
}

/// Per-class rows plus macro averages and overall accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_accuracy: f64,
    pub macro_specificity: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// trace / total.
    pub overall_accuracy: f64,
}

/// Build the full report for a non-empty confusion matrix.
pub fn report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let per_class: Vec<ClassMetrics> = (0..NUM_CLASSES)
        .map(|k| per_class_metrics(cm, k))
        .collect::<Result<_>>()?;
    let n = NUM_CLASSES as f64;
    Ok(ClassReport {
        macro_accuracy: per_class.iter().map(|m| m.accuracy).sum::<f64>() / n,
        macro_specificity: per_class.iter().map(|m| m.specificity).sum::<f64>() / n,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
        overall_accuracy: cm.trace() as f64 / cm.total() as f64,
        per_class,
    })
}

impl ClassReport {
    /// Aligned plain-text table, one row per class plus the macro row.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>12} {:>10} {:>8} {:>8}  flag",
            "class", "accuracy", "specificity", "precision", "recall", "f1"
        );
        for (name, m) in CLASS_NAMES.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>12.4} {:>10.4} {:>8.4} {:>8.4}  {}",
                name,
                m.accuracy,
                m.specificity,
                m.precision,
                m.recall,
                m.f1,
                if m.zero_denominator { "zero-denominator" } else { "" }
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:>9.4} {:>12.4} {:>10.4} {:>8.4} {:>8.4}",
            "macro",
            self.macro_accuracy,
            self.macro_specificity,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1
        );
        let _ = writeln!(out, "overall accuracy: {:.4}", self.overall_accuracy);
        out
    }

    /// CSV rows: `class,accuracy,specificity,precision,recall,f1,flag`.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("class,accuracy,specificity,precision,recall,f1,flag\n");
        for (name, m) in CLASS_NAMES.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                name,
                m.accuracy,
                m.specificity,
                m.precision,
                m.recall,
                m.f1,
                if m.zero_denominator { "zero-denominator" } else { "" }
            );
        }
        let _ = writeln!(
            out,
            "macro,{:.6},{:.6},{:.6},{:.6},{:.6},",
            self.macro_accuracy,
            self.macro_specificity,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1
        );
        out
    }
}

/// Render the raw confusion counts as CSV with named rows and columns.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("actual\\predicted");
    for name in CLASS_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (name, row) in CLASS_NAMES.iter().zip(cm.counts()) {
        out.push_str(name);
        for &c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn six_sample_matrix() -> ConfusionMatrix {
        confusion(&[0, 1, 1, 2, 3, 3], &[0, 1, 2, 2, 3, 1]).unwrap()
    }

    #[test]
    fn perfect_predictions_diagonal() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm.trace(), 8);
        assert_eq!(cm.total(), 8);
        let rep = report(&cm).unwrap();
        for m in &rep.per_class {
            assert_eq!(m.accuracy, 1.0);
            assert_eq!(m.precision, 1.0);
            assert_eq!(m.recall, 1.0);
            assert_eq!(m.f1, 1.0);
            assert_eq!(m.specificity, 1.0);
        }
    }

    #[test]
    fn six_sample_hand_tally() {
        let cm = six_sample_matrix();
        assert_eq!(cm.at(0, 0), 1);
        assert_eq!(cm.at(1, 1), 1);
        assert_eq!(cm.at(2, 1), 1);
        assert_eq!(cm.at(2, 2), 1);
        assert_eq!(cm.at(3, 3), 1);
        assert_eq!(cm.at(1, 3), 1);
        assert_eq!(cm.total(), 6);
    }

    #[test]
    fn six_sample_class1_metrics() {
        let m = per_class_metrics(&six_sample_matrix(), 1).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (1, 1, 1, 3));
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.f1, 0.5);
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.specificity, 0.75);
        assert!(!m.zero_denominator);
    }

    #[test]
    fn empty_lists_make_zero_matrix_and_error_on_metrics() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(
            per_class_metrics(&cm, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn length_mismatch_and_bad_labels_rejected() {
        assert!(confusion(&[0, 1], &[0]).is_err());
        assert!(confusion(&[4], &[0]).is_err());
    }

    #[test]
    fn absent_class_takes_zero_convention() {
        // Class 3 never appears in predictions or labels.
        let cm = confusion(&[0, 1, 2], &[0, 1, 2]).unwrap();
        let m = per_class_metrics(&cm, 3).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.zero_denominator);
    }

    #[test]
    fn report_macro_f1_is_unweighted_mean() {
        let rep = report(&six_sample_matrix()).unwrap();
        let mean = rep.per_class.iter().map(|m| m.f1).sum::<f64>() / 4.0;
        assert_eq!(rep.macro_f1, mean);
        assert!((rep.overall_accuracy - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn counts_identity_and_order_invariance() {
        let cm = six_sample_matrix();
        for k in 0..NUM_CLASSES {
            let m = per_class_metrics(&cm, k).unwrap();
            assert_eq!(m.tp + m.fp + m.fn_ + m.tn, cm.total());
        }
        let tp_sum: u64 = (0..NUM_CLASSES)
            .map(|k| per_class_metrics(&cm, k).unwrap().tp)
            .sum();
        assert_eq!(tp_sum, cm.trace());
        // Permute the sample pairs: matrix unchanged.
        let permuted = confusion(&[3, 3, 2, 1, 1, 0], &[1, 3, 2, 2, 1, 0]).unwrap();
        assert_eq!(permuted, cm);
    }

    #[test]
    fn duplication_leaves_ratios_unchanged() {
        let pred = [0, 1, 1, 2, 3, 3];
        let act = [0, 1, 2, 2, 3, 1];
        let doubled_pred: Vec<usize> = pred.iter().chain(&pred).copied().collect();
        let doubled_act: Vec<usize> = act.iter().chain(&act).copied().collect();
        let a = report(&confusion(&pred, &act).unwrap()).unwrap();
        let b = report(&confusion(&doubled_pred, &doubled_act).unwrap()).unwrap();
        for (ma, mb) in a.per_class.iter().zip(&b.per_class) {
            assert_eq!(ma.precision, mb.precision);
            assert_eq!(ma.recall, mb.recall);
            assert_eq!(ma.f1, mb.f1);
            assert_eq!(ma.accuracy, mb.accuracy);
            assert_eq!(ma.specificity, mb.specificity);
        }
    }

    #[test]
    fn constant_predictor_accuracy_equals_prevalence() {
        // A model that always answers class 2: that column holds all mass
        // and overall accuracy equals class 2's prevalence.
        let actual = [0, 1, 2, 2, 2, 3, 0, 2];
        let predicted = [2usize; 8];
        let cm = confusion(&predicted, &actual).unwrap();
        for k in 0..NUM_CLASSES {
            let col: u64 = (0..NUM_CLASSES).map(|a| cm.at(a, k)).sum();
            assert_eq!(col, if k == 2 { 8 } else { 0 });
        }
        let rep = report(&cm).unwrap();
        assert_eq!(rep.overall_accuracy, 4.0 / 8.0);
    }

    #[test]
    fn csv_roundtrip_matches_report() {
        let rep = report(&six_sample_matrix()).unwrap();
        let csv = rep.render_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "class,accuracy,specificity,precision,recall,f1,flag"
        );
        let class1: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(class1[0], "meningioma");
        assert_eq!(class1[3], "0.500000");
        assert_eq!(class1[4], "0.500000");
    }
}
