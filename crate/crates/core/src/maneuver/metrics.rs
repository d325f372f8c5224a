use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when the ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Averages over the classes that occur in the truth or the predictions.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// One-vs-rest precision, recall and F1 per class.
pub fn evaluate_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> ClassificationReport {
    assert_eq!(truth.len(), pred.len(), "truth and predictions must align");
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let mut present = Vec::new();
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..n_classes).map(|t| confusion[t][c]).sum();
        let (precision, precision_undefined) = ratio(tp, predicted);
        let (recall, recall_undefined) = ratio(tp, support);
        let (f1, f1_undefined) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        if support > 0 || predicted > 0 {
            present.push(c);
        }
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        });
    }
    let avg = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|&c| f(&per_class[c])).sum::<f64>() / present.len() as f64
        }
    };
    ClassificationReport {
        macro_precision: avg(|m| m.precision),
        macro_recall: avg(|m| m.recall),
        macro_f1: avg(|m| m.f1),
        per_class,
        confusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let y = [0, 1, 2, 2, 1, 0];
        let r = evaluate_predictions(&y, &y, 3);
        for m in &r.per_class {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn all_wrong_two_classes() {
        let r = evaluate_predictions(&[0, 0, 1, 1], &[1, 1, 0, 0], 3);
        for c in 0..2 {
            let m = r.per_class[c];
            assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
            assert!(m.f1_undefined);
            assert!(!m.precision_undefined && !m.recall_undefined);
        }
        assert!(r.per_class[2].precision_undefined && r.per_class[2].recall_undefined);
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn hand_confusion() {
        // truth:  L L R S S S
        // pred:   L R R S L S
        let r = evaluate_predictions(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 2], 3);
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 2]]);
        // Left: tp 1, predicted 2, support 2.
        let l = r.per_class[0];
        assert!((l.precision - 0.5).abs() < 1e-15 && (l.recall - 0.5).abs() < 1e-15 && (l.f1 - 0.5).abs() < 1e-15);
        // Right: tp 1, predicted 2, support 1 → F1 = 2·0.5·1/1.5.
        let rr = r.per_class[1];
        assert!((rr.precision - 0.5).abs() < 1e-15 && rr.recall == 1.0);
        assert!((rr.f1 - 2.0 / 3.0).abs() < 1e-15);
        // Straight: tp 2, predicted 2, support 3.
        let s = r.per_class[2];
        assert!(s.precision == 1.0 && (s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);
        assert!((r.macro_f1 - (0.5 + 2.0 / 3.0 + 0.8) / 3.0).abs() < 1e-15);
    }
}
