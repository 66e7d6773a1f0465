use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::PairClass;

const K: usize = PairClass::COUNT;

/// Confusion matrix (rows actual, columns predicted) and the metrics derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub confusion: [[u64; K]; K],
    /// Row recall; `None` when the class has no test samples.
    pub per_class_success: [Option<f64>; K],
    /// `(colsum - diag) / (total - rowsum)`; `None` when every sample is of that class.
    pub per_class_fp_rate: [Option<f64>; K],
    pub overall_success: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl AttackReport {
    pub fn from_confusion(confusion: [[u64; K]; K]) -> AttackReport {
        let total: u64 = confusion.iter().flatten().sum();
        let diag: u64 = (0..K).map(|c| confusion[c][c]).sum();
        let row = |c: usize| confusion[c].iter().sum::<u64>();
        let col = |c: usize| (0..K).map(|r| confusion[r][c]).sum::<u64>();
        let per_class_success = std::array::from_fn(|c| ratio(confusion[c][c], row(c)));
        let per_class_fp_rate =
            std::array::from_fn(|c| ratio(col(c) - confusion[c][c], total - row(c)));
        AttackReport {
            confusion,
            per_class_success,
            per_class_fp_rate,
            overall_success: ratio(diag, total).unwrap_or(0.0),
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn success(&self, class: PairClass) -> Option<f64> {
        self.per_class_success[class.index()]
    }

    pub fn fp_rate(&self, class: PairClass) -> Option<f64> {
        self.per_class_fp_rate[class.index()]
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson::from(self)).expect("report serializes")
    }

    /// Aligned plain-text rendering in the layout of a published confusion table.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<10}{:>10}{:>10}{:>10}{:>12}{:>12}\n",
            "actual", "normal", "abnormal", "hybrid", "fp-rate", "success%"
        );
        for class in PairClass::ALL {
            let c = class.index();
            out.push_str(&format!(
                "{:<10}{:>10}{:>10}{:>10}{:>12}{:>12}\n",
                class.name(),
                self.confusion[c][0],
                self.confusion[c][1],
                self.confusion[c][2],
                self.per_class_fp_rate[c].map_or("-".into(), |v| format!("{v:.3}")),
                self.per_class_success[c].map_or("-".into(), |v| format!("{:.1}", v * 100.0)),
            ));
        }
        out.push_str(&format!(
            "overall success {:.1}% over {} pairs\n",
            self.overall_success * 100.0,
            self.total()
        ));
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassMetrics {
    support: u64,
    success: Option<f64>,
    fp_rate: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportJson {
    classes: Vec<String>,
    confusion: Vec<Vec<u64>>,
    overall_success: f64,
    per_class: BTreeMap<String, ClassMetrics>,
}

impl From<&AttackReport> for ReportJson {
    fn from(r: &AttackReport) -> Self {
        ReportJson {
            classes: PairClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            confusion: r.confusion.iter().map(|row| row.to_vec()).collect(),
            overall_success: r.overall_success,
            per_class: PairClass::ALL
                .iter()
                .map(|&c| {
                    (
                        c.name().to_string(),
                        ClassMetrics {
                            support: r.confusion[c.index()].iter().sum(),
                            success: r.success(c),
                            fp_rate: r.fp_rate(c),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round(v: f64, places: i32) -> f64 {
        let s = 10f64.powi(places);
        (v * s).round() / s
    }

    #[test]
    fn published_rf_matrix_metrics() {
        let r = AttackReport::from_confusion([[2204, 2, 426], [6, 643, 48], [470, 5, 2166]]);
        assert_eq!(r.total(), 5970);
        assert_eq!(round(r.overall_success * 100.0, 1), 84.0);
        assert_eq!(round(r.success(PairClass::NormalPair).unwrap() * 100.0, 1), 83.7);
        assert_eq!(round(r.success(PairClass::AbnormalPair).unwrap() * 100.0, 1), 92.3);
        assert_eq!(round(r.success(PairClass::HybridPair).unwrap() * 100.0, 1), 82.0);
        assert_eq!(round(r.fp_rate(PairClass::NormalPair).unwrap(), 3), 0.143);
        assert_eq!(round(r.fp_rate(PairClass::AbnormalPair).unwrap(), 3), 0.001);
        assert_eq!(round(r.fp_rate(PairClass::HybridPair).unwrap(), 3), 0.142);
    }

    #[test]
    fn perfect_predictions() {
        let r = AttackReport::from_confusion([[5, 0, 0], [0, 3, 0], [0, 0, 9]]);
        assert_eq!(r.overall_success, 1.0);
        assert!(r.per_class_fp_rate.iter().all(|f| *f == Some(0.0)));
        assert!(r.per_class_success.iter().all(|s| *s == Some(1.0)));
    }

    #[test]
    fn single_class_test_set_has_undefined_rates() {
        let r = AttackReport::from_confusion([[0, 0, 0], [1, 4, 0], [0, 0, 0]]);
        assert_eq!(r.success(PairClass::AbnormalPair), Some(0.8));
        assert_eq!(r.success(PairClass::NormalPair), None);
        assert_eq!(r.fp_rate(PairClass::AbnormalPair), None);
        assert_eq!(r.fp_rate(PairClass::NormalPair), Some(0.2));
        let json = r.to_json_value();
        assert!(json["per_class"]["abnormal"]["fp_rate"].is_null());
    }
}
