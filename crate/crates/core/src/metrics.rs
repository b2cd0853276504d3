//! Token-level scoring: binary (any entity vs. outside) and per-class micro.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OUTSIDE: &str = "O";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold has {gold} labels but prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("cannot average an empty set of reports")]
    NoReports,
}

/// Whether a gold-outside token predicted as class `c` counts toward `FP_c`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpConvention {
    #[default]
    IncludeOutside,
    ExcludeOutside,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub convention: FpConvention,
    pub binary: Counts,
    pub per_class: BTreeMap<String, Counts>,
}

impl ConfusionCounts {
    pub fn new(convention: FpConvention) -> Self {
        ConfusionCounts {
            convention,
            ..Default::default()
        }
    }

    pub fn accumulate<G, P>(&mut self, gold: &[G], pred: &[P]) -> Result<(), MetricsError>
    where
        G: AsRef<str>,
        P: AsRef<str>,
    {
        if gold.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        for (g, p) in gold.iter().zip(pred) {
            let (g, p) = (g.as_ref(), p.as_ref());
            let (g_pos, p_pos) = (g != OUTSIDE, p != OUTSIDE);
            match (g_pos, p_pos) {
                (true, true) => self.binary.tp += 1,
                (false, true) => self.binary.fp += 1,
                (true, false) => self.binary.fn_ += 1,
                (false, false) => {}
            }
            if g_pos && g == p {
                self.class(g).tp += 1;
                continue;
            }
            if g_pos {
                self.class(g).fn_ += 1;
            }
            if p_pos && (g_pos || self.convention == FpConvention::IncludeOutside) {
                self.class(p).fp += 1;
            }
        }
        Ok(())
    }

    fn class(&mut self, label: &str) -> &mut Counts {
        if !self.per_class.contains_key(label) {
            self.per_class.insert(label.to_string(), Counts::default());
        }
        self.per_class.get_mut(label).expect("inserted")
    }

    /// Associative and commutative.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.binary.add(&other.binary);
        for (label, c) in &other.per_class {
            self.class(label).add(c);
        }
    }

    pub fn micro(&self) -> Counts {
        let mut total = Counts::default();
        for c in self.per_class.values() {
            total.add(c);
        }
        total
    }

    pub fn report(&self) -> MetricReport {
        let b = Score::from_counts(&self.binary);
        let m = Score::from_counts(&self.micro());
        MetricReport {
            binary_precision: b.precision,
            binary_recall: b.recall,
            binary_f1: b.f1,
            micro_precision: m.precision,
            micro_recall: m.recall,
            micro_f1: m.f1,
            gold_positive_tokens: self.binary.tp + self.binary.fn_,
            predicted_positive_tokens: self.binary.tp + self.binary.fp,
            no_support: b.no_support || m.no_support,
            convention: self.convention,
        }
    }
}

/// Counts for one pair of sequences under the default convention.
pub fn accumulate<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
) -> Result<ConfusionCounts, MetricsError> {
    let mut c = ConfusionCounts::default();
    c.accumulate(gold, pred)?;
    Ok(c)
}

struct Score {
    precision: f64,
    recall: f64,
    f1: f64,
    no_support: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl Score {
    fn from_counts(c: &Counts) -> Score {
        let (precision, np) = ratio(c.tp, c.tp + c.fp);
        let (recall, nr) = ratio(c.tp, c.tp + c.fn_);
        // Harmonic mean of precision and recall, in count form.
        let (f1, _) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
        Score {
            precision,
            recall,
            f1,
            no_support: np || nr,
        }
    }
}

pub fn binary_f1(c: &ConfusionCounts) -> f64 {
    Score::from_counts(&c.binary).f1
}

pub fn micro_f1(c: &ConfusionCounts) -> f64 {
    Score::from_counts(&c.micro()).f1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub binary_precision: f64,
    pub binary_recall: f64,
    pub binary_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub gold_positive_tokens: u64,
    pub predicted_positive_tokens: u64,
    /// Some precision or recall had a zero denominator and was reported as 0.
    pub no_support: bool,
    #[serde(default)]
    pub convention: FpConvention,
}

impl MetricReport {
    /// Row with binary and micro F1 as percentages, tab-separated.
    pub fn table_row(&self, name: &str) -> String {
        format!(
            "{name}\t{:.2}\t{:.2}",
            100.0 * self.binary_f1,
            100.0 * self.micro_f1
        )
    }

    pub const TABLE_HEADER: &'static str = "model\tbinary_f1\tmicro_f1";

    /// Field-wise mean; support counts are summed.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport, MetricsError> {
        let n = reports.len() as f64;
        if reports.is_empty() {
            return Err(MetricsError::NoReports);
        }
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            binary_precision: avg(|r| r.binary_precision),
            binary_recall: avg(|r| r.binary_recall),
            binary_f1: avg(|r| r.binary_f1),
            micro_precision: avg(|r| r.micro_precision),
            micro_recall: avg(|r| r.micro_recall),
            micro_f1: avg(|r| r.micro_f1),
            gold_positive_tokens: reports.iter().map(|r| r.gold_positive_tokens).sum(),
            predicted_positive_tokens: reports.iter().map(|r| r.predicted_positive_tokens).sum(),
            no_support: reports.iter().any(|r| r.no_support),
            convention: reports[0].convention,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "binary  P={:.4} R={:.4} F1={:.4}",
            self.binary_precision, self.binary_recall, self.binary_f1
        )?;
        write!(
            f,
            "micro   P={:.4} R={:.4} F1={:.4}",
            self.micro_precision, self.micro_recall, self.micro_f1
        )?;
        if self.no_support {
            write!(
                f,
                "\n(no support: some ratios had a zero denominator and are reported as 0)"
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hand_fixture() {
        let gold = v(&["O", "name", "name", "O", "phone"]);
        let pred = v(&["O", "name", "O", "O", "name"]);
        let c = accumulate(&gold, &pred).unwrap();
        assert_eq!(
            c.binary,
            Counts {
                tp: 2,
                fp: 0,
                fn_: 1
            }
        );
        assert_eq!(
            c.per_class["name"],
            Counts {
                tp: 1,
                fp: 1,
                fn_: 1
            }
        );
        assert_eq!(
            c.per_class["phone"],
            Counts {
                tp: 0,
                fp: 0,
                fn_: 1
            }
        );
        let r = c.report();
        assert_eq!(r.binary_precision, 1.0);
        assert!((r.binary_recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.binary_f1 - 0.8).abs() < 1e-12);
        assert_eq!(r.micro_precision, 0.5);
        assert!((r.micro_recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.micro_f1 - 0.4).abs() < 1e-12);
        assert!(!r.no_support);
    }

    #[test]
    fn outside_convention_flag() {
        let gold = v(&["O", "a"]);
        let pred = v(&["a", "a"]);
        let mut inc = ConfusionCounts::new(FpConvention::IncludeOutside);
        inc.accumulate(&gold, &pred).unwrap();
        let mut exc = ConfusionCounts::new(FpConvention::ExcludeOutside);
        exc.accumulate(&gold, &pred).unwrap();
        assert_eq!(inc.per_class["a"].fp, 1);
        assert_eq!(exc.per_class["a"].fp, 0);
        assert_eq!(inc.binary, exc.binary);
    }

    #[test]
    fn degenerate_inputs() {
        let c = accumulate(&v(&["O", "O"]), &v(&["O", "O"])).unwrap();
        assert_eq!(c.binary, Counts::default());
        assert!(c.per_class.is_empty());
        let r = c.report();
        assert_eq!((r.binary_f1, r.micro_f1), (0.0, 0.0));
        assert!(r.no_support);
        assert_eq!(
            accumulate(&v(&["O"]), &v(&[])),
            Err(MetricsError::LengthMismatch { gold: 1, pred: 0 })
        );
    }

    #[test]
    fn report_formats() {
        let c = accumulate(&v(&["a", "O"]), &v(&["a", "O"])).unwrap();
        let r = c.report();
        assert_eq!(r.table_row("gazetteer"), "gazetteer\t100.00\t100.00");
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let m = MetricReport::mean(&[r.clone(), c.report()]).unwrap();
        assert_eq!(m.binary_f1, 1.0);
        assert_eq!(MetricReport::mean(&[]), Err(MetricsError::NoReports));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
        let label = prop_oneof![Just("O"), Just("O"), Just("a"), Just("b"), Just("c")]
            .prop_map(String::from);
        (0usize..20).prop_flat_map(move |n| {
            (
                prop::collection::vec(label.clone(), n),
                prop::collection::vec(label.clone(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn perfect_prediction_has_no_errors((gold, _) in arb_pair()) {
            let c = accumulate(&gold, &gold).unwrap();
            prop_assert_eq!(c.binary.fp + c.binary.fn_, 0);
            prop_assert!(c.per_class.values().all(|k| k.fp == 0 && k.fn_ == 0));
        }

        #[test]
        fn merge_is_order_independent(pairs in prop::collection::vec(arb_pair(), 0..6)) {
            let mut fwd = ConfusionCounts::default();
            for (g, p) in &pairs { fwd.accumulate(g, p).unwrap(); }
            let mut rev = ConfusionCounts::default();
            for (g, p) in pairs.iter().rev() {
                rev.merge(&accumulate(g, p).unwrap());
            }
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn class_correct_predictions_make_the_metrics_agree((gold, pred) in arb_pair()) {
            // Keep only predictions that are O or the gold class.
            let pred: Vec<String> = gold.iter().zip(&pred)
                .map(|(g, p)| if p == "O" || g == "O" { "O".to_string() } else { g.clone() })
                .collect();
            let c = accumulate(&gold, &pred).unwrap();
            prop_assert_eq!(binary_f1(&c), micro_f1(&c));
            let r = c.report();
            for x in [r.binary_f1, r.micro_f1, r.binary_precision, r.micro_recall] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}
