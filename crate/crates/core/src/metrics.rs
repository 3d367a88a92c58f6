//! Sequence aggregation, macro-averaged evaluation and pilot-study analytics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{EmotionLabel, EmotionshipRecord};
use crate::error::{Error, Result};

/// Most frequent label; ties go to the lowest label code.
pub fn majority_vote(seq: &[EmotionLabel]) -> Result<EmotionLabel> {
    if seq.is_empty() {
        return Err(Error::Precondition("majority vote over an empty sequence".into()));
    }
    let mut counts = [0usize; 7];
    for l in seq {
        counts[usize::from(l.code())] += 1;
    }
    let mut best = 0;
    for (code, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = code;
        }
    }
    Ok(EmotionLabel::from_code(best as u8).expect("code < 7"))
}

/// One-vs-rest counts and rates for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: EmotionLabel,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Mean of the per-class one-vs-rest accuracies.
    pub accuracy: f64,
    /// Fraction of exactly matching predictions.
    pub multiclass_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged precision, recall and accuracy over the six non-neutral
/// classes. A class whose denominator is zero contributes 0.
pub fn macro_metrics(truth: &[EmotionLabel], pred: &[EmotionLabel]) -> Result<MacroMetrics> {
    if truth.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} truth labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Input("no labels to evaluate".into()));
    }
    if let Some(l) = truth.iter().chain(pred).find(|l| l.is_neutral()) {
        return Err(Error::Input(format!("label `{l}` is outside the evaluated classes")));
    }
    let n = truth.len();
    let per_class: Vec<ClassMetrics> = EmotionLabel::NON_NEUTRAL
        .iter()
        .map(|&label| {
            let mut m = ClassMetrics {
                label,
                tp: 0,
                fp: 0,
                tn: 0,
                fn_: 0,
                precision: 0.0,
                recall: 0.0,
                accuracy: 0.0,
            };
            for (t, p) in truth.iter().zip(pred) {
                match (*t == label, *p == label) {
                    (true, true) => m.tp += 1,
                    (false, true) => m.fp += 1,
                    (true, false) => m.fn_ += 1,
                    (false, false) => m.tn += 1,
                }
            }
            m.precision = ratio(m.tp, m.tp + m.fp);
            m.recall = ratio(m.tp, m.tp + m.fn_);
            m.accuracy = ratio(m.tp + m.tn, n);
            m
        })
        .collect();
    let c = per_class.len() as f64;
    Ok(MacroMetrics {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / c,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / c,
        accuracy: per_class.iter().map(|m| m.accuracy).sum::<f64>() / c,
        multiclass_accuracy: ratio(truth.iter().zip(pred).filter(|(t, p)| t == p).count(), n),
        per_class,
    })
}

impl MacroMetrics {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "macro_precision = {:.6}", self.precision);
        let _ = writeln!(out, "macro_recall = {:.6}", self.recall);
        let _ = writeln!(out, "macro_accuracy = {:.6}", self.accuracy);
        let _ = writeln!(out, "multiclass_accuracy = {:.6}", self.multiclass_accuracy);
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "class {} tp={} fp={} tn={} fn={} precision={:.6} recall={:.6} accuracy={:.6}",
                m.label, m.tp, m.fp, m.tn, m.fn_, m.precision, m.recall, m.accuracy
            );
        }
        out
    }
}

/// Rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<EmotionLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(with_neutral: bool) -> Self {
        let labels: Vec<EmotionLabel> = if with_neutral {
            EmotionLabel::ALL.to_vec()
        } else {
            EmotionLabel::NON_NEUTRAL.to_vec()
        };
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    fn index(&self, l: EmotionLabel) -> Result<usize> {
        self.labels
            .iter()
            .position(|x| *x == l)
            .ok_or_else(|| Error::Input(format!("label `{l}` is not a row of this matrix")))
    }

    pub fn add(&mut self, truth: EmotionLabel, pred: EmotionLabel) -> Result<()> {
        let (i, j) = (self.index(truth)?, self.index(pred)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn from_pairs(truth: &[EmotionLabel], pred: &[EmotionLabel], with_neutral: bool) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Input(format!(
                "{} truth labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut m = Self::new(with_neutral);
        for (t, p) in truth.iter().zip(pred) {
            m.add(*t, *p)?;
        }
        Ok(m)
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l.name());
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// One participant of the pilot study. Times are minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRow {
    pub participant: String,
    #[serde(rename = "T_always_on")]
    pub t_always_on: f64,
    #[serde(rename = "T_Neye")]
    pub t_neye: f64,
    #[serde(rename = "T_capture")]
    pub t_capture: f64,
    #[serde(rename = "distinct_EM")]
    pub distinct_em: u32,
    #[serde(rename = "true_EM")]
    pub true_em: u32,
    #[serde(rename = "false_EM")]
    pub false_em: u32,
    #[serde(rename = "missed_EM")]
    pub missed_em: u32,
}

pub fn parse_pilot_csv(text: &str, origin: &Path) -> Result<Vec<PilotRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.deserialize::<PilotRow>() {
        let row = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(origin, line, e.to_string())
        })?;
        if [row.t_always_on, row.t_neye, row.t_capture].iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Input(format!("{}: times must be non-negative", row.participant)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: no pilot rows", origin.display())));
    }
    Ok(rows)
}

pub fn load_pilot_csv(path: impl AsRef<Path>) -> Result<Vec<PilotRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pilot_csv(&text, path)
}

/// Precision and recall of one participant; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn pilot_derive(row: &PilotRow) -> PilotMetrics {
    let rate = |num: u32, den: u32| (den > 0).then(|| f64::from(num) / f64::from(den));
    PilotMetrics {
        precision: rate(row.true_em, row.true_em + row.false_em),
        recall: rate(row.true_em, row.true_em + row.missed_em),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotSummary {
    pub per_row: Vec<(String, PilotMetrics)>,
    /// Pooled over all moments: total true over total reported.
    pub precision: f64,
    /// Pooled over all moments: total true over total actual.
    pub recall: f64,
    /// Plain mean of the defined per-participant values.
    pub unweighted_precision: f64,
    pub unweighted_recall: f64,
    pub t_always_on: f64,
    pub t_neye: f64,
    pub t_capture: f64,
    pub reduction_neye: f64,
    pub reduction_capture: f64,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn pilot_summary(rows: &[PilotRow]) -> Result<PilotSummary> {
    if rows.is_empty() {
        return Err(Error::Precondition("pilot summary needs at least one row".into()));
    }
    let per_row: Vec<(String, PilotMetrics)> = rows.iter().map(|r| (r.participant.clone(), pilot_derive(r))).collect();
    let tp: u32 = rows.iter().map(|r| r.true_em).sum();
    let fp: u32 = rows.iter().map(|r| r.false_em).sum();
    let fn_: u32 = rows.iter().map(|r| r.missed_em).sum();
    let t_always_on: f64 = rows.iter().map(|r| r.t_always_on).sum();
    let t_neye: f64 = rows.iter().map(|r| r.t_neye).sum();
    let t_capture: f64 = rows.iter().map(|r| r.t_capture).sum();
    let reduction = |t: f64| if t_always_on > 0.0 { (t_always_on - t) / t_always_on } else { 0.0 };
    Ok(PilotSummary {
        precision: ratio(tp as usize, (tp + fp) as usize),
        recall: ratio(tp as usize, (tp + fn_) as usize),
        unweighted_precision: mean_defined(per_row.iter().map(|(_, m)| m.precision)),
        unweighted_recall: mean_defined(per_row.iter().map(|(_, m)| m.recall)),
        reduction_neye: reduction(t_neye),
        reduction_capture: reduction(t_capture),
        per_row,
        t_always_on,
        t_neye,
        t_capture,
    })
}

/// Rounds a fraction to a percentage with one decimal, halves away from zero.
pub fn percent1(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.1}", percent1(x)))
}

impl PilotSummary {
    /// CSV block of per-participant rates followed by `key = value` totals.
    pub fn to_text(&self) -> String {
        let mut out = String::from("participant,precision_pct,recall_pct\n");
        for (p, m) in &self.per_row {
            let _ = writeln!(out, "{p},{},{}", fmt_pct(m.precision), fmt_pct(m.recall));
        }
        out.push('\n');
        let _ = writeln!(out, "mean_precision_pct = {:.1}", percent1(self.precision));
        let _ = writeln!(out, "mean_recall_pct = {:.1}", percent1(self.recall));
        let _ = writeln!(out, "unweighted_precision_pct = {:.1}", percent1(self.unweighted_precision));
        let _ = writeln!(out, "unweighted_recall_pct = {:.1}", percent1(self.unweighted_recall));
        let _ = writeln!(out, "total_always_on_min = {:.1}", self.t_always_on);
        let _ = writeln!(out, "total_neye_min = {:.1}", self.t_neye);
        let _ = writeln!(out, "total_capture_min = {:.1}", self.t_capture);
        let _ = writeln!(out, "neye_reduction_pct = {:.1}", percent1(self.reduction_neye));
        let _ = writeln!(out, "capture_reduction_pct = {:.1}", percent1(self.reduction_capture));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileType {
    /// Positive moments outnumber negative ones.
    TypeI,
    TypeII,
}

impl std::fmt::Display for ProfileType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TypeI => "TypeI",
            Self::TypeII => "TypeII",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub kind: ProfileType,
    pub positive_ratio: f64,
    pub negative_ratio: f64,
}

/// Emotion profile from per-label moment counts; neutral counts are ignored.
pub fn profile_type(counts: &[(EmotionLabel, u64)]) -> Result<Profile> {
    let total: u64 = counts.iter().filter(|(l, _)| !l.is_neutral()).map(|(_, c)| c).sum();
    if total == 0 {
        return Err(Error::Precondition("no non-neutral moments to type".into()));
    }
    let positive: u64 = counts.iter().filter(|(l, _)| l.is_positive()).map(|(_, c)| c).sum();
    let pr = positive as f64 / total as f64;
    let nr = 1.0 - pr;
    Ok(Profile {
        kind: if pr > nr { ProfileType::TypeI } else { ProfileType::TypeII },
        positive_ratio: pr,
        negative_ratio: nr,
    })
}

/// Per-emotion influential-score statistics over a set of records.
#[derive(Debug, Clone, PartialEq)]
pub struct IsSummaryRow {
    pub label: EmotionLabel,
    pub records: usize,
    pub mean_is: Option<f64>,
    /// `mean_is` divided by the largest per-emotion mean.
    pub normalized: Option<f64>,
}

pub fn is_summary(records: &[EmotionshipRecord]) -> Vec<IsSummaryRow> {
    let mut rows: Vec<IsSummaryRow> = EmotionLabel::NON_NEUTRAL
        .iter()
        .map(|&label| {
            let scores: Vec<f64> = records
                .iter()
                .filter(|r| r.emotion == label)
                .map(|r| r.influential_score)
                .collect();
            IsSummaryRow {
                label,
                records: scores.len(),
                mean_is: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                normalized: None,
            }
        })
        .collect();
    let max = rows.iter().filter_map(|r| r.mean_is).fold(0.0, f64::max);
    for r in &mut rows {
        r.normalized = r.mean_is.filter(|_| max > 0.0).map(|m| m / max);
    }
    rows
}

/// `emotion,records,mean_is,normalized_is`, blanks for absent emotions.
pub fn is_summary_csv(rows: &[IsSummaryRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("emotion,records,mean_is,normalized_is\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.label, r.records, cell(r.mean_is), cell(r.normalized));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EmotionLabel::*;

    #[test]
    fn vote_examples() {
        assert_eq!(majority_vote(&[Fear, Fear, Fear]).unwrap(), Fear);
        assert_eq!(majority_vote(&[Happiness, Happiness, Sadness]).unwrap(), Happiness);
        assert_eq!(majority_vote(&[Surprise, Anger]).unwrap(), Surprise);
        assert_eq!(majority_vote(&[Anger, Surprise]).unwrap(), Surprise);
        assert!(matches!(majority_vote(&[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn hand_counted_macro_case() {
        let m = macro_metrics(&[Happiness, Happiness, Sadness, Sadness], &[Happiness, Sadness, Sadness, Sadness]).unwrap();
        // happiness: tp1 fp0 fn1 tn2; sadness: tp2 fp1 fn0 tn1; others: tn4
        assert!((m.precision - (1.0 + 2.0 / 3.0) / 6.0).abs() < 1e-15);
        assert!((m.recall - (0.5 + 1.0) / 6.0).abs() < 1e-15);
        assert!((m.accuracy - (0.75 + 0.75 + 4.0) / 6.0).abs() < 1e-15);
        assert_eq!(m.multiclass_accuracy, 0.75);
    }

    #[test]
    fn perfect_prediction() {
        let all = EmotionLabel::NON_NEUTRAL.to_vec();
        let m = macro_metrics(&all, &all).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy), (1.0, 1.0, 1.0));
        let one = macro_metrics(&[Fear], &[Fear]).unwrap();
        assert_eq!(one.multiclass_accuracy, 1.0);
        assert_eq!(one.accuracy, 1.0);
    }

    #[test]
    fn macro_input_errors() {
        assert!(matches!(macro_metrics(&[Fear], &[]), Err(Error::Input(_))));
        assert!(matches!(macro_metrics(&[], &[]), Err(Error::Input(_))));
        assert!(matches!(macro_metrics(&[Neutrality], &[Fear]), Err(Error::Input(_))));
    }

    #[test]
    fn confusion_csv() {
        let m = ConfusionMatrix::from_pairs(&[Happiness, Sadness], &[Happiness, Fear], false).unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("truth,happiness,surprise,anger,fear,disgust,sadness\n"));
        assert!(csv.contains("\nsadness,0,0,0,1,0,0\n"));
        assert!(ConfusionMatrix::new(false).add(Neutrality, Fear).is_err());
    }

    fn row(p: &str, tp: u32, fp: u32, fn_: u32) -> PilotRow {
        PilotRow {
            participant: p.into(),
            t_always_on: 10.0,
            t_neye: 10.0,
            t_capture: 1.0,
            distinct_em: 1,
            true_em: tp,
            false_em: fp,
            missed_em: fn_,
        }
    }

    #[test]
    fn pilot_rows() {
        let p1 = pilot_derive(&row("P1", 17, 3, 2));
        assert_eq!(percent1(p1.precision.unwrap()), 85.0);
        assert_eq!(percent1(p1.recall.unwrap()), 89.5);
        let p7 = pilot_derive(&row("P7", 8, 1, 0));
        assert_eq!((percent1(p7.precision.unwrap()), percent1(p7.recall.unwrap())), (88.9, 100.0));
        let p12 = pilot_derive(&row("P12", 3, 0, 2));
        assert_eq!((percent1(p12.precision.unwrap()), percent1(p12.recall.unwrap())), (100.0, 60.0));
        let empty = pilot_derive(&row("P0", 0, 0, 0));
        assert_eq!((empty.precision, empty.recall), (None, None));
        assert_eq!(percent1(13.0 / 16.0), 81.3);
    }

    #[test]
    fn single_row_summary() {
        let s = pilot_summary(&[row("P1", 17, 3, 2)]).unwrap();
        assert_eq!(s.reduction_neye, 0.0);
        assert_eq!(s.precision, s.unweighted_precision);
        assert!(pilot_summary(&[]).is_err());
    }

    #[test]
    fn pilot_csv_errors() {
        let err = parse_pilot_csv(
            "participant,T_always_on,T_Neye,T_capture,distinct_EM,true_EM,false_EM,missed_EM\nP1,1,x,1,1,1,1,1\n",
            Path::new("p.csv"),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("p.csv:2:"), "{err}");
        assert!(parse_pilot_csv("", Path::new("e.csv")).is_err());
    }

    #[test]
    fn profiles() {
        let p = profile_type(&[(Happiness, 3), (Sadness, 1)]).unwrap();
        assert_eq!((p.kind, p.positive_ratio), (ProfileType::TypeI, 0.75));
        assert_eq!(profile_type(&[(Fear, 2), (Surprise, 2)]).unwrap().kind, ProfileType::TypeII);
        assert!(profile_type(&[(Neutrality, 5)]).is_err());
    }

    fn scored(label: EmotionLabel, is: f64) -> EmotionshipRecord {
        EmotionshipRecord {
            t_start: 0,
            t_end: 1,
            emotion: label,
            region: crate::domain::Region {
                id: 0,
                rect: crate::domain::Rect::from([0.5, 0.5, 0.1, 0.1]),
                tag: "cup".into(),
                feature: vec![0.0],
            },
            summary_tag: "a scene of cup".into(),
            influential_score: is,
            is_series: vec![is],
        }
    }

    #[test]
    fn is_summary_normalizes_by_largest_mean() {
        let rows = is_summary(&[scored(Fear, 0.2), scored(Fear, 0.4), scored(Sadness, 0.6)]);
        let fear = rows.iter().find(|r| r.label == Fear).unwrap();
        assert_eq!(fear.records, 2);
        assert!((fear.mean_is.unwrap() - 0.3).abs() < 1e-12);
        assert!((fear.normalized.unwrap() - 0.5).abs() < 1e-12);
        let sad = rows.iter().find(|r| r.label == Sadness).unwrap();
        assert_eq!(sad.normalized, Some(1.0));
        let csv = is_summary_csv(&rows);
        assert!(csv.starts_with("emotion,records,mean_is,normalized_is\nhappiness,0,,\n"), "{csv}");
        assert!(csv.contains("sadness,1,0.600000,1.000000\n"));
        assert!(is_summary(&[]).iter().all(|r| r.mean_is.is_none()));
    }

    fn label() -> impl Strategy<Value = EmotionLabel> {
        (0usize..6).prop_map(|i| EmotionLabel::from_class_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn confusion_rows_match_histogram(pairs in prop::collection::vec((label(), label()), 0..40)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let m = ConfusionMatrix::from_pairs(&t, &p, false).unwrap();
            for (l, s) in m.labels.iter().zip(m.row_sums()) {
                prop_assert_eq!(s as usize, t.iter().filter(|x| *x == l).count());
            }
        }
    }
}
