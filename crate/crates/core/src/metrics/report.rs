use serde::{Deserialize, Serialize};

use super::{CaptionScores, CrossViewScores, TrackingScores};

/// Scores for one sequence (or one view group for cross-view runs).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceScores {
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossview: Option<CrossViewScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<CaptionScores>,
    /// No prediction file was found; scored as all misses.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing_prediction: bool,
}

/// Per-sequence scores plus their macro average. Stores fractions; the CSV
/// export and [`MetricReport::summary_lines`] print percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub sequences: Vec<SequenceScores>,
    pub aggregate: SequenceScores,
}

fn mean<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(f).sum::<f64>() / items.len() as f64
}

impl MetricReport {
    /// Builds the report; sequences are sorted by id for stable output.
    pub fn new(task: impl Into<String>, mut sequences: Vec<SequenceScores>) -> Self {
        sequences.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
        let tracking: Vec<TrackingScores> = sequences.iter().filter_map(|s| s.tracking).collect();
        let crossview: Vec<CrossViewScores> = sequences.iter().filter_map(|s| s.crossview).collect();
        let caption: Vec<CaptionScores> = sequences.iter().filter_map(|s| s.caption).collect();
        let aggregate = SequenceScores {
            sequence_id: "aggregate".into(),
            tracking: (!tracking.is_empty()).then(|| TrackingScores {
                hota: mean(&tracking, |t| t.hota),
                det_a: mean(&tracking, |t| t.det_a),
                ass_a: mean(&tracking, |t| t.ass_a),
                mota: mean(&tracking, |t| t.mota),
                idf1: mean(&tracking, |t| t.idf1),
                idsw: tracking.iter().map(|t| t.idsw).sum(),
                fp: tracking.iter().map(|t| t.fp).sum(),
                fn_: tracking.iter().map(|t| t.fn_).sum(),
            }),
            crossview: (!crossview.is_empty()).then(|| CrossViewScores {
                cvr_idf1: mean(&crossview, |c| c.cvr_idf1),
                cvrma: mean(&crossview, |c| c.cvrma),
            }),
            caption: (!caption.is_empty()).then(|| CaptionScores {
                bleu4: mean(&caption, |c| c.bleu4),
                rouge_l: mean(&caption, |c| c.rouge_l),
                meteor: mean(&caption, |c| c.meteor),
                cider_d: mean(&caption, |c| c.cider_d),
            }),
            missing_prediction: sequences.iter().any(|s| s.missing_prediction),
        };
        Self { task: task.into(), sequences, aggregate }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per sequence plus the aggregate row. Fractions as percentages
    /// with two decimals; CIDEr-D is left on its native scale.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sequence,hota,det_a,ass_a,mota,idf1,idsw,fp,fn,cvr_idf1,cvrma,bleu4,rouge_l,meteor,cider_d\n",
        );
        for s in self.sequences.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&csv_row(s));
            out.push('\n');
        }
        out
    }

    /// Human-readable lines, one per sequence and one for the aggregate.
    pub fn summary_lines(&self) -> Vec<String> {
        self.sequences
            .iter()
            .chain(std::iter::once(&self.aggregate))
            .map(|s| {
                let mut parts = vec![s.sequence_id.clone()];
                if let Some(t) = &s.tracking {
                    parts.push(format!(
                        "HOTA {:.1} DetA {:.1} AssA {:.1} MOTA {:.1} IDF1 {:.1} IDSW {}",
                        pct(t.hota),
                        pct(t.det_a),
                        pct(t.ass_a),
                        pct(t.mota),
                        pct(t.idf1),
                        t.idsw
                    ));
                }
                if let Some(c) = &s.crossview {
                    parts.push(format!("CVRIDF1 {:.1} CVRMA {:.1}", pct(c.cvr_idf1), pct(c.cvrma)));
                }
                if let Some(c) = &s.caption {
                    parts.push(format!(
                        "BLEU4 {:.1} ROUGE-L {:.1} METEOR {:.1} CIDEr-D {:.3}",
                        pct(c.bleu4),
                        pct(c.rouge_l),
                        pct(c.meteor),
                        c.cider_d
                    ));
                }
                if s.missing_prediction {
                    parts.push("(missing prediction)".into());
                }
                parts.join("  ")
            })
            .collect()
    }
}

fn pct(v: f64) -> f64 {
    v * 100.0
}

fn csv_row(s: &SequenceScores) -> String {
    let f = |v: Option<f64>| v.map(|v| format!("{:.2}", pct(v))).unwrap_or_default();
    let n = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    let t = s.tracking.as_ref();
    let x = s.crossview.as_ref();
    let c = s.caption.as_ref();
    [
        s.sequence_id.clone(),
        f(t.map(|t| t.hota)),
        f(t.map(|t| t.det_a)),
        f(t.map(|t| t.ass_a)),
        f(t.map(|t| t.mota)),
        f(t.map(|t| t.idf1)),
        n(t.map(|t| t.idsw)),
        n(t.map(|t| t.fp)),
        n(t.map(|t| t.fn_)),
        f(x.map(|x| x.cvr_idf1)),
        f(x.map(|x| x.cvrma)),
        f(c.map(|c| c.bleu4)),
        f(c.map(|c| c.rouge_l)),
        f(c.map(|c| c.meteor)),
        c.map(|c| format!("{:.4}", c.cider_d)).unwrap_or_default(),
    ]
    .join(",")
}
