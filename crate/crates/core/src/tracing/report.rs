use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }
}

/// Wilson score interval for `successes` out of `n` at the given normal
/// quantile (1.96 for 95%).
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Interval {
    if n == 0 {
        return Interval {
            low: 0.0,
            high: 1.0,
        };
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Interval {
        low: (centre - half).max(0.0),
        high: (centre + half).min(1.0),
    }
}

pub(crate) fn wilson95(successes: u64, n: u64) -> Interval {
    wilson_interval(successes, n, 1.959_963_984_540_054)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub transform: String,
    pub target_fpr: f64,
    pub tau: usize,
    pub fpr_theoretical: f64,
    pub tpr: f64,
    pub tpr_ci: Interval,
    pub bit_accuracy: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationSummary {
    pub channel: String,
    pub k: usize,
    pub n_users: usize,
    pub n_decoys: usize,
    pub target_fpr: f64,
    pub tau: usize,
    pub trials: u64,
    pub accuracy: f64,
    pub accuracy_ci: Interval,
    pub miss_rate: f64,
    pub false_accusations: u64,
    pub false_accusation_rate: f64,
    pub bit_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollusionSummary {
    pub k: usize,
    pub p: f64,
    pub n_bits_total: u64,
    pub messages: u64,
    pub messages_per_trial: usize,
    pub trials: u64,
    pub agree_positions: usize,
    pub disagree_positions: usize,
    /// Frequency with which agreement positions decode to the shared bit.
    pub agree_match_frequency: f64,
    /// Frequency of ones at disagreement positions.
    pub disagree_one_frequency: f64,
    pub disagree_one_ci: Interval,
    pub mean_score_i: f64,
    pub mean_score_j: f64,
    pub mean_score_innocent: f64,
    pub expected_score_colluder: f64,
    pub expected_score_innocent: f64,
    /// Share of trials in which both colluders strictly outscore the innocent key.
    pub colluders_outscore_rate: f64,
    pub colluders_outscore_ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprRow {
    pub tau: usize,
    pub fpr_theoretical: f64,
    pub empirical: f64,
    pub ratio: f64,
    pub ci: Interval,
    pub flagged: u64,
    pub trials: u64,
    pub expected_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub transform: String,
    pub bit_accuracy: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub codec: String,
    pub n_keys: usize,
    pub n_images: usize,
    pub embed_psnr: f64,
    pub embed_ssim: f64,
    pub rows: Vec<RobustnessRow>,
}

/// Outcome of one experiment. Every field except `wall_clock_s` is a pure
/// function of the inputs and seeds recorded in `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detection: Vec<DetectionRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub identification: Vec<IdentificationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_identification_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collusion: Option<CollusionSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fpr_validation: Vec<FprRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessSummary>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    pub(crate) fn new(task: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            task: task.to_string(),
            seed,
            config,
            detection: Vec::new(),
            identification: Vec::new(),
            overall_identification_accuracy: None,
            collusion: None,
            fpr_validation: Vec::new(),
            robustness: None,
            wall_clock_s: 0.0,
        }
    }

    /// Every probability-valued field must lie in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let mut probs: Vec<(&str, f64)> = Vec::new();
        for r in &self.detection {
            probs.extend([
                ("tpr", r.tpr),
                ("fpr_theoretical", r.fpr_theoretical),
                ("bit_accuracy", r.bit_accuracy),
                ("target_fpr", r.target_fpr),
            ]);
        }
        for r in &self.identification {
            probs.extend([
                ("accuracy", r.accuracy),
                ("miss_rate", r.miss_rate),
                ("false_accusation_rate", r.false_accusation_rate),
                ("bit_accuracy", r.bit_accuracy),
            ]);
        }
        if let Some(a) = self.overall_identification_accuracy {
            probs.push(("overall_identification_accuracy", a));
        }
        if let Some(c) = &self.collusion {
            probs.extend([
                ("agree_match_frequency", c.agree_match_frequency),
                ("disagree_one_frequency", c.disagree_one_frequency),
                ("colluders_outscore_rate", c.colluders_outscore_rate),
            ]);
        }
        for r in &self.fpr_validation {
            probs.extend([
                ("empirical", r.empirical),
                ("fpr_theoretical", r.fpr_theoretical),
            ]);
        }
        if let Some(r) = &self.robustness {
            probs.extend(r.rows.iter().map(|row| ("bit_accuracy", row.bit_accuracy)));
        }
        match probs.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            Some((name, p)) => Err(invalid(format!("{name} = {p} is not a probability"))),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Detection curve points as CSV with columns
    /// `tau,fpr_theoretical,tpr,transform`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,fpr_theoretical,tpr,transform\n");
        for r in &self.detection {
            let _ = writeln!(
                out,
                "{},{:e},{},{}",
                r.tau,
                r.fpr_theoretical,
                r.tpr,
                csv_field(&r.transform)
            );
        }
        out
    }

    /// Human-readable aligned tables, one block per populated section.
    pub fn to_table(&self) -> String {
        let mut out = format!("{} (seed {})\n", self.task, self.seed);
        if !self.detection.is_empty() {
            out.push('\n');
            out.push_str(&render(
                &[
                    "transform",
                    "target fpr",
                    "tau",
                    "fpr (theory)",
                    "tpr",
                    "tpr 95% ci",
                    "bit acc",
                    "n",
                ],
                self.detection
                    .iter()
                    .map(|r| {
                        vec![
                            r.transform.clone(),
                            format!("{:.1e}", r.target_fpr),
                            r.tau.to_string(),
                            format!("{:.3e}", r.fpr_theoretical),
                            format!("{:.4}", r.tpr),
                            ci(&r.tpr_ci),
                            format!("{:.4}", r.bit_accuracy),
                            r.samples.to_string(),
                        ]
                    })
                    .collect(),
            ));
        }
        if !self.identification.is_empty() {
            out.push('\n');
            out.push_str(&render(
                &[
                    "channel",
                    "users",
                    "decoys",
                    "tau",
                    "trials",
                    "accuracy",
                    "95% ci",
                    "miss",
                    "false acc.",
                    "bit acc",
                ],
                self.identification
                    .iter()
                    .map(|r| {
                        vec![
                            r.channel.clone(),
                            r.n_users.to_string(),
                            r.n_decoys.to_string(),
                            r.tau.to_string(),
                            r.trials.to_string(),
                            format!("{:.4}", r.accuracy),
                            ci(&r.accuracy_ci),
                            format!("{:.4}", r.miss_rate),
                            r.false_accusations.to_string(),
                            format!("{:.4}", r.bit_accuracy),
                        ]
                    })
                    .collect(),
            ));
            if let Some(a) = self.overall_identification_accuracy {
                let _ = writeln!(out, "overall accuracy {a:.4}");
            }
        }
        if let Some(c) = &self.collusion {
            out.push('\n');
            out.push_str(&render(
                &["quantity", "value"],
                vec![
                    vec!["bits simulated".into(), c.n_bits_total.to_string()],
                    vec![
                        "agree / disagree positions".into(),
                        format!("{} / {}", c.agree_positions, c.disagree_positions),
                    ],
                    vec![
                        "agree match freq".into(),
                        format!("{:.4}", c.agree_match_frequency),
                    ],
                    vec![
                        "disagree freq of 1".into(),
                        format!("{:.4} {}", c.disagree_one_frequency, ci(&c.disagree_one_ci)),
                    ],
                    vec![
                        "score i / j / innocent".into(),
                        format!(
                            "{:.2} / {:.2} / {:.2}",
                            c.mean_score_i, c.mean_score_j, c.mean_score_innocent
                        ),
                    ],
                    vec![
                        "expected colluder / innocent".into(),
                        format!(
                            "{:.2} / {:.2}",
                            c.expected_score_colluder, c.expected_score_innocent
                        ),
                    ],
                    vec![
                        format!("colluders outscore ({} trials)", c.trials),
                        format!(
                            "{:.4} {}",
                            c.colluders_outscore_rate,
                            ci(&c.colluders_outscore_ci)
                        ),
                    ],
                ],
            ));
        }
        if !self.fpr_validation.is_empty() {
            out.push('\n');
            out.push_str(&render(
                &[
                    "tau",
                    "fpr (theory)",
                    "empirical",
                    "ratio",
                    "95% ci",
                    "flagged",
                    "trials",
                ],
                self.fpr_validation
                    .iter()
                    .map(|r| {
                        vec![
                            r.tau.to_string(),
                            format!("{:.6e}", r.fpr_theoretical),
                            format!("{:.6e}", r.empirical),
                            format!("{:.4}", r.ratio),
                            ci(&r.ci),
                            r.flagged.to_string(),
                            r.trials.to_string(),
                        ]
                    })
                    .collect(),
            ));
        }
        if let Some(r) = &self.robustness {
            out.push('\n');
            let mut header = vec!["codec".to_string(), "psnr".to_string(), "ssim".to_string()];
            header.extend(r.rows.iter().map(|row| row.transform.clone()));
            let mut row = vec![
                r.codec.clone(),
                format!("{:.2}", r.embed_psnr),
                format!("{:.3}", r.embed_ssim),
            ];
            row.extend(r.rows.iter().map(|row| format!("{:.3}", row.bit_accuracy)));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.push_str(&render(&header, vec![row]));
        }
        out
    }
}

fn ci(i: &Interval) -> String {
    format!("[{:.4}, {:.4}]", i.low, i.high)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Left-aligned first column, right-aligned numeric columns.
fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // 20 of 100 at 95%: (0.1333, 0.2888).
        let i = wilson95(20, 100);
        assert!((i.low - 0.133_367).abs() < 1e-5, "{i:?}");
        assert!((i.high - 0.288_829).abs() < 1e-5, "{i:?}");
        let all = wilson95(50, 50);
        assert_eq!(all.high, 1.0);
        assert!(all.low > 0.9 && all.low < 1.0);
        assert_eq!(wilson95(0, 10).low, 0.0);
    }

    #[test]
    fn validate_rejects_bad_probabilities() {
        let mut r = ExperimentReport::new("t", 1, serde_json::Value::Null);
        assert!(r.validate().is_ok());
        r.fpr_validation.push(FprRow {
            tau: 1,
            fpr_theoretical: 0.5,
            empirical: 1.5,
            ratio: 3.0,
            ci: Interval {
                low: 0.0,
                high: 1.0,
            },
            flagged: 3,
            trials: 2,
            expected_count: 1.0,
        });
        assert!(r.validate().is_err());
    }

    #[test]
    fn csv_and_table_layout() {
        let mut r = ExperimentReport::new("detection", 3, serde_json::Value::Null);
        r.detection.push(DetectionRow {
            transform: "jpeg:80".into(),
            target_fpr: 1e-6,
            tau: 41,
            fpr_theoretical: 3.12e-7,
            tpr: 0.99,
            tpr_ci: Interval {
                low: 0.98,
                high: 1.0,
            },
            bit_accuracy: 0.995,
            samples: 100,
        });
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("tau,fpr_theoretical,tpr,transform"));
        assert_eq!(lines.next(), Some("41,3.12e-7,0.99,jpeg:80"));
        let table = r.to_table();
        let rows: Vec<&str> = table.lines().skip(2).collect();
        assert_eq!(rows[0].len(), rows[1].len());
        assert!(rows[2].starts_with("jpeg:80"));
        let back: ExperimentReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
