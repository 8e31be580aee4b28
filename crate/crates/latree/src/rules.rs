//! Score-based classification rules: one log-odds-ratio score per symptom
//! plus a threshold, derived from a class summary. Exact for a true LCM
//! with a binary class variable; an approximation otherwise. Includes the
//! simplification sweep and integerized variants.

use std::collections::BTreeSet;

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::inference::{self, Evidence};
use crate::joint::ClassSummary;
use crate::model::{LatentTreeModel, VarKind};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Target,
    Complement,
}

#[derive(Debug, Clone)]
pub struct RuleEntry {
    pub symptom: String,
    /// Base-2 log odds ratio for the presence of the symptom.
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RuleProvenance {
    pub model_id: String,
    pub z: String,
    pub target_states: Vec<usize>,
    pub target_label: String,
}

#[derive(Debug, Clone)]
pub struct ClassificationRule {
    /// Ordered by descending expected contribution (see `ordering`).
    pub entries: Vec<RuleEntry>,
    pub threshold: f64,
    pub smoothing: f64,
    /// Description of the display/sweep ordering key.
    pub ordering: String,
    pub provenance: Option<RuleProvenance>,
    /// Present on integerized rules.
    pub scale: Option<f64>,
}

const ORDERING_KEY: &str = "expected-contribution";

fn log2(x: f64) -> f64 {
    x.log2()
}

/// MI in nats between the merged class indicator and a symptom's presence,
/// computed from the summary itself; used only to break ordering ties.
fn summary_mi(prior_s: f64, p_s: f64, p_not_s: f64) -> f64 {
    let p1 = prior_s * p_s + (1.0 - prior_s) * p_not_s;
    let cells = [
        (prior_s * p_s, prior_s, p1),
        (prior_s * (1.0 - p_s), prior_s, 1.0 - p1),
        ((1.0 - prior_s) * p_not_s, 1.0 - prior_s, p1),
        ((1.0 - prior_s) * (1.0 - p_not_s), 1.0 - prior_s, 1.0 - p1),
    ];
    let mut mi = 0.0;
    for (p, pa, pb) in cells {
        if p > 0.0 && pa > 0.0 && pb > 0.0 {
            mi += p * (p / (pa * pb)).ln();
        }
    }
    mi.max(0.0)
}

/// Derive the score-based rule from a class summary. Scores are base-2 log
/// odds ratios; the score for an absent symptom is identically zero, so
/// only presence scores are stored. Entries are ordered by descending
/// score times marginal occurrence probability (ties by MI, then name).
pub fn derive_rule(summary: &ClassSummary) -> Result<ClassificationRule> {
    if !(summary.prior_s > 0.0 && summary.prior_s < 1.0) {
        return Err(Error::DegeneratePrior(summary.prior_s));
    }
    let mut keyed = Vec::with_capacity(summary.rows.len());
    let mut threshold = log2(summary.prior_not_s / summary.prior_s);
    for row in &summary.rows {
        let score = log2((row.p_s / (1.0 - row.p_s)) / (row.p_not_s / (1.0 - row.p_not_s)));
        let absent = log2((1.0 - row.p_s) / (1.0 - row.p_not_s));
        if !score.is_finite() || !absent.is_finite() {
            return Err(Error::InfiniteScore(row.symptom.clone()));
        }
        threshold -= absent;
        let occurrence = summary.prior_s * row.p_s + summary.prior_not_s * row.p_not_s;
        let mi = summary_mi(summary.prior_s, row.p_s, row.p_not_s);
        keyed.push((score * occurrence, mi, row.symptom.clone(), score));
    }
    keyed.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| b.1.partial_cmp(&a.1).unwrap())
            .then_with(|| a.2.cmp(&b.2))
    });
    Ok(ClassificationRule {
        entries: keyed
            .into_iter()
            .map(|(_, _, symptom, score)| RuleEntry { symptom, score })
            .collect(),
        threshold,
        smoothing: summary.smoothing,
        ordering: ORDERING_KEY.to_string(),
        provenance: Some(RuleProvenance {
            model_id: summary.model_id.clone(),
            z: summary.z.clone(),
            target_states: summary.target_states.clone(),
            target_label: summary.target_label.clone(),
        }),
        scale: None,
    })
}

/// Total score and decision for a record. A symptom scores when its value
/// is 1; missing values count as absent. Ties go to the complement.
pub fn apply_rule(rule: &ClassificationRule, record: &Evidence) -> (f64, Decision) {
    let total: f64 = rule
        .entries
        .iter()
        .filter(|e| record.get(&e.symptom) == Some(1))
        .map(|e| e.score)
        .sum();
    let decision = if total > rule.threshold {
        Decision::Target
    } else {
        Decision::Complement
    };
    (total, decision)
}

fn check_target_states(
    model: &LatentTreeModel,
    z: &str,
    target_states: &[usize],
) -> Result<(usize, BTreeSet<usize>)> {
    let zi = model.index_of(z)?;
    if model.var(zi).kind != VarKind::Latent {
        return Err(Error::NotLatent(z.to_string()));
    }
    let card = model.card(zi);
    let targets: BTreeSet<usize> = target_states.iter().copied().collect();
    if targets.is_empty() || targets.len() >= card {
        return Err(Error::InvalidTargetStates(format!(
            "need a nonempty proper subset of the {card} states of `{z}`"
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&s| s >= card) {
        return Err(Error::InvalidTargetStates(format!(
            "state {bad} out of range for `{z}` (cardinality {card})"
        )));
    }
    Ok((zi, targets))
}

/// Model-based (posterior-odds) classification: target iff the posterior
/// mass of the target states strictly exceeds the complement's.
pub fn model_classify(
    model: &LatentTreeModel,
    z: &str,
    target_states: &[usize],
    record: &Evidence,
) -> Result<Decision> {
    let (_, targets) = check_target_states(model, z, target_states)?;
    let post = inference::posterior(model, record, z)?;
    let p_target: f64 = targets.iter().map(|&s| post[s]).sum();
    let p_complement: f64 = post
        .iter()
        .enumerate()
        .filter(|(s, _)| !targets.contains(s))
        .map(|(_, p)| p)
        .sum();
    Ok(if p_target > p_complement {
        Decision::Target
    } else {
        Decision::Complement
    })
}

fn record_evidence(dataset: &DataSet, record: &[Option<u32>]) -> Evidence {
    dataset
        .variables()
        .iter()
        .zip(record)
        .filter_map(|(name, cell)| cell.map(|v| (name.clone(), v as usize)))
        .collect()
}

/// Weighted fraction of records the rule classifies the same way as
/// model-based classification.
pub fn rule_accuracy(
    rule: &ClassificationRule,
    model: &LatentTreeModel,
    z: &str,
    target_states: &[usize],
    dataset: &DataSet,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_target_states(model, z, target_states)?;
    inference::column_mapping(model, dataset)?;
    let records = dataset.records();
    let items: Vec<(usize, f64)> = dataset.weights().iter().copied().enumerate().collect();
    let agreed = parallel::chunked_fold(
        &items,
        |chunk| -> Result<f64> {
            let mut acc = 0.0;
            for &(i, w) in chunk {
                let ev = record_evidence(dataset, &records[i]);
                let by_model = model_classify(model, z, target_states, &ev)?;
                let (_, by_rule) = apply_rule(rule, &ev);
                if by_model == by_rule {
                    acc += w;
                }
            }
            Ok(acc)
        },
        Ok(0.0),
        |a, b| match (a, b) {
            (Ok(a), Ok(b)) => Ok(a + b),
            (Err(e), _) | (_, Err(e)) => Err(e),
        },
    )?;
    Ok(agreed / dataset.total_weight())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Number of leading rule entries kept.
    pub kept: usize,
    /// The symptom removed at this step (None on the keep-everything row).
    pub removed: Option<String>,
    /// Threshold recomputed over the kept prefix only.
    pub threshold: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct SimplificationSweep {
    pub rule: ClassificationRule,
    /// Rows for kept = n, n-1, ..., 1.
    pub rows: Vec<SweepRow>,
    pub baseline_accuracy: f64,
}

/// Remove symptoms from the bottom of the rule one at a time, recomputing
/// the threshold over the kept prefix and the agreement with model-based
/// classification after each cut.
pub fn simplify_sweep(
    summary: &ClassSummary,
    model: &LatentTreeModel,
    z: &str,
    target_states: &[usize],
    dataset: &DataSet,
) -> Result<SimplificationSweep> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_target_states(model, z, target_states)?;
    inference::column_mapping(model, dataset)?;
    let rule = derive_rule(summary)?;
    let n = rule.entries.len();
    // Removing entry i moves the threshold by -log2((1-pS_i)/(1-pNotS_i)).
    let absent_terms: Vec<f64> = rule
        .entries
        .iter()
        .map(|e| {
            let row = summary.row(&e.symptom).expect("rule symptom from summary");
            log2((1.0 - row.p_s) / (1.0 - row.p_not_s))
        })
        .collect();
    let mut thresholds = vec![0.0; n + 1];
    thresholds[n] = rule.threshold;
    for k in (1..=n).rev() {
        thresholds[k - 1] = thresholds[k] + absent_terms[k - 1];
    }
    // Model decisions do not depend on the cut; compute them once.
    let records = dataset.records();
    let items: Vec<(usize, f64)> = dataset.weights().iter().copied().enumerate().collect();
    let per_prefix_agreement = parallel::chunked_fold(
        &items,
        |chunk| -> Result<Vec<f64>> {
            let mut agree = vec![0.0; n + 1];
            for &(i, w) in chunk {
                let ev = record_evidence(dataset, &records[i]);
                let by_model = model_classify(model, z, target_states, &ev)?;
                let mut total = 0.0;
                let mut totals = vec![0.0; n + 1];
                for (j, e) in rule.entries.iter().enumerate() {
                    if ev.get(&e.symptom) == Some(1) {
                        total += e.score;
                    }
                    totals[j + 1] = total;
                }
                for k in 1..=n {
                    let by_rule = if totals[k] > thresholds[k] {
                        Decision::Target
                    } else {
                        Decision::Complement
                    };
                    if by_rule == by_model {
                        agree[k] += w;
                    }
                }
            }
            Ok(agree)
        },
        Ok(vec![0.0; n + 1]),
        |a, b| match (a, b) {
            (Ok(a), Ok(b)) => Ok(a.iter().zip(b).map(|(x, y)| x + y).collect()),
            (Err(e), _) | (_, Err(e)) => Err(e),
        },
    )?;
    let total_weight = dataset.total_weight();
    let mut rows = Vec::with_capacity(n);
    for k in (1..=n).rev() {
        rows.push(SweepRow {
            kept: k,
            removed: if k == n {
                None
            } else {
                Some(rule.entries[k].symptom.clone())
            },
            threshold: thresholds[k],
            accuracy: per_prefix_agreement[k] / total_weight,
        });
    }
    let baseline_accuracy = rows[0].accuracy;
    Ok(SimplificationSweep {
        rule,
        rows,
        baseline_accuracy,
    })
}

impl SimplificationSweep {
    pub fn accuracy_at(&self, kept: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.kept == kept)
            .map(|r| r.accuracy)
    }

    /// Table layout: one row per symptom in rule order; each row shows the
    /// threshold and accuracy of the rule truncated right after it.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("symptom\tscore\tthreshold\taccuracy\n");
        for (j, entry) in self.rule.entries.iter().enumerate() {
            let row = self
                .rows
                .iter()
                .find(|r| r.kept == j + 1)
                .expect("sweep covers every prefix");
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\n",
                entry.symptom, entry.score, row.threshold, row.accuracy
            ));
        }
        out
    }
}

/// Scale and round every score and the threshold to integers.
pub fn integerize(rule: &ClassificationRule, scale: f64) -> Result<ClassificationRule> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidScale(scale));
    }
    Ok(ClassificationRule {
        entries: rule
            .entries
            .iter()
            .map(|e| RuleEntry {
                symptom: e.symptom.clone(),
                score: (scale * e.score).round(),
            })
            .collect(),
        threshold: (scale * rule.threshold).round(),
        smoothing: rule.smoothing,
        ordering: rule.ordering.clone(),
        provenance: rule.provenance.clone(),
        scale: Some(scale),
    })
}

/// Weighted fraction of records on which two rules decide the same way.
pub fn decision_agreement(
    a: &ClassificationRule,
    b: &ClassificationRule,
    dataset: &DataSet,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let records = dataset.records();
    let items: Vec<(usize, f64)> = dataset.weights().iter().copied().enumerate().collect();
    let agreed = parallel::chunked_sum(&items, |&(i, w)| {
        let ev = record_evidence(dataset, &records[i]);
        let (_, da) = apply_rule(a, &ev);
        let (_, db) = apply_rule(b, &ev);
        if da == db {
            w
        } else {
            0.0
        }
    });
    Ok(agreed / dataset.total_weight())
}

/// Rule file: `symptom<TAB>score` rows at six decimals, then `#threshold`,
/// `#base`, `#smoothing` and (for integerized rules) `#scale` footers.
pub fn rule_to_tsv(rule: &ClassificationRule) -> String {
    let mut out = String::from("symptom\tscore\n");
    for e in &rule.entries {
        out.push_str(&format!("{}\t{:.6}\n", e.symptom, e.score));
    }
    out.push_str(&format!("#threshold\t{:.6}\n", rule.threshold));
    out.push_str("#base\t2\n");
    out.push_str(&format!("#smoothing\t{}\n", rule.smoothing));
    if let Some(scale) = rule.scale {
        out.push_str(&format!("#scale\t{scale}\n"));
    }
    out
}

pub fn rule_from_tsv(text: &str, path: &str) -> Result<ClassificationRule> {
    let mut entries = Vec::new();
    let mut threshold = None;
    let mut smoothing = 0.0;
    let mut scale = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i as u64 + 1;
        if line.is_empty() || (i == 0 && line == "symptom\tscore") {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let key = parts.next().unwrap_or_default();
        let value = parts.next().ok_or_else(|| Error::DataFormat {
            path: path.into(),
            line: lineno,
            msg: "expected two tab-separated fields".into(),
        })?;
        let parse = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| Error::DataFormat {
                path: path.into(),
                line: lineno,
                msg: format!("`{v}` is not a number"),
            })
        };
        match key {
            "#threshold" => threshold = Some(parse(value)?),
            "#smoothing" => smoothing = parse(value)?,
            "#scale" => scale = Some(parse(value)?),
            "#base" => {
                if value.trim() != "2" {
                    return Err(Error::DataFormat {
                        path: path.into(),
                        line: lineno,
                        msg: format!("unsupported base {value}"),
                    });
                }
            }
            _ if key.starts_with('#') => {}
            symptom => entries.push(RuleEntry {
                symptom: symptom.to_string(),
                score: parse(value)?,
            }),
        }
    }
    let threshold = threshold.ok_or_else(|| Error::DataFormat {
        path: path.into(),
        line: 0,
        msg: "missing #threshold footer".into(),
    })?;
    Ok(ClassificationRule {
        entries,
        threshold,
        smoothing,
        ordering: ORDERING_KEY.to_string(),
        provenance: None,
        scale,
    })
}
