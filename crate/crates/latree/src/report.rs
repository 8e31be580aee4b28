//! Partition reports: each latent variable is read as a probabilistic
//! partition of the population, summarized by cluster sizes, per-cluster
//! symptom occurrence probabilities, a mutual-information ranking, and a
//! co-occurrence / mutual-exclusion pattern classification.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::inference;
use crate::model::{LatentTreeModel, VarKind};

/// Correlations closer to zero than this are treated as zero when typing
/// patterns.
const CORR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum PatternType {
    /// All pairwise correlations among the adjacent symptoms are nonnegative.
    CoOccurrence { symptoms: Vec<String> },
    /// Two groups with nonnegative correlations inside each group and the
    /// negative correlations running between them.
    MutualExclusion {
        group_a: Vec<String>,
        group_b: Vec<String>,
    },
    /// The negative-correlation graph is not two-colorable; the named
    /// symptoms form an odd cycle witness.
    Mixed { conflict: [String; 3] },
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub symptom: String,
    /// P(X = 1 | Y = s) per cluster s.
    pub occurrence: Vec<f64>,
    /// Mutual information with the latent variable, in nats.
    pub mi: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionReport {
    pub latent: String,
    /// P(Y = s) per cluster.
    pub cluster_sizes: Vec<f64>,
    /// One row per adjacent symptom, sorted by MI descending (ties by name).
    pub rows: Vec<ReportRow>,
    pub pattern: PatternType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiUnit {
    Nats,
    Bits,
}

/// P(a = x, b = y) for any two model variables, row-major over `a`.
/// Clamps `a` state by state and reads `b`'s posterior off the tree.
pub(crate) fn pair_joint(model: &LatentTreeModel, a: usize, b: usize) -> Result<Vec<f64>> {
    let ca = model.card(a);
    let cb = model.card(b);
    let marg_a = {
        let beliefs = inference::propagate(model, &vec![None; model.variables().len()])?;
        beliefs.node_posterior(a)
    };
    let mut joint = vec![0.0; ca * cb];
    let mut clamps = vec![None; model.variables().len()];
    for s in 0..ca {
        if marg_a[s] <= 0.0 {
            continue;
        }
        clamps[a] = Some(s);
        let beliefs = inference::propagate(model, &clamps)?;
        let cond_b = beliefs.node_posterior(b);
        for (t, &p) in cond_b.iter().enumerate() {
            joint[s * cb + t] = marg_a[s] * p;
        }
    }
    Ok(joint)
}

fn mi_from_joint(joint: &[f64], ca: usize, cb: usize) -> f64 {
    let mut pa = vec![0.0; ca];
    let mut pb = vec![0.0; cb];
    for s in 0..ca {
        for t in 0..cb {
            pa[s] += joint[s * cb + t];
            pb[t] += joint[s * cb + t];
        }
    }
    let mut mi = 0.0;
    for s in 0..ca {
        for t in 0..cb {
            let p = joint[s * cb + t];
            if p > 0.0 {
                mi += p * (p / (pa[s] * pb[t])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Mutual information between two model variables in nats, computed from
/// the exact model joint.
pub fn mutual_info(model: &LatentTreeModel, a: &str, b: &str) -> Result<f64> {
    let ia = model.index_of(a)?;
    let ib = model.index_of(b)?;
    if ia == ib {
        return Err(Error::DuplicateVariable(a.to_string()));
    }
    let joint = pair_joint(model, ia, ib)?;
    Ok(mi_from_joint(&joint, model.card(ia), model.card(ib)))
}

/// Cluster sizes P(Y=s) and the occurrence matrix P(X=1 | Y=s) for the named
/// symptoms (rows) against the latent variable's states (columns).
pub fn occurrence_table(
    model: &LatentTreeModel,
    latent: &str,
    symptoms: &[String],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let y = model.index_of(latent)?;
    if model.var(y).kind != VarKind::Latent {
        return Err(Error::NotLatent(latent.to_string()));
    }
    let mut sym_idx = Vec::with_capacity(symptoms.len());
    for s in symptoms {
        let i = model.index_of(s)?;
        if model.var(i).kind != VarKind::Observed {
            return Err(Error::NotObserved(s.to_string()));
        }
        sym_idx.push(i);
    }
    let n = model.variables().len();
    let sizes = inference::propagate(model, &vec![None; n])?.node_posterior(y);
    let mut matrix = vec![vec![0.0; sizes.len()]; symptoms.len()];
    let mut clamps = vec![None; n];
    for (s, &size) in sizes.iter().enumerate() {
        if size <= 0.0 {
            continue;
        }
        clamps[y] = Some(s);
        let beliefs = inference::propagate(model, &clamps)?;
        for (row, &xi) in sym_idx.iter().enumerate() {
            matrix[row][s] = beliefs.node_posterior(xi)[1];
        }
    }
    Ok((sizes, matrix))
}

/// Pearson correlation of the presence indicators of two observed variables
/// under the model joint.
fn presence_correlation(model: &LatentTreeModel, a: usize, b: usize) -> Result<f64> {
    let joint = pair_joint(model, a, b)?;
    let ca = model.card(a);
    let cb = model.card(b);
    let mut p11 = 0.0;
    let mut pa = 0.0;
    let mut pb = 0.0;
    for s in 0..ca {
        for t in 0..cb {
            let p = joint[s * cb + t];
            if s == 1 {
                pa += p;
            }
            if t == 1 {
                pb += p;
            }
            if s == 1 && t == 1 {
                p11 += p;
            }
        }
    }
    let var = pa * (1.0 - pa) * pb * (1.0 - pb);
    if var <= 0.0 {
        return Ok(0.0);
    }
    Ok((p11 - pa * pb) / var.sqrt())
}

/// Classify the sign structure of the pairwise correlations among the
/// symptoms adjacent to a latent variable: all nonnegative means the
/// symptoms co-occur; otherwise the negative-correlation graph is
/// two-colored into two mutually exclusive groups.
pub fn pattern_type(model: &LatentTreeModel, latent: &str) -> Result<PatternType> {
    let y = model.index_of(latent)?;
    if model.var(y).kind != VarKind::Latent {
        return Err(Error::NotLatent(latent.to_string()));
    }
    let mut symptoms: Vec<usize> = model
        .neighbors_of(y)
        .iter()
        .copied()
        .filter(|&v| model.var(v).kind == VarKind::Observed)
        .collect();
    symptoms.sort_by(|&a, &b| model.var(a).name.cmp(&model.var(b).name));
    if symptoms.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "latent `{latent}` has no adjacent observed variable"
        )));
    }
    let k = symptoms.len();
    let mut negative = vec![vec![false; k]; k];
    let mut any_negative = false;
    for i in 0..k {
        for j in (i + 1)..k {
            let rho = presence_correlation(model, symptoms[i], symptoms[j])?;
            if rho < -CORR_TOL {
                negative[i][j] = true;
                negative[j][i] = true;
                any_negative = true;
            }
        }
    }
    let names: Vec<String> = symptoms
        .iter()
        .map(|&v| model.var(v).name.clone())
        .collect();
    if !any_negative {
        return Ok(PatternType::CoOccurrence { symptoms: names });
    }
    // two-color the negative-correlation graph; BFS in name order so the
    // grouping is deterministic
    let mut color = vec![None; k];
    let mut bfs_parent: Vec<Option<usize>> = vec![None; k];
    for start in 0..k {
        if color[start].is_some() {
            continue;
        }
        color[start] = Some(0u8);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in 0..k {
                if !negative[u][v] {
                    continue;
                }
                match color[v] {
                    None => {
                        color[v] = Some(1 - color[u].unwrap());
                        bfs_parent[v] = Some(u);
                        queue.push_back(v);
                    }
                    Some(c) if c == color[u].unwrap() => {
                        // odd cycle: u and v conflict; the third witness is
                        // whichever tree parent closes the cycle
                        let w = bfs_parent[v].or(bfs_parent[u]).unwrap_or(start);
                        let mut conflict = [names[u].clone(), names[v].clone(), names[w].clone()];
                        conflict.sort();
                        return Ok(PatternType::Mixed { conflict });
                    }
                    Some(_) => {}
                }
            }
        }
    }
    let group_a: Vec<String> = (0..k)
        .filter(|&i| color[i] == Some(0))
        .map(|i| names[i].clone())
        .collect();
    let group_b: Vec<String> = (0..k)
        .filter(|&i| color[i] == Some(1))
        .map(|i| names[i].clone())
        .collect();
    Ok(PatternType::MutualExclusion { group_a, group_b })
}

/// Assemble the full report for one latent variable: sizes, occurrence rows
/// for all adjacent symptoms sorted by MI descending, and the pattern type.
pub fn build_report(model: &LatentTreeModel, latent: &str) -> Result<PartitionReport> {
    let y = model.index_of(latent)?;
    if model.var(y).kind != VarKind::Latent {
        return Err(Error::NotLatent(latent.to_string()));
    }
    let mut symptoms: Vec<String> = model
        .neighbors_of(y)
        .iter()
        .filter(|&&v| model.var(v).kind == VarKind::Observed)
        .map(|&v| model.var(v).name.clone())
        .collect();
    symptoms.sort();
    let (sizes, matrix) = occurrence_table(model, latent, &symptoms)?;
    let mut rows = Vec::with_capacity(symptoms.len());
    for (i, symptom) in symptoms.iter().enumerate() {
        let mi = mutual_info(model, latent, symptom)?;
        rows.push(ReportRow {
            symptom: symptom.clone(),
            occurrence: matrix[i].clone(),
            mi,
        });
    }
    rows.sort_by(|a, b| {
        b.mi.partial_cmp(&a.mi)
            .unwrap()
            .then_with(|| a.symptom.cmp(&b.symptom))
    });
    let pattern = pattern_type(model, latent)?;
    Ok(PartitionReport {
        latent: latent.to_string(),
        cluster_sizes: sizes,
        rows,
        pattern,
    })
}

fn mi_in(unit: MiUnit, nats: f64) -> f64 {
    match unit {
        MiUnit::Nats => nats,
        MiUnit::Bits => nats / std::f64::consts::LN_2,
    }
}

fn pattern_line(pattern: &PatternType) -> String {
    match pattern {
        PatternType::CoOccurrence { symptoms } => {
            format!("co-occurrence: {}", symptoms.join(", "))
        }
        PatternType::MutualExclusion { group_a, group_b } => format!(
            "mutual-exclusion: {{{}}} vs {{{}}}",
            group_a.join(", "),
            group_b.join(", ")
        ),
        PatternType::Mixed { conflict } => format!(
            "mixed (sign structure not two-colorable; witness: {})",
            conflict.join(", ")
        ),
    }
}

impl PartitionReport {
    pub fn to_tsv(&self, unit: MiUnit) -> String {
        let unit_name = match unit {
            MiUnit::Nats => "nats",
            MiUnit::Bits => "bits",
        };
        let mut out = String::new();
        out.push_str(&format!("# pattern: {}\n", pattern_line(&self.pattern)));
        out.push_str(&self.latent);
        for (s, size) in self.cluster_sizes.iter().enumerate() {
            out.push_str(&format!("\t{}=s{s} ({size:.4})", self.latent));
        }
        out.push_str(&format!("\tMI ({unit_name})\n"));
        for row in &self.rows {
            out.push_str(&row.symptom);
            for p in &row.occurrence {
                out.push_str(&format!("\t{p:.4}"));
            }
            out.push_str(&format!("\t{:.4}\n", mi_in(unit, row.mi)));
        }
        out
    }

    pub fn to_text(&self, unit: MiUnit) -> String {
        let unit_name = match unit {
            MiUnit::Nats => "nats",
            MiUnit::Bits => "bits",
        };
        let name_width = self
            .rows
            .iter()
            .map(|r| r.symptom.len())
            .chain([self.latent.len()])
            .max()
            .unwrap_or(8)
            .max(8);
        let mut out = String::new();
        out.push_str(&format!("{:name_width$}", self.latent));
        for (s, size) in self.cluster_sizes.iter().enumerate() {
            out.push_str(&format!("  {}=s{s} ({size:.2})", self.latent));
        }
        out.push_str(&format!("  MI ({unit_name})\n"));
        for row in &self.rows {
            out.push_str(&format!("{:name_width$}", row.symptom));
            for (s, p) in row.occurrence.iter().enumerate() {
                let col = format!("{}=s{s} (0.00)", self.latent).len();
                out.push_str(&format!("  {:>col$.2}", p));
            }
            out.push_str(&format!("  {:>9.2}\n", mi_in(unit, row.mi)));
        }
        out.push_str(&format!("pattern: {}\n", pattern_line(&self.pattern)));
        out
    }
}
