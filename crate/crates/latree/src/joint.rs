//! Joint clustering: a top latent variable Z aggregates features drawn from
//! several latent aspects. Singleton aspects connect their symptom straight
//! to Z; multi-symptom aspects go through an intermediate latent variable,
//! which relaxes the local independence assumption. Includes state merging
//! into a target class and cumulative-information-coverage tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::em::{self, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::inference;
use crate::model::{LatentTreeModel, VarKind, Variable};
use crate::report;

fn default_group_cardinality() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGroup {
    /// Source latent aspect, e.g. "Y25"; becomes the intermediate latent's name.
    pub label: String,
    pub symptoms: Vec<String>,
    #[serde(default = "default_group_cardinality")]
    pub cardinality: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGroupSpec {
    pub target_label: String,
    pub groups: Vec<FeatureGroup>,
    pub z_cardinality_range: Vec<usize>,
}

impl FeatureGroupSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: FeatureGroupSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidGroupSpec(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidGroupSpec("no groups".into()));
        }
        if self.z_cardinality_range.is_empty() || self.z_cardinality_range.iter().any(|&c| c < 1) {
            return Err(Error::InvalidGroupSpec(
                "z_cardinality_range must be nonempty with entries >= 1".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        let mut symptoms = BTreeSet::new();
        for g in &self.groups {
            if g.symptoms.is_empty() {
                return Err(Error::InvalidGroupSpec(format!(
                    "group `{}` has no symptoms",
                    g.label
                )));
            }
            if g.cardinality < 1 {
                return Err(Error::InvalidGroupSpec(format!(
                    "group `{}` has cardinality 0",
                    g.label
                )));
            }
            if !labels.insert(g.label.clone()) {
                return Err(Error::InvalidGroupSpec(format!(
                    "duplicate group label `{}`",
                    g.label
                )));
            }
            for s in &g.symptoms {
                if !symptoms.insert(s.clone()) {
                    return Err(Error::InvalidGroupSpec(format!(
                        "symptom `{s}` appears in more than one group"
                    )));
                }
            }
        }
        for g in &self.groups {
            if g.symptoms.len() > 1 && symptoms.contains(&g.label) {
                return Err(Error::InvalidGroupSpec(format!(
                    "group label `{}` collides with a symptom name",
                    g.label
                )));
            }
        }
        Ok(())
    }

    pub fn all_symptoms(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| g.symptoms.iter().cloned())
            .collect()
    }
}

/// Name for the joint clustering variable that cannot collide with data.
fn z_name(spec: &FeatureGroupSpec) -> String {
    let taken: BTreeSet<&String> = spec
        .groups
        .iter()
        .flat_map(|g| g.symptoms.iter().chain(std::iter::once(&g.label)))
        .collect();
    let mut name = "Z".to_string();
    while taken.contains(&name) {
        name.push('_');
    }
    name
}

/// Build the joint clustering skeleton for one candidate cardinality of Z.
pub fn build_skeleton(
    spec: &FeatureGroupSpec,
    z_card: usize,
    symptom_cards: &BTreeMap<String, usize>,
) -> Result<LatentTreeModel> {
    spec.check()?;
    if z_card < 1 {
        return Err(Error::InvalidConfig("zCard must be >= 1".into()));
    }
    let z = z_name(spec);
    let mut vars = vec![Variable::latent(&z, z_card)];
    let mut edges = Vec::new();
    for g in &spec.groups {
        let card_of = |s: &String| -> usize { symptom_cards.get(s).copied().unwrap_or(2) };
        if g.symptoms.len() == 1 {
            let s = &g.symptoms[0];
            vars.push(Variable::observed(s.clone(), card_of(s)));
            edges.push((z.clone(), s.clone()));
        } else {
            vars.push(Variable::latent(&g.label, g.cardinality));
            edges.push((z.clone(), g.label.clone()));
            for s in &g.symptoms {
                vars.push(Variable::observed(s.clone(), card_of(s)));
                edges.push((g.label.clone(), s.clone()));
            }
        }
    }
    LatentTreeModel::skeleton(vars, &edges, &z)
}

#[derive(Debug)]
pub struct JointFit {
    pub z: String,
    pub cardinalities: Vec<usize>,
    pub fits: Vec<FitResult>,
    pub selected: usize,
}

impl JointFit {
    pub fn best(&self) -> &FitResult {
        &self.fits[self.selected]
    }

    pub fn selected_cardinality(&self) -> usize {
        self.cardinalities[self.selected]
    }
}

/// Fit the joint clustering model for every candidate |Z| and keep the BIC
/// maximizer (ties within 1e-6 to the smaller cardinality).
pub fn fit_joint(
    dataset: &DataSet,
    spec: &FeatureGroupSpec,
    config: &EmConfig,
) -> Result<JointFit> {
    spec.check()?;
    let symptoms = spec.all_symptoms();
    let projected = dataset.project(&symptoms)?;
    let cards: BTreeMap<String, usize> = symptoms
        .iter()
        .cloned()
        .zip(projected.inferred_cardinalities())
        .collect();
    let mut cardinalities = spec.z_cardinality_range.clone();
    cardinalities.sort_unstable();
    cardinalities.dedup();
    let mut fits = Vec::with_capacity(cardinalities.len());
    for &k in &cardinalities {
        let skeleton = build_skeleton(spec, k, &cards)?;
        fits.push(em::fit_em(&skeleton, &projected, config)?);
    }
    let mut selected = 0;
    for i in 1..fits.len() {
        if fits[i].bic > fits[selected].bic + 1e-6 {
            selected = i;
        }
    }
    Ok(JointFit {
        z: z_name(spec),
        cardinalities,
        fits,
        selected,
    })
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub symptom: String,
    /// P(X = 1 | Z in target), smoothed.
    pub p_s: f64,
    /// P(X = 1 | Z outside target), smoothed.
    pub p_not_s: f64,
}

/// Prior and per-symptom conditional occurrence probabilities of a merged
/// target state versus its complement.
#[derive(Debug, Clone)]
pub struct ClassSummary {
    pub target_label: String,
    pub z: String,
    pub target_states: Vec<usize>,
    pub prior_s: f64,
    pub prior_not_s: f64,
    pub rows: Vec<SummaryRow>,
    pub smoothing: f64,
    pub model_id: String,
}

/// Merge states of Z into one class and summarize it against the complement.
/// Smoothing is applied at the joint level: P(X|C) = (P(X,C)+c)/(P(C)+|X|c).
pub fn merge_summary(
    model: &LatentTreeModel,
    z: &str,
    target_states: &[usize],
    smoothing: f64,
) -> Result<ClassSummary> {
    let zi = model.index_of(z)?;
    if model.var(zi).kind != VarKind::Latent {
        return Err(Error::NotLatent(z.to_string()));
    }
    if smoothing < 0.0 {
        return Err(Error::InvalidConfig("smoothing must be >= 0".into()));
    }
    let z_card = model.card(zi);
    let targets: BTreeSet<usize> = target_states.iter().copied().collect();
    if targets.is_empty() || targets.len() >= z_card {
        return Err(Error::InvalidTargetStates(format!(
            "need a nonempty proper subset of the {z_card} states of `{z}`"
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&s| s >= z_card) {
        return Err(Error::InvalidTargetStates(format!(
            "state {bad} out of range for `{z}` (cardinality {z_card})"
        )));
    }
    let n = model.variables().len();
    let z_marginal = inference::propagate(model, &vec![None; n])?.node_posterior(zi);
    let prior_s: f64 = targets.iter().map(|&s| z_marginal[s]).sum();
    let prior_not_s = 1.0 - prior_s;
    if !(prior_s > 0.0 && prior_s < 1.0) {
        return Err(Error::DegeneratePrior(prior_s));
    }
    let mut rows = Vec::new();
    for v in 0..n {
        if model.var(v).kind != VarKind::Observed {
            continue;
        }
        let joint = report::pair_joint(model, zi, v)?;
        let card = model.card(v);
        let mut joint_s = 0.0; // P(X=1, Z in target)
        let mut joint_not = 0.0;
        for s in 0..z_card {
            let p = joint[s * card + 1];
            if targets.contains(&s) {
                joint_s += p;
            } else {
                joint_not += p;
            }
        }
        let denom_s = prior_s + card as f64 * smoothing;
        let denom_not = prior_not_s + card as f64 * smoothing;
        rows.push(SummaryRow {
            symptom: model.var(v).name.clone(),
            p_s: (joint_s + smoothing) / denom_s,
            p_not_s: (joint_not + smoothing) / denom_not,
        });
    }
    Ok(ClassSummary {
        target_label: String::new(),
        z: z.to_string(),
        target_states: targets.into_iter().collect(),
        prior_s,
        prior_not_s,
        rows,
        smoothing,
        model_id: model.digest(),
    })
}

impl ClassSummary {
    pub fn row(&self, symptom: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.symptom == symptom)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.target_label = label.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CicEstimator {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct CicRow {
    pub symptom: String,
    pub mi: f64,
    /// I(Z; top variables up to and including this one) / I(Z; all variables).
    pub cic: f64,
}

#[derive(Debug, Clone)]
pub struct CicTable {
    pub z: String,
    pub rows: Vec<CicRow>,
    /// Index of the first row at which the coverage reaches 95%.
    pub cut: Option<usize>,
    pub estimator: CicEstimator,
}

/// How the joint mutual information behind CIC is computed.
#[derive(Debug, Clone, Copy)]
pub struct CicOptions {
    /// Exact enumeration is used while the joint symptom state space has at
    /// most this many configurations.
    pub exact_limit: u128,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for CicOptions {
    fn default() -> Self {
        CicOptions {
            exact_limit: 1 << 20,
            mc_samples: 1_000_000,
            seed: 0,
        }
    }
}

/// Cumulative information coverage of the symptoms with respect to Z, in
/// MI-descending order, with the 95% cut marked.
pub fn cic_table(
    model: &LatentTreeModel,
    z: &str,
    symptoms: &[String],
    options: &CicOptions,
) -> Result<CicTable> {
    let zi = model.index_of(z)?;
    if model.var(zi).kind != VarKind::Latent {
        return Err(Error::NotLatent(z.to_string()));
    }
    let mut ranked: Vec<(String, f64)> = Vec::with_capacity(symptoms.len());
    for s in symptoms {
        let i = model.index_of(s)?;
        if model.var(i).kind != VarKind::Observed {
            return Err(Error::NotObserved(s.to_string()));
        }
        ranked.push((s.clone(), report::mutual_info(model, z, s)?));
    }
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    let ordered: Vec<String> = ranked.iter().map(|(s, _)| s.clone()).collect();
    let mut space: u128 = 1;
    for s in &ordered {
        space *= model.card(model.index_of(s)?) as u128;
    }
    let (joint_mis, estimator) = if space <= options.exact_limit {
        (joint_mi_exact(model, zi, &ordered)?, CicEstimator::Exact)
    } else {
        (
            joint_mi_monte_carlo(model, zi, &ordered, options.mc_samples, options.seed)?,
            CicEstimator::MonteCarlo {
                samples: options.mc_samples,
                seed: options.seed,
            },
        )
    };
    let total = *joint_mis.last().expect("at least one symptom");
    let mut rows = Vec::with_capacity(ordered.len());
    let mut cut = None;
    for (k, (symptom, mi)) in ranked.into_iter().enumerate() {
        let cic = if total > 1e-15 {
            (joint_mis[k] / total).min(1.0)
        } else {
            1.0
        };
        if cut.is_none() && cic >= 0.95 {
            cut = Some(k);
        }
        rows.push(CicRow { symptom, mi, cic });
    }
    Ok(CicTable {
        z: z.to_string(),
        rows,
        cut,
        estimator,
    })
}

/// I(Z; X_1..k) for every prefix k, by exact enumeration of the prefix
/// configurations.
fn joint_mi_exact(model: &LatentTreeModel, zi: usize, ordered: &[String]) -> Result<Vec<f64>> {
    let n = model.variables().len();
    let p_z = inference::propagate(model, &vec![None; n])?.node_posterior(zi);
    let idxs: Vec<usize> = ordered
        .iter()
        .map(|s| model.index_of(s))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(idxs.len());
    for k in 1..=idxs.len() {
        let prefix = &idxs[..k];
        let dims: Vec<usize> = prefix.iter().map(|&i| model.card(i)).collect();
        let mut clamps = vec![None; n];
        let mut states = vec![0usize; k];
        let mut mi = 0.0;
        loop {
            for (j, &i) in prefix.iter().enumerate() {
                clamps[i] = Some(states[j]);
            }
            match inference::propagate(model, &clamps) {
                Ok(beliefs) => {
                    let p_x = beliefs.loglik.exp();
                    if p_x > 0.0 {
                        for (s, &pz) in p_z.iter().enumerate() {
                            let q = beliefs.node_posterior(zi)[s];
                            if q > 0.0 && pz > 0.0 {
                                mi += p_x * q * (q / pz).ln();
                            }
                        }
                    }
                }
                Err(Error::ImpossibleEvidence) => {}
                Err(e) => return Err(e),
            }
            let mut done = true;
            for j in (0..k).rev() {
                states[j] += 1;
                if states[j] < dims[j] {
                    done = false;
                    break;
                }
                states[j] = 0;
            }
            if done {
                break;
            }
        }
        for &i in prefix {
            clamps[i] = None;
        }
        out.push(mi.max(0.0));
    }
    Ok(out)
}

/// Seeded Monte Carlo estimate of I(Z; X_1..k) for every prefix, reusing one
/// sample set: average of ln P(z|x_1..k) - ln P(z) over full-model draws.
fn joint_mi_monte_carlo(
    model: &LatentTreeModel,
    zi: usize,
    ordered: &[String],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = model.variables().len();
    let p_z = inference::propagate(model, &vec![None; n])?.node_posterior(zi);
    let idxs: Vec<usize> = ordered
        .iter()
        .map(|s| model.index_of(s))
        .collect::<Result<_>>()?;
    let draws = model.sample_all_states(samples, seed);
    let mut sums = vec![0.0; idxs.len()];
    let mut clamps = vec![None; n];
    for draw in &draws {
        let z_state = draw[zi];
        for (k, &i) in idxs.iter().enumerate() {
            clamps[i] = Some(draw[i]);
            let beliefs = inference::propagate(model, &clamps)?;
            let q = beliefs.node_posterior(zi)[z_state];
            sums[k] += (q / p_z[z_state]).ln();
        }
        for &i in &idxs {
            clamps[i] = None;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| (s / samples as f64).max(0.0))
        .collect())
}

/// Joint-cluster report in the layout of the published cluster tables: one
/// row per symptom in CIC order, occurrence per state, optional merged
/// column, MI and CIC.
pub fn joint_report_tsv(
    model: &LatentTreeModel,
    z: &str,
    merged: Option<&ClassSummary>,
    cic: &CicTable,
) -> Result<String> {
    let zi = model.index_of(z)?;
    let z_card = model.card(zi);
    let symptoms: Vec<String> = cic.rows.iter().map(|r| r.symptom.clone()).collect();
    let (sizes, matrix) = report::occurrence_table(model, z, &symptoms)?;
    let mut out = String::new();
    match cic.estimator {
        CicEstimator::Exact => out.push_str("# cic estimator: exact enumeration\n"),
        CicEstimator::MonteCarlo { samples, seed } => out.push_str(&format!(
            "# cic estimator: monte carlo ({samples} samples, seed {seed})\n"
        )),
    }
    out.push_str("symptom");
    for (s, size) in sizes.iter().enumerate().take(z_card) {
        out.push_str(&format!("\t{z}=s{s} ({size:.4})"));
    }
    if let Some(summary) = merged {
        let merged_states: Vec<String> = summary
            .target_states
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.push_str(&format!(
            "\t{z}=s{{{}}} ({:.4})",
            merged_states.join(","),
            summary.prior_s
        ));
    }
    out.push_str("\tMI (nats)\tCIC\n");
    for (i, row) in cic.rows.iter().enumerate() {
        out.push_str(&row.symptom);
        for p in matrix[i].iter().take(z_card) {
            out.push_str(&format!("\t{p:.4}"));
        }
        if let Some(summary) = merged {
            let p = summary.row(&row.symptom).map(|r| r.p_s).unwrap_or(f64::NAN);
            out.push_str(&format!("\t{p:.4}"));
        }
        let marker = if cic.cut == Some(i) { " <-95%" } else { "" };
        out.push_str(&format!("\t{:.4}\t{:.4}{marker}\n", row.mi, row.cic));
    }
    Ok(out)
}
