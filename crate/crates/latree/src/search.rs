//! BIC-guided greedy search over latent tree structures, organized in an
//! expansion / adjustment / simplification phase cycle. Candidates are
//! screened with a few iterations of local EM (only the tables next to the
//! edit re-optimized), the single best candidate gets full EM, and the move
//! is accepted only when it improves BIC.

use std::collections::BTreeSet;
use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::DataSet;
use crate::em::{self, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{LatentTreeModel, VarKind, Variable};
use crate::seeding;

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub em: EmConfig,
    /// Local-EM iterations spent on each candidate before ranking.
    pub screening_iterations: usize,
    pub max_latent_cardinality: usize,
    /// Defaults to the number of observed variables.
    pub max_latent_count: Option<usize>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            em: EmConfig::default(),
            screening_iterations: 20,
            max_latent_cardinality: 10,
            max_latent_count: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Expansion,
    Adjustment,
    Simplification,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Expansion => write!(f, "expansion"),
            Phase::Adjustment => write!(f, "adjustment"),
            Phase::Simplification => write!(f, "simplification"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOperator {
    /// Give a latent variable one more state.
    StateIntroduction { latent: String },
    /// Remove the lowest-mass state of a latent variable.
    StateDeletion { latent: String },
    /// Insert a new binary latent between a latent and two of its neighbors.
    NodeIntroduction {
        latent: String,
        pair: (String, String),
    },
    /// Remove a latent of degree <= 3, reattaching its other neighbors to an
    /// adjacent latent.
    NodeDeletion { latent: String, into: String },
    /// Move one neighbor of a latent to an adjacent latent.
    NodeRelocation {
        latent: String,
        neighbor: String,
        dest: String,
    },
}

impl fmt::Display for SearchOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchOperator::StateIntroduction { latent } => write!(f, "state-intro {latent}"),
            SearchOperator::StateDeletion { latent } => write!(f, "state-del {latent}"),
            SearchOperator::NodeIntroduction { latent, pair } => {
                write!(f, "node-intro {latent} ({}, {})", pair.0, pair.1)
            }
            SearchOperator::NodeDeletion { latent, into } => {
                write!(f, "node-del {latent} -> {into}")
            }
            SearchOperator::NodeRelocation {
                latent,
                neighbor,
                dest,
            } => write!(f, "relocate {neighbor}: {latent} -> {dest}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcceptedMove {
    pub phase: Phase,
    pub operator: SearchOperator,
    pub bic_before: f64,
    pub bic_after: f64,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub result: FitResult,
    pub initial_bic: f64,
    pub log: Vec<AcceptedMove>,
    pub warnings: Vec<String>,
}

impl SearchOutcome {
    /// One line per accepted move: phase, operator, BIC before/after.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for m in &self.log {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\n",
                m.phase, m.operator, m.bic_before, m.bic_after
            ));
        }
        out
    }
}

/// All structure edits applicable in a phase, in lexicographic order of
/// their printed descriptors.
pub fn enumerate_candidates(
    model: &LatentTreeModel,
    phase: Phase,
    config: &SearchConfig,
) -> Vec<SearchOperator> {
    let mut latents: Vec<usize> = (0..model.variables().len())
        .filter(|&v| model.var(v).kind == VarKind::Latent)
        .collect();
    latents.sort_by(|&a, &b| model.var(a).name.cmp(&model.var(b).name));
    let latent_count = latents.len();
    let max_latents = config
        .max_latent_count
        .unwrap_or_else(|| model.observed_names().len());
    let mut out = Vec::new();
    match phase {
        Phase::Expansion => {
            for &y in &latents {
                if model.card(y) < config.max_latent_cardinality {
                    out.push(SearchOperator::StateIntroduction {
                        latent: model.var(y).name.clone(),
                    });
                }
            }
            if latent_count < max_latents {
                for &y in &latents {
                    let nbrs = model.neighbors_of(y);
                    // the host must keep degree >= 2 after losing the pair
                    if nbrs.len() < 3 {
                        continue;
                    }
                    let mut names: Vec<&str> =
                        nbrs.iter().map(|&v| model.var(v).name.as_str()).collect();
                    names.sort_unstable();
                    for i in 0..names.len() {
                        for j in (i + 1)..names.len() {
                            out.push(SearchOperator::NodeIntroduction {
                                latent: model.var(y).name.clone(),
                                pair: (names[i].to_string(), names[j].to_string()),
                            });
                        }
                    }
                }
            }
        }
        Phase::Adjustment => {
            for &y in &latents {
                let nbrs = model.neighbors_of(y);
                if nbrs.len() < 3 {
                    continue;
                }
                for &z in nbrs {
                    if model.var(z).kind != VarKind::Latent {
                        continue;
                    }
                    for &w in nbrs {
                        if w == z {
                            continue;
                        }
                        out.push(SearchOperator::NodeRelocation {
                            latent: model.var(y).name.clone(),
                            neighbor: model.var(w).name.clone(),
                            dest: model.var(z).name.clone(),
                        });
                    }
                }
            }
        }
        Phase::Simplification => {
            for &y in &latents {
                if model.card(y) >= 2 {
                    out.push(SearchOperator::StateDeletion {
                        latent: model.var(y).name.clone(),
                    });
                }
            }
            for &y in &latents {
                let nbrs = model.neighbors_of(y);
                if nbrs.len() > 3 {
                    continue;
                }
                for &z in nbrs {
                    if model.var(z).kind == VarKind::Latent {
                        out.push(SearchOperator::NodeDeletion {
                            latent: model.var(y).name.clone(),
                            into: model.var(z).name.clone(),
                        });
                    }
                }
            }
        }
    }
    out.sort_by_key(|op| op.to_string());
    out
}

/// Multiply a base distribution by seeded noise and renormalize; entries are
/// floored away from zero so no candidate starts on a boundary.
fn jittered(base: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let mut out: Vec<f64> = base
        .iter()
        .map(|&p| {
            let u: f64 = rng.random();
            p.max(1e-6) * (0.75 + 0.5 * u)
        })
        .collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

fn uniform(card: usize) -> Vec<f64> {
    vec![1.0 / card as f64; card]
}

/// Outcome of a structural edit before parameter carry-over.
struct Edit {
    vars: Vec<Variable>,
    edges: Vec<(String, String)>,
    root: String,
    /// Nodes whose tables must be re-initialized.
    reinit: BTreeSet<String>,
    /// For state introduction/deletion on a latent: (latent, split/del state).
    split: Option<(String, usize)>,
    deleted_state: Option<(String, usize)>,
    /// Copy P(child|old host) tables for these nodes when shapes allow.
    copy_from_host: Vec<(String, String)>,
    /// Freshly created latent and its host (near-identity coupling init).
    new_latent: Option<(String, String)>,
}

fn remove_edge(edges: &mut Vec<(String, String)>, a: &str, b: &str) {
    edges.retain(|(x, y)| !((x == a && y == b) || (x == b && y == a)));
}

/// Work out the edited structure and which tables the edit invalidates.
fn plan_edit(model: &LatentTreeModel, op: &SearchOperator) -> Result<Edit> {
    let mut vars = model.variables().to_vec();
    let mut edges = model.edges();
    let mut root = model.root_name().to_string();
    let mut reinit = BTreeSet::new();
    let mut split = None;
    let mut deleted_state = None;
    let mut copy_from_host = Vec::new();
    let mut new_latent = None;
    let marg = model.node_marginals();
    let idx = |name: &str| model.index_of(name);
    match op {
        SearchOperator::StateIntroduction { latent } => {
            let y = idx(latent)?;
            let m = &marg[y];
            let best = (0..m.len())
                .max_by(|&a, &b| m[a].partial_cmp(&m[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            vars[y].cardinality += 1;
            split = Some((latent.clone(), best));
            reinit.insert(latent.clone());
            for &c in model.children_of(y) {
                reinit.insert(model.var(c).name.clone());
            }
        }
        SearchOperator::StateDeletion { latent } => {
            let y = idx(latent)?;
            let m = &marg[y];
            let worst = (0..m.len())
                .min_by(|&a, &b| m[a].partial_cmp(&m[b]).unwrap().then(a.cmp(&b)))
                .unwrap();
            vars[y].cardinality -= 1;
            deleted_state = Some((latent.clone(), worst));
            reinit.insert(latent.clone());
            for &c in model.children_of(y) {
                reinit.insert(model.var(c).name.clone());
            }
        }
        SearchOperator::NodeIntroduction { latent, pair } => {
            let y = idx(latent)?;
            idx(&pair.0)?;
            idx(&pair.1)?;
            let taken: Vec<String> = vars.iter().map(|v| v.name.clone()).collect();
            let name = em::next_latent_name(&taken, 1);
            vars.push(Variable::latent(&name, 2));
            remove_edge(&mut edges, latent, &pair.0);
            remove_edge(&mut edges, latent, &pair.1);
            edges.push((latent.clone(), name.clone()));
            edges.push((name.clone(), pair.0.clone()));
            edges.push((name.clone(), pair.1.clone()));
            reinit.insert(name.clone());
            reinit.insert(pair.0.clone());
            reinit.insert(pair.1.clone());
            if model.card(y) == 2 {
                copy_from_host.push((pair.0.clone(), latent.clone()));
                copy_from_host.push((pair.1.clone(), latent.clone()));
            }
            new_latent = Some((name, latent.clone()));
        }
        SearchOperator::NodeDeletion { latent, into } => {
            let y = idx(latent)?;
            let z = idx(into)?;
            if !model.neighbors_of(y).contains(&z) {
                return Err(Error::UnknownEdge(latent.clone(), into.clone()));
            }
            for &w in model.neighbors_of(y) {
                let w_name = model.var(w).name.clone();
                remove_edge(&mut edges, latent, &w_name);
                if w != z {
                    edges.push((into.clone(), w_name.clone()));
                    reinit.insert(w_name.clone());
                    if model.card(y) == model.card(z) {
                        copy_from_host.push((model.var(w).name.clone(), latent.clone()));
                    }
                }
            }
            let pos = vars.iter().position(|v| &v.name == latent).unwrap();
            vars.remove(pos);
            if &root == latent {
                root = into.clone();
            }
            reinit.insert(into.clone());
        }
        SearchOperator::NodeRelocation {
            latent,
            neighbor,
            dest,
        } => {
            let y = idx(latent)?;
            let w = idx(neighbor)?;
            let z = idx(dest)?;
            if !model.neighbors_of(y).contains(&w) || !model.neighbors_of(y).contains(&z) {
                return Err(Error::UnknownEdge(latent.clone(), neighbor.clone()));
            }
            remove_edge(&mut edges, latent, neighbor);
            edges.push((dest.clone(), neighbor.clone()));
            reinit.insert(neighbor.clone());
            if model.card(y) == model.card(z) {
                copy_from_host.push((neighbor.clone(), latent.clone()));
            }
        }
    }
    Ok(Edit {
        vars,
        edges,
        root,
        reinit,
        split,
        deleted_state,
        copy_from_host,
        new_latent,
    })
}

/// Apply an operator: edit the structure, carry over every table whose shape
/// is untouched, and re-initialize the rest from the old node marginals
/// (seeded jitter breaks symmetry). Returns the candidate and the names of
/// the nodes whose tables were re-initialized.
pub(crate) fn apply_operator(
    model: &LatentTreeModel,
    op: &SearchOperator,
    rng: &mut ChaCha8Rng,
) -> Result<(LatentTreeModel, BTreeSet<String>)> {
    let mut edit = plan_edit(model, op)?;
    let mut candidate =
        LatentTreeModel::skeleton(std::mem::take(&mut edit.vars), &edit.edges, &edit.root)?;
    let marg = model.node_marginals();
    let n = candidate.variables().len();
    // pass 1: mark nodes whose parent or cardinality changed as re-init
    for v in 0..n {
        let name = candidate.var(v).name.clone();
        if edit.reinit.contains(&name) {
            continue;
        }
        let old = match model.index_of(&name) {
            Ok(i) => i,
            Err(_) => {
                edit.reinit.insert(name);
                continue;
            }
        };
        let same_card = model.card(old) == candidate.card(v);
        let parent_matches = match (model.parent_of(old), candidate.parent_of(v)) {
            (None, None) => true,
            (Some(po), Some(pn)) => {
                model.var(po).name == candidate.var(pn).name && model.card(po) == candidate.card(pn)
            }
            _ => false,
        };
        if !(same_card && parent_matches) {
            edit.reinit.insert(name);
        }
    }
    // pass 2: fill tables
    for v in 0..n {
        let name = candidate.var(v).name.clone();
        if !edit.reinit.contains(&name) {
            let old = model.index_of(&name)?;
            *candidate.table_mut(v) = model.table(old).to_vec();
            continue;
        }
        let card = candidate.card(v);
        let rows = match candidate.parent_of(v) {
            None => 1,
            Some(p) => candidate.card(p),
        };
        let table = build_reinit_table(model, &edit, &marg, &name, card, rows, rng);
        debug_assert_eq!(table.len(), rows * card);
        *candidate.table_mut(v) = table;
    }
    let violations = candidate.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    Ok((candidate, edit.reinit))
}

fn build_reinit_table(
    model: &LatentTreeModel,
    edit: &Edit,
    marg: &[Vec<f64>],
    name: &str,
    card: usize,
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    // the freshly inserted latent couples near-identically to its host so
    // the candidate starts out close to the current model
    if let Some((new_name, _)) = &edit.new_latent {
        if new_name == name {
            let mut out = Vec::with_capacity(rows * card);
            for r in 0..rows {
                let mut base = uniform(card);
                base[r % card] += 0.8;
                let sum: f64 = base.iter().sum();
                for x in &mut base {
                    *x /= sum;
                }
                out.extend(jittered(&base, rng));
            }
            return out;
        }
    }
    // state split: extend the latent's own table and its children's rows
    if let Some((latent, s)) = &edit.split {
        if latent == name {
            let old = model.index_of(name).unwrap();
            let old_card = model.card(old);
            let old_table = model.table(old);
            let old_rows = old_table.len() / old_card;
            let mut out = Vec::with_capacity(rows * card);
            for r in 0..old_rows.max(1) {
                let mut row: Vec<f64> = old_table[r * old_card..(r + 1) * old_card].to_vec();
                let half = row[*s] / 2.0;
                row[*s] = half;
                row.push(half);
                out.extend(jittered(&row, rng));
            }
            return out;
        }
        if let Ok(old) = model.index_of(name) {
            if model
                .parent_of(old)
                .map(|p| model.var(p).name == *latent)
                .unwrap_or(false)
            {
                let old_table = model.table(old);
                let mut out = Vec::with_capacity(rows * card);
                for r in 0..rows {
                    let src = if r < rows - 1 { r } else { *s };
                    let row = &old_table[src * card..(src + 1) * card];
                    out.extend(jittered(row, rng));
                }
                return out;
            }
        }
    }
    // state deletion: drop the dead state everywhere it indexes
    if let Some((latent, s)) = &edit.deleted_state {
        if latent == name {
            let old = model.index_of(name).unwrap();
            let old_card = model.card(old);
            let old_table = model.table(old);
            let old_rows = old_table.len() / old_card;
            let mut out = Vec::with_capacity(rows * card);
            for r in 0..old_rows.max(1) {
                let mut row: Vec<f64> = old_table[r * old_card..(r + 1) * old_card].to_vec();
                row.remove(*s);
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    for x in &mut row {
                        *x /= sum;
                    }
                } else {
                    row = uniform(card);
                }
                out.extend(jittered(&row, rng));
            }
            return out;
        }
        if let Ok(old) = model.index_of(name) {
            if model
                .parent_of(old)
                .map(|p| model.var(p).name == *latent)
                .unwrap_or(false)
            {
                let old_table = model.table(old);
                let mut out = Vec::with_capacity(rows * card);
                for r in 0..(rows + 1) {
                    if r == *s {
                        continue;
                    }
                    let row = &old_table[r * card..(r + 1) * card];
                    out.extend(jittered(row, rng));
                }
                return out;
            }
        }
    }
    // a relocated or reattached node inherits its loadings when the new
    // parent has the same number of states as the old host
    if edit.copy_from_host.iter().any(|(child, _)| child == name) {
        if let Ok(old) = model.index_of(name) {
            let old_table = model.table(old);
            if old_table.len() == rows * card {
                let mut out = Vec::with_capacity(rows * card);
                for r in 0..rows {
                    out.extend(jittered(&old_table[r * card..(r + 1) * card], rng));
                }
                return out;
            }
        }
    }
    // fallback: every row starts at the node's old marginal
    let base = match model.index_of(name) {
        Ok(old) if marg[old].len() == card => marg[old].clone(),
        _ => uniform(card),
    };
    let mut out = Vec::with_capacity(rows * card);
    for _ in 0..rows {
        out.extend(jittered(&base, rng));
    }
    out
}

struct Screened {
    index: usize,
    model: LatentTreeModel,
    bic: f64,
    dimension: usize,
}

/// Search for the latent tree structure maximizing BIC, starting from a
/// two-state LCM and cycling the three phases until none of them improves.
pub fn search(dataset: &DataSet, config: &SearchConfig) -> Result<SearchOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.variables().len() < 2 {
        return Err(Error::InvalidConfig(
            "structure search needs at least 2 observed variables".into(),
        ));
    }
    let mut warnings = Vec::new();
    let cards = dataset.inferred_cardinalities();
    for (name, &card) in dataset.variables().iter().zip(&cards) {
        let mut seen = BTreeSet::new();
        for rec in dataset.records() {
            if let Some(v) = rec[dataset.column_index(name).unwrap()] {
                seen.insert(v);
            }
        }
        if seen.len() < 2 {
            warnings.push(format!(
                "variable `{name}` has a single observed state; kept (cardinality {card})"
            ));
        }
    }
    let leaves: Vec<(String, usize)> = dataset
        .variables()
        .iter()
        .cloned()
        .zip(cards.iter().copied())
        .collect();
    let latent = em::next_latent_name(dataset.variables(), 1);
    let skeleton = LatentTreeModel::lcm_skeleton(&latent, 2, &leaves)?;
    let mut em_cfg = config.em.clone();
    em_cfg.seed = seeding::derive_seed(config.seed, "search-init", 0);
    let mut current = em::fit_em(&skeleton, dataset, &em_cfg)?;
    let initial_bic = current.bic;
    let mut log: Vec<AcceptedMove> = Vec::new();
    let mut round: u64 = 0;
    loop {
        let mut improved_in_cycle = false;
        for phase in [Phase::Expansion, Phase::Adjustment, Phase::Simplification] {
            loop {
                round += 1;
                match try_phase_step(&current, dataset, config, phase, round)? {
                    Some((mv, refit)) => {
                        log.push(mv);
                        current = refit;
                        improved_in_cycle = true;
                    }
                    None => break,
                }
            }
        }
        if !improved_in_cycle {
            break;
        }
    }
    Ok(SearchOutcome {
        result: current,
        initial_bic,
        log,
        warnings,
    })
}

/// Screen every candidate of the phase, refit the best with full EM, and
/// accept it when BIC strictly improves.
fn try_phase_step(
    current: &FitResult,
    dataset: &DataSet,
    config: &SearchConfig,
    phase: Phase,
    round: u64,
) -> Result<Option<(AcceptedMove, FitResult)>> {
    let candidates = enumerate_candidates(&current.model, phase, config);
    if candidates.is_empty() {
        return Ok(None);
    }
    let jitter_seed = seeding::derive_seed(config.seed, "search-jitter", round);
    let screened: Vec<Result<Option<Screened>>> = candidates
        .par_iter()
        .enumerate()
        .map(|(index, op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(jitter_seed);
            rng.set_stream(index as u64);
            let (mut model, reinit) = apply_operator(&current.model, op, &mut rng)?;
            let mask: Vec<bool> = (0..model.variables().len())
                .map(|v| {
                    let name = &model.var(v).name;
                    reinit.contains(name)
                        || model
                            .neighbors_of(v)
                            .iter()
                            .any(|&w| reinit.contains(&model.var(w).name))
                })
                .collect();
            let data = em::compile_data(&model, dataset)?;
            let run = em::em_run(
                &mut model,
                &data,
                config.screening_iterations,
                config.em.tolerance,
                config.em.m_step_smoothing,
                Some(&mask),
            );
            match run {
                Ok(trace) => {
                    let ll = *trace.last().unwrap();
                    let dimension = model.dimension();
                    let bic = em::bic_score(ll, dimension, data.total_weight);
                    Ok(Some(Screened {
                        index,
                        model,
                        bic,
                        dimension,
                    }))
                }
                Err(Error::ImpossibleEvidence) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut best: Option<Screened> = None;
    for s in screened {
        let Some(s) = s? else { continue };
        let replace = match &best {
            None => true,
            Some(b) => {
                s.bic > b.bic + 1e-9
                    || ((s.bic - b.bic).abs() <= 1e-9
                        && (s.dimension < b.dimension
                            || (s.dimension == b.dimension
                                && candidates[s.index].to_string()
                                    < candidates[b.index].to_string())))
            }
        };
        if replace {
            best = Some(s);
        }
    }
    let Some(mut best) = best else {
        return Ok(None);
    };
    // full EM from the screened parameters before the accept test
    let data = em::compile_data(&best.model, dataset)?;
    let trace = em::em_run(
        &mut best.model,
        &data,
        config.em.max_iterations,
        config.em.tolerance,
        config.em.m_step_smoothing,
        None,
    )?;
    let loglik = *trace.last().unwrap();
    let bic = em::bic_score(loglik, best.model.dimension(), data.total_weight);
    if bic <= current.bic + 1e-9 {
        return Ok(None);
    }
    let mv = AcceptedMove {
        phase,
        operator: candidates[best.index].clone(),
        bic_before: current.bic,
        bic_after: bic,
    };
    let refit = FitResult {
        model: best.model,
        loglik,
        bic,
        iteration_trace: trace,
        restart_logliks: vec![loglik],
    };
    Ok(Some((mv, refit)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcm4() -> LatentTreeModel {
        let leaves: Vec<(String, usize)> = (0..4).map(|i| (format!("x{i}"), 2)).collect();
        LatentTreeModel::lcm_skeleton("Y01", 2, &leaves).unwrap()
    }

    /// Two islands of two leaves each, strongly loaded (0.85/0.15).
    fn island_model() -> LatentTreeModel {
        use crate::model::Variable;
        use std::collections::HashMap;
        let vars = vec![
            Variable::latent("A", 2),
            Variable::latent("B", 2),
            Variable::observed("x0", 2),
            Variable::observed("x1", 2),
            Variable::observed("x2", 2),
            Variable::observed("x3", 2),
        ];
        let edges = vec![
            ("A".into(), "B".into()),
            ("A".into(), "x0".into()),
            ("A".into(), "x1".into()),
            ("B".into(), "x2".into()),
            ("B".into(), "x3".into()),
        ];
        let mut t = HashMap::new();
        t.insert("A".into(), vec![0.5, 0.5]);
        t.insert("B".into(), vec![0.85, 0.15, 0.15, 0.85]);
        for leaf in ["x0", "x1", "x2", "x3"] {
            t.insert(leaf.into(), vec![0.85, 0.15, 0.15, 0.85]);
        }
        LatentTreeModel::new(vars, &edges, "A", t).unwrap()
    }

    #[test]
    fn expansion_candidates_for_a_four_leaf_lcm() {
        let m = lcm4();
        let cands = enumerate_candidates(&m, Phase::Expansion, &SearchConfig::default());
        let state_intros = cands
            .iter()
            .filter(|c| matches!(c, SearchOperator::StateIntroduction { .. }))
            .count();
        let node_intros = cands
            .iter()
            .filter(|c| matches!(c, SearchOperator::NodeIntroduction { .. }))
            .count();
        assert_eq!(state_intros, 1);
        assert_eq!(node_intros, 6); // C(4,2)
    }

    #[test]
    fn single_latent_model_has_no_adjustment_moves() {
        let m = lcm4();
        let cands = enumerate_candidates(&m, Phase::Adjustment, &SearchConfig::default());
        assert!(cands.is_empty());
    }

    #[test]
    fn simplification_candidates_for_the_two_latent_shape() {
        let m = island_model();
        let cands = enumerate_candidates(&m, Phase::Simplification, &SearchConfig::default());
        let state_dels = cands
            .iter()
            .filter(|c| matches!(c, SearchOperator::StateDeletion { .. }))
            .count();
        let node_dels = cands
            .iter()
            .filter(|c| matches!(c, SearchOperator::NodeDeletion { .. }))
            .count();
        assert_eq!(state_dels, 2);
        assert_eq!(node_dels, 2); // each latent can fold into the other
    }

    #[test]
    fn operators_preserve_validity() {
        let m = island_model();
        let cfg = SearchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for phase in [Phase::Expansion, Phase::Adjustment, Phase::Simplification] {
            for op in enumerate_candidates(&m, phase, &cfg) {
                let (cand, reinit) = apply_operator(&m, &op, &mut rng).unwrap();
                assert!(cand.validate().is_empty(), "{op}: {:?}", cand.validate());
                assert!(!reinit.is_empty(), "{op} touched nothing");
            }
        }
    }

    #[test]
    fn state_introduction_grows_the_dimension() {
        let m = lcm4();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = SearchOperator::StateIntroduction {
            latent: "Y01".into(),
        };
        let (cand, _) = apply_operator(&m, &op, &mut rng).unwrap();
        assert_eq!(cand.card(cand.index_of("Y01").unwrap()), 3);
        assert!(cand.dimension() > m.dimension());
    }

    #[test]
    fn recovers_two_islands_and_dominates_the_initial_lcm() {
        let gen = island_model();
        let data = gen.forward_sample(5_000, 31);
        let cfg = SearchConfig {
            em: EmConfig {
                restarts: 4,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        };
        let out = search(&data, &cfg).unwrap();
        assert!(out.result.bic >= out.initial_bic);
        assert!(out.result.model.validate().is_empty());
        let latents = out.result.model.latent_names();
        assert_eq!(latents.len(), 2, "log:\n{}", out.render_log());
        // leaf partition must be {x0,x1} | {x2,x3}
        let mut partition: Vec<Vec<String>> = latents
            .iter()
            .map(|l| {
                let idx = out.result.model.index_of(l).unwrap();
                let mut leaves: Vec<String> = out
                    .result
                    .model
                    .neighbors_of(idx)
                    .iter()
                    .filter(|&&v| out.result.model.var(v).kind == VarKind::Observed)
                    .map(|&v| out.result.model.var(v).name.clone())
                    .collect();
                leaves.sort();
                leaves
            })
            .collect();
        partition.sort();
        assert_eq!(
            partition,
            vec![
                vec!["x0".to_string(), "x1".to_string()],
                vec!["x2".to_string(), "x3".to_string()]
            ],
            "log:\n{}",
            out.render_log()
        );
    }

    #[test]
    fn independent_data_collapses_to_the_independence_model() {
        // independent coin flips: the best structure is the card-1 latent
        let leaves: Vec<(String, usize)> = (0..4).map(|i| (format!("x{i}"), 2)).collect();
        let mut gen = LatentTreeModel::lcm_skeleton("Y01", 1, &leaves).unwrap();
        for (name, _) in &leaves {
            let idx = gen.index_of(name).unwrap();
            *gen.table_mut(idx) = vec![0.6, 0.4];
        }
        let data = gen.forward_sample(5_000, 17);
        let cfg = SearchConfig {
            em: EmConfig {
                restarts: 4,
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        };
        let out = search(&data, &cfg).unwrap();
        let indep = LatentTreeModel::lcm_skeleton("Y01", 1, &leaves).unwrap();
        let indep_fit = em::fit_em(
            &indep,
            &data,
            &EmConfig {
                restarts: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (out.result.bic - indep_fit.bic).abs() < 1e-6,
            "search {} vs independence {}",
            out.result.bic,
            indep_fit.bic
        );
    }

    #[test]
    fn search_is_deterministic() {
        let gen = island_model();
        let data = gen.forward_sample(1_000, 8);
        let cfg = SearchConfig {
            em: EmConfig {
                restarts: 2,
                ..Default::default()
            },
            seed: 9,
            ..Default::default()
        };
        let a = search(&data, &cfg).unwrap();
        let b = search(&data, &cfg).unwrap();
        assert_eq!(a.render_log(), b.render_log());
        assert_eq!(a.result.bic, b.result.bic);
        assert_eq!(
            crate::persist::to_json_string(&a.result.model),
            crate::persist::to_json_string(&b.result.model)
        );
    }
}
