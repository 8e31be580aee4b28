//! Exact inference on a latent tree by two-pass message passing. Messages
//! are kept in linear space and renormalized at every node, with the log
//! normalizers accumulated separately, so deep or wide models at extreme
//! parameters do not underflow.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{JointTable, LatentTreeModel, VarKind};
use crate::parallel;

/// Observed-variable assignments; anything unmentioned is marginalized.
#[derive(Debug, Clone, Default)]
pub struct Evidence {
    map: BTreeMap<String, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: impl Into<String>, state: usize) -> Self {
        self.map.insert(name.into(), state);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, state: usize) {
        self.map.insert(name.into(), state);
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.map.get(name).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.map.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl<S: Into<String>> FromIterator<(S, usize)> for Evidence {
    fn from_iter<T: IntoIterator<Item = (S, usize)>>(iter: T) -> Self {
        Evidence {
            map: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

/// Validate evidence against the model and lower it to per-node clamps.
pub(crate) fn compile_evidence(
    model: &LatentTreeModel,
    evidence: &Evidence,
) -> Result<Vec<Option<usize>>> {
    let mut clamps = vec![None; model.variables().len()];
    for (name, state) in evidence.iter() {
        let idx = model.index_of(name)?;
        let var = model.var(idx);
        if var.kind == VarKind::Latent {
            return Err(Error::NotObserved(name.to_string()));
        }
        if state >= var.cardinality {
            return Err(Error::StateOutOfRange {
                variable: name.to_string(),
                state,
                cardinality: var.cardinality,
            });
        }
        clamps[idx] = Some(state);
    }
    Ok(clamps)
}

/// Natural-log probability of the clamped states (latents may be clamped
/// internally); `NEG_INFINITY` when the configuration is impossible.
pub(crate) fn clamped_loglik(model: &LatentTreeModel, clamps: &[Option<usize>]) -> f64 {
    match upward_pass(model, clamps) {
        Some((_, _, loglik)) => loglik,
        None => f64::NEG_INFINITY,
    }
}

type Upward = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

/// Leaves-to-root pass. Returns per-node normalized `up` vectors, per-node
/// messages to the parent, and the total log-probability of the clamps.
fn upward_pass(model: &LatentTreeModel, clamps: &[Option<usize>]) -> Option<Upward> {
    let n = model.variables().len();
    let mut up: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut msg: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut log_scale = 0.0;
    for &v in model.topo_order().iter().rev() {
        let card = model.card(v);
        let mut u = match clamps[v] {
            Some(s) => {
                let mut e = vec![0.0; card];
                e[s] = 1.0;
                e
            }
            None => vec![1.0; card],
        };
        for &c in model.children_of(v) {
            for (x, ux) in u.iter_mut().enumerate() {
                *ux *= msg[c][x];
            }
        }
        let sum: f64 = u.iter().sum();
        if !(sum > 0.0) {
            return None;
        }
        for ux in u.iter_mut() {
            *ux /= sum;
        }
        log_scale += sum.ln();
        if let Some(p) = model.parent_of(v) {
            let pcard = model.card(p);
            let mut m = vec![0.0; pcard];
            for (xp, mxp) in m.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (x, &ux) in u.iter().enumerate() {
                    acc += model.cond(v, xp, x) * ux;
                }
                *mxp = acc;
            }
            msg[v] = m;
        }
        up[v] = u;
    }
    let root = model.root_index();
    let total: f64 = model
        .table(root)
        .iter()
        .zip(&up[root])
        .map(|(pi, u)| pi * u)
        .sum();
    if !(total > 0.0) {
        return None;
    }
    Some((up, msg, total.ln() + log_scale))
}

/// Full two-pass state: enough to read off any node or edge posterior.
pub(crate) struct Beliefs<'m> {
    model: &'m LatentTreeModel,
    up: Vec<Vec<f64>>,
    down: Vec<Vec<f64>>,
    /// For every non-root node c with parent p: the parent-side context
    /// vector over p's states (down, local evidence and sibling messages
    /// combined), so that bel(p, c) = ctx[c](p) * P(c|p) * up[c](c).
    ctx: Vec<Vec<f64>>,
    pub loglik: f64,
}

pub(crate) fn propagate<'m>(
    model: &'m LatentTreeModel,
    clamps: &[Option<usize>],
) -> Result<Beliefs<'m>> {
    let (up, msg, loglik) = upward_pass(model, clamps).ok_or(Error::ImpossibleEvidence)?;
    let n = model.variables().len();
    let mut down: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut ctx: Vec<Vec<f64>> = vec![Vec::new(); n];
    let root = model.root_index();
    down[root] = model.table(root).to_vec();
    for &v in model.topo_order() {
        let kids = model.children_of(v);
        if kids.is_empty() {
            continue;
        }
        let card = model.card(v);
        let mut base = down[v].clone();
        if let Some(s) = clamps[v] {
            for (x, b) in base.iter_mut().enumerate() {
                if x != s {
                    *b = 0.0;
                }
            }
        }
        // prefix[i] = product of messages from kids[..i]; suffix analogous
        let k = kids.len();
        let mut prefix = vec![vec![1.0; card]; k + 1];
        for i in 0..k {
            let m = &msg[kids[i]];
            for x in 0..card {
                prefix[i + 1][x] = prefix[i][x] * m[x];
            }
        }
        let mut suffix = vec![1.0; card];
        for i in (0..k).rev() {
            let c = kids[i];
            let mut t = vec![0.0; card];
            for x in 0..card {
                t[x] = base[x] * prefix[i][x] * suffix[x];
            }
            let ccard = model.card(c);
            let mut d = vec![0.0; ccard];
            for (xp, &tx) in t.iter().enumerate() {
                if tx > 0.0 {
                    for (xc, dx) in d.iter_mut().enumerate() {
                        *dx += tx * model.cond(c, xp, xc);
                    }
                }
            }
            let sum: f64 = d.iter().sum();
            if sum > 0.0 {
                for dx in d.iter_mut() {
                    *dx /= sum;
                }
            }
            down[c] = d;
            ctx[c] = t;
            let m = &msg[c];
            for x in 0..card {
                suffix[x] *= m[x];
            }
        }
    }
    Ok(Beliefs {
        model,
        up,
        down,
        ctx,
        loglik,
    })
}

impl Beliefs<'_> {
    pub fn node_posterior(&self, v: usize) -> Vec<f64> {
        let mut b: Vec<f64> = self.up[v]
            .iter()
            .zip(&self.down[v])
            .map(|(u, d)| u * d)
            .collect();
        let sum: f64 = b.iter().sum();
        debug_assert!(sum > 0.0);
        for x in b.iter_mut() {
            *x /= sum;
        }
        b
    }

    /// Joint posterior over (parent(c), c), parent-state major, normalized.
    pub fn edge_posterior(&self, c: usize) -> Vec<f64> {
        let p = self
            .model
            .parent_of(c)
            .expect("edge posterior requires a non-root node");
        let pcard = self.model.card(p);
        let ccard = self.model.card(c);
        let mut out = vec![0.0; pcard * ccard];
        let mut sum = 0.0;
        for xp in 0..pcard {
            let t = self.ctx[c][xp];
            if t > 0.0 {
                for xc in 0..ccard {
                    let val = t * self.model.cond(c, xp, xc) * self.up[c][xc];
                    out[xp * ccard + xc] = val;
                    sum += val;
                }
            }
        }
        debug_assert!(sum > 0.0);
        for x in out.iter_mut() {
            *x /= sum;
        }
        out
    }
}

/// Natural-log probability of the evidence; `NEG_INFINITY` for evidence the
/// model rules out.
pub fn record_loglik(model: &LatentTreeModel, evidence: &Evidence) -> Result<f64> {
    let clamps = compile_evidence(model, evidence)?;
    Ok(clamped_loglik(model, &clamps))
}

/// Exact posterior distribution of a latent variable given the evidence.
pub fn posterior(model: &LatentTreeModel, evidence: &Evidence, latent: &str) -> Result<Vec<f64>> {
    let idx = model.index_of(latent)?;
    if model.var(idx).kind != VarKind::Latent {
        return Err(Error::NotLatent(latent.to_string()));
    }
    let clamps = compile_evidence(model, evidence)?;
    let beliefs = propagate(model, &clamps)?;
    Ok(beliefs.node_posterior(idx))
}

/// Exact joint posterior over the two endpoints of a model edge, returned
/// parent-major as a two-variable table.
pub fn edge_posterior(
    model: &LatentTreeModel,
    evidence: &Evidence,
    edge: (&str, &str),
) -> Result<JointTable> {
    let a = model.index_of(edge.0)?;
    let b = model.index_of(edge.1)?;
    let child = if model.parent_of(b) == Some(a) {
        b
    } else if model.parent_of(a) == Some(b) {
        a
    } else {
        return Err(Error::UnknownEdge(edge.0.to_string(), edge.1.to_string()));
    };
    let parent = model.parent_of(child).unwrap();
    let clamps = compile_evidence(model, evidence)?;
    let beliefs = propagate(model, &clamps)?;
    Ok(JointTable {
        variables: vec![
            model.var(parent).name.clone(),
            model.var(child).name.clone(),
        ],
        dims: vec![model.card(parent), model.card(child)],
        values: beliefs.edge_posterior(child),
    })
}

/// Map dataset columns onto model nodes; every dataset variable must be an
/// observed variable of the model.
pub(crate) fn column_mapping(
    model: &LatentTreeModel,
    dataset: &crate::data::DataSet,
) -> Result<Vec<usize>> {
    let mut unknown = Vec::new();
    let mut cols = Vec::with_capacity(dataset.variables().len());
    for name in dataset.variables() {
        match model.index_of(name) {
            Ok(idx) if model.var(idx).kind == VarKind::Observed => cols.push(idx),
            _ => unknown.push(name.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::VariableMismatch(unknown));
    }
    Ok(cols)
}

pub(crate) fn record_clamps(
    model: &LatentTreeModel,
    cols: &[usize],
    record: &[Option<u32>],
) -> Result<Vec<Option<usize>>> {
    let mut clamps = vec![None; model.variables().len()];
    for (&idx, cell) in cols.iter().zip(record) {
        if let Some(v) = cell {
            let state = *v as usize;
            if state >= model.card(idx) {
                return Err(Error::StateOutOfRange {
                    variable: model.var(idx).name.clone(),
                    state,
                    cardinality: model.card(idx),
                });
            }
            clamps[idx] = Some(state);
        }
    }
    Ok(clamps)
}

/// Sum of weighted record log-likelihoods, reduced deterministically so the
/// result does not depend on the number of worker threads.
pub fn dataset_loglik(model: &LatentTreeModel, dataset: &crate::data::DataSet) -> Result<f64> {
    let cols = column_mapping(model, dataset)?;
    // surface per-record state errors before the parallel pass
    for rec in dataset.records() {
        record_clamps(model, &cols, rec)?;
    }
    let items: Vec<(usize, f64)> = dataset.weights().iter().copied().enumerate().collect();
    let records = dataset.records();
    Ok(parallel::chunked_sum(&items, |&(i, w)| {
        let clamps = record_clamps(model, &cols, &records[i]).expect("validated above");
        w * clamped_loglik(model, &clamps)
    }))
}
