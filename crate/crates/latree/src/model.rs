//! Latent tree models: undirected trees of categorical variables with a
//! rooted CPT parameterization. Observed variables sit at the leaves,
//! latent variables at internal nodes. An LCM is the single-latent special
//! case.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};

/// Tolerance for distribution normalization checks.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Observed,
    Latent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub cardinality: usize,
}

impl Variable {
    pub fn observed(name: impl Into<String>, cardinality: usize) -> Self {
        Variable {
            name: name.into(),
            kind: VarKind::Observed,
            cardinality,
        }
    }

    pub fn latent(name: impl Into<String>, cardinality: usize) -> Self {
        Variable {
            name: name.into(),
            kind: VarKind::Latent,
            cardinality,
        }
    }

    pub fn is_latent(&self) -> bool {
        self.kind == VarKind::Latent
    }
}

/// A joint probability table over an ordered list of variables,
/// stored row-major (last variable varies fastest).
#[derive(Debug, Clone)]
pub struct JointTable {
    pub variables: Vec<String>,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl JointTable {
    pub fn get(&self, states: &[usize]) -> f64 {
        debug_assert_eq!(states.len(), self.dims.len());
        let mut idx = 0;
        for (s, d) in states.iter().zip(&self.dims) {
            idx = idx * d + s;
        }
        self.values[idx]
    }
}

#[derive(Debug, Clone)]
pub struct LatentTreeModel {
    vars: Vec<Variable>,
    by_name: HashMap<String, usize>,
    adj: Vec<Vec<usize>>,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Parents-before-children ordering starting at the root.
    order: Vec<usize>,
    /// Root: marginal of length card(root). Non-root node v: conditional
    /// table of length card(parent)*card(v), entry [p*card(v)+x] = P(v=x|parent=p).
    cpts: Vec<Vec<f64>>,
}

impl LatentTreeModel {
    /// Build a model from variables, undirected edges, a root and per-node tables.
    /// Shape errors (non-tree edge sets, missing tables, wrong lengths) are hard
    /// errors; distribution-level problems are left for [`LatentTreeModel::validate`].
    pub fn new(
        vars: Vec<Variable>,
        edges: &[(String, String)],
        root: &str,
        mut tables: HashMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let mut model = Self::skeleton(vars, edges, root)?;
        for &v in &model.order {
            let name = &model.vars[v].name;
            let table = tables.remove(name).ok_or_else(|| Error::CptShape {
                node: name.clone(),
                expected: model.table_len(v),
                got: 0,
            })?;
            if table.len() != model.table_len(v) {
                return Err(Error::CptShape {
                    node: name.clone(),
                    expected: model.table_len(v),
                    got: table.len(),
                });
            }
            model.cpts[v] = table;
        }
        if let Some(extra) = tables.keys().next() {
            return Err(Error::UnknownVariable(extra.clone()));
        }
        Ok(model)
    }

    /// Build a structure with uniform tables; used as an EM starting shape.
    pub fn skeleton(vars: Vec<Variable>, edges: &[(String, String)], root: &str) -> Result<Self> {
        let mut by_name = HashMap::new();
        for (i, v) in vars.iter().enumerate() {
            if v.cardinality == 0 {
                return Err(Error::InvalidConfig(format!(
                    "variable `{}` has cardinality 0",
                    v.name
                )));
            }
            if by_name.insert(v.name.clone(), i).is_some() {
                return Err(Error::DuplicateVariable(v.name.clone()));
            }
        }
        let n = vars.len();
        let mut adj = vec![Vec::new(); n];
        for (a, b) in edges {
            let ia = *by_name
                .get(a)
                .ok_or_else(|| Error::UnknownEdgeEndpoint(a.clone()))?;
            let ib = *by_name
                .get(b)
                .ok_or_else(|| Error::UnknownEdgeEndpoint(b.clone()))?;
            if ia == ib {
                return Err(Error::NotATree(format!("self-loop at `{a}`")));
            }
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        let root_idx = *by_name
            .get(root)
            .ok_or_else(|| Error::UnknownVariable(root.to_string()))?;
        if !vars[root_idx].is_latent() {
            return Err(Error::BadRoot(root.to_string()));
        }
        if edges.len() != n.saturating_sub(1) {
            return Err(Error::NotATree(format!(
                "{} edges for {} variables",
                edges.len(),
                n
            )));
        }
        let (parent, children, order) = orient(&adj, root_idx, &vars)?;
        let mut model = LatentTreeModel {
            vars,
            by_name,
            adj,
            root: root_idx,
            parent,
            children,
            order,
            cpts: Vec::new(),
        };
        model.cpts = (0..n)
            .map(|v| {
                let card = model.vars[v].cardinality;
                let rows = model.table_len(v) / card;
                let mut t = vec![1.0 / card as f64; rows * card];
                t.shrink_to_fit();
                t
            })
            .collect();
        Ok(model)
    }

    /// A latent class model skeleton: one latent root over observed leaves.
    pub fn lcm_skeleton(
        latent_name: &str,
        latent_card: usize,
        leaves: &[(String, usize)],
    ) -> Result<Self> {
        let mut vars = vec![Variable::latent(latent_name, latent_card)];
        let mut edges = Vec::new();
        for (name, card) in leaves {
            vars.push(Variable::observed(name.clone(), *card));
            edges.push((latent_name.to_string(), name.clone()));
        }
        Self::skeleton(vars, &edges, latent_name)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn observed_names(&self) -> Vec<String> {
        self.vars
            .iter()
            .filter(|v| !v.is_latent())
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn latent_names(&self) -> Vec<String> {
        self.vars
            .iter()
            .filter(|v| v.is_latent())
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn root_name(&self) -> &str {
        &self.vars[self.root].name
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for v in 0..self.vars.len() {
            if let Some(p) = self.parent[v] {
                out.push((self.vars[p].name.clone(), self.vars[v].name.clone()));
            }
        }
        out
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Names of the variables adjacent to `name` in the undirected tree.
    pub fn neighbors(&self, name: &str) -> Result<Vec<String>> {
        let idx = self.index_of(name)?;
        Ok(self.adj[idx]
            .iter()
            .map(|&v| self.vars[v].name.clone())
            .collect())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub(crate) fn var(&self, idx: usize) -> &Variable {
        &self.vars[idx]
    }

    pub(crate) fn card(&self, idx: usize) -> usize {
        self.vars[idx].cardinality
    }

    pub(crate) fn root_index(&self) -> usize {
        self.root
    }

    pub(crate) fn parent_of(&self, idx: usize) -> Option<usize> {
        self.parent[idx]
    }

    pub(crate) fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub(crate) fn neighbors_of(&self, idx: usize) -> &[usize] {
        &self.adj[idx]
    }

    pub(crate) fn topo_order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn table(&self, idx: usize) -> &[f64] {
        &self.cpts[idx]
    }

    pub(crate) fn table_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        &mut self.cpts[idx]
    }

    /// Conditional P(v = x | parent = p) (or the root marginal when parent is None).
    pub(crate) fn cond(&self, v: usize, p: usize, x: usize) -> f64 {
        self.cpts[v][p * self.vars[v].cardinality + x]
    }

    fn table_len(&self, v: usize) -> usize {
        let card = self.vars[v].cardinality;
        match self.parent[v] {
            None => card,
            Some(p) => card * self.vars[p].cardinality,
        }
    }

    /// Check every model invariant; returns one description per violation.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.vars.len();
        let edge_count: usize = self.adj.iter().map(|a| a.len()).sum::<usize>() / 2;
        if n > 0 && edge_count != n - 1 {
            out.push(format!(
                "edge set is not a tree: {edge_count} edges for {n} variables"
            ));
        }
        for (i, v) in self.vars.iter().enumerate() {
            let degree = self.adj[i].len();
            match v.kind {
                VarKind::Observed => {
                    if v.cardinality < 2 {
                        out.push(format!(
                            "observed variable `{}` has cardinality {} (< 2)",
                            v.name, v.cardinality
                        ));
                    }
                    if degree != 1 && n > 1 {
                        out.push(format!(
                            "observed variable `{}` has degree {degree} (must be a leaf)",
                            v.name
                        ));
                    }
                }
                VarKind::Latent => {
                    if v.cardinality < 1 {
                        out.push(format!("latent variable `{}` has cardinality 0", v.name));
                    }
                    // A degree-1 latent is an unidentifiable leaf, except in
                    // the two-node model where it is the root over its only
                    // observed child.
                    if degree < 2 && n > 2 {
                        out.push(format!(
                            "latent variable `{}` has degree {degree} (must be internal)",
                            v.name
                        ));
                    }
                }
            }
        }
        if !self.vars[self.root].is_latent() {
            out.push(format!(
                "root `{}` is not latent",
                self.vars[self.root].name
            ));
        }
        for v in 0..n {
            let card = self.vars[v].cardinality;
            let rows = self.cpts[v].len() / card.max(1);
            for r in 0..rows {
                let row = &self.cpts[v][r * card..(r + 1) * card];
                if let Some(bad) = row.iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
                    out.push(format!(
                        "table for `{}`, parent state {r}: entry {bad} is not a probability",
                        self.vars[v].name
                    ));
                    continue;
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > NORM_TOL {
                    out.push(format!(
                        "table for `{}`, parent state {r}: column sums to {sum:.12}",
                        self.vars[v].name
                    ));
                }
            }
        }
        out
    }

    /// Number of independent parameters; the `d(m)` of the BIC penalty.
    pub fn dimension(&self) -> usize {
        let mut d = self.vars[self.root].cardinality - 1;
        for v in 0..self.vars.len() {
            if let Some(p) = self.parent[v] {
                d += (self.vars[v].cardinality - 1) * self.vars[p].cardinality;
            }
        }
        d
    }

    /// Marginal distribution of every node under no evidence.
    pub(crate) fn node_marginals(&self) -> Vec<Vec<f64>> {
        let mut marg: Vec<Vec<f64>> = vec![Vec::new(); self.vars.len()];
        for &v in &self.order {
            match self.parent[v] {
                None => marg[v] = self.cpts[v].clone(),
                Some(p) => {
                    let card = self.vars[v].cardinality;
                    let mut m = vec![0.0; card];
                    for (ps, &pm) in marg[p].clone().iter().enumerate() {
                        for (x, mx) in m.iter_mut().enumerate() {
                            *mx += pm * self.cond(v, ps, x);
                        }
                    }
                    marg[v] = m;
                }
            }
        }
        marg
    }

    /// Re-express the same joint distribution with a different latent root.
    pub fn reroot(&self, new_root: &str) -> Result<LatentTreeModel> {
        let nr = self.index_of(new_root)?;
        if !self.vars[nr].is_latent() {
            return Err(Error::NotLatent(new_root.to_string()));
        }
        if nr == self.root {
            return Ok(self.clone());
        }
        let marg = self.node_marginals();
        let (parent, children, order) = orient(&self.adj, nr, &self.vars)?;
        let mut cpts: Vec<Vec<f64>> = vec![Vec::new(); self.vars.len()];
        cpts[nr] = marg[nr].clone();
        for v in 0..self.vars.len() {
            let Some(u) = parent[v] else { continue };
            if self.parent[v] == Some(u) {
                cpts[v] = self.cpts[v].clone();
            } else {
                // The edge flipped: v was the parent of u. Bayes-invert the
                // old table using the old marginals.
                debug_assert_eq!(self.parent[u], Some(v));
                let cv = self.vars[v].cardinality;
                let cu = self.vars[u].cardinality;
                let mut t = vec![0.0; cu * cv];
                for y in 0..cu {
                    let pu = marg[u][y];
                    if pu > 0.0 {
                        for x in 0..cv {
                            t[y * cv + x] = self.cond(u, x, y) * marg[v][x] / pu;
                        }
                    } else {
                        for x in 0..cv {
                            t[y * cv + x] = 1.0 / cv as f64;
                        }
                    }
                }
                cpts[v] = t;
            }
        }
        Ok(LatentTreeModel {
            vars: self.vars.clone(),
            by_name: self.by_name.clone(),
            adj: self.adj.clone(),
            root: nr,
            parent,
            children,
            order,
            cpts,
        })
    }

    /// Exact joint marginal over a small variable subset, by eliminating the
    /// rest of the tree for every configuration of the subset.
    pub fn marginal(&self, subset: &[String]) -> Result<JointTable> {
        let mut idxs = Vec::with_capacity(subset.len());
        for name in subset {
            let i = self.index_of(name)?;
            if idxs.contains(&i) {
                return Err(Error::DuplicateVariable(name.clone()));
            }
            idxs.push(i);
        }
        let mut size: u128 = 1;
        for &i in &idxs {
            size *= self.vars[i].cardinality as u128;
        }
        if size > (1 << 20) {
            return Err(Error::SubsetTooLarge { size });
        }
        let dims: Vec<usize> = idxs.iter().map(|&i| self.vars[i].cardinality).collect();
        let mut values = vec![0.0; size as usize];
        let mut clamps = vec![None; self.vars.len()];
        let mut states = vec![0usize; idxs.len()];
        for slot in values.iter_mut() {
            for (k, &i) in idxs.iter().enumerate() {
                clamps[i] = Some(states[k]);
            }
            let ll = crate::inference::clamped_loglik(self, &clamps);
            *slot = if ll.is_finite() { ll.exp() } else { 0.0 };
            // row-major increment, last variable fastest
            for k in (0..states.len()).rev() {
                states[k] += 1;
                if states[k] < dims[k] {
                    break;
                }
                states[k] = 0;
            }
        }
        for &i in &idxs {
            clamps[i] = None;
        }
        Ok(JointTable {
            variables: subset.to_vec(),
            dims,
            values,
        })
    }

    /// Draw `n` complete records root-first and drop the latent columns.
    /// Record `i` uses its own ChaCha stream, so generation order is
    /// irrelevant and the output is fully determined by `seed`.
    pub fn forward_sample(&self, n: usize, seed: u64) -> DataSet {
        let observed: Vec<usize> = (0..self.vars.len())
            .filter(|&v| !self.vars[v].is_latent())
            .collect();
        let names: Vec<String> = observed
            .iter()
            .map(|&v| self.vars[v].name.clone())
            .collect();
        let records: Vec<Vec<Option<u32>>> = self
            .sample_all_states(n, seed)
            .into_iter()
            .map(|states| observed.iter().map(|&v| Some(states[v] as u32)).collect())
            .collect();
        DataSet::from_records(names, records, None).expect("sampled records are well-formed")
    }

    /// Complete root-first draws over every variable, latents included.
    pub(crate) fn sample_all_states(&self, n: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut states = vec![0usize; self.vars.len()];
            for &v in &self.order {
                let card = self.vars[v].cardinality;
                let row = match self.parent[v] {
                    None => &self.cpts[v][..],
                    Some(p) => {
                        let ps = states[p];
                        &self.cpts[v][ps * card..(ps + 1) * card]
                    }
                };
                states[v] = sample_categorical(row, &mut rng);
            }
            out.push(states);
        }
        out
    }

    /// A short stable content digest, used to tag derived artifacts.
    pub fn digest(&self) -> String {
        crate::persist::model_digest(self)
    }
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

type Orientation = (Vec<Option<usize>>, Vec<Vec<usize>>, Vec<usize>);

/// Orient the adjacency away from `root`; fails when the edges do not reach
/// every variable or close a cycle (reported with the member names).
fn orient(adj: &[Vec<usize>], root: usize, vars: &[Variable]) -> Result<Orientation> {
    let n = adj.len();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    visited[root] = true;
    queue.push_back(root);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &adj[v] {
            if Some(w) == parent[v] {
                continue;
            }
            if visited[w] {
                let cycle: Vec<&str> = [v, w].iter().map(|&i| vars[i].name.as_str()).collect();
                return Err(Error::NotATree(format!(
                    "cycle through `{}` and `{}`",
                    cycle[0], cycle[1]
                )));
            }
            visited[w] = true;
            parent[w] = Some(v);
            children[v].push(w);
            queue.push_back(w);
        }
    }
    if order.len() != n {
        let missing: Vec<&str> = (0..n)
            .filter(|&i| !visited[i])
            .map(|i| vars[i].name.as_str())
            .collect();
        return Err(Error::NotATree(format!(
            "disconnected from root: {}",
            missing.join(", ")
        )));
    }
    Ok((parent, children, order))
}
