//! Shared test support: a brute-force full-joint oracle built from the
//! public model file format (independent of the message-passing code), and
//! seeded random model generators.

#![allow(dead_code)]

use std::collections::HashMap;

use latree::model::{LatentTreeModel, Variable};
use latree::Evidence;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Brute-force joint distribution over every variable of a model, computed
/// by multiplying the serialized tables config by config.
pub struct JointOracle {
    pub names: Vec<String>,
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
}

struct Node {
    card: usize,
    parent: Option<usize>,
    table: Vec<f64>,
}

impl JointOracle {
    pub fn from_model(model: &LatentTreeModel) -> JointOracle {
        let doc: serde_json::Value =
            serde_json::from_str(&latree::persist::to_json_string(model)).unwrap();
        let vars = doc["variables"].as_array().unwrap();
        let names: Vec<String> = vars
            .iter()
            .map(|v| v["name"].as_str().unwrap().to_string())
            .collect();
        let dims: Vec<usize> = vars
            .iter()
            .map(|v| v["cardinality"].as_u64().unwrap() as usize)
            .collect();
        let index: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut nodes: Vec<Option<Node>> = (0..names.len()).map(|_| None).collect();
        for c in doc["cpts"].as_array().unwrap() {
            let i = index[c["node"].as_str().unwrap()];
            nodes[i] = Some(Node {
                card: c["states"].as_u64().unwrap() as usize,
                parent: c["parent"].as_str().map(|p| index[p]),
                table: c["table"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .collect(),
            });
        }
        let nodes: Vec<Node> = nodes.into_iter().map(|n| n.unwrap()).collect();
        let total: usize = dims.iter().product();
        assert!(total <= (1 << 22), "oracle joint too large: {total}");
        let mut probs = vec![0.0; total];
        let mut states = vec![0usize; dims.len()];
        for slot in probs.iter_mut() {
            let mut p = 1.0;
            for (i, node) in nodes.iter().enumerate() {
                let row = match node.parent {
                    None => 0,
                    Some(par) => states[par],
                };
                p *= node.table[row * node.card + states[i]];
            }
            *slot = p;
            for k in (0..states.len()).rev() {
                states[k] += 1;
                if states[k] < dims[k] {
                    break;
                }
                states[k] = 0;
            }
        }
        JointOracle { names, dims, probs }
    }

    pub fn index(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).unwrap()
    }

    fn for_each_config(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut states = vec![0usize; self.dims.len()];
        for &p in &self.probs {
            f(&states, p);
            for k in (0..states.len()).rev() {
                states[k] += 1;
                if states[k] < self.dims[k] {
                    break;
                }
                states[k] = 0;
            }
        }
    }

    /// Probability of a partial assignment (pairs of variable index, state).
    pub fn marginal_prob(&self, assign: &[(usize, usize)]) -> f64 {
        let mut total = 0.0;
        self.for_each_config(|states, p| {
            if assign.iter().all(|&(i, s)| states[i] == s) {
                total += p;
            }
        });
        total
    }

    pub fn record_prob(&self, evidence: &Evidence) -> f64 {
        let assign: Vec<(usize, usize)> = evidence
            .iter()
            .map(|(name, s)| (self.index(name), s))
            .collect();
        self.marginal_prob(&assign)
    }

    pub fn posterior(&self, latent: &str, evidence: &Evidence) -> Vec<f64> {
        let li = self.index(latent);
        let mut assign: Vec<(usize, usize)> = evidence
            .iter()
            .map(|(name, s)| (self.index(name), s))
            .collect();
        let z = self.record_prob(evidence);
        let mut out = Vec::with_capacity(self.dims[li]);
        for s in 0..self.dims[li] {
            assign.push((li, s));
            out.push(self.marginal_prob(&assign) / z);
            assign.pop();
        }
        out
    }

    pub fn mi(&self, a: &str, b: &str) -> f64 {
        let (ia, ib) = (self.index(a), self.index(b));
        let (ca, cb) = (self.dims[ia], self.dims[ib]);
        let mut joint = vec![0.0; ca * cb];
        self.for_each_config(|states, p| {
            joint[states[ia] * cb + states[ib]] += p;
        });
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

    /// I(Z; X_A) over the joint, for the CIC check.
    pub fn joint_mi(&self, z: &str, subset: &[String]) -> f64 {
        let zi = self.index(z);
        let idxs: Vec<usize> = subset.iter().map(|s| self.index(s)).collect();
        let mut table: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        self.for_each_config(|states, p| {
            let key: Vec<usize> = idxs.iter().map(|&i| states[i]).collect();
            table.entry(key).or_insert_with(|| vec![0.0; self.dims[zi]])[states[zi]] += p;
        });
        let mut pz = vec![0.0; self.dims[zi]];
        for dist in table.values() {
            for (s, &p) in dist.iter().enumerate() {
                pz[s] += p;
            }
        }
        let mut mi = 0.0;
        for dist in table.values() {
            let px: f64 = dist.iter().sum();
            for (s, &p) in dist.iter().enumerate() {
                if p > 0.0 {
                    mi += p * (p / (px * pz[s])).ln();
                }
            }
        }
        mi.max(0.0)
    }
}

pub fn dirichlet_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln().max(1e-12)
        })
        .collect();
    let sum: f64 = row.iter().sum();
    for x in &mut row {
        *x /= sum;
    }
    row
}

fn dirichlet_tables<R: Rng>(
    model_vars: &[(String, usize, Option<String>)],
    cards: &HashMap<String, usize>,
    rng: &mut R,
) -> HashMap<String, Vec<f64>> {
    let mut tables = HashMap::new();
    for (name, card, parent) in model_vars {
        let rows = parent.as_ref().map(|p| cards[p]).unwrap_or(1);
        let mut t = Vec::with_capacity(rows * card);
        for _ in 0..rows {
            t.extend(dirichlet_row(rng, *card));
        }
        tables.insert(name.clone(), t);
    }
    tables
}

/// A random latent tree: a random tree over the latents, observed leaves
/// attached at random, extra leaves patched in so every latent stays
/// internal. All tables Dirichlet(1).
pub fn random_tree_model(
    seed: u64,
    n_observed: usize,
    n_latents: usize,
    max_latent_card: usize,
) -> LatentTreeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent_names: Vec<String> = (0..n_latents).map(|i| format!("L{i}")).collect();
    let mut cards: HashMap<String, usize> = HashMap::new();
    let mut vars = Vec::new();
    for name in &latent_names {
        let card = 2 + rng.random_range(0..max_latent_card.saturating_sub(1).max(1));
        cards.insert(name.clone(), card.min(max_latent_card));
        vars.push(Variable::latent(name.clone(), cards[name]));
    }
    let mut edges: Vec<(String, String)> = Vec::new();
    for i in 1..n_latents {
        let parent = rng.random_range(0..i);
        edges.push((latent_names[parent].clone(), latent_names[i].clone()));
    }
    let mut degree: HashMap<String, usize> = latent_names.iter().map(|n| (n.clone(), 0)).collect();
    for (a, b) in &edges {
        *degree.get_mut(a).unwrap() += 1;
        *degree.get_mut(b).unwrap() += 1;
    }
    let mut leaf_id = 0;
    let mut add_leaf = |host: &str,
                        vars: &mut Vec<Variable>,
                        edges: &mut Vec<(String, String)>,
                        cards: &mut HashMap<String, usize>,
                        degree: &mut HashMap<String, usize>| {
        let name = format!("x{leaf_id:02}");
        leaf_id += 1;
        cards.insert(name.clone(), 2);
        vars.push(Variable::observed(name.clone(), 2));
        edges.push((host.to_string(), name));
        *degree.get_mut(host).unwrap() += 1;
    };
    for _ in 0..n_observed {
        let host = latent_names[rng.random_range(0..n_latents)].clone();
        add_leaf(&host, &mut vars, &mut edges, &mut cards, &mut degree);
    }
    for name in &latent_names {
        while degree[name] < 2 {
            add_leaf(name, &mut vars, &mut edges, &mut cards, &mut degree);
        }
    }
    let spec: Vec<(String, usize, Option<String>)> = {
        // parent assignment implied by rooting at L0 via the library itself
        let skeleton = LatentTreeModel::skeleton(vars.clone(), &edges, &latent_names[0]).unwrap();
        skeleton
            .variables()
            .iter()
            .map(|v| {
                let parent = skeleton
                    .edges()
                    .iter()
                    .find(|(_, c)| c == &v.name)
                    .map(|(p, _)| p.clone());
                (v.name.clone(), v.cardinality, parent)
            })
            .collect()
    };
    let tables = dirichlet_tables(&spec, &cards, &mut rng);
    LatentTreeModel::new(vars, &edges, &latent_names[0], tables).unwrap()
}

/// Random LCM with a binary class variable and interior Dirichlet tables.
pub fn random_binary_lcm(seed: u64, n_leaves: usize) -> LatentTreeModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves: Vec<(String, usize)> = (0..n_leaves).map(|i| (format!("x{i}"), 2)).collect();
    let mut vars = vec![Variable::latent("Z", 2)];
    let mut edges = Vec::new();
    let mut tables = HashMap::new();
    tables.insert("Z".to_string(), dirichlet_row(&mut rng, 2));
    for (name, _) in &leaves {
        vars.push(Variable::observed(name.clone(), 2));
        edges.push(("Z".to_string(), name.clone()));
        let mut t = dirichlet_row(&mut rng, 2);
        t.extend(dirichlet_row(&mut rng, 2));
        tables.insert(name.clone(), t);
    }
    LatentTreeModel::new(vars, &edges, "Z", tables).unwrap()
}

/// Evidence over a random subset of the observed variables.
pub fn random_evidence(seed: u64, model: &LatentTreeModel, p_observe: f64) -> Evidence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev = Evidence::new();
    for v in model.variables() {
        if v.is_latent() {
            continue;
        }
        if rng.random::<f64>() < p_observe {
            ev.insert(v.name.clone(), rng.random_range(0..v.cardinality));
        }
    }
    ev
}

/// Two two-leaf islands with 0.85/0.15 loadings and coupling.
pub fn island_generator() -> LatentTreeModel {
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

/// A sixteen-symptom three-cluster generator in the joint-clustering shape:
/// four multi-symptom aspects behind intermediate latents, six singleton
/// aspects wired straight to Z.
pub fn sixteen_symptom_generator() -> (latree::joint::FeatureGroupSpec, LatentTreeModel) {
    use latree::joint::{FeatureGroup, FeatureGroupSpec};
    let group = |label: &str, symptoms: &[&str]| FeatureGroup {
        label: label.to_string(),
        symptoms: symptoms.iter().map(|s| s.to_string()).collect(),
        cardinality: 2,
    };
    let spec = FeatureGroupSpec {
        target_label: "target-class".to_string(),
        groups: vec![
            group("G06", &["thick fur", "greasy fur"]),
            group("G20", &["fat tongue", "tooth-marked tongue"]),
            group(
                "G21",
                &["dizziness", "head swathed", "distending headache", "nausea"],
            ),
            group("G25", &["insomnia", "dreamfulness"]),
            group("G11", &["sticky mouth"]),
            group("G12", &["slippery pulse"]),
            group("G03", &["dizzy headache"]),
            group("G14", &["thirst no drinks"]),
            group("G16", &["urinary incontinence"]),
            group("G19", &["expectoration"]),
        ],
        z_cardinality_range: vec![2, 3, 4],
    };
    let mut vars = vec![Variable::latent("Z", 3)];
    let mut edges = Vec::new();
    let mut tables: HashMap<String, Vec<f64>> = HashMap::new();
    tables.insert("Z".into(), vec![0.42, 0.44, 0.14]);
    // intermediate loading per cluster, then leaf loadings per intermediate
    let intermediates: Vec<(&str, [f64; 3], Vec<&str>)> = vec![
        ("G06", [0.10, 0.85, 0.65], vec!["thick fur", "greasy fur"]),
        (
            "G20",
            [0.08, 0.55, 0.70],
            vec!["fat tongue", "tooth-marked tongue"],
        ),
        (
            "G21",
            [0.20, 0.35, 0.85],
            vec!["dizziness", "head swathed", "distending headache", "nausea"],
        ),
        ("G25", [0.25, 0.70, 0.45], vec!["insomnia", "dreamfulness"]),
    ];
    for (label, load, symptoms) in &intermediates {
        vars.push(Variable::latent(*label, 2));
        edges.push(("Z".to_string(), label.to_string()));
        tables.insert(
            label.to_string(),
            vec![
                1.0 - load[0],
                load[0],
                1.0 - load[1],
                load[1],
                1.0 - load[2],
                load[2],
            ],
        );
        for s in symptoms {
            vars.push(Variable::observed(*s, 2));
            edges.push((label.to_string(), s.to_string()));
            tables.insert(s.to_string(), vec![0.88, 0.12, 0.18, 0.82]);
        }
    }
    let singletons: Vec<(&str, [f64; 3])> = vec![
        ("sticky mouth", [0.05, 0.18, 0.62]),
        ("slippery pulse", [0.27, 0.67, 0.39]),
        ("dizzy headache", [0.02, 0.01, 0.25]),
        ("thirst no drinks", [0.10, 0.30, 0.55]),
        ("urinary incontinence", [0.17, 0.13, 0.65]),
        ("expectoration", [0.26, 0.20, 0.63]),
    ];
    for (name, p) in &singletons {
        vars.push(Variable::observed(*name, 2));
        edges.push(("Z".to_string(), name.to_string()));
        let mut t = Vec::new();
        for &ps in p {
            t.push(1.0 - ps);
            t.push(ps);
        }
        tables.insert(name.to_string(), t);
    }
    let model = LatentTreeModel::new(vars, &edges, "Z", tables).unwrap();
    assert!(model.validate().is_empty());
    (spec, model)
}
