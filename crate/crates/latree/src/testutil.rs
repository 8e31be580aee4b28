//! Hand-built models shared by unit tests.

use std::collections::HashMap;

use crate::model::{LatentTreeModel, Variable};

/// Three-cluster LCM over the seven published joint-clustering symptoms,
/// prior (0.42, 0.44, 0.14).
pub(crate) fn seven_symptom_model() -> LatentTreeModel {
    let rows: Vec<(&str, [f64; 3])> = vec![
        ("greasy tongue fur", [0.03, 0.86, 0.60]),
        ("sticky or greasy feel in mouth", [0.05, 0.18, 0.62]),
        ("slippery pulse", [0.27, 0.67, 0.39]),
        ("urinary incontinence", [0.17, 0.13, 0.65]),
        ("dizzy headache", [0.02, 0.00, 0.25]),
        ("expectoration", [0.26, 0.20, 0.63]),
        ("dizziness", [0.45, 0.42, 0.80]),
    ];
    let mut vars = vec![Variable::latent("Z", 3)];
    let mut edges = Vec::new();
    let mut tables = HashMap::new();
    tables.insert("Z".to_string(), vec![0.42, 0.44, 0.14]);
    for (name, p) in &rows {
        vars.push(Variable::observed(*name, 2));
        edges.push(("Z".to_string(), name.to_string()));
        let mut t = Vec::new();
        for &ps in p {
            t.push(1.0 - ps);
            t.push(ps);
        }
        tables.insert(name.to_string(), t);
    }
    LatentTreeModel::new(vars, &edges, "Z", tables).unwrap()
}
