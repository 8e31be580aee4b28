//! Model persistence: a versioned JSON document with variables, undirected
//! edges, the designated root, and one flattened row-major table per node
//! (row index = parent state). Probabilities survive a round trip exactly.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{LatentTreeModel, Variable};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    variables: Vec<Variable>,
    edges: Vec<(String, String)>,
    root: String,
    cpts: Vec<CptDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CptDoc {
    node: String,
    parent: Option<String>,
    parent_states: usize,
    states: usize,
    /// Row-major: entry [p * states + x] = P(node = x | parent = p).
    table: Vec<f64>,
}

fn to_doc(model: &LatentTreeModel) -> ModelDoc {
    let variables = model.variables().to_vec();
    let cpts = variables
        .iter()
        .map(|v| {
            let idx = model.index_of(&v.name).unwrap();
            let parent = model
                .parent_of(idx)
                .map(|p| model.variables()[p].name.clone());
            let table = model.table(idx).to_vec();
            CptDoc {
                node: v.name.clone(),
                parent_states: table.len() / v.cardinality,
                states: v.cardinality,
                parent,
                table,
            }
        })
        .collect();
    ModelDoc {
        format_version: FORMAT_VERSION,
        variables,
        edges: model.edges(),
        root: model.root_name().to_string(),
        cpts,
    }
}

pub fn to_json_string(model: &LatentTreeModel) -> String {
    serde_json::to_string_pretty(&to_doc(model)).expect("model serializes")
}

pub fn save_model(model: &LatentTreeModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_json_string(model) + "\n")?;
    Ok(())
}

pub fn from_json_str(text: &str, path: &str) -> Result<LatentTreeModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::ModelFile {
        path: path.to_string(),
        msg: e.to_string(),
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: doc.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let mut tables = HashMap::new();
    for (i, c) in doc.cpts.iter().enumerate() {
        if c.table.len() != c.parent_states * c.states {
            return Err(Error::ModelFile {
                path: path.to_string(),
                msg: format!(
                    "cpts[{i}].table has {} entries, declared {}x{}",
                    c.table.len(),
                    c.parent_states,
                    c.states
                ),
            });
        }
        if tables.insert(c.node.clone(), c.table.clone()).is_some() {
            return Err(Error::ModelFile {
                path: path.to_string(),
                msg: format!("cpts[{i}].node `{}` appears twice", c.node),
            });
        }
    }
    LatentTreeModel::new(doc.variables, &doc.edges, &doc.root, tables).map_err(|e| {
        Error::ModelFile {
            path: path.to_string(),
            msg: e.to_string(),
        }
    })
}

pub fn load_model(path: &Path) -> Result<LatentTreeModel> {
    // fail on version mismatch before anything else is interpreted
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    if let Ok(probe) = serde_json::from_str::<serde_json::Value>(&text) {
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v as u32 != FORMAT_VERSION => {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    supported: FORMAT_VERSION,
                })
            }
            Some(_) => {}
            None => {
                return Err(Error::ModelFile {
                    path: display,
                    msg: "missing format_version".into(),
                })
            }
        }
    }
    from_json_str(&text, &display)
}

/// Stable content digest of the serialized model (first 16 hex chars).
pub fn model_digest(model: &LatentTreeModel) -> String {
    let mut hasher = Sha256::new();
    hasher.update(to_json_string(model).as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{record_loglik, Evidence};
    use crate::model::VarKind;

    fn sample_model() -> LatentTreeModel {
        let vars = vec![
            Variable::latent("Y", 2),
            Variable::observed("a", 2),
            Variable::observed("b", 3),
        ];
        let edges = vec![("Y".into(), "a".into()), ("Y".into(), "b".into())];
        let mut t = HashMap::new();
        t.insert("Y".into(), vec![0.25, 0.75]);
        t.insert("a".into(), vec![0.9, 0.1, 0.2, 0.8]);
        t.insert("b".into(), vec![0.5, 0.25, 0.25, 0.1, 0.3, 0.6]);
        LatentTreeModel::new(vars, &edges, "Y", t).unwrap()
    }

    #[test]
    fn round_trip_is_exact_and_stable() {
        let m = sample_model();
        let json = to_json_string(&m);
        let loaded = from_json_str(&json, "mem").unwrap();
        assert_eq!(to_json_string(&loaded), json);
        for e in [
            Evidence::new().set("a", 1),
            Evidence::new().set("a", 0).set("b", 2),
        ] {
            let l0 = record_loglik(&m, &e).unwrap();
            let l1 = record_loglik(&loaded, &e).unwrap();
            assert_eq!(l0, l1);
        }
        assert_eq!(model_digest(&m), model_digest(&loaded));
    }

    #[test]
    fn kinds_survive_the_trip() {
        let m = sample_model();
        let loaded = from_json_str(&to_json_string(&m), "mem").unwrap();
        assert_eq!(loaded.variables()[0].kind, VarKind::Latent);
        assert_eq!(loaded.variables()[1].kind, VarKind::Observed);
    }

    #[test]
    fn cycle_in_edges_is_a_load_error_naming_the_cycle() {
        let json = r#"{
          "format_version": 1,
          "variables": [
            {"name":"Y","kind":"latent","cardinality":2},
            {"name":"a","kind":"observed","cardinality":2},
            {"name":"b","kind":"observed","cardinality":2}
          ],
          "edges": [["Y","a"],["Y","b"],["a","b"]],
          "root": "Y",
          "cpts": []
        }"#;
        let err = from_json_str(json, "cyclic.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cycle") || msg.contains("tree"), "{msg}");
    }

    #[test]
    fn unknown_format_version_is_rejected() {
        let json = to_json_string(&sample_model())
            .replace("\"format_version\": 1", "\"format_version\": 99");
        let err = from_json_str(&json, "mem").unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 99, .. }));
    }
}
