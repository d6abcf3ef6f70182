use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{OperationDesc, SchemaNode, SpecDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    OpAdded,
    OpRemoved,
    SchemaChanged,
    ParamChanged,
}

impl ChangeKind {
    pub fn inverted(self) -> Self {
        match self {
            ChangeKind::OpAdded => ChangeKind::OpRemoved,
            ChangeKind::OpRemoved => ChangeKind::OpAdded,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub kind: ChangeKind,
    /// Operation key (`"PUT /products/{id}"`) or component schema name.
    pub target: String,
    pub detail: String,
}

/// Semantic difference between two documents: operations added or removed,
/// parameter changes, and schema changes. Component schemas are compared
/// by name; operation bodies that reference the same component are not
/// reported again.
pub fn diff_specs(a: &SpecDocument, b: &SpecDocument) -> Vec<Change> {
    let mut changes = Vec::new();

    let ops_a: BTreeMap<String, &OperationDesc> = a.operations.iter().map(|o| (o.key(), o)).collect();
    let ops_b: BTreeMap<String, &OperationDesc> = b.operations.iter().map(|o| (o.key(), o)).collect();

    for (key, op_a) in &ops_a {
        let Some(op_b) = ops_b.get(key) else {
            changes.push(Change {
                kind: ChangeKind::OpRemoved,
                target: key.clone(),
                detail: format!("operation {key} removed"),
            });
            continue;
        };
        if op_a.path_params != op_b.path_params {
            changes.push(Change {
                kind: ChangeKind::ParamChanged,
                target: key.clone(),
                detail: format!("path parameters of {key} changed"),
            });
        }
        if !optional_same(&op_a.request_schema, &op_b.request_schema) {
            changes.push(Change {
                kind: ChangeKind::SchemaChanged,
                target: key.clone(),
                detail: format!("request body of {key} changed"),
            });
        }
        let codes: std::collections::BTreeSet<&String> = op_a
            .response_schemas
            .keys()
            .chain(op_b.response_schemas.keys())
            .collect();
        for code in codes {
            let sa = op_a.response_schemas.get(code).cloned();
            let sb = op_b.response_schemas.get(code).cloned();
            if !optional_same(&sa, &sb) {
                changes.push(Change {
                    kind: ChangeKind::SchemaChanged,
                    target: key.clone(),
                    detail: format!("{code} response of {key} changed"),
                });
            }
        }
    }
    for key in ops_b.keys() {
        if !ops_a.contains_key(key) {
            changes.push(Change {
                kind: ChangeKind::OpAdded,
                target: key.clone(),
                detail: format!("operation {key} added"),
            });
        }
    }

    let names: std::collections::BTreeSet<&String> = a.schemas.keys().chain(b.schemas.keys()).collect();
    for name in names {
        let same = match (a.schemas.get(name), b.schemas.get(name)) {
            (Some(x), Some(y)) => strip_top_ref(x).same_shape_modulo_refs(&strip_top_ref(y)),
            _ => false,
        };
        if !same {
            changes.push(Change {
                kind: ChangeKind::SchemaChanged,
                target: name.clone(),
                detail: format!("component schema {name} changed"),
            });
        }
    }

    changes
}

fn optional_same(a: &Option<SchemaNode>, b: &Option<SchemaNode>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x.same_shape_modulo_refs(y),
        _ => false,
    }
}

/// Component definitions are compared by content, not by their own name.
fn strip_top_ref(node: &SchemaNode) -> SchemaNode {
    let mut n = node.clone();
    n.ref_name = None;
    n
}
