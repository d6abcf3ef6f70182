use serde_json::Value;

use super::model::{HttpMethod, SpecDocument};
use crate::finding::Finding;

fn op_location(path: &str, method: HttpMethod) -> String {
    format!("paths[\"{path}\"].{}", method.key())
}

/// Structural checks: version marker, info block, at least one path, local
/// references resolvable, path parameters declared. Pure in `doc`.
pub fn validate_spec(doc: &SpecDocument) -> Vec<Finding> {
    let mut findings = Vec::new();

    if !doc.openapi.starts_with("3.") {
        findings.push(Finding::error(
            "openapi",
            format!("unsupported OpenAPI version \"{}\"", doc.openapi),
        ));
    }

    match doc.root.get("info") {
        Some(Value::Object(info)) => {
            for key in ["title", "version"] {
                if !info.get(key).is_some_and(Value::is_string) {
                    findings.push(Finding::error(format!("info.{key}"), format!("info.{key} missing")));
                }
            }
        }
        _ => findings.push(Finding::error("info", "info block missing")),
    }

    let paths = doc.root.get("paths").and_then(Value::as_object);
    match paths {
        Some(p) if !p.is_empty() => {
            for (path, item) in p {
                if !path.starts_with('/') {
                    findings.push(Finding::error(
                        format!("paths[\"{path}\"]"),
                        "path must start with \"/\"",
                    ));
                }
                if let Some(item) = item.as_object() {
                    for unsupported in ["head", "options", "trace"] {
                        if item.contains_key(unsupported) {
                            findings.push(Finding::warning(
                                format!("paths[\"{path}\"].{unsupported}"),
                                format!("{} operations are ignored", unsupported.to_uppercase()),
                            ));
                        }
                    }
                }
            }
        }
        _ => findings.push(Finding::error("paths", "no paths defined")),
    }

    check_refs(&doc.root, &doc.root, "#", &mut findings);

    for op in &doc.operations {
        let loc = op_location(&op.path, op.method);
        let template = op.template_params();
        for name in &template {
            if !op.path_params.iter().any(|p| &p.name == name) {
                findings.push(Finding::error(
                    loc.clone(),
                    format!("path parameter \"{name}\" is not declared"),
                ));
            }
        }
        for p in &op.path_params {
            if !template.contains(&p.name) {
                findings.push(Finding::warning(
                    loc.clone(),
                    format!("declared path parameter \"{}\" does not appear in the path", p.name),
                ));
            }
        }
        if op.response_codes.is_empty() {
            findings.push(Finding::warning(loc, "operation declares no responses"));
        }
    }

    findings
}

fn check_refs(root: &Value, node: &Value, pointer: &str, findings: &mut Vec<Finding>) {
    match node {
        Value::Object(map) => {
            if let Some(Value::String(r)) = map.get("$ref") {
                if let Some(local) = r.strip_prefix('#') {
                    if root.pointer(local).is_none() {
                        findings.push(Finding::error(pointer, format!("unresolved reference {r}")));
                    }
                } else {
                    findings.push(Finding::error(
                        pointer,
                        format!("external reference {r} is not supported"),
                    ));
                }
            }
            for (k, v) in map {
                let escaped = k.replace('~', "~0").replace('/', "~1");
                check_refs(root, v, &format!("{pointer}/{escaped}"), findings);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                check_refs(root, v, &format!("{pointer}/{i}"), findings);
            }
        }
        _ => {}
    }
}
