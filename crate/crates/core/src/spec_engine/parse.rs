use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::model::{HttpMethod, OperationDesc, PathParam, SchemaKind, SchemaNode, SpecDocument};
use super::SpecParseError;
use crate::finding::Finding;

const SCHEMA_PREFIX: &str = "#/components/schemas/";
const MAX_SCHEMA_DEPTH: usize = 32;

/// Parse YAML or JSON text into a [`SpecDocument`].
///
/// Structural problems that make the document unusable (bad syntax, no
/// OpenAPI 3 marker, no `paths`) are errors; everything else is left to
/// [`super::validate_spec`].
pub fn parse_spec(text: &str) -> Result<SpecDocument, SpecParseError> {
    if text.trim().is_empty() {
        return Err(SpecParseError::single(Finding::error("1:1", "document is empty")));
    }
    let root = parse_tree(text)?;
    let Value::Object(top) = &root else {
        return Err(SpecParseError::single(Finding::error(
            "1:1",
            "document must be a mapping at the top level",
        )));
    };

    let mut findings = Vec::new();
    let openapi = match top.get("openapi") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => {
            findings.push(Finding::error("openapi", "openapi version marker is not a string"));
            String::new()
        }
        None if top.contains_key("swagger") => {
            findings.push(Finding::error("swagger", "OpenAPI 2.0 (swagger) documents are not supported"));
            String::new()
        }
        None => {
            findings.push(Finding::error("openapi", "missing openapi version marker"));
            String::new()
        }
    };
    if !openapi.is_empty() && !openapi.starts_with("3.") {
        findings.push(Finding::error(
            "openapi",
            format!("unsupported OpenAPI version {openapi}; expected 3.x"),
        ));
    }
    let paths = match top.get("paths") {
        Some(Value::Object(p)) => Some(p),
        Some(_) => {
            findings.push(Finding::error("paths", "paths must be a mapping"));
            None
        }
        None => {
            findings.push(Finding::error("paths", "paths missing"));
            None
        }
    };
    if !findings.is_empty() {
        return Err(SpecParseError { findings });
    }

    let info = top.get("info").and_then(Value::as_object);
    let str_field = |key: &str| {
        info.and_then(|i| i.get(key))
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_owned()
    };

    let resolver = Resolver { root: &root };
    let schemas = root
        .pointer("/components/schemas")
        .and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .map(|(name, v)| (name.clone(), resolver.schema(v, 0, &mut Vec::new())))
                .collect()
        })
        .unwrap_or_default();

    let mut operations = Vec::new();
    for (path, item) in paths.expect("checked above") {
        let Some(item) = resolver.deref(item).as_object() else {
            continue;
        };
        let shared_params = item.get("parameters");
        for method in HttpMethod::ALL {
            if let Some(op) = item.get(method.key()).and_then(Value::as_object) {
                operations.push(resolver.operation(method, path, op, shared_params));
            }
        }
    }

    Ok(SpecDocument {
        raw_text: text.to_owned(),
        openapi,
        title: str_field("title"),
        version: str_field("version"),
        operations,
        schemas,
        root,
    })
}

fn parse_tree(text: &str) -> Result<Value, SpecParseError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| {
            SpecParseError::single(Finding::error(
                format!("{}:{}", e.line(), e.column()),
                format!("invalid JSON: {e}"),
            ))
        });
    }
    let yaml: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| {
        let loc = e
            .location()
            .map(|l| format!("{}:{}", l.line(), l.column()))
            .unwrap_or_else(|| "1:1".to_owned());
        SpecParseError::single(Finding::error(loc, format!("invalid YAML: {e}")))
    })?;
    Ok(yaml_to_json(yaml))
}

/// YAML allows non-string keys (`200:` response codes); JSON does not, so
/// keys are stringified on the way over.
pub(crate) fn yaml_to_json(v: serde_yaml::Value) -> Value {
    use serde_yaml::Value as Y;
    match v {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                n.as_f64()
                    .and_then(serde_json::Number::from_f64)
                    .map_or(Value::Null, Value::Number)
            }
        }
        Y::String(s) => Value::String(s),
        Y::Sequence(seq) => Value::Array(seq.into_iter().map(yaml_to_json).collect()),
        Y::Mapping(m) => {
            let mut out = Map::new();
            for (k, v) in m {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    Y::Null => "null".to_owned(),
                    other => serde_yaml::to_string(&other).unwrap_or_default().trim().to_owned(),
                };
                out.insert(key, yaml_to_json(v));
            }
            Value::Object(out)
        }
        Y::Tagged(t) => yaml_to_json(t.value),
    }
}

struct Resolver<'a> {
    root: &'a Value,
}

impl<'a> Resolver<'a> {
    /// Follow a chain of local `$ref`s; returns the input when it is not a
    /// ref or cannot be resolved.
    fn deref(&self, v: &'a Value) -> &'a Value {
        let mut current = v;
        for _ in 0..16 {
            match current.get("$ref").and_then(Value::as_str) {
                Some(r) if r.starts_with("#/") => match self.root.pointer(&r[1..]) {
                    Some(target) => current = target,
                    None => return current,
                },
                _ => return current,
            }
        }
        current
    }

    fn schema(&self, v: &Value, depth: usize, stack: &mut Vec<String>) -> SchemaNode {
        if depth > MAX_SCHEMA_DEPTH {
            return SchemaNode::of(SchemaKind::Any);
        }
        if let Some(r) = v.get("$ref").and_then(Value::as_str) {
            let name = r.strip_prefix(SCHEMA_PREFIX).map(str::to_owned);
            let target = r.strip_prefix('#').and_then(|p| self.root.pointer(p));
            return match (name, target) {
                (Some(name), Some(target)) => {
                    if stack.contains(&name) {
                        // Recursive schema: stop at the repeated reference.
                        let mut node = SchemaNode::of(SchemaKind::Object);
                        node.ref_name = Some(name);
                        return node;
                    }
                    stack.push(name.clone());
                    let mut node = self.schema(target, depth + 1, stack);
                    stack.pop();
                    node.ref_name = Some(name);
                    node
                }
                (None, Some(target)) => self.schema(target, depth + 1, stack),
                _ => {
                    let mut node = SchemaNode::of(SchemaKind::Any);
                    node.ref_name = Some(r.to_owned());
                    node
                }
            };
        }

        if let Some(parts) = v.get("allOf").and_then(Value::as_array) {
            let mut merged = SchemaNode::of(SchemaKind::Object);
            for part in parts {
                let p = self.schema(part, depth + 1, stack);
                merged.properties.extend(p.properties);
                for r in p.required {
                    if !merged.required.contains(&r) {
                        merged.required.push(r);
                    }
                }
            }
            return merged;
        }

        let declared = match v.get("type") {
            Some(Value::String(s)) => Some(s.as_str()),
            Some(Value::Array(types)) => types
                .iter()
                .filter_map(Value::as_str)
                .find(|t| *t != "null"),
            _ => None,
        };
        let kind = match declared {
            Some("object") => SchemaKind::Object,
            Some("array") => SchemaKind::Array,
            Some("string") => SchemaKind::String,
            Some("integer") => SchemaKind::Integer,
            Some("number") => SchemaKind::Number,
            Some("boolean") => SchemaKind::Boolean,
            Some(_) => SchemaKind::Any,
            None if v.get("properties").is_some() => SchemaKind::Object,
            None if v.get("items").is_some() => SchemaKind::Array,
            None => SchemaKind::Any,
        };

        let mut node = SchemaNode::of(kind);
        if let Some(props) = v.get("properties").and_then(Value::as_object) {
            for (name, p) in props {
                node.properties
                    .insert(name.clone(), self.schema(p, depth + 1, stack));
            }
        }
        if let Some(req) = v.get("required").and_then(Value::as_array) {
            node.required = req.iter().filter_map(Value::as_str).map(str::to_owned).collect();
        }
        if let Some(items) = v.get("items") {
            node.items = Some(Box::new(self.schema(items, depth + 1, stack)));
        }
        node
    }

    fn json_schema_of(&self, content_holder: &Value) -> Option<SchemaNode> {
        let content = self.deref(content_holder).get("content")?.as_object()?;
        let media = content
            .get("application/json")
            .or_else(|| content.iter().find(|(k, _)| k.contains("json")).map(|(_, v)| v))?;
        media.get("schema").map(|s| self.schema(s, 0, &mut Vec::new()))
    }

    fn operation(
        &self,
        method: HttpMethod,
        path: &str,
        op: &Map<String, Value>,
        shared_params: Option<&Value>,
    ) -> OperationDesc {
        let mut path_params: Vec<PathParam> = Vec::new();
        let params = shared_params
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .chain(op.get("parameters").and_then(Value::as_array).into_iter().flatten());
        for p in params {
            let p = self.deref(p);
            if p.get("in").and_then(Value::as_str) != Some("path") {
                continue;
            }
            let Some(name) = p.get("name").and_then(Value::as_str) else {
                continue;
            };
            let ty = p
                .get("schema")
                .map(|s| self.schema(s, 0, &mut Vec::new()).kind.as_str())
                .unwrap_or("string")
                .to_owned();
            // Operation-level parameters override path-level ones.
            path_params.retain(|existing| existing.name != name);
            path_params.push(PathParam {
                name: name.to_owned(),
                ty,
            });
        }

        let mut response_schemas = BTreeMap::new();
        let mut response_codes = Vec::new();
        if let Some(responses) = op.get("responses").and_then(Value::as_object) {
            for (code, resp) in responses {
                response_codes.push(code.clone());
                if let Some(schema) = self.json_schema_of(resp) {
                    response_schemas.insert(code.clone(), schema);
                }
            }
        }

        OperationDesc {
            method,
            path: path.to_owned(),
            operation_id: op.get("operationId").and_then(Value::as_str).map(str::to_owned),
            request_schema: op.get("requestBody").and_then(|b| self.json_schema_of(b)),
            response_schemas,
            response_codes,
            path_params,
        }
    }
}
