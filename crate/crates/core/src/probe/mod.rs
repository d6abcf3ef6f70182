//! Contract probes: a request plan derived from the spec, executed against
//! the running service, with responses checked against declared schemas.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::finding::Finding;
use crate::runtime_tools::{run_curl_command, HttpProbeRequest, HttpProbeResponse, ToolEnv};
use crate::spec_engine::{list_crud_operations, HttpMethod, OperationDesc, SchemaKind, SchemaNode, SpecDocument};

pub const PROBE_REPORT_FILE: &str = "probe_report.json";
pub const DEFAULT_EXPECT_STATUS: [u16; 3] = [200, 201, 204];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("cannot synthesize a value for {location}: schema kind is {kind}")]
    Unsupported { location: String, kind: &'static str },
    #[error("path parameter \"{param}\" of {operation} has no value source")]
    Unbindable { param: String, operation: String },
    #[error("ambiguous identifier in the response of {operation}: {candidates:?}")]
    AmbiguousIdentifier { operation: String, candidates: Vec<String> },
    #[error("specification has no operations")]
    NoOperations,
}

/// Deterministic example value for `schema`. `seed` picks variants of
/// numeric values; equal inputs give equal output.
pub fn synthesize_payload(schema: &SchemaNode, seed: u64) -> Result<Value, ProbeError> {
    synth(schema, "value", "$", seed)
}

fn synth(schema: &SchemaNode, field: &str, location: &str, seed: u64) -> Result<Value, ProbeError> {
    Ok(match schema.kind {
        SchemaKind::String => Value::String(format!("sample-{field}")),
        SchemaKind::Integer => json!(1 + (seed % 1000) as i64),
        SchemaKind::Number => json!(1.0 + (seed % 1000) as f64),
        SchemaKind::Boolean => Value::Bool(true),
        SchemaKind::Array => {
            let items = schema.items.as_deref().ok_or_else(|| ProbeError::Unsupported {
                location: location.to_owned(),
                kind: "array without items",
            })?;
            Value::Array(vec![synth(items, field, &format!("{location}[0]"), seed)?])
        }
        SchemaKind::Object => {
            let mut obj = Map::new();
            for (name, prop) in &schema.properties {
                obj.insert(name.clone(), synth(prop, name, &format!("{location}.{name}"), seed)?);
            }
            Value::Object(obj)
        }
        SchemaKind::Any => {
            return Err(ProbeError::Unsupported {
                location: location.to_owned(),
                kind: "any",
            })
        }
    })
}

/// Structural check of `value` against `schema`: kinds and required
/// properties. Extra properties are allowed.
pub fn check_value(value: &Value, schema: &SchemaNode, location: &str) -> Vec<Finding> {
    let mut out = Vec::new();
    check_into(value, schema, location, &mut out);
    out
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn check_into(value: &Value, schema: &SchemaNode, location: &str, out: &mut Vec<Finding>) {
    let ok = match schema.kind {
        SchemaKind::Any => true,
        SchemaKind::Object => value.is_object(),
        SchemaKind::Array => value.is_array(),
        SchemaKind::String => value.is_string(),
        SchemaKind::Integer => value.is_i64() || value.is_u64(),
        SchemaKind::Number => value.is_number(),
        SchemaKind::Boolean => value.is_boolean(),
    };
    if !ok {
        out.push(Finding::error(
            location,
            format!("expected {}, found {}", schema.kind.as_str(), kind_of(value)),
        ));
        return;
    }
    match value {
        Value::Object(obj) => {
            for name in &schema.required {
                if !obj.contains_key(name) {
                    out.push(Finding::error(
                        location,
                        format!("missing required property \"{name}\""),
                    ));
                }
            }
            for (name, prop) in &schema.properties {
                if let Some(v) = obj.get(name) {
                    check_into(v, prop, &format!("{location}.{name}"), out);
                }
            }
        }
        Value::Array(items) => {
            if let Some(item_schema) = schema.items.as_deref() {
                for (i, v) in items.iter().enumerate() {
                    check_into(v, item_schema, &format!("{location}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Findings for a response body against its declared schema.
pub fn check_response(body: &str, schema: &SchemaNode) -> Vec<Finding> {
    match serde_json::from_str::<Value>(body) {
        Ok(v) => check_value(&v, schema, "$"),
        Err(_) => vec![Finding::error("$", "body not JSON")],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Binding {
    Capture { name: String },
    Literal { value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capture {
    /// Binding name later steps refer to.
    pub name: String,
    /// Response property holding the value.
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub operation: String,
    pub method: HttpMethod,
    pub path: String,
    /// URL still carries `{param}` placeholders.
    pub request: HttpProbeRequest,
    #[serde(default)]
    pub bindings: BTreeMap<String, Binding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<Capture>,
    pub expect_status: BTreeSet<u16>,
    /// Status code to expected body schema.
    #[serde(default)]
    pub response_schemas: BTreeMap<String, SchemaNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub base_url: String,
    pub seed: u64,
    pub steps: Vec<ProbeStep>,
}

/// Declared 2xx codes, or the default set when there are none.
fn expected_codes(op: &OperationDesc) -> BTreeSet<u16> {
    let mut set = BTreeSet::new();
    for code in &op.response_codes {
        if let Ok(n) = code.parse::<u16>() {
            if (200..300).contains(&n) {
                set.insert(n);
            }
        } else if code.eq_ignore_ascii_case("2XX") {
            set.extend(DEFAULT_EXPECT_STATUS);
        }
    }
    if set.is_empty() {
        set.extend(DEFAULT_EXPECT_STATUS);
    }
    set
}

fn success_schema(op: &OperationDesc) -> Option<&SchemaNode> {
    op.response_schemas
        .iter()
        .filter(|(code, _)| code.starts_with('2'))
        .map(|(_, s)| s)
        .next()
}

/// `"id"`, else the one required integer/string property ending in "id".
fn identifier_field(op: &OperationDesc) -> Result<Option<String>, ProbeError> {
    let Some(schema) = success_schema(op) else {
        return Ok(None);
    };
    if schema.kind != SchemaKind::Object {
        return Ok(None);
    }
    if schema.properties.contains_key("id") {
        return Ok(Some("id".to_owned()));
    }
    let candidates: Vec<String> = schema
        .required
        .iter()
        .filter(|name| name.to_ascii_lowercase().ends_with("id"))
        .filter(|name| {
            schema
                .properties
                .get(*name)
                .is_some_and(|p| matches!(p.kind, SchemaKind::Integer | SchemaKind::String))
        })
        .cloned()
        .collect();
    match candidates.len() {
        0 => Ok(None),
        1 => Ok(candidates.into_iter().next()),
        _ => Err(ProbeError::AmbiguousIdentifier {
            operation: op.key(),
            candidates,
        }),
    }
}

/// Path up to (not including) the `/{param}` segment.
fn collection_of(path: &str, param: &str) -> String {
    let marker = format!("/{{{param}}}");
    match path.find(&marker) {
        Some(i) => path[..i].to_owned(),
        None => path.to_owned(),
    }
}

fn capture_name(collection: &str) -> String {
    let last = collection
        .rsplit('/')
        .find(|s| !s.is_empty() && !s.starts_with('{'))
        .unwrap_or("resource");
    format!("{last}_id")
}

/// One step per operation in CRUD order, with path parameters bound to
/// identifiers captured from earlier create steps.
pub fn derive_probes(doc: &SpecDocument, base_url: &str, seed: u64) -> Result<ProbePlan, ProbeError> {
    let ops = list_crud_operations(doc);
    if ops.is_empty() {
        return Err(ProbeError::NoOperations);
    }
    let base = base_url.trim_end_matches('/');
    // Collection path to capture name, filled as create steps are planned.
    let mut captures: BTreeMap<String, String> = BTreeMap::new();
    let mut steps = Vec::new();

    for op in &ops {
        let mut bindings = BTreeMap::new();
        for param in op.template_params() {
            let collection = collection_of(&op.path, &param);
            match captures.get(&collection) {
                Some(name) => {
                    bindings.insert(param, Binding::Capture { name: name.clone() });
                }
                None => {
                    return Err(ProbeError::Unbindable {
                        param,
                        operation: op.key(),
                    })
                }
            }
        }

        let mut request = HttpProbeRequest::new(op.method.as_str(), format!("{base}{}", op.path));
        if let Some(schema) = &op.request_schema {
            let body = synthesize_payload(schema, seed)?;
            request = request.with_json_body(body.to_string());
        }

        let capture = if op.method == HttpMethod::Post && op.template_params().is_empty() {
            identifier_field(op)?.map(|field| {
                let name = capture_name(&op.path);
                captures.insert(op.path.clone(), name.clone());
                Capture { name, field }
            })
        } else {
            None
        };

        steps.push(ProbeStep {
            operation: op.key(),
            method: op.method,
            path: op.path.clone(),
            request,
            bindings,
            capture,
            expect_status: expected_codes(op),
            response_schemas: op.response_schemas.clone(),
        });
    }
    Ok(ProbePlan {
        base_url: base.to_owned(),
        seed,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub step_index: usize,
    pub operation: String,
    pub sent: HttpProbeRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub received: Option<HttpProbeResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub status_ok: bool,
    #[serde(default)]
    pub schema_findings: Vec<Finding>,
}

impl ProbeOutcome {
    pub fn passed(&self) -> bool {
        self.status_ok && self.schema_findings.is_empty()
    }
}

fn capture_value(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Execute the steps in order. Failures are recorded and execution goes on.
pub fn execute_plan(plan: &ProbePlan, env: &ToolEnv<'_>) -> Vec<ProbeOutcome> {
    let mut captured: BTreeMap<String, String> = BTreeMap::new();
    let mut outcomes = Vec::new();
    for (step_index, step) in plan.steps.iter().enumerate() {
        let mut sent = step.request.clone();
        let mut missing = None;
        for (param, binding) in &step.bindings {
            let value = match binding {
                Binding::Literal { value } => Some(value.clone()),
                Binding::Capture { name } => captured.get(name).cloned(),
            };
            match value {
                Some(v) => sent.url = sent.url.replace(&format!("{{{param}}}"), &v),
                None => missing = Some(param.clone()),
            }
        }
        if let Some(param) = missing {
            outcomes.push(ProbeOutcome {
                step_index,
                operation: step.operation.clone(),
                sent,
                received: None,
                error: Some(format!("no captured value for path parameter \"{param}\"")),
                status_ok: false,
                schema_findings: Vec::new(),
            });
            continue;
        }

        let outcome = match run_curl_command(env, &sent) {
            Ok(resp) => {
                let status_ok = step.expect_status.contains(&resp.status);
                let schema_findings = step
                    .response_schemas
                    .get(&resp.status.to_string())
                    .map(|s| check_response(&resp.body, s))
                    .unwrap_or_default();
                if let (true, Some(cap)) = (status_ok, &step.capture) {
                    let value = serde_json::from_str::<Value>(&resp.body)
                        .ok()
                        .and_then(|v| v.get(&cap.field).and_then(capture_value));
                    if let Some(v) = value {
                        captured.insert(cap.name.clone(), v);
                    }
                }
                ProbeOutcome {
                    step_index,
                    operation: step.operation.clone(),
                    sent,
                    received: Some(resp),
                    error: None,
                    status_ok,
                    schema_findings,
                }
            }
            Err(e) => ProbeOutcome {
                step_index,
                operation: step.operation.clone(),
                sent,
                received: None,
                error: Some(e.to_string()),
                status_ok: false,
                schema_findings: Vec::new(),
            },
        };
        outcomes.push(outcome);
    }
    outcomes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub plan: ProbePlan,
    pub outcomes: Vec<ProbeOutcome>,
    pub passed: usize,
    pub failed: usize,
}

impl ProbeReport {
    pub fn new(plan: ProbePlan, outcomes: Vec<ProbeOutcome>) -> Self {
        let passed = outcomes.iter().filter(|o| o.passed()).count();
        let failed = outcomes.len() - passed;
        Self {
            plan,
            outcomes,
            passed,
            failed,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table, one row per outcome.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<3} {:<32} {:>6} {:<6} FINDINGS", "#", "OPERATION", "STATUS", "RESULT");
        for o in &self.outcomes {
            let status = o
                .received
                .as_ref()
                .map_or_else(|| "-".to_owned(), |r| r.status.to_string());
            let detail = match (&o.error, o.schema_findings.first()) {
                (Some(e), _) => e.clone(),
                (None, Some(f)) => format!("{} ({} total)", f, o.schema_findings.len()),
                (None, None) => String::new(),
            };
            let _ = writeln!(
                out,
                "{:<3} {:<32} {:>6} {:<6} {}",
                o.step_index + 1,
                o.operation,
                status,
                if o.passed() { "ok" } else { "FAIL" },
                detail
            );
        }
        out
    }
}

pub fn write_probe_report(workspace: &Path, report: &ProbeReport) -> io::Result<()> {
    fs::write(workspace.join(PROBE_REPORT_FILE), report.to_json())
}

pub fn read_probe_report(workspace: &Path) -> io::Result<ProbeReport> {
    let text = fs::read_to_string(workspace.join(PROBE_REPORT_FILE))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec_engine::parse_spec;

    const PRODUCT: &str = include_str!("../../tests/fixtures/product_spec.yml");

    #[test]
    fn product_payload() {
        let doc = parse_spec(PRODUCT).unwrap();
        let schema = &doc.schemas["NewProduct"];
        let v = synthesize_payload(schema, 0).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["description", "name", "price", "quantity"]);
        assert!(v["price"].is_f64());
        assert_eq!(v["name"], "sample-name");
        assert!(check_value(&v, schema, "$").is_empty());
    }

    #[test]
    fn simple_payloads() {
        assert_eq!(synthesize_payload(&SchemaNode::of(SchemaKind::Object), 7).unwrap(), json!({}));
        let arr = SchemaNode::array(SchemaNode::of(SchemaKind::Integer));
        assert_eq!(synthesize_payload(&arr, 0).unwrap(), json!([1]));
        assert_eq!(synthesize_payload(&arr, 7).unwrap(), json!([8]));
        assert_eq!(synthesize_payload(&arr, 1007).unwrap(), json!([8]));
        assert!(synthesize_payload(&SchemaNode::of(SchemaKind::Any), 0).is_err());
    }

    #[test]
    fn product_plan() {
        let doc = parse_spec(PRODUCT).unwrap();
        let plan = derive_probes(&doc, "http://localhost:3000/", 0).unwrap();
        let ops: Vec<&str> = plan.steps.iter().map(|s| s.operation.as_str()).collect();
        assert_eq!(
            ops,
            ["POST /products", "GET /products", "PUT /products/{id}", "DELETE /products/{id}"]
        );
        assert_eq!(plan.steps[0].capture.as_ref().unwrap().field, "id");
        let name = plan.steps[0].capture.as_ref().unwrap().name.clone();
        for s in &plan.steps[2..] {
            assert_eq!(s.bindings["id"], Binding::Capture { name: name.clone() });
        }
        assert_eq!(plan.steps[0].expect_status, BTreeSet::from([201]));
        assert_eq!(plan.steps[3].expect_status, BTreeSet::from([204]));
        assert_eq!(plan.steps[2].request.url, "http://localhost:3000/products/{id}");
        assert_eq!(plan, derive_probes(&doc, "http://localhost:3000/", 0).unwrap());
    }

    #[test]
    fn unbindable_parameter() {
        let text = "openapi: 3.0.0\ninfo: {title: t, version: '1'}\npaths:\n  /things/{key}:\n    put:\n      parameters:\n        - {name: key, in: path, required: true, schema: {type: string}}\n      responses:\n        '200': {description: ok}\n";
        let err = derive_probes(&parse_spec(text).unwrap(), "http://h:1", 0).unwrap_err();
        assert_eq!(
            err,
            ProbeError::Unbindable {
                param: "key".into(),
                operation: "PUT /things/{key}".into()
            }
        );
    }

    #[test]
    fn get_only_and_default_codes() {
        let text = "openapi: 3.0.0\ninfo: {title: t, version: '1'}\npaths:\n  /items:\n    get:\n      responses:\n        default: {description: ok}\n";
        let plan = derive_probes(&parse_spec(text).unwrap(), "http://h:1", 0).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert!(plan.steps[0].capture.is_none());
        assert_eq!(plan.steps[0].expect_status, BTreeSet::from(DEFAULT_EXPECT_STATUS));
    }

    #[test]
    fn response_checks() {
        let doc = parse_spec(PRODUCT).unwrap();
        let product = &doc.schemas["Product"];
        assert!(check_response("[]", &SchemaNode::array(product.clone())).is_empty());
        let missing = check_response(r#"{"id":1,"name":"a","quantity":2}"#, product);
        assert_eq!(missing.len(), 1);
        assert!(missing[0].message.contains("\"price\""));
        let wrong = check_response(r#"{"id":"x","name":"a","price":1.5,"quantity":2}"#, product);
        assert_eq!(wrong.len(), 1);
        assert_eq!(wrong[0].location, "$.id");
        assert_eq!(check_response("<html>", product)[0].message, "body not JSON");
    }
}
