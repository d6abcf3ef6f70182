use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Patch,
    Delete,
}

impl HttpMethod {
    pub const ALL: [HttpMethod; 5] = [
        HttpMethod::Get,
        HttpMethod::Post,
        HttpMethod::Put,
        HttpMethod::Patch,
        HttpMethod::Delete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Post => "POST",
            HttpMethod::Put => "PUT",
            HttpMethod::Patch => "PATCH",
            HttpMethod::Delete => "DELETE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
    }

    pub(crate) fn key(self) -> &'static str {
        match self {
            HttpMethod::Get => "get",
            HttpMethod::Post => "post",
            HttpMethod::Put => "put",
            HttpMethod::Patch => "patch",
            HttpMethod::Delete => "delete",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Object,
    Array,
    String,
    Integer,
    Number,
    Boolean,
    /// Untyped or composite (`oneOf`, `anyOf`) schemas, and unresolved refs.
    Any,
}

impl SchemaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::Object => "object",
            SchemaKind::Array => "array",
            SchemaKind::String => "string",
            SchemaKind::Integer => "integer",
            SchemaKind::Number => "number",
            SchemaKind::Boolean => "boolean",
            SchemaKind::Any => "any",
        }
    }
}

/// Structural subset of a JSON schema, with local `$ref`s resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaNode {
    pub kind: SchemaKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, SchemaNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Box<SchemaNode>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<String>,
    /// Component name when this node came from `#/components/schemas/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_name: Option<String>,
}

impl SchemaNode {
    pub fn of(kind: SchemaKind) -> Self {
        Self {
            kind,
            properties: BTreeMap::new(),
            items: None,
            required: Vec::new(),
            ref_name: None,
        }
    }

    pub fn object<I, K>(props: I, required: &[&str]) -> Self
    where
        I: IntoIterator<Item = (K, SchemaNode)>,
        K: Into<String>,
    {
        Self {
            properties: props.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            required: required.iter().map(|s| s.to_string()).collect(),
            ..Self::of(SchemaKind::Object)
        }
    }

    pub fn array(items: SchemaNode) -> Self {
        Self {
            items: Some(Box::new(items)),
            ..Self::of(SchemaKind::Array)
        }
    }

    /// `required` must name declared properties.
    pub fn required_is_subset(&self) -> bool {
        self.required.iter().all(|r| self.properties.contains_key(r))
            && self.properties.values().all(SchemaNode::required_is_subset)
            && self.items.as_deref().is_none_or(SchemaNode::required_is_subset)
    }

    /// Structural equality that treats two references to the same component
    /// as equal without looking inside them.
    pub fn same_shape_modulo_refs(&self, other: &SchemaNode) -> bool {
        if let (Some(a), Some(b)) = (&self.ref_name, &other.ref_name) {
            return a == b;
        }
        if self.kind != other.kind || self.ref_name != other.ref_name {
            return false;
        }
        let req_a: BTreeSet<&String> = self.required.iter().collect();
        let req_b: BTreeSet<&String> = other.required.iter().collect();
        if req_a != req_b || self.properties.len() != other.properties.len() {
            return false;
        }
        for (k, a) in &self.properties {
            match other.properties.get(k) {
                Some(b) if a.same_shape_modulo_refs(b) => {}
                _ => return false,
            }
        }
        match (&self.items, &other.items) {
            (None, None) => true,
            (Some(a), Some(b)) => a.same_shape_modulo_refs(b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathParam {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationDesc {
    pub method: HttpMethod,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_schema: Option<SchemaNode>,
    /// Status code to JSON body schema, for responses that declare one.
    #[serde(default)]
    pub response_schemas: BTreeMap<String, SchemaNode>,
    /// Every declared response code, including ones without a body.
    #[serde(default)]
    pub response_codes: Vec<String>,
    #[serde(default)]
    pub path_params: Vec<PathParam>,
}

impl OperationDesc {
    pub fn key(&self) -> String {
        format!("{} {}", self.method, self.path)
    }

    /// `{name}` placeholders in the path template, in order.
    pub fn template_params(&self) -> Vec<String> {
        template_params(&self.path)
    }

    /// True when the last path segment is a template parameter.
    pub fn targets_item(&self) -> bool {
        self.path
            .rsplit('/')
            .next()
            .is_some_and(|s| s.starts_with('{') && s.ends_with('}'))
    }
}

pub fn template_params(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else { break };
        out.push(rest[start + 1..start + len].to_owned());
        rest = &rest[start + len + 1..];
    }
    out
}

/// A parsed OpenAPI 3.x document.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecDocument {
    pub raw_text: String,
    pub openapi: String,
    pub title: String,
    pub version: String,
    pub operations: Vec<OperationDesc>,
    pub schemas: BTreeMap<String, SchemaNode>,
    /// The whole document as JSON, for checks that walk it.
    pub root: Value,
}

impl SpecDocument {
    /// YAML rendering of the document tree.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&self.root).expect("JSON value renders as YAML")
    }

    pub fn operation(&self, method: HttpMethod, path: &str) -> Option<&OperationDesc> {
        self.operations
            .iter()
            .find(|o| o.method == method && o.path == path)
    }
}
