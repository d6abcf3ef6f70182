use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// JSON-encoded argument object, exactly as the model produced it.
    pub arguments: String,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            arguments: arguments.to_string(),
        }
    }

    pub fn parsed_arguments(&self) -> Result<serde_json::Map<String, Value>, String> {
        match serde_json::from_str::<Value>(&self.arguments) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(format!("arguments of {} are not a JSON object", self.name)),
            Err(e) => Err(format!("arguments of {} are not valid JSON: {e}", self.name)),
        }
    }
}

/// One message of a conversation, serialized in the chat-completions wire
/// shape (`role`, `content`, `tool_calls`, `tool_call_id`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "WireMessage", from = "WireMessage")]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    pub tool_calls: Vec<ToolCall>,
    pub tool_call_id: Option<String>,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_calls(content: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            tool_calls: calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    /// Per-turn invariants; cross-turn references are checked by
    /// [`validate_transcript`].
    pub fn validate(&self) -> Result<(), String> {
        if self.content.is_empty() && self.tool_calls.is_empty() {
            return Err("turn has neither content nor tool calls".into());
        }
        if !self.tool_calls.is_empty() && self.role != Role::Assistant {
            return Err("only assistant turns may carry tool calls".into());
        }
        match (self.role, &self.tool_call_id) {
            (Role::Tool, None) => Err("tool turn without tool_call_id".into()),
            (Role::Tool, Some(_)) => Ok(()),
            (_, Some(_)) => Err("tool_call_id on a non-tool turn".into()),
            _ => Ok(()),
        }
    }
}

/// Check every turn plus the rule that tool turns answer an earlier
/// assistant tool call.
pub fn validate_transcript(turns: &[ChatTurn]) -> Result<(), String> {
    let mut issued: Vec<&str> = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        turn.validate().map_err(|e| format!("turn {i}: {e}"))?;
        for call in &turn.tool_calls {
            issued.push(&call.id);
        }
        if let Some(id) = &turn.tool_call_id {
            if !issued.contains(&id.as_str()) {
                return Err(format!("turn {i}: tool_call_id {id} answers no earlier call"));
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct WireMessage {
    role: Role,
    #[serde(default)]
    content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tool_calls: Vec<WireToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_call_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct WireToolCall {
    id: String,
    #[serde(rename = "type", default = "function_kind")]
    kind: String,
    function: WireFunction,
}

#[derive(Serialize, Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: String,
}

fn function_kind() -> String {
    "function".to_owned()
}

impl From<ChatTurn> for WireMessage {
    fn from(t: ChatTurn) -> Self {
        WireMessage {
            role: t.role,
            content: Some(t.content),
            tool_calls: t
                .tool_calls
                .into_iter()
                .map(|c| WireToolCall {
                    id: c.id,
                    kind: function_kind(),
                    function: WireFunction {
                        name: c.name,
                        arguments: c.arguments,
                    },
                })
                .collect(),
            tool_call_id: t.tool_call_id,
        }
    }
}

impl From<WireMessage> for ChatTurn {
    fn from(w: WireMessage) -> Self {
        ChatTurn {
            role: w.role,
            content: w.content.unwrap_or_default(),
            tool_calls: w
                .tool_calls
                .into_iter()
                .map(|c| ToolCall {
                    id: c.id,
                    name: c.function.name,
                    arguments: c.function.arguments,
                })
                .collect(),
            tool_call_id: w.tool_call_id,
        }
    }
}

/// A function the model may call. `parameters` is a JSON-schema object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolSchema {
    /// The `{"type":"function","function":{...}}` envelope used on the wire.
    pub fn to_wire(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }

    pub fn from_wire(value: &Value) -> Option<ToolSchema> {
        if value.get("type")?.as_str()? != "function" {
            return None;
        }
        let f = value.get("function")?;
        Some(ToolSchema {
            name: f.get("name")?.as_str()?.to_owned(),
            description: f.get("description")?.as_str()?.to_owned(),
            parameters: f.get("parameters")?.clone(),
        })
    }

    /// Check an argument object against `parameters`: required keys present
    /// and declared property types respected.
    pub fn check_arguments(&self, args: &serde_json::Map<String, Value>) -> Vec<String> {
        let mut problems = Vec::new();
        let required = self
            .parameters
            .get("required")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for r in required.iter().filter_map(Value::as_str) {
            if !args.contains_key(r) {
                problems.push(format!("missing required argument \"{r}\""));
            }
        }
        let props = self.parameters.get("properties").and_then(Value::as_object);
        for (key, value) in args {
            let declared = props.and_then(|p| p.get(key));
            match declared {
                None => {
                    if self.parameters.get("additionalProperties") == Some(&Value::Bool(false)) {
                        problems.push(format!("unexpected argument \"{key}\""));
                    }
                }
                Some(schema) => {
                    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
                        if !json_type_matches(ty, value) {
                            problems.push(format!("argument \"{key}\" should be {ty}"));
                        }
                    }
                }
            }
        }
        problems
    }
}

pub(crate) fn json_type_matches(ty: &str, value: &Value) -> bool {
    match ty {
        "string" => value.is_string(),
        "integer" => value.is_i64() || value.is_u64(),
        "number" => value.is_number(),
        "boolean" => value.is_boolean(),
        "object" => value.is_object(),
        "array" => value.is_array(),
        "null" => value.is_null(),
        _ => true,
    }
}

/// How the model is allowed to pick tools for one request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolChoice {
    #[default]
    Auto,
    /// Force a call to the named function.
    Function(String),
}
