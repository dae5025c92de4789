//! Report output: line-oriented `key=value` text by default, one JSON
//! object with `--json`.

use serde_json::Value;

#[derive(Debug, Default)]
pub struct Report {
    fields: Vec<(String, Value)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Into<Value>) {
        self.fields.push((key.to_string(), value.into()));
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            let mut map = serde_json::Map::new();
            for (k, v) in &self.fields {
                map.insert(k.clone(), v.clone());
            }
            serde_json::to_string_pretty(&Value::Object(map)).expect("report serializes")
        } else {
            let mut out = String::new();
            for (k, v) in &self.fields {
                let text = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out.push_str(&format!("{k}={text}\n"));
            }
            out
        }
    }
}
