//! CSV and JSON writers. Every document carries the config that produced it.

use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// Column-oriented numeric table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

fn config_object(config: &RunConfig) -> Value {
    let mut map = Map::new();
    for (k, v) in config.to_lines() {
        map.insert(k, Value::String(v));
    }
    Value::Object(map)
}

impl Table {
    /// Header line, data lines, then the config as `# key = value` comments.
    pub fn to_csv(&self, config: &RunConfig) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(|&x| number(x)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out.push_str("# config\n");
        for (k, v) in config.to_lines() {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }

    pub fn to_json(&self, config: &RunConfig) -> String {
        let mut data = Map::new();
        for (i, name) in self.columns.iter().enumerate() {
            data.insert(name.to_string(), self.rows.iter().map(|r| json!(r[i])).collect());
        }
        document(config, json!({ "columns": self.columns, "data": data }))
    }
}

/// Pretty-printed JSON with the config under `"config"` and the payload's
/// fields alongside it.
pub fn document(config: &RunConfig, payload: Value) -> String {
    let mut root = Map::new();
    root.insert("config".into(), config_object(config));
    if let Value::Object(fields) = payload {
        root.extend(fields);
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(root)).expect("JSON serialises");
    s.push('\n');
    s
}

/// Recovers the config embedded in an output document.
pub fn embedded_config(text: &str) -> Result<RunConfig, CliError> {
    let lines: String = if text.trim_start().starts_with('{') {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::validation(format!("not JSON: {e}")))?;
        let obj = value
            .get("config")
            .and_then(Value::as_object)
            .ok_or_else(|| CliError::validation("document has no config object"))?;
        obj.iter()
            .map(|(k, v)| format!("{k} = {}\n", v.as_str().unwrap_or_default()))
            .collect()
    } else {
        text.lines()
            .skip_while(|l| *l != "# config")
            .skip(1)
            .filter_map(|l| l.strip_prefix("# "))
            .map(|l| format!("{l}\n"))
            .collect()
    };
    RunConfig::parse(&lines, vec![])
}
