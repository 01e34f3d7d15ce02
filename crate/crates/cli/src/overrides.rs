//! `--override key.path=value` handling over the parsed TOML tree.

use anyhow::{bail, Context};
use toml::Value;

/// Apply one `dotted.key=value` override. The value is parsed as TOML
/// (numbers, booleans, arrays, strings); bare words fall back to strings.
pub fn apply_override(root: &mut Value, spec: &str) -> anyhow::Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override '{spec}' must look like key.path=value"))?;
    let path = path.trim();
    if path.is_empty() {
        bail!("override '{spec}' has an empty key");
    }
    let parsed: Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v exists"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override '{path}': '{}' is not a table", parts[..i].join(".")))?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    unreachable!("loop always returns on the last part");
}
