//! Two-column `id,<integer>` files used for assignments and ground truth.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

pub fn read_id_table(path: &Path) -> CliResult<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: &str| CliError::Data(format!("{}: line {line}: {msg}", path.display()));
    match lines.next() {
        Some((_, header)) if header.split(',').count() == 2 => {}
        _ => return Err(bad(1, "expected a two-column header")),
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, value) = line
            .split_once(',')
            .ok_or_else(|| bad(idx + 1, "expected 2 fields"))?;
        let value = value
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(idx + 1, "expected a non-negative integer"))?;
        if !seen.insert(id.to_string()) {
            return Err(bad(idx + 1, &format!("duplicate id '{id}'")));
        }
        rows.push((id.to_string(), value));
    }
    Ok(rows)
}

pub fn write_id_table(path: &Path, header: &str, ids: &[String], values: &[usize]) -> CliResult<()> {
    let mut out = format!("id,{header}\n");
    for (id, v) in ids.iter().zip(values) {
        out.push_str(&format!("{id},{v}\n"));
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Values of `table` in the order of `ids`; any id missing on either side is
/// reported.
pub fn join(ids: &[String], table: &[(String, usize)], what: &str) -> CliResult<Vec<usize>> {
    let lookup: HashMap<&str, usize> = table.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let missing: Vec<&str> = ids
        .iter()
        .map(String::as_str)
        .filter(|id| !lookup.contains_key(id))
        .collect();
    let extra: Vec<&str> = table
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| !wanted.contains(id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::Data(format!(
            "join error: {} id(s) missing from {what} [{}]; {} id(s) only in {what} [{}]",
            missing.len(),
            preview(&missing),
            extra.len(),
            preview(&extra)
        )));
    }
    Ok(ids.iter().map(|id| lookup[id.as_str()]).collect())
}

fn preview(ids: &[&str]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... {} more", ids.len() - SHOWN));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn join_orders_by_ids() {
        let table = vec![("b".to_string(), 2), ("a".to_string(), 1)];
        assert_eq!(join(&ids(&["a", "b"]), &table, "truth").unwrap(), vec![1, 2]);
    }

    #[test]
    fn join_lists_missing_ids() {
        let table = vec![("a".to_string(), 1), ("z".to_string(), 3)];
        let err = join(&ids(&["a", "b"]), &table, "truth").unwrap_err().to_string();
        assert!(err.contains("missing from truth [b]"), "{err}");
        assert!(err.contains("only in truth [z]"), "{err}");
    }

    #[test]
    fn preview_truncates() {
        let many: Vec<String> = (0..15).map(|i| i.to_string()).collect();
        let refs: Vec<&str> = many.iter().map(String::as_str).collect();
        assert!(preview(&refs).ends_with("... 5 more"));
    }
}
