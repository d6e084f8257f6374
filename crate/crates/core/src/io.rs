//! File formats: line-delimited event logs, per-user state snapshots,
//! inventories, and report output.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventRecord, Inventory, Product, UserId, UserSessionState};
use crate::sim::SessionRow;

pub const SNAPSHOT_VERSION: &str = "v1";

const EVENT_FIELDS: [&str; 5] = ["user_id", "product_id", "event_kind", "dwell_seconds", "timestamp"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ParseMode {
    /// Malformed lines and unknown fields are errors.
    #[default]
    Strict,
    /// Malformed lines are skipped and counted; unknown fields are ignored.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestedEvents {
    pub records: Vec<EventRecord>,
    pub skipped: usize,
}

fn parse_event_line(line: &str, mode: ParseMode) -> std::result::Result<EventRecord, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let object = value.as_object().ok_or("expected a JSON object")?;
    if mode == ParseMode::Strict {
        if let Some(key) = object.keys().find(|k| !EVENT_FIELDS.contains(&k.as_str())) {
            return Err(format!("unknown field `{key}`"));
        }
    }
    let record: EventRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

/// Parses one event per line. Blank lines are ignored. Line numbers in
/// errors are 1-based.
pub fn parse_events(reader: impl Read, mode: ParseMode) -> Result<IngestedEvents> {
    let mut out = IngestedEvents::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event_line(&line, mode) {
            Ok(record) => out.records.push(record),
            Err(message) if mode == ParseMode::Strict => {
                return Err(Error::Parse {
                    line: line_no,
                    message,
                })
            }
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}

pub fn ingest_events(path: &Path, mode: ParseMode) -> Result<IngestedEvents> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(file, mode)
}

pub fn write_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    write_jsonl(path, events)
}

pub fn to_json_lines<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_text(path, &to_json_lines(records)?)
}

pub fn to_pretty_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_pretty_json(value)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Inventory file: a JSON array of products.
pub fn load_inventory(path: &Path) -> Result<Inventory> {
    let products: Vec<Product> = read_json(path)?;
    Inventory::new(products)
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    version: &'static str,
    #[serde(flatten)]
    state: &'a UserSessionState,
}

#[derive(Deserialize)]
struct SnapshotIn {
    version: String,
    #[serde(flatten)]
    state: UserSessionState,
}

pub fn snapshot_to_json(state: &UserSessionState) -> Result<String> {
    to_pretty_json(&SnapshotOut {
        version: SNAPSHOT_VERSION,
        state,
    })
}

pub fn snapshot_from_json(text: &str) -> Result<UserSessionState> {
    let snapshot: SnapshotIn = serde_json::from_str(text)?;
    if snapshot.version != SNAPSHOT_VERSION {
        return Err(Error::UnsupportedVersion(snapshot.version));
    }
    Ok(snapshot.state)
}

/// User ids become file names, so they are limited to a safe alphabet.
fn snapshot_path(dir: &Path, user_id: &UserId) -> Result<PathBuf> {
    let id = user_id.as_str();
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if !ok {
        return Err(Error::InvalidEvent(format!(
            "user id `{id}` cannot be used as a snapshot file name"
        )));
    }
    Ok(dir.join(format!("{id}.json")))
}

pub fn save_state(dir: &Path, state: &UserSessionState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&snapshot_path(dir, &state.user_id)?, &snapshot_to_json(state)?)
}

pub fn load_state(dir: &Path, user_id: &UserId) -> Result<Option<UserSessionState>> {
    let path = snapshot_path(dir, user_id)?;
    match fs::read_to_string(&path) {
        Ok(text) => snapshot_from_json(&text).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Every `*.json` snapshot in `dir`, keyed by user. A missing directory is
/// treated as empty.
pub fn load_states(dir: &Path) -> Result<BTreeMap<UserId, UserSessionState>> {
    let mut states = BTreeMap::new();
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(states),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let state = snapshot_from_json(&text)?;
            states.insert(state.user_id.clone(), state);
        }
    }
    Ok(states)
}

/// Per-session CSV: call_index, variant, user_id, freshness_sliding,
/// freshness_alg3, clicks, adds.
pub fn rows_to_csv(rows: &[SessionRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_rows_csv(path: &Path, rows: &[SessionRow]) -> Result<()> {
    let text = rows_to_csv(rows)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EventKind;

    const LOG: &str = r#"{"user_id":"u","product_id":"a","event_kind":"Served","timestamp":1}
{"user_id":"u","product_id":"a","event_kind":"Clicked","timestamp":2}
{"user_id":"u","product_id":"a","event_kind":"Dwell","dwell_seconds":30.0,"timestamp":3}
"#;

    #[test]
    fn parses_well_formed_log() {
        let parsed = parse_events(LOG.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.records[2].event_kind, EventKind::Dwell);
        assert_eq!(parsed.records[2].dwell_seconds, Some(30.0));
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn malformed_line_strict_and_lenient() {
        let mut lines: Vec<&str> = LOG.lines().collect();
        lines.insert(1, "{not json");
        let text = lines.join("\n");
        assert!(matches!(
            parse_events(text.as_bytes(), ParseMode::Strict),
            Err(Error::Parse { line: 2, .. })
        ));
        let parsed = parse_events(text.as_bytes(), ParseMode::Lenient).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn unknown_fields_depend_on_mode() {
        let line = r#"{"user_id":"u","event_kind":"Served","timestamp":1,"extra":true}"#;
        assert!(parse_events(line.as_bytes(), ParseMode::Strict).is_err());
        let parsed = parse_events(line.as_bytes(), ParseMode::Lenient).unwrap();
        assert_eq!(parsed.records.len(), 1);
    }

    #[test]
    fn dwell_field_is_validated_on_read() {
        let line = r#"{"user_id":"u","product_id":"a","event_kind":"Dwell","timestamp":1}"#;
        assert!(parse_events(line.as_bytes(), ParseMode::Strict).is_err());
        let line = r#"{"user_id":"u","product_id":"a","event_kind":"Clicked","dwell_seconds":2,"timestamp":1}"#;
        assert!(parse_events(line.as_bytes(), ParseMode::Strict).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_version() {
        let inv = Inventory::new(vec![Product::new("a", "X"), Product::new("b", "Y")]).unwrap();
        let mut state = UserSessionState::new("u1", &inv, 3).unwrap();
        state.prioritized.insert("a".into());
        let text = snapshot_to_json(&state).unwrap();
        assert!(text.contains(r#""version": "v1""#));
        assert_eq!(snapshot_from_json(&text).unwrap(), state);
        let bad = text.replace("\"v1\"", "\"v0\"");
        assert!(matches!(snapshot_from_json(&bad), Err(Error::UnsupportedVersion(_))));
    }

    #[test]
    fn state_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inv = Inventory::new(vec![Product::new("a", "X")]).unwrap();
        let state = UserSessionState::new("u-1", &inv, 2).unwrap();
        save_state(dir.path(), &state).unwrap();
        assert_eq!(load_state(dir.path(), &"u-1".into()).unwrap(), Some(state.clone()));
        assert_eq!(load_state(dir.path(), &"nobody".into()).unwrap(), None);
        assert_eq!(load_states(dir.path()).unwrap().len(), 1);
        assert!(load_state(dir.path(), &"../x".into()).is_err());
    }
}
