use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Manifest, QAItem, SCHEMA_VERSION};

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: String,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prng: Option<String>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

/// Parses the line-delimited manifest format. The header line is optional;
/// an empty input yields an empty manifest.
pub fn parse_manifest(text: &str) -> Result<Manifest, CorpusError> {
    let mut manifest = Manifest::new(Vec::new());
    let mut ids = HashSet::new();
    let mut seen_record = false;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if !seen_record && value.get("schema_version").is_some() && value.get("id").is_none() {
            let header: Header = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
                line: lineno,
                reason: format!("bad header: {e}"),
            })?;
            manifest.schema_version = header.schema_version;
            manifest.seed = header.seed;
            manifest.prng = header.prng;
            seen_record = true;
            continue;
        }
        seen_record = true;
        let item: QAItem = serde_json::from_value(value).map_err(|e| CorpusError::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        item.validate()?;
        if !ids.insert(item.id.clone()) {
            return Err(CorpusError::invalid(&item.id, format!("duplicate id (line {lineno})")));
        }
        manifest.items.push(item);
    }
    Ok(manifest)
}

/// Canonical text form: header line, then one item per line.
pub fn render_manifest(m: &Manifest) -> Result<String, CorpusError> {
    m.validate()?;
    let header = Header {
        schema_version: if m.schema_version.is_empty() {
            SCHEMA_VERSION.to_string()
        } else {
            m.schema_version.clone()
        },
        seed: m.seed,
        prng: m.prng.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for item in &m.items {
        out.push_str(&serde_json::to_string(item).expect("item serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let text = render_manifest(m)?;
    write_atomic(path.as_ref(), text.as_bytes())?;
    Ok(())
}

/// Writes to a temp file in the destination directory, then renames over
/// the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{Decision, Stage, StageRecord};

    #[test]
    fn empty_file_is_empty_manifest() {
        let m = parse_manifest("").unwrap();
        assert!(m.is_empty());
        assert_eq!(m.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn single_record_keeps_id() {
        let line = serde_json::to_string(&item("clip-7", "v.mp4", "why?", 2)).unwrap();
        let m = parse_manifest(&line).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.items[0].id, "clip-7");
    }

    #[test]
    fn answer_index_at_len_is_validation_error() {
        let mut it = item("x", "v.mp4", "why?", 4);
        it.answer_index = 4;
        let line = serde_json::to_string(&it).unwrap();
        match parse_manifest(&line) {
            Err(CorpusError::Validation { item_id, .. }) => assert_eq!(item_id, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let good = serde_json::to_string(&item("a", "v", "q", 2)).unwrap();
        let text = format!("{good}\n{{not json\n");
        match parse_manifest(&text) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn field_order_is_fixed() {
        let line = serde_json::to_string(&item("a", "v", "q", 2)).unwrap();
        let keys: Vec<&str> = ["id", "video", "dimension", "group", "question", "options", "answer_index", "provenance"]
            .into_iter()
            .collect();
        let mut last = 0;
        for k in keys {
            let pos = line.find(&format!("\"{k}\"")).unwrap();
            assert!(pos >= last, "{k} out of order in {line}");
            last = pos;
        }
    }

    #[test]
    fn save_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut items = vec![item("a", "v1", "q1", 2), item("b", "v2", "q2", 3), item("c", "v3", "q3", 4)];
        items[1].push_record(StageRecord::new(Stage::AudioFilter, Decision::Kept, ts()).with("similarity", 0.1234567891234));
        let mut m = Manifest::new(items);
        m.seed = Some(42);
        let p1 = dir.path().join("one.jsonl");
        let p2 = dir.path().join("two.jsonl");
        save_manifest(&m, &p1).unwrap();
        let back = load_manifest(&p1).unwrap();
        assert_eq!(back, m);
        save_manifest(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn save_refuses_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(vec![item("a", "v", "q", 2), item("a", "v", "q", 2)]);
        let path = dir.path().join("m.jsonl");
        assert!(matches!(save_manifest(&m, &path), Err(CorpusError::Validation { .. })));
        assert!(!path.exists());
    }
}
