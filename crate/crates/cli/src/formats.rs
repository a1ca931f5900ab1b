//! Session logs, datasets and small text formats.
//!
//! A session document:
//!
//! ```json
//! {"session_id": "s1", "ad_format": "dd_right", "viewport": {"w": 1280, "h": 900},
//!  "ad_box": {"x": 800, "y": 120, "w": 300, "h": 250}, "likert": 4,
//!  "events": [{"t": 0, "x": 10, "y": 20, "ev": "mousemove", "xpath": "/html/body"}]}
//! ```
//!
//! Unknown keys are ignored. A dataset is JSON Lines of the same documents,
//! cleaned, with an extra `label` key (0 or 1).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cursor_attn_core::session::{AdFormat, Label, LabeledSession, RawEvent, Rect, Session};
use cursor_attn_core::timeseries::{encode_timeseries, SEQ_LEN};
use cursor_attn_core::Error as CoreError;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewportDoc {
    pub w: i64,
    pub h: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxDoc {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventDoc {
    pub t: i64,
    pub x: i64,
    pub y: i64,
    pub ev: String,
    #[serde(default)]
    pub xpath: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionDoc {
    pub session_id: String,
    pub ad_format: String,
    pub viewport: ViewportDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ad_box: Option<BoxDoc>,
    pub likert: i64,
    pub events: Vec<EventDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
}

fn non_negative(v: i64, what: &str) -> std::result::Result<u64, CoreError> {
    u64::try_from(v).map_err(|_| CoreError::InvalidValue(format!("{what} must be non-negative, got {v}")))
}

fn positive_u32(v: i64, what: &str) -> std::result::Result<u32, CoreError> {
    match u32::try_from(v) {
        Ok(x) if x > 0 => Ok(x),
        _ => Err(CoreError::InvalidValue(format!("{what} must be a positive pixel count, got {v}"))),
    }
}

impl SessionDoc {
    pub fn into_session(self) -> std::result::Result<Session, CoreError> {
        let ad_format = AdFormat::parse(&self.ad_format)
            .ok_or_else(|| CoreError::InvalidValue(format!("unknown ad_format {:?}", self.ad_format)))?;
        let viewport_w = positive_u32(self.viewport.w, "viewport.w")?;
        let viewport_h = positive_u32(self.viewport.h, "viewport.h")?;
        let ad_box = match self.ad_box {
            Some(b) => {
                Some(Rect { x: b.x, y: b.y, w: positive_u32(b.w, "ad_box.w")?, h: positive_u32(b.h, "ad_box.h")? })
            }
            None => None,
        };
        let likert = u8::try_from(self.likert)
            .ok()
            .filter(|l| (1..=5).contains(l))
            .ok_or_else(|| CoreError::InvalidValue(format!("likert {} outside 1..=5", self.likert)))?;
        let events = self
            .events
            .into_iter()
            .map(|e| {
                let coord = |v: i64, what: &str| {
                    u32::try_from(v).map_err(|_| CoreError::InvalidValue(format!("event {what} {v} out of range")))
                };
                Ok(RawEvent {
                    t_ms: non_negative(e.t, "event t")?,
                    x_px: coord(e.x, "x")?,
                    y_px: coord(e.y, "y")?,
                    event_name: e.ev,
                    xpath: e.xpath,
                })
            })
            .collect::<std::result::Result<Vec<_>, CoreError>>()?;
        Session { session_id: self.session_id, ad_format, viewport_w, viewport_h, ad_box, likert, events }.validated()
    }

    pub fn from_session(s: &Session, label: Option<Label>) -> SessionDoc {
        SessionDoc {
            session_id: s.session_id.clone(),
            ad_format: s.ad_format.as_str().to_string(),
            viewport: ViewportDoc { w: i64::from(s.viewport_w), h: i64::from(s.viewport_h) },
            ad_box: s.ad_box.map(|b| BoxDoc { x: b.x, y: b.y, w: i64::from(b.w), h: i64::from(b.h) }),
            likert: i64::from(s.likert),
            events: s
                .events
                .iter()
                .map(|e| EventDoc {
                    t: e.t_ms as i64,
                    x: i64::from(e.x_px),
                    y: i64::from(e.y_px),
                    ev: e.event_name.clone(),
                    xpath: e.xpath.clone(),
                })
                .collect(),
            label: label.map(|l| i64::from(l.bit())),
        }
    }
}

/// Parse one session document.
pub fn parse_session_log(bytes: &[u8]) -> std::result::Result<Session, CliError> {
    parse_doc(bytes, Path::new("<input>"), 0)
}

fn parse_doc(bytes: &[u8], path: &Path, line: usize) -> Result<Session> {
    let doc: SessionDoc = serde_json::from_slice(bytes).map_err(|e| {
        let at = if line == 0 { e.line() } else { line };
        CliError::malformed(path, at, e.to_string())
    })?;
    doc.into_session().map_err(|source| CliError::InvalidAt { path: path.to_path_buf(), line, source })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn is_lines_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl" || e == "ndjson")
}

/// Documents of one file: JSON Lines for `.jsonl`/`.ndjson`, otherwise a single document.
fn for_each_doc(path: &Path, mut f: impl FnMut(&[u8], usize) -> Result<()>) -> Result<()> {
    let bytes = read(path)?;
    if is_lines_file(path) {
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            f(line, i + 1)?;
        }
        Ok(())
    } else {
        f(&bytes, 0)
    }
}

/// Session files under `input`: the file itself, or every `.json`/`.jsonl`
/// file of a directory in name order.
pub fn session_files(input: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(input).map_err(|e| CliError::io(input, e))?;
    if !meta.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| CliError::io(input, e))? {
        let path = entry.map_err(|e| CliError::io(input, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && matches!(ext, "json" | "jsonl" | "ndjson") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_sessions(input: &Path) -> Result<Vec<Session>> {
    let mut out = Vec::new();
    for file in session_files(input)? {
        for_each_doc(&file, |bytes, line| {
            out.push(parse_doc(bytes, &file, line)?);
            Ok(())
        })?;
    }
    Ok(out)
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::malformed(path, e.line(), e.to_string()))
}

/// Write JSON Lines, one compact record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).expect("serializable");
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    write_jsonl(path, sessions.iter().map(|s| SessionDoc::from_session(s, None)))
}

pub fn write_dataset(path: &Path, sessions: &[LabeledSession]) -> Result<()> {
    write_jsonl(path, sessions.iter().map(|s| SessionDoc::from_session(&s.session, Some(s.label))))
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledSession>> {
    let mut out = Vec::new();
    for_each_doc(path, |bytes, line| {
        let doc: SessionDoc =
            serde_json::from_slice(bytes).map_err(|e| CliError::malformed(path, line, e.to_string()))?;
        let bit = doc.label.ok_or_else(|| CliError::malformed(path, line, "missing key `label`"))?;
        let label = u8::try_from(bit).ok().and_then(Label::from_bit).ok_or_else(|| CliError::InvalidAt {
            path: path.to_path_buf(),
            line,
            source: CoreError::InvalidValue(format!("label {bit} is not 0 or 1")),
        })?;
        let session =
            doc.into_session().map_err(|source| CliError::InvalidAt { path: path.to_path_buf(), line, source })?;
        out.push(LabeledSession { session, label });
        Ok(())
    })?;
    Ok(out)
}

/// CSV with `session_id,x1,y1,...,x50,y50,valid_len,label`.
pub fn timeseries_csv(sessions: &[LabeledSession]) -> Result<String> {
    let mut out = String::from("session_id");
    for i in 1..=SEQ_LEN {
        write!(out, ",x{i},y{i}").unwrap();
    }
    out.push_str(",valid_len,label\n");
    for s in sessions {
        let t = encode_timeseries(s)?;
        out.push_str(&csv_field(&s.session.session_id));
        for row in &t.matrix {
            write!(out, ",{},{}", row[0], row[1]).unwrap();
        }
        writeln!(out, ",{},{}", t.valid_len, t.label.bit()).unwrap();
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read(path)?))
}

/// Session id made safe for file names.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}
