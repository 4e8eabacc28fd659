//! Session files: a JSON header line (config and the text it ran on), one
//! JSON line per event record, and a final line with the state hash.
//!
//! Replaying feeds the recorded input records through a fresh engine. A file
//! verifies only if the regenerated log, the final state hash and the
//! re-encoded bytes all match what was recorded. The recorded hash also
//! covers the header, so header fields that never reach the log (a settle
//! window in a Traditional session, say) cannot be edited either.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{Engine, EngineError, EngineEvent, SessionConfig};
use crate::layout::{paginate, LayoutError, Viewport};
use crate::text::{segment_text, TextError};

pub const FORMAT: &str = "gary-session/1";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("corrupt session log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// What a session was run on: enough to rebuild the segmentation and layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRef {
    pub raw_text: String,
    pub max_words: usize,
    pub viewport: Viewport,
    pub sha256: String,
}

impl TextRef {
    pub fn new(raw_text: impl Into<String>, max_words: usize, viewport: Viewport) -> Self {
        let raw_text = raw_text.into();
        let sha256 = hex::encode(Sha256::digest(raw_text.as_bytes()));
        Self { raw_text, max_words, viewport, sha256 }
    }

    /// Segments, paginates and opens a fresh engine.
    pub fn open(&self, config: SessionConfig) -> Result<Engine> {
        let seg = segment_text(&self.raw_text, self.max_words)?;
        let pages = paginate(&seg, &self.viewport)?;
        Ok(Engine::new(Arc::new(seg), pages, config)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub config: SessionConfig,
    pub text: TextRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Trailer {
    state_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub events: Vec<EngineEvent>,
    /// [`session_hash`] of the header and the final engine.
    pub state_hash: String,
}

/// SHA-256 over the header line and the engine's state hash.
pub fn session_hash(header: &SessionHeader, engine: &Engine) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(header).expect("headers serialize"));
    h.update(b"\n");
    h.update(engine.state_hash().as_bytes());
    hex::encode(h.finalize())
}

impl SessionRecord {
    pub fn from_engine(engine: &Engine, text: TextRef) -> Self {
        let header = SessionHeader { format: FORMAT.to_string(), config: *engine.config(), text };
        Self { state_hash: session_hash(&header, engine), header, events: engine.log().to_vec() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_line(&mut out, &self.header);
        for ev in &self.events {
            push_line(&mut out, ev);
        }
        push_line(&mut out, &Trailer { state_hash: self.state_hash.clone() });
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| SessionError::CorruptLog(msg);
        let text = std::str::from_utf8(bytes).map_err(|e| corrupt(e.to_string()))?;
        let body = text.strip_suffix('\n').ok_or_else(|| corrupt("missing final newline".into()))?;
        let lines: Vec<&str> = body.split('\n').collect();
        if lines.len() < 2 {
            return Err(corrupt("missing header or hash line".into()));
        }
        let header: SessionHeader =
            serde_json::from_str(lines[0]).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(corrupt(format!("unknown format {:?}", header.format)));
        }
        let trailer: Trailer = serde_json::from_str(lines[lines.len() - 1])
            .map_err(|e| corrupt(format!("hash line: {e}")))?;
        let events = lines[1..lines.len() - 1]
            .iter()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| corrupt(format!("record {}: {e}", i + 1))))
            .collect::<Result<Vec<EngineEvent>>>()?;
        Ok(Self { header, events, state_hash: trailer.state_hash })
    }
}

fn push_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("session records serialize");
    out.push(b'\n');
}

/// Feeds the input records of a session through a fresh engine.
pub fn replay(header: &SessionHeader, events: &[EngineEvent]) -> Result<Engine> {
    let mut engine = header.text.open(header.config)?;
    for ev in events.iter().filter(|e| e.is_input()) {
        engine.apply(ev)?;
    }
    Ok(engine)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail(String),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        *self == Verdict::Pass
    }
}

/// Re-executes a session file and compares it with what was recorded.
/// Unparseable files are `CorruptLog` errors; parseable files that do not
/// reproduce are a `Fail` verdict.
pub fn verify(bytes: &[u8]) -> Result<Verdict> {
    let record = SessionRecord::parse(bytes)?;
    let text_sha = hex::encode(Sha256::digest(record.header.text.raw_text.as_bytes()));
    if text_sha != record.header.text.sha256 {
        return Ok(Verdict::Fail("text digest does not match the embedded text".into()));
    }
    let engine = match replay(&record.header, &record.events) {
        Ok(engine) => engine,
        Err(e) => return Ok(Verdict::Fail(format!("replay rejected an input: {e}"))),
    };
    if let Some(i) = engine.log().iter().zip(&record.events).position(|(a, b)| a != b) {
        return Ok(Verdict::Fail(format!("record {} differs from the replayed log", i + 1)));
    }
    if engine.log().len() != record.events.len() {
        return Ok(Verdict::Fail(format!(
            "replay produced {} records, file has {}",
            engine.log().len(),
            record.events.len()
        )));
    }
    let hash = session_hash(&record.header, &engine);
    if hash != record.state_hash {
        return Ok(Verdict::Fail(format!("final state hash {hash} != recorded {}", record.state_hash)));
    }
    let regenerated = SessionRecord::from_engine(&engine, record.header.text.clone());
    if regenerated.header != record.header || regenerated.to_bytes() != bytes {
        return Ok(Verdict::Fail("file is not in canonical form".into()));
    }
    Ok(Verdict::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ControlAction, Mode};

    fn recorded() -> Vec<u8> {
        let text = TextRef::new("Le anguille nuotano. Poi dormono tranquille nel mare.", 5, Viewport::default());
        let mut engine = text.open(SessionConfig::new(Mode::Traditional)).unwrap();
        engine.control(0.0, ControlAction::Play).unwrap();
        let mut t = 0.0;
        while !engine.is_finished() {
            t += 1000.0 / 60.0;
            engine.tick(t).unwrap();
        }
        SessionRecord::from_engine(&engine, text).to_bytes()
    }

    #[test]
    fn unmodified_log_passes() {
        assert_eq!(verify(&recorded()).unwrap(), Verdict::Pass);
    }

    #[test]
    fn perturbed_timestamp_fails() {
        let bytes = recorded();
        let text = String::from_utf8(bytes).unwrap();
        let perturbed = text.replacen(r#"{"t_ms":50.0,"kind":"Tick"}"#, r#"{"t_ms":50.5,"kind":"Tick"}"#, 1);
        assert_ne!(perturbed, text);
        assert!(!verify(perturbed.as_bytes()).unwrap().passed());
    }

    #[test]
    fn header_fields_outside_the_log_are_covered() {
        let text = String::from_utf8(recorded()).unwrap();
        // The settle window never matters in a Traditional session.
        let edited = text.replacen(r#""settle_ms":1500.0"#, r#""settle_ms":1600.0"#, 1);
        assert_ne!(edited, text);
        assert!(!verify(edited.as_bytes()).unwrap().passed());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = recorded();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(verify(cut), Err(SessionError::CorruptLog(_))));
        assert!(matches!(verify(b""), Err(SessionError::CorruptLog(_))));
    }

    #[test]
    fn parse_round_trip() {
        let bytes = recorded();
        let record = SessionRecord::parse(&bytes).unwrap();
        assert_eq!(record.to_bytes(), bytes);
        assert_eq!(record.header.format, FORMAT);
    }
}
