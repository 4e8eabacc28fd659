//! The session service protocol, without any I/O.
//!
//! Frames are UTF-8 JSON objects with a mandatory `type` field. The server
//! owns a logical clock that advances one frame per [`WireSession::tick`];
//! client timestamps are only checked for monotonicity and every input is
//! stamped with the server clock on arrival.

use std::sync::Arc;

use gary_core::engine::{ControlAction, Engine, EngineError, Mode, PauseReason, Playback, SessionConfig};
use gary_core::gaze::{FixationDetector, FixationParams, GazeSample};
use gary_core::harness::{session_metrics, Passage, SessionMetrics};
use gary_core::layout::{Line, PageLayout, Point};
use gary_core::session::{SessionRecord, TextRef};
use serde::{Deserialize, Serialize};

pub const FRAME_HZ: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub mode: Mode,
    pub config: SessionConfig,
    pub frame_ms: f64,
    pub page_count: usize,
    pub phrase_count: usize,
    pub controls: Vec<ControlAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagePayload {
    pub layout: PageLayout,
    /// Text of every word on the page, in order.
    pub words: Vec<String>,
    /// Inclusive word spans of the page's phrases.
    pub phrases: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaybackStatus {
    Playing,
    Paused,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub t_ms: f64,
    pub page_index: usize,
    pub phrase_index: usize,
    /// Inclusive global word range; absent once finished.
    pub highlight: Option<[usize; 2]>,
    pub playback: PlaybackStatus,
    pub pause_reason: Option<PauseReason>,
}

impl StatePayload {
    fn same_view(&self, other: &StatePayload) -> bool {
        (self.page_index, self.phrase_index, self.highlight, self.playback, self.pause_reason)
            == (other.page_index, other.phrase_index, other.highlight, other.playback, other.pause_reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
    /// The server closes the connection after a fatal error.
    pub fatal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello { session_id: String, payload: HelloPayload },
    Page { session_id: String, payload: PagePayload },
    State { session_id: String, seq: u64, payload: StatePayload },
    Metrics { session_id: String, payload: SessionMetrics },
    Error { session_id: String, payload: ErrorPayload },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazePayload {
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPayload {
    pub action: ControlAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageUpdatePayload {
    pub page: usize,
    pub lines: Vec<Line>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Gaze {
        #[serde(default)]
        session_id: Option<String>,
        payload: GazePayload,
    },
    Control {
        #[serde(default)]
        session_id: Option<String>,
        payload: ControlPayload,
    },
    Page {
        #[serde(default)]
        session_id: Option<String>,
        payload: PageUpdatePayload,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// One connected client's session: engine, fixation detector and the
/// outgoing sequence counter.
#[derive(Debug)]
pub struct WireSession {
    id: String,
    text: TextRef,
    engine: Engine,
    detector: FixationDetector,
    frame: u64,
    frame_ms: f64,
    /// Latest gaze sample received during the current frame.
    pending: Option<GazeSample>,
    last_client_t: Option<f64>,
    seq: u64,
    last_state: Option<StatePayload>,
    page_sent: Option<usize>,
    metrics_sent: bool,
    closed: bool,
}

impl WireSession {
    pub fn new(id: impl Into<String>, passage: &Passage, mode: Mode) -> Result<Self, EngineError> {
        Self::with_config(id, passage, SessionConfig::new(mode), FixationParams::default())
    }

    pub fn with_config(id: impl Into<String>, passage: &Passage, cfg: SessionConfig, fixation: FixationParams) -> Result<Self, EngineError> {
        let engine = Engine::new(Arc::clone(&passage.seg), passage.pages.clone(), cfg)?;
        Ok(Self {
            id: id.into(),
            text: passage.text.clone(),
            engine,
            detector: FixationDetector::new(fixation, 100.0),
            frame: 0,
            frame_ms: 1000.0 / FRAME_HZ,
            pending: None,
            last_client_t: None,
            seq: 0,
            last_state: None,
            page_sent: None,
            metrics_sent: false,
            closed: false,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn frame_ms(&self) -> f64 {
        self.frame_ms
    }

    /// Server time of the last completed frame.
    pub fn now_ms(&self) -> f64 {
        self.frame as f64 * self.frame_ms
    }

    pub fn record(&self) -> SessionRecord {
        SessionRecord::from_engine(&self.engine, self.text.clone())
    }

    /// Greeting sent right after the connection opens.
    pub fn open(&mut self) -> Vec<ServerMessage> {
        let cfg = *self.engine.config();
        let controls = match cfg.mode {
            Mode::Gary => vec![ControlAction::Play, ControlAction::Pause],
            Mode::Traditional => {
                vec![ControlAction::Play, ControlAction::Pause, ControlAction::SkipForward, ControlAction::SkipBackward]
            }
        };
        let hello = ServerMessage::Hello {
            session_id: self.id.clone(),
            payload: HelloPayload {
                mode: cfg.mode,
                config: cfg,
                frame_ms: self.frame_ms,
                page_count: self.engine.pages().len(),
                phrase_count: self.engine.segmented().phrases.len(),
                controls,
            },
        };
        let mut out = vec![hello];
        self.sync(&mut out);
        out
    }

    /// Parses and handles one text frame.
    pub fn handle_text(&mut self, frame: &str) -> Vec<ServerMessage> {
        if self.closed {
            return Vec::new();
        }
        match serde_json::from_str::<ClientMessage>(frame) {
            Ok(msg) => self.handle(msg),
            Err(e) => self.fail("bad_message", format!("unreadable frame: {e}")),
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        if self.closed {
            return Vec::new();
        }
        let sid = match &msg {
            ClientMessage::Gaze { session_id, .. }
            | ClientMessage::Control { session_id, .. }
            | ClientMessage::Page { session_id, .. } => session_id.clone(),
        };
        if sid.as_deref().is_some_and(|s| s != self.id) {
            return self.fail("wrong_session", format!("this connection serves session {}", self.id));
        }
        match msg {
            ClientMessage::Gaze { payload: g, .. } => {
                if !g.t_ms.is_finite() || self.last_client_t.is_some_and(|last| g.t_ms <= last) {
                    return self.fail("non_monotonic_gaze", format!("gaze t_ms {} does not increase", g.t_ms));
                }
                self.last_client_t = Some(g.t_ms);
                let point = (g.valid && g.x.is_finite() && g.y.is_finite()).then(|| Point::new(g.x, g.y));
                self.pending = Some(GazeSample { t_ms: 0.0, point });
                Vec::new()
            }
            ClientMessage::Control { payload, .. } => {
                let t = self.engine.state().clock_ms;
                let mut out = Vec::new();
                match self.engine.control(t, payload.action) {
                    Ok(_) => {}
                    Err(EngineError::UnsupportedControl(a)) => out.push(self.error(
                        "unsupported_control",
                        format!("{a:?} is not available in {} mode", self.engine.config().mode),
                        false,
                    )),
                    Err(e) => out.push(self.error("control_rejected", e.to_string(), false)),
                }
                self.sync(&mut out);
                out
            }
            ClientMessage::Page { payload, .. } => {
                let t = self.engine.state().clock_ms;
                match self.engine.update_layout(t, payload.page, payload.lines) {
                    Ok(_) => {
                        let mut out = Vec::new();
                        self.sync(&mut out);
                        out
                    }
                    Err(e) => self.fail("bad_geometry", e.to_string()),
                }
            }
        }
    }

    /// Advances the logical clock by one frame: the frame's gaze sample goes
    /// through the fixation detector, fixation reports through the engine,
    /// and then the engine ticks.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        if self.closed {
            return Vec::new();
        }
        self.frame += 1;
        let t = self.now_ms();
        if let Some(mut s) = self.pending.take() {
            s.t_ms = t;
            for r in self.detector.push(s) {
                if r.fixation.end_ms() >= self.engine.state().clock_ms {
                    self.engine.fixation(&r.fixation).expect("fixation reports arrive in clock order");
                }
            }
        }
        let now = t.max(self.engine.state().clock_ms);
        self.engine.tick(now).expect("the logical clock only moves forward");
        let mut out = Vec::new();
        self.sync(&mut out);
        out
    }

    fn state_payload(&self) -> StatePayload {
        let st = self.engine.state();
        let (playback, pause_reason) = match st.playback {
            Playback::Playing { .. } => (PlaybackStatus::Playing, None),
            Playback::Paused { reason, .. } => (PlaybackStatus::Paused, Some(reason)),
            Playback::Finished => (PlaybackStatus::Finished, None),
        };
        StatePayload {
            t_ms: st.clock_ms,
            page_index: st.page_index,
            phrase_index: st.phrase_index,
            highlight: self.engine.current_highlight().ok(),
            playback,
            pause_reason,
        }
    }

    fn page_payload(&self, page: usize) -> PagePayload {
        let layout = self.engine.pages()[page].clone();
        let seg = self.engine.segmented();
        let words = (layout.first_word()..=layout.last_word())
            .map(|w| seg.document.words[w].text.clone())
            .collect();
        let phrases = (layout.first_phrase()..=layout.last_phrase()).map(|p| seg.phrases[p].word_span).collect();
        PagePayload { layout, words, phrases }
    }

    /// Emits page, state and metrics messages for whatever changed.
    fn sync(&mut self, out: &mut Vec<ServerMessage>) {
        let state = self.state_payload();
        if self.page_sent != Some(state.page_index) {
            self.page_sent = Some(state.page_index);
            out.push(ServerMessage::Page { session_id: self.id.clone(), payload: self.page_payload(state.page_index) });
        }
        if !self.last_state.as_ref().is_some_and(|s| s.same_view(&state)) {
            out.push(ServerMessage::State { session_id: self.id.clone(), seq: self.seq, payload: state.clone() });
            self.seq += 1;
            self.last_state = Some(state);
        }
        if self.engine.is_finished() && !self.metrics_sent {
            self.metrics_sent = true;
            out.push(ServerMessage::Metrics { session_id: self.id.clone(), payload: session_metrics(&self.engine) });
        }
    }

    fn error(&self, code: &str, message: String, fatal: bool) -> ServerMessage {
        ServerMessage::Error {
            session_id: self.id.clone(),
            payload: ErrorPayload { code: code.to_string(), message, fatal },
        }
    }

    fn fail(&mut self, code: &str, message: String) -> Vec<ServerMessage> {
        let msg = self.error(code, message, true);
        self.closed = true;
        vec![msg]
    }
}
