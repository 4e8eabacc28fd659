//! The pacing state machine.
//!
//! An [`Engine`] plays a clock-modelled audio timeline phrase by phrase. In
//! [`Mode::Gary`] a phrase only hands over to the next one when the reader has
//! fixated the look-ahead region while it played, and playback pauses when
//! gaze stays off the text longer than the grace period. In
//! [`Mode::Traditional`] the timeline runs at a fixed rate under transport
//! controls.
//!
//! Every input (ticks, fixations, controls, layout updates) is appended to the
//! event log together with the outputs it caused, so a log can be replayed
//! through a fresh engine.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gaze::{hit_test, Fixation};
use crate::layout::{
    aoi_for_phrase, first_line_aoi, first_line_box, lookahead_boxes, page_of_phrase, phrase_boxes, AoiConfig, LayoutError, Line,
    PageLayout, Point, Rect,
};
use crate::text::SegmentedText;

/// Default playback rate: 92.5 words per minute of the recorded narration.
pub const DEFAULT_AUDIO_RATE: f64 = 3.1;
pub const DEFAULT_GRACE_MS: f64 = 500.0;
pub const DEFAULT_SETTLE_MS: f64 = 1500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("document has no phrases or no pages")]
    EmptyDocument,
    #[error("audio rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("invalid session config: {0}")]
    InvalidConfig(&'static str),
    #[error("clock went backwards: {now} < {clock}")]
    ClockRegression { now: f64, clock: f64 },
    #[error("{0:?} is not available in this mode")]
    UnsupportedControl(ControlAction),
    #[error("session has finished")]
    SessionFinished,
    #[error("pages do not cover the phrases in order")]
    PageMismatch,
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gary,
    Traditional,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Gary => "gary",
            Mode::Traditional => "traditional",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gary" => Ok(Mode::Gary),
            "traditional" => Ok(Mode::Traditional),
            other => Err(format!("unknown mode {other:?} (expected gary or traditional)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Playback rate in syllables per second.
    pub audio_rate: f64,
    pub grace_ms: f64,
    /// After a page turn, fixations anywhere on the first line count as
    /// look-ahead and the grace timer is held off for this long.
    pub settle_ms: f64,
    pub aoi: AoiConfig,
}

impl SessionConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            audio_rate: DEFAULT_AUDIO_RATE,
            grace_ms: DEFAULT_GRACE_MS,
            settle_ms: DEFAULT_SETTLE_MS,
            aoi: AoiConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.audio_rate > 0.0) || !self.audio_rate.is_finite() {
            return Err(EngineError::NonPositiveRate(self.audio_rate));
        }
        if !(self.grace_ms >= 0.0) || !(self.settle_ms >= 0.0) {
            return Err(EngineError::InvalidConfig("grace and settle windows must be non-negative"));
        }
        if self.aoi.lookahead_words == 0 || !(self.aoi.expansion_rms_px >= 0.0) {
            return Err(EngineError::InvalidConfig("look-ahead must cover at least one word"));
        }
        Ok(())
    }
}

/// Clock model of the narration: one duration per phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioTimeline {
    pub durations_ms: Vec<f64>,
    pub starts_ms: Vec<f64>,
}

impl AudioTimeline {
    pub fn total_ms(&self) -> f64 {
        self.starts_ms.last().zip(self.durations_ms.last()).map_or(0.0, |(s, d)| s + d)
    }
}

pub fn build_timeline(seg: &SegmentedText, audio_rate: f64) -> Result<AudioTimeline> {
    if !(audio_rate > 0.0) || !audio_rate.is_finite() {
        return Err(EngineError::NonPositiveRate(audio_rate));
    }
    let durations_ms: Vec<f64> = seg.phrases.iter().map(|p| 1000.0 * p.syllable_count as f64 / audio_rate).collect();
    let starts_ms = durations_ms
        .iter()
        .scan(0.0, |acc, d| {
            let start = *acc;
            *acc += d;
            Some(start)
        })
        .collect();
    Ok(AudioTimeline { durations_ms, starts_ms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseReason {
    /// The phrase ended before any look-ahead fixation.
    NoPermit,
    /// Gaze was off the active and look-ahead regions beyond the grace period.
    GazeAway,
    /// Paused by the transport controls, or not yet started.
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Playback {
    /// Audio is running; the phrase started (or resumed) at `anchor_ms` of
    /// session time, so elapsed = clock − anchor.
    Playing { anchor_ms: f64 },
    Paused { elapsed_ms: f64, reason: PauseReason },
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub mode: Mode,
    pub page_index: usize,
    pub phrase_index: usize,
    pub playback: Playback,
    pub advance_permit: bool,
    pub last_on_text_ms: f64,
    pub clock_ms: f64,
    pub started: bool,
    /// End of the page-settle window, while one is open.
    pub settle_until_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Play,
    Pause,
    SkipForward,
    SkipBackward,
}

impl std::str::FromStr for ControlAction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "play" | "start" => Ok(Self::Play),
            "pause" | "stop" => Ok(Self::Pause),
            "skipforward" => Ok(Self::SkipForward),
            "skipbackward" => Ok(Self::SkipBackward),
            other => Err(format!("unknown control {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Lookahead,
    Active,
}

/// One log record. Input kinds (`Tick`, `Fixation`, `Control`, `Layout`) are
/// what a replay feeds back in; the rest are engine outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    Tick,
    Fixation(Fixation),
    Control { action: ControlAction },
    Layout { page: usize, lines: Vec<Line> },
    PhraseStart { phrase: usize, page: usize },
    PhraseEnd { phrase: usize },
    Pause { reason: PauseReason, phrase: usize, elapsed_ms: f64 },
    Resume { phrase: usize, elapsed_ms: f64 },
    PageTurn { page: usize },
    ControlApplied { action: ControlAction, applied: bool },
    FixationIn { region: Region, phrase: usize },
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub t_ms: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl EngineEvent {
    pub fn is_input(&self) -> bool {
        matches!(self.kind, EventKind::Tick | EventKind::Fixation(_) | EventKind::Control { .. } | EventKind::Layout { .. })
    }
}

/// Precomputed regions of one phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseRegions {
    pub page: usize,
    pub active_raw: Vec<Rect>,
    pub active: Vec<Rect>,
    pub lookahead_raw: Vec<Rect>,
    pub lookahead: Vec<Rect>,
}

/// AOIs for every phrase and page of a laid-out text.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub phrases: Vec<PhraseRegions>,
    /// Per page: unexpanded and expanded first-line box.
    pub first_lines: Vec<(Rect, Rect)>,
}

fn min_distance(rects: &[Rect], p: Point) -> f64 {
    rects.iter().map(|r| r.distance_to(p)).fold(f64::INFINITY, f64::min)
}

impl Geometry {
    pub fn new(seg: &SegmentedText, pages: &[PageLayout], aoi: &AoiConfig) -> Result<Self> {
        if seg.phrases.is_empty() || pages.is_empty() {
            return Err(EngineError::EmptyDocument);
        }
        let covers = pages.first().map(|p| p.first_phrase()) == Some(0)
            && pages.last().map(|p| p.last_phrase()) == Some(seg.phrases.len() - 1)
            && pages.windows(2).all(|w| w[1].first_phrase() == w[0].last_phrase() + 1)
            && pages.iter().enumerate().all(|(i, p)| p.page_index == i);
        if !covers {
            return Err(EngineError::PageMismatch);
        }
        let mut phrases = Vec::with_capacity(seg.phrases.len());
        for page in pages {
            for idx in page.first_phrase()..=page.last_phrase() {
                phrases.push(Self::regions(seg, page, idx, aoi)?);
            }
        }
        let first_lines = pages
            .iter()
            .map(|p| (first_line_box(p), first_line_aoi(p, aoi)))
            .collect();
        Ok(Self { phrases, first_lines })
    }

    fn regions(seg: &SegmentedText, page: &PageLayout, idx: usize, aoi: &AoiConfig) -> Result<PhraseRegions> {
        let phrase = &seg.phrases[idx];
        let pad = aoi.pad(page.line_height_px);
        let lookahead_raw = lookahead_boxes(page, seg, idx, aoi)?;
        Ok(PhraseRegions {
            page: page.page_index,
            active_raw: phrase_boxes(page, phrase)?,
            active: aoi_for_phrase(page, phrase, aoi)?,
            lookahead: lookahead_raw.iter().map(|r| r.expand(pad)).collect(),
            lookahead_raw,
        })
    }

    /// Which region of `phrase` a point falls in. During a page-settle window
    /// the whole first line counts as look-ahead. Where the expanded active
    /// and look-ahead regions overlap, the nearer text box wins, ties going
    /// to the active phrase.
    pub fn classify(&self, p: Point, phrase: usize, settling: bool) -> Option<Region> {
        let r = &self.phrases[phrase];
        if settling && self.first_lines[r.page].1.contains(p) {
            return Some(Region::Lookahead);
        }
        match (hit_test(p, &r.active), hit_test(p, &r.lookahead)) {
            (true, true) => {
                if min_distance(&r.lookahead_raw, p) < min_distance(&r.active_raw, p) {
                    Some(Region::Lookahead)
                } else {
                    Some(Region::Active)
                }
            }
            (true, false) => Some(Region::Active),
            (false, true) => Some(Region::Lookahead),
            (false, false) => None,
        }
    }
}

/// A single reading session: context, state and event log.
#[derive(Debug, Clone)]
pub struct Engine {
    seg: Arc<SegmentedText>,
    pages: Vec<PageLayout>,
    cfg: SessionConfig,
    timeline: AudioTimeline,
    geometry: Geometry,
    state: EngineState,
    log: Vec<EngineEvent>,
}

impl Engine {
    /// New session at phrase 0, paused until a `Play` control.
    pub fn new(seg: Arc<SegmentedText>, pages: Vec<PageLayout>, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let geometry = Geometry::new(&seg, &pages, &cfg.aoi)?;
        let timeline = build_timeline(&seg, cfg.audio_rate)?;
        let state = EngineState {
            mode: cfg.mode,
            page_index: 0,
            phrase_index: 0,
            playback: Playback::Paused { elapsed_ms: 0.0, reason: PauseReason::Control },
            advance_permit: false,
            last_on_text_ms: 0.0,
            clock_ms: 0.0,
            started: false,
            settle_until_ms: None,
        };
        Ok(Self { seg, pages, cfg, timeline, geometry, state, log: Vec::new() })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn log(&self) -> &[EngineEvent] {
        &self.log
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn timeline(&self) -> &AudioTimeline {
        &self.timeline
    }

    pub fn pages(&self) -> &[PageLayout] {
        &self.pages
    }

    pub fn segmented(&self) -> &SegmentedText {
        &self.seg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn is_finished(&self) -> bool {
        self.state.playback == Playback::Finished
    }

    /// Elapsed time within the active phrase at the current clock.
    pub fn elapsed_ms(&self) -> f64 {
        match self.state.playback {
            Playback::Playing { anchor_ms } => self.state.clock_ms - anchor_ms,
            Playback::Paused { elapsed_ms, .. } => elapsed_ms,
            Playback::Finished => self.timeline.durations_ms[self.state.phrase_index],
        }
    }

    /// Inclusive global word range of the highlighted phrase.
    pub fn current_highlight(&self) -> Result<[usize; 2]> {
        if self.is_finished() {
            return Err(EngineError::SessionFinished);
        }
        Ok(self.seg.phrases[self.state.phrase_index].word_span)
    }

    /// Digest of the final state together with every log record, so that
    /// two sessions hash equal only if they agree on the whole history.
    pub fn state_hash(&self) -> String {
        state_hash(&self.state, &self.log)
    }

    fn emit(&mut self, t_ms: f64, kind: EventKind) {
        self.log.push(EngineEvent { t_ms, kind });
    }

    fn check_clock(&self, now: f64) -> Result<()> {
        if !(now >= self.state.clock_ms) {
            return Err(EngineError::ClockRegression { now, clock: self.state.clock_ms });
        }
        Ok(())
    }

    fn settling(&self, t: f64) -> bool {
        self.state.settle_until_ms.is_some_and(|until| t <= until)
    }

    /// Runs the timeline forward to `now`, emitting every transition at its
    /// exact time.
    fn advance_to(&mut self, now: f64) {
        let gary = self.cfg.mode == Mode::Gary;
        while let Playback::Playing { anchor_ms } = self.state.playback {
            let i = self.state.phrase_index;
            let end = anchor_ms + self.timeline.durations_ms[i];
            if gary {
                let away = (self.state.last_on_text_ms + self.cfg.grace_ms)
                    .max(self.state.settle_until_ms.unwrap_or(f64::NEG_INFINITY))
                    .max(self.state.clock_ms);
                if away < end && away < now {
                    let elapsed_ms = away - anchor_ms;
                    self.state.playback = Playback::Paused { elapsed_ms, reason: PauseReason::GazeAway };
                    self.emit(away, EventKind::Pause { reason: PauseReason::GazeAway, phrase: i, elapsed_ms });
                    continue;
                }
            }
            if end > now {
                break;
            }
            self.state.clock_ms = end;
            self.emit(end, EventKind::PhraseEnd { phrase: i });
            let page = &self.pages[self.state.page_index];
            if i + 1 == self.seg.phrases.len() {
                self.state.playback = Playback::Finished;
                self.state.advance_permit = false;
                self.state.settle_until_ms = None;
                self.emit(end, EventKind::Finish);
            } else if i == page.last_phrase() {
                self.state.page_index += 1;
                self.emit(end, EventKind::PageTurn { page: self.state.page_index });
                if gary {
                    self.state.settle_until_ms = Some(end + self.cfg.settle_ms);
                }
                self.start_phrase(end, i + 1);
            } else if !gary || self.state.advance_permit {
                self.start_phrase(end, i + 1);
            } else {
                let elapsed_ms = self.timeline.durations_ms[i];
                self.state.playback = Playback::Paused { elapsed_ms, reason: PauseReason::NoPermit };
                self.emit(end, EventKind::Pause { reason: PauseReason::NoPermit, phrase: i, elapsed_ms });
            }
        }
        self.state.clock_ms = now;
    }

    fn start_phrase(&mut self, t: f64, phrase: usize) {
        if phrase != self.pages[self.state.page_index].first_phrase() {
            self.state.settle_until_ms = None;
        }
        self.state.phrase_index = phrase;
        self.state.advance_permit = false;
        self.state.playback = Playback::Playing { anchor_ms: t };
        self.emit(t, EventKind::PhraseStart { phrase, page: self.state.page_index });
    }

    pub fn tick(&mut self, now: f64) -> Result<Vec<EngineEvent>> {
        self.check_clock(now)?;
        let from = self.log.len();
        self.advance_to(now);
        self.emit(now, EventKind::Tick);
        Ok(self.log[from..].to_vec())
    }

    /// Applies a fixation report at the time of its latest sample.
    pub fn fixation(&mut self, f: &Fixation) -> Result<Vec<EngineEvent>> {
        let t = f.end_ms();
        self.check_clock(t)?;
        let from = self.log.len();
        self.advance_to(t);
        self.emit(t, EventKind::Fixation(*f));
        if self.cfg.mode == Mode::Gary && self.state.started && !self.is_finished() {
            self.gaze_hit(t, f.centroid);
        }
        Ok(self.log[from..].to_vec())
    }

    fn gaze_hit(&mut self, t: f64, p: Point) {
        let i = self.state.phrase_index;
        let Some(region) = self.geometry.classify(p, i, self.settling(t)) else { return };
        self.state.last_on_text_ms = t;
        self.emit(t, EventKind::FixationIn { region, phrase: i });
        if region == Region::Lookahead {
            self.state.advance_permit = true;
        }
        match self.state.playback {
            Playback::Paused { reason: PauseReason::NoPermit, elapsed_ms } if region == Region::Lookahead => {
                self.emit(t, EventKind::Resume { phrase: i, elapsed_ms });
                self.start_phrase(t, i + 1);
            }
            Playback::Paused { reason: PauseReason::GazeAway, elapsed_ms } => {
                self.state.playback = Playback::Playing { anchor_ms: t - elapsed_ms };
                self.emit(t, EventKind::Resume { phrase: i, elapsed_ms });
            }
            _ => {}
        }
    }

    pub fn control(&mut self, t: f64, action: ControlAction) -> Result<Vec<EngineEvent>> {
        self.check_clock(t)?;
        let skip = matches!(action, ControlAction::SkipForward | ControlAction::SkipBackward);
        if skip && self.cfg.mode == Mode::Gary {
            return Err(EngineError::UnsupportedControl(action));
        }
        let from = self.log.len();
        self.advance_to(t);
        self.emit(t, EventKind::Control { action });
        let i = self.state.phrase_index;
        let applied = match (action, self.state.playback) {
            (_, Playback::Finished) => false,
            (ControlAction::Play, Playback::Paused { elapsed_ms, reason: PauseReason::Control }) => {
                self.state.playback = Playback::Playing { anchor_ms: t - elapsed_ms };
                self.state.last_on_text_ms = self.state.last_on_text_ms.max(t);
                self.emit(t, EventKind::ControlApplied { action, applied: true });
                if self.state.started {
                    self.emit(t, EventKind::Resume { phrase: i, elapsed_ms });
                } else {
                    self.state.started = true;
                    self.emit(t, EventKind::PhraseStart { phrase: i, page: self.state.page_index });
                }
                true
            }
            (ControlAction::Play, _) => false,
            (ControlAction::Pause, Playback::Playing { anchor_ms }) => {
                self.pause_by_control(t, t - anchor_ms);
                true
            }
            (ControlAction::Pause, Playback::Paused { elapsed_ms, reason }) if reason != PauseReason::Control => {
                self.pause_by_control(t, elapsed_ms);
                true
            }
            (ControlAction::Pause, _) => false,
            (ControlAction::SkipForward, _) if i + 1 < self.seg.phrases.len() => {
                self.skip_to(t, action, i + 1);
                true
            }
            (ControlAction::SkipBackward, _) if i > 0 => {
                self.skip_to(t, action, i - 1);
                true
            }
            _ => false,
        };
        if !applied {
            self.emit(t, EventKind::ControlApplied { action, applied: false });
        }
        Ok(self.log[from..].to_vec())
    }

    fn pause_by_control(&mut self, t: f64, elapsed_ms: f64) {
        let action = ControlAction::Pause;
        let phrase = self.state.phrase_index;
        self.state.playback = Playback::Paused { elapsed_ms, reason: PauseReason::Control };
        self.emit(t, EventKind::ControlApplied { action, applied: true });
        self.emit(t, EventKind::Pause { reason: PauseReason::Control, phrase, elapsed_ms });
    }

    fn skip_to(&mut self, t: f64, action: ControlAction, phrase: usize) {
        self.emit(t, EventKind::ControlApplied { action, applied: true });
        let page = self.geometry.phrases[phrase].page;
        if page != self.state.page_index {
            self.state.page_index = page;
            self.emit(t, EventKind::PageTurn { page });
        }
        self.state.phrase_index = phrase;
        self.state.advance_permit = false;
        self.state.playback = match self.state.playback {
            Playback::Playing { .. } => Playback::Playing { anchor_ms: t },
            Playback::Paused { reason, .. } => Playback::Paused { elapsed_ms: 0.0, reason },
            Playback::Finished => Playback::Finished,
        };
        self.emit(t, EventKind::PhraseStart { phrase, page });
    }

    /// Replaces one page's word boxes with externally measured geometry and
    /// recomputes its AOIs.
    pub fn update_layout(&mut self, t: f64, page: usize, lines: Vec<Line>) -> Result<Vec<EngineEvent>> {
        self.check_clock(t)?;
        let current = self.pages.get(page).ok_or(EngineError::PageMismatch)?;
        let updated = current.with_measured_boxes(lines.clone())?;
        let mut regions = Vec::new();
        for idx in updated.first_phrase()..=updated.last_phrase() {
            regions.push(Geometry::regions(&self.seg, &updated, idx, &self.cfg.aoi)?);
        }
        let from = self.log.len();
        self.advance_to(t);
        self.emit(t, EventKind::Layout { page, lines });
        let first = updated.first_phrase();
        for (k, r) in regions.into_iter().enumerate() {
            self.geometry.phrases[first + k] = r;
        }
        self.geometry.first_lines[page] = (first_line_box(&updated), first_line_aoi(&updated, &self.cfg.aoi));
        self.pages[page] = updated;
        Ok(self.log[from..].to_vec())
    }

    /// Feeds a logged input record back into the engine.
    pub fn apply(&mut self, event: &EngineEvent) -> Result<Vec<EngineEvent>> {
        match &event.kind {
            EventKind::Tick => self.tick(event.t_ms),
            EventKind::Fixation(f) => self.fixation(f),
            EventKind::Control { action } => self.control(event.t_ms, *action),
            EventKind::Layout { page, lines } => self.update_layout(event.t_ms, *page, lines.clone()),
            _ => Ok(Vec::new()),
        }
    }

    /// Page on which a phrase is laid out.
    pub fn page_of(&self, phrase: usize) -> Option<usize> {
        page_of_phrase(&self.pages, phrase)
    }
}

pub fn state_hash(state: &EngineState, log: &[EngineEvent]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(state).expect("engine state serializes"));
    for ev in log {
        hasher.update(b"\n");
        hasher.update(serde_json::to_vec(ev).expect("engine events serialize"));
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{paginate, Viewport};
    use crate::text::segment_text;

    const TEXT: &str = "Le anguille, pesci misteriosi, attraversano l'oceano. Poi tornano a casa.";

    fn engine(mode: Mode, text: &str) -> Engine {
        let seg = Arc::new(segment_text(text, 5).unwrap());
        let pages = paginate(&seg, &Viewport::default()).unwrap();
        Engine::new(seg, pages, SessionConfig::new(mode)).unwrap()
    }

    fn kinds(events: &[EngineEvent]) -> Vec<&EventKind> {
        events.iter().filter(|e| !e.is_input()).map(|e| &e.kind).collect()
    }

    fn fix_at(p: Point, end: f64) -> Fixation {
        Fixation { start_ms: end - 100.0, duration_ms: 100.0, centroid: p }
    }

    fn lookahead_point(e: &Engine) -> Point {
        e.geometry().phrases[e.state().phrase_index].lookahead_raw[0].center()
    }

    fn active_point(e: &Engine) -> Point {
        e.geometry().phrases[e.state().phrase_index].active_raw[0].center()
    }

    #[test]
    fn new_session_is_paused_at_zero() {
        let e = engine(Mode::Gary, "Ciao.");
        assert_eq!(e.state().phrase_index, 0);
        assert_eq!(e.state().playback, Playback::Paused { elapsed_ms: 0.0, reason: PauseReason::Control });
        assert!(e.log().is_empty());
    }

    #[test]
    fn empty_document() {
        let seg = Arc::new(segment_text("Ciao.", 5).unwrap());
        let pages = paginate(&seg, &Viewport::default()).unwrap();
        let mut empty = (*seg).clone();
        empty.phrases.clear();
        assert_eq!(
            Engine::new(Arc::new(empty), pages.clone(), SessionConfig::new(Mode::Gary)).unwrap_err(),
            EngineError::EmptyDocument
        );
        assert_eq!(Engine::new(seg, Vec::new(), SessionConfig::new(Mode::Gary)).unwrap_err(), EngineError::EmptyDocument);
    }

    #[test]
    fn timeline_arithmetic() {
        let mut seg = segment_text("Ciao.", 5).unwrap();
        let t = build_timeline(&seg, 3.1).unwrap();
        assert!((t.durations_ms[0] - 2000.0 / 3.1).abs() < 1e-9);
        seg.phrases[0].syllable_count = 434;
        assert!((build_timeline(&seg, 3.1).unwrap().total_ms() - 140_000.0).abs() < 1e-6);
        assert_eq!(build_timeline(&seg, 0.0).unwrap_err(), EngineError::NonPositiveRate(0.0));
    }

    #[test]
    fn gary_advances_with_permit() {
        let mut e = engine(Mode::Gary, TEXT);
        e.control(0.0, ControlAction::Play).unwrap();
        let p = lookahead_point(&e);
        e.fixation(&fix_at(p, 200.0)).unwrap();
        assert!(e.state().advance_permit);
        e.fixation(&fix_at(p, 600.0)).unwrap();
        e.fixation(&fix_at(p, 1000.0)).unwrap();
        let end = e.timeline().durations_ms[0];
        let ev = e.tick(end + 10.0).unwrap();
        assert_eq!(kinds(&ev), [&EventKind::PhraseEnd { phrase: 0 }, &EventKind::PhraseStart { phrase: 1, page: 0 }]);
        assert_eq!(ev[1].t_ms, end);
        assert!(!e.state().advance_permit);
        assert_eq!(e.elapsed_ms(), 10.0);
    }

    #[test]
    fn gary_stops_without_permit() {
        let mut e = engine(Mode::Gary, TEXT);
        e.control(0.0, ControlAction::Play).unwrap();
        let end = e.timeline().durations_ms[0];
        // keep looking at the active phrase so the grace timer never fires
        let p = active_point(&e);
        e.fixation(&fix_at(p, 300.0)).unwrap();
        e.fixation(&fix_at(p, 600.0)).unwrap();
        e.fixation(&fix_at(p, 900.0)).unwrap();
        let ev = e.tick(end + 50.0).unwrap();
        assert_eq!(
            kinds(&ev),
            [
                &EventKind::PhraseEnd { phrase: 0 },
                &EventKind::Pause { reason: PauseReason::NoPermit, phrase: 0, elapsed_ms: end }
            ]
        );
        assert_eq!(e.elapsed_ms(), end);
        // permit arrival advances at once
        let p = lookahead_point(&e);
        let ev = e.fixation(&fix_at(p, end + 100.0)).unwrap();
        assert_eq!(e.state().phrase_index, 1);
        assert!(matches!(kinds(&ev)[..], [EventKind::FixationIn { region: Region::Lookahead, .. }, EventKind::Resume { .. }, EventKind::PhraseStart { phrase: 1, .. }]));
    }

    #[test]
    fn traditional_advances_unconditionally() {
        let mut e = engine(Mode::Traditional, TEXT);
        e.control(0.0, ControlAction::Play).unwrap();
        let total = e.timeline().total_ms();
        e.tick(total + 1.0).unwrap();
        assert!(e.is_finished());
        let finish = e.log().iter().find(|ev| ev.kind == EventKind::Finish).unwrap();
        assert_eq!(finish.t_ms, total);
        assert_eq!(e.current_highlight(), Err(EngineError::SessionFinished));
    }

    #[test]
    fn gaze_away_pauses_and_resumes_in_place() {
        let mut e = engine(Mode::Gary, "Le anguille nuotano lentamente nel mare profondo e scuro.");
        e.control(0.0, ControlAction::Play).unwrap();
        e.tick(600.0).unwrap();
        assert_eq!(
            e.state().playback,
            Playback::Paused { elapsed_ms: 500.0, reason: PauseReason::GazeAway }
        );
        let p = active_point(&e);
        e.fixation(&fix_at(p, 900.0)).unwrap();
        assert_eq!(e.state().playback, Playback::Playing { anchor_ms: 400.0 });
        assert_eq!(e.elapsed_ms(), 500.0);
    }

    #[test]
    fn active_fixations_alone_never_advance() {
        let mut e = engine(Mode::Gary, TEXT);
        e.control(0.0, ControlAction::Play).unwrap();
        let p = active_point(&e);
        let mut t = 0.0;
        while t < 3000.0 {
            t += 200.0;
            e.fixation(&fix_at(p, t)).unwrap();
            e.tick(t).unwrap();
        }
        assert_eq!(e.state().phrase_index, 0);
        assert!(matches!(e.state().playback, Playback::Paused { reason: PauseReason::NoPermit, .. }));
    }

    #[test]
    fn skip_controls() {
        let mut e = engine(Mode::Traditional, TEXT);
        e.control(0.0, ControlAction::SkipBackward).unwrap();
        assert_eq!(e.state().phrase_index, 0);
        assert!(e.log().iter().any(|ev| ev.kind == EventKind::ControlApplied { action: ControlAction::SkipBackward, applied: false }));
        e.control(0.0, ControlAction::Play).unwrap();
        for _ in 0..3 {
            e.control(10.0, ControlAction::SkipForward).unwrap();
        }
        assert_eq!(e.state().phrase_index, 3);
        assert_eq!(e.elapsed_ms(), 0.0);
        e.control(20.0, ControlAction::SkipForward).unwrap();
        assert_eq!(e.state().phrase_index, 3);
        assert_eq!(e.elapsed_ms(), 10.0);

        let mut g = engine(Mode::Gary, TEXT);
        let before = g.state().clone();
        assert_eq!(
            g.control(0.0, ControlAction::SkipForward).unwrap_err(),
            EngineError::UnsupportedControl(ControlAction::SkipForward)
        );
        assert_eq!(g.state(), &before);
        assert!(g.log().is_empty());
    }

    #[test]
    fn pause_then_play_keeps_offset() {
        let mut e = engine(Mode::Traditional, TEXT);
        e.control(0.0, ControlAction::Play).unwrap();
        e.control(300.0, ControlAction::Pause).unwrap();
        e.tick(5000.0).unwrap();
        assert_eq!(e.elapsed_ms(), 300.0);
        e.control(5000.0, ControlAction::Play).unwrap();
        e.tick(5100.0).unwrap();
        assert_eq!(e.elapsed_ms(), 400.0);
    }

    #[test]
    fn highlight_follows_phrase() {
        let mut e = engine(Mode::Traditional, TEXT);
        assert_eq!(e.current_highlight().unwrap(), [0, 1]);
        e.control(0.0, ControlAction::SkipForward).unwrap();
        assert_eq!(e.current_highlight().unwrap(), [2, 3]);
    }

    #[test]
    fn clock_regression() {
        let mut e = engine(Mode::Traditional, TEXT);
        e.tick(100.0).unwrap();
        assert_eq!(e.tick(50.0).unwrap_err(), EngineError::ClockRegression { now: 50.0, clock: 100.0 });
    }

    #[test]
    fn event_json_shape() {
        let ev = EngineEvent { t_ms: 12.5, kind: EventKind::FixationIn { region: Region::Lookahead, phrase: 3 } };
        let json = serde_json::to_string(&ev).unwrap();
        assert_eq!(json, r#"{"t_ms":12.5,"kind":"FixationIn","payload":{"region":"lookahead","phrase":3}}"#);
        assert_eq!(serde_json::from_str::<EngineEvent>(&json).unwrap(), ev);
        let tick = serde_json::to_string(&EngineEvent { t_ms: 1.0, kind: EventKind::Tick }).unwrap();
        assert_eq!(tick, r#"{"t_ms":1.0,"kind":"Tick"}"#);
    }
}
