//! Closed-loop sessions, per-session metrics and the counterbalanced
//! crossover over simulated readers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, EventKind, Mode, PauseReason, Region, SessionConfig};
use crate::gaze::{hit_test, CalibrationModel, FixationDetector, FixationParams, RawGazeSample};
use crate::layout::{paginate, LayoutError, PageLayout, Point, Viewport};
use crate::session::{SessionRecord, TextRef};
use crate::simulator::{screen_of, session_seed, ReaderProfile, Reader, SimError, Tracker};
use crate::text::{segment_text, SegmentedText, TextError, MAX_PHRASE_WORDS};

/// Sessions that have not finished after this many timeline durations are abandoned.
pub const TIMEOUT_FACTOR: f64 = 10.0;
/// Low speed below this many syllables per second.
pub const SPEED_CUTOFF: f64 = 1.7;
/// Low accuracy above this many decoding errors.
pub const ERROR_CUTOFF: u32 = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("session did not finish within {limit_ms:.0} ms (stuck at phrase {phrase})")]
    Timeout { limit_ms: f64, phrase: usize },
    #[error("crossover needs at least two profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("crossover needs at least one seed")]
    NoSeeds,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("report: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// A text prepared for reading: segmentation and pagination done once.
#[derive(Debug, Clone)]
pub struct Passage {
    pub text: TextRef,
    pub seg: Arc<SegmentedText>,
    pub pages: Vec<PageLayout>,
}

impl Passage {
    pub fn new(raw_text: &str, max_words: usize, viewport: Viewport) -> Result<Self> {
        let seg = segment_text(raw_text, max_words)?;
        let pages = paginate(&seg, &viewport)?;
        Ok(Self { text: TextRef::new(raw_text, max_words, viewport), seg: Arc::new(seg), pages })
    }

    pub fn from_text(raw_text: &str) -> Result<Self> {
        Self::new(raw_text, MAX_PHRASE_WORDS, Viewport::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub tracker: Tracker,
    pub calibration_samples: usize,
    pub fixation: FixationParams,
    /// Interval of in-progress fixation reports fed to the engine.
    pub update_interval_ms: f64,
    pub timeout_factor: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tracker: Tracker::default(),
            calibration_samples: 30,
            fixation: FixationParams::default(),
            update_interval_ms: 100.0,
            timeout_factor: TIMEOUT_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub total_time_s: f64,
    pub effective_speed_syll_s: f64,
    pub pause_count: usize,
    pub pause_time_s: f64,
    /// Fraction of playing time during which the latest fixation lay in
    /// the active or look-ahead AOI.
    pub synchrony: f64,
    /// Fraction of phrases that received at least one fixation.
    pub coverage: f64,
}

impl SessionMetrics {
    pub const NAMES: [&'static str; 6] =
        ["total_time_s", "effective_speed_syll_s", "pause_count", "pause_time_s", "synchrony", "coverage"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.total_time_s,
            self.effective_speed_syll_s,
            self.pause_count as f64,
            self.pause_time_s,
            self.synchrony,
            self.coverage,
        ]
    }
}

/// Metrics of a session, derived from its event log alone.
pub fn session_metrics(engine: &Engine) -> SessionMetrics {
    let geometry = engine.geometry();
    let n_phrases = engine.segmented().phrases.len();
    let inside = |p: Point, phrase: usize| {
        let r = &geometry.phrases[phrase];
        hit_test(p, &r.active) || hit_test(p, &r.lookahead)
    };

    let mut start = None;
    let mut end = None;
    let mut phrase = 0;
    let mut playing = false;
    let mut last_fix: Option<Point> = None;
    let mut t_prev = 0.0;
    let (mut playing_ms, mut synced_ms) = (0.0, 0.0);
    let mut pause_count = 0;
    let mut covered = vec![false; n_phrases];

    for ev in engine.log() {
        let t = ev.t_ms;
        if playing {
            playing_ms += t - t_prev;
            if last_fix.is_some_and(|p| inside(p, phrase)) {
                synced_ms += t - t_prev;
            }
        }
        t_prev = t;
        match &ev.kind {
            EventKind::PhraseStart { phrase: p, .. } => {
                start.get_or_insert(t);
                phrase = *p;
                playing = true;
            }
            EventKind::Resume { .. } => playing = true,
            EventKind::Pause { .. } => {
                pause_count += 1;
                playing = false;
            }
            EventKind::Finish => {
                playing = false;
                end = Some(t);
            }
            EventKind::Fixation(f) => {
                last_fix = Some(f.centroid);
                for (i, r) in geometry.phrases.iter().enumerate() {
                    if hit_test(f.centroid, &r.active) {
                        covered[i] = true;
                    }
                }
            }
            EventKind::FixationIn { region: Region::Lookahead, phrase: p } if p + 1 < n_phrases => covered[p + 1] = true,
            _ => {}
        }
    }

    let start = start.unwrap_or(0.0);
    let end = end.unwrap_or(engine.state().clock_ms);
    let total_ms = (end - start).max(0.0);
    let total_time_s = total_ms / 1000.0;
    SessionMetrics {
        total_time_s,
        effective_speed_syll_s: if total_ms > 0.0 { engine.segmented().total_syllables as f64 / total_time_s } else { 0.0 },
        pause_count,
        pause_time_s: (total_ms - playing_ms).max(0.0) / 1000.0,
        synchrony: if playing_ms > 0.0 { synced_ms / playing_ms } else { 0.0 },
        coverage: covered.iter().filter(|&&c| c).count() as f64 / n_phrases as f64,
    }
}

/// Pauses in the log by reason.
pub fn pause_counts(engine: &Engine) -> [(PauseReason, usize); 3] {
    let count = |r: PauseReason| {
        engine
            .log()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Pause { reason, .. } if reason == r))
            .count()
    };
    [PauseReason::NoPermit, PauseReason::GazeAway, PauseReason::Control].map(|r| (r, count(r)))
}

/// A finished closed-loop session.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub metrics: SessionMetrics,
    pub engine: Engine,
    pub calibration: CalibrationModel,
    /// Raw tracker samples of the reading phase.
    pub trace: Vec<RawGazeSample>,
    text: TextRef,
}

impl SessionRun {
    pub fn record(&self) -> SessionRecord {
        SessionRecord::from_engine(&self.engine, self.text.clone())
    }
}

/// Calibrates a simulated tracker, then drives reader and engine frame by
/// frame on one logical clock until the engine finishes.
pub fn run_session(profile: &ReaderProfile, passage: &Passage, mode: Mode, seed: u64, opts: &RunOptions) -> Result<SessionRun> {
    let screen = screen_of(&passage.text.viewport);
    let mut reader = Reader::new(profile.clone(), opts.tracker, screen, session_seed(profile.seed, seed))?;
    let calibration = opts.tracker.calibrate(reader.rng(), screen, opts.calibration_samples)?;

    let mut cfg = SessionConfig::new(mode);
    cfg.aoi.expansion_rms_px = calibration.rms_error_px;
    let mut engine = Engine::new(passage.seg.clone(), passage.pages.clone(), cfg)?;
    let mut detector = FixationDetector::new(opts.fixation, opts.update_interval_ms);
    let limit_ms = opts.timeout_factor * engine.timeline().total_ms();
    let dt = opts.tracker.frame_ms();

    engine.control(0.0, crate::engine::ControlAction::Play)?;
    let mut trace = Vec::new();
    let mut k: u64 = 0;
    while !engine.is_finished() {
        k += 1;
        let t = k as f64 * dt;
        if t > limit_ms {
            return Err(HarnessError::Timeout { limit_ms, phrase: engine.state().phrase_index });
        }
        let raw = reader.step(t, &engine);
        trace.push(raw);
        for report in detector.push(calibration.apply(&raw)) {
            // Reports about fixations that closed before the last tick are stale.
            if report.fixation.end_ms() >= engine.state().clock_ms {
                engine.fixation(&report.fixation)?;
            }
        }
        // start + duration can round one ulp past the frame time.
        engine.tick(t.max(engine.state().clock_ms))?;
    }
    Ok(SessionRun { metrics: session_metrics(&engine), engine, calibration, trace, text: passage.text.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileClass {
    pub speed_class: Class,
    pub accuracy_class: Class,
}

/// Cut-off values themselves classify High.
pub fn classify_profile(speed_syll_s: f64, errors: u32) -> ProfileClass {
    ProfileClass {
        speed_class: if speed_syll_s < SPEED_CUTOFF { Class::Low } else { Class::High },
        accuracy_class: if errors > ERROR_CUTOFF { Class::Low } else { Class::High },
    }
}

pub fn gain_score(value_gary: f64, value_trad: f64) -> f64 {
    value_gary - value_trad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextLabel {
    A,
    B,
}

/// One arm of the counterbalanced design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub first: (Mode, TextLabel),
    pub second: (Mode, TextLabel),
}

/// Order and text pairing vary orthogonally: even participants start with
/// the first condition, and every other pair reads text B under it.
pub fn assignment(participant: usize, conditions: [Mode; 2]) -> Assignment {
    let [c1, c2] = conditions;
    let (t1, t2) = if (participant / 2) % 2 == 0 { (TextLabel::A, TextLabel::B) } else { (TextLabel::B, TextLabel::A) };
    if participant % 2 == 0 {
        Assignment { first: (c1, t1), second: (c2, t2) }
    } else {
        Assignment { first: (c2, t2), second: (c1, t1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverOptions {
    pub run: RunOptions,
    /// The two conditions compared; gains are first minus second.
    pub conditions: [Mode; 2],
}

impl Default for CrossoverOptions {
    fn default() -> Self {
        Self { run: RunOptions::default(), conditions: [Mode::Gary, Mode::Traditional] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub participant: usize,
    pub profile: String,
    pub seed: u64,
    pub speed_class: Class,
    pub accuracy_class: Class,
    pub mode: Mode,
    pub order: u8,
    pub text: TextLabel,
    pub total_time_s: f64,
    pub effective_speed_syll_s: f64,
    pub pause_count: usize,
    pub pause_time_s: f64,
    pub synchrony: f64,
    pub coverage: f64,
}

impl SessionRow {
    pub fn metrics(&self) -> SessionMetrics {
        SessionMetrics {
            total_time_s: self.total_time_s,
            effective_speed_syll_s: self.effective_speed_syll_s,
            pause_count: self.pause_count,
            pause_time_s: self.pause_time_s,
            synchrony: self.synchrony,
            coverage: self.coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_sd(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    if values.is_empty() {
        return Stat { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stat { mean, sd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub profile: String,
    pub mode: Mode,
    pub n: usize,
    pub metrics: Vec<MetricStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainScore {
    pub profile: String,
    pub metric: String,
    /// Mean over participants of first condition minus second.
    pub delta: f64,
    pub sd: f64,
}

/// Reported comprehension gains, for context only; nothing here simulates comprehension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub comprehension_gain_dyslexic: f64,
    pub comprehension_gain_inaccurate: f64,
}

impl Default for ReferenceValues {
    fn default() -> Self {
        Self { comprehension_gain_dyslexic: gain_score(6.8, 5.5), comprehension_gain_inaccurate: 1.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub conditions: [Mode; 2],
    pub participants: usize,
    pub cells: Vec<Cell>,
    pub gains: Vec<GainScore>,
    pub reference: ReferenceValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverReport {
    pub rows: Vec<SessionRow>,
    pub summary: Summary,
}

/// Runs every profile under every seed through both conditions.
pub fn run_crossover(
    profiles: &[ReaderProfile],
    text_a: &Passage,
    text_b: &Passage,
    seeds: &[u64],
    opts: &CrossoverOptions,
) -> Result<CrossoverReport> {
    if profiles.len() < 2 {
        return Err(HarnessError::TooFewProfiles(profiles.len()));
    }
    if seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    for p in profiles {
        p.validate()?;
    }
    let jobs: Vec<(usize, &ReaderProfile, u64)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(s, &seed)| profiles.iter().enumerate().map(move |(i, p)| (s * profiles.len() + i, p, seed)))
        .collect();

    let results: Vec<Result<[SessionRow; 2]>> = std::thread::scope(|scope| {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
        let chunk = jobs.len().div_ceil(workers);
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(j, profile, seed)| participant_rows(j, profile, seed, text_a, text_b, opts))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("crossover worker panicked")).collect()
    });

    let mut rows = Vec::with_capacity(jobs.len() * 2);
    for r in results {
        rows.extend(r?);
    }
    let summary = summarize(&rows, opts.conditions);
    Ok(CrossoverReport { rows, summary })
}

fn participant_rows(
    participant: usize,
    profile: &ReaderProfile,
    seed: u64,
    text_a: &Passage,
    text_b: &Passage,
    opts: &CrossoverOptions,
) -> Result<[SessionRow; 2]> {
    let class = classify_profile(profile.pace_syll_s, profile.decoding_errors);
    let arm = assignment(participant, opts.conditions);
    let run = |order: u8, (mode, label): (Mode, TextLabel)| -> Result<SessionRow> {
        let passage = match label {
            TextLabel::A => text_a,
            TextLabel::B => text_b,
        };
        // Each session of a participant gets its own stream.
        let m = run_session(profile, passage, mode, seed.wrapping_mul(2).wrapping_add(order as u64), &opts.run)?.metrics;
        Ok(SessionRow {
            participant,
            profile: profile.name.clone(),
            seed,
            speed_class: class.speed_class,
            accuracy_class: class.accuracy_class,
            mode,
            order,
            text: label,
            total_time_s: m.total_time_s,
            effective_speed_syll_s: m.effective_speed_syll_s,
            pause_count: m.pause_count,
            pause_time_s: m.pause_time_s,
            synchrony: m.synchrony,
            coverage: m.coverage,
        })
    };
    Ok([run(1, arm.first)?, run(2, arm.second)?])
}

fn profile_names(rows: &[SessionRow]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !names.contains(&r.profile) {
            names.push(r.profile.clone());
        }
    }
    names
}

/// Cell aggregates per (profile, condition) and gains of `conditions[0]`
/// over `conditions[1]`.
pub fn summarize(rows: &[SessionRow], conditions: [Mode; 2]) -> Summary {
    let names = profile_names(rows);
    let mut cells = Vec::new();
    for name in &names {
        let mut modes = conditions.to_vec();
        modes.dedup();
        for &mode in &modes {
            let vals: Vec<[f64; 6]> = rows
                .iter()
                .filter(|r| &r.profile == name && r.mode == mode)
                .map(|r| r.metrics().values())
                .collect();
            let metrics = SessionMetrics::NAMES
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let s = mean_sd(&vals.iter().map(|v| v[k]).collect::<Vec<_>>());
                    MetricStat { metric: m.to_string(), mean: s.mean, sd: s.sd }
                })
                .collect();
            cells.push(Cell { profile: name.clone(), mode, n: vals.len(), metrics });
        }
    }
    Summary {
        conditions,
        participants: rows.iter().map(|r| r.participant).max().map_or(0, |m| m + 1),
        cells,
        gains: gains(rows, conditions),
        reference: ReferenceValues::default(),
    }
}

/// Per-profile gain scores: for each participant, the metric under
/// `conditions[0]` minus the metric under `conditions[1]`; then averaged.
pub fn gains(rows: &[SessionRow], conditions: [Mode; 2]) -> Vec<GainScore> {
    let mut out = Vec::new();
    for name in profile_names(rows) {
        let mut participants: Vec<usize> = rows.iter().filter(|r| r.profile == name).map(|r| r.participant).collect();
        participants.dedup();
        let deltas: Vec<[f64; 6]> = participants
            .iter()
            .filter_map(|&p| {
                let of = |order_cond: Mode, skip: Option<u8>| {
                    rows.iter()
                        .find(|r| r.participant == p && r.mode == order_cond && Some(r.order) != skip)
                };
                let first = of(conditions[0], None)?;
                let second = of(conditions[1], Some(first.order))?;
                let (a, b) = (first.metrics().values(), second.metrics().values());
                Some(std::array::from_fn(|k| gain_score(a[k], b[k])))
            })
            .collect();
        for (k, m) in SessionMetrics::NAMES.iter().enumerate() {
            let s = mean_sd(&deltas.iter().map(|d| d[k]).collect::<Vec<_>>());
            out.push(GainScore { profile: name.clone(), metric: m.to_string(), delta: s.mean, sd: s.sd });
        }
    }
    out
}

impl CrossoverReport {
    /// One CSV row per session.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| HarnessError::Report(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }
}

/// Mean closed-loop speed of a profile over seeds and passages.
pub fn mean_speed(profile: &ReaderProfile, passages: &[&Passage], mode: Mode, seeds: &[u64], opts: &RunOptions) -> Result<f64> {
    let mut speeds = Vec::new();
    for passage in passages {
        for &seed in seeds {
            speeds.push(run_session(profile, passage, mode, seed, opts)?.metrics.effective_speed_syll_s);
        }
    }
    Ok(mean_sd(&speeds).mean)
}

/// Bisects the decoding pace until the mean GARY speed is within
/// `tolerance` of `target`. Returns the pace and the speed it reaches.
pub fn calibrate_pace(
    profile: &ReaderProfile,
    passages: &[&Passage],
    target: f64,
    tolerance: f64,
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<(f64, f64)> {
    let speed_at = |pace: f64| {
        let p = ReaderProfile { pace_syll_s: pace, ..profile.clone() };
        mean_speed(&p, passages, Mode::Gary, seeds, opts)
    };
    let (mut lo, mut hi) = (0.25 * target, 4.0 * target);
    let mut best = (profile.pace_syll_s, f64::INFINITY);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let speed = speed_at(mid)?;
        if (speed - target).abs() < (best.1 - target).abs() {
            best = (mid, speed);
        }
        if (speed - target).abs() <= tolerance {
            return Ok((mid, speed));
        }
        if speed < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
