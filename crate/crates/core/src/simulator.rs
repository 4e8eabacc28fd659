//! Synthetic readers that look at the screen in closed loop with the engine.
//!
//! A [`Reader`] decodes text at its own pace and emits one raw tracker sample
//! per frame. Gaze dwells on the word under the reading cursor; in GARY mode
//! the reader saccades to the words after the highlight as soon as its cursor
//! reaches the highlighted phrase's last word.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, Mode, Playback};
use crate::gaze::{calibration_targets, CalibrationModel, GazeError, RawGazeSample, ScreenBounds};
use crate::layout::{PageLayout, Point, Rect, Viewport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown reader preset {0:?} (expected typical, dyslexic or dyslexic_inaccurate)")]
    UnknownPreset(String),
    #[error("invalid reader profile: {0}")]
    InvalidProfile(&'static str),
    #[error("reader profile JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Calibration(#[from] GazeError),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub const PRESETS: [&str; 3] = ["typical", "dyslexic", "dyslexic_inaccurate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderProfile {
    pub name: String,
    /// Intrinsic decoding pace, syllables per second.
    pub pace_syll_s: f64,
    pub fixation_ms_mean: f64,
    pub fixation_ms_sd: f64,
    /// Chance that a new fixation goes back to an earlier word.
    pub regression_prob: f64,
    /// Chance that a new fixation leaves the text.
    pub off_text_prob: f64,
    pub off_text_ms: f64,
    /// Word-reading error count; only used to classify the profile.
    pub decoding_errors: u32,
    pub seed: u64,
}

impl ReaderProfile {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.pace_syll_s > 0.0) || !self.pace_syll_s.is_finite() {
            return Err(SimError::InvalidProfile("pace_syll_s must be positive"));
        }
        if !prob(self.regression_prob) || !prob(self.off_text_prob) {
            return Err(SimError::InvalidProfile("probabilities must lie in [0, 1]"));
        }
        if !(self.fixation_ms_mean > 0.0) || !(self.fixation_ms_sd >= 0.0) || !(self.off_text_ms >= 0.0) {
            return Err(SimError::InvalidProfile("durations must be non-negative and the mean fixation positive"));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(json)?;
        p.validate()?;
        Ok(p)
    }
}

/// Calibrated decoding paces of the presets (see `calibrate_pace`); each
/// brings closed-loop GARY speed on the bundled texts to its target.
pub const TYPICAL_PACE: f64 = 2.5336;
pub const DYSLEXIC_PACE: f64 = 2.5319;
pub const TYPICAL_TARGET_SPEED: f64 = 2.4;
pub const DYSLEXIC_TARGET_SPEED: f64 = 2.2;

pub fn make_profile(preset: &str) -> Result<ReaderProfile> {
    let p = match preset {
        "typical" => ReaderProfile {
            name: "typical".into(),
            pace_syll_s: TYPICAL_PACE,
            fixation_ms_mean: 230.0,
            fixation_ms_sd: 60.0,
            regression_prob: 0.05,
            off_text_prob: 0.01,
            off_text_ms: 600.0,
            decoding_errors: 3,
            seed: 1,
        },
        "dyslexic" => ReaderProfile {
            name: "dyslexic".into(),
            pace_syll_s: DYSLEXIC_PACE,
            fixation_ms_mean: 300.0,
            fixation_ms_sd: 90.0,
            regression_prob: 0.10,
            off_text_prob: 0.02,
            off_text_ms: 800.0,
            decoding_errors: 8,
            seed: 2,
        },
        "dyslexic_inaccurate" => ReaderProfile {
            name: "dyslexic_inaccurate".into(),
            pace_syll_s: DYSLEXIC_PACE,
            fixation_ms_mean: 300.0,
            fixation_ms_sd: 90.0,
            regression_prob: 0.18,
            off_text_prob: 0.04,
            off_text_ms: 900.0,
            decoding_errors: 13,
            seed: 3,
        },
        other => return Err(SimError::UnknownPreset(other.to_string())),
    };
    Ok(p)
}

/// Simulated tracker: an affine distortion from screen to device
/// coordinates plus isotropic Gaussian noise on the screen side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    /// Row-major `[a, b, c, d, e, f]`: `raw = (a·x + b·y + c, d·x + e·y + f)`.
    pub distortion: [f64; 6],
    pub noise_px: f64,
    pub sample_hz: f64,
}

impl Default for Tracker {
    fn default() -> Self {
        Self { distortion: [0.92, 0.02, 25.0, -0.015, 1.07, -18.0], noise_px: 5.0, sample_hz: 60.0 }
    }
}

impl Tracker {
    pub fn frame_ms(&self) -> f64 {
        1000.0 / self.sample_hz
    }

    pub fn to_raw(&self, p: Point) -> Point {
        let [a, b, c, d, e, f] = self.distortion;
        Point::new(a * p.x + b * p.y + c, d * p.x + e * p.y + f)
    }

    fn noisy<R: Rng>(&self, rng: &mut R, p: Point) -> Point {
        if self.noise_px == 0.0 {
            return p;
        }
        let n = Normal::new(0.0, self.noise_px).expect("finite noise");
        Point::new(p.x + n.sample(rng), p.y + n.sample(rng))
    }

    /// One raw sample of a reader looking at `screen`.
    pub fn sample<R: Rng>(&self, rng: &mut R, t_ms: f64, screen: Point) -> RawGazeSample {
        let raw = self.to_raw(self.noisy(rng, screen));
        RawGazeSample { t_ms, x: raw.x, y: raw.y, valid: true }
    }

    /// Runs the twelve-dot procedure and fits a calibration model.
    pub fn calibrate<R: Rng>(&self, rng: &mut R, screen: ScreenBounds, samples_per_target: usize) -> Result<CalibrationModel> {
        let dt = self.frame_ms();
        let pairs: Vec<_> = calibration_targets(screen)
            .into_iter()
            .enumerate()
            .map(|(k, target)| {
                let batch = (0..samples_per_target)
                    .map(|j| self.sample(rng, (k * samples_per_target + j) as f64 * dt, target))
                    .collect();
                (target, batch)
            })
            .collect();
        Ok(CalibrationModel::fit(&pairs, screen)?)
    }
}

pub fn screen_of(vp: &Viewport) -> ScreenBounds {
    ScreenBounds { width: vp.width_px as f64, height: vp.height_px as f64 }
}

/// Where the simulated reader is decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadingCursor {
    pub word: usize,
    /// Syllables of `word` already decoded.
    pub progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Intent {
    Read,
    Regress,
    Away,
}

#[derive(Debug, Clone, Copy)]
struct Dwell {
    intent: Intent,
    word: Option<usize>,
    target: Point,
    until_ms: f64,
}

/// A closed-loop synthetic reader.
#[derive(Debug, Clone)]
pub struct Reader {
    profile: ReaderProfile,
    tracker: Tracker,
    screen: ScreenBounds,
    rng: ChaCha8Rng,
    cursor: ReadingCursor,
    dwell: Option<Dwell>,
    phrase_seen: Option<usize>,
    last_t: Option<f64>,
}

/// Mixes a run seed into the profile's own seed.
pub fn session_seed(profile_seed: u64, run_seed: u64) -> u64 {
    profile_seed ^ run_seed.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Reader {
    pub fn new(profile: ReaderProfile, tracker: Tracker, screen: ScreenBounds, seed: u64) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            profile,
            tracker,
            screen,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: ReadingCursor { word: 0, progress: 0.0 },
            dwell: None,
            phrase_seen: None,
            last_t: None,
        })
    }

    pub fn profile(&self) -> &ReaderProfile {
        &self.profile
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn cursor(&self) -> ReadingCursor {
        self.cursor
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Advances the reader to `t_ms` against the engine's current state and
    /// returns the tracker sample for that frame.
    pub fn step(&mut self, t_ms: f64, engine: &Engine) -> RawGazeSample {
        let dt = self.last_t.map_or(0.0, |last| (t_ms - last).max(0.0));
        self.last_t = Some(t_ms);
        let ctx = Context::of(engine, self.screen);
        self.resync(&ctx);

        let reading = matches!(self.dwell, Some(Dwell { intent: Intent::Read, .. }) | None);
        if reading && ctx.started {
            self.advance_cursor(&ctx, dt);
        }

        let desired = self.desired_word(&ctx);
        let replan = match self.dwell {
            None => true,
            Some(d) if t_ms >= d.until_ms => true,
            Some(d) if ctx.gary && d.intent == Intent::Read => {
                let phrase_changed = self.phrase_seen != ctx.phrase;
                let wants_ahead = ctx.ahead.is_some_and(|(lo, _)| desired >= lo);
                let looking_ahead = d.word.zip(ctx.ahead).is_some_and(|(w, (lo, hi))| (lo..=hi).contains(&w));
                (phrase_changed && d.word != Some(desired)) || (wants_ahead && !looking_ahead)
            }
            Some(_) => false,
        };
        self.phrase_seen = ctx.phrase;
        if replan {
            self.dwell = Some(self.plan(t_ms, &ctx, desired));
        }
        let target = self.dwell.expect("planned").target;
        self.tracker.sample(&mut self.rng, t_ms, target)
    }

    fn resync(&mut self, ctx: &Context) {
        if let Some(page) = ctx.page {
            if self.cursor.word < page.first_word() {
                self.cursor = ReadingCursor { word: page.first_word(), progress: 0.0 };
            }
        }
    }

    fn advance_cursor(&mut self, ctx: &Context, dt: f64) {
        let cap = ctx.cap;
        self.cursor.progress += self.profile.pace_syll_s * dt / 1000.0;
        loop {
            let syll = ctx.syllables(self.cursor.word);
            if self.cursor.progress < syll {
                break;
            }
            if self.cursor.word >= cap {
                self.cursor.progress = syll;
                break;
            }
            self.cursor.progress -= syll;
            self.cursor.word += 1;
        }
    }

    /// The word the reader wants to look at next when reading normally.
    fn desired_word(&self, ctx: &Context) -> usize {
        let w = self.cursor.word;
        if !ctx.gary {
            return w.min(ctx.last_word);
        }
        let Some([lo, hi]) = ctx.highlight else { return w.min(ctx.last_word) };
        match ctx.ahead {
            Some((a_lo, a_hi)) if w >= hi => w.clamp(a_lo, a_hi),
            _ => w.clamp(lo, hi),
        }
    }

    fn plan(&mut self, t_ms: f64, ctx: &Context, desired: usize) -> Dwell {
        let u: f64 = self.rng.random();
        let p = self.profile.clone();
        if u < p.off_text_prob {
            let x = ctx.screen.width * self.rng.random_range(0.2..0.8);
            let target = Point::new(x, ctx.screen.height + 150.0);
            return Dwell { intent: Intent::Away, word: None, target, until_ms: t_ms + p.off_text_ms };
        }
        let duration = self.fixation_ms();
        let page_first = ctx.page.map_or(0, |pg| pg.first_word());
        if u < p.off_text_prob + p.regression_prob && desired > page_first {
            let back = self.rng.random_range(1..=3usize);
            let word = desired.saturating_sub(back).max(page_first);
            let target = self.point_on(ctx, word);
            return Dwell { intent: Intent::Regress, word: Some(word), target, until_ms: t_ms + duration };
        }
        let target = self.point_on(ctx, desired);
        Dwell { intent: Intent::Read, word: Some(desired), target, until_ms: t_ms + duration }
    }

    fn point_on(&mut self, ctx: &Context, word: usize) -> Point {
        let rect = ctx.word_rect(word).unwrap_or(Rect::new(ctx.screen.width / 2.0, ctx.screen.height / 2.0, 0.0, 0.0));
        let dx = self.rng.random_range(-0.25..=0.25) * rect.w;
        let c = rect.center();
        Point::new(c.x + dx, c.y)
    }

    /// Truncated normal, at least 100 ms so the detector can see it.
    fn fixation_ms(&mut self) -> f64 {
        let (mean, sd) = (self.profile.fixation_ms_mean, self.profile.fixation_ms_sd);
        let lo = (mean - 2.0 * sd).max(100.0);
        let hi = (mean + 3.0 * sd).max(lo);
        if sd == 0.0 {
            return mean.clamp(lo, hi);
        }
        let n = Normal::new(mean, sd).expect("finite fixation distribution");
        for _ in 0..64 {
            let d = n.sample(&mut self.rng);
            if (lo..=hi).contains(&d) {
                return d;
            }
        }
        mean.clamp(lo, hi)
    }
}

/// What the reader can see of the engine at one frame.
struct Context<'a> {
    gary: bool,
    started: bool,
    screen: ScreenBounds,
    page: Option<&'a PageLayout>,
    phrase: Option<usize>,
    highlight: Option<[usize; 2]>,
    /// Words of the look-ahead region, if the highlight has one.
    ahead: Option<(usize, usize)>,
    /// Furthest word the cursor may reach.
    cap: usize,
    last_word: usize,
    word_syllables: &'a [usize],
}

impl<'a> Context<'a> {
    fn of(engine: &'a Engine, screen: ScreenBounds) -> Self {
        let st = engine.state();
        let seg = engine.segmented();
        let last_word = seg.word_count() - 1;
        let finished = st.playback == Playback::Finished;
        let page = (!finished).then(|| &engine.pages()[st.page_index]);
        let highlight = engine.current_highlight().ok();
        let lookahead = engine.config().aoi.lookahead_words;
        let (ahead, cap) = match (page, highlight) {
            (Some(pg), Some([_, hi])) => {
                let end = (hi + lookahead).min(pg.last_word());
                ((hi < end).then_some((hi + 1, end)), end)
            }
            _ => (None, last_word),
        };
        Self {
            gary: st.mode == Mode::Gary,
            started: st.started && !finished,
            screen,
            page,
            phrase: (!finished).then_some(st.phrase_index),
            highlight,
            ahead,
            cap,
            last_word,
            word_syllables: &seg.word_syllables,
        }
    }

    fn syllables(&self, word: usize) -> f64 {
        self.word_syllables.get(word).copied().unwrap_or(1) as f64
    }

    fn word_rect(&self, word: usize) -> Option<Rect> {
        self.page.and_then(|p| p.locate(word)).map(|(_, b)| b.rect)
    }
}

