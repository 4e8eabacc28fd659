//! Gaze processing: polynomial calibration from raw tracker coordinates to
//! screen pixels, dispersion-threshold (I-DT) fixation detection, and
//! hit-testing against areas of interest.

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{Point, Rect};

/// Number of dots shown during calibration.
pub const CALIBRATION_TARGETS: usize = 12;
pub const MIN_SAMPLES_PER_TARGET: usize = 5;

#[derive(Debug, Error)]
pub enum GazeError {
    #[error("calibration needs exactly {CALIBRATION_TARGETS} targets, got {0}")]
    WrongTargetCount(usize),
    #[error("target {target} has {valid} valid samples, need {MIN_SAMPLES_PER_TARGET}")]
    InsufficientSamples { target: usize, valid: usize },
    #[error("calibration targets are collinear or raw samples do not span the plane")]
    DegenerateGeometry,
    #[error("gaze trace: {0}")]
    Trace(#[from] csv::Error),
    #[error("gaze trace timestamps must increase strictly (row {0})")]
    NonMonotonic(usize),
}

pub type Result<T> = std::result::Result<T, GazeError>;

/// One sample as reported by the tracker, in device coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawGazeSample {
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

/// A calibrated sample; `point` is `None` for samples that were invalid or
/// mapped implausibly far off screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: f64,
    pub point: Option<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenBounds {
    pub width: f64,
    pub height: f64,
}

impl ScreenBounds {
    /// True when `p` lies inside the screen grown to twice its size about its centre.
    pub fn plausible(&self, p: Point) -> bool {
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        p.x >= -hw && p.x <= self.width + hw && p.y >= -hh && p.y <= self.height + hh
    }
}

/// The calibration dot grid: four columns by three rows.
pub fn calibration_targets(bounds: ScreenBounds) -> Vec<Point> {
    let cols = [0.1, 0.1 + 0.8 / 3.0, 0.1 + 1.6 / 3.0, 0.9];
    let rows = [0.1, 0.5, 0.9];
    rows.iter()
        .flat_map(|r| cols.iter().map(move |c| Point::new(c * bounds.width, r * bounds.height)))
        .collect()
}

/// Second-order polynomial map from raw device coordinates to screen pixels.
///
/// Raw coordinates are centred and scaled before evaluation, so the
/// coefficients act on normalised `(u, v)`:
/// `x' = c0 + c1·u + c2·v + c3·u² + c4·v² + c5·u·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub x_coeffs: [f64; 6],
    pub y_coeffs: [f64; 6],
    pub raw_center: Point,
    pub raw_scale: f64,
    /// Per-axis residual RMS over the fitting samples, in px.
    pub rms_error_px: f64,
    pub screen: ScreenBounds,
}

fn monomials(u: f64, v: f64) -> [f64; 6] {
    [1.0, u, v, u * u, v * v, u * v]
}

fn dot(c: &[f64; 6], m: &[f64; 6]) -> f64 {
    c.iter().zip(m).map(|(a, b)| a * b).sum()
}

impl CalibrationModel {
    pub fn identity(screen: ScreenBounds) -> Self {
        Self {
            x_coeffs: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            y_coeffs: [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            raw_center: Point::new(0.0, 0.0),
            raw_scale: 1.0,
            rms_error_px: 0.0,
            screen,
        }
    }

    /// Least-squares fit over every valid sample of every target.
    pub fn fit(pairs: &[(Point, Vec<RawGazeSample>)], screen: ScreenBounds) -> Result<Self> {
        if pairs.len() != CALIBRATION_TARGETS {
            return Err(GazeError::WrongTargetCount(pairs.len()));
        }
        for (target, (_, batch)) in pairs.iter().enumerate() {
            let valid = batch.iter().filter(|s| s.valid).count();
            if valid < MIN_SAMPLES_PER_TARGET {
                return Err(GazeError::InsufficientSamples { target, valid });
            }
        }
        if collinear(pairs.iter().map(|(t, _)| *t)) {
            return Err(GazeError::DegenerateGeometry);
        }

        let rows: Vec<(Point, Point)> = pairs
            .iter()
            .flat_map(|(t, batch)| batch.iter().filter(|s| s.valid).map(move |s| (*t, Point::new(s.x, s.y))))
            .collect();
        let n = rows.len() as f64;
        let cx = rows.iter().map(|(_, r)| r.x).sum::<f64>() / n;
        let cy = rows.iter().map(|(_, r)| r.y).sum::<f64>() / n;
        let scale = rows
            .iter()
            .map(|(_, r)| (r.x - cx).abs().max((r.y - cy).abs()))
            .fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GazeError::DegenerateGeometry);
        }

        let design = DMatrix::from_fn(rows.len(), 6, |i, j| {
            let (_, r) = rows[i];
            monomials((r.x - cx) / scale, (r.y - cy) / scale)[j]
        });
        let svd = design.clone().svd(true, true);
        let max_sv = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= max_sv * 1e-10) {
            return Err(GazeError::DegenerateGeometry);
        }
        let solve = |rhs: DVector<f64>| -> Result<[f64; 6]> {
            let sol = svd.solve(&rhs, 0.0).map_err(|_| GazeError::DegenerateGeometry)?;
            Ok(std::array::from_fn(|k| sol[k]))
        };
        let x_coeffs = solve(DVector::from_iterator(rows.len(), rows.iter().map(|(t, _)| t.x)))?;
        let y_coeffs = solve(DVector::from_iterator(rows.len(), rows.iter().map(|(t, _)| t.y)))?;

        let mut model = Self {
            x_coeffs,
            y_coeffs,
            raw_center: Point::new(cx, cy),
            raw_scale: scale,
            rms_error_px: 0.0,
            screen,
        };
        let sq: f64 = rows
            .iter()
            .map(|(t, r)| {
                let p = model.map(*r);
                (p.x - t.x).powi(2) + (p.y - t.y).powi(2)
            })
            .sum();
        model.rms_error_px = (sq / (2.0 * n)).sqrt();
        Ok(model)
    }

    /// Evaluates the polynomial without any validity checks.
    pub fn map(&self, raw: Point) -> Point {
        let m = monomials((raw.x - self.raw_center.x) / self.raw_scale, (raw.y - self.raw_center.y) / self.raw_scale);
        Point::new(dot(&self.x_coeffs, &m), dot(&self.y_coeffs, &m))
    }

    pub fn apply(&self, s: &RawGazeSample) -> GazeSample {
        let point = if s.valid {
            Some(self.map(Point::new(s.x, s.y))).filter(|p| self.screen.plausible(*p))
        } else {
            None
        };
        GazeSample { t_ms: s.t_ms, point }
    }
}

fn collinear(points: impl Iterator<Item = Point>) -> bool {
    let pts: Vec<Point> = points.collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &pts {
        sxx += (p.x - mx).powi(2);
        syy += (p.y - my).powi(2);
        sxy += (p.x - mx) * (p.y - my);
    }
    let trace = sxx + syy;
    trace == 0.0 || (sxx * syy - sxy * sxy) <= 1e-9 * trace * trace
}

/// A period of stable gaze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start_ms: f64,
    pub duration_ms: f64,
    pub centroid: Point,
}

impl Fixation {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + self.duration_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationParams {
    /// Maximum bounding-box width + height of a fixation, px.
    pub dispersion_px: f64,
    pub min_duration_ms: f64,
}

impl Default for FixationParams {
    fn default() -> Self {
        Self { dispersion_px: 60.0, min_duration_ms: 80.0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct BBox {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl BBox {
    fn new(p: Point) -> Self {
        Self { min_x: p.x, max_x: p.x, min_y: p.y, max_y: p.y }
    }

    fn with(&self, p: Point) -> Self {
        Self {
            min_x: self.min_x.min(p.x),
            max_x: self.max_x.max(p.x),
            min_y: self.min_y.min(p.y),
            max_y: self.max_y.max(p.y),
        }
    }

    fn dispersion(&self) -> f64 {
        (self.max_x - self.min_x) + (self.max_y - self.min_y)
    }
}

fn fixation_of(window: impl Iterator<Item = GazeSample> + Clone) -> Fixation {
    let mut it = window.clone();
    let first = it.next().expect("non-empty fixation window");
    let last = it.last().unwrap_or(first);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for s in window {
        let p = s.point.expect("fixation windows hold valid samples");
        sx += p.x;
        sy += p.y;
        n += 1.0;
    }
    Fixation {
        start_ms: first.t_ms,
        duration_ms: last.t_ms - first.t_ms,
        centroid: Point::new(sx / n, sy / n),
    }
}

/// Dispersion-threshold identification over a finished stream.
///
/// Starting from the earliest unconsumed sample, the window is grown to span
/// `min_duration_ms`; if it stays within `dispersion_px` and holds no invalid
/// sample it becomes a fixation and is extended while dispersion allows.
/// Otherwise the window start slides by one sample.
pub fn detect_fixations(stream: &[GazeSample], params: &FixationParams) -> Vec<Fixation> {
    let mut out = Vec::new();
    let n = stream.len();
    let mut i = 0;
    'outer: while i < n {
        let Some(p0) = stream[i].point else {
            i += 1;
            continue;
        };
        let t0 = stream[i].t_ms;
        let mut bbox = BBox::new(p0);
        let mut j = i;
        while stream[j].t_ms - t0 < params.min_duration_ms {
            j += 1;
            if j == n {
                break 'outer;
            }
            match stream[j].point {
                Some(p) if bbox.with(p).dispersion() <= params.dispersion_px => bbox = bbox.with(p),
                _ => {
                    i += 1;
                    continue 'outer;
                }
            }
        }
        while let Some(p) = stream.get(j + 1).and_then(|s| s.point) {
            let grown = bbox.with(p);
            if grown.dispersion() > params.dispersion_px {
                break;
            }
            bbox = grown;
            j += 1;
        }
        out.push(fixation_of(stream[i..=j].iter().copied()));
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportKind {
    /// The window has just reached the minimum duration.
    Onset,
    /// The fixation is still going; duration so far.
    Update,
    /// The fixation has ended; matches the batch detector's output.
    End,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixationReport {
    pub kind: ReportKind,
    pub fixation: Fixation,
}

/// Incremental I-DT over a live stream. `End` reports reproduce
/// [`detect_fixations`] exactly; `Onset` and periodic `Update` reports let a
/// consumer react while the fixation is still in progress.
#[derive(Debug, Clone)]
pub struct FixationDetector {
    params: FixationParams,
    update_interval_ms: f64,
    buf: VecDeque<GazeSample>,
    confirmed: Option<(BBox, f64)>, // bbox, time of last report
}

impl FixationDetector {
    pub fn new(params: FixationParams, update_interval_ms: f64) -> Self {
        Self { params, update_interval_ms, buf: VecDeque::new(), confirmed: None }
    }

    pub fn params(&self) -> &FixationParams {
        &self.params
    }

    pub fn push(&mut self, sample: GazeSample) -> Vec<FixationReport> {
        let mut out = Vec::new();
        if let Some((bbox, last_report)) = self.confirmed {
            if let Some(grown) = sample.point.map(|p| bbox.with(p)).filter(|b| b.dispersion() <= self.params.dispersion_px) {
                self.buf.push_back(sample);
                let mut last_report = last_report;
                if sample.t_ms - last_report >= self.update_interval_ms {
                    out.push(self.report(ReportKind::Update));
                    last_report = sample.t_ms;
                }
                self.confirmed = Some((grown, last_report));
                return out;
            }
            out.push(self.report(ReportKind::End));
            self.buf.clear();
            self.confirmed = None;
        }
        self.buf.push_back(sample);
        self.scan(&mut out);
        out
    }

    /// Ends the stream, closing any fixation in progress.
    pub fn finish(&mut self) -> Vec<FixationReport> {
        let out = if self.confirmed.is_some() { vec![self.report(ReportKind::End)] } else { Vec::new() };
        self.buf.clear();
        self.confirmed = None;
        out
    }

    fn report(&self, kind: ReportKind) -> FixationReport {
        FixationReport { kind, fixation: fixation_of(self.buf.iter().copied()) }
    }

    fn scan(&mut self, out: &mut Vec<FixationReport>) {
        loop {
            while self.buf.front().is_some_and(|s| s.point.is_none()) {
                self.buf.pop_front();
            }
            let Some(first) = self.buf.front().copied() else { return };
            let mut bbox = BBox::new(first.point.unwrap());
            let mut reached = None;
            let mut failed = false;
            for (j, s) in self.buf.iter().enumerate().skip(1) {
                match s.point.map(|p| bbox.with(p)).filter(|b| b.dispersion() <= self.params.dispersion_px) {
                    Some(grown) => bbox = grown,
                    None => {
                        failed = true;
                        break;
                    }
                }
                if s.t_ms - first.t_ms >= self.params.min_duration_ms {
                    reached = Some(j);
                    break;
                }
            }
            if failed {
                self.buf.pop_front();
                continue;
            }
            let Some(mut j) = reached else { return };
            while let Some(grown) = self
                .buf
                .get(j + 1)
                .and_then(|s| s.point)
                .map(|p| bbox.with(p))
                .filter(|b| b.dispersion() <= self.params.dispersion_px)
            {
                bbox = grown;
                j += 1;
            }
            if j + 1 == self.buf.len() {
                let onset = self.report(ReportKind::Onset);
                self.confirmed = Some((bbox, self.buf[j].t_ms));
                out.push(onset);
                return;
            }
            let rest = self.buf.split_off(j + 1);
            out.push(self.report(ReportKind::Onset));
            out.push(self.report(ReportKind::End));
            self.buf = rest;
        }
    }
}

/// True iff `point` lies in any rectangle, edges included.
pub fn hit_test(point: Point, region: &[Rect]) -> bool {
    region.iter().any(|r| r.contains(point))
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    t_ms: f64,
    x: f64,
    y: f64,
    valid: u8,
}

/// Writes a raw gaze trace as `t_ms,x,y,valid` CSV with a header row.
pub fn write_trace<W: Write>(writer: W, samples: &[RawGazeSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(TraceRow { t_ms: s.t_ms, x: s.x, y: s.y, valid: s.valid as u8 })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<RawGazeSample>> {
    let mut out: Vec<RawGazeSample> = Vec::new();
    for (row, rec) in csv::Reader::from_reader(reader).deserialize::<TraceRow>().enumerate() {
        let rec = rec?;
        if out.last().is_some_and(|prev| rec.t_ms <= prev.t_ms) {
            return Err(GazeError::NonMonotonic(row + 1));
        }
        out.push(RawGazeSample { t_ms: rec.t_ms, x: rec.x, y: rec.y, valid: rec.valid != 0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCREEN: ScreenBounds = ScreenBounds { width: 1280.0, height: 720.0 };

    fn batch(raw: Point, n: usize) -> Vec<RawGazeSample> {
        (0..n).map(|i| RawGazeSample { t_ms: i as f64, x: raw.x, y: raw.y, valid: true }).collect()
    }

    fn pairs_with(f: impl Fn(Point) -> Point) -> Vec<(Point, Vec<RawGazeSample>)> {
        calibration_targets(SCREEN).into_iter().map(|t| (t, batch(f(t), 5))).collect()
    }

    fn stream(points: &[(f64, f64)]) -> Vec<GazeSample> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| GazeSample { t_ms: i as f64 * 1000.0 / 60.0, point: Some(Point::new(x, y)) })
            .collect()
    }

    #[test]
    fn twelve_targets_span_the_screen() {
        let t = calibration_targets(SCREEN);
        assert_eq!(t.len(), 12);
        assert_eq!(t[0], Point::new(128.0, 72.0));
        assert_eq!(t[11], Point::new(1152.0, 648.0));
    }

    #[test]
    fn identity_fit() {
        let model = CalibrationModel::fit(&pairs_with(|p| p), SCREEN).unwrap();
        assert!(model.rms_error_px < 1e-9);
        let p = model.map(Point::new(100.0, 200.0));
        assert!((p.x - 100.0).abs() < 1e-9 && (p.y - 200.0).abs() < 1e-9);
    }

    #[test]
    fn affine_distortion_recovered() {
        let pairs = pairs_with(|p| Point::new(1.1 * p.x + 30.0, 1.1 * p.y + 30.0));
        let model = CalibrationModel::fit(&pairs, SCREEN).unwrap();
        for (target, batch) in &pairs {
            let p = model.map(Point::new(batch[0].x, batch[0].y));
            assert!((p.x - target.x).abs() < 1e-6 && (p.y - target.y).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration_guards() {
        let mut pairs = pairs_with(|p| p);
        pairs.pop();
        assert!(matches!(CalibrationModel::fit(&pairs, SCREEN), Err(GazeError::WrongTargetCount(11))));

        let mut pairs = pairs_with(|p| p);
        pairs[3].1.truncate(4);
        assert!(matches!(
            CalibrationModel::fit(&pairs, SCREEN),
            Err(GazeError::InsufficientSamples { target: 3, valid: 4 })
        ));

        let line: Vec<_> = (0..12)
            .map(|i| {
                let t = Point::new(100.0 + 50.0 * i as f64, 300.0);
                (t, batch(t, 5))
            })
            .collect();
        assert!(matches!(CalibrationModel::fit(&line, SCREEN), Err(GazeError::DegenerateGeometry)));
    }

    #[test]
    fn apply_passthrough_and_bounds() {
        let model = CalibrationModel::identity(SCREEN);
        let s = RawGazeSample { t_ms: 5.0, x: 100.0, y: 200.0, valid: true };
        assert_eq!(model.apply(&s).point, Some(Point::new(100.0, 200.0)));
        assert_eq!(model.apply(&RawGazeSample { valid: false, ..s }).point, None);
        assert_eq!(model.apply(&RawGazeSample { x: 5000.0, ..s }).point, None);
        // the plausible band reaches half a screen beyond every edge
        assert!(model.apply(&RawGazeSample { x: -640.0, y: 1080.0, ..s }).point.is_some());
        assert!(model.apply(&RawGazeSample { x: -640.1, ..s }).point.is_none());
    }

    #[test]
    fn constant_gaze_is_one_fixation() {
        let s = stream(&[(400.0, 300.0); 18]);
        let f = detect_fixations(&s, &FixationParams::default());
        assert_eq!(f.len(), 1);
        assert!((f[0].duration_ms - 300.0).abs() <= 17.0);
        assert_eq!(f[0].centroid, Point::new(400.0, 300.0));
    }

    #[test]
    fn two_clusters_with_saccade() {
        let mut pts = vec![(300.0, 300.0); 12];
        pts.push((400.0, 300.0));
        pts.extend(vec![(500.0, 300.0); 12]);
        let f = detect_fixations(&stream(&pts), &FixationParams::default());
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].centroid.x, 300.0);
        assert_eq!(f[1].centroid.x, 500.0);
    }

    #[test]
    fn invalid_samples_yield_nothing() {
        let s: Vec<_> = (0..30).map(|i| GazeSample { t_ms: i as f64 * 16.0, point: None }).collect();
        assert!(detect_fixations(&s, &FixationParams::default()).is_empty());
        assert!(detect_fixations(&[], &FixationParams::default()).is_empty());
    }

    #[test]
    fn invalid_sample_splits_a_fixation() {
        let mut s = stream(&[(400.0, 300.0); 30]);
        s[15].point = None;
        let f = detect_fixations(&s, &FixationParams::default());
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].end_ms(), s[14].t_ms);
        assert_eq!(f[1].start_ms, s[16].t_ms);
    }

    #[test]
    fn streaming_reports() {
        let mut pts = vec![(300.0, 300.0); 20];
        pts.extend(vec![(700.0, 300.0); 8]);
        let s = stream(&pts);
        let mut det = FixationDetector::new(FixationParams::default(), 100.0);
        let mut reports = Vec::new();
        for sample in &s {
            reports.extend(det.push(*sample));
        }
        reports.extend(det.finish());
        let kinds: Vec<_> = reports.iter().map(|r| r.kind).collect();
        // onset after 5 intervals (83 ms), updates every 100 ms, end at the jump
        assert_eq!(
            kinds,
            [ReportKind::Onset, ReportKind::Update, ReportKind::Update, ReportKind::End, ReportKind::Onset, ReportKind::End]
        );
        assert_eq!(reports[0].fixation.end_ms(), s[5].t_ms);
        let ends: Vec<_> = reports.iter().filter(|r| r.kind == ReportKind::End).map(|r| r.fixation).collect();
        assert_eq!(ends, detect_fixations(&s, &FixationParams::default()));
    }

    #[test]
    fn hit_test_edges() {
        let r = Rect::new(10.0, 10.0, 20.0, 20.0);
        assert!(hit_test(Point::new(10.0, 30.0), &[r]));
        assert!(!hit_test(Point::new(9.99, 30.0), &[r]));
        assert!(!hit_test(Point::new(15.0, 15.0), &[]));
    }

    #[test]
    fn trace_csv() {
        let samples = vec![
            RawGazeSample { t_ms: 0.0, x: 1.5, y: 2.0, valid: true },
            RawGazeSample { t_ms: 16.5, x: 0.0, y: 0.0, valid: false },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_ms,x,y,valid\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), samples);
        let bad = "t_ms,x,y,valid\n5,0,0,1\n5,0,0,1\n";
        assert!(matches!(read_trace(bad.as_bytes()), Err(GazeError::NonMonotonic(2))));
    }
}
