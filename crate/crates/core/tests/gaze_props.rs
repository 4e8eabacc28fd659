use gary_core::gaze::*;
use gary_core::layout::Point;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn stream(seed: u64, max_len: usize) -> Vec<GazeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..=max_len);
    let spread = rng.random_range(1.0..20.0);
    let noise = Normal::new(0.0, spread).unwrap();
    let mut t = 0.0;
    let mut centre = Point::new(500.0, 300.0);
    (0..n)
        .map(|_| {
            t += rng.random_range(5.0..25.0);
            if rng.random_bool(0.06) {
                centre = Point::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0));
            }
            let point = (!rng.random_bool(0.03))
                .then(|| Point::new(centre.x + noise.sample(&mut rng), centre.y + noise.sample(&mut rng)));
            GazeSample { t_ms: t, point }
        })
        .collect()
}

fn dispersion(window: &[GazeSample]) -> Option<f64> {
    let pts: Option<Vec<Point>> = window.iter().map(|s| s.point).collect();
    let pts = pts?;
    let (min_x, max_x) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let (min_y, max_y) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
    Some((max_x - min_x) + (max_y - min_y))
}

/// From each start, the longest window that is all valid and within the
/// dispersion limit; a fixation if it spans the minimum duration.
fn oracle(s: &[GazeSample], params: &FixationParams) -> Vec<Fixation> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let best = (i..s.len())
            .filter(|&j| dispersion(&s[i..=j]).is_some_and(|d| d <= params.dispersion_px))
            .max();
        match best {
            Some(j) if s[j].t_ms - s[i].t_ms >= params.min_duration_ms => {
                let pts: Vec<Point> = s[i..=j].iter().map(|x| x.point.unwrap()).collect();
                let n = pts.len() as f64;
                out.push(Fixation {
                    start_ms: s[i].t_ms,
                    duration_ms: s[j].t_ms - s[i].t_ms,
                    centroid: Point::new(pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n),
                });
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    out
}

fn params(seed: u64) -> FixationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    FixationParams { dispersion_px: rng.random_range(20.0..100.0), min_duration_ms: rng.random_range(40.0..200.0) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn idt_matches_brute_force(seed in any::<u64>()) {
        let s = stream(seed, 500);
        let p = params(seed);
        prop_assert_eq!(detect_fixations(&s, &p), oracle(&s, &p));
    }

    #[test]
    fn streaming_end_reports_equal_batch(seed in any::<u64>(), interval in 20.0f64..300.0) {
        let s = stream(seed, 500);
        let p = params(seed);
        let mut det = FixationDetector::new(p, interval);
        let mut reports = Vec::new();
        for x in &s {
            reports.extend(det.push(*x));
        }
        reports.extend(det.finish());
        let ends: Vec<Fixation> = reports.iter().filter(|r| r.kind == ReportKind::End).map(|r| r.fixation).collect();
        prop_assert_eq!(ends, detect_fixations(&s, &p));
        // Every End is preceded by an Onset of the same fixation start.
        let mut open = None;
        for r in &reports {
            match r.kind {
                ReportKind::Onset => { prop_assert!(open.is_none()); open = Some(r.fixation.start_ms); }
                ReportKind::Update => prop_assert_eq!(open, Some(r.fixation.start_ms)),
                ReportKind::End => { prop_assert_eq!(open, Some(r.fixation.start_ms)); open = None; }
            }
        }
    }

    #[test]
    fn fixations_are_disjoint_and_tight(seed in any::<u64>()) {
        let s = stream(seed, 500);
        let p = params(seed);
        let fx = detect_fixations(&s, &p);
        for w in fx.windows(2) {
            prop_assert!(w[0].end_ms() < w[1].start_ms);
        }
        for f in &fx {
            prop_assert!(f.duration_ms >= p.min_duration_ms);
            let members: Vec<GazeSample> = s.iter().filter(|x| x.t_ms >= f.start_ms && x.t_ms <= f.end_ms()).copied().collect();
            prop_assert!(dispersion(&members).unwrap() <= p.dispersion_px);
        }
    }
}

fn screen() -> ScreenBounds {
    ScreenBounds { width: 1280.0, height: 720.0 }
}

/// Quadratic raw -> screen map with random coefficients near identity.
#[derive(Clone, Copy, Debug)]
struct Quad {
    x: [f64; 6],
    y: [f64; 6],
}

impl Quad {
    fn random(rng: &mut ChaCha8Rng, quadratic: bool) -> Self {
        let q = if quadratic { 2e-5 } else { 0.0 };
        let mut r = |lo: f64, hi: f64| rng.random_range(lo..=hi);
        Quad {
            x: [r(-40.0, 40.0), r(0.9, 1.2), r(-0.05, 0.05), r(-q, q), r(-q, q), r(-q, q)],
            y: [r(-40.0, 40.0), r(-0.05, 0.05), r(0.9, 1.2), r(-q, q), r(-q, q), r(-q, q)],
        }
    }

    fn eval(&self, p: Point) -> Point {
        let m = [1.0, p.x, p.y, p.x * p.x, p.y * p.y, p.x * p.y];
        let d = |c: &[f64; 6]| c.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
        Point::new(d(&self.x), d(&self.y))
    }

    /// Raw point that maps onto `target`, by Newton iteration.
    fn preimage(&self, target: Point) -> Point {
        let mut p = target;
        for _ in 0..50 {
            let f = self.eval(p);
            let (fx, fy) = (f.x - target.x, f.y - target.y);
            let jac = |c: &[f64; 6]| (c[1] + 2.0 * c[3] * p.x + c[5] * p.y, c[2] + 2.0 * c[4] * p.y + c[5] * p.x);
            let (a, b) = jac(&self.x);
            let (c, d) = jac(&self.y);
            let det = a * d - b * c;
            p = Point::new(p.x - (d * fx - b * fy) / det, p.y - (a * fy - c * fx) / det);
        }
        p
    }
}

fn pairs(q: &Quad, rng: &mut ChaCha8Rng, sigma: f64, per_target: usize) -> Vec<(Point, Vec<RawGazeSample>)> {
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    calibration_targets(screen())
        .into_iter()
        .map(|target| {
            let batch = (0..per_target)
                .map(|k| {
                    let seen = if sigma > 0.0 {
                        Point::new(target.x + noise.sample(rng), target.y + noise.sample(rng))
                    } else {
                        target
                    };
                    let raw = q.preimage(seen);
                    RawGazeSample { t_ms: k as f64, x: raw.x, y: raw.y, valid: true }
                })
                .collect();
            (target, batch)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn noiseless_distortions_are_recovered(seed in any::<u64>(), quadratic in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Quad::random(&mut rng, quadratic);
        let data = pairs(&q, &mut rng, 0.0, 5);
        let model = CalibrationModel::fit(&data, screen()).unwrap();
        for (target, batch) in &data {
            let p = model.map(Point::new(batch[0].x, batch[0].y));
            prop_assert!((p.x - target.x).abs() < 1e-6 && (p.y - target.y).abs() < 1e-6, "{:?} vs {:?}", p, target);
        }
        prop_assert!(model.rms_error_px < 1e-6);
    }

    #[test]
    fn refitting_calibrated_data_keeps_the_residual(seed in any::<u64>(), sigma in 0.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Quad::random(&mut rng, false);
        let data = pairs(&q, &mut rng, sigma, 10);
        let model = CalibrationModel::fit(&data, screen()).unwrap();
        let mapped: Vec<(Point, Vec<RawGazeSample>)> = data
            .iter()
            .map(|(t, b)| {
                let b = b.iter().map(|s| { let p = model.map(Point::new(s.x, s.y)); RawGazeSample { x: p.x, y: p.y, ..*s } }).collect();
                (*t, b)
            })
            .collect();
        let again = CalibrationModel::fit(&mapped, screen()).unwrap();
        // Least squares can only do as well or better on its own output.
        prop_assert!(again.rms_error_px <= model.rms_error_px + 1e-9);
        // A quadratic of a quadratic is not quadratic, so with noise the refit
        // can shave off a little more, but only by a hair.
        prop_assert!(model.rms_error_px - again.rms_error_px < 1e-3);
        if sigma == 0.0 {
            prop_assert!((again.rms_error_px - model.rms_error_px).abs() < 1e-9);
        }
    }
}

#[test]
fn noisy_calibration_residual_stays_small() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Quad::random(&mut rng, seed % 2 == 0);
        let data = pairs(&q, &mut rng, 5.0, 30);
        let model = CalibrationModel::fit(&data, screen()).unwrap();
        worst = worst.max(model.rms_error_px);
    }
    assert!(worst <= 7.5, "worst rms {worst}");
}

#[test]
fn trace_csv_round_trip() {
    let s = vec![
        RawGazeSample { t_ms: 0.0, x: 1.5, y: -2.25, valid: true },
        RawGazeSample { t_ms: 16.666666666666668, x: 0.0, y: 0.0, valid: false },
    ];
    let mut buf = Vec::new();
    write_trace(&mut buf, &s).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("t_ms,x,y,valid\n"));
    assert_eq!(read_trace(buf.as_slice()).unwrap(), s);
}
