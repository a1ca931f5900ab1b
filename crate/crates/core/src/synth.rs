//! Labeled synthetic sessions with a planted attention signal.
//!
//! Positive sessions move the cursor into the ad box early and dwell there;
//! negative sessions wander in the lower part of the page and never enter
//! any ad box. Coordinates carry Gaussian noise and events arrive on a
//! jittered polling clock.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::rng::{self, StreamRng};
use crate::session::{AdFormat, RawEvent, Rect, Session};

pub const VIEWPORT_WIDTHS: [u32; 5] = [1024, 1280, 1366, 1440, 1920];
pub const VIEWPORT_H: u32 = 900;
/// Negative trajectories stay strictly below this page row.
pub const NEGATIVE_MIN_Y: f64 = 440.0;
pub const POLL_MS: u64 = 150;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub positive_fraction: f64,
    /// Sessions with a neutral (3) answer, dropped by cleaning.
    pub neutral_fraction: f64,
    /// Sessions with fewer than five cursor coordinates.
    pub short_fraction: f64,
    pub noise_px: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(count: usize, seed: u64) -> SynthConfig {
        SynthConfig { count, positive_fraction: 0.5, neutral_fraction: 0.0, short_fraction: 0.0, noise_px: 6.0, seed }
    }
}

/// Ad placement per format, in page pixels for the given viewport width.
pub fn ad_box_for(format: AdFormat, viewport_w: u32) -> Rect {
    let w = f64::from(viewport_w);
    let (x, y, bw, bh) = match format {
        AdFormat::Organic => (0.10 * w, 140.0, 0.45 * w, 120.0),
        AdFormat::DdLeft => (0.10 * w, 170.0, 0.30 * w, 220.0),
        AdFormat::DdRight => (0.62 * w, 140.0, 0.30 * w, 250.0),
    };
    Rect { x: x as i64, y: y as i64, w: bw as u32, h: bh as u32 }
}

struct Walker<'a> {
    rng: &'a mut StreamRng,
    noise: Normal<f64>,
    t: u64,
    events: Vec<RawEvent>,
    max_x: f64,
}

impl Walker<'_> {
    fn emit(&mut self, x: f64, y: f64) {
        let nx = (x + self.noise.sample(self.rng)).clamp(0.0, self.max_x);
        let ny = (y + self.noise.sample(self.rng)).clamp(0.0, f64::from(VIEWPORT_H - 1));
        self.t += POLL_MS - 30 + self.rng.random_range(0..=60);
        self.events.push(RawEvent::mousemove(self.t, libm::round(nx) as u32, libm::round(ny) as u32));
    }

    /// Straight glide in `steps` polls.
    fn glide(&mut self, from: (f64, f64), to: (f64, f64), steps: usize) {
        for s in 1..=steps {
            let f = s as f64 / steps as f64;
            self.emit(from.0 + (to.0 - from.0) * f, from.1 + (to.1 - from.1) * f);
        }
    }
}

fn positive_path(w: &mut Walker, ad: &Rect, len: usize) {
    let (ax, ay) = (ad.x as f64, ad.y as f64);
    let (aw, ah) = (f64::from(ad.w), f64::from(ad.h));
    let start = (w.rng.random_range(0.0..w.max_x), w.rng.random_range(500.0..850.0));
    let inside = |rng: &mut StreamRng| (ax + rng.random_range(0.2..0.8) * aw, ay + rng.random_range(0.2..0.8) * ah);
    let entry = inside(w.rng);
    let approach = w.rng.random_range(3..8);
    w.glide(start, entry, approach);
    // dwell with small drifts inside the box
    let dwell = w.rng.random_range(25..40).min(len.saturating_sub(approach));
    let mut at = entry;
    for _ in 0..dwell {
        let next = if w.rng.random::<f64>() < 0.3 { inside(w.rng) } else { at };
        at = next;
        w.emit(at.0, at.1);
    }
    while w.events.len() < len {
        let to = (w.rng.random_range(0.0..w.max_x), w.rng.random_range(100.0..880.0));
        let steps = w.rng.random_range(3..10);
        w.glide(at, to, steps);
        at = to;
    }
    w.events.truncate(len);
}

fn negative_path(w: &mut Walker, len: usize) {
    let mut at = (w.rng.random_range(0.0..w.max_x), w.rng.random_range(500.0..850.0));
    let lo = NEGATIVE_MIN_Y + 25.0;
    while w.events.len() < len {
        let to = loop {
            let cand = (w.rng.random_range(0.0..w.max_x), w.rng.random_range(lo..880.0));
            let (dx, dy) = (cand.0 - at.0, cand.1 - at.1);
            if dx * dx + dy * dy >= 40.0 * 40.0 {
                break cand;
            }
        };
        let steps = w.rng.random_range(2..8);
        w.glide(at, to, steps);
        at = to;
    }
    w.events.truncate(len);
    // noise must not lift a point into ad rows
    for e in w.events.iter_mut() {
        e.y_px = e.y_px.max(NEGATIVE_MIN_Y as u32 + 1);
    }
}

/// Generate session `index` of the corpus.
pub fn synth_session(config: &SynthConfig, index: usize) -> Result<Session> {
    let mut rng = rng::stream(config.seed, "synth/session", &[index as u64]);
    let format = AdFormat::ALL[rng.random_range(0..3)];
    let viewport_w = VIEWPORT_WIDTHS[rng.random_range(0..VIEWPORT_WIDTHS.len())];
    let ad = ad_box_for(format, viewport_w);
    let roll: f64 = rng.random();
    let positive = rng.random::<f64>() < config.positive_fraction;
    let likert = if roll < config.neutral_fraction {
        3
    } else if positive {
        rng.random_range(4..=5)
    } else {
        rng.random_range(1..=2)
    };
    let short = rng.random::<f64>() < config.short_fraction;
    let len = if short { rng.random_range(1..5) } else { rng.random_range(40..120) };
    let noise = Normal::new(0.0, config.noise_px).map_err(|_| invalid("noise must be finite and non-negative"))?;
    let mut walker = Walker { rng: &mut rng, noise, t: 0, events: Vec::new(), max_x: f64::from(viewport_w - 1) };
    if short {
        // identical coordinates dedupe to one point
        for _ in 0..len {
            walker.t += POLL_MS;
            walker.events.push(RawEvent::mousemove(walker.t, 300, 700));
        }
    } else if positive {
        positive_path(&mut walker, &ad, len);
    } else {
        negative_path(&mut walker, len);
    }
    let mut events = walker.events;
    for e in events.iter_mut() {
        e.xpath = String::from("/html/body");
    }
    Session {
        session_id: format!("synth-{:016x}-{index:05}", config.seed),
        ad_format: format,
        viewport_w,
        viewport_h: VIEWPORT_H,
        ad_box: Some(ad),
        likert,
        events,
    }
    .validated()
}

pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<Session>> {
    (0..config.count).map(|i| synth_session(config, i)).collect()
}
