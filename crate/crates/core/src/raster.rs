//! Deterministic rasterization of cursor sessions on a 1280x900 canvas.
//!
//! Five encodings are supported: a Gaussian heatmap and four trajectory
//! variants (plain, time-colored, time-thinned, and both). Each can be drawn
//! over a gray ad placeholder. Drawing is hard-edged, so every pixel is
//! reproducible bit for bit.
//!
//! Heat accumulates in 32.32 fixed point (`u64`), which makes the field
//! exactly additive regardless of summation order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::session::{LabeledSession, Rect, Session};

pub const WIDTH: usize = 1280;
pub const HEIGHT: usize = 900;

/// Support radius of the heat kernel in pixels.
pub const HEAT_RADIUS: i32 = 25;
/// Kernel standard deviation: the support radius covers three sigmas.
pub const HEAT_SIGMA: f64 = HEAT_RADIUS as f64 / 3.0;
const FIXED_ONE: f64 = 4_294_967_296.0; // 2^32

pub const BASE_LINE_WIDTH: u32 = 3;
pub const THICK_START: f64 = 8.0;
pub const THICK_END: f64 = 1.0;
pub const MARKER_RADIUS: i32 = 6;
pub const PLACEHOLDER_BORDER: usize = 2;

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const RED: [u8; 3] = [255, 0, 0];
pub const PLACEHOLDER_GRAY: [u8; 3] = [128, 128, 128];

/// Heat gradient stops at 0, 1/3, 2/3 and 1.
pub const HEAT_STOPS: [[u8; 3]; 4] = [[255, 255, 255], [0, 0, 255], [255, 255, 0], [255, 0, 0]];

/// Downscale factor for the convolutional input (1280x900 -> 128x90).
pub const DOWNSCALE: usize = 10;
pub const SMALL_W: usize = WIDTH / DOWNSCALE;
pub const SMALL_H: usize = HEIGHT / DOWNSCALE;

#[inline]
fn round_half_up(v: f64) -> f64 {
    libm::floor(v + 0.5)
}

/// Row-major RGBA8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 4);
        for _ in 0..width * height {
            pixels.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
        }
        ImageBuffer { width, height, pixels }
    }

    /// Blank white canvas at the fixed render size.
    pub fn canvas() -> Self {
        Self::filled(WIDTH, HEIGHT, WHITE)
    }

    pub fn rgba(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let p = self.rgba(x, y);
        [p[0], p[1], p[2]]
    }

    #[inline]
    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 4;
        self.pixels[i..i + 4].copy_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
    }

    pub fn is_opaque(&self) -> bool {
        self.pixels.chunks_exact(4).all(|p| p[3] == 255)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RenderKind {
    Heatmap,
    Trajectory,
    TrajectoryColor,
    TrajectoryThickness,
    TrajectoryColorThickness,
}

impl RenderKind {
    pub const ALL: [RenderKind; 5] = [
        RenderKind::Heatmap,
        RenderKind::Trajectory,
        RenderKind::TrajectoryColor,
        RenderKind::TrajectoryThickness,
        RenderKind::TrajectoryColorThickness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RenderKind::Heatmap => "heatmap",
            RenderKind::Trajectory => "traj",
            RenderKind::TrajectoryColor => "traj-color",
            RenderKind::TrajectoryThickness => "traj-thick",
            RenderKind::TrajectoryColorThickness => "traj-color-thick",
        }
    }

    pub fn parse(s: &str) -> Option<RenderKind> {
        RenderKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn colored(self) -> bool {
        matches!(self, RenderKind::TrajectoryColor | RenderKind::TrajectoryColorThickness)
    }

    pub fn thickness(self) -> bool {
        matches!(self, RenderKind::TrajectoryThickness | RenderKind::TrajectoryColorThickness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RenderStyle {
    pub kind: RenderKind,
    pub with_ad_placeholder: bool,
}

impl RenderStyle {
    pub fn new(kind: RenderKind, with_ad_placeholder: bool) -> Self {
        RenderStyle { kind, with_ad_placeholder }
    }

    /// All ten style variants, placeholder-free first.
    pub fn all() -> Vec<RenderStyle> {
        [false, true]
            .into_iter()
            .flat_map(|ad| RenderKind::ALL.into_iter().map(move |k| RenderStyle::new(k, ad)))
            .collect()
    }

    /// `heatmap`, `traj-color-ad`, ...
    pub fn name(&self) -> alloc::string::String {
        let mut s = alloc::string::String::from(self.kind.as_str());
        if self.with_ad_placeholder {
            s.push_str("-ad");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanvasPoint {
    pub x: i32,
    pub y: i32,
    pub t_ms: u64,
}

/// Horizontal page pixel to canvas pixel, rounded half up (not clamped).
pub fn scale_x(x_px: i64, viewport_w: u32) -> i64 {
    let vw = i64::from(viewport_w);
    (2 * x_px * WIDTH as i64 + vw).div_euclid(2 * vw)
}

fn clamp_y(y_px: i64) -> i64 {
    y_px.clamp(0, HEIGHT as i64 - 1)
}

/// Project a session's cursor coordinates onto the canvas. x is rescaled
/// to the 1280 px design width and clamped to the canvas, y is clamped to
/// the 900 px fold.
pub fn project_session(session: &Session) -> Vec<CanvasPoint> {
    session
        .mousemoves()
        .map(|e| CanvasPoint {
            x: scale_x(i64::from(e.x_px), session.viewport_w).clamp(0, WIDTH as i64 - 1) as i32,
            y: clamp_y(i64::from(e.y_px)) as i32,
            t_ms: e.t_ms,
        })
        .collect()
}

pub fn project_to_canvas(session: &LabeledSession) -> Vec<CanvasPoint> {
    project_session(&session.session)
}

/// Pre-colormap heat accumulation in 32.32 fixed point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatField {
    pub accum: Vec<u64>,
}

impl Default for HeatField {
    fn default() -> Self {
        Self::new()
    }
}

impl HeatField {
    pub fn new() -> Self {
        HeatField { accum: vec![0; WIDTH * HEIGHT] }
    }

    pub fn raw(&self, x: usize, y: usize) -> u64 {
        self.accum[y * WIDTH + x]
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.raw(x, y) as f64 / FIXED_ONE
    }

    pub fn max_raw(&self) -> u64 {
        self.accum.iter().copied().max().unwrap_or(0)
    }

    /// Elementwise sum.
    pub fn add(&mut self, other: &HeatField) {
        for (a, b) in self.accum.iter_mut().zip(&other.accum) {
            *a += *b;
        }
    }
}

/// Quantized kernel over the (2r+1)^2 support window, row-major by dy then dx.
pub fn heat_kernel() -> Vec<u64> {
    let r = HEAT_RADIUS;
    let denom = 2.0 * HEAT_SIGMA * HEAT_SIGMA;
    let mut k = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = f64::from(dx * dx + dy * dy);
            k.push(round_half_up(libm::exp(-d2 / denom) * FIXED_ONE) as u64);
        }
    }
    k
}

/// Sum of truncated Gaussian kernels centred on each point.
pub fn render_heatmap(points: &[CanvasPoint]) -> HeatField {
    let mut field = HeatField::new();
    let kernel = heat_kernel();
    let r = HEAT_RADIUS as i64;
    let side = (2 * r + 1) as usize;
    for p in points {
        for dy in -r..=r {
            let y = i64::from(p.y) + dy;
            if y < 0 || y >= HEIGHT as i64 {
                continue;
            }
            let krow = &kernel[(dy + r) as usize * side..][..side];
            let row = &mut field.accum[y as usize * WIDTH..][..WIDTH];
            for dx in -r..=r {
                let x = i64::from(p.x) + dx;
                if x < 0 || x >= WIDTH as i64 {
                    continue;
                }
                row[x as usize] += krow[(dx + r) as usize];
            }
        }
    }
    field
}

/// Piecewise-linear white -> blue -> yellow -> red gradient at `t` in [0, 1].
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let scaled = t * 3.0;
    let seg = (libm::floor(scaled) as usize).min(2);
    let u = scaled - seg as f64;
    let (a, b) = (HEAT_STOPS[seg], HEAT_STOPS[seg + 1]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = f64::from(a[c]) + (f64::from(b[c]) - f64::from(a[c])) * u;
        out[c] = round_half_up(v) as u8;
    }
    out
}

/// Paint normalized heat over an existing image; cells without heat keep
/// the underlying pixel.
pub fn colorize_heatfield_onto(field: &HeatField, image: &mut ImageBuffer) {
    let max = field.max_raw();
    if max == 0 {
        return;
    }
    let max = max as f64;
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let v = field.raw(x, y);
            if v > 0 {
                image.put(x as i64, y as i64, heat_color(v as f64 / max));
            }
        }
    }
}

pub fn colorize_heatfield(field: &HeatField) -> ImageBuffer {
    let mut img = ImageBuffer::canvas();
    colorize_heatfield_onto(field, &mut img);
    img
}

/// Stroke width in pixels at time fraction `f`.
pub fn stroke_width(kind: RenderKind, f: f64) -> u32 {
    if kind.thickness() {
        let w = round_half_up(THICK_START + (THICK_END - THICK_START) * f.clamp(0.0, 1.0));
        w.clamp(THICK_END, THICK_START) as u32
    } else {
        BASE_LINE_WIDTH
    }
}

/// Stroke color at time fraction `f`.
pub fn stroke_color(kind: RenderKind, f: f64) -> [u8; 3] {
    if kind.colored() {
        let r = round_half_up(255.0 * f.clamp(0.0, 1.0)) as u8;
        [r, 255 - r, 0]
    } else {
        BLACK
    }
}

fn stamp_disk(img: &mut ImageBuffer, cx: i64, cy: i64, diameter: u32, rgb: [u8; 3]) {
    let d2 = i64::from(diameter) * i64::from(diameter);
    let r = i64::from(diameter) / 2 + 1;
    for dy in -r..=r {
        for dx in -r..=r {
            if 4 * (dx * dx + dy * dy) <= d2 {
                img.put(cx + dx, cy + dy, rgb);
            }
        }
    }
}

fn fill_circle(img: &mut ImageBuffer, cx: i64, cy: i64, radius: i32, rgb: [u8; 3]) {
    let r = i64::from(radius);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                img.put(cx + dx, cy + dy, rgb);
            }
        }
    }
}

/// Cumulative elapsed-time fraction of each point. Falls back to index
/// fraction when all timestamps coincide.
pub fn time_fractions(points: &[CanvasPoint]) -> Vec<f64> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let t0 = points[0].t_ms;
    let span = points[n - 1].t_ms.saturating_sub(t0);
    if span == 0 {
        if n == 1 {
            return vec![0.0];
        }
        return (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    }
    points.iter().map(|p| p.t_ms.saturating_sub(t0) as f64 / span as f64).collect()
}

/// Draw the polyline and its start/end markers over an existing image.
pub fn draw_trajectory_onto(img: &mut ImageBuffer, points: &[CanvasPoint], kind: RenderKind) -> Result<()> {
    if points.is_empty() {
        return Err(invalid("trajectory needs at least one point"));
    }
    let fr = time_fractions(points);
    for i in 0..points.len().saturating_sub(1) {
        let (a, b) = (points[i], points[i + 1]);
        let (x0, y0) = (i64::from(a.x), i64::from(a.y));
        let (dx, dy) = (i64::from(b.x) - x0, i64::from(b.y) - y0);
        let steps = dx.abs().max(dy.abs());
        if steps == 0 {
            stamp_disk(img, x0, y0, stroke_width(kind, fr[i]), stroke_color(kind, fr[i]));
            continue;
        }
        for s in 0..=steps {
            // integer DDA with half-up rounding
            let x = x0 + (2 * dx * s + steps).div_euclid(2 * steps);
            let y = y0 + (2 * dy * s + steps).div_euclid(2 * steps);
            let f = fr[i] + (fr[i + 1] - fr[i]) * (s as f64 / steps as f64);
            stamp_disk(img, x, y, stroke_width(kind, f), stroke_color(kind, f));
        }
    }
    let (first, last) = (points[0], points[points.len() - 1]);
    fill_circle(img, i64::from(first.x), i64::from(first.y), MARKER_RADIUS, GREEN);
    fill_circle(img, i64::from(last.x), i64::from(last.y), MARKER_RADIUS, RED);
    Ok(())
}

pub fn render_trajectory(points: &[CanvasPoint], kind: RenderKind) -> Result<ImageBuffer> {
    let mut img = ImageBuffer::canvas();
    draw_trajectory_onto(&mut img, points, kind)?;
    Ok(img)
}

/// Canvas-space extent `[x0, x1) x [y0, y1)` of an ad box, clipped to the canvas.
pub fn project_rect(rect: &Rect, viewport_w: u32) -> (usize, usize, usize, usize) {
    let clip_x = |v: i64| v.clamp(0, WIDTH as i64) as usize;
    let clip_y = |v: i64| v.clamp(0, HEIGHT as i64) as usize;
    let x0 = clip_x(scale_x(rect.x, viewport_w));
    let x1 = clip_x(scale_x(rect.x + i64::from(rect.w), viewport_w));
    let y0 = clip_y(rect.y);
    let y1 = clip_y(rect.y + i64::from(rect.h));
    (x0, x1, y0, y1)
}

/// Blend the ad rectangle 50% toward gray and frame it with a 2 px black border.
pub fn overlay_ad_placeholder(img: &mut ImageBuffer, rect: &Rect, viewport_w: u32) {
    let (x0, x1, y0, y1) = project_rect(rect, viewport_w);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    for y in y0..y1 {
        for x in x0..x1 {
            let border = x < x0 + PLACEHOLDER_BORDER
                || x + PLACEHOLDER_BORDER >= x1
                || y < y0 + PLACEHOLDER_BORDER
                || y + PLACEHOLDER_BORDER >= y1;
            let rgb = if border {
                BLACK
            } else {
                let old = img.rgb(x, y);
                let mut out = [0u8; 3];
                for c in 0..3 {
                    out[c] = (u16::from(old[c]) + u16::from(PLACEHOLDER_GRAY[c])).div_ceil(2) as u8;
                }
                out
            };
            img.put(x as i64, y as i64, rgb);
        }
    }
}

/// Full render of one session in one style.
pub fn render_session(session: &Session, style: RenderStyle) -> Result<ImageBuffer> {
    let mut img = ImageBuffer::canvas();
    if style.with_ad_placeholder {
        let rect = session.ad_box.ok_or_else(|| Error::MissingAdBox(session.session_id.clone()))?;
        overlay_ad_placeholder(&mut img, &rect, session.viewport_w);
    }
    let points = project_session(session);
    match style.kind {
        RenderKind::Heatmap => colorize_heatfield_onto(&render_heatmap(&points), &mut img),
        kind => draw_trajectory_onto(&mut img, &points, kind)?,
    }
    Ok(img)
}

/// Area-average downscale by an integer factor to channel-major RGB in [0, 1].
pub fn downscale_rgb(img: &ImageBuffer, factor: usize) -> Vec<f64> {
    let (w, h) = (img.width / factor, img.height / factor);
    let mut sums = vec![0u32; 3 * w * h];
    for y in 0..h * factor {
        for x in 0..w * factor {
            let p = img.rgb(x, y);
            let cell = (y / factor) * w + x / factor;
            for c in 0..3 {
                sums[c * w * h + cell] += u32::from(p[c]);
            }
        }
    }
    let norm = (factor * factor) as f64 * 255.0;
    sums.into_iter().map(|s| f64::from(s) / norm).collect()
}

/// Render and downscale to the 3x90x128 convolutional input.
pub fn render_small(session: &Session, style: RenderStyle) -> Result<Vec<f64>> {
    Ok(downscale_rgb(&render_session(session, style)?, DOWNSCALE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{AdFormat, RawEvent};
    use alloc::string::String;
    use proptest::prelude::*;

    fn pt(x: i32, y: i32, t: u64) -> CanvasPoint {
        CanvasPoint { x, y, t_ms: t }
    }

    fn session(vw: u32, coords: &[(u32, u32)], ad_box: Option<Rect>) -> Session {
        Session {
            session_id: String::from("r"),
            ad_format: AdFormat::Organic,
            viewport_w: vw,
            viewport_h: 900,
            ad_box,
            likert: 5,
            events: coords.iter().enumerate().map(|(i, &(x, y))| RawEvent::mousemove(i as u64 * 150, x, y)).collect(),
        }
    }

    #[test]
    fn projection_rescales_x_and_clamps_y() {
        let p = project_session(&session(1280, &[(640, 450)], None));
        assert_eq!((p[0].x, p[0].y), (640, 450));
        let p = project_session(&session(640, &[(320, 200)], None));
        assert_eq!((p[0].x, p[0].y), (640, 200));
        for vw in [300, 1280, 1920] {
            let p = project_session(&session(vw, &[(100, 2000)], None));
            assert_eq!(p[0].y, 899);
        }
        // round half up: 1 * 1280 / 512 = 2.5
        assert_eq!(scale_x(1, 512), 3);
        assert_eq!(scale_x(-1, 512), -2);
    }

    #[test]
    fn single_point_heat_matches_gaussian() {
        let f = render_heatmap(&[pt(100, 100, 0)]);
        assert_eq!(f.value(100, 100), 1.0);
        let expect = libm::exp(-625.0 / (2.0 * HEAT_SIGMA * HEAT_SIGMA));
        assert!((f.value(100, 125) - expect).abs() < 1e-9);
        assert!((f.value(100, 125) - 0.011109).abs() < 1e-6);
        assert_eq!(f.value(100, 126), 0.0);
        assert_eq!(f.value(126, 100), 0.0);
    }

    #[test]
    fn heat_doubles_for_repeated_point() {
        let one = render_heatmap(&[pt(5, 890, 0)]);
        let two = render_heatmap(&[pt(5, 890, 0), pt(5, 890, 1)]);
        assert!(one.accum.iter().zip(&two.accum).all(|(a, b)| 2 * a == *b));
        assert!(render_heatmap(&[]).accum.iter().all(|&v| v == 0));
    }

    #[test]
    fn gradient_stops() {
        assert_eq!(heat_color(0.0), WHITE);
        assert_eq!(heat_color(1.0 / 3.0), [0, 0, 255]);
        assert_eq!(heat_color(0.5), [128, 128, 128]);
        assert_eq!(heat_color(1.0), RED);
    }

    #[test]
    fn colorize_normalizes_by_max() {
        let img = colorize_heatfield(&HeatField::new());
        assert!(img.pixels.chunks_exact(4).all(|p| p == [255, 255, 255, 255]));

        let mut f = HeatField::new();
        f.accum[10 * WIDTH + 20] = 8;
        f.accum[11 * WIDTH + 20] = 4;
        let img = colorize_heatfield(&f);
        assert_eq!(img.rgb(20, 10), RED);
        assert_eq!(img.rgb(20, 11), [128, 128, 128]);
        assert_eq!(img.rgb(0, 0), WHITE);
        assert!(img.is_opaque());
    }

    #[test]
    fn two_point_trajectory() {
        let img = render_trajectory(&[pt(100, 100, 0), pt(200, 100, 150)], RenderKind::Trajectory).unwrap();
        assert_eq!(img.rgb(100, 100), GREEN);
        assert_eq!(img.rgb(200, 100), RED);
        assert_eq!(img.rgb(150, 100), BLACK);
        assert_eq!(img.rgb(150, 101), BLACK);
        assert_eq!(img.rgb(150, 102), WHITE);
        // marker radius 6
        assert_eq!(img.rgb(106, 100), GREEN);
        assert_eq!(img.rgb(107, 100), BLACK);
    }

    #[test]
    fn single_point_trajectory_draws_both_markers() {
        let img = render_trajectory(&[pt(50, 60, 0)], RenderKind::TrajectoryColor).unwrap();
        assert_eq!(img.rgb(50, 60), RED);
        assert_eq!(img.rgb(50, 54), RED);
        assert_eq!(img.rgb(50, 53), WHITE);
        assert!(render_trajectory(&[], RenderKind::Trajectory).is_err());
    }

    #[test]
    fn interpolation_midpoint() {
        assert_eq!(stroke_color(RenderKind::TrajectoryColorThickness, 0.5), [128, 127, 0]);
        assert_eq!(stroke_width(RenderKind::TrajectoryColorThickness, 0.5), 5);
        assert_eq!(stroke_width(RenderKind::TrajectoryColorThickness, 0.0), 8);
        assert_eq!(stroke_width(RenderKind::TrajectoryColorThickness, 1.0), 1);
        assert_eq!(stroke_width(RenderKind::TrajectoryColor, 0.3), 3);
        assert_eq!(stroke_color(RenderKind::TrajectoryThickness, 0.3), BLACK);
        assert_eq!(stroke_color(RenderKind::TrajectoryColor, 0.0), GREEN);
        assert_eq!(stroke_color(RenderKind::TrajectoryColor, 1.0), RED);

        let pts = [pt(100, 300, 0), pt(300, 300, 1000), pt(500, 300, 2000)];
        let img = render_trajectory(&pts, RenderKind::TrajectoryColorThickness).unwrap();
        // later stamps of the second segment overlap the centre pixel
        let c = img.rgb(300, 300);
        assert!(c[0].abs_diff(128) <= 1 && c[1].abs_diff(127) <= 1 && c[2] == 0);
        // width 5 at the middle point: rows 298..=302
        assert_eq!(img.rgb(300, 302), [128, 127, 0]);
        assert_eq!(img.rgb(300, 303), WHITE);
    }

    #[test]
    fn time_fraction_uses_timestamps() {
        let f = time_fractions(&[pt(0, 0, 100), pt(0, 0, 200), pt(0, 0, 500)]);
        assert_eq!(f, vec![0.0, 0.25, 1.0]);
        let f = time_fractions(&[pt(0, 0, 7), pt(0, 0, 7), pt(0, 0, 7)]);
        assert_eq!(f, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn placeholder_on_blank_canvas() {
        let rect = Rect { x: 50, y: 100, w: 200, h: 60 };
        let mut img = ImageBuffer::canvas();
        overlay_ad_placeholder(&mut img, &rect, 640);
        // x: 100..500, y: 100..160
        let (mut black, mut gray, mut white) = (0usize, 0usize, 0usize);
        for p in img.pixels.chunks_exact(4) {
            match [p[0], p[1], p[2]] {
                BLACK => black += 1,
                [192, 192, 192] => gray += 1,
                WHITE => white += 1,
                other => panic!("unexpected pixel {other:?}"),
            }
        }
        assert_eq!(gray, 396 * 56);
        assert_eq!(black, 400 * 60 - 396 * 56);
        assert_eq!(white, WIDTH * HEIGHT - 400 * 60);
        assert_eq!(img.rgb(100, 100), BLACK);
        assert_eq!(img.rgb(102, 102), [192, 192, 192]);
        assert_eq!(img.rgb(499, 159), BLACK);
        assert_eq!(img.rgb(500, 159), WHITE);
    }

    #[test]
    fn placeholder_requires_ad_box() {
        let s = session(1280, &[(1, 1), (5, 5)], None);
        let err = render_session(&s, RenderStyle::new(RenderKind::Heatmap, true)).unwrap_err();
        assert_eq!(err, Error::MissingAdBox(String::from("r")));
        let plain = render_session(&s, RenderStyle::new(RenderKind::Trajectory, false)).unwrap();
        assert_eq!(plain, render_trajectory(&project_session(&s), RenderKind::Trajectory).unwrap());
    }

    #[test]
    fn strokes_cover_placeholder() {
        let s = session(1280, &[(100, 120), (300, 120)], Some(Rect { x: 50, y: 100, w: 400, h: 50 }));
        let img = render_session(&s, RenderStyle::new(RenderKind::Trajectory, true)).unwrap();
        assert_eq!(img.rgb(200, 120), BLACK);
        assert_eq!(img.rgb(200, 130), [192, 192, 192]);
        let heat = render_session(&s, RenderStyle::new(RenderKind::Heatmap, true)).unwrap();
        assert_eq!(heat.rgb(100, 120), RED);
        assert_eq!(heat.rgb(400, 140), [192, 192, 192]);
    }

    #[test]
    fn downscale_averages_blocks() {
        let mut img = ImageBuffer::canvas();
        for x in 0..5 {
            for y in 0..10 {
                img.put(x, y, BLACK);
            }
        }
        let small = downscale_rgb(&img, DOWNSCALE);
        assert_eq!(small.len(), 3 * SMALL_W * SMALL_H);
        assert_eq!(small[0], 0.5);
        assert_eq!(small[1], 1.0);
        assert_eq!(small[SMALL_W * SMALL_H], 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn heat_is_additive(a in proptest::collection::vec((0i32..1280, 0i32..900), 0..12),
                            b in proptest::collection::vec((0i32..1280, 0i32..900), 0..12)) {
            let pa: Vec<_> = a.iter().map(|&(x, y)| pt(x, y, 0)).collect();
            let pb: Vec<_> = b.iter().map(|&(x, y)| pt(x, y, 0)).collect();
            let mut joined = pa.clone();
            joined.extend_from_slice(&pb);
            let mut sum = render_heatmap(&pa);
            sum.add(&render_heatmap(&pb));
            prop_assert!(sum == render_heatmap(&joined));
        }

        #[test]
        fn thickness_is_monotone(f in 0.0f64..1.0, g in 0.0f64..1.0) {
            let (lo, hi) = if f <= g { (f, g) } else { (g, f) };
            prop_assert!(stroke_width(RenderKind::TrajectoryThickness, hi) <= stroke_width(RenderKind::TrajectoryThickness, lo));
        }

        #[test]
        fn renders_stay_on_canvas(coords in proptest::collection::vec((0u32..5000, 0u32..5000), 1..8), vw in 1u32..3000, k in 0usize..5) {
            let s = session(vw, &coords, Some(Rect { x: -40, y: 850, w: 4000, h: 400 }));
            let img = render_session(&s, RenderStyle::new(RenderKind::ALL[k], true)).unwrap();
            prop_assert_eq!(img.pixels.len(), WIDTH * HEIGHT * 4);
            prop_assert!(img.is_opaque());
        }
    }
}
