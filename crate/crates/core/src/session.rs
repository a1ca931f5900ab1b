//! Session records, attention labels, cleaning and stratified splitting.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Event name of polled cursor positions.
pub const MOUSEMOVE: &str = "mousemove";

/// Minimum number of distinct cursor coordinates for a session to be kept.
pub const MIN_COORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub t_ms: u64,
    pub x_px: u32,
    pub y_px: u32,
    pub event_name: String,
    pub xpath: String,
}

impl RawEvent {
    pub fn mousemove(t_ms: u64, x_px: u32, y_px: u32) -> Self {
        RawEvent { t_ms, x_px, y_px, event_name: String::from(MOUSEMOVE), xpath: String::new() }
    }

    pub fn is_mousemove(&self) -> bool {
        self.event_name == MOUSEMOVE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdFormat {
    Organic,
    DdLeft,
    DdRight,
}

impl AdFormat {
    pub const ALL: [AdFormat; 3] = [AdFormat::Organic, AdFormat::DdLeft, AdFormat::DdRight];

    pub fn as_str(self) -> &'static str {
        match self {
            AdFormat::Organic => "organic",
            AdFormat::DdLeft => "dd_left",
            AdFormat::DdRight => "dd_right",
        }
    }

    pub fn parse(s: &str) -> Option<AdFormat> {
        AdFormat::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// Axis-aligned rectangle in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x && y >= self.y && x < self.x + i64::from(self.w) && y < self.y + i64::from(self.h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub ad_format: AdFormat,
    pub viewport_w: u32,
    pub viewport_h: u32,
    pub ad_box: Option<Rect>,
    pub likert: u8,
    pub events: Vec<RawEvent>,
}

impl Session {
    /// Check field invariants and stably sort events by timestamp.
    pub fn validated(mut self) -> Result<Session> {
        if self.viewport_w == 0 || self.viewport_h == 0 {
            return Err(invalid("viewport dimensions must be positive"));
        }
        if let Some(b) = self.ad_box {
            if b.w == 0 || b.h == 0 {
                return Err(invalid("ad_box width and height must be positive"));
            }
        }
        if !(1..=5).contains(&self.likert) {
            return Err(invalid(alloc::format!("likert {} outside 1..=5", self.likert)));
        }
        // slice::sort_by_key is stable
        self.events.sort_by_key(|e| e.t_ms);
        Ok(self)
    }

    pub fn mousemoves(&self) -> impl Iterator<Item = &RawEvent> {
        self.events.iter().filter(|e| e.is_mousemove())
    }

    pub fn mousemove_count(&self) -> usize {
        self.mousemoves().count()
    }
}

/// Binary attention label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Ignored = 0,
    Attended = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Ignored),
            1 => Some(Label::Attended),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.bit())
    }

    pub fn is_positive(self) -> bool {
        self == Label::Attended
    }
}

/// Collapse a 5-point Likert answer: 1-2 negative, 4-5 positive, 3 dropped.
pub fn binarize_label(likert: u8) -> Result<Option<Label>> {
    match likert {
        1 | 2 => Ok(Some(Label::Ignored)),
        3 => Ok(None),
        4 | 5 => Ok(Some(Label::Attended)),
        other => Err(invalid(alloc::format!("likert {other} outside 1..=5"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSession {
    pub session: Session,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanSummary {
    pub kept: usize,
    pub dropped_short: usize,
    pub dropped_neutral: usize,
    pub positives: usize,
}

impl CleanSummary {
    pub fn negatives(&self) -> usize {
        self.kept - self.positives
    }
}

/// Remove mousemove events that repeat the previous mousemove coordinate.
/// Other events pass through untouched.
pub fn dedup_mousemoves(events: &[RawEvent]) -> Vec<RawEvent> {
    let mut last: Option<(u32, u32)> = None;
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        if e.is_mousemove() {
            let xy = (e.x_px, e.y_px);
            if last == Some(xy) {
                continue;
            }
            last = Some(xy);
        }
        out.push(e.clone());
    }
    out
}

/// [`clean_sessions`] with the minimum coordinate count made explicit, plus drop counts.
pub fn clean_sessions_with(sessions: &[Session], min_coords: usize) -> (Vec<LabeledSession>, CleanSummary) {
    let mut summary = CleanSummary::default();
    let mut out = Vec::new();
    for s in sessions {
        let label = match binarize_label(s.likert) {
            Ok(Some(l)) => l,
            // neutral, or out-of-range likert on an unvalidated session
            _ => {
                summary.dropped_neutral += 1;
                continue;
            }
        };
        let mut cleaned = s.clone();
        cleaned.events = dedup_mousemoves(&s.events);
        if cleaned.mousemove_count() < min_coords {
            summary.dropped_short += 1;
            continue;
        }
        summary.kept += 1;
        if label.is_positive() {
            summary.positives += 1;
        }
        out.push(LabeledSession { session: cleaned, label });
    }
    (out, summary)
}

/// Deduplicate cursor coordinates, drop neutral and short sessions, attach binary labels.
pub fn clean_sessions(sessions: &[Session]) -> Vec<LabeledSession> {
    clean_sessions_with(sessions, MIN_COORDS).0
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios(pub [f64; 3]);

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios([0.6, 0.1, 0.3]);

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|r| !r.is_finite() || *r < 0.0) || libm::fabs(sum - 1.0) > 1e-9 {
            return Err(invalid("split ratios must be nonnegative and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSession>,
    pub val: Vec<LabeledSession>,
    pub test: Vec<LabeledSession>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

/// Index-level split result; indices refer to the input slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub parts: [Vec<usize>; 3],
}

/// Apportion `total` into parts proportional to `weights` (largest remainder;
/// ties go to the earlier part).
pub fn largest_remainder(total: usize, weights: &[f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut rem = [0f64; 3];
    for k in 0..3 {
        let exact = total as f64 * weights[k];
        let fl = libm::floor(exact);
        counts[k] = fl as usize;
        rem[k] = exact - fl;
    }
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rem[b].partial_cmp(&rem[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut left = total.saturating_sub(assigned);
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Split sizes come from largest-remainder apportionment of the whole set;
/// positives are then apportioned across parts in proportion to part size,
/// with exact integer remainders.
fn class_allocation(n_pos: usize, n_neg: usize, ratios: &SplitRatios) -> ([usize; 3], [usize; 3]) {
    let n = n_pos + n_neg;
    let sizes = largest_remainder(n, &ratios.0);
    let mut pos = [0usize; 3];
    let mut rem = [0usize; 3];
    for k in 0..3 {
        let num = sizes[k] * n_pos;
        pos[k] = num / n;
        rem[k] = num % n;
    }
    let mut left = n_pos - pos.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
    for &k in &order {
        if left == 0 {
            break;
        }
        // rem > 0 guarantees pos[k] < sizes[k]
        if rem[k] > 0 {
            pos[k] += 1;
            left -= 1;
        }
    }
    debug_assert_eq!(left, 0);
    let neg = [sizes[0] - pos[0], sizes[1] - pos[1], sizes[2] - pos[2]];
    (pos, neg)
}

/// Stratified split over labels only, returning input indices per part
/// (each part sorted ascending).
pub fn stratified_split_indices(labels: &[Label], ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    ratios.validate()?;
    let mut pos_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let mut neg_idx: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    if pos_idx.is_empty() {
        return Err(Error::EmptyClass(1));
    }
    if neg_idx.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    pos_idx.shuffle(&mut rng::stream(seed, "split/shuffle", &[1]));
    neg_idx.shuffle(&mut rng::stream(seed, "split/shuffle", &[0]));
    let (pos_counts, neg_counts) = class_allocation(pos_idx.len(), neg_idx.len(), &ratios);

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (idx, counts) in [(&pos_idx, pos_counts), (&neg_idx, neg_counts)] {
        let mut start = 0;
        for k in 0..3 {
            parts[k].extend_from_slice(&idx[start..start + counts[k]]);
            start += counts[k];
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(SplitIndices { parts })
}

/// Disjoint stratified train/validation/test split, deterministic for a given
/// input order and seed.
pub fn stratified_split(sessions: &[LabeledSession], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let labels: Vec<Label> = sessions.iter().map(|s| s.label).collect();
    let idx = stratified_split_indices(&labels, ratios, seed)?;
    let pick = |part: &Vec<usize>| part.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit { train: pick(&idx.parts[0]), val: pick(&idx.parts[1]), test: pick(&idx.parts[2]), seed, ratios })
}

/// Stratify independently within each ad format, then concatenate the parts
/// in format order. Each format uses its own derived seed.
pub fn stratified_split_by_format(sessions: &[LabeledSession], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let mut out = DatasetSplit { train: Vec::new(), val: Vec::new(), test: Vec::new(), seed, ratios };
    for (fi, format) in AdFormat::ALL.into_iter().enumerate() {
        let group: Vec<LabeledSession> = sessions.iter().filter(|s| s.session.ad_format == format).cloned().collect();
        if group.is_empty() {
            continue;
        }
        let part = stratified_split(&group, ratios, rng::derive_seed(seed, "split/format", &[fi as u64]))?;
        out.train.extend(part.train);
        out.val.extend(part.val);
        out.test.extend(part.test);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn session_with(id: &str, likert: u8, coords: &[(u32, u32)]) -> Session {
        Session {
            session_id: String::from(id),
            ad_format: AdFormat::Organic,
            viewport_w: 1280,
            viewport_h: 900,
            ad_box: Some(Rect { x: 10, y: 10, w: 100, h: 50 }),
            likert,
            events: coords.iter().enumerate().map(|(i, &(x, y))| RawEvent::mousemove(i as u64 * 150, x, y)).collect(),
        }
    }

    fn labeled(n_pos: usize, n_neg: usize) -> Vec<LabeledSession> {
        (0..n_pos + n_neg)
            .map(|i| LabeledSession {
                session: session_with(&format!("s{i}"), 5, &[(1, 1)]),
                label: if i < n_pos { Label::Attended } else { Label::Ignored },
            })
            .collect()
    }

    #[test]
    fn binarize_maps_likert_scale() {
        assert_eq!(binarize_label(5), Ok(Some(Label::Attended)));
        assert_eq!(binarize_label(4), Ok(Some(Label::Attended)));
        assert_eq!(binarize_label(2), Ok(Some(Label::Ignored)));
        assert_eq!(binarize_label(1), Ok(Some(Label::Ignored)));
        assert_eq!(binarize_label(3), Ok(None));
        assert!(matches!(binarize_label(0), Err(Error::InvalidValue(_))));
        assert!(matches!(binarize_label(6), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn validation_rejects_bad_fields_and_sorts_stably() {
        let mut s = session_with("a", 6, &[(1, 1)]);
        assert!(matches!(s.clone().validated(), Err(Error::InvalidValue(_))));
        s.likert = 4;
        s.viewport_w = 0;
        assert!(s.clone().validated().is_err());
        s.viewport_w = 800;
        s.ad_box = Some(Rect { x: 0, y: 0, w: 0, h: 5 });
        assert!(s.clone().validated().is_err());
        s.ad_box = None;
        s.events = vec![
            RawEvent::mousemove(300, 1, 1),
            RawEvent::mousemove(100, 2, 2),
            RawEvent::mousemove(300, 3, 3),
            RawEvent::mousemove(100, 4, 4),
        ];
        let v = s.validated().unwrap();
        let order: Vec<u32> = v.events.iter().map(|e| e.x_px).collect();
        assert_eq!(order, vec![2, 4, 1, 3]);
    }

    #[test]
    fn cleaning_dedups_and_filters() {
        let s = session_with("a", 5, &[(3, 4), (3, 4), (5, 6), (7, 8), (9, 9), (1, 1)]);
        let out = clean_sessions(&[s]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].session.mousemove_count(), 5);
        assert_eq!(out[0].label, Label::Attended);

        let short = session_with("b", 5, &[(1, 1), (2, 2), (3, 3), (4, 4)]);
        assert!(clean_sessions(&[short]).is_empty());

        // repeats collapse to below the minimum
        let collapsed = session_with("c", 1, &[(1, 1), (1, 1), (2, 2), (3, 3), (4, 4), (4, 4)]);
        assert!(clean_sessions(&[collapsed]).is_empty());
    }

    #[test]
    fn dedup_ignores_non_mousemove_events() {
        let mut events = vec![RawEvent::mousemove(0, 5, 5)];
        events.push(RawEvent { t_ms: 10, x_px: 5, y_px: 5, event_name: "click".into(), xpath: "/html".into() });
        events.push(RawEvent::mousemove(20, 5, 5));
        events.push(RawEvent { t_ms: 30, x_px: 5, y_px: 5, event_name: "click".into(), xpath: "/html".into() });
        let out = dedup_mousemoves(&events);
        assert_eq!(out.len(), 3);
        assert_eq!(out.iter().filter(|e| e.is_mousemove()).count(), 1);
    }

    #[test]
    fn neutral_sessions_are_dropped() {
        let coords = [(1, 1), (2, 2), (3, 3), (4, 4), (5, 5)];
        let sessions: Vec<Session> = (0..10)
            .map(|i| session_with(&format!("s{i}"), if i < 2 { 3 } else { 1 + (i % 2) as u8 * 4 }, &coords))
            .collect();
        let (out, summary) = clean_sessions_with(&sessions, MIN_COORDS);
        assert_eq!(out.len(), 8);
        assert_eq!(summary.dropped_neutral, 2);
        assert_eq!(summary.dropped_short, 0);
    }

    #[test]
    fn largest_remainder_apportionment() {
        assert_eq!(largest_remainder(669, &[0.6, 0.1, 0.3]), [401, 67, 201]);
        assert_eq!(largest_remainder(10, &[0.6, 0.1, 0.3]), [6, 1, 3]);
        assert_eq!(largest_remainder(0, &[0.6, 0.1, 0.3]), [0, 0, 0]);
    }

    #[test]
    fn ten_session_split() {
        let split = stratified_split(&labeled(5, 5), SplitRatios::DEFAULT, 3).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (6, 1, 3));
        let pos = split.train.iter().filter(|s| s.label.is_positive()).count();
        assert_eq!(pos, 3);
    }

    #[test]
    fn organic_condition_split() {
        let data = labeled(447, 222);
        let split = stratified_split(&data, SplitRatios::DEFAULT, 11).unwrap();
        assert_eq!(split.test.len(), 201);
        let test_pos = split.test.iter().filter(|s| s.label.is_positive()).count() as f64;
        assert!((test_pos - 201.0 * 447.0 / 669.0).abs() <= 1.0);
    }

    #[test]
    fn split_errors() {
        assert_eq!(stratified_split(&labeled(4, 0), SplitRatios::DEFAULT, 1), Err(Error::EmptyClass(0)));
        assert_eq!(stratified_split(&labeled(0, 4), SplitRatios::DEFAULT, 1), Err(Error::EmptyClass(1)));
        assert!(matches!(
            stratified_split(&labeled(4, 4), SplitRatios([0.5, 0.5, 0.5]), 1),
            Err(Error::InvalidValue(_))
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let data = labeled(30, 17);
        let a = stratified_split(&data, SplitRatios::DEFAULT, 99).unwrap();
        let b = stratified_split(&data, SplitRatios::DEFAULT, 99).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&data, SplitRatios::DEFAULT, 100).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_by_format_stratifies_each_group() {
        let mut data = labeled(20, 10);
        for (i, s) in data.iter_mut().enumerate() {
            s.session.ad_format = if i % 2 == 0 { AdFormat::DdLeft } else { AdFormat::DdRight };
        }
        let split = stratified_split_by_format(&data, SplitRatios::DEFAULT, 5).unwrap();
        assert_eq!(split.train.len() + split.val.len() + split.test.len(), 30);
        for fmt in [AdFormat::DdLeft, AdFormat::DdRight] {
            let n = split.train.iter().filter(|s| s.session.ad_format == fmt).count();
            assert_eq!(n, 9);
        }
    }

    proptest! {
        #[test]
        fn split_partitions_and_preserves_proportion(n_pos in 1usize..200, n_neg in 1usize..200, seed in any::<u64>(),
                                                      a in 0.05f64..0.9, b in 0.0f64..0.5) {
            prop_assume!(a + b <= 1.0);
            let ratios = SplitRatios([a, b, 1.0 - a - b]);
            let mut labels = vec![Label::Attended; n_pos];
            labels.extend(vec![Label::Ignored; n_neg]);
            let idx = stratified_split_indices(&labels, ratios, seed).unwrap();
            let mut all: Vec<usize> = idx.parts.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let frac = n_pos as f64 / labels.len() as f64;
            for part in &idx.parts {
                let pos = part.iter().filter(|&&i| labels[i].is_positive()).count() as f64;
                let expect = libm::round(part.len() as f64 * frac);
                prop_assert!((pos - expect).abs() <= 1.0);
            }
        }

        #[test]
        fn cleaning_is_idempotent(coords in proptest::collection::vec((0u32..6, 0u32..6), 0..20), likert in 1u8..=5) {
            let s = session_with("p", likert, &coords);
            let once = clean_sessions(&[s]);
            let again = clean_sessions(&once.iter().map(|l| l.session.clone()).collect::<Vec<_>>());
            prop_assert_eq!(once, again);
        }
    }
}
