//! Fixed-length cursor coordinate sequences for the recurrent models.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::session::{Label, LabeledSession};

/// Sequence length after padding or truncation.
pub const SEQ_LEN: usize = 50;
/// Features per timestep: normalized x and scaled y.
pub const FEATURES: usize = 2;
/// Constant vertical scale (design canvas height).
pub const Y_SCALE: f64 = 900.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    /// Rows are timesteps; columns are (x / viewport_w, y / 900).
    pub matrix: [[f64; FEATURES]; SEQ_LEN],
    pub valid_len: usize,
    pub label: Label,
}

impl TimeSeriesSample {
    /// Row-major flattening, 100 values.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

/// Encode the first 50 cursor coordinates, zero-padding the tail.
pub fn encode_timeseries(session: &LabeledSession) -> Result<TimeSeriesSample> {
    let s = &session.session;
    if s.viewport_w == 0 {
        return Err(invalid("viewport width is zero"));
    }
    let vw = f64::from(s.viewport_w);
    let mut matrix = [[0.0; FEATURES]; SEQ_LEN];
    let mut valid_len = 0;
    for (row, e) in matrix.iter_mut().zip(s.mousemoves()) {
        *row = [f64::from(e.x_px) / vw, f64::from(e.y_px) / Y_SCALE];
        valid_len += 1;
    }
    Ok(TimeSeriesSample { matrix, valid_len, label: session.label })
}
