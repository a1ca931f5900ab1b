//! Valid 3x3 cross-correlation, 2x2 max pooling and global average pooling.

use alloc::vec;
use alloc::vec::Vec;

pub const KERNEL: usize = 3;

/// Channel-major feature map shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn after_conv(&self, out_channels: usize) -> MapShape {
        MapShape {
            channels: out_channels,
            height: self.height.saturating_sub(KERNEL - 1),
            width: self.width.saturating_sub(KERNEL - 1),
        }
    }

    pub fn after_pool(&self) -> MapShape {
        MapShape { channels: self.channels, height: self.height / 2, width: self.width / 2 }
    }
}

/// `out[o, y, x] = b[o] + sum_{c, ky, kx} w[o, c, ky, kx] * in[c, y + ky, x + kx]`.
pub fn conv3x3_forward(input: &[f64], shape: MapShape, weight: &[f64], bias: &[f64], out_channels: usize) -> Vec<f64> {
    let os = shape.after_conv(out_channels);
    let (oh, ow) = (os.height, os.width);
    let plane = shape.height * shape.width;
    let mut out = vec![0.0; os.len()];
    for o in 0..out_channels {
        let oplane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        oplane.fill(bias[o]);
        for c in 0..shape.channels {
            let iplane = &input[c * plane..(c + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = weight[((o * shape.channels + c) * KERNEL + ky) * KERNEL + kx];
                    for y in 0..oh {
                        let irow = &iplane[(y + ky) * shape.width + kx..][..ow];
                        let orow = &mut oplane[y * ow..(y + 1) * ow];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulate weight and bias gradients; optionally propagate to the input.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    shape: MapShape,
    weight: &[f64],
    out_channels: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let os = shape.after_conv(out_channels);
    let (oh, ow) = (os.height, os.width);
    let plane = shape.height * shape.width;
    for o in 0..out_channels {
        let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
        dbias[o] += dplane.iter().sum::<f64>();
        for c in 0..shape.channels {
            let iplane = &input[c * plane..(c + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((o * shape.channels + c) * KERNEL + ky) * KERNEL + kx;
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let irow = &iplane[(y + ky) * shape.width + kx..][..ow];
                        let drow = &dplane[y * ow..(y + 1) * ow];
                        for (dv, iv) in drow.iter().zip(irow) {
                            acc += dv * iv;
                        }
                    }
                    dweight[widx] += acc;
                    if let Some(din) = dinput.as_deref_mut() {
                        let wv = weight[widx];
                        let dplane_in = &mut din[c * plane..(c + 1) * plane];
                        for y in 0..oh {
                            let drow = &dplane[y * ow..(y + 1) * ow];
                            let irow = &mut dplane_in[(y + ky) * shape.width + kx..][..ow];
                            for (iv, dv) in irow.iter_mut().zip(drow) {
                                *iv += wv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pooling (floor); returns outputs and flat argmax indices.
/// Ties resolve to the first element in row-major window order.
pub fn maxpool2_forward(input: &[f64], shape: MapShape) -> (Vec<f64>, Vec<usize>) {
    let os = shape.after_pool();
    let mut out = Vec::with_capacity(os.len());
    let mut arg = Vec::with_capacity(os.len());
    for c in 0..shape.channels {
        let base = c * shape.height * shape.width;
        for y in 0..os.height {
            for x in 0..os.width {
                let mut best = base + 2 * y * shape.width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * shape.width + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(dout: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut din = vec![0.0; input_len];
    for (&i, &d) in argmax.iter().zip(dout) {
        din[i] += d;
    }
    din
}

pub fn global_avg_pool(input: &[f64], shape: MapShape) -> Vec<f64> {
    let plane = shape.height * shape.width;
    input.chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect()
}
