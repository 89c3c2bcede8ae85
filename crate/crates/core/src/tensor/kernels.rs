//! Forward kernels on raw slices. Callers validate shapes.

use serde::{Deserialize, Serialize};

/// `out[i] = sum_j w[i, j] * x[j] + b[i]` for a row-major `rows x cols` weight.
pub fn affine(x: &[f64], w: &[f64], b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(b.len(), rows);
    w.chunks_exact(cols)
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bias)
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Softmax with the maximum subtracted first, so large logits cannot overflow.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln(sum_i exp(z_i))`, stabilised the same way as [`softmax`].
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shape bookkeeping for a valid (unpadded) 2-D convolution over a
/// channel-major `(channels, height, width)` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Calls `f(out_index, in_index, weight_index)` for every multiply-add
    /// of the convolution. Forward and backward are both driven by this.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for oc in 0..self.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out = (oc * oh + oy) * ow + ox;
                    for ic in 0..self.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy * self.stride + ky;
                                let ix = ox * self.stride + kx;
                                let input = (ic * self.height + iy) * self.width + ix;
                                let weight = ((oc * self.in_channels + ic) * k + ky) * k + kx;
                                f(out, input, weight);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(x: &[f64], w: &[f64], b: &[f64], geom: &ConvGeometry) -> Vec<f64> {
    debug_assert_eq!(x.len(), geom.input_len());
    debug_assert_eq!(w.len(), geom.weight_len());
    debug_assert_eq!(b.len(), geom.out_channels);
    let plane = geom.out_height() * geom.out_width();
    let mut out: Vec<f64> = (0..geom.output_len()).map(|i| b[i / plane]).collect();
    geom.for_each_tap(|o, i, k| out[o] += w[k] * x[i]);
    out
}

/// Accumulates the input and weight gradients of [`conv2d`] given the
/// upstream gradient `g_out`. The bias gradient is the per-channel sum.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g_out: &[f64],
    geom: &ConvGeometry,
    g_x: Option<&mut [f64]>,
    g_w: Option<&mut [f64]>,
    g_b: Option<&mut [f64]>,
) {
    if let Some(g_x) = g_x {
        geom.for_each_tap(|o, i, k| g_x[i] += w[k] * g_out[o]);
    }
    if let Some(g_w) = g_w {
        geom.for_each_tap(|o, i, k| g_w[k] += x[i] * g_out[o]);
    }
    if let Some(g_b) = g_b {
        let plane = geom.out_height() * geom.out_width();
        for (o, g) in g_out.iter().enumerate() {
            g_b[o / plane] += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_hand_cases() {
        assert_eq!(
            affine(&[1.0, 0.0], &[2.0, 0.0, 0.0, 3.0], &[0.0, 0.0], 2, 2),
            vec![2.0, 0.0]
        );
        assert_eq!(affine(&[1.0, 1.0], &[1.0, 1.0], &[1.0], 1, 2), vec![3.0]);
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-3.0, -0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn log_sum_exp_matches_naive_on_small_values() {
        let z = [0.3, -1.2, 2.0];
        let naive = z.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&z) - naive).abs() < 1e-14);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn conv2d_single_channel_by_hand() {
        // 3x3 image, 2x2 kernel of ones, stride 1 -> sums of 2x2 windows.
        let geom = ConvGeometry {
            in_channels: 1,
            height: 3,
            width: 3,
            out_channels: 1,
            kernel: 2,
            stride: 1,
        };
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let out = conv2d(&x, &[1.0; 4], &[0.5], &geom);
        assert_eq!(out, vec![12.5, 16.5, 24.5, 28.5]);

        let strided = ConvGeometry {
            stride: 2,
            kernel: 1,
            ..geom
        };
        assert_eq!(conv2d(&x, &[2.0], &[0.0], &strided), vec![2.0, 6.0, 14.0, 18.0]);
    }
}
