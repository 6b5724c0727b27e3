//! Inner loops for convolution and dense layers, one sample at a time.

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_len: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn padded_len(&self) -> usize {
        self.in_len + 2 * self.padding
    }

    pub fn out_len(&self) -> usize {
        (self.padded_len() - self.kernel) / self.stride + 1
    }

    fn pad<'a>(&self, x: &'a [f64], buf: &'a mut Vec<f64>) -> &'a [f64] {
        if self.padding == 0 {
            return x;
        }
        let pl = self.padded_len();
        buf.clear();
        buf.resize(self.in_channels * pl, 0.0);
        for c in 0..self.in_channels {
            buf[c * pl + self.padding..c * pl + self.padding + self.in_len]
                .copy_from_slice(&x[c * self.in_len..(c + 1) * self.in_len]);
        }
        buf
    }
}

/// Outputs accumulated in registers at a time.
const LANES: usize = 32;

/// Weights laid out `[out_channels, in_channels, kernel]`.
pub fn conv_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let mut buf = Vec::new();
    let x = g.pad(x, &mut buf);
    let (pl, ol, k, s) = (g.padded_len(), g.out_len(), g.kernel, g.stride);
    for o in 0..g.out_channels {
        let out_o = &mut out[o * ol..(o + 1) * ol];
        let w_o = &weight[o * g.in_channels * k..(o + 1) * g.in_channels * k];
        let mut t0 = 0;
        if s == 1 {
            while t0 + LANES <= ol {
                let mut acc = [bias[o]; LANES];
                for i in 0..g.in_channels {
                    let x_i = &x[i * pl + t0..i * pl + t0 + LANES + k - 1];
                    for (tap, &w) in w_o[i * k..(i + 1) * k].iter().enumerate() {
                        let xs: &[f64; LANES] = x_i[tap..tap + LANES].try_into().unwrap();
                        for j in 0..LANES {
                            acc[j] += w * xs[j];
                        }
                    }
                }
                out_o[t0..t0 + LANES].copy_from_slice(&acc);
                t0 += LANES;
            }
        }
        for (t, y) in out_o.iter_mut().enumerate().skip(t0) {
            let mut v = bias[o];
            for i in 0..g.in_channels {
                let x_i = &x[i * pl..(i + 1) * pl];
                for (tap, &w) in w_o[i * k..(i + 1) * k].iter().enumerate() {
                    v += w * x_i[t * s + tap];
                }
            }
            *y = v;
        }
    }
}

/// Accumulates weight/bias gradients and writes the input gradient.
pub fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    grad_in: &mut [f64],
) {
    let mut buf = Vec::new();
    let x = g.pad(x, &mut buf);
    let (pl, ol, k, s) = (g.padded_len(), g.out_len(), g.kernel, g.stride);
    let ci = g.in_channels;
    for o in 0..g.out_channels {
        let g_o = &grad_out[o * ol..(o + 1) * ol];
        grad_bias[o] += g_o.iter().sum::<f64>();
        for i in 0..ci {
            let x_i = &x[i * pl..(i + 1) * pl];
            let base = (o * ci + i) * k;
            for tap in 0..k {
                grad_weight[base + tap] += if s == 1 {
                    dot(g_o, &x_i[tap..tap + ol])
                } else {
                    g_o.iter().enumerate().map(|(t, gv)| gv * x_i[t * s + tap]).sum::<f64>()
                };
            }
        }
    }

    let mut dxp = vec![0.0; ci * pl];
    if s == 1 {
        // dx[p] = sum over o, tap of w[o, i, tap] * g_o[p - tap]; grad_out is
        // zero-extended by k − 1 on both sides so every tile reads in bounds.
        let gl = ol + 2 * (k - 1);
        let mut gp = vec![0.0; g.out_channels * gl];
        for o in 0..g.out_channels {
            gp[o * gl + k - 1..o * gl + k - 1 + ol].copy_from_slice(&grad_out[o * ol..(o + 1) * ol]);
        }
        for i in 0..ci {
            let dx_i = &mut dxp[i * pl..(i + 1) * pl];
            let mut p0 = 0;
            while p0 < pl {
                let n = LANES.min(pl - p0);
                let mut acc = [0.0; LANES];
                for o in 0..g.out_channels {
                    let g_o = &gp[o * gl..(o + 1) * gl];
                    let w_oi = &weight[(o * ci + i) * k..(o * ci + i + 1) * k];
                    for (tap, &w) in w_oi.iter().enumerate() {
                        // g_o[p - tap] lives at padded index p - tap + k - 1.
                        let start = p0 + k - 1 - tap;
                        if n == LANES {
                            let gs: &[f64; LANES] = g_o[start..start + LANES].try_into().unwrap();
                            for j in 0..LANES {
                                acc[j] += w * gs[j];
                            }
                        } else {
                            for j in 0..n {
                                acc[j] += w * g_o[start + j];
                            }
                        }
                    }
                }
                dx_i[p0..p0 + n].copy_from_slice(&acc[..n]);
                p0 += n;
            }
        }
    } else {
        for o in 0..g.out_channels {
            let g_o = &grad_out[o * ol..(o + 1) * ol];
            for i in 0..ci {
                let dx_i = &mut dxp[i * pl..(i + 1) * pl];
                let w_oi = &weight[(o * ci + i) * k..(o * ci + i + 1) * k];
                for (t, &gv) in g_o.iter().enumerate() {
                    for (tap, &w) in w_oi.iter().enumerate() {
                        dx_i[t * s + tap] += w * gv;
                    }
                }
            }
        }
    }
    for c in 0..ci {
        grad_in[c * g.in_len..(c + 1) * g.in_len]
            .copy_from_slice(&dxp[c * pl + g.padding..c * pl + g.padding + g.in_len]);
    }
}

/// Weights laid out `[units, inputs]`.
pub fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (u, y) in out.iter_mut().enumerate() {
        *y = bias[u] + dot(&weight[u * n..(u + 1) * n], x);
    }
}

pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    grad_in: &mut [f64],
) {
    let n = x.len();
    grad_in.fill(0.0);
    for (u, &gu) in grad_out.iter().enumerate() {
        if gu == 0.0 {
            continue;
        }
        grad_bias[u] += gu;
        axpy(gu, x, &mut grad_weight[u * n..(u + 1) * n]);
        axpy(gu, &weight[u * n..(u + 1) * n], grad_in);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..21).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..21).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn strided_conv_matches_direct_sum() {
        let g = ConvGeom {
            in_channels: 2,
            in_len: 9,
            out_channels: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.11).cos()).collect();
        let b = [0.1, -0.2];
        let mut out = vec![0.0; 2 * g.out_len()];
        conv_forward(&g, &x, &w, &b, &mut out);
        for o in 0..2 {
            for t in 0..g.out_len() {
                let mut s = b[o];
                for i in 0..2 {
                    for k in 0..3 {
                        let pos = (t * 2 + k) as isize - 1;
                        if pos >= 0 && (pos as usize) < 9 {
                            s += w[(o * 2 + i) * 3 + k] * x[i * 9 + pos as usize];
                        }
                    }
                }
                assert!((out[o * g.out_len() + t] - s).abs() < 1e-12);
            }
        }
    }
}
