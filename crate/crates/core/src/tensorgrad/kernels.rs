//! Raw slice kernels behind the graph operations. Shapes are validated by the
//! caller; these functions only index.

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }
}

/// Output indices `o` in `[lo, hi)` with `0 <= o*stride + offset - pad < in_len`.
#[inline]
pub(crate) fn valid_range(
    out_len: usize,
    in_len: usize,
    stride: usize,
    pad: usize,
    offset: usize,
) -> (usize, usize) {
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    let hi = if in_len + pad > offset {
        ((in_len - 1 + pad - offset) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Visits every (kernel tap, output row) pair that reads a valid input row,
/// handing the callback the matching column span.
#[inline]
fn for_each_tap(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for ki in 0..g.kernel_h {
        let (row_lo, row_hi) = valid_range(oh, g.height, g.stride, g.padding, ki);
        for kj in 0..g.kernel_w {
            let (col_lo, col_hi) = valid_range(ow, g.width, g.stride, g.padding, kj);
            if col_lo >= col_hi {
                continue;
            }
            for oi in row_lo..row_hi {
                let ii = oi * g.stride + ki - g.padding;
                f(ki, kj, oi, ii, col_lo, col_hi);
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane_out = oh * ow;
    let plane_in = g.height * g.width;
    let khw = g.kernel_h * g.kernel_w;
    let mut out = vec![0.0; g.batch * g.filters * plane_out];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let out_plane = &mut out[(n * g.filters + f) * plane_out..][..plane_out];
            out_plane.fill(b[f]);
            for c in 0..g.in_channels {
                let in_plane = &x[(n * g.in_channels + c) * plane_in..][..plane_in];
                let kern = &w[(f * g.in_channels + c) * khw..][..khw];
                for_each_tap(g, |ki, kj, oi, ii, lo, hi| {
                    let wv = kern[ki * g.kernel_w + kj];
                    let out_row = &mut out_plane[oi * ow..][..ow];
                    let in_row = &in_plane[ii * g.width..][..g.width];
                    if g.stride == 1 {
                        let start = lo + kj - g.padding;
                        for (o, i) in out_row[lo..hi].iter_mut().zip(&in_row[start..]) {
                            *o += wv * i;
                        }
                    } else {
                        for oj in lo..hi {
                            out_row[oj] += wv * in_row[oj * g.stride + kj - g.padding];
                        }
                    }
                });
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane_out = oh * ow;
    let plane_in = g.height * g.width;
    let khw = g.kernel_h * g.kernel_w;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.filters];
    for n in 0..g.batch {
        for f in 0..g.filters {
            let gplane = &gout[(n * g.filters + f) * plane_out..][..plane_out];
            gb[f] += gplane.iter().sum::<f64>();
            for c in 0..g.in_channels {
                let in_off = (n * g.in_channels + c) * plane_in;
                let k_off = (f * g.in_channels + c) * khw;
                for_each_tap(g, |ki, kj, oi, ii, lo, hi| {
                    let tap = k_off + ki * g.kernel_w + kj;
                    let wv = w[tap];
                    let grow = &gplane[oi * ow..][..ow];
                    let row_off = in_off + ii * g.width;
                    let mut acc = 0.0;
                    if g.stride == 1 {
                        let start = lo + kj - g.padding;
                        let xrow = &x[row_off + start..][..hi - lo];
                        let gxrow = &mut gx[row_off + start..][..hi - lo];
                        for ((gv, xv), gxv) in grow[lo..hi].iter().zip(xrow).zip(gxrow) {
                            acc += gv * xv;
                            *gxv += wv * gv;
                        }
                    } else {
                        for oj in lo..hi {
                            let idx = row_off + oj * g.stride + kj - g.padding;
                            acc += grow[oj] * x[idx];
                            gx[idx] += wv * grow[oj];
                        }
                    }
                    gw[tap] += acc;
                });
            }
        }
    }
    (gx, gw, gb)
}

/// Number of output accumulates each input position of a single channel
/// feeds, per filter. Row-major `[height, width]`.
pub fn conv_fanout_map(g: &ConvGeom) -> Vec<f64> {
    let mut map = vec![0.0; g.height * g.width];
    for_each_tap(g, |_ki, kj, _oi, ii, lo, hi| {
        for oj in lo..hi {
            map[ii * g.width + oj * g.stride + kj - g.padding] += 1.0;
        }
    });
    map
}

pub fn linear_forward(x: &[f64], w: &[f64], b: &[f64], n: usize, d: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let xrow = &x[i * d..][..d];
        for j in 0..k {
            let wrow = &w[j * d..][..d];
            out[i * k + j] = b[j] + xrow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    n: usize,
    d: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; n * d];
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    for i in 0..n {
        let xrow = &x[i * d..][..d];
        for j in 0..k {
            let gv = gout[i * k + j];
            gb[j] += gv;
            let wrow = &w[j * d..][..d];
            let gwrow = &mut gw[j * d..][..d];
            let gxrow = &mut gx[i * d..][..d];
            for t in 0..d {
                gwrow[t] += gv * xrow[t];
                gxrow[t] += gv * wrow[t];
            }
        }
    }
    (gx, gw, gb)
}

/// Non-overlapping `k`×`k` average pooling over `[planes, h, w]`.
pub fn avg_pool_forward(x: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let inp = &x[p * h * w..][..h * w];
        let outp = &mut out[p * oh * ow..][..oh * ow];
        for i in 0..oh * k {
            let oi = i / k;
            for j in 0..ow * k {
                outp[oi * ow + j / k] += inp[i * w + j];
            }
        }
        outp.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

pub fn avg_pool_backward(gout: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let mut gx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let gp = &gout[p * oh * ow..][..oh * ow];
        let gxp = &mut gx[p * h * w..][..h * w];
        for i in 0..oh * k {
            for j in 0..ow * k {
                gxp[i * w + j] = gp[(i / k) * ow + j / k] * scale;
            }
        }
    }
    gx
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_handles_padding() {
        // in_len 3, pad 1, kernel 3 -> out 3; tap 0 skips output 0
        assert_eq!(valid_range(3, 3, 1, 1, 0), (1, 3));
        assert_eq!(valid_range(3, 3, 1, 1, 1), (0, 3));
        assert_eq!(valid_range(3, 3, 1, 1, 2), (0, 2));
        // stride 2
        assert_eq!(valid_range(2, 4, 2, 0, 1), (0, 2));
    }

    #[test]
    fn fanout_interior_is_kernel_area() {
        let g = ConvGeom {
            batch: 1,
            in_channels: 1,
            height: 5,
            width: 5,
            filters: 1,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: 1,
        };
        let map = conv_fanout_map(&g);
        assert_eq!(map[2 * 5 + 2], 9.0);
        assert_eq!(map[0], 4.0);
        assert_eq!(map[2], 6.0);
    }
}
