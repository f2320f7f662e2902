//! Blocked 3x3x3 convolution kernels on zero-padded activation buffers.
//!
//! Padded layout: `[c][t + 2][w + 2][hp]` with real sample `(h, w, t)` at
//! `[t + 1][w + 1][h + 1]`, `hp = hr + 2` and `hr` the height rounded up to
//! the vector width. Unpadded ("row") layout: `[c][t][w][hr]`; entries with
//! `h >= height` are scratch on output and must be zero on gradient input.

const VW: usize = 8;
const TAPS: usize = 27;

#[inline(always)]
fn fmadd(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Grid {
    pub h: usize,
    pub w: usize,
    pub t: usize,
    pub hr: usize,
    pub hp: usize,
}

impl Grid {
    pub fn new(h: usize, w: usize, t: usize) -> Self {
        let hr = h.div_ceil(VW) * VW;
        Self {
            h,
            w,
            t,
            hr,
            hp: hr + 2,
        }
    }

    pub fn padded_plane(&self) -> usize {
        (self.t + 2) * (self.w + 2) * self.hp
    }

    pub fn row_plane(&self) -> usize {
        self.t * self.w * self.hr
    }

    #[inline]
    fn prow(&self, c: usize, t: usize, w: usize) -> usize {
        c * self.padded_plane() + (t * (self.w + 2) + w) * self.hp
    }

    #[inline]
    fn rrow(&self, c: usize, t: usize, w: usize) -> usize {
        c * self.row_plane() + (t * self.w + w) * self.hr
    }

    /// Pads `c` channels stored in volume order (`h + H*(w + W*t)`).
    pub fn pad_volume(&self, src: &[f64], c: usize) -> Vec<f64> {
        let n = self.h * self.w * self.t;
        let mut out = vec![0.0; c * self.padded_plane()];
        for ci in 0..c {
            for t in 0..self.t {
                for w in 0..self.w {
                    let s = ci * n + self.h * (w + self.w * t);
                    let d = self.prow(ci, t + 1, w + 1) + 1;
                    out[d..d + self.h].copy_from_slice(&src[s..s + self.h]);
                }
            }
        }
        out
    }

    /// Pads a row-layout buffer, optionally applying a rectifier.
    pub fn pad_rows(&self, src: &[f64], c: usize, relu: bool) -> Vec<f64> {
        let mut out = vec![0.0; c * self.padded_plane()];
        for ci in 0..c {
            for t in 0..self.t {
                for w in 0..self.w {
                    let s = self.rrow(ci, t, w);
                    let d = self.prow(ci, t + 1, w + 1) + 1;
                    let (src_row, dst_row) = (&src[s..s + self.h], &mut out[d..d + self.h]);
                    if relu {
                        for (o, &v) in dst_row.iter_mut().zip(src_row) {
                            *o = v.max(0.0);
                        }
                    } else {
                        dst_row.copy_from_slice(src_row);
                    }
                }
            }
        }
        out
    }

    /// Row-layout buffer to volume order.
    pub fn rows_to_volume(&self, src: &[f64], c: usize) -> Vec<f64> {
        let n = self.h * self.w * self.t;
        let mut out = vec![0.0; c * n];
        for ci in 0..c {
            for t in 0..self.t {
                for w in 0..self.w {
                    let s = self.rrow(ci, t, w);
                    let d = ci * n + self.h * (w + self.w * t);
                    out[d..d + self.h].copy_from_slice(&src[s..s + self.h]);
                }
            }
        }
        out
    }

    /// Volume order to row layout, scratch entries zero.
    pub fn volume_to_rows(&self, src: &[f64], c: usize) -> Vec<f64> {
        let n = self.h * self.w * self.t;
        let mut out = vec![0.0; c * self.row_plane()];
        for ci in 0..c {
            for t in 0..self.t {
                for w in 0..self.w {
                    let s = ci * n + self.h * (w + self.w * t);
                    let d = self.rrow(ci, t, w);
                    out[d..d + self.h].copy_from_slice(&src[s..s + self.h]);
                }
            }
        }
        out
    }

    /// Zeroes `g` wherever the row-layout activation `act` is not positive
    /// and on scratch entries.
    pub fn relu_mask(&self, g: &mut [f64], act: &[f64], c: usize) {
        for ci in 0..c {
            for t in 0..self.t {
                for w in 0..self.w {
                    let s = self.rrow(ci, t, w);
                    let row = &mut g[s..s + self.hr];
                    for (gv, &av) in row[..self.h].iter_mut().zip(&act[s..s + self.h]) {
                        if av <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    row[self.h..].fill(0.0);
                }
            }
        }
    }

    /// Nearest-neighbour 2x spatial upsampling of a row-layout buffer on this
    /// (coarse) grid into a padded buffer on `fine`.
    pub fn upsample_pad(&self, src: &[f64], c: usize, fine: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; c * fine.padded_plane()];
        for ci in 0..c {
            for t in 0..fine.t {
                for wf in 0..fine.w {
                    let s = self.rrow(ci, t, wf / 2);
                    let d = fine.prow(ci, t + 1, wf + 1) + 1;
                    for (hf, o) in out[d..d + fine.h].iter_mut().enumerate() {
                        *o = src[s + hf / 2];
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Grid::upsample_pad`] on row layouts: sums each 2x2 block of
    /// `g` (on `fine`) into this grid. Scratch entries of the result are zero.
    pub fn downsample_sum(&self, g: &[f64], c: usize, fine: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; c * self.row_plane()];
        for ci in 0..c {
            for t in 0..fine.t {
                for wf in 0..fine.w {
                    let d = self.rrow(ci, t, wf / 2);
                    let s = fine.rrow(ci, t, wf);
                    for (hf, &v) in g[s..s + fine.h].iter().enumerate() {
                        out[d + hf / 2] += v;
                    }
                }
            }
        }
        out
    }
}

/// `[co][ci][tap]` to `[ci][tap][co]`, optionally flipping the taps and
/// swapping the roles of `ci` and `co` (the transposed convolution).
pub(crate) fn pack_weights(w: &[f64], cin: usize, cout: usize, transpose: bool) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for tap in 0..TAPS {
                let v = w[(co * cin + ci) * TAPS + tap];
                let idx = if transpose {
                    (co * TAPS + (TAPS - 1 - tap)) * cin + ci
                } else {
                    (ci * TAPS + tap) * cout + co
                };
                out[idx] = v;
            }
        }
    }
    out
}

#[inline(always)]
fn conv_block<const C: usize>(
    g: &Grid,
    input: &[f64],
    cin: usize,
    wp: &[f64],
    cout: usize,
    c0: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    for t in 0..g.t {
        for w in 0..g.w {
            for hb in (0..g.hr).step_by(VW) {
                let mut acc = [[0.0f64; VW]; C];
                if let Some(b) = bias {
                    for co in 0..C {
                        acc[co] = [b[c0 + co]; VW];
                    }
                }
                for ci in 0..cin {
                    for dt in 0..3 {
                        for dw in 0..3 {
                            let base = g.prow(ci, t + dt, w + dw) + hb;
                            let row = &input[base..base + VW + 2];
                            let tap0 = (ci * TAPS + 9 * dt + 3 * dw) * cout + c0;
                            for dh in 0..3 {
                                let x: &[f64; VW] = row[dh..dh + VW].try_into().unwrap();
                                let wv: &[f64; C] = wp[tap0 + dh * cout..tap0 + dh * cout + C].try_into().unwrap();
                                for co in 0..C {
                                    for i in 0..VW {
                                        acc[co][i] = fmadd(wv[co], x[i], acc[co][i]);
                                    }
                                }
                            }
                        }
                    }
                }
                for co in 0..C {
                    let o = g.rrow(c0 + co, t, w) + hb;
                    out[o..o + VW].copy_from_slice(&acc[co]);
                }
            }
        }
    }
}

/// Convolution of a padded input with packed weights (`[ci][tap][co]`),
/// producing a row-layout output.
pub(crate) fn conv(g: &Grid, input: &[f64], cin: usize, wp: &[f64], bias: Option<&[f64]>, cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * g.row_plane()];
    let mut c0 = 0;
    while c0 < cout {
        let n = (cout - c0).min(8);
        match n {
            8 => conv_block::<8>(g, input, cin, wp, cout, c0, bias, &mut out),
            7 => conv_block::<7>(g, input, cin, wp, cout, c0, bias, &mut out),
            6 => conv_block::<6>(g, input, cin, wp, cout, c0, bias, &mut out),
            5 => conv_block::<5>(g, input, cin, wp, cout, c0, bias, &mut out),
            4 => conv_block::<4>(g, input, cin, wp, cout, c0, bias, &mut out),
            3 => conv_block::<3>(g, input, cin, wp, cout, c0, bias, &mut out),
            2 => conv_block::<2>(g, input, cin, wp, cout, c0, bias, &mut out),
            _ => conv_block::<1>(g, input, cin, wp, cout, c0, bias, &mut out),
        }
        c0 += n;
    }
    out
}

#[inline(always)]
fn wgrad_block<const C: usize>(
    g: &Grid,
    gout: &[f64],
    c0: usize,
    input: &[f64],
    cin: usize,
    gw: &mut [f64],
) {
    for t in 0..g.t {
        for ci in 0..cin {
            for dt in 0..3 {
                for dw in 0..3 {
                    let mut acc = [[[0.0f64; VW]; C]; 3];
                    for w in 0..g.w {
                        let base = g.prow(ci, t + dt, w + dw);
                        let row = &input[base..base + g.hp];
                        let mut grows = [0usize; C];
                        for (co, r) in grows.iter_mut().enumerate() {
                            *r = g.rrow(c0 + co, t, w);
                        }
                        for hb in (0..g.hr).step_by(VW) {
                            let xs: [&[f64; VW]; 3] =
                                std::array::from_fn(|dh| row[hb + dh..hb + dh + VW].try_into().unwrap());
                            for co in 0..C {
                                let gv: &[f64; VW] = gout[grows[co] + hb..grows[co] + hb + VW].try_into().unwrap();
                                for dh in 0..3 {
                                    for i in 0..VW {
                                        acc[dh][co][i] = fmadd(gv[i], xs[dh][i], acc[dh][co][i]);
                                    }
                                }
                            }
                        }
                    }
                    for co in 0..C {
                        for dh in 0..3 {
                            let a = &acc[dh][co];
                            let s = ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7]));
                            gw[((c0 + co) * cin + ci) * TAPS + 9 * dt + 3 * dw + dh] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight (`[co][ci][tap]`) and bias gradients given the
/// row-layout output gradient and the padded layer input.
pub(crate) fn weight_grad(
    g: &Grid,
    gout: &[f64],
    cout: usize,
    input: &[f64],
    cin: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    for (co, b) in gb.iter_mut().enumerate() {
        *b += gout[co * g.row_plane()..(co + 1) * g.row_plane()].iter().sum::<f64>();
    }
    let mut c0 = 0;
    while c0 < cout {
        let n = (cout - c0).min(4);
        match n {
            4 => wgrad_block::<4>(g, gout, c0, input, cin, gw),
            3 => wgrad_block::<3>(g, gout, c0, input, cin, gw),
            2 => wgrad_block::<2>(g, gout, c0, input, cin, gw),
            _ => wgrad_block::<1>(g, gout, c0, input, cin, gw),
        }
        c0 += n;
    }
}
