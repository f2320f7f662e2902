//! Centered, orthonormal 2D FFT over one frame stored column-major (h fastest).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    h: usize,
    w: usize,
    fwd_h: Arc<dyn Fft<f64>>,
    inv_h: Arc<dyn Fft<f64>>,
    fwd_w: Arc<dyn Fft<f64>>,
    inv_w: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            fwd_h: planner.plan_fft_forward(h),
            inv_h: planner.plan_fft_inverse(h),
            fwd_w: planner.plan_fft_forward(w),
            inv_w: planner.plan_fft_inverse(w),
        }
    }

    pub fn forward(&self, frame: &mut [Complex64]) {
        self.apply(frame, Direction::Forward);
    }

    pub fn inverse(&self, frame: &mut [Complex64]) {
        self.apply(frame, Direction::Inverse);
    }

    fn apply(&self, frame: &mut [Complex64], dir: Direction) {
        assert_eq!(frame.len(), self.h * self.w, "frame length");
        let (fh, fw) = match dir {
            Direction::Forward => (&self.fwd_h, &self.fwd_w),
            Direction::Inverse => (&self.inv_h, &self.inv_w),
        };
        let scale = 1.0 / ((self.h * self.w) as f64).sqrt();

        for col in frame.chunks_exact_mut(self.h) {
            centered(fh.as_ref(), col);
        }
        let mut row = vec![Complex64::new(0.0, 0.0); self.w];
        for h in 0..self.h {
            for (w, r) in row.iter_mut().enumerate() {
                *r = frame[h + self.h * w];
            }
            centered(fw.as_ref(), &mut row);
            for (w, r) in row.iter().enumerate() {
                frame[h + self.h * w] = *r * scale;
            }
        }
    }
}

// fftshift(fft(ifftshift(x))); for even lengths both shifts rotate by n/2.
fn centered(plan: &dyn Fft<f64>, x: &mut [Complex64]) {
    let n = x.len();
    if n > 1 {
        x.rotate_left(n / 2);
        plan.process(x);
        x.rotate_left(n / 2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::volume::{dot, norm_sq};

    fn naive_centered_dft(x: &[Complex64], h: usize, w: usize, sign: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
        for kw in 0..w {
            for kh in 0..h {
                let mut acc = Complex64::new(0.0, 0.0);
                for nw in 0..w {
                    for nh in 0..h {
                        let ph = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((kh as f64 - ch) * (nh as f64 - ch) / h as f64
                                + (kw as f64 - cw) * (nw as f64 - cw) / w as f64);
                        acc += x[nh + h * nw] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[kh + h * kw] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn matches_naive_centered_dft() {
        let (h, w) = (8, 4);
        let mut s = Stream::new(1, "fft");
        let x: Vec<Complex64> = (0..h * w).map(|_| s.complex_normal(1.0)).collect();
        let fft = Fft2::new(h, w);
        let mut y = x.clone();
        fft.forward(&mut y);
        let oracle = naive_centered_dft(&x, h, w, -1.0);
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
        fft.inverse(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn unitary() {
        let (h, w) = (16, 32);
        let mut s = Stream::new(2, "fft");
        let x: Vec<Complex64> = (0..h * w).map(|_| s.complex_normal(1.0)).collect();
        let y0: Vec<Complex64> = (0..h * w).map(|_| s.complex_normal(1.0)).collect();
        let fft = Fft2::new(h, w);
        let mut fx = x.clone();
        fft.forward(&mut fx);
        assert!((norm_sq(&fx) - norm_sq(&x)).abs() < 1e-10 * norm_sq(&x));
        let mut fy = y0.clone();
        fft.inverse(&mut fy);
        // <F x, y> = <x, F^H y>
        let lhs = dot(&fx, &y0);
        let rhs = dot(&x, &fy);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn dc_lands_in_center() {
        let (h, w) = (8, 8);
        let mut x = vec![Complex64::new(1.0, 0.0); h * w];
        Fft2::new(h, w).forward(&mut x);
        let center = h / 2 + h * (w / 2);
        assert!((x[center].re - 8.0).abs() < 1e-12);
        for (i, z) in x.iter().enumerate() {
            if i != center {
                assert!(z.norm() < 1e-12);
            }
        }
    }
}
