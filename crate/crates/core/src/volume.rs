//! Complex image series and their Casorati matrices.
//!
//! Storage order is fixed: the linear index of entry `(h, w, t)` is
//! `h + H * (w + W * t)`. Each frame is therefore a contiguous block of `H * W`
//! values vectorized column-major (h fastest, then w), and the Casorati matrix
//! (`HW` rows, `T` columns, column-major) shares the exact same layout.

use std::ops::{Add, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub t: usize,
}

impl Dims {
    pub const fn new(h: usize, w: usize, t: usize) -> Self {
        Self { h, w, t }
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, t: usize) -> usize {
        h + self.h * (w + self.w * t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.h.is_power_of_two() || !self.w.is_power_of_two() {
            return Err(Error::InvalidDims(format!(
                "H and W must be powers of two, got {}x{}",
                self.h, self.w
            )));
        }
        if self.t == 0 {
            return Err(Error::InvalidDims("T must be at least 1".into()));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.t)
    }
}

/// An `H x W x T` complex image series.
#[derive(Clone, Debug, PartialEq)]
pub struct CineVolume {
    dims: Dims,
    data: Vec<Complex64>,
}

impl CineVolume {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.len()],
        }
    }

    pub fn filled(dims: Dims, value: Complex64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    /// Wraps `data` after checking the dimension contract and finiteness.
    pub fn from_vec(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for dims {dims}",
                data.len()
            )));
        }
        if !data.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite("volume data".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.t {
            for w in 0..dims.w {
                for h in 0..dims.h {
                    data.push(f(h, w, t));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, h: usize, w: usize, t: usize) -> Complex64 {
        self.data[self.dims.index(h, w, t)]
    }

    pub fn set(&mut self, h: usize, w: usize, t: usize, v: Complex64) {
        let i = self.dims.index(h, w, t);
        self.data[i] = v;
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.dims.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &CineVolume) {
        assert_eq!(self.dims, x.dims, "axpy dims");
        axpy(&mut self.data, a, &x.data);
    }
}

impl Add for &CineVolume {
    type Output = CineVolume;
    fn add(self, rhs: &CineVolume) -> CineVolume {
        assert_eq!(self.dims, rhs.dims, "add dims");
        CineVolume {
            dims: self.dims,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CineVolume {
    type Output = CineVolume;
    fn sub(self, rhs: &CineVolume) -> CineVolume {
        assert_eq!(self.dims, rhs.dims, "sub dims");
        CineVolume {
            dims: self.dims,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Column-major `rows x cols` complex matrix; column `t` is frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CasoratiMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CasoratiMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r + self.rows * c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r + self.rows * c] = v;
    }

    pub fn column(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn column_mut(&mut self, c: usize) -> &mut [Complex64] {
        let r = self.rows;
        &mut self.data[c * r..(c + 1) * r]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn frobenius(&self) -> f64 {
        norm_sq(&self.data).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }
}

pub fn to_casorati(v: &CineVolume) -> CasoratiMatrix {
    CasoratiMatrix {
        rows: v.dims.frame_len(),
        cols: v.dims.t,
        data: v.data.clone(),
    }
}

pub fn from_casorati(m: &CasoratiMatrix, dims: Dims) -> Result<CineVolume> {
    if m.rows != dims.frame_len() || m.cols != dims.t {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} Casorati matrix does not reshape to {dims}",
            m.rows, m.cols
        )));
    }
    CineVolume::from_vec(dims, m.data.clone())
}

/// Pixelwise temporal mean, returned as a single-frame volume.
pub fn frame_mean(v: &CineVolume) -> CineVolume {
    let n = v.dims.frame_len();
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..v.dims.t {
        for (a, x) in acc.iter_mut().zip(v.frame(t)) {
            *a += x;
        }
    }
    let inv = 1.0 / v.dims.t as f64;
    for a in &mut acc {
        *a *= inv;
    }
    CineVolume {
        dims: Dims::new(v.dims.h, v.dims.w, 1),
        data: acc,
    }
}

/// Repeats a single frame `t` times.
pub fn replicate_frame(frame: &CineVolume, t: usize) -> CineVolume {
    assert_eq!(frame.dims.t, 1, "replicate_frame expects a single frame");
    let mut data = Vec::with_capacity(frame.data.len() * t);
    for _ in 0..t {
        data.extend_from_slice(&frame.data);
    }
    CineVolume {
        dims: Dims::new(frame.dims.h, frame.dims.w, t),
        data,
    }
}

pub fn norm_sq(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// Hermitian inner product `<a, b> = sum conj(a_i) b_i`.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn axpy(y: &mut [Complex64], a: f64, x: &[Complex64]) {
    assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi * a;
    }
}

pub fn dist_sq(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_volume(dims: Dims, seed: u64) -> CineVolume {
        let mut s = Stream::new(seed, "volume-test");
        CineVolume::from_fn(dims, |_, _, _| s.complex_normal(1.0))
    }

    #[test]
    fn degenerate_casorati() {
        let v = CineVolume::from_vec(Dims::new(1, 1, 3), vec![c(1.0), c(2.0), c(3.0)]).unwrap();
        let m = to_casorati(&v);
        assert_eq!((m.rows(), m.cols()), (1, 3));
        assert_eq!(m.as_slice(), &[c(1.0), c(2.0), c(3.0)]);
        let back = from_casorati(&m, Dims::new(1, 1, 3)).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn constant_volume_gives_constant_matrix() {
        let v = CineVolume::filled(Dims::new(4, 2, 3), c(7.0));
        let m = to_casorati(&v);
        assert!(m.as_slice().iter().all(|&z| z == c(7.0)));
    }

    #[test]
    fn frobenius_matches_direct_sum() {
        let v = random_volume(Dims::new(4, 4, 2), 1);
        let mut direct = 0.0;
        for t in 0..2 {
            for w in 0..4 {
                for h in 0..4 {
                    direct += v.get(h, w, t).norm_sqr();
                }
            }
        }
        let fro = to_casorati(&v).frobenius();
        assert!((fro - direct.sqrt()).abs() <= 1e-12 * direct.sqrt());
    }

    #[test]
    fn columns_are_vectorized_frames() {
        let dims = Dims::new(4, 2, 3);
        let v = random_volume(dims, 2);
        let m = to_casorati(&v);
        for t in 0..3 {
            for w in 0..2 {
                for h in 0..4 {
                    assert_eq!(m.get(h + 4 * w, t), v.get(h, w, t));
                }
            }
        }
    }

    #[test]
    fn round_trip_and_mismatch() {
        let dims = Dims::new(4, 4, 3);
        let v = random_volume(dims, 3);
        assert_eq!(from_casorati(&to_casorati(&v), dims).unwrap(), v);

        let m = CasoratiMatrix::zeros(16, 2);
        assert!(matches!(
            from_casorati(&m, Dims::new(2, 4, 2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn frame_mean_cases() {
        let v = CineVolume::from_fn(Dims::new(2, 2, 2), |_, _, t| c(if t == 0 { 2.0 } else { 4.0 }));
        assert!(frame_mean(&v).as_slice().iter().all(|&z| z == c(3.0)));

        let single = random_volume(Dims::new(4, 4, 1), 4);
        assert_eq!(frame_mean(&single), single);

        let dims = Dims::new(4, 4, 5);
        let v = random_volume(dims, 5);
        let m = frame_mean(&v);
        for w in 0..4 {
            for h in 0..4 {
                let mut s = Complex64::new(0.0, 0.0);
                for t in 0..5 {
                    s += v.get(h, w, t);
                }
                s /= 5.0;
                assert!((m.get(h, w, 0) - s).norm() <= 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_dims_and_nan() {
        assert!(CineVolume::from_vec(Dims::new(3, 4, 1), vec![c(0.0); 12]).is_err());
        assert!(CineVolume::from_vec(Dims::new(4, 4, 0), vec![]).is_err());
        let mut data = vec![c(0.0); 4];
        data[2] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(
            CineVolume::from_vec(Dims::new(2, 2, 1), data),
            Err(Error::NonFinite(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_volume() -> impl Strategy<Value = CineVolume> {
            (0u32..3, 0u32..3, 1usize..5, any::<u64>()).prop_map(|(lh, lw, t, seed)| {
                random_volume(Dims::new(1 << lh, 1 << lw, t), seed)
            })
        }

        proptest! {
            #[test]
            fn casorati_bijection(v in arb_volume()) {
                let m = to_casorati(&v);
                let back = from_casorati(&m, v.dims()).unwrap();
                prop_assert_eq!(&back, &v);
                let n = v.norm();
                prop_assert!((m.frobenius() - n).abs() <= 1e-12 * n.max(1e-300));
            }

            #[test]
            fn frame_mean_is_linear(u in arb_volume(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
                let v = random_volume(u.dims(), seed);
                let mut combo = u.scaled(a);
                combo.axpy(b, &v);
                let lhs = frame_mean(&combo);
                let mut rhs = frame_mean(&u).scaled(a);
                rhs.axpy(b, &frame_mean(&v));
                for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                    prop_assert!((x - y).norm() <= 1e-12);
                }
            }
        }
    }
}
