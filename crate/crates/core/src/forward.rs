//! Multi-coil Cartesian undersampled Fourier operator `A = M F C`.
//!
//! `C` multiplies each frame by every coil map, `F` is the centered
//! orthonormal 2D FFT and `M` keeps only the selected phase-encode columns
//! (index `w`). The same mask is applied to every frame.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::rng::Stream;
use crate::volume::{norm_sq, CineVolume, Dims};

/// Exponent of the polynomial variable-density profile.
pub const DENSITY_POWER: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    selected: Vec<bool>,
    center_lines: usize,
    af: f64,
}

impl SamplingMask {
    pub fn full(w: usize) -> Self {
        Self {
            selected: vec![true; w],
            center_lines: w,
            af: 1.0,
        }
    }

    pub fn from_parts(selected: Vec<bool>, center_lines: usize, af: f64) -> Result<Self> {
        if selected.is_empty() || !selected.len().is_power_of_two() {
            return Err(Error::InvalidDims(format!(
                "mask width {} is not a power of two",
                selected.len()
            )));
        }
        if center_lines > selected.len() || !(af.is_finite() && af >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mask with center_lines={center_lines}, af={af}"
            )));
        }
        Ok(Self {
            selected,
            center_lines,
            af,
        })
    }

    pub fn width(&self) -> usize {
        self.selected.len()
    }

    pub fn center_lines(&self) -> usize {
        self.center_lines
    }

    /// Nominal acceleration factor requested at construction.
    pub fn af(&self) -> f64 {
        self.af
    }

    pub fn is_selected(&self, w: usize) -> bool {
        self.selected[w]
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn lines(&self) -> Vec<usize> {
        (0..self.width()).filter(|&w| self.selected[w]).collect()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// `W / |selected|`.
    pub fn achieved_af(&self) -> f64 {
        self.width() as f64 / self.count() as f64
    }

    /// Column range of the fully sampled central block.
    pub fn center_range(&self) -> std::ops::Range<usize> {
        center_block(self.width(), self.center_lines)
    }
}

fn center_block(w: usize, center: usize) -> std::ops::Range<usize> {
    let start = w / 2 - center / 2;
    start..start + center
}

/// Variable-density random phase-encode mask.
///
/// The central `center_lines` columns are always kept. The remaining
/// `round(W / af) - center_lines` columns are drawn without replacement with
/// weight `(1 + |i - W/2| / (W/2))^-3`.
pub fn make_mask(w: usize, af: f64, center_lines: usize, seed: u64) -> Result<SamplingMask> {
    if w == 0 || !w.is_power_of_two() {
        return Err(Error::InvalidDims(format!("mask width {w} is not a power of two")));
    }
    if !(af.is_finite() && af >= 1.0 && af <= w as f64) {
        return Err(Error::InvalidParameter(format!("af={af} outside [1, {w}]")));
    }
    let target = ((w as f64 / af).round() as usize).max(1);
    if center_lines > target || center_lines > w {
        return Err(Error::InvalidParameter(format!(
            "center_lines={center_lines} exceeds the {target} lines implied by af={af}"
        )));
    }

    let mut selected = vec![false; w];
    for i in center_block(w, center_lines) {
        selected[i] = true;
    }
    let half = w as f64 / 2.0;
    let mut weights: Vec<f64> = (0..w)
        .map(|i| {
            if selected[i] {
                0.0
            } else {
                (1.0 + (i as f64 - half).abs() / half.max(1.0)).powf(-DENSITY_POWER)
            }
        })
        .collect();

    let mut rng = Stream::new(seed, "mask");
    for _ in center_lines..target {
        let total: f64 = weights.iter().sum();
        let mut u = rng.uniform() * total;
        let mut pick = None;
        for (i, &wt) in weights.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            pick = Some(i);
            if u < wt {
                break;
            }
            u -= wt;
        }
        let i = pick.expect("a positive weight remains while lines are missing");
        selected[i] = true;
        weights[i] = 0.0;
    }

    Ok(SamplingMask {
        selected,
        center_lines,
        af,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    n_coils: usize,
    h: usize,
    w: usize,
    /// Index `h + H * (w + W * c)`.
    maps: Vec<Complex64>,
}

impl CoilSensitivities {
    pub fn from_vec(n_coils: usize, h: usize, w: usize, maps: Vec<Complex64>) -> Result<Self> {
        if n_coils == 0 || maps.len() != n_coils * h * w {
            return Err(Error::DimensionMismatch(format!(
                "{} coil samples for {n_coils} coils of {h}x{w}",
                maps.len()
            )));
        }
        Ok(Self { n_coils, h, w, maps })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn unit(h: usize, w: usize) -> Self {
        Self {
            n_coils: 1,
            h,
            w,
            maps: vec![Complex64::new(1.0, 0.0); h * w],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn map(&self, c: usize) -> &[Complex64] {
        let n = self.h * self.w;
        &self.maps[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.maps
    }

    pub fn sum_of_squares(&self, h: usize, w: usize) -> f64 {
        let i = h + self.h * w;
        (0..self.n_coils).map(|c| self.map(c)[i].norm_sqr()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KSpaceDims {
    pub coils: usize,
    pub h: usize,
    pub w: usize,
    pub t: usize,
}

impl KSpaceDims {
    pub fn len(&self) -> usize {
        self.coils * self.h * self.w * self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_dims(&self) -> Dims {
        Dims::new(self.h, self.w, self.t)
    }
}

/// Measured k-space, index `h + H * (w + W * (c + C * t))`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    dims: KSpaceDims,
    samples: Vec<Complex64>,
    mask: SamplingMask,
}

impl KSpaceData {
    /// Checks dims and that every unselected column is exactly zero.
    pub fn new(dims: KSpaceDims, samples: Vec<Complex64>, mask: SamplingMask) -> Result<Self> {
        if samples.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} k-space samples for {}x{}x{}x{}",
                samples.len(),
                dims.coils,
                dims.h,
                dims.w,
                dims.t
            )));
        }
        if mask.width() != dims.w {
            return Err(Error::DimensionMismatch(format!(
                "mask width {} vs k-space width {}",
                mask.width(),
                dims.w
            )));
        }
        if !samples.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite("k-space samples".into()));
        }
        for (i, z) in samples.iter().enumerate() {
            let w = (i / dims.h) % dims.w;
            if !mask.is_selected(w) && *z != Complex64::new(0.0, 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "nonzero sample at unselected column {w}"
                )));
            }
        }
        Ok(Self { dims, samples, mask })
    }

    pub fn dims(&self) -> KSpaceDims {
        self.dims
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.samples)
    }

    fn block(&self, c: usize, t: usize) -> &[Complex64] {
        let n = self.dims.h * self.dims.w;
        let off = n * (c + self.dims.coils * t);
        &self.samples[off..off + n]
    }
}

/// The operator `A` bound to fixed coils, mask and image dims.
#[derive(Debug)]
pub struct ForwardModel {
    dims: Dims,
    coils: CoilSensitivities,
    mask: SamplingMask,
    fft: Fft2,
}

impl ForwardModel {
    pub fn new(dims: Dims, coils: CoilSensitivities, mask: SamplingMask) -> Result<Self> {
        dims.validate()?;
        if coils.h != dims.h || coils.w != dims.w {
            return Err(Error::DimensionMismatch(format!(
                "coil maps {}x{} vs image {dims}",
                coils.h, coils.w
            )));
        }
        if mask.width() != dims.w {
            return Err(Error::DimensionMismatch(format!(
                "mask width {} vs image width {}",
                mask.width(),
                dims.w
            )));
        }
        Ok(Self {
            dims,
            fft: Fft2::new(dims.h, dims.w),
            coils,
            mask,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kspace_dims(&self) -> KSpaceDims {
        KSpaceDims {
            coils: self.coils.n_coils,
            h: self.dims.h,
            w: self.dims.w,
            t: self.dims.t,
        }
    }

    pub fn coils(&self) -> &CoilSensitivities {
        &self.coils
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    fn apply_mask(&self, block: &mut [Complex64]) {
        let h = self.dims.h;
        for (w, col) in block.chunks_exact_mut(h).enumerate() {
            if !self.mask.selected[w] {
                col.fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    pub fn forward(&self, x: &CineVolume) -> Result<KSpaceData> {
        if x.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "volume {} vs operator {}",
                x.dims(),
                self.dims
            )));
        }
        let samples = self.forward_raw(x.as_slice());
        Ok(KSpaceData {
            dims: self.kspace_dims(),
            samples,
            mask: self.mask.clone(),
        })
    }

    /// `A x` on a raw volume buffer.
    pub fn forward_raw(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.dims.frame_len();
        let nc = self.coils.n_coils;
        assert_eq!(x.len(), n * self.dims.t);
        let mut out = vec![Complex64::new(0.0, 0.0); n * nc * self.dims.t];
        for t in 0..self.dims.t {
            let frame = &x[t * n..(t + 1) * n];
            for c in 0..nc {
                let off = n * (c + nc * t);
                let block = &mut out[off..off + n];
                for ((b, xv), s) in block.iter_mut().zip(frame).zip(self.coils.map(c)) {
                    *b = xv * s;
                }
                self.fft.forward(block);
                self.apply_mask(block);
            }
        }
        out
    }

    pub fn adjoint(&self, y: &KSpaceData) -> Result<CineVolume> {
        if y.dims != self.kspace_dims() {
            return Err(Error::DimensionMismatch(
                "k-space dims do not match the operator".into(),
            ));
        }
        let data = self.adjoint_raw(&y.samples);
        Ok(CineVolume::from_fn(self.dims, |h, w, t| {
            data[self.dims.index(h, w, t)]
        }))
    }

    /// `A^H y` on a raw k-space buffer.
    pub fn adjoint_raw(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.dims.frame_len();
        let nc = self.coils.n_coils;
        assert_eq!(y.len(), n * nc * self.dims.t);
        let mut out = vec![Complex64::new(0.0, 0.0); n * self.dims.t];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..self.dims.t {
            let frame = &mut out[t * n..(t + 1) * n];
            // Ascending coil order keeps the reduction deterministic.
            for c in 0..nc {
                let off = n * (c + nc * t);
                buf.copy_from_slice(&y[off..off + n]);
                self.apply_mask(&mut buf);
                self.fft.inverse(&mut buf);
                for ((f, b), s) in frame.iter_mut().zip(&buf).zip(self.coils.map(c)) {
                    *f += b * s.conj();
                }
            }
        }
        out
    }

    /// `A^H A x`.
    pub fn normal_raw(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.adjoint_raw(&self.forward_raw(x))
    }

    /// Adds i.i.d. complex Gaussian noise (per-component std `sigma`) on the
    /// sampled columns only.
    pub fn add_noise(&self, y: &mut KSpaceData, sigma: f64, seed: u64) {
        if sigma <= 0.0 {
            return;
        }
        let mut rng = Stream::new(seed, "noise");
        let h = self.dims.h;
        for (i, z) in y.samples.iter_mut().enumerate() {
            let w = (i / h) % self.dims.w;
            if self.mask.selected[w] {
                *z += rng.complex_normal(sigma);
            }
        }
    }

    /// Power-iteration estimate of the largest eigenvalue of `A^H A`.
    ///
    /// The start vector is fixed by the `"power"` stream, so the estimate is a
    /// deterministic, nondecreasing function of `iters`.
    pub fn estimate_op_norm_sq(&self, iters: usize) -> f64 {
        let mut rng = Stream::new(0x5eed, "power");
        let mut x: Vec<Complex64> = (0..self.dims.len()).map(|_| rng.complex_normal(1.0)).collect();
        let mut est = 0.0;
        for _ in 0..iters.max(1) {
            let nx = norm_sq(&x).sqrt();
            if nx == 0.0 {
                return 0.0;
            }
            let y = self.normal_raw(&x);
            let ny = norm_sq(&y).sqrt();
            est = ny / nx;
            if ny == 0.0 {
                return 0.0;
            }
            x = y.into_iter().map(|z| z / ny).collect();
        }
        est
    }
}

pub fn forward(x: &CineVolume, coils: &CoilSensitivities, mask: &SamplingMask) -> Result<KSpaceData> {
    ForwardModel::new(x.dims(), coils.clone(), mask.clone())?.forward(x)
}

pub fn adjoint(y: &KSpaceData, coils: &CoilSensitivities) -> Result<CineVolume> {
    let d = y.dims;
    if coils.n_coils != d.coils {
        return Err(Error::DimensionMismatch(format!(
            "{} coil maps for {} coil channels",
            coils.n_coils, d.coils
        )));
    }
    ForwardModel::new(d.image_dims(), coils.clone(), y.mask.clone())?.adjoint(y)
}

pub fn estimate_op_norm_sq(
    coils: &CoilSensitivities,
    mask: &SamplingMask,
    dims: Dims,
    iters: usize,
) -> Result<f64> {
    Ok(ForwardModel::new(dims, coils.clone(), mask.clone())?.estimate_op_norm_sq(iters))
}

impl KSpaceData {
    /// Per-(coil, frame) block accessor for writers and tests.
    pub fn coil_frame(&self, c: usize, t: usize) -> &[Complex64] {
        self.block(c, t)
    }
}
