//! Proximal operators of the nuclear norm and of the (transformed) l1 norm.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::svd::{mul_right, right_singular, Square};
use crate::volume::CasoratiMatrix;

/// Singular value thresholding: `U diag(max(s - tau, 0)) V^H`.
///
/// Evaluated as `M V diag(max(s - tau, 0) / s) V^H`, which never forms the
/// left singular vectors.
pub fn svt(m: &CasoratiMatrix, tau: f64) -> Result<CasoratiMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("svt threshold {tau}")));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("svt input".into()));
    }
    if tau == 0.0 {
        return Ok(m.clone());
    }
    let (s, v) = right_singular(m);
    let n = v.n;
    let mut scaled = v.clone();
    for (j, &sj) in s.iter().enumerate() {
        let f = if sj > tau { (sj - tau) / sj } else { 0.0 };
        for k in 0..n {
            scaled.data[k + n * j] *= f;
        }
    }
    // (M V) diag(f) V^H = M (V diag(f) V^H)
    let mut p = Square {
        n,
        data: vec![Complex64::new(0.0, 0.0); n * n],
    };
    for c in 0..n {
        for r in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += scaled.data[r + n * k] * v.data[c + n * k].conj();
            }
            p.data[r + n * c] = acc;
        }
    }
    Ok(mul_right(m, &p))
}

/// Nuclear norm, the sum of singular values.
pub fn nuclear_norm(m: &CasoratiMatrix) -> f64 {
    right_singular(m).0.iter().sum()
}

#[inline]
fn soft_one(z: Complex64, tau: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= tau || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * ((mag - tau) / mag)
    }
}

/// Complex soft-thresholding, `x * max(1 - tau / |x|, 0)` per entry.
pub fn soft(x: &[Complex64], tau: f64) -> Vec<Complex64> {
    x.iter().map(|&z| soft_one(z, tau)).collect()
}

pub fn soft_in_place(x: &mut [Complex64], tau: f64) {
    for z in x {
        *z = soft_one(*z, tau);
    }
}

pub fn l1_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    /// Orthonormal DFT along the temporal axis (rows of the Casorati matrix).
    TemporalFourier,
}

impl std::str::FromStr for TransformKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(Self::Identity),
            "temporal_fourier" => Ok(Self::TemporalFourier),
            other => Err(format!("unknown transform {other:?} (identity | temporal_fourier)")),
        }
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::TemporalFourier => "temporal_fourier",
        })
    }
}

/// Unitary sparsifying transform `W` acting on Casorati matrices.
#[derive(Clone)]
pub struct SparsifyingTransform {
    kind: TransformKind,
    frames: usize,
    plans: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl std::fmt::Debug for SparsifyingTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SparsifyingTransform({}, T={})", self.kind, self.frames)
    }
}

impl SparsifyingTransform {
    pub fn new(kind: TransformKind, frames: usize) -> Self {
        let plans = match kind {
            TransformKind::Identity => None,
            TransformKind::TemporalFourier => {
                let mut planner = FftPlanner::new();
                Some((planner.plan_fft_forward(frames), planner.plan_fft_inverse(frames)))
            }
        };
        Self {
            kind,
            frames,
            plans,
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    fn along_time(&self, m: &CasoratiMatrix, inverse: bool) -> CasoratiMatrix {
        assert_eq!(m.cols(), self.frames, "transform frame count");
        let Some((fwd, inv)) = &self.plans else {
            return m.clone();
        };
        let plan = if inverse { inv } else { fwd };
        let scale = 1.0 / (self.frames as f64).sqrt();
        let mut out = m.clone();
        let mut row = vec![Complex64::new(0.0, 0.0); self.frames];
        for r in 0..m.rows() {
            for (t, x) in row.iter_mut().enumerate() {
                *x = m.get(r, t);
            }
            plan.process(&mut row);
            for (t, x) in row.iter().enumerate() {
                out.set(r, t, x * scale);
            }
        }
        out
    }

    pub fn apply(&self, m: &CasoratiMatrix) -> CasoratiMatrix {
        self.along_time(m, false)
    }

    pub fn adjoint(&self, m: &CasoratiMatrix) -> CasoratiMatrix {
        self.along_time(m, true)
    }

    /// `||W m||_1`.
    pub fn l1(&self, m: &CasoratiMatrix) -> f64 {
        match self.kind {
            TransformKind::Identity => l1_norm(m.as_slice()),
            TransformKind::TemporalFourier => l1_norm(self.apply(m).as_slice()),
        }
    }
}

/// `W^H soft(W x, tau)`, the prox of `tau ||W .||_1` for unitary `W`.
pub fn prox_l1_in_transform(x: &CasoratiMatrix, tau: f64, w: &SparsifyingTransform) -> CasoratiMatrix {
    match w.kind {
        TransformKind::Identity => {
            let mut out = x.clone();
            soft_in_place(out.as_mut_slice(), tau);
            out
        }
        TransformKind::TemporalFourier => {
            let mut coef = w.apply(x);
            soft_in_place(coef.as_mut_slice(), tau);
            w.adjoint(&coef)
        }
    }
}
