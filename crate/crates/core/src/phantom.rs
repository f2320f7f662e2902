//! Synthetic cine phantom and coil sensitivities.
//!
//! The phantom is a static body of overlapping ellipses (rank one in Casorati
//! form) plus a few ellipses that translate and pulsate periodically over the
//! cycle. Pixels are 4x4 supersampled so that sub-pixel motion still changes
//! the image.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::CoilSensitivities;
use crate::rng::Stream;
use crate::volume::{CineVolume, Dims};

const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub background_ellipses: usize,
    pub moving_ellipses: usize,
    /// Peak displacement of the moving structures, in pixels.
    pub motion_amplitude: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// The 64x64x8 reference phantom used throughout the test suites.
    pub fn std_a() -> Self {
        Self {
            dims: Dims::new(64, 64, 8),
            background_ellipses: 4,
            moving_ellipses: 2,
            motion_amplitude: 3.0,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let limit = self.dims.h.min(self.dims.w) as f64 / 4.0;
        if !(self.motion_amplitude >= 0.0 && self.motion_amplitude < limit) {
            return Err(Error::InvalidParameter(format!(
                "motion_amplitude {} must lie in [0, {limit})",
                self.motion_amplitude
            )));
        }
        if self.dims.h < 8 || self.dims.w < 8 {
            return Err(Error::InvalidParameter(format!(
                "phantom needs at least 8x8 pixels, got {}",
                self.dims
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = (c * dy + s * dx) / self.ry;
        let v = (-s * dy + c * dx) / self.rx;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Copy, Debug)]
struct Mover {
    base: Ellipse,
    dir: f64,
    phase: f64,
    pulse: f64,
}

impl Mover {
    fn at(&self, t: usize, frames: usize, amplitude: f64) -> Ellipse {
        let ph = 2.0 * std::f64::consts::PI * t as f64 / frames as f64 + self.phase;
        let shift = amplitude * ph.sin();
        let grow = 1.0 + self.pulse * ph.cos();
        Ellipse {
            cy: self.base.cy + shift * self.dir.sin(),
            cx: self.base.cx + shift * self.dir.cos(),
            ry: self.base.ry * grow,
            rx: self.base.rx * grow,
            ..self.base
        }
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<CineVolume> {
    spec.validate()?;
    let Dims { h, w, t: frames } = spec.dims;
    let (hf, wf) = (h as f64, w as f64);
    let side = hf.min(wf);
    let mut rng = Stream::new(spec.seed, "phantom");

    let body = Ellipse {
        cy: hf / 2.0,
        cx: wf / 2.0,
        ry: 0.40 * hf,
        rx: 0.34 * wf,
        angle: 0.0,
        value: 0.3,
    };
    let mut statics = vec![body];
    for _ in 0..spec.background_ellipses {
        statics.push(Ellipse {
            cy: hf / 2.0 + rng.uniform_range(-0.22, 0.22) * hf,
            cx: wf / 2.0 + rng.uniform_range(-0.18, 0.18) * wf,
            ry: rng.uniform_range(0.05, 0.14) * side,
            rx: rng.uniform_range(0.05, 0.14) * side,
            angle: rng.uniform_range(0.0, std::f64::consts::PI),
            value: rng.uniform_range(0.1, 0.3),
        });
    }
    let movers: Vec<Mover> = (0..spec.moving_ellipses)
        .map(|_| {
            let r = rng.uniform_range(0.07, 0.12) * side;
            Mover {
                base: Ellipse {
                    cy: hf / 2.0 + rng.uniform_range(-0.1, 0.1) * hf,
                    cx: wf / 2.0 + rng.uniform_range(-0.1, 0.1) * wf,
                    ry: r,
                    rx: r * rng.uniform_range(0.8, 1.2),
                    angle: rng.uniform_range(0.0, std::f64::consts::PI),
                    value: rng.uniform_range(0.3, 0.45),
                },
                dir: rng.uniform_range(0.0, 2.0 * std::f64::consts::PI),
                phase: rng.uniform_range(0.0, 2.0 * std::f64::consts::PI),
                pulse: rng.uniform_range(0.1, 0.25),
            }
        })
        .collect();

    let sub = SUPERSAMPLE as f64;
    let norm = 1.0 / (sub * sub);
    let mut vol = CineVolume::zeros(spec.dims);
    for t in 0..frames {
        let shapes: Vec<Ellipse> = statics
            .iter()
            .copied()
            .chain(movers.iter().map(|m| m.at(t, frames, spec.motion_amplitude)))
            .collect();
        for x in 0..w {
            for y in 0..h {
                let mut acc = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let py = y as f64 + (sy as f64 + 0.5) / sub;
                        let px = x as f64 + (sx as f64 + 0.5) / sub;
                        let v: f64 = shapes
                            .iter()
                            .filter(|e| e.contains(py, px))
                            .map(|e| e.value)
                            .sum();
                        acc += v.clamp(0.0, 1.0);
                    }
                }
                vol.set(y, x, t, Complex64::new(acc * norm, 0.0));
            }
        }
    }
    Ok(vol)
}

/// Smooth Gaussian-bump coil profiles around the field of view with a gentle
/// linear phase, normalized so that the sum of squares is one at every pixel.
pub fn make_coils(h: usize, w: usize, n_coils: usize, seed: u64) -> CoilSensitivities {
    assert!(n_coils >= 1, "at least one coil");
    let mut rng = Stream::new(seed, "coils");
    let (hf, wf) = (h as f64, w as f64);
    let n = h * w;
    let mut maps = vec![Complex64::new(0.0, 0.0); n * n_coils];
    for c in 0..n_coils {
        let ang = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64 + rng.uniform_range(-0.2, 0.2);
        let cy = hf / 2.0 + 0.6 * hf * ang.cos();
        let cx = wf / 2.0 + 0.6 * wf * ang.sin();
        let width = rng.uniform_range(0.45, 0.6) * hf.max(wf);
        let ph0 = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        let gy = rng.uniform_range(-1.0, 1.0) / hf;
        let gx = rng.uniform_range(-1.0, 1.0) / wf;
        for x in 0..w {
            for y in 0..h {
                let (yf, xf) = (y as f64, x as f64);
                let d2 = (yf - cy).powi(2) + (xf - cx).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = ph0 + std::f64::consts::PI * (gy * yf + gx * xf);
                maps[c * n + y + h * x] = Complex64::from_polar(mag, phase);
            }
        }
    }
    for i in 0..n {
        let sos: f64 = (0..n_coils).map(|c| maps[c * n + i].norm_sqr()).sum::<f64>().sqrt();
        for c in 0..n_coils {
            maps[c * n + i] /= sos;
        }
    }
    CoilSensitivities::from_vec(n_coils, h, w, maps).expect("sizes agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::to_casorati;

    fn small() -> PhantomSpec {
        PhantomSpec {
            dims: Dims::new(32, 32, 4),
            ..PhantomSpec::std_a()
        }
    }

    #[test]
    fn static_phantom_has_identical_frames() {
        let spec = PhantomSpec {
            moving_ellipses: 0,
            ..small()
        };
        let v = make_phantom(&spec).unwrap();
        for t in 1..4 {
            assert_eq!(v.frame(t), v.frame(0));
        }
    }

    #[test]
    fn frames_change_and_stay_in_unit_interval() {
        let v = make_phantom(&PhantomSpec::std_a()).unwrap();
        for t in 0..v.dims().t - 1 {
            assert_ne!(v.frame(t), v.frame(t + 1), "frames {t},{} equal", t + 1);
        }
        assert!(v.as_slice().iter().all(|z| z.im == 0.0 && (0.0..=1.0).contains(&z.re)));
    }

    #[test]
    fn deterministic() {
        assert_eq!(make_phantom(&small()).unwrap(), make_phantom(&small()).unwrap());
        let other = PhantomSpec { seed: 8, ..small() };
        assert_ne!(make_phantom(&small()).unwrap(), make_phantom(&other).unwrap());
    }

    #[test]
    fn infeasible_geometry() {
        let spec = PhantomSpec {
            motion_amplitude: 8.0,
            ..small()
        };
        assert!(make_phantom(&spec).is_err());
        let spec = PhantomSpec {
            dims: Dims::new(30, 32, 4),
            ..small()
        };
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn casorati_not_rank_one_when_moving() {
        // Residual after projecting every frame on the first one.
        let v = make_phantom(&PhantomSpec::std_a()).unwrap();
        let m = to_casorati(&v);
        let c0 = m.column(0);
        let n0: f64 = c0.iter().map(|z| z.norm_sqr()).sum();
        let mut resid = 0.0;
        for t in 1..m.cols() {
            let ct = m.column(t);
            let proj: Complex64 = c0.iter().zip(ct).map(|(a, b)| a.conj() * b).sum::<Complex64>() / n0;
            resid += ct.iter().zip(c0).map(|(b, a)| (b - a * proj).norm_sqr()).sum::<f64>();
        }
        assert!(resid > 1e-3, "residual {resid}");
    }

    #[test]
    fn coils_sum_of_squares() {
        let one = make_coils(16, 16, 1, 3);
        assert!(one.as_slice().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));

        let c = make_coils(32, 32, 4, 3);
        let mut rng = Stream::new(1, "pixels");
        for _ in 0..20 {
            let h = (rng.uniform() * 32.0) as usize;
            let w = (rng.uniform() * 32.0) as usize;
            assert!((c.sum_of_squares(h, w) - 1.0).abs() < 1e-10);
        }
        assert_eq!(c, make_coils(32, 32, 4, 3));
    }
}
