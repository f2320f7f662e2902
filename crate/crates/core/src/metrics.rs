//! Convergence monitoring and image-quality metrics.

use crate::eadmm::{Problem, SolverConfig, SolverState};
use crate::error::{Error, Result};
use crate::prox::nuclear_norm;
use crate::volume::{dist_sq, norm_sq, CineVolume};

/// Constants of the sufficient-descent analysis.
///
/// `tau_v`, `tau_u` are the strong-convexity moduli of the auxiliary
/// subproblems (`rho_L`, `rho_S`); `delta_v`, `delta_u` default to the
/// midpoints of their admissible intervals (`delta_v` is clamped at zero when
/// its interval is empty).
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryParams {
    pub lf: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub tau_v: f64,
    pub tau_u: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta_v: f64,
    pub delta_u: f64,
}

impl TheoryParams {
    pub fn new(lf: f64, rho_l: f64, rho_s: f64, alpha: f64, beta: f64) -> Self {
        let mut t = Self {
            lf,
            eta1: 1.0,
            eta2: 1.0,
            tau_v: rho_l,
            tau_u: rho_s,
            alpha,
            beta,
            delta_v: 0.0,
            delta_u: 0.0,
        };
        t.reset_deltas();
        t
    }

    /// Puts `delta_v`, `delta_u` at the midpoints of their intervals.
    pub fn reset_deltas(&mut self) {
        self.delta_v = (0.5 * (self.tau_v - 2.0 * self.c1())).max(0.0);
        self.delta_u = 0.5 * (2.0 * self.c3() + self.tau_u - 2.0 * self.c2());
    }

    pub fn c1(&self) -> f64 {
        let (a, b, l) = (self.alpha, self.beta, self.lf);
        2.0 * a * a * l + 0.5 * a * l * self.eta1 + 0.5 * b * l * self.eta2
    }

    pub fn c2(&self) -> f64 {
        self.alpha * self.lf / (2.0 * self.eta1)
    }

    pub fn c3(&self) -> f64 {
        let (b, l) = (self.beta, self.lf);
        2.0 * b * b * l + b * l / (2.0 * self.eta2)
    }

    /// `0 < delta_v < tau_v - 2 c1`.
    pub fn admissible_v(&self) -> bool {
        self.delta_v > 0.0 && self.delta_v < self.tau_v - 2.0 * self.c1()
    }

    /// `2 c3 < delta_u < tau_u - 2 c2`.
    pub fn admissible_u(&self) -> bool {
        2.0 * self.c3() < self.delta_u && self.delta_u < self.tau_u - 2.0 * self.c2()
    }

    pub fn admissible(&self) -> bool {
        self.admissible_v() && self.admissible_u()
    }
}

/// Monitor record after iteration `k` (row 0 is the initial state).
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorRow {
    pub k: usize,
    pub lagrangian: f64,
    pub lyapunov: f64,
    pub d_v: f64,
    pub d_u: f64,
    pub res_l: f64,
    pub res_s: f64,
    pub loss_l: f64,
    pub loss_s: f64,
    /// Per-generator descent tolerance of the step producing this row.
    pub eps_k: f64,
    /// Total tolerance of that step summed over the generator fits.
    pub gamma: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub const CSV_HEADER: [&str; 12] = [
    "k",
    "lagrangian",
    "lyapunov",
    "dV",
    "dU",
    "res_L",
    "res_S",
    "loss_L",
    "loss_S",
    "eps_k",
    "psnr",
    "ssim",
];

impl MonitorRow {
    /// Fields in [`CSV_HEADER`] order.
    pub fn csv_fields(&self) -> Vec<String> {
        use crate::render::fmt_f64;
        vec![
            self.k.to_string(),
            fmt_f64(self.lagrangian),
            fmt_f64(self.lyapunov),
            fmt_f64(self.d_v),
            fmt_f64(self.d_u),
            fmt_f64(self.res_l),
            fmt_f64(self.res_s),
            fmt_f64(self.loss_l),
            fmt_f64(self.loss_s),
            fmt_f64(self.eps_k),
            fmt_f64(self.psnr),
            fmt_f64(self.ssim),
        ]
    }
}

pub fn encode_trace_csv(rows: &[MonitorRow]) -> Result<Vec<u8>> {
    let body: Vec<Vec<String>> = rows.iter().map(MonitorRow::csv_fields).collect();
    crate::render::encode_csv(&CSV_HEADER, &body)
}

/// Augmented Lagrangian at the current iterate.
pub fn augmented_lagrangian(state: &SolverState, prob: &Problem, cfg: &SolverConfig) -> f64 {
    let mut x = state.v.clone();
    for (a, b) in x.as_mut_slice().iter_mut().zip(state.u.as_slice()) {
        *a += b;
    }
    let data = prob.data_term(x.as_slice());
    let penalty = |aux: &[_], out: &[_], dual: &[_], rho: f64| {
        let mut s = 0.0;
        for ((a, o), d) in aux.iter().zip(out).zip(dual) {
            let r: num_complex::Complex64 = a - o + d;
            s += r.norm_sqr();
        }
        0.5 * rho * (s - norm_sq(dual))
    };
    data + cfg.lambda_l * nuclear_norm(&state.v)
        + cfg.lambda_s * prob.transform.l1(&state.u)
        + penalty(state.v.as_slice(), state.l_out.as_slice(), state.d_l.as_slice(), cfg.rho_l)
        + penalty(state.u.as_slice(), state.s_out.as_slice(), state.d_s.as_slice(), cfg.rho_s)
}

/// `lagrangian + delta_v/2 dV^2 + delta_u/2 dU^2`.
pub fn lyapunov(lagrangian: f64, d_v: f64, d_u: f64, delta_v: f64, delta_u: f64) -> f64 {
    lagrangian + 0.5 * delta_v * d_v * d_v + 0.5 * delta_u * d_u * d_u
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentReport {
    /// `max(0, Psi^{k+1} - Psi^k - gamma_k)` per step.
    pub violations: Vec<f64>,
    pub count: usize,
    pub total: f64,
    pub gamma_sum: f64,
    /// Largest `xi` such that `Psi^{k+1} - Psi^k <= -xi (dV^2 + dU^2) + gamma_k`
    /// holds on every step with movement; zero when none does.
    pub xi: f64,
}

/// Checks the slack-adjusted Lyapunov descent inequality along a trace. The
/// slack of step `k -> k+1` is `trace[k+1].gamma`.
pub fn check_descent(trace: &[MonitorRow]) -> Result<DescentReport> {
    if trace.len() < 2 {
        return Err(Error::InvalidParameter("descent check needs at least two rows".into()));
    }
    let mut violations = Vec::with_capacity(trace.len() - 1);
    let mut gamma_sum = 0.0;
    let mut xi = f64::INFINITY;
    for w in trace.windows(2) {
        let inc = w[1].lyapunov - w[0].lyapunov;
        let g = w[1].gamma;
        gamma_sum += g;
        violations.push((inc - g).max(0.0));
        let mv = w[1].d_v * w[1].d_v + w[1].d_u * w[1].d_u;
        if mv > 0.0 {
            xi = xi.min((g - inc) / mv);
        }
    }
    let xi = if xi.is_finite() { xi.max(0.0) } else { 0.0 };
    Ok(DescentReport {
        count: violations.iter().filter(|&&v| v > 0.0).count(),
        total: violations.iter().sum(),
        violations,
        gamma_sum,
        xi,
    })
}

/// Sufficient extrapolation bounds `(alpha_max, beta_max)`.
///
/// `alpha_max = eta1 (tau_u - delta_u) / L_f`; `beta_max` is the positive root
/// of `2 L_f b^2 + (L_f / (2 eta2)) b - delta_u / 2 = 0`.
pub fn extrapolation_bounds(theory: &TheoryParams, delta_u: f64, tau_u: f64) -> Result<(f64, f64)> {
    let TheoryParams { lf, eta1, eta2, .. } = *theory;
    if !(lf > 0.0 && eta1 > 0.0 && eta2 > 0.0) {
        return Err(Error::InvalidParameter(format!("need L_f, eta1, eta2 > 0 (got {lf}, {eta1}, {eta2})")));
    }
    if !(delta_u > 0.0 && delta_u < tau_u) {
        return Err(Error::InvalidParameter(format!("need 0 < delta_U < tau_U (got {delta_u}, {tau_u})")));
    }
    let alpha_max = eta1 * (tau_u - delta_u) / lf;
    let a = 2.0 * lf;
    let b = lf / (2.0 * eta2);
    let c = 0.5 * delta_u;
    let disc = b * b + 4.0 * a * c;
    assert!(disc > 0.0, "discriminant is positive for delta_U > 0");
    // (-b + sqrt(disc)) / 2a without cancellation
    let beta_max = 2.0 * c / (b + disc.sqrt());
    Ok((alpha_max, beta_max))
}

fn check_pair(x: &CineVolume, r: &CineVolume) -> Result<f64> {
    if x.dims() != r.dims() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", x.dims(), r.dims())));
    }
    let peak = r.max_abs();
    if peak == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(peak)
}

/// `20 log10(max|ref| / rmse)` over magnitudes; `+inf` for an exact match.
pub fn psnr(x: &CineVolume, reference: &CineVolume) -> Result<f64> {
    let peak = check_pair(x, reference)?;
    let mse = x
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a.norm() - b.norm()).powi(2))
        .sum::<f64>()
        / x.as_slice().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Box sums over every `win x win` window of an `h x w` image (column-major),
/// via a summed-area table. Output is `(h - win + 1) x (w - win + 1)`.
fn box_sums(img: &[f64], h: usize, w: usize, win: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for c in 0..w {
        let mut col = 0.0;
        for r in 0..h {
            col += img[r + h * c];
            sat[(r + 1) + (h + 1) * (c + 1)] = sat[(r + 1) + (h + 1) * c] + col;
        }
    }
    let (oh, ow) = (h + 1 - win, w + 1 - win);
    let at = |r: usize, c: usize| sat[r + (h + 1) * c];
    let mut out = Vec::with_capacity(oh * ow);
    for c in 0..ow {
        for r in 0..oh {
            out.push(at(r + win, c + win) - at(r, c + win) - at(r + win, c) + at(r, c));
        }
    }
    out
}

/// Mean structural similarity of magnitudes: uniform `7 x 7` windows fully
/// inside each frame, dynamic range `max|ref|`, averaged over windows and
/// then over frames. Frames smaller than the window use one window of the
/// whole frame.
pub fn ssim(x: &CineVolume, reference: &CineVolume) -> Result<f64> {
    let range = check_pair(x, reference)?;
    let d = x.dims();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let win_h = SSIM_WINDOW.min(d.h);
    let win_w = SSIM_WINDOW.min(d.w);
    let win = win_h.min(win_w);
    let n = (win * win) as f64;
    let mut total = 0.0;
    for t in 0..d.t {
        let a: Vec<f64> = x.frame(t).iter().map(|z| z.norm()).collect();
        let b: Vec<f64> = reference.frame(t).iter().map(|z| z.norm()).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
        let [sa, sb, saa, sbb, sab] = [&a, &b, &aa, &bb, &ab].map(|img| box_sums(img, d.h, d.w, win));
        let mut acc = 0.0;
        for i in 0..sa.len() {
            let (ma, mb) = (sa[i] / n, sb[i] / n);
            // sample (n - 1) normalization
            let va = (saa[i] - n * ma * ma) / (n - 1.0);
            let vb = (sbb[i] - n * mb * mb) / (n - 1.0);
            let cov = (sab[i] - n * ma * mb) / (n - 1.0);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / sa.len() as f64;
    }
    Ok(total / d.t as f64)
}

/// `||a - b||_F` for volumes.
pub fn distance(a: &CineVolume, b: &CineVolume) -> f64 {
    dist_sq(a.as_slice(), b.as_slice()).sqrt()
}
