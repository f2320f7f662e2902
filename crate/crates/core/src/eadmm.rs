//! Extrapolated ADMM for the dual-generator low-rank plus sparse model, and the
//! classical low-rank plus sparse baseline.
//!
//! The constrained problem couples auxiliary variables `V`, `U` to the
//! generator outputs `L(theta_L)`, `S(theta_S)` through scaled duals `D_L`,
//! `D_S`. One outer iteration runs, in order: extrapolate `U`, update `V`,
//! extrapolate `V`, update `U`, fit `theta_L`, fit `theta_S`, update duals.

use std::time::Instant;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{CoilSensitivities, ForwardModel, KSpaceData};
use crate::generator::{self, FitOutcome, FitRule, GeneratorArch, GeneratorParams, Target};
use crate::metrics::{self, MonitorRow, TheoryParams};
use crate::prox::{nuclear_norm, prox_l1_in_transform, svt, SparsifyingTransform, TransformKind};
use crate::volume::{
    dist_sq, frame_mean, from_casorati, norm_sq, replicate_frame, to_casorati, CasoratiMatrix, CineVolume, Dims,
};

/// Power iterations used to estimate `L_f = ||A^H A||`.
pub const POWER_ITERS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda_l: f64,
    pub lambda_s: f64,
    pub rho_l: f64,
    pub rho_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub n_inner_prox: usize,
    pub n_steps: usize,
    pub lr: f64,
    pub sigma_z: f64,
    /// `eps_0 = eps0_scale * ||Y||^2`.
    pub eps0_scale: f64,
    pub transform: TransformKind,
    pub latent_channels: usize,
    pub hidden: Vec<usize>,
    /// Number of 2x spatial upsampling stages in each generator.
    pub upsample: usize,
    /// Which Adam iterate each generator fit returns.
    pub fit_rule: FitRule,
    /// Factor applied to a generator's learning rate after a reverted fit;
    /// an accepted fit divides it back out, up to the base `lr`. `1` keeps
    /// `lr` fixed.
    pub lr_backoff: f64,
    /// Keep Adam moments across outer iterations.
    pub warm_start: bool,
    /// One generator with two complex outputs in place of two generators.
    pub single_network: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_l: 0.2,
            lambda_s: 2e-4,
            rho_l: 0.75,
            rho_s: 0.75,
            alpha: 0.5,
            beta: 0.5,
            iterations: 200,
            n_inner_prox: 1,
            n_steps: 20,
            lr: 3e-3,
            sigma_z: 0.1,
            eps0_scale: 1e-3,
            transform: TransformKind::Identity,
            latent_channels: 8,
            hidden: vec![16, 16, 8, 8],
            upsample: 3,
            fit_rule: FitRule::Best,
            lr_backoff: 0.5,
            warm_start: true,
            single_network: false,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda_l >= 0.0 && self.lambda_s >= 0.0) || !self.lambda_l.is_finite() || !self.lambda_s.is_finite() {
            return bad(format!("lambda_L, lambda_S must be >= 0 (got {}, {})", self.lambda_l, self.lambda_s));
        }
        if !(self.rho_l > 0.0 && self.rho_s > 0.0) || !self.rho_l.is_finite() || !self.rho_s.is_finite() {
            return bad(format!("rho_L, rho_S must be > 0 (got {}, {})", self.rho_l, self.rho_s));
        }
        if !((0.0..1.0).contains(&self.alpha) && (0.0..1.0).contains(&self.beta)) {
            return bad(format!("alpha, beta must lie in [0, 1) (got {}, {})", self.alpha, self.beta));
        }
        if self.iterations == 0 || self.n_inner_prox == 0 || self.n_steps == 0 {
            return bad("iterations, n_inner_prox and n_steps must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.sigma_z > 0.0 && self.sigma_z.is_finite()) {
            return bad(format!("lr and sigma_z must be > 0 (got {}, {})", self.lr, self.sigma_z));
        }
        if !(self.lr_backoff > 0.0 && self.lr_backoff <= 1.0) {
            return bad(format!("lr_backoff must lie in (0, 1] (got {})", self.lr_backoff));
        }
        if !(self.eps0_scale >= 0.0 && self.eps0_scale.is_finite()) {
            return bad(format!("eps0_scale must be >= 0 (got {})", self.eps0_scale));
        }
        self.arch().validate()
    }

    pub fn arch(&self) -> GeneratorArch {
        let outputs = if self.single_network { 2 } else { 1 };
        GeneratorArch::new(self.latent_channels, self.hidden.clone(), outputs).with_upsample(self.upsample)
    }

    /// Descent tolerance granted to each generator fit at iteration `k`.
    pub fn eps_k(&self, eps0: f64, k: usize) -> f64 {
        eps0 / ((k + 1) as f64).powi(2)
    }
}

/// Measurements and the fixed operators derived from them.
pub struct Problem {
    pub fm: ForwardModel,
    pub y: Vec<Complex64>,
    pub y_norm_sq: f64,
    /// Lipschitz constant of the data-term gradient, `||A^H A||`.
    pub lf: f64,
    pub transform: SparsifyingTransform,
}

impl Problem {
    pub fn new(y: &KSpaceData, coils: &CoilSensitivities, transform: TransformKind) -> Result<Self> {
        let kd = y.dims();
        if kd.coils != coils.n_coils() || kd.h != coils.height() || kd.w != coils.width() {
            return Err(Error::DimensionMismatch(format!(
                "k-space {}x{}x{} coils vs maps {}x{}x{}",
                kd.coils,
                kd.h,
                kd.w,
                coils.n_coils(),
                coils.height(),
                coils.width()
            )));
        }
        let dims = kd.image_dims();
        let fm = ForwardModel::new(dims, coils.clone(), y.mask().clone())?;
        let lf = fm.estimate_op_norm_sq(POWER_ITERS);
        Ok(Self {
            fm,
            y: y.as_slice().to_vec(),
            y_norm_sq: y.norm_sq(),
            lf,
            transform: SparsifyingTransform::new(transform, dims.t),
        })
    }

    pub fn dims(&self) -> Dims {
        self.fm.dims()
    }

    /// `A^H (A x - Y)`.
    pub fn data_grad(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut r = self.fm.forward_raw(x);
        for (a, b) in r.iter_mut().zip(&self.y) {
            *a -= b;
        }
        self.fm.adjoint_raw(&r)
    }

    /// `1/2 ||Y - A x||^2`.
    pub fn data_term(&self, x: &[Complex64]) -> f64 {
        0.5 * dist_sq(&self.fm.forward_raw(x), &self.y)
    }

    pub fn adjoint_recon(&self) -> CineVolume {
        CineVolume::from_vec(self.dims(), self.fm.adjoint_raw(&self.y)).expect("adjoint has image dims")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Generators {
    Dual { l: GeneratorParams, s: GeneratorParams },
    Shared(GeneratorParams),
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub v: CasoratiMatrix,
    pub u: CasoratiMatrix,
    pub v_prev: CasoratiMatrix,
    pub u_prev: CasoratiMatrix,
    pub d_l: CasoratiMatrix,
    pub d_s: CasoratiMatrix,
    pub gens: Generators,
    /// `L(theta_L^k)`.
    pub l_out: CasoratiMatrix,
    /// `S(theta_S^k)`.
    pub s_out: CasoratiMatrix,
    pub k: usize,
    /// Multipliers on `lr` for the L and S generators (the shared network
    /// uses the first).
    pub lr_scale: [f64; 2],
}

impl SolverState {
    pub fn dims(&self) -> Dims {
        match &self.gens {
            Generators::Dual { l, .. } => l.dims,
            Generators::Shared(p) => p.dims,
        }
    }

    /// `L(theta_L) + S(theta_S)`.
    pub fn reconstruction(&self) -> CineVolume {
        let mut x = self.l_out.clone();
        for (a, b) in x.as_mut_slice().iter_mut().zip(self.s_out.as_slice()) {
            *a += b;
        }
        from_casorati(&x, self.dims()).expect("state shapes agree")
    }

    pub fn is_finite(&self) -> bool {
        [&self.v, &self.u, &self.d_l, &self.d_s, &self.l_out, &self.s_out]
            .iter()
            .all(|m| m.is_finite())
    }
}

fn gen_outputs(gens: &Generators) -> (CasoratiMatrix, CasoratiMatrix) {
    match gens {
        Generators::Dual { l, s } => (
            to_casorati(&generator::gen_forward(l)),
            to_casorati(&generator::gen_forward(s)),
        ),
        Generators::Shared(p) => {
            let mut outs = generator::gen_forward_all(p);
            let s = outs.pop().expect("two outputs");
            let l = outs.pop().expect("two outputs");
            (to_casorati(&l), to_casorati(&s))
        }
    }
}

pub fn init_state(prob: &Problem, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    let dims = prob.dims();
    let x0 = prob.adjoint_recon();
    let l0 = replicate_frame(&frame_mean(&x0), dims.t);
    let s0 = &x0 - &l0;
    let v = to_casorati(&l0);
    let u = to_casorati(&s0);
    let zero = CasoratiMatrix::zeros(v.rows(), v.cols());
    let arch = cfg.arch();
    let gens = if cfg.single_network {
        Generators::Shared(generator::init_generator(&arch, dims, cfg.sigma_z, cfg.seed, "LS")?)
    } else {
        Generators::Dual {
            l: generator::init_generator(&arch, dims, cfg.sigma_z, cfg.seed, "L")?,
            s: generator::init_generator(&arch, dims, cfg.sigma_z, cfg.seed, "S")?,
        }
    };
    let (l_out, s_out) = gen_outputs(&gens);
    Ok(SolverState {
        v_prev: v.clone(),
        u_prev: u.clone(),
        v,
        u,
        d_l: zero.clone(),
        d_s: zero,
        gens,
        l_out,
        s_out,
        k: 0,
        lr_scale: [1.0; 2],
    })
}

/// `cur + coef (cur - prev)`; exactly `cur` when `coef == 0`.
pub fn extrapolate(cur: &CasoratiMatrix, prev: &CasoratiMatrix, coef: f64) -> CasoratiMatrix {
    let mut out = cur.clone();
    if coef != 0.0 {
        for ((o, c), p) in out.as_mut_slice().iter_mut().zip(cur.as_slice()).zip(prev.as_slice()) {
            *o = c + (c - p) * coef;
        }
    }
    out
}

fn sub(a: &CasoratiMatrix, b: &CasoratiMatrix) -> CasoratiMatrix {
    let mut out = a.clone();
    for (o, x) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o -= x;
    }
    out
}

fn add(a: &CasoratiMatrix, b: &CasoratiMatrix) -> CasoratiMatrix {
    let mut out = a.clone();
    for (o, x) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o += x;
    }
    out
}

/// Result of an inexact subproblem solve.
#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub value: CasoratiMatrix,
    /// Objective at the starting point, then after each inner step.
    pub objective: Vec<f64>,
}

impl SubproblemSolution {
    pub fn is_monotone(&self) -> bool {
        self.objective
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
    }
}

#[derive(Clone, Copy)]
enum Penalty {
    Nuclear,
    L1,
}

/// `1/2 ||Y - A(x + other)||^2 + lambda R(x) + rho/2 ||x - anchor||^2`, minimized by
/// proximal-gradient steps with step `1 / (L_f + rho)` starting from whichever
/// of `start` and `anchor` has the lower objective.
#[allow(clippy::too_many_arguments)]
fn prox_grad_solve(
    prob: &Problem,
    other: &CasoratiMatrix,
    anchor: &CasoratiMatrix,
    start: &CasoratiMatrix,
    lambda: f64,
    rho: f64,
    penalty: Penalty,
    steps: usize,
) -> Result<SubproblemSolution> {
    let reg = |x: &CasoratiMatrix| match penalty {
        Penalty::Nuclear => nuclear_norm(x),
        Penalty::L1 => prob.transform.l1(x),
    };
    let objective = |x: &CasoratiMatrix| {
        let sum = add(x, other);
        prob.data_term(sum.as_slice()) + lambda * reg(x) + 0.5 * rho * dist_sq(x.as_slice(), anchor.as_slice())
    };
    let (fs, fa) = (objective(start), objective(anchor));
    let (mut x, f0) = if fa < fs { (anchor.clone(), fa) } else { (start.clone(), fs) };
    let mut trace = vec![f0];
    let step = 1.0 / (prob.lf + rho);
    for _ in 0..steps {
        let sum = add(&x, other);
        let g = prob.data_grad(sum.as_slice());
        let mut y = x.clone();
        for ((yv, gv), (xv, av)) in y
            .as_mut_slice()
            .iter_mut()
            .zip(&g)
            .zip(x.as_slice().iter().zip(anchor.as_slice()))
        {
            *yv = xv - (gv + (xv - av) * rho) * step;
        }
        x = match penalty {
            Penalty::Nuclear => svt(&y, lambda * step)?,
            Penalty::L1 => prox_l1_in_transform(&y, lambda * step, &prob.transform),
        };
        if !x.is_finite() {
            return Err(Error::NonFinite("subproblem iterate".into()));
        }
        trace.push(objective(&x));
    }
    Ok(SubproblemSolution { value: x, objective: trace })
}

/// Low-rank auxiliary update given the extrapolated sparse variable `u_bar`.
pub fn v_update(state: &SolverState, u_bar: &CasoratiMatrix, cfg: &SolverConfig, prob: &Problem) -> Result<SubproblemSolution> {
    let anchor = sub(&state.l_out, &state.d_l);
    prox_grad_solve(prob, u_bar, &anchor, &state.v, cfg.lambda_l, cfg.rho_l, Penalty::Nuclear, cfg.n_inner_prox)
}

/// Sparse auxiliary update given the extrapolated low-rank variable `v_bar`.
pub fn u_update(state: &SolverState, v_bar: &CasoratiMatrix, cfg: &SolverConfig, prob: &Problem) -> Result<SubproblemSolution> {
    let anchor = sub(&state.s_out, &state.d_s);
    prox_grad_solve(prob, v_bar, &anchor, &state.u, cfg.lambda_s, cfg.rho_s, Penalty::L1, cfg.n_inner_prox)
}

/// Outcome of the generator subproblems of one iteration.
#[derive(Clone, Debug)]
pub struct GeneratorStep {
    pub loss_l: f64,
    pub loss_s: f64,
    pub initial_l: f64,
    pub initial_s: f64,
    pub accepted_l: bool,
    pub accepted_s: bool,
    /// Sum of the descent tolerances granted to the fits.
    pub gamma: f64,
}

/// Fits the generators to `V + D_L` and `U + D_S` and refreshes the cached
/// outputs.
pub fn generator_update(state: &mut SolverState, cfg: &SolverConfig, eps: f64) -> Result<GeneratorStep> {
    let dims = state.dims();
    let tl = from_casorati(&add(&state.v, &state.d_l), dims)?;
    let ts = from_casorati(&add(&state.u, &state.d_s), dims)?;
    let fit = |p: &mut GeneratorParams, targets: &[Target<'_>], scale: &mut f64| -> Result<FitOutcome> {
        if !cfg.warm_start {
            p.adam.reset();
        }
        let out = generator::fit_generator_multi(p, targets, cfg.n_steps, cfg.lr * *scale, eps, cfg.fit_rule)?;
        *scale = if out.accepted {
            (*scale / cfg.lr_backoff).min(1.0)
        } else {
            *scale * cfg.lr_backoff
        };
        Ok(out)
    };
    let [scale_l, scale_s] = &mut state.lr_scale;
    let step = match &mut state.gens {
        Generators::Dual { l, s } => {
            let fl = fit(l, &[Target { volume: &tl, rho: cfg.rho_l }], scale_l)?;
            let fs = fit(s, &[Target { volume: &ts, rho: cfg.rho_s }], scale_s)?;
            state.l_out = to_casorati(&fl.outputs[0]);
            state.s_out = to_casorati(&fs.outputs[0]);
            GeneratorStep {
                loss_l: fl.loss,
                loss_s: fs.loss,
                initial_l: fl.initial_loss,
                initial_s: fs.initial_loss,
                accepted_l: fl.accepted,
                accepted_s: fs.accepted,
                gamma: 2.0 * eps,
            }
        }
        Generators::Shared(p) => {
            let f = fit(
                p,
                &[
                    Target { volume: &tl, rho: cfg.rho_l },
                    Target { volume: &ts, rho: cfg.rho_s },
                ],
                scale_l,
            )?;
            state.l_out = to_casorati(&f.outputs[0]);
            state.s_out = to_casorati(&f.outputs[1]);
            // the joint loss is reported in the L column
            GeneratorStep {
                loss_l: f.loss,
                loss_s: 0.0,
                initial_l: f.initial_loss,
                initial_s: 0.0,
                accepted_l: f.accepted,
                accepted_s: f.accepted,
                gamma: eps,
            }
        }
    };
    Ok(step)
}

/// Primal residual norms `(||V - L||, ||U - S||)` after the dual step.
pub fn dual_update(state: &mut SolverState) -> (f64, f64) {
    let rl = sub(&state.v, &state.l_out);
    let rs = sub(&state.u, &state.s_out);
    for (d, r) in state.d_l.as_mut_slice().iter_mut().zip(rl.as_slice()) {
        *d += r;
    }
    for (d, r) in state.d_s.as_mut_slice().iter_mut().zip(rs.as_slice()) {
        *d += r;
    }
    (norm_sq(rl.as_slice()).sqrt(), norm_sq(rs.as_slice()).sqrt())
}

/// Per-iteration record beyond the monitor row.
#[derive(Clone, Debug)]
pub struct IterationInfo {
    pub generators: GeneratorStep,
    pub v_objective: Vec<f64>,
    pub u_objective: Vec<f64>,
}

/// One full outer iteration; returns the residual norms and generator report.
pub fn step(state: &mut SolverState, cfg: &SolverConfig, prob: &Problem, eps0: f64) -> Result<(IterationInfo, (f64, f64))> {
    let u_bar = extrapolate(&state.u, &state.u_prev, cfg.beta);
    let vs = v_update(state, &u_bar, cfg, prob)?;
    let v_new = vs.value;
    let v_bar = extrapolate(&v_new, &state.v, cfg.alpha);
    let us = u_update(state, &v_bar, cfg, prob)?;
    state.v_prev = std::mem::replace(&mut state.v, v_new);
    state.u_prev = std::mem::replace(&mut state.u, us.value);
    let g = generator_update(state, cfg, cfg.eps_k(eps0, state.k))?;
    let res = dual_update(state);
    state.k += 1;
    if !state.is_finite() {
        return Err(Error::NonFinite(format!("solver state after iteration {}", state.k)));
    }
    Ok((
        IterationInfo {
            generators: g,
            v_objective: vs.objective,
            u_objective: us.objective,
        },
        res,
    ))
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub rows: Vec<MonitorRow>,
    pub iterations: Vec<IterationInfo>,
    pub x_hat: CineVolume,
    pub l: CineVolume,
    pub s: CineVolume,
    pub lf: f64,
    pub eps0: f64,
    pub theory: TheoryParams,
    /// Final generator parameters.
    pub generators: Generators,
    pub seconds: f64,
}

impl RunReport {
    pub fn final_psnr(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.psnr)
    }

    /// First iteration whose PSNR reaches `target`.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.psnr >= target).map(|r| r.k)
    }

    /// Number of iterations where some generator fit was reverted.
    pub fn rejected_fits(&self) -> usize {
        self.iterations
            .iter()
            .filter(|i| !(i.generators.accepted_l && i.generators.accepted_s))
            .count()
    }
}

fn row_for(
    state: &SolverState,
    prob: &Problem,
    cfg: &SolverConfig,
    theory: &TheoryParams,
    reference: Option<&CineVolume>,
    extra: Option<(&GeneratorStep, (f64, f64), f64)>,
) -> Result<MonitorRow> {
    let lagrangian = metrics::augmented_lagrangian(state, prob, cfg);
    let d_v = dist_sq(state.v.as_slice(), state.v_prev.as_slice()).sqrt();
    let d_u = dist_sq(state.u.as_slice(), state.u_prev.as_slice()).sqrt();
    let (psnr, ssim) = match reference {
        Some(r) => {
            let x = state.reconstruction();
            (metrics::psnr(&x, r)?, metrics::ssim(&x, r)?)
        }
        None => (f64::NAN, f64::NAN),
    };
    let res_l = dist_sq(state.v.as_slice(), state.l_out.as_slice()).sqrt();
    let res_s = dist_sq(state.u.as_slice(), state.s_out.as_slice()).sqrt();
    let (loss_l, loss_s, eps_k, gamma) = match extra {
        Some((g, _, eps)) => (g.loss_l, g.loss_s, eps, g.gamma),
        None => (f64::NAN, f64::NAN, 0.0, 0.0),
    };
    Ok(MonitorRow {
        k: state.k,
        lagrangian,
        lyapunov: metrics::lyapunov(lagrangian, d_v, d_u, theory.delta_v, theory.delta_u),
        d_v,
        d_u,
        res_l,
        res_s,
        loss_l,
        loss_s,
        eps_k,
        gamma,
        psnr,
        ssim,
    })
}

/// Runs the full solver. `reference`, when given, feeds PSNR/SSIM columns;
/// `on_row` sees every monitor row as it is produced.
pub fn run(
    y: &KSpaceData,
    coils: &CoilSensitivities,
    cfg: &SolverConfig,
    reference: Option<&CineVolume>,
    on_row: &mut dyn FnMut(&MonitorRow),
) -> Result<RunReport> {
    let started = Instant::now();
    cfg.validate()?;
    let prob = Problem::new(y, coils, cfg.transform)?;
    if let Some(r) = reference {
        if r.dims() != prob.dims() {
            return Err(Error::DimensionMismatch(format!("reference {} vs data {}", r.dims(), prob.dims())));
        }
    }
    let eps0 = cfg.eps0_scale * prob.y_norm_sq;
    let theory = TheoryParams::new(prob.lf, cfg.rho_l, cfg.rho_s, cfg.alpha, cfg.beta);
    let mut state = init_state(&prob, cfg)?;
    let mut rows = Vec::with_capacity(cfg.iterations + 1);
    let first = row_for(&state, &prob, cfg, &theory, reference, None)?;
    on_row(&first);
    rows.push(first);
    let mut iterations = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let eps = cfg.eps_k(eps0, state.k);
        let (info, res) = step(&mut state, cfg, &prob, eps0)?;
        let row = row_for(&state, &prob, cfg, &theory, reference, Some((&info.generators, res, eps)))?;
        on_row(&row);
        rows.push(row);
        iterations.push(info);
    }
    let dims = prob.dims();
    Ok(RunReport {
        rows,
        iterations,
        x_hat: state.reconstruction(),
        l: from_casorati(&state.l_out, dims)?,
        s: from_casorati(&state.s_out, dims)?,
        lf: prob.lf,
        eps0,
        theory,
        generators: state.gens,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Classical low-rank plus sparse reconstruction by proximal gradient on
/// `1/2 ||Y - A(L + S)||^2 + lambda_L ||L||_* + lambda_S ||W S||_1`.
///
/// The step `1 / (2 L_f)` is the inverse Lipschitz constant of the joint
/// gradient, so the objective trace is non-increasing.
pub fn classical_ls(
    y: &KSpaceData,
    coils: &CoilSensitivities,
    lambda_l: f64,
    lambda_s: f64,
    transform: TransformKind,
    iters: usize,
) -> Result<ClassicalResult> {
    if iters == 0 {
        return Err(Error::InvalidParameter("classical_ls needs iters >= 1".into()));
    }
    if !(lambda_l >= 0.0 && lambda_s >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative lambda ({lambda_l}, {lambda_s})")));
    }
    let prob = Problem::new(y, coils, transform)?;
    let dims = prob.dims();
    let x0 = prob.adjoint_recon();
    let mut l = to_casorati(&replicate_frame(&frame_mean(&x0), dims.t));
    let mut s = sub(&to_casorati(&x0), &l);
    let objective = |l: &CasoratiMatrix, s: &CasoratiMatrix| {
        prob.data_term(add(l, s).as_slice()) + lambda_l * nuclear_norm(l) + lambda_s * prob.transform.l1(s)
    };
    let mut trace = vec![objective(&l, &s)];
    let step = if prob.lf > 0.0 { 0.5 / prob.lf } else { 0.5 };
    for _ in 0..iters {
        let g = prob.data_grad(add(&l, &s).as_slice());
        let mut lg = l.clone();
        let mut sg = s.clone();
        for ((a, b), gv) in lg.as_mut_slice().iter_mut().zip(sg.as_mut_slice()).zip(&g) {
            *a -= gv * step;
            *b -= gv * step;
        }
        l = svt(&lg, lambda_l * step)?;
        s = prox_l1_in_transform(&sg, lambda_s * step, &prob.transform);
        trace.push(objective(&l, &s));
    }
    Ok(ClassicalResult {
        l: from_casorati(&l, dims)?,
        s: from_casorati(&s, dims)?,
        objective: trace,
    })
}

#[derive(Clone, Debug)]
pub struct ClassicalResult {
    pub l: CineVolume,
    pub s: CineVolume,
    /// Objective at the start and after every iteration.
    pub objective: Vec<f64>,
}

impl ClassicalResult {
    pub fn reconstruction(&self) -> CineVolume {
        &self.l + &self.s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_mask, SamplingMask};
    use crate::phantom::{make_coils, make_phantom, PhantomSpec};
    use crate::rng::Stream;

    fn random_volume(dims: Dims, seed: u64) -> CineVolume {
        let mut s = Stream::new(seed, "eadmm");
        CineVolume::from_fn(dims, |_, _, _| s.complex_normal(1.0))
    }

    fn small_cfg() -> SolverConfig {
        SolverConfig {
            latent_channels: 2,
            hidden: vec![4],
            upsample: 0,
            iterations: 3,
            n_steps: 3,
            ..SolverConfig::default()
        }
    }

    fn problem(dims: Dims, coils: usize, mask: SamplingMask, seed: u64) -> (KSpaceData, CoilSensitivities, Problem) {
        let c = if coils == 1 {
            CoilSensitivities::unit(dims.h, dims.w)
        } else {
            make_coils(dims.h, dims.w, coils, seed)
        };
        let fm = ForwardModel::new(dims, c.clone(), mask).unwrap();
        let y = fm.forward(&random_volume(dims, seed)).unwrap();
        let p = Problem::new(&y, &c, TransformKind::Identity).unwrap();
        (y, c, p)
    }

    #[test]
    fn zero_measurements_give_zero_state() {
        let dims = Dims::new(8, 8, 3);
        let (y, c, _) = problem(dims, 2, make_mask(8, 2.0, 2, 1).unwrap(), 1);
        let zero = KSpaceData::new(y.dims(), vec![Complex64::new(0.0, 0.0); y.dims().len()], y.mask().clone()).unwrap();
        let p = Problem::new(&zero, &c, TransformKind::Identity).unwrap();
        let st = init_state(&p, &small_cfg()).unwrap();
        for m in [&st.v, &st.u, &st.d_l, &st.d_s, &st.v_prev, &st.u_prev] {
            assert!(m.as_slice().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        }
        assert!(st.l_out.frobenius() > 0.0);
    }

    #[test]
    fn static_scene_has_no_sparse_init() {
        let dims = Dims::new(8, 8, 4);
        let frame = random_volume(Dims::new(8, 8, 1), 2);
        let x = replicate_frame(&frame, 4);
        let c = CoilSensitivities::unit(8, 8);
        let fm = ForwardModel::new(dims, c.clone(), SamplingMask::full(8)).unwrap();
        let y = fm.forward(&x).unwrap();
        let p = Problem::new(&y, &c, TransformKind::Identity).unwrap();
        let st = init_state(&p, &small_cfg()).unwrap();
        assert!(st.u.as_slice().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        let x0 = p.adjoint_recon();
        assert_eq!(st.v.as_slice(), x0.as_slice());
    }

    #[test]
    fn init_splits_adjoint() {
        let dims = Dims::new(8, 8, 3);
        let (y, c, p) = problem(dims, 3, make_mask(8, 2.0, 2, 3).unwrap(), 3);
        let st = init_state(&p, &small_cfg()).unwrap();
        let x0 = crate::forward::adjoint(&y, &c).unwrap();
        let sum = add(&st.v, &st.u);
        assert!(dist_sq(sum.as_slice(), x0.as_slice()).sqrt() <= 1e-12 * x0.norm());
        assert_eq!(st.v, st.v_prev);
        assert_eq!(st.u, st.u_prev);
    }

    #[test]
    fn v_update_large_rho_tracks_anchor() {
        let dims = Dims::new(8, 8, 3);
        let (_, _, p) = problem(dims, 1, SamplingMask::full(8), 4);
        let cfg = SolverConfig {
            lambda_l: 0.0,
            rho_l: 1e6,
            ..small_cfg()
        };
        let mut st = init_state(&p, &cfg).unwrap();
        st.d_l = to_casorati(&random_volume(dims, 5));
        let anchor = sub(&st.l_out, &st.d_l);
        let out = v_update(&st, &st.u.clone(), &cfg, &p).unwrap().value;
        assert!(dist_sq(out.as_slice(), anchor.as_slice()).sqrt() <= 1e-3 * anchor.frobenius());
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let dims = Dims::new(8, 8, 3);
        let (_, _, p) = problem(dims, 2, make_mask(8, 2.0, 2, 6).unwrap(), 6);
        let cfg = SolverConfig {
            lambda_l: 1e8,
            lambda_s: 1e8,
            ..small_cfg()
        };
        let st = init_state(&p, &cfg).unwrap();
        let v = v_update(&st, &st.u, &cfg, &p).unwrap().value;
        assert!(v.frobenius() <= 1e-6);
        let u = u_update(&st, &v, &cfg, &p).unwrap().value;
        assert!(u.frobenius() <= 1e-6);
    }

    #[test]
    fn u_update_large_rho_tracks_anchor() {
        let dims = Dims::new(8, 8, 3);
        let (_, _, p) = problem(dims, 1, SamplingMask::full(8), 7);
        let cfg = SolverConfig {
            lambda_s: 0.0,
            rho_s: 1e6,
            ..small_cfg()
        };
        let mut st = init_state(&p, &cfg).unwrap();
        st.d_s = to_casorati(&random_volume(dims, 8));
        let anchor = sub(&st.s_out, &st.d_s);
        let out = u_update(&st, &st.v.clone(), &cfg, &p).unwrap().value;
        assert!(dist_sq(out.as_slice(), anchor.as_slice()).sqrt() <= 1e-3 * anchor.frobenius());
    }

    #[test]
    fn inner_objectives_are_monotone() {
        let dims = Dims::new(8, 8, 3);
        let (_, _, p) = problem(dims, 1, make_mask(8, 2.0, 2, 9).unwrap(), 9);
        let cfg = SolverConfig {
            n_inner_prox: 5,
            lambda_l: 0.5,
            lambda_s: 0.05,
            ..small_cfg()
        };
        let mut st = init_state(&p, &cfg).unwrap();
        st.d_l = to_casorati(&random_volume(dims, 10));
        st.d_s = to_casorati(&random_volume(dims, 11));
        let vs = v_update(&st, &st.u, &cfg, &p).unwrap();
        assert_eq!(vs.objective.len(), 6);
        for w in vs.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
        // objective at the anchor, evaluated directly
        let anchor = sub(&st.l_out, &st.d_l);
        let direct = p.data_term(add(&anchor, &st.u).as_slice()) + cfg.lambda_l * nuclear_norm(&anchor);
        assert!(*vs.objective.last().unwrap() <= direct);
        let us = u_update(&st, &vs.value, &cfg, &p).unwrap();
        assert!(us.is_monotone());
    }

    #[test]
    fn dual_update_is_definitional() {
        let dims = Dims::new(8, 8, 3);
        let (_, _, p) = problem(dims, 1, SamplingMask::full(8), 12);
        let mut st = init_state(&p, &small_cfg()).unwrap();
        st.v = to_casorati(&random_volume(dims, 13));
        st.d_l = to_casorati(&random_volume(dims, 14));
        let before = st.clone();
        dual_update(&mut st);
        for i in 0..st.d_l.as_slice().len() {
            let want = before.d_l.as_slice()[i] + (before.v.as_slice()[i] - before.l_out.as_slice()[i]);
            assert_eq!(st.d_l.as_slice()[i], want);
        }

        // zero residual leaves the dual unchanged
        let mut st = before.clone();
        st.v = st.l_out.clone();
        let d = st.d_l.clone();
        dual_update(&mut st);
        assert_eq!(st.d_l, d);

        // zero dual picks up the residual exactly
        let mut st = before;
        st.d_s = CasoratiMatrix::zeros(st.u.rows(), st.u.cols());
        let r = sub(&st.u, &st.s_out);
        dual_update(&mut st);
        assert_eq!(st.d_s, r);
    }

    #[test]
    fn zero_extrapolation_matches_plain_admm() {
        let spec = PhantomSpec {
            dims: Dims::new(16, 16, 3),
            background_ellipses: 1,
            moving_ellipses: 1,
            motion_amplitude: 1.0,
            seed: 3,
        };
        let x = make_phantom(&spec).unwrap();
        let c = make_coils(16, 16, 2, 3);
        let mask = make_mask(16, 2.0, 4, 3).unwrap();
        let y = crate::forward::forward(&x, &c, &mask).unwrap();
        let cfg = SolverConfig {
            alpha: 0.0,
            beta: 0.0,
            ..small_cfg()
        };
        let report = run(&y, &c, &cfg, Some(&x), &mut |_| {}).unwrap();

        let p = Problem::new(&y, &c, cfg.transform).unwrap();
        let eps0 = cfg.eps0_scale * p.y_norm_sq;
        let mut st = init_state(&p, &cfg).unwrap();
        for _ in 0..cfg.iterations {
            let v = v_update(&st, &st.u, &cfg, &p).unwrap().value;
            let u = u_update(&st, &v, &cfg, &p).unwrap().value;
            st.v_prev = std::mem::replace(&mut st.v, v);
            st.u_prev = std::mem::replace(&mut st.u, u);
            let eps = cfg.eps_k(eps0, st.k);
            generator_update(&mut st, &cfg, eps).unwrap();
            dual_update(&mut st);
            st.k += 1;
        }
        let plain = st.reconstruction();
        for (a, b) in plain.as_slice().iter().zip(report.x_hat.as_slice()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn run_records_rows_and_descent() {
        let spec = PhantomSpec {
            dims: Dims::new(16, 16, 3),
            background_ellipses: 1,
            moving_ellipses: 1,
            motion_amplitude: 1.0,
            seed: 4,
        };
        let x = make_phantom(&spec).unwrap();
        let c = make_coils(16, 16, 2, 4);
        let y = crate::forward::forward(&x, &c, &make_mask(16, 2.0, 4, 4).unwrap()).unwrap();
        let cfg = small_cfg();
        let mut seen = 0;
        let r = run(&y, &c, &cfg, Some(&x), &mut |_| seen += 1).unwrap();
        assert_eq!(seen, cfg.iterations + 1);
        assert_eq!(r.rows.len(), cfg.iterations + 1);
        assert_eq!(r.rows[0].d_v, 0.0);
        assert_eq!(r.rows[0].lyapunov, r.rows[0].lagrangian);
        for (it, row) in r.iterations.iter().zip(&r.rows[1..]) {
            let g = &it.generators;
            assert!(g.loss_l <= g.initial_l + row.eps_k);
            assert!(g.loss_s <= g.initial_s + row.eps_k);
        }
        let sum = &r.l + &r.s;
        assert_eq!(sum.as_slice(), r.x_hat.as_slice());
    }

    #[test]
    fn single_network_runs() {
        let dims = Dims::new(8, 8, 2);
        let (y, c, _) = problem(dims, 2, make_mask(8, 2.0, 2, 15).unwrap(), 15);
        let cfg = SolverConfig {
            single_network: true,
            ..small_cfg()
        };
        let r = run(&y, &c, &cfg, None, &mut |_| {}).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows[1].psnr.is_nan());
    }

    #[test]
    fn classical_full_sampling_recovers_adjoint() {
        let dims = Dims::new(16, 16, 3);
        let c = make_coils(16, 16, 3, 16);
        let x = random_volume(dims, 16);
        let y = crate::forward::forward(&x, &c, &SamplingMask::full(16)).unwrap();
        let res = classical_ls(&y, &c, 0.0, 0.0, TransformKind::Identity, 200).unwrap();
        let (rec, trace) = (res.reconstruction(), res.objective);
        let ls = crate::forward::adjoint(&y, &c).unwrap();
        assert!(dist_sq(rec.as_slice(), ls.as_slice()).sqrt() <= 1e-6 * ls.norm());
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn classical_static_scene_is_low_rank() {
        let frame = CineVolume::from_fn(Dims::new(16, 16, 1), |h, w, _| {
            Complex64::new(((h as f64) * 0.3).sin() + 0.5 * ((w as f64) * 0.2).cos(), 0.0)
        });
        let x = replicate_frame(&frame, 4);
        let c = make_coils(16, 16, 2, 17);
        let y = crate::forward::forward(&x, &c, &make_mask(16, 2.0, 4, 17).unwrap()).unwrap();
        let res = classical_ls(&y, &c, 0.05, 0.05, TransformKind::TemporalFourier, 300).unwrap();
        assert!(res.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(res.s.norm().powi(2) <= 0.01 * res.l.norm().powi(2));
    }
}
