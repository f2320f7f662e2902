//! Untrained convolutional generators.
//!
//! A generator is a stack of 3x3x3 convolutions (stride one, zero "same"
//! padding) with rectifiers between layers and a linear last layer, applied to
//! a fixed Gaussian latent `z`. The first `upsample` hidden layers are each
//! followed by nearest-neighbour 2x upsampling in `h` and `w`, so `z` lives on
//! an `H / 2^upsample x W / 2^upsample x T` grid; `upsample = 0` is a plain
//! full-resolution stack. Output channels are read in (real, imaginary)
//! pairs; pair `j` is the `j`-th complex volume the network produces.
//!
//! Activations are stored channel-major and then in volume order
//! (`h + H*(w + W*t)`), so an output channel pair maps onto a
//! [`CineVolume`] without reshuffling.
//!
//! Parameters live in one flat vector. Layer `l` stores its weights as
//! `[out][in][kt][kw][kh]` followed by `out` biases.

use std::path::Path;

use num_complex::Complex64;

use crate::conv::{self, pack_weights, Grid};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::Stream;
use crate::volume::{CineVolume, Dims};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const TAPS: usize = 27;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorArch {
    pub latent_channels: usize,
    pub hidden: Vec<usize>,
    /// Twice the number of complex volumes produced.
    pub out_channels: usize,
    /// Number of leading hidden layers followed by 2x spatial upsampling.
    pub upsample: usize,
}

impl GeneratorArch {
    pub fn new(latent_channels: usize, hidden: Vec<usize>, outputs: usize) -> Self {
        Self {
            latent_channels,
            hidden,
            out_channels: 2 * outputs,
            upsample: 0,
        }
    }

    pub fn with_upsample(mut self, upsample: usize) -> Self {
        self.upsample = upsample;
        self
    }

    /// Grid on which layer `l` runs (layer 0 runs on the latent grid).
    pub fn layer_dims(&self, l: usize, dims: Dims) -> Dims {
        let shift = self.upsample - l.min(self.upsample);
        Dims::new(dims.h >> shift, dims.w >> shift, dims.t)
    }

    pub fn latent_dims(&self, dims: Dims) -> Dims {
        self.layer_dims(0, dims)
    }

    pub fn latent_len(&self, dims: Dims) -> usize {
        self.latent_channels * self.latent_dims(dims).len()
    }

    /// Checks that `dims` can be reached by the upsampling stages.
    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        let f = 1usize.checked_shl(self.upsample as u32).unwrap_or(0);
        if f == 0 || dims.h % f != 0 || dims.w % f != 0 {
            return Err(Error::InvalidDims(format!(
                "{dims} is not divisible by 2^{} in height and width",
                self.upsample
            )));
        }
        Ok(())
    }

    /// `(in, out)` channels per layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut chans = vec![self.latent_channels];
        chans.extend(&self.hidden);
        chans.push(self.out_channels);
        chans.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn outputs(&self) -> usize {
        self.out_channels / 2
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|&(i, o)| o * i * TAPS + o).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for (i, o) in self.layers() {
            off.push(off.last().unwrap() + o * i * TAPS + o);
        }
        off
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("generator channel counts must be positive".into()));
        }
        if self.out_channels == 0 || self.out_channels % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "generator needs an even, positive output channel count, got {}",
                self.out_channels
            )));
        }
        if self.upsample > self.hidden.len() {
            return Err(Error::InvalidParameter(format!(
                "{} upsampling stages need at least as many hidden layers, got {}",
                self.upsample,
                self.hidden.len()
            )));
        }
        Ok(())
    }
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self::new(8, vec![8, 8], 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub arch: GeneratorArch,
    pub dims: Dims,
    pub theta: Vec<f64>,
    z: Vec<f64>,
    pub adam: AdamState,
}

impl GeneratorParams {
    /// Assembles parameters from explicit parts (checkpoints, tests).
    pub fn from_parts(arch: GeneratorArch, dims: Dims, theta: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        arch.check_dims(dims)?;
        if theta.len() != arch.n_params() || z.len() != arch.latent_len(dims) {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters / {} latent values for {:?} at {dims}",
                theta.len(),
                z.len(),
                arch
            )));
        }
        if !theta.iter().chain(&z).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("generator parameters".into()));
        }
        let n = theta.len();
        Ok(Self {
            arch,
            dims,
            theta,
            z,
            adam: AdamState::zeros(n),
        })
    }

    /// The latent input; fixed for the lifetime of the generator.
    pub fn latent(&self) -> &[f64] {
        &self.z
    }

    pub fn layer_weights(&self, layer: usize) -> (&[f64], &[f64]) {
        let (i, o) = self.arch.layers()[layer];
        let off = self.arch.offsets()[layer];
        let nw = o * i * TAPS;
        (&self.theta[off..off + nw], &self.theta[off + nw..off + nw + o])
    }
}

/// Random init: weights `N(0, 2 / fan_in)`, zero biases, `z ~ N(0, sigma_z^2)`.
pub fn init_generator(arch: &GeneratorArch, dims: Dims, sigma_z: f64, seed: u64, label: &str) -> Result<GeneratorParams> {
    arch.validate()?;
    dims.validate()?;
    arch.check_dims(dims)?;
    if !(sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_z must be positive, got {sigma_z}")));
    }
    let mut wrng = Stream::new(seed, &format!("theta_init/{label}"));
    let mut theta = Vec::with_capacity(arch.n_params());
    for (i, o) in arch.layers() {
        let std = (2.0 / (i * TAPS) as f64).sqrt();
        theta.extend((0..o * i * TAPS).map(|_| std * wrng.normal()));
        theta.extend(std::iter::repeat_n(0.0, o));
    }
    let mut zrng = Stream::new(seed, &format!("z/{label}"));
    let z = (0..arch.latent_len(dims)).map(|_| sigma_z * zrng.normal()).collect();
    GeneratorParams::from_parts(arch.clone(), dims, theta, z)
}

/// Activations retained for the backward pass.
struct Trace {
    grids: Vec<Grid>,
    /// Padded input of each layer (the latent for layer 0).
    inputs: Vec<Vec<f64>>,
    /// Post-rectifier row-layout output of each hidden layer.
    acts: Vec<Vec<f64>>,
    /// Final layer output in volume order.
    output: Vec<f64>,
}

fn grids(p: &GeneratorParams) -> Vec<Grid> {
    (0..p.arch.layers().len())
        .map(|l| {
            let d = p.arch.layer_dims(l, p.dims);
            Grid::new(d.h, d.w, d.t)
        })
        .collect()
}

fn run_forward(p: &GeneratorParams, keep: bool) -> Trace {
    let grids = grids(p);
    let layers = p.arch.layers();
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut acts = Vec::with_capacity(last);
    let mut x = grids[0].pad_volume(&p.z, p.arch.latent_channels);
    let mut output = Vec::new();
    for (l, &(cin, cout)) in layers.iter().enumerate() {
        let (wts, bias) = p.layer_weights(l);
        let g = &grids[l];
        let mut y = conv::conv(g, &x, cin, &pack_weights(wts, cin, cout, false), Some(bias), cout);
        let next = if l < last {
            for v in &mut y {
                *v = v.max(0.0);
            }
            let next = if grids[l + 1].w != g.w {
                g.upsample_pad(&y, cout, &grids[l + 1])
            } else {
                g.pad_rows(&y, cout, false)
            };
            if keep {
                acts.push(y);
            }
            next
        } else {
            output = g.rows_to_volume(&y, cout);
            Vec::new()
        };
        if keep {
            inputs.push(std::mem::replace(&mut x, next));
        } else {
            x = next;
        }
    }
    Trace {
        grids,
        inputs,
        acts,
        output,
    }
}

fn output_volumes(p: &GeneratorParams, output: &[f64]) -> Vec<CineVolume> {
    let n = p.dims.len();
    (0..p.arch.outputs())
        .map(|j| {
            let re = &output[2 * j * n..(2 * j + 1) * n];
            let im = &output[(2 * j + 1) * n..(2 * j + 2) * n];
            let mut v = CineVolume::zeros(p.dims);
            for ((z, &a), &b) in v.as_mut_slice().iter_mut().zip(re).zip(im) {
                *z = Complex64::new(a, b);
            }
            v
        })
        .collect()
}

/// All complex volumes produced by the network.
pub fn gen_forward_all(p: &GeneratorParams) -> Vec<CineVolume> {
    output_volumes(p, &run_forward(p, false).output)
}

/// The first complex output volume.
pub fn gen_forward(p: &GeneratorParams) -> CineVolume {
    gen_forward_all(p).swap_remove(0)
}

/// One fitting target per complex output: `(rho / 2) ||out_j - target||^2`.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub volume: &'a CineVolume,
    pub rho: f64,
}

fn check_targets(p: &GeneratorParams, targets: &[Target<'_>]) -> Result<()> {
    if targets.len() != p.arch.outputs() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for a generator with {} outputs",
            targets.len(),
            p.arch.outputs()
        )));
    }
    for tg in targets {
        if tg.volume.dims() != p.dims {
            return Err(Error::DimensionMismatch(format!(
                "target {} vs generator {}",
                tg.volume.dims(),
                p.dims
            )));
        }
    }
    Ok(())
}

fn loss_of(p: &GeneratorParams, output: &[f64], targets: &[Target<'_>]) -> f64 {
    let n = p.dims.len();
    let mut loss = 0.0;
    for (j, tg) in targets.iter().enumerate() {
        let re = &output[2 * j * n..(2 * j + 1) * n];
        let im = &output[(2 * j + 1) * n..(2 * j + 2) * n];
        let mut s = 0.0;
        for ((a, b), z) in re.iter().zip(im).zip(tg.volume.as_slice()) {
            s += (a - z.re).powi(2) + (b - z.im).powi(2);
        }
        loss += 0.5 * tg.rho * s;
    }
    loss
}

/// Loss value, its gradient with respect to `theta`, and the network output
/// at the current parameters.
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub outputs: Vec<CineVolume>,
}

pub fn gen_loss_grad_multi(p: &GeneratorParams, targets: &[Target<'_>]) -> Result<LossGrad> {
    check_targets(p, targets)?;
    let n = p.dims.len();
    let trace = run_forward(p, true);
    let loss = loss_of(p, &trace.output, targets);
    if !loss.is_finite() {
        return Err(Error::NonFinite("generator loss".into()));
    }

    let mut g = vec![0.0; trace.output.len()];
    for (j, tg) in targets.iter().enumerate() {
        for (i, z) in tg.volume.as_slice().iter().enumerate() {
            g[2 * j * n + i] = tg.rho * (trace.output[2 * j * n + i] - z.re);
            g[(2 * j + 1) * n + i] = tg.rho * (trace.output[(2 * j + 1) * n + i] - z.im);
        }
    }

    let grids = &trace.grids;
    let mut g = grids[grids.len() - 1].volume_to_rows(&g, p.arch.out_channels);
    let layers = p.arch.layers();
    let offsets = p.arch.offsets();
    let mut grad = vec![0.0; p.theta.len()];
    for l in (0..layers.len()).rev() {
        let (cin, cout) = layers[l];
        let grid = &grids[l];
        let nw = cout * cin * TAPS;
        let (gw, gb) = grad[offsets[l]..offsets[l + 1]].split_at_mut(nw);
        conv::weight_grad(grid, &g, cout, &trace.inputs[l], cin, gw, gb);
        if l > 0 {
            let (wts, _) = p.layer_weights(l);
            let padded = grid.pad_rows(&g, cout, false);
            let mut gin = conv::conv(grid, &padded, cout, &pack_weights(wts, cin, cout, true), None, cin);
            let below = &grids[l - 1];
            if below.w != grid.w {
                gin = below.downsample_sum(&gin, cin, grid);
            }
            below.relu_mask(&mut gin, &trace.acts[l - 1], cin);
            g = gin;
        }
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("generator gradient".into()));
    }
    Ok(LossGrad {
        loss,
        grad,
        outputs: output_volumes(p, &trace.output),
    })
}

/// `(rho / 2) ||gen_forward(p) - target||^2` and its gradient.
pub fn gen_loss_grad(p: &GeneratorParams, target: &CineVolume, rho: f64) -> Result<(f64, Vec<f64>)> {
    let lg = gen_loss_grad_multi(p, &[Target { volume: target, rho }])?;
    Ok((lg.loss, lg.grad))
}

/// Loss without gradient.
pub fn gen_loss(p: &GeneratorParams, targets: &[Target<'_>]) -> Result<f64> {
    check_targets(p, targets)?;
    Ok(loss_of(p, &run_forward(p, false).output, targets))
}

pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) {
    state.step += 1;
    let b1c = 1.0 - ADAM_BETA1.powf(state.step as f64);
    let b2c = 1.0 - ADAM_BETA2.powf(state.step as f64);
    for (((th, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / b1c;
        let vhat = *v / b2c;
        *th -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub initial_loss: f64,
    /// Loss of the returned parameters.
    pub loss: f64,
    pub accepted: bool,
    /// Network outputs at the returned parameters.
    pub outputs: Vec<CineVolume>,
}

/// Which Adam iterate a fit returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FitRule {
    /// The last iterate, kept only if `loss <= initial + eps`.
    #[default]
    Final,
    /// The lowest-loss iterate among steps `1..=n_steps`, kept only if
    /// `loss <= initial + eps`.
    Best,
}

impl std::str::FromStr for FitRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "final" => Ok(Self::Final),
            "best" => Ok(Self::Best),
            other => Err(format!("unknown fit rule {other:?} (expected final or best)")),
        }
    }
}

impl std::fmt::Display for FitRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Final => "final",
            Self::Best => "best",
        })
    }
}

/// Runs `n_steps` Adam iterations and keeps the iterate selected by `rule`
/// only if `loss(new) <= loss(old) + eps`; otherwise the input parameters
/// (including the optimizer state) are restored and `accepted` is false.
pub fn fit_generator_multi(
    p: &mut GeneratorParams,
    targets: &[Target<'_>],
    n_steps: usize,
    lr: f64,
    eps: f64,
    rule: FitRule,
) -> Result<FitOutcome> {
    if n_steps == 0 || !(lr > 0.0) || !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fit needs n_steps >= 1, lr > 0, eps >= 0 (got {n_steps}, {lr}, {eps})"
        )));
    }
    check_targets(p, targets)?;
    let saved = p.clone();
    let mut initial: Option<(f64, Vec<CineVolume>)> = None;
    // lowest-loss iterate after at least one step: (loss, theta, outputs)
    let mut best: Option<(f64, Vec<f64>, Vec<CineVolume>)> = None;
    let mut diverged = false;
    for j in 0..n_steps {
        match gen_loss_grad_multi(p, targets) {
            Ok(lg) => {
                if j == 0 {
                    initial = Some((lg.loss, lg.outputs));
                } else if rule == FitRule::Best && best.as_ref().is_none_or(|b| lg.loss < b.0) {
                    best = Some((lg.loss, p.theta.clone(), lg.outputs));
                }
                adam_step(&mut p.theta, &lg.grad, &mut p.adam, lr);
            }
            Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let Some((initial_loss, initial_outputs)) = initial else {
        // the starting point itself is not finite
        *p = saved;
        return Err(Error::NonFinite("generator loss at the starting parameters".into()));
    };
    if !diverged && p.theta.iter().all(|v| v.is_finite()) {
        let tr = run_forward(p, false);
        let l = loss_of(p, &tr.output, targets);
        if l.is_finite() && best.as_ref().is_none_or(|b| l < b.0) {
            best = Some((l, p.theta.clone(), output_volumes(p, &tr.output)));
        }
    }
    match best {
        Some((l, theta, outputs)) if l <= initial_loss + eps => {
            p.theta = theta;
            Ok(FitOutcome {
                initial_loss,
                loss: l,
                accepted: true,
                outputs,
            })
        }
        _ => {
            *p = saved;
            Ok(FitOutcome {
                initial_loss,
                loss: initial_loss,
                accepted: false,
                outputs: initial_outputs,
            })
        }
    }
}

/// Single-output convenience form of [`fit_generator_multi`].
pub fn fit_generator(
    p: &mut GeneratorParams,
    target: &CineVolume,
    rho: f64,
    n_steps: usize,
    lr: f64,
    eps: f64,
) -> Result<FitOutcome> {
    fit_generator_multi(p, &[Target { volume: target, rho }], n_steps, lr, eps, FitRule::Final)
}

/// Checkpoint layout (LSDV kind 3).
///
/// Dims: `[H, W, T, upsample, latent_channels, hidden..., out_channels]`.
/// Payload, real parts only (imaginary parts zero): `theta`, `z`, Adam `m`,
/// Adam `v`, then the Adam step count.
pub fn encode_checkpoint(p: &GeneratorParams) -> Result<Vec<u8>> {
    let a = &p.arch;
    let mut dims = vec![p.dims.h, p.dims.w, p.dims.t, a.upsample, a.latent_channels];
    dims.extend(&a.hidden);
    dims.push(a.out_channels);
    let dims = dims
        .into_iter()
        .map(|d| u32::try_from(d).map_err(|_| Error::InvalidDims(format!("dimension {d} exceeds u32"))))
        .collect::<Result<Vec<_>>>()?;
    let payload: Vec<Complex64> = p
        .theta
        .iter()
        .chain(&p.z)
        .chain(&p.adam.m)
        .chain(&p.adam.v)
        .copied()
        .chain(std::iter::once(p.adam.step as f64))
        .map(|x| Complex64::new(x, 0.0))
        .collect();
    Ok(io::encode(io::Kind::Checkpoint, &dims, &payload))
}

fn checkpoint_shape(dims: &[u32]) -> Option<(GeneratorArch, Dims)> {
    if dims.len() < 6 {
        return None;
    }
    let d: Vec<usize> = dims.iter().map(|&x| x as usize).collect();
    let arch = GeneratorArch {
        latent_channels: d[4],
        hidden: d[5..d.len() - 1].to_vec(),
        out_channels: d[d.len() - 1],
        upsample: d[3],
    };
    let vd = Dims::new(d[0], d[1], d[2]);
    arch.validate().ok()?;
    vd.validate().ok()?;
    arch.check_dims(vd).ok()?;
    Some((arch, vd))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<GeneratorParams> {
    let c = io::decode(bytes, io::Kind::Checkpoint, |dims| {
        let (arch, vd) = checkpoint_shape(dims)?;
        (3 * arch.n_params()).checked_add(arch.latent_len(vd))?.checked_add(1)
    })?;
    let (arch, dims) = checkpoint_shape(&c.dims).expect("validated by decode");
    let re: Vec<f64> = c.payload.iter().map(|z| z.re).collect();
    let n = arch.n_params();
    let nz = arch.latent_len(dims);
    let step = re[3 * n + nz];
    if !(step >= 0.0 && step.fract() == 0.0 && step < 2f64.powi(53)) {
        return Err(Error::InvalidParameter(format!("checkpoint step {step} is not a count")));
    }
    let mut p = GeneratorParams::from_parts(arch, dims, re[..n].to_vec(), re[n..n + nz].to_vec())?;
    p.adam.m = re[n + nz..2 * n + nz].to_vec();
    p.adam.v = re[2 * n + nz..3 * n + nz].to_vec();
    p.adam.step = step as u64;
    if !p.adam.m.iter().chain(&p.adam.v).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("optimizer state".into()));
    }
    Ok(p)
}

pub fn write_checkpoint(path: &Path, p: &GeneratorParams) -> Result<()> {
    io::write_atomic(path, &encode_checkpoint(p)?)
}

pub fn read_checkpoint(path: &Path) -> Result<GeneratorParams> {
    decode_checkpoint(&io::read_all(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> GeneratorArch {
        GeneratorArch::new(2, vec![4], 1)
    }

    fn random_target(dims: Dims, seed: u64) -> CineVolume {
        let mut s = Stream::new(seed, "target");
        CineVolume::from_fn(dims, |_, _, _| s.complex_normal(0.5))
    }

    /// Direct 7-deep loop convolution used as an oracle.
    fn naive_forward(p: &GeneratorParams) -> Vec<f64> {
        let layers = p.arch.layers();
        let mut x = p.latent().to_vec();
        for (l, &(cin, cout)) in layers.iter().enumerate() {
            let d = p.arch.layer_dims(l, p.dims);
            let n = d.len();
            if l > 0 && d.w != p.arch.layer_dims(l - 1, p.dims).w {
                let c = p.arch.layer_dims(l - 1, p.dims);
                let mut up = vec![0.0; cin * n];
                for ci in 0..cin {
                    for t in 0..d.t {
                        for w in 0..d.w {
                            for h in 0..d.h {
                                up[ci * n + d.index(h, w, t)] = x[ci * c.len() + c.index(h / 2, w / 2, t)];
                            }
                        }
                    }
                }
                x = up;
            }
            let (wts, bias) = p.layer_weights(l);
            let mut y = vec![0.0; cout * n];
            for co in 0..cout {
                for t in 0..d.t {
                    for w in 0..d.w {
                        for h in 0..d.h {
                            let mut acc = bias[co];
                            for ci in 0..cin {
                                for kt in 0..3 {
                                    for kw in 0..3 {
                                        for kh in 0..3 {
                                            let (ts, ws, hs) = (
                                                t as isize + kt as isize - 1,
                                                w as isize + kw as isize - 1,
                                                h as isize + kh as isize - 1,
                                            );
                                            if ts < 0 || ws < 0 || hs < 0 || ts >= d.t as isize || ws >= d.w as isize || hs >= d.h as isize {
                                                continue;
                                            }
                                            let xi = ci * n + d.index(hs as usize, ws as usize, ts as usize);
                                            acc += wts[(co * cin + ci) * 27 + 9 * kt + 3 * kw + kh] * x[xi];
                                        }
                                    }
                                }
                            }
                            let v = if l + 1 < layers.len() { acc.max(0.0) } else { acc };
                            y[co * n + d.index(h, w, t)] = v;
                        }
                    }
                }
            }
            x = y;
        }
        x
    }

    #[test]
    fn init_is_deterministic_and_moments_zero() {
        let dims = Dims::new(8, 8, 2);
        let a = init_generator(&small_arch(), dims, 0.1, 3, "L").unwrap();
        let b = init_generator(&small_arch(), dims, 0.1, 3, "L").unwrap();
        assert_eq!(a, b);
        assert!(a.adam.m.iter().chain(&a.adam.v).all(|&v| v == 0.0));
        assert_eq!(a.adam.step, 0);
        let c = init_generator(&small_arch(), dims, 0.1, 3, "S").unwrap();
        assert_ne!(a.latent(), c.latent());
        assert!(init_generator(&small_arch(), dims, 0.0, 3, "L").is_err());
    }

    #[test]
    fn latent_variance() {
        let arch = GeneratorArch::new(1, vec![2], 1);
        let p = init_generator(&arch, Dims::new(64, 64, 8), 0.1, 5, "L").unwrap();
        let z = p.latent();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!((0.005..=0.02).contains(&var), "var {var}");
    }

    #[test]
    fn zero_weights_and_bias_propagation() {
        let dims = Dims::new(4, 4, 2);
        let mut p = init_generator(&small_arch(), dims, 0.1, 1, "L").unwrap();
        p.theta.fill(0.0);
        assert!(gen_forward(&p).as_slice().iter().all(|z| *z == Complex64::new(0.0, 0.0)));

        let n = p.theta.len();
        p.theta[n - 2] = 1.0;
        p.theta[n - 1] = -1.0;
        assert!(gen_forward(&p).as_slice().iter().all(|z| *z == Complex64::new(1.0, -1.0)));
    }

    #[test]
    fn forward_matches_naive_convolution() {
        let dims = Dims::new(8, 16, 4);
        for u in 0..3 {
            let arch = GeneratorArch::new(3, vec![5, 4], 1).with_upsample(u);
            let mut p = init_generator(&arch, dims, 0.7, 2, "L").unwrap();
            let mut s = Stream::new(9, "bias");
            for v in &mut p.theta {
                *v += 0.05 * s.normal();
            }
            let fast = run_forward(&p, false).output;
            let slow = naive_forward(&p);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "u={u}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn upsampling_shapes_and_validation() {
        let dims = Dims::new(16, 8, 3);
        let arch = GeneratorArch::new(2, vec![4, 4], 1).with_upsample(2);
        assert_eq!(arch.latent_dims(dims), Dims::new(4, 2, 3));
        assert_eq!(arch.layer_dims(2, dims), dims);
        let p = init_generator(&arch, dims, 0.1, 1, "L").unwrap();
        assert_eq!(p.latent().len(), 2 * 4 * 2 * 3);
        assert_eq!(gen_forward(&p).dims(), dims);
        assert!(init_generator(&arch.clone().with_upsample(3), dims, 0.1, 1, "L").is_err());
        assert!(init_generator(&arch, Dims::new(10, 8, 3), 0.1, 1, "L").is_err());
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let dims = Dims::new(8, 8, 2);
        let p = init_generator(&small_arch(), dims, 0.3, 4, "L").unwrap();
        let target = gen_forward(&p);
        let (loss, grad) = gen_loss_grad(&p, &target, 0.7).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rho_homogeneity() {
        let dims = Dims::new(8, 8, 2);
        let p = init_generator(&small_arch(), dims, 0.3, 4, "L").unwrap();
        let target = random_target(dims, 1);
        let (l1, g1) = gen_loss_grad(&p, &target, 0.5).unwrap();
        let (l2, g2) = gen_loss_grad(&p, &target, 1.0).unwrap();
        assert_eq!(2.0 * l1, l2);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for arch in [GeneratorArch::new(2, vec![4], 1), GeneratorArch::new(2, vec![3, 3], 1).with_upsample(2)] {
            check_finite_differences(&arch);
        }
    }

    fn check_finite_differences(arch: &GeneratorArch) {
        let dims = Dims::new(8, 8, 2);
        let p = init_generator(arch, dims, 0.5, 6, "L").unwrap();
        let target = random_target(dims, 2);
        let (_, grad) = gen_loss_grad(&p, &target, 1.0).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.theta.len() {
            let mut pp = p.clone();
            pp.theta[i] += h;
            let lp = gen_loss(&pp, &[Target { volume: &target, rho: 1.0 }]).unwrap();
            pp.theta[i] -= 2.0 * h;
            let lm = gen_loss(&pp, &[Target { volume: &target, rho: 1.0 }]).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn fit_at_optimum_is_fixed_point() {
        let dims = Dims::new(8, 8, 2);
        let mut p = init_generator(&small_arch(), dims, 0.3, 7, "L").unwrap();
        let target = gen_forward(&p);
        let theta0 = p.theta.clone();
        let out = fit_generator(&mut p, &target, 1.0, 5, 3e-4, 0.0).unwrap();
        assert!(out.accepted);
        assert_eq!(out.loss, 0.0);
        assert_eq!(p.theta, theta0);
        assert!(p.adam.m.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn fit_never_worsens_beyond_eps() {
        let dims = Dims::new(8, 8, 2);
        let mut p = init_generator(&small_arch(), dims, 0.3, 8, "L").unwrap();
        let target = random_target(dims, 3);
        for eps in [0.0, 1e-3, 1.0] {
            let before = gen_loss(&p, &[Target { volume: &target, rho: 1.0 }]).unwrap();
            let out = fit_generator(&mut p, &target, 1.0, 20, 3e-4, eps).unwrap();
            assert!(out.loss <= before + eps);
            assert_eq!(out.initial_loss, before);
            let now = gen_loss(&p, &[Target { volume: &target, rho: 1.0 }]).unwrap();
            assert_eq!(now, out.loss);
        }
    }

    #[test]
    fn diverging_fit_is_reverted() {
        let dims = Dims::new(8, 8, 2);
        let mut p = init_generator(&small_arch(), dims, 0.3, 9, "L").unwrap();
        let target = random_target(dims, 4);
        let saved = p.clone();
        let out = fit_generator(&mut p, &target, 1.0, 20, 10.0, 0.0).unwrap();
        assert!(!out.accepted);
        assert_eq!(p, saved);
        assert_eq!(out.loss, out.initial_loss);
    }

    #[test]
    fn interior_translation_equivariance() {
        let dims = Dims::new(16, 16, 4);
        let arch = GeneratorArch::new(2, vec![3, 3], 1);
        let p = init_generator(&arch, dims, 1.0, 10, "L").unwrap();
        let out = gen_forward(&p);
        // shift the latent by (1, 2) pixels in (h, w)
        let n = dims.len();
        let mut z = vec![0.0; p.latent().len()];
        for c in 0..arch.latent_channels {
            for t in 0..dims.t {
                for w in 0..dims.w {
                    for h in 0..dims.h {
                        let (hs, ws) = ((h + 1) % dims.h, (w + 2) % dims.w);
                        z[c * n + dims.index(hs, ws, t)] = p.latent()[c * n + dims.index(h, w, t)];
                    }
                }
            }
        }
        let shifted = GeneratorParams::from_parts(arch.clone(), dims, p.theta.clone(), z).unwrap();
        let out2 = gen_forward(&shifted);
        // receptive radius 3 layers -> 3 pixels; stay well inside
        for t in 0..dims.t {
            for w in 4..dims.w - 6 {
                for h in 4..dims.h - 5 {
                    let a = out.get(h, w, t);
                    let b = out2.get(h + 1, w + 2, t);
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn multi_output_pairs() {
        let dims = Dims::new(4, 4, 2);
        let arch = GeneratorArch::new(2, vec![3], 2);
        let p = init_generator(&arch, dims, 0.5, 11, "LS").unwrap();
        let outs = gen_forward_all(&p);
        assert_eq!(outs.len(), 2);
        let t1 = random_target(dims, 5);
        let t2 = random_target(dims, 6);
        let lg = gen_loss_grad_multi(&p, &[Target { volume: &t1, rho: 1.0 }, Target { volume: &t2, rho: 2.0 }]).unwrap();
        let want = 0.5 * crate::volume::dist_sq(outs[0].as_slice(), t1.as_slice())
            + crate::volume::dist_sq(outs[1].as_slice(), t2.as_slice());
        assert!((lg.loss - want).abs() < 1e-12 * want);
        assert!(gen_loss_grad_multi(&p, &[Target { volume: &t1, rho: 1.0 }]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dims = Dims::new(8, 8, 2);
        let arch = GeneratorArch::new(3, vec![4, 5], 2).with_upsample(1);
        let mut p = init_generator(&arch, dims, 0.2, 11, "LS").unwrap();
        let target = random_target(dims, 3);
        fit_generator_multi(&mut p, &[Target { volume: &target, rho: 1.0 }, Target { volume: &target, rho: 0.5 }], 3, 1e-3, 1.0, FitRule::Best).unwrap();
        assert_eq!(p.adam.step, 3);
        let q = decode_checkpoint(&encode_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(p, q);
        let bytes = encode_checkpoint(&p).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
