//! Experiment configuration: a flat `key = value` file with `[section]`
//! headers. `#` starts a comment. Every key is optional except
//! `[phantom] dims`; unknown sections and keys are errors.
//!
//! ```text
//! [phantom]
//! dims = 64x64x8
//! [acquisition]
//! af = 4
//! [solver]
//! hidden = 16,16,8,8
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lsdip::eadmm::SolverConfig;
use lsdip::phantom::PhantomSpec;
use lsdip::volume::Dims;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: [{section}] {key}: {msg}")]
    Value {
        line: usize,
        section: String,
        key: String,
        msg: String,
    },
    #[error("missing required field \"{key}\" in [{section}]")]
    Missing { section: &'static str, key: &'static str },
    #[error("line {line}: unknown key \"{key}\" in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Acquisition {
    pub coils: usize,
    pub coil_seed: u64,
    pub af: f64,
    pub center_lines: usize,
    pub mask_seed: u64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            coils: 4,
            coil_seed: 7,
            af: 4.0,
            center_lines: 8,
            mask_seed: 7,
            noise_sigma: 0.0,
            noise_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub grid_lambda_l: Vec<f64>,
    pub grid_lambda_s: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// PSNR target for iterations-to-target; `None` means adjoint PSNR + 3 dB.
    pub psnr_target: Option<f64>,
    pub n_seeds: usize,
    /// Reuse the base seed for every uncertainty run.
    pub same_seed: bool,
    pub classical_iterations: usize,
    /// Frame rendered to PGM images.
    pub frame: usize,
}

impl Default for Study {
    fn default() -> Self {
        Self {
            grid_lambda_l: vec![0.05, 0.1, 0.2, 0.5],
            grid_lambda_s: vec![1e-4, 2e-4, 5e-4, 1e-3],
            alphas: vec![0.0, 0.25, 0.5, 0.75],
            betas: vec![0.0, 0.25, 0.5, 0.75],
            psnr_target: None,
            n_seeds: 4,
            same_seed: false,
            classical_iterations: 200,
            frame: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub phantom: PhantomSpec,
    pub acquisition: Acquisition,
    pub solver: SolverConfig,
    pub study: Study,
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// Parsed but untyped file: section -> key -> entry.
struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const SECTIONS: [&str; 6] = ["phantom", "acquisition", "solver", "grid", "extrapolation", "uncertainty"];

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, msg: format!("unterminated section header {content:?}") })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax {
                        line,
                        msg: format!("unknown section [{name}] (expected one of {})", SECTIONS.join(", ")),
                    });
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, got {content:?}"),
            })?;
            let section = current.as_ref().ok_or_else(|| ConfigError::Syntax {
                line,
                msg: "key outside of any [section]".into(),
            })?;
            let key = key.trim().to_string();
            let table = sections.get_mut(section).expect("section registered on its header");
            if let Some(prev) = table.get(&key) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key \"{key}\" in [{section}] (first set on line {})", prev.line),
                });
            }
            table.insert(
                key,
                Entry {
                    line,
                    value: value.trim().to_string(),
                    used: false,
                },
            );
        }
        Ok(Self { sections })
    }

    fn take<T>(&mut self, section: &str, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        let Some(e) = self.sections.get_mut(section).and_then(|s| s.get_mut(key)) else {
            return Ok(None);
        };
        e.used = true;
        parse(&e.value).map(Some).map_err(|msg| ConfigError::Value {
            line: e.line,
            section: section.into(),
            key: key.into(),
            msg,
        })
    }

    fn set<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.take(section, key, scalar::<T>)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_list<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.take(section, key, list::<T>)? {
            *slot = v;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        for (section, table) in self.sections {
            if let Some((key, e)) = table.into_iter().find(|(_, e)| !e.used) {
                return Err(ConfigError::UnknownKey { line: e.line, section, key });
            }
        }
        Ok(())
    }
}

fn scalar<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    s.parse::<T>().map_err(|e| format!("cannot parse {s:?}: {e}"))
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| scalar(p.trim())).collect()
}

fn dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s.split('x').map(|p| scalar(p.trim())).collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [h, w, t] => {
            let d = Dims::new(h, w, t);
            d.validate().map_err(|e| e.to_string())?;
            Ok(d)
        }
        _ => Err(format!("expected HxWxT, got {s:?}")),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let mut phantom = PhantomSpec::std_a();
        phantom.dims = raw.take("phantom", "dims", dims)?.ok_or(ConfigError::Missing {
            section: "phantom",
            key: "dims",
        })?;
        raw.set("phantom", "background_ellipses", &mut phantom.background_ellipses)?;
        raw.set("phantom", "moving_ellipses", &mut phantom.moving_ellipses)?;
        raw.set("phantom", "motion_amplitude", &mut phantom.motion_amplitude)?;
        raw.set("phantom", "seed", &mut phantom.seed)?;

        let mut acq = Acquisition::default();
        raw.set("acquisition", "coils", &mut acq.coils)?;
        raw.set("acquisition", "coil_seed", &mut acq.coil_seed)?;
        raw.set("acquisition", "af", &mut acq.af)?;
        raw.set("acquisition", "center_lines", &mut acq.center_lines)?;
        raw.set("acquisition", "mask_seed", &mut acq.mask_seed)?;
        raw.set("acquisition", "noise_sigma", &mut acq.noise_sigma)?;
        raw.set("acquisition", "noise_seed", &mut acq.noise_seed)?;

        let mut s = SolverConfig::default();
        raw.set("solver", "lambda_l", &mut s.lambda_l)?;
        raw.set("solver", "lambda_s", &mut s.lambda_s)?;
        raw.set("solver", "rho_l", &mut s.rho_l)?;
        raw.set("solver", "rho_s", &mut s.rho_s)?;
        raw.set("solver", "alpha", &mut s.alpha)?;
        raw.set("solver", "beta", &mut s.beta)?;
        raw.set("solver", "iterations", &mut s.iterations)?;
        raw.set("solver", "n_inner_prox", &mut s.n_inner_prox)?;
        raw.set("solver", "n_steps", &mut s.n_steps)?;
        raw.set("solver", "lr", &mut s.lr)?;
        raw.set("solver", "sigma_z", &mut s.sigma_z)?;
        raw.set("solver", "eps0_scale", &mut s.eps0_scale)?;
        raw.set("solver", "transform", &mut s.transform)?;
        raw.set("solver", "latent_channels", &mut s.latent_channels)?;
        raw.set_list("solver", "hidden", &mut s.hidden)?;
        raw.set("solver", "upsample", &mut s.upsample)?;
        raw.set("solver", "fit_rule", &mut s.fit_rule)?;
        raw.set("solver", "lr_backoff", &mut s.lr_backoff)?;
        raw.set("solver", "warm_start", &mut s.warm_start)?;
        raw.set("solver", "single_network", &mut s.single_network)?;
        raw.set("solver", "seed", &mut s.seed)?;

        let mut st = Study::default();
        raw.set_list("grid", "lambda_l", &mut st.grid_lambda_l)?;
        raw.set_list("grid", "lambda_s", &mut st.grid_lambda_s)?;
        raw.set_list("extrapolation", "alpha", &mut st.alphas)?;
        raw.set_list("extrapolation", "beta", &mut st.betas)?;
        if let Some(t) = raw.take("extrapolation", "psnr_target", scalar::<f64>)? {
            st.psnr_target = Some(t);
        }
        raw.set("uncertainty", "n_seeds", &mut st.n_seeds)?;
        raw.set("uncertainty", "same_seed", &mut st.same_seed)?;
        raw.set("solver", "classical_iterations", &mut st.classical_iterations)?;
        raw.set("phantom", "render_frame", &mut st.frame)?;
        raw.finish()?;

        let cfg = Self {
            phantom,
            acquisition: acq,
            solver: s,
            study: st,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |e: lsdip::Error| ConfigError::Invalid(e.to_string());
        self.phantom.validate().map_err(invalid)?;
        self.solver.validate().map_err(invalid)?;
        self.solver.arch().check_dims(self.phantom.dims).map_err(invalid)?;
        let a = &self.acquisition;
        if a.coils == 0 {
            return Err(ConfigError::Invalid("[acquisition] coils must be >= 1".into()));
        }
        if !(a.af >= 1.0) || !(a.noise_sigma >= 0.0) {
            return Err(ConfigError::Invalid("[acquisition] needs af >= 1 and noise_sigma >= 0".into()));
        }
        let st = &self.study;
        if st.alphas.len() != st.betas.len() {
            return Err(ConfigError::Invalid(format!(
                "[extrapolation] alpha and beta lists pair up and must have equal length (got {} and {})",
                st.alphas.len(),
                st.betas.len()
            )));
        }
        if st.frame >= self.phantom.dims.t {
            return Err(ConfigError::Invalid(format!("render_frame {} is out of range", st.frame)));
        }
        if st.classical_iterations == 0 {
            return Err(ConfigError::Invalid("classical_iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parsing it back yields `self`.
    pub fn snapshot(&self) -> String {
        let p = &self.phantom;
        let a = &self.acquisition;
        let s = &self.solver;
        let st = &self.study;
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("[phantom]", String::new());
        kv("dims", format!("{}x{}x{}", p.dims.h, p.dims.w, p.dims.t));
        kv("background_ellipses", p.background_ellipses.to_string());
        kv("moving_ellipses", p.moving_ellipses.to_string());
        kv("motion_amplitude", p.motion_amplitude.to_string());
        kv("seed", p.seed.to_string());
        kv("render_frame", st.frame.to_string());
        kv("[acquisition]", String::new());
        kv("coils", a.coils.to_string());
        kv("coil_seed", a.coil_seed.to_string());
        kv("af", a.af.to_string());
        kv("center_lines", a.center_lines.to_string());
        kv("mask_seed", a.mask_seed.to_string());
        kv("noise_sigma", a.noise_sigma.to_string());
        kv("noise_seed", a.noise_seed.to_string());
        kv("[solver]", String::new());
        kv("lambda_l", s.lambda_l.to_string());
        kv("lambda_s", s.lambda_s.to_string());
        kv("rho_l", s.rho_l.to_string());
        kv("rho_s", s.rho_s.to_string());
        kv("alpha", s.alpha.to_string());
        kv("beta", s.beta.to_string());
        kv("iterations", s.iterations.to_string());
        kv("n_inner_prox", s.n_inner_prox.to_string());
        kv("n_steps", s.n_steps.to_string());
        kv("lr", s.lr.to_string());
        kv("sigma_z", s.sigma_z.to_string());
        kv("eps0_scale", s.eps0_scale.to_string());
        kv("transform", s.transform.to_string());
        kv("latent_channels", s.latent_channels.to_string());
        kv("hidden", s.hidden.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        kv("upsample", s.upsample.to_string());
        kv("fit_rule", s.fit_rule.to_string());
        kv("lr_backoff", s.lr_backoff.to_string());
        kv("warm_start", s.warm_start.to_string());
        kv("single_network", s.single_network.to_string());
        kv("seed", s.seed.to_string());
        kv("classical_iterations", st.classical_iterations.to_string());
        kv("[grid]", String::new());
        kv("lambda_l", join(&st.grid_lambda_l));
        kv("lambda_s", join(&st.grid_lambda_s));
        kv("[extrapolation]", String::new());
        kv("alpha", join(&st.alphas));
        kv("beta", join(&st.betas));
        if let Some(t) = st.psnr_target {
            kv("psnr_target", t.to_string());
        }
        kv("[uncertainty]", String::new());
        kv("n_seeds", st.n_seeds.to_string());
        kv("same_seed", st.same_seed.to_string());
        out.lines()
            .map(|l| l.strip_suffix(" = ").unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}
