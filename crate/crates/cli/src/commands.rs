use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use num_complex::Complex64;
use rayon::prelude::*;

use lsdip::eadmm::{classical_ls, run, Generators, RunReport, SolverConfig};
use lsdip::forward::{adjoint, make_mask, CoilSensitivities, ForwardModel, KSpaceData, SamplingMask};
use lsdip::generator::write_checkpoint;
use lsdip::io::{read_coils, read_kspace, read_mask, read_volume, write_atomic, write_coils, write_kspace, write_mask, write_volume};
use lsdip::metrics::{encode_trace_csv, extrapolation_bounds, psnr, ssim, MonitorRow};
use lsdip::phantom::{make_coils, make_phantom};
use lsdip::render::{fmt_f64, write_csv, write_pgm, write_svg_lines, PlotLabels, Series};
use lsdip::volume::CineVolume;

use crate::config::Config;
use crate::{Failure, Method};

pub struct Context {
    pub cfg: Config,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// Measured data plus, when known, the ground truth.
struct Instance {
    truth: Option<CineVolume>,
    coils: CoilSensitivities,
    mask: SamplingMask,
    y: KSpaceData,
}

fn simulate_instance(cfg: &Config) -> Result<Instance> {
    let d = cfg.phantom.dims;
    let a = &cfg.acquisition;
    let truth = make_phantom(&cfg.phantom)?;
    let coils = make_coils(d.h, d.w, a.coils, a.coil_seed);
    let mask = make_mask(d.w, a.af, a.center_lines, a.mask_seed)?;
    let fm = ForwardModel::new(d, coils.clone(), mask.clone())?;
    let mut y = fm.forward(&truth)?;
    fm.add_noise(&mut y, a.noise_sigma, a.noise_seed);
    Ok(Instance {
        truth: Some(truth),
        coils,
        mask,
        y,
    })
}

fn load_instance(dir: &Path) -> Result<Instance> {
    let open = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Failure::Validation(format!("missing input file {}", p.display())))
        }
    };
    let mask = read_mask(&open("mask.lsdv")?).context("reading mask.lsdv")?;
    let coils = read_coils(&open("coils.lsdv")?).context("reading coils.lsdv")?;
    let y = read_kspace(&open("kspace.lsdv")?, mask.clone()).context("reading kspace.lsdv")?;
    let truth_path = dir.join("truth.lsdv");
    let truth = if truth_path.exists() {
        Some(read_volume(&truth_path).context("reading truth.lsdv")?)
    } else {
        None
    };
    Ok(Instance { truth, coils, mask, y })
}

fn frame_magnitude(v: &CineVolume, frame: usize) -> Vec<f64> {
    v.frame(frame).iter().map(|z| z.norm()).collect()
}

fn write_frame(ctx: &Context, name: &str, v: &CineVolume, peak: f64) -> Result<()> {
    let d = v.dims();
    let img = frame_magnitude(v, ctx.cfg.study.frame);
    write_pgm(&ctx.path(name), &img, d.h, d.w, (0.0, peak.max(f64::MIN_POSITIVE)))?;
    Ok(())
}

fn difference(a: &CineVolume, b: &CineVolume) -> CineVolume {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d
}

fn quality(x: &CineVolume, truth: Option<&CineVolume>) -> Result<(f64, f64)> {
    match truth {
        Some(t) => Ok((psnr(x, t)?, ssim(x, t)?)),
        None => Ok((f64::NAN, f64::NAN)),
    }
}

fn adjoint_psnr(inst: &Instance) -> Result<Option<f64>> {
    match &inst.truth {
        Some(t) => Ok(Some(psnr(&adjoint(&inst.y, &inst.coils)?, t)?)),
        None => Ok(None),
    }
}

fn psnr_target(ctx: &Context, inst: &Instance) -> Result<Option<f64>> {
    if let Some(t) = ctx.cfg.study.psnr_target {
        return Ok(Some(t));
    }
    Ok(adjoint_psnr(inst)?.map(|p| p + 3.0))
}

fn progress(ctx: &Context, label: &str) -> impl FnMut(&MonitorRow) {
    let label = label.to_string();
    let quiet = ctx.quiet;
    move |r: &MonitorRow| {
        if !quiet && r.k % 10 == 0 {
            eprintln!(
                "[{label}] k {:>4}  psnr {:>6.2}  lagrangian {:.4e}  res {:.2e}/{:.2e}",
                r.k, r.psnr, r.lagrangian, r.res_l, r.res_s
            );
        }
    }
}

fn run_lsdip(ctx: &Context, inst: &Instance, cfg: &SolverConfig, label: &str) -> Result<RunReport> {
    let mut cb = progress(ctx, label);
    Ok(run(&inst.y, &inst.coils, cfg, inst.truth.as_ref(), &mut cb)?)
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let inst = simulate_instance(&ctx.cfg)?;
    let truth = inst.truth.as_ref().expect("simulated");
    write_volume(&ctx.path("truth.lsdv"), truth)?;
    write_coils(&ctx.path("coils.lsdv"), &inst.coils)?;
    write_mask(&ctx.path("mask.lsdv"), &inst.mask)?;
    write_kspace(&ctx.path("kspace.lsdv"), &inst.y)?;
    write_frame(ctx, "truth.pgm", truth, truth.max_abs())?;
    write_atomic(&ctx.path("config.snapshot"), ctx.cfg.snapshot().as_bytes())?;
    println!(
        "mask: {} of {} lines sampled, achieved af {:.3}",
        inst.mask.count(),
        inst.mask.width(),
        inst.mask.achieved_af()
    );
    Ok(())
}

pub fn reconstruct(ctx: &Context, method: Method, input: Option<&Path>) -> Result<()> {
    let inst = match input {
        Some(dir) => load_instance(dir)?,
        None => simulate_instance(&ctx.cfg)?,
    };
    let truth = inst.truth.as_ref();
    let target = psnr_target(ctx, &inst)?;
    let started = std::time::Instant::now();
    let (x_hat, components, iters_to_target) = match method {
        Method::Adjoint => (adjoint(&inst.y, &inst.coils)?, None, None),
        Method::Classical => {
            let s = &ctx.cfg.solver;
            let r = classical_ls(&inst.y, &inst.coils, s.lambda_l, s.lambda_s, s.transform, ctx.cfg.study.classical_iterations)?;
            let rows: Vec<Vec<String>> = r
                .objective
                .iter()
                .enumerate()
                .map(|(k, o)| vec![k.to_string(), fmt_f64(*o)])
                .collect();
            write_csv(&ctx.path("objective.csv"), &["k", "objective"], &rows)?;
            let series = Series {
                label: "objective".into(),
                points: r.objective.iter().enumerate().map(|(k, &o)| (k as f64, o)).collect(),
            };
            write_svg_lines(
                &ctx.path("convergence.svg"),
                &[series],
                &PlotLabels {
                    title: "classical L+S objective".into(),
                    x: "iteration".into(),
                    y: "objective".into(),
                },
            )?;
            (r.reconstruction(), Some((r.l, r.s)), None)
        }
        Method::Lsdip => {
            let report = run_lsdip(ctx, &inst, &ctx.cfg.solver, "lsdip")?;
            write_atomic(&ctx.path("trace.csv"), &encode_trace_csv(&report.rows)?)?;
            let (name, pick): (&str, fn(&MonitorRow) -> f64) = if truth.is_some() {
                ("PSNR (dB)", |r| r.psnr)
            } else {
                ("augmented Lagrangian", |r| r.lagrangian)
            };
            let series = Series {
                label: "lsdip".into(),
                points: report.rows.iter().map(|r| (r.k as f64, pick(r))).collect(),
            };
            write_svg_lines(
                &ctx.path("convergence.svg"),
                &[series],
                &PlotLabels {
                    title: "eADMM convergence".into(),
                    x: "iteration".into(),
                    y: name.into(),
                },
            )?;
            match &report.generators {
                Generators::Dual { l, s } => {
                    write_checkpoint(&ctx.path("generator_l.lsdv"), l)?;
                    write_checkpoint(&ctx.path("generator_s.lsdv"), s)?;
                }
                Generators::Shared(p) => write_checkpoint(&ctx.path("generator.lsdv"), p)?,
            }
            let hit = target.and_then(|t| report.iterations_to(t));
            (report.x_hat.clone(), Some((report.l, report.s)), hit)
        }
    };
    if !x_hat.is_finite() {
        return Err(lsdip::Error::NonFinite("reconstruction".into()).into());
    }
    let seconds = started.elapsed().as_secs_f64();
    let peak = truth.map_or(x_hat.max_abs(), |t| t.max_abs());
    write_volume(&ctx.path("recon.lsdv"), &x_hat)?;
    write_frame(ctx, "recon.pgm", &x_hat, peak)?;
    if let Some(t) = truth {
        write_frame(ctx, "error.pgm", &difference(&x_hat, t), 0.2 * peak)?;
    }
    if let Some((l, s)) = &components {
        write_volume(&ctx.path("L.lsdv"), l)?;
        write_volume(&ctx.path("S.lsdv"), s)?;
        write_frame(ctx, "L.pgm", l, peak)?;
        write_frame(ctx, "S.pgm", s, s.max_abs())?;
    }
    let (p, q) = quality(&x_hat, truth)?;
    let method_name = format!("{method:?}").to_lowercase();
    let hit = iters_to_target.map_or(String::new(), |k| k.to_string());
    write_csv(
        &ctx.path("summary.csv"),
        &["method", "psnr", "ssim", "psnr_target", "iterations_to_target"],
        &[vec![method_name.clone(), fmt_f64(p), fmt_f64(q), target.map_or(String::new(), fmt_f64), hit]],
    )?;
    write_atomic(&ctx.path("config.snapshot"), ctx.cfg.snapshot().as_bytes())?;
    ctx.say(format!("{method_name}: psnr {p:.2} dB, ssim {q:.4}, {seconds:.1} s"));
    Ok(())
}

pub fn grid(ctx: &Context, method: Method) -> Result<()> {
    let st = &ctx.cfg.study;
    if st.grid_lambda_l.is_empty() || st.grid_lambda_s.is_empty() {
        return Err(Failure::Validation("[grid] lambda lists must be non-empty".into()).into());
    }
    let inst = simulate_instance(&ctx.cfg)?;
    let cells: Vec<(f64, f64)> = st
        .grid_lambda_l
        .iter()
        .flat_map(|&l| st.grid_lambda_s.iter().map(move |&s| (l, s)))
        .collect();
    let results: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(ll, ls)| {
            let cfg = SolverConfig {
                lambda_l: ll,
                lambda_s: ls,
                ..ctx.cfg.solver.clone()
            };
            let x = match method {
                Method::Lsdip => run_lsdip(ctx, &inst, &cfg, &format!("{ll},{ls}")).map(|r| r.x_hat),
                Method::Classical => classical_ls(&inst.y, &inst.coils, ll, ls, cfg.transform, st.classical_iterations)
                    .map(|r| r.reconstruction())
                    .map_err(Into::into),
                Method::Adjoint => adjoint(&inst.y, &inst.coils).map_err(Into::into),
            };
            x.and_then(|x| quality(&x, inst.truth.as_ref())).unwrap_or((f64::NAN, f64::NAN))
        })
        .collect();
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.0.is_finite())
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i);
    let rows: Vec<Vec<String>> = cells
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(i, (&(ll, ls), &(p, q)))| {
            vec![fmt_f64(ll), fmt_f64(ls), fmt_f64(p), fmt_f64(q), u8::from(Some(i) == best).to_string()]
        })
        .collect();
    write_csv(&ctx.path("grid.csv"), &["lambda_l", "lambda_s", "psnr", "ssim", "argmax"], &rows)?;
    if let Some(i) = best {
        ctx.say(format!("best cell: lambda_l {} lambda_s {} psnr {:.2} dB", cells[i].0, cells[i].1, results[i].0));
    }
    Ok(())
}

pub fn extrapolation(ctx: &Context) -> Result<()> {
    let st = &ctx.cfg.study;
    let inst = simulate_instance(&ctx.cfg)?;
    let target = psnr_target(ctx, &inst)?.ok_or_else(|| Failure::Validation("no PSNR target available".into()))?;
    if !(target > 0.0) {
        return Err(Failure::Validation(format!("psnr_target must be positive, got {target}")).into());
    }
    let mut pairs = vec![(0.0, 0.0)];
    for (&a, &b) in st.alphas.iter().zip(&st.betas) {
        if !pairs.contains(&(a, b)) {
            pairs.push((a, b));
        }
    }
    let reports: Vec<RunReport> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let cfg = SolverConfig {
                alpha: a,
                beta: b,
                ..ctx.cfg.solver.clone()
            };
            run_lsdip(ctx, &inst, &cfg, &format!("a={a} b={b}"))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (&(a, b), r) in pairs.iter().zip(&reports) {
        let t = &r.theory;
        // no bounds exist when the delta_U interval is empty
        let (amax, bmax) = extrapolation_bounds(t, t.delta_u, t.tau_u).unwrap_or((f64::NAN, f64::NAN));
        let hit = r.iterations_to(target).map_or(String::new(), |k| k.to_string());
        rows.push(vec![
            fmt_f64(a),
            fmt_f64(b),
            u8::from(t.admissible()).to_string(),
            fmt_f64(amax),
            fmt_f64(bmax),
            hit,
            fmt_f64(r.final_psnr()),
        ]);
    }
    write_csv(
        &ctx.path("extrapolation.csv"),
        &["alpha", "beta", "admissible", "alpha_max", "beta_max", "iterations_to_target", "final_psnr"],
        &rows,
    )?;
    let labels: Vec<String> = pairs.iter().map(|(a, b)| format!("a={a} b={b}")).collect();
    let mut header = vec!["k".to_string()];
    header.extend(labels.iter().cloned());
    let n = reports.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let curve_rows: Vec<Vec<String>> = (0..n)
        .map(|k| {
            let mut row = vec![k.to_string()];
            row.extend(reports.iter().map(|r| fmt_f64(r.rows[k].psnr)));
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&ctx.path("psnr_curves.csv"), &header_refs, &curve_rows)?;
    let series: Vec<Series> = labels
        .into_iter()
        .zip(&reports)
        .map(|(label, r)| Series {
            label,
            points: r.rows.iter().map(|row| (row.k as f64, row.psnr)).collect(),
        })
        .collect();
    write_svg_lines(
        &ctx.path("psnr_curves.svg"),
        &series,
        &PlotLabels {
            title: format!("PSNR vs iteration (target {target:.2} dB)"),
            x: "iteration".into(),
            y: "PSNR (dB)".into(),
        },
    )?;
    for row in &rows {
        ctx.say(format!(
            "alpha {} beta {}: admissible {}, iterations to target {}, final {} dB",
            row[0],
            row[1],
            row[2],
            if row[5].is_empty() { "-" } else { &row[5] },
            row[6]
        ));
    }
    Ok(())
}

pub fn ablate(ctx: &Context) -> Result<()> {
    let inst = simulate_instance(&ctx.cfg)?;
    let base = &ctx.cfg.solver;
    let variants = [
        ("full", base.clone()),
        (
            "single_network",
            SolverConfig {
                single_network: true,
                ..base.clone()
            },
        ),
        (
            "low_rank_only",
            SolverConfig {
                lambda_s: 0.0,
                ..base.clone()
            },
        ),
        (
            "sparse_only",
            SolverConfig {
                lambda_l: 0.0,
                ..base.clone()
            },
        ),
    ];
    let results: Vec<(f64, f64)> = variants
        .par_iter()
        .map(|(name, cfg)| {
            let r = run_lsdip(ctx, &inst, cfg, name)?;
            quality(&r.x_hat, inst.truth.as_ref())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = variants
        .iter()
        .zip(&results)
        .map(|((name, _), &(p, q))| vec![name.to_string(), fmt_f64(p), fmt_f64(q)])
        .collect();
    write_csv(&ctx.path("ablation.csv"), &["variant", "psnr", "ssim"], &rows)?;
    for ((name, _), (p, q)) in variants.iter().zip(&results) {
        ctx.say(format!("{name}: psnr {p:.2} dB, ssim {q:.4}"));
    }
    Ok(())
}

pub fn uncertainty(ctx: &Context) -> Result<()> {
    let st = &ctx.cfg.study;
    if st.n_seeds < 2 {
        return Err(Failure::Validation(format!("[uncertainty] n_seeds must be >= 2, got {}", st.n_seeds)).into());
    }
    let inst = simulate_instance(&ctx.cfg)?;
    let base = ctx.cfg.solver.seed;
    let seeds: Vec<u64> = (0..st.n_seeds as u64)
        .map(|i| if st.same_seed { base } else { base.wrapping_add(i) })
        .collect();
    let recons: Vec<CineVolume> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SolverConfig {
                seed,
                ..ctx.cfg.solver.clone()
            };
            run_lsdip(ctx, &inst, &cfg, &format!("seed {seed}")).map(|r| r.x_hat)
        })
        .collect::<Result<_>>()?;
    let dims = recons[0].dims();
    let n = recons.len() as f64;
    let mags: Vec<Vec<f64>> = recons.iter().map(CineVolume::magnitude).collect();
    let mean: Vec<f64> = (0..dims.len()).map(|i| mags.iter().map(|m| m[i]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dims.len())
        .map(|i| (mags.iter().map(|m| (m[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let as_volume = |v: &[f64]| CineVolume::from_vec(dims, v.iter().map(|&x| Complex64::new(x, 0.0)).collect());
    let mean_v = as_volume(&mean)?;
    let std_v = as_volume(&std)?;
    write_volume(&ctx.path("mean.lsdv"), &mean_v)?;
    write_volume(&ctx.path("std.lsdv"), &std_v)?;
    let peak = inst.truth.as_ref().map_or(mean_v.max_abs(), CineVolume::max_abs);
    write_frame(ctx, "mean.pgm", &mean_v, peak)?;
    write_frame(ctx, "std.pgm", &std_v, std_v.max_abs())?;
    let mut rows: Vec<Vec<String>> = seeds
        .iter()
        .zip(&recons)
        .map(|(s, x)| Ok(vec![s.to_string(), fmt_f64(quality(x, inst.truth.as_ref())?.0)]))
        .collect::<Result<_>>()?;
    let mean_psnr = quality(&mean_v, inst.truth.as_ref())?.0;
    rows.push(vec!["mean".into(), fmt_f64(mean_psnr)]);
    write_csv(&ctx.path("uncertainty.csv"), &["seed", "psnr"], &rows)?;
    ctx.say(format!(
        "mean image psnr {mean_psnr:.2} dB; max pixel std {:.4e}",
        std.iter().fold(0.0f64, |a, &b| a.max(b))
    ));
    Ok(())
}
