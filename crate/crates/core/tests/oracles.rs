//! Independent-implementation oracles built on nalgebra's dense linear algebra.

use lsdip::eadmm::{init_state, Problem, SolverConfig};
use lsdip::forward::{forward, make_mask, CoilSensitivities, ForwardModel, SamplingMask};
use lsdip::metrics::augmented_lagrangian;
use lsdip::phantom::{make_coils, make_phantom, PhantomSpec};
use lsdip::prox::{svt, TransformKind};
use lsdip::rng::Stream;
use lsdip::volume::{frame_mean, to_casorati, CasoratiMatrix, CineVolume, Dims};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn random_matrix(rows: usize, cols: usize, s: &mut Stream) -> CasoratiMatrix {
    let data = (0..rows * cols).map(|_| s.complex_normal(1.0)).collect();
    CasoratiMatrix::from_vec(rows, cols, data).unwrap()
}

fn dense(m: &CasoratiMatrix) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c))
}

fn singular_values(m: &CasoratiMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = dense(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Full SVD, shrink, recompose.
fn svt_oracle(m: &CasoratiMatrix, tau: f64) -> DMatrix<Complex64> {
    let mut svd = dense(m).svd(true, true);
    for s in svd.singular_values.iter_mut() {
        *s = (*s - tau).max(0.0);
    }
    svd.recompose().unwrap()
}

fn frob_diff(a: &CasoratiMatrix, b: &DMatrix<Complex64>) -> f64 {
    let mut s = 0.0;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            s += (a.get(r, c) - b[(r, c)]).norm_sqr();
        }
    }
    s.sqrt()
}

#[test]
fn svt_matches_full_svd_on_tall_matrices() {
    let mut s = Stream::new(21, "svt-oracle");
    for _ in 0..50 {
        let m = random_matrix(24, 6, &mut s);
        let sv = singular_values(&m);
        let tau = s.uniform_range(0.0, sv[0]);
        let err = frob_diff(&svt(&m, tau).unwrap(), &svt_oracle(&m, tau));
        assert!(err <= 1e-8, "svt error {err}");
    }
}

#[test]
fn svt_at_median_singular_value() {
    let mut s = Stream::new(22, "svt-median");
    let m = random_matrix(12, 5, &mut s);
    let tau = singular_values(&m)[2];
    let out = svt(&m, tau).unwrap();
    assert!(frob_diff(&out, &svt_oracle(&m, tau)) <= 1e-8);
    let sv = singular_values(&out);
    assert!(sv[2..].iter().all(|&x| x <= 1e-10));
}

#[test]
fn op_norm_matches_dense_eigenvalue() {
    let (h, w) = (16, 16);
    let dims = Dims::new(h, w, 1);
    let mask = make_mask(w, 2.0, 4, 3).unwrap();
    let mut s = Stream::new(5, "coil");
    let maps: Vec<Complex64> = (0..h * w).map(|_| s.complex_normal(1.0)).collect();
    let coils = CoilSensitivities::from_vec(1, h, w, maps).unwrap();
    let fm = ForwardModel::new(dims, coils, mask).unwrap();
    let n = dims.len();
    let m = fm.kspace_dims().len();
    let mut a = DMatrix::<Complex64>::zeros(m, n);
    for j in 0..n {
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        e[j] = Complex64::new(1.0, 0.0);
        for (i, v) in fm.forward_raw(&e).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let gram = a.adjoint() * &a;
    let top = gram.symmetric_eigenvalues().iter().fold(0.0f64, |acc, &x| acc.max(x));
    let est = fm.estimate_op_norm_sq(200);
    assert!((est - top).abs() <= 1e-6 * top, "{est} vs {top}");
}

fn oracle_lagrangian(
    v: &CasoratiMatrix,
    u: &CasoratiMatrix,
    l: &CasoratiMatrix,
    s: &CasoratiMatrix,
    d_l: &CasoratiMatrix,
    d_s: &CasoratiMatrix,
    fm: &ForwardModel,
    y: &[Complex64],
    cfg: &SolverConfig,
) -> f64 {
    let x: Vec<Complex64> = v.as_slice().iter().zip(u.as_slice()).map(|(a, b)| a + b).collect();
    let data: f64 = fm.forward_raw(&x).iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 2.0;
    let nuclear: f64 = singular_values(v).iter().sum();
    let l1: f64 = u.as_slice().iter().map(|z| z.norm()).sum();
    let pen = |aux: &CasoratiMatrix, out: &CasoratiMatrix, d: &CasoratiMatrix, rho: f64| {
        let mut inner = 0.0;
        for i in 0..aux.as_slice().len() {
            let diff = aux.as_slice()[i] - out.as_slice()[i];
            inner += (diff.conj() * d.as_slice()[i]).re;
            inner += diff.norm_sqr() / 2.0;
        }
        rho * inner
    };
    data + cfg.lambda_l * nuclear + cfg.lambda_s * l1 + pen(v, l, d_l, cfg.rho_l) + pen(u, s, d_s, cfg.rho_s)
}

fn small_problem() -> (Problem, CineVolume) {
    let spec = PhantomSpec {
        dims: Dims::new(16, 16, 4),
        motion_amplitude: 1.0,
        ..PhantomSpec::std_a()
    };
    let x = make_phantom(&spec).unwrap();
    let coils = make_coils(16, 16, 2, 1);
    let mask = make_mask(16, 2.0, 4, 1).unwrap();
    let y = forward(&x, &coils, &mask).unwrap();
    (Problem::new(&y, &coils, TransformKind::Identity).unwrap(), x)
}

#[test]
fn augmented_lagrangian_matches_second_implementation() {
    let (prob, _) = small_problem();
    let cfg = SolverConfig {
        hidden: vec![4],
        upsample: 0,
        latent_channels: 2,
        ..Default::default()
    };
    let mut st = init_state(&prob, &cfg).unwrap();
    let mut s = Stream::new(8, "al");
    let (r, c) = (st.v.rows(), st.v.cols());
    st.d_l = random_matrix(r, c, &mut s);
    st.d_s = random_matrix(r, c, &mut s);
    st.u = random_matrix(r, c, &mut s);
    let got = augmented_lagrangian(&st, &prob, &cfg);
    let want = oracle_lagrangian(&st.v, &st.u, &st.l_out, &st.s_out, &st.d_l, &st.d_s, &prob.fm, &prob.y, &cfg);
    assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn augmented_lagrangian_zero_state() {
    let (h, w, t) = (8, 8, 2);
    let dims = Dims::new(h, w, t);
    let coils = make_coils(h, w, 2, 3);
    let y = forward(&CineVolume::zeros(dims), &coils, &SamplingMask::full(w)).unwrap();
    let prob = Problem::new(&y, &coils, TransformKind::Identity).unwrap();
    let cfg = SolverConfig {
        hidden: vec![2],
        upsample: 0,
        latent_channels: 1,
        ..Default::default()
    };
    let mut st = init_state(&prob, &cfg).unwrap();
    let zero = CasoratiMatrix::zeros(h * w, t);
    st.l_out = zero.clone();
    st.s_out = zero;
    assert_eq!(augmented_lagrangian(&st, &prob, &cfg), 0.0);
}

#[test]
fn penalty_cancels_when_constraints_hold() {
    let (prob, _) = small_problem();
    let cfg = SolverConfig {
        hidden: vec![4],
        upsample: 0,
        latent_channels: 2,
        ..Default::default()
    };
    let mut st = init_state(&prob, &cfg).unwrap();
    let mut s = Stream::new(9, "cancel");
    let (r, c) = (st.v.rows(), st.v.cols());
    st.d_l = random_matrix(r, c, &mut s);
    st.d_s = random_matrix(r, c, &mut s);
    st.l_out = st.v.clone();
    st.s_out = st.u.clone();
    let got = augmented_lagrangian(&st, &prob, &cfg);
    let x: Vec<Complex64> = st.v.as_slice().iter().zip(st.u.as_slice()).map(|(a, b)| a + b).collect();
    let l1: f64 = st.u.as_slice().iter().map(|z| z.norm()).sum();
    let plain = prob.data_term(&x) + cfg.lambda_l * singular_values(&st.v).iter().sum::<f64>() + cfg.lambda_s * l1;
    assert!((got - plain).abs() <= 1e-10 * plain.max(1.0), "{got} vs {plain}");
}

#[test]
fn static_phantom_is_rank_one() {
    let spec = PhantomSpec {
        moving_ellipses: 0,
        ..PhantomSpec::std_a()
    };
    let sv = singular_values(&to_casorati(&make_phantom(&spec).unwrap()));
    assert!(sv[0] > 0.0);
    assert!(sv[1..].iter().all(|&x| x <= 1e-10 * sv[0]));
}

#[test]
fn moving_phantom_has_dynamic_residual() {
    let x = make_phantom(&PhantomSpec::std_a()).unwrap();
    let mean = frame_mean(&x);
    let mut centered = x.clone();
    for t in 0..x.dims().t {
        for (a, b) in centered.frame_mut(t).iter_mut().zip(mean.as_slice()) {
            *a -= b;
        }
    }
    let sv = singular_values(&to_casorati(&centered));
    let tail: f64 = sv[1..].iter().map(|s| s * s).sum();
    assert!(tail > 0.0);
    assert!(sv[0] > 0.0);
}
