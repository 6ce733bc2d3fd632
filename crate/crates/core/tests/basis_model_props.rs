mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use vcm_core::basis::{DensityMeasure, DictionaryKind, QuadratureSpec, TrigDensity};
use vcm_core::model::{design_inner, Observation};
use vcm_core::{CoordinateMatrix, Dictionary, VcFunction};

fn weighted() -> DensityMeasure {
    DensityMeasure::weighted_trig(
        TrigDensity {
            cos: vec![0.3],
            sin: vec![0.1],
        },
        QuadratureSpec::default(),
    )
    .unwrap()
}

#[test]
fn fourier_matches_reference_evaluation() {
    let dict = Dictionary::fourier(9).unwrap();
    for k in 0..=20 {
        let t = k as f64 / 20.0;
        let got = dict.eval_basis(t).unwrap();
        for (a, b) in got.iter().zip(fourier(9, t)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn weighted_fourier_sup_norm() {
    let m = weighted();
    let dict = Dictionary::new(DictionaryKind::Fourier, 7, m.clone()).unwrap();
    assert!((dict.c_phi() - std::f64::consts::SQRT_2 / m.g1().sqrt()).abs() < 1e-12);
    assert!(dict.sup_norm_constant(4096).unwrap() <= dict.c_phi());
    assert!(dict.gram_matrix().unwrap().max_deviation < 1e-8);
}

#[test]
fn parseval_in_span() {
    for kind in [DictionaryKind::Fourier, DictionaryKind::Polynomial, DictionaryKind::HaarWavelet] {
        for measure in [DensityMeasure::lebesgue(), weighted()] {
            let dict = Dictionary::new(kind, 6, measure.clone()).unwrap();
            let coeffs = [0.5, -1.0, 0.25, 2.0, 0.0, -0.75];
            let f = |t: f64| {
                let phi = dict.eval_basis(t.clamp(0.0, 1.0)).unwrap();
                phi.iter().zip(coeffs).map(|(p, c)| p * c).sum::<f64>()
            };
            let norm2 = measure.integrate(|t| f(t).powi(2));
            let sum2: f64 = coeffs.iter().map(|c| c * c).sum();
            assert!((norm2 - sum2).abs() < 1e-9, "{kind:?}");
            let e = dict.expand_function(f).unwrap();
            for (a, b) in e.coeffs.iter().zip(coeffs) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!(e.residual_l2 < 1e-6);
        }
    }
}

#[test]
fn residuals_decay_with_l() {
    let f = |t: f64| (t * (1.0 - t)).sqrt() + t * t;
    for kind in [DictionaryKind::Fourier, DictionaryKind::Polynomial, DictionaryKind::HaarWavelet] {
        for l in [2usize, 4, 8, 16] {
            let small = Dictionary::new(kind, l, DensityMeasure::lebesgue()).unwrap();
            let big = Dictionary::new(kind, 2 * l, DensityMeasure::lebesgue()).unwrap();
            let r1 = small.expand_function(f).unwrap().residual_l2;
            let r2 = big.expand_function(f).unwrap().residual_l2;
            assert!(r2 <= r1 + 1e-12, "{kind:?} l={l}: {r2} > {r1}");
        }
    }
}

#[test]
fn restricted_isometry_holds_empirically() {
    // E⟨X,A⟩² ≥ ω_min‖A‖₂² with W canonical uniform (ω_min = 1/p) and t uniform
    let mut r = rng(77);
    let (p, l, m) = (4, 5, 20_000);
    let dict = Dictionary::fourier(l).unwrap();
    let draws: Vec<(usize, f64)> = (0..m).map(|_| (r.random_range(0..p), r.random::<f64>())).collect();
    for _ in 0..50 {
        let a = random_matrix(&mut r, p, l);
        let vals: Vec<f64> = draws
            .iter()
            .map(|&(k, t)| {
                let phi = dict.eval_basis(t).unwrap();
                (0..l).map(|j| a[(k, j)] * phi[j]).sum::<f64>().powi(2)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        let rhs = a.norm_squared() / p as f64;
        assert!(mean >= rhs - 3.0 * se, "{mean} < {rhs} - 3·{se}");
    }
}

fn obs_strategy(p: usize) -> impl Strategy<Value = Observation> {
    (prop::collection::vec(-1.0f64..1.0, p), 0.0f64..=1.0, -5.0f64..5.0).prop_map(|(mut w, t, y)| {
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 {
            w.iter_mut().for_each(|v| *v /= norm * (1.0 + 1e-12));
        }
        Observation::new(w, t, y).unwrap()
    })
}

proptest! {
    #[test]
    fn design_inner_is_bilinear_and_bounded(
        obs in obs_strategy(3),
        a in prop::collection::vec(-2.0f64..2.0, 12),
        b in prop::collection::vec(-2.0f64..2.0, 12),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
        kind in prop::sample::select(vec![DictionaryKind::Fourier, DictionaryKind::Polynomial, DictionaryKind::HaarWavelet]),
    ) {
        let dict = Dictionary::new(kind, 4, DensityMeasure::lebesgue()).unwrap();
        let am = DMatrix::from_vec(3, 4, a);
        let bm = DMatrix::from_vec(3, 4, b);
        let comb = CoordinateMatrix::new(&am * alpha + &bm * beta).unwrap();
        let ca = CoordinateMatrix::new(am.clone()).unwrap();
        let cb = CoordinateMatrix::new(bm).unwrap();
        let lhs = design_inner(&comb, &obs, &dict).unwrap();
        let rhs = alpha * design_inner(&ca, &obs, &dict).unwrap() + beta * design_inner(&cb, &obs, &dict).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + lhs.abs()));
        let wn = obs.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = wn * dict.c_phi() * 2.0 * am.norm();
        prop_assert!(design_inner(&ca, &obs, &dict).unwrap().abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn predict_is_linear(
        a in prop::collection::vec(-2.0f64..2.0, 10),
        b in prop::collection::vec(-2.0f64..2.0, 10),
        t in 0.0f64..=1.0,
        alpha in -3.0f64..3.0,
    ) {
        let dict = Dictionary::fourier(5).unwrap();
        let am = DMatrix::from_vec(2, 5, a);
        let bm = DMatrix::from_vec(2, 5, b);
        let f = |m: DMatrix<f64>| VcFunction::new(CoordinateMatrix::new(m).unwrap(), dict.clone()).unwrap().predict(t).unwrap();
        let lhs = f(&am * alpha + &bm);
        let (fa, fb) = (f(am), f(bm));
        for k in 0..2 {
            prop_assert!((lhs[k] - (alpha * fa[k] + fb[k])).abs() < 1e-11);
        }
    }

    #[test]
    fn gram_is_identity_for_random_sizes(
        l in 1usize..=64,
        kind in prop::sample::select(vec![DictionaryKind::Fourier, DictionaryKind::Polynomial, DictionaryKind::HaarWavelet]),
    ) {
        let dict = Dictionary::new(kind, l, DensityMeasure::lebesgue()).unwrap();
        prop_assert!(dict.gram_matrix().unwrap().max_deviation < 1e-8);
        prop_assert!(dict.sup_norm_constant(1024).unwrap() <= dict.c_phi());
    }
}
