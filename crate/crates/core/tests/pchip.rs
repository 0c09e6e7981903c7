mod common;

use common::OraclePchip;
use lambdatune_core::pchip::{pchip_eval, pchip_fit, Interpolant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_monotone<R: Rng>(rng: &mut R, n: usize, increasing: bool) -> Vec<(f64, f64)> {
    let mut x = rng.gen_range(-5.0..5.0);
    let mut y = rng.gen_range(-5.0..5.0);
    (0..n)
        .map(|_| {
            let p = (x, y);
            x += rng.gen_range(0.01..3.0);
            // Occasional flat runs exercise the zero-slope branch.
            let step = if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..4.0) };
            y += if increasing { step } else { -step };
            p
        })
        .collect()
}

/// One-sided derivative at `x` from the left (`dir = -1`) or right
/// (`dir = 1`), Richardson-extrapolated to second order.
fn one_sided(f: &Interpolant, x: f64, h: f64, dir: f64) -> f64 {
    let d = |h: f64| (pchip_eval(f, x + dir * h).unwrap() - pchip_eval(f, x).unwrap()) / (dir * h);
    2.0 * d(h / 2.0) - d(h)
}

#[test]
fn exact_at_knots() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let (n, inc) = (rng.gen_range(2..10), rng.gen_bool(0.5));
        let pts = random_monotone(&mut rng, n, inc);
        let f = pchip_fit(&pts).unwrap();
        for &(x, y) in &pts {
            assert!((pchip_eval(&f, x).unwrap() - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn preserves_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let increasing = rng.gen_bool(0.5);
        let n = rng.gen_range(3..12);
        let pts = random_monotone(&mut rng, n, increasing);
        let f = pchip_fit(&pts).unwrap();
        let (lo, hi) = f.span();
        let mut prev = pchip_eval(&f, lo).unwrap();
        for i in 1..=10_000 {
            let v = pchip_eval(&f, (lo + (hi - lo) * i as f64 / 10_000.0).min(hi)).unwrap();
            let tol = 1e-12 * v.abs().max(1.0);
            if increasing {
                assert!(v >= prev - tol);
            } else {
                assert!(v <= prev + tol);
            }
            prev = v;
        }
    }
}

#[test]
fn agrees_with_reference_formulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = rng.gen_range(3..8);
        let pts = random_monotone(&mut rng, n, true);
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        let ours = pchip_fit(&pts).unwrap();
        let oracle = OraclePchip::new(&x, &y);
        for i in 0..=500 {
            let t = (x[0] + (x[x.len() - 1] - x[0]) * i as f64 / 500.0).min(x[x.len() - 1]);
            assert!((pchip_eval(&ours, t).unwrap() - oracle.eval(t)).abs() < 1e-9);
        }
    }
}

#[test]
fn refuses_to_extrapolate() {
    let f = pchip_fit(&[(0.0, 0.0), (1.0, 1.0), (2.0, 4.0)]).unwrap();
    assert!(pchip_eval(&f, -1e-9).is_err());
    assert!(pchip_eval(&f, 2.0 + 1e-9).is_err());
}

proptest! {
    #[test]
    fn c1_at_interior_knots(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_monotone(&mut rng, 6, true);
        let f = pchip_fit(&pts).unwrap();
        for i in 1..pts.len() - 1 {
            let x = pts[i].0;
            let h = 1e-4 * (pts[i + 1].0 - pts[i].0).min(pts[i].0 - pts[i - 1].0);
            let left = one_sided(&f, x, h, -1.0);
            let right = one_sided(&f, x, h, 1.0);
            // Relative to the local secant slopes, which set the scale of f'.
            let secant = |a: usize, b: usize| ((pts[b].1 - pts[a].1) / (pts[b].0 - pts[a].0)).abs();
            let scale = left.abs().max(right.abs()).max(secant(i - 1, i)).max(secant(i, i + 1)).max(1.0);
            prop_assert!((left - right).abs() / scale < 1e-6, "left {left} right {right}");
            prop_assert!((left - f.slopes()[i]).abs() / scale < 1e-6);
        }
    }
}
