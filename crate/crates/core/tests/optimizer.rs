use lambdatune_core::opt::{bracket_minimum, brent_minimize, Bracket, OptimizerConfig, SearchDomain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(xtol: f64) -> OptimizerConfig {
    OptimizerConfig { xtol, max_iters: 200, search_domain: SearchDomain::Linear, ..Default::default() }
}

/// Plain golden-section search, run to a much tighter tolerance than the
/// optimizer under test.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-12 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

/// Convex quartic `p(t) = α t² + β t³ + γ t⁴` around `m`; convex because
/// β² < 8αγ/3.
struct Quartic {
    m: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Quartic {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let alpha = rng.gen_range(0.1..5.0);
        let gamma = rng.gen_range(0.01..2.0);
        let bound = (8.0 * alpha * gamma / 3.0f64).sqrt();
        Quartic { m: rng.gen_range(-3.0..3.0), alpha, beta: rng.gen_range(-0.9..0.9) * bound, gamma }
    }

    fn eval(&self, x: f64) -> f64 {
        let t = x - self.m;
        self.alpha * t * t + self.beta * t.powi(3) + self.gamma * t.powi(4)
    }
}

#[test]
fn analytic_minima() {
    let cfg = config(1e-4);
    let f = |x: f64| (x - 2.5).powi(2);
    let m = brent_minimize(f, &bracket_minimum(f, 0.0, 1.0, 50).unwrap(), &cfg).unwrap();
    assert!((m.x - 2.5).abs() < 1e-3, "{}", m.x);
    let m = brent_minimize(f64::cos, &bracket_minimum(f64::cos, 2.0, 2.5, 50).unwrap(), &cfg).unwrap();
    assert!((m.x - std::f64::consts::PI).abs() < 1e-3, "{}", m.x);
}

#[test]
fn agrees_with_golden_section_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for xtol in [1e-2, 1e-3, 1e-4] {
        for _ in 0..50 {
            let q = Quartic::random(&mut rng);
            let f = |x: f64| q.eval(x);
            let want = golden_section(f, q.m - 10.0, q.m + 10.0);
            let start = rng.gen_range(-5.0..5.0);
            let bracket = bracket_minimum(f, start, start + 0.5, 60).unwrap();
            assert!(bracket.contains(want));
            let got = brent_minimize(f, &bracket, &config(xtol)).unwrap();
            assert!(got.trace.converged);
            assert!((got.x - want).abs() <= 2.0 * xtol, "xtol {xtol}: got {} want {want}", got.x);
        }
    }
}

#[test]
fn evaluations_stay_inside_bracket() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let q = Quartic::random(&mut rng);
        let f = |x: f64| q.eval(x);
        let bracket = bracket_minimum(f, 0.0, 1.0, 60).unwrap();
        let got = brent_minimize(f, &bracket, &config(1e-4)).unwrap();
        let (lo, hi) = (bracket.a.min(bracket.c), bracket.a.max(bracket.c));
        for &(x, _) in &got.trace.evaluations {
            assert!(x > lo && x < hi, "{x} outside ({lo}, {hi})");
        }
        // Interval widths never grow.
        assert!(got.trace.widths.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }
}

#[test]
fn returns_best_evaluated_point() {
    let f = |x: f64| (x - 1.0).abs().sqrt();
    let bracket = Bracket::new(-1.0, 0.5, 4.0, f(-1.0), f(0.5), f(4.0)).unwrap();
    let got = brent_minimize(f, &bracket, &OptimizerConfig { max_iters: 6, ..config(1e-6) }).unwrap();
    let best = got.trace.evaluations.iter().map(|e| e.1).fold(bracket.fb, f64::min);
    assert_eq!(got.fx, best);
    assert_eq!(got.fx, f(got.x));
}
