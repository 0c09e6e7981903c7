//! Derivative-free scalar minimization: golden-ratio bracketing followed by
//! Brent's parabolic/golden-section search.

use std::convert::Infallible;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;
/// `(3 - sqrt(5)) / 2`
const GOLDEN_SECTION: f64 = 0.381_966_011_250_105_1;
/// Parabolic steps with a smaller denominator fall back to golden section.
const PARABOLA_GUARD: f64 = 1e-21;

#[derive(Debug, Error, PartialEq)]
pub enum OptError {
    #[error("bracket requires a < b < c with f(b) below both ends: ({a}, {b}, {c}) -> ({fa}, {fb}, {fc})")]
    InvalidBracket { a: f64, b: f64, c: f64, fa: f64, fb: f64, fc: f64 },
    #[error("no bracket found after {0} expansions")]
    BracketFailure(usize),
    #[error("function decreases up to the search boundary {0}")]
    BoundaryMinimum(f64),
    #[error("bracket seeds must differ")]
    DegenerateSeeds,
    #[error("invalid optimizer config: {0}")]
    Config(String),
}

/// Error from a fallible search: either the search itself failed or the
/// objective did.
#[derive(Debug, PartialEq)]
pub enum SearchError<E> {
    Search(OptError),
    Objective(E),
}

impl<E> From<OptError> for SearchError<E> {
    fn from(e: OptError) -> Self {
        SearchError::Search(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub fa: f64,
    pub fb: f64,
    pub fc: f64,
}

impl Bracket {
    /// Accepts the triple in either orientation; stored with `a < c`.
    pub fn new(a: f64, b: f64, c: f64, fa: f64, fb: f64, fc: f64) -> Result<Self, OptError> {
        let (a, c, fa, fc) = if a > c { (c, a, fc, fa) } else { (a, c, fa, fc) };
        if a < b && b < c && fb < fa && fb < fc {
            Ok(Bracket { a, b, c, fa, fb, fc })
        } else {
            Err(OptError::InvalidBracket { a, b, c, fa, fb, fc })
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a <= x && x <= self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchDomain {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Absolute tolerance on the search argument (log k in the logarithmic domain).
    pub xtol: f64,
    pub max_iters: usize,
    pub search_domain: SearchDomain,
    pub k_min: f64,
    pub k_max: f64,
    pub max_expansions: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            xtol: 0.01,
            max_iters: 25,
            search_domain: SearchDomain::Logarithmic,
            k_min: 1.0 / 16.0,
            k_max: 16.0,
            max_expansions: 20,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        if !(self.xtol.is_finite() && self.xtol > 0.0) {
            return Err(OptError::Config(format!("xtol must be positive, got {}", self.xtol)));
        }
        if self.max_iters < 3 {
            return Err(OptError::Config(format!("max_iters must be at least 3, got {}", self.max_iters)));
        }
        if !(self.k_min > 0.0 && self.k_min < 1.0 && self.k_max > 1.0 && self.k_max.is_finite()) {
            return Err(OptError::Config(format!(
                "k domain [{}, {}] must be positive and contain 1",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }

    /// Maps `k` into the search coordinate.
    pub fn to_search(&self, k: f64) -> f64 {
        match self.search_domain {
            SearchDomain::Linear => k,
            SearchDomain::Logarithmic => k.ln(),
        }
    }

    pub fn from_search(&self, x: f64) -> f64 {
        match self.search_domain {
            SearchDomain::Linear => x,
            SearchDomain::Logarithmic => x.exp(),
        }
    }

    pub fn search_bounds(&self) -> (f64, f64) {
        (self.to_search(self.k_min), self.to_search(self.k_max))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    /// Post-bracket evaluations in order.
    pub evaluations: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    /// Width of the search interval after each iteration.
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: f64,
    pub fx: f64,
    pub trace: OptimizerTrace,
}

fn unwrap_infallible<T>(r: Result<T, SearchError<Infallible>>) -> Result<T, OptError> {
    r.map_err(|e| match e {
        SearchError::Search(e) => e,
        SearchError::Objective(never) => match never {},
    })
}

pub fn bracket_minimum<F: FnMut(f64) -> f64>(
    mut f: F,
    x0: f64,
    x1: f64,
    max_expansions: usize,
) -> Result<Bracket, OptError> {
    unwrap_infallible(try_bracket_minimum(
        |x| Ok(f(x)),
        x0,
        x1,
        max_expansions,
        (f64::NEG_INFINITY, f64::INFINITY),
    ))
}

/// Golden-ratio downhill expansion from the seeds `x0`, `x1`, confined to
/// `bounds`. Fails if the function keeps decreasing up to a bound or no
/// bracket appears within `max_expansions` steps.
pub fn try_bracket_minimum<F, E>(
    mut f: F,
    x0: f64,
    x1: f64,
    max_expansions: usize,
    bounds: (f64, f64),
) -> Result<Bracket, SearchError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    if x0 == x1 || !x0.is_finite() || !x1.is_finite() {
        return Err(OptError::DegenerateSeeds.into());
    }
    let (lo, hi) = bounds;
    let mut eval = |x: f64| f(x).map_err(SearchError::Objective);

    let (mut a, mut b) = (x0, x1);
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let step = |a: f64, b: f64| (b + GOLDEN_RATIO * (b - a)).clamp(lo, hi);
    let mut c = step(a, b);
    if c == b {
        return Err(OptError::BoundaryMinimum(b).into());
    }
    let mut fc = eval(c)?;
    let mut expansions = 0;
    loop {
        if fb < fc {
            if fb < fa {
                return Ok(Bracket::new(a, b, c, fa, fb, fc)?);
            }
            // Flat between a and b: nothing downhill left to follow.
            return Err(OptError::BracketFailure(expansions).into());
        }
        if c == lo || c == hi {
            return Err(OptError::BoundaryMinimum(c).into());
        }
        expansions += 1;
        if expansions > max_expansions {
            return Err(OptError::BracketFailure(max_expansions).into());
        }
        a = b;
        fa = fb;
        b = c;
        fb = fc;
        c = step(a, b);
        fc = eval(c)?;
    }
}

pub fn brent_minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    bracket: &Bracket,
    config: &OptimizerConfig,
) -> Result<Minimum, OptError> {
    unwrap_infallible(try_brent_minimize(|x| Ok(f(x)), bracket, config))
}

/// Brent's method over a valid bracket. Terminates once the best point is
/// known to within `xtol`, or after `max_iters` evaluations with
/// `converged = false`. The returned point is always one that was evaluated.
pub fn try_brent_minimize<F, E>(
    mut f: F,
    bracket: &Bracket,
    config: &OptimizerConfig,
) -> Result<Minimum, SearchError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    config.validate()?;
    let bracket = Bracket::new(bracket.a, bracket.b, bracket.c, bracket.fa, bracket.fb, bracket.fc)?;
    let rel = f64::EPSILON.sqrt();
    let abs = 0.5 * config.xtol;

    let (mut a, mut b) = (bracket.a, bracket.c);
    let (mut x, mut w, mut v) = (bracket.b, bracket.b, bracket.b);
    let (mut fx, mut fw, mut fv) = (bracket.fb, bracket.fb, bracket.fb);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut trace = OptimizerTrace::default();

    loop {
        let xm = 0.5 * (a + b);
        let tol1 = rel * x.abs() + abs;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            trace.converged = true;
            break;
        }
        if trace.iterations >= config.max_iters {
            break;
        }

        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if q.abs() >= PARABOLA_GUARD && p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN_SECTION * e;
        }
        let mut u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        if !(u > a && u < b) {
            // Round-off pushed the probe onto the interval edge.
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN_SECTION * e;
            u = x + d;
        }

        let fu = f(u).map_err(SearchError::Objective)?;
        trace.iterations += 1;
        trace.evaluations.push((u, fu));

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
        trace.widths.push(b - a);
    }

    Ok(Minimum { x, fx, trace })
}
