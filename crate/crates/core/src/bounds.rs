//! Convergence-bound evaluation.
//!
//! * the periodic disagreement recursion and its closed-form average bound,
//!   with a brute-force iterator as oracle;
//! * the per-round right-hand sides for S2S/S2A in the convex and non-convex
//!   cases, with explicit constants;
//! * the round count `T(ε)` under numeric stepsize tuning, or under the
//!   unit-constant rate expressions;
//! * message costs `Γ_S2S = (2K/H)·T`, `Γ_S2A = ((K+n)/H)·T` and parameter sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Primitive;

const ETA_GRID: usize = 200;
const ETA_SPAN: f64 = 1e-8;
const GOLDEN_ITERS: usize = 80;
const T_MAX: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub h: usize,
    pub t: usize,
}

impl RecursionParams {
    /// `C = a1·a2^(H−1)`.
    pub fn c(&self) -> f64 {
        self.a1 * self.a2.powi(self.h as i32 - 1)
    }

    /// `D = a1·b2·(1 − a2^(H−1))/(1 − a2) + b1`.
    pub fn d(&self) -> f64 {
        self.a1 * self.b2 * geometric_sum(self.a2, self.h - 1) + self.b1
    }
}

/// `Σ_{k<m} a^k`.
fn geometric_sum(a: f64, m: usize) -> f64 {
    if a == 1.0 {
        m as f64
    } else {
        (1.0 - a.powi(m as i32)) / (1.0 - a)
    }
}

/// Upper bound on `(1/(T+1)) Σ_{t≤T} Ξ(t)` for `Ξ(0) = 0` and
/// `Ξ(t) ≤ a1 Ξ(t−1) + b1` when `H | t`, `a2 Ξ(t−1) + b2` otherwise.
pub fn recursion_bound(p: &RecursionParams) -> Result<f64> {
    let valid = [p.a1, p.a2, p.b1, p.b2].iter().all(|v| *v >= 0.0 && v.is_finite());
    if !valid || p.h == 0 {
        return Err(Error::InvalidParams(format!(
            "{p:?}: need nonnegative finite constants and H ≥ 1"
        )));
    }
    let c = p.c();
    if c >= 1.0 {
        return Err(Error::InvalidParams(format!("C = a1·a2^(H−1) = {c} must be below 1")));
    }
    if p.a2 == 1.0 {
        return Err(Error::InvalidParams("a2 = 1 has no closed form".into()));
    }
    let (a2, b2, h) = (p.a2, p.b2, p.h as f64);
    let d = p.d();
    let scale = 1.0 / h + 1.0 / (p.t as f64 + 1.0);
    let inner = if a2 < 1.0 {
        d / ((1.0 - c) * (1.0 - a2)) + b2 / (1.0 - a2) * (h - 1.0)
    } else {
        let ah = a2.powi(p.h as i32);
        d / (1.0 - c) * (ah - 1.0) / (a2 - 1.0) + b2 * (ah - a2 * h + h - 1.0) / ((a2 - 1.0) * (a2 - 1.0))
    };
    Ok(inner * scale)
}

/// Iterates the recursion with equality from `Ξ(0) = 0` and returns the
/// average over `t = 0..=T`.
pub fn recursion_bruteforce(p: &RecursionParams) -> f64 {
    let mut xi = 0.0;
    let mut sum = 0.0;
    for t in 1..=p.t {
        xi = if t % p.h == 0 {
            p.a1 * xi + p.b1
        } else {
            p.a2 * xi + p.b2
        };
        sum += xi;
    }
    sum / (p.t as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Convex,
    NonConvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub n: usize,
    pub k: usize,
    pub h: usize,
    pub p: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub sigma_bar: f64,
    pub zeta_intra: f64,
    pub zeta_inter: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub r0_sq: f64,
    #[serde(default)]
    pub f0: f64,
    pub regime: Regime,
}

impl BoundInputs {
    pub fn validate(&self, primitive: Primitive) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidK { n: self.n, k: self.k });
        }
        if primitive == Primitive::S2S && self.k == 1 {
            return Err(Error::DivergentAtK1);
        }
        if self.h == 0 {
            return bad("H must be at least 1");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p must lie in (0, 1]");
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad("L must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        let nonneg = [self.sigma_bar, self.zeta_intra, self.zeta_inter, self.r0_sq, self.f0];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("sigma_bar, zeta_intra, zeta_inter, r0_sq and f0 must be finite and ≥ 0");
        }
        Ok(())
    }

    /// Stepsize cap `p/(8L)`.
    pub fn eta_cap(&self) -> f64 {
        self.p / (8.0 * self.l)
    }

    /// `(n−1)/(K−1)`.
    pub fn s2s_factor(&self) -> f64 {
        (self.n as f64 - 1.0) / (self.k as f64 - 1.0)
    }

    /// `(n−K)/(K(n−1))`; zero when `n = 1`.
    pub fn s2a_factor(&self) -> f64 {
        if self.n <= 1 {
            return 0.0;
        }
        let (n, k) = (self.n as f64, self.k as f64);
        (n - k) / (k * (n - 1.0))
    }

    fn initial_error(&self) -> f64 {
        match self.regime {
            Regime::Convex => self.r0_sq,
            Regime::NonConvex => 4.0 * self.f0,
        }
    }
}

/// Right-hand side of the averaged convergence bound after `T` rounds with
/// constant stepsize `eta`.
pub fn per_round_rhs(inputs: &BoundInputs, primitive: Primitive, eta: f64, t: u64) -> Result<f64> {
    inputs.validate(primitive)?;
    let cap = inputs.eta_cap();
    if !(eta > 0.0) || eta > cap {
        return Err(Error::StepsizeTooLarge { eta, cap });
    }
    Ok(rhs_unchecked(inputs, primitive, eta, t as f64))
}

fn rhs_unchecked(b: &BoundInputs, primitive: Primitive, eta: f64, t: f64) -> f64 {
    let (l, p, h) = (b.l, b.p, b.h as f64);
    let n = b.n as f64;
    let zi2 = b.zeta_intra * b.zeta_intra;
    let ze2 = b.zeta_inter * b.zeta_inter;
    let s2 = b.sigma_bar * b.sigma_bar;
    let e2 = eta * eta;
    let head = b.initial_error() / (eta * (t + 1.0));
    match (primitive, b.regime) {
        (Primitive::S2S, Regime::Convex) => {
            let r = b.s2s_factor();
            head + eta * s2 / n + r * 72.0 * e2 * l * zi2 / (p * p) + r * r * 210.0 * e2 * l * h * (h - 1.0) * ze2
        }
        (Primitive::S2S, Regime::NonConvex) => {
            let r = b.s2s_factor();
            head + 2.0 * eta * l * s2 / n
                + r * 192.0 * e2 * l * l * zi2 / (p * p)
                + r * r * 560.0 * e2 * l * l * h * (h - 1.0) * ze2
        }
        (Primitive::S2A, Regime::Convex) => {
            let dp = b.s2a_factor();
            head + eta * s2 / n
                + 96.0 * e2 * l * zi2 / (p * p)
                + dp * 54.0 * eta * zi2 / (h * p * p)
                + 16.0 * e2 * l * h * h * ze2
                + dp * 26.0 * eta * h * ze2
        }
        (Primitive::S2A, Regime::NonConvex) => {
            let dp = b.s2a_factor();
            head + 2.0 * eta * l * s2 / n
                + 192.0 * e2 * l * l * zi2 / (p * p)
                + dp * 108.0 * eta * l * zi2 / (h * p * p)
                + 32.0 * e2 * l * l * h * h * ze2
                + dp * 52.0 * eta * l * h * ze2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundResult {
    pub t_rounds: u64,
    pub eta_star: f64,
    pub rhs_at_t: f64,
    pub server_rounds: u64,
    pub uplinks: u64,
    pub downlinks: u64,
}

/// `min_η rhs(η, T)` over `(0, p/(8L)]`: a log-spaced grid, then golden-section
/// refinement in `log η` around the best grid point.
fn tuned_rhs(b: &BoundInputs, primitive: Primitive, t: f64) -> (f64, f64) {
    let cap = b.eta_cap();
    let lo = (cap * ETA_SPAN).ln();
    let hi = cap.ln();
    let step = (hi - lo) / (ETA_GRID - 1) as f64;
    let f = |u: f64| rhs_unchecked(b, primitive, u.exp().min(cap), t);
    let (mut best_i, mut best_v) = (ETA_GRID - 1, f(hi));
    for i in 0..ETA_GRID - 1 {
        let v = f(lo + step * i as f64);
        if v < best_v {
            best_i = i;
            best_v = v;
        }
    }
    let mut best_u = if best_i == ETA_GRID - 1 {
        hi
    } else {
        lo + step * best_i as f64
    };
    let mut a = (best_u - step).max(lo);
    let mut c = (best_u + step).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = c - g * (c - a);
    let mut x2 = a + g * (c - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - g * (c - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (c - a);
            f2 = f(x2);
        }
    }
    for (u, v) in [(x1, f1), (x2, f2)] {
        if v < best_v {
            best_v = v;
            best_u = u;
        }
    }
    (best_u.exp().min(cap), best_v)
}

/// Smallest `T ≥ H − 1` with `min_η rhs(η, T) ≤ ε`, located by doubling then
/// bisection.
pub fn rounds_to_epsilon(inputs: &BoundInputs, primitive: Primitive) -> Result<BoundResult> {
    inputs.validate(primitive)?;
    let ok = |t: u64| tuned_rhs(inputs, primitive, t as f64).1 <= inputs.epsilon;
    let floor = inputs.h as u64 - 1;
    let t = if ok(floor) {
        floor
    } else {
        let mut lo = floor;
        let mut hi = floor.max(1);
        while !ok(hi) {
            if hi >= T_MAX {
                return Err(Error::Unreachable {
                    epsilon: inputs.epsilon,
                });
            }
            lo = hi;
            hi = (hi * 2).min(T_MAX);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let (eta_star, rhs) = tuned_rhs(inputs, primitive, t as f64);
    Ok(with_messages(inputs, primitive, t, eta_star, rhs))
}

fn with_messages(b: &BoundInputs, primitive: Primitive, t: u64, eta_star: f64, rhs_at_t: f64) -> BoundResult {
    let r = t.div_ceil(b.h as u64);
    BoundResult {
        t_rounds: t,
        eta_star,
        rhs_at_t,
        server_rounds: r,
        uplinks: b.k as u64 * r,
        downlinks: primitive.downlinks(b.n, b.k) as u64 * r,
    }
}

/// Round count from the rate expressions of the two theorems with every
/// hidden constant set to one.
pub fn theorem_rounds(b: &BoundInputs, primitive: Primitive) -> Result<f64> {
    b.validate(primitive)?;
    let (l, p, h, e) = (b.l, b.p, b.h as f64, b.epsilon);
    let e15 = e.powf(1.5);
    let (scale, root_l, last) = match b.regime {
        Regime::Convex => (b.r0_sq, l.sqrt(), l / (p * e)),
        Regime::NonConvex => (l * b.f0, 1.0, 1.0 / (p * e)),
    };
    let noise = b.sigma_bar * b.sigma_bar / (b.n as f64 * e * e);
    let (zi, ze) = (b.zeta_intra, b.zeta_inter);
    let body = match primitive {
        Primitive::S2S => {
            let r = b.s2s_factor();
            noise + r.sqrt() * root_l * zi / (p * e15) + r * root_l * h * ze / e15 + last
        }
        Primitive::S2A => {
            let dp = b.s2a_factor();
            noise
                + dp * zi * zi / (h * p * p * e * e)
                + dp * h * ze * ze / (e * e)
                + root_l * zi / (p * e15)
                + root_l * h * ze / e15
                + last
        }
    };
    Ok(scale * body)
}

/// How `T(ε)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RateModel {
    /// Explicit per-round bounds with numerically tuned stepsize.
    #[default]
    Tuned,
    /// Rate expressions of the theorem statements, unit constants.
    Theorem,
}

impl FromStr for RateModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tuned" => Ok(RateModel::Tuned),
            "theorem" => Ok(RateModel::Theorem),
            other => Err(Error::InvalidConfig(format!("unknown rate model {other:?}"))),
        }
    }
}

impl fmt::Display for RateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateModel::Tuned => "tuned",
            RateModel::Theorem => "theorem",
        })
    }
}

/// Round count under `model`; theorem rates are rounded up.
pub fn rounds(inputs: &BoundInputs, primitive: Primitive, model: RateModel) -> Result<u64> {
    match model {
        RateModel::Tuned => Ok(rounds_to_epsilon(inputs, primitive)?.t_rounds),
        RateModel::Theorem => {
            let t = theorem_rounds(inputs, primitive)?.ceil();
            if t >= T_MAX as f64 {
                return Err(Error::Unreachable {
                    epsilon: inputs.epsilon,
                });
            }
            Ok(t as u64)
        }
    }
}

/// `Γ = (2K/H)·T` for S2S, `((K+n)/H)·T` for S2A.
pub fn gamma(primitive: Primitive, t: u64, n: usize, k: usize, h: usize) -> f64 {
    let per_round = (k + primitive.downlinks(n, k)) as f64;
    per_round / h as f64 * t as f64
}

/// `Γ` of `result` and its ratio against `other`, the companion result of the
/// other primitive.
pub fn communication_cost(
    result: &BoundResult,
    primitive: Primitive,
    n: usize,
    k: usize,
    h: usize,
    other: &BoundResult,
) -> (f64, f64) {
    let other_primitive = match primitive {
        Primitive::S2S => Primitive::S2A,
        Primitive::S2A => Primitive::S2S,
    };
    let mine = gamma(primitive, result.t_rounds, n, k, h);
    let theirs = gamma(other_primitive, other.t_rounds, n, k, h);
    (mine, mine / theirs)
}

/// `Γ_S2A/Γ_S2S = (K+n)/(2K) · T_S2A/T_S2S`.
pub fn cost_ratio(t_s2a: u64, t_s2s: u64, n: usize, k: usize) -> f64 {
    (k + n) as f64 / (2.0 * k as f64) * t_s2a as f64 / t_s2s as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SamplingRate,
    ServerPeriod,
    MixingParam,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SamplingRate => "sampling_rate",
            SweepAxis::ServerPeriod => "server_period",
            SweepAxis::MixingParam => "mixing_param",
        }
    }

    /// Applies one grid value to `base`.
    pub fn apply(&self, base: &BoundInputs, value: f64) -> Result<BoundInputs> {
        let invalid = || Error::InvalidGrid {
            axis: self.name().into(),
            value,
        };
        let mut b = *base;
        match self {
            SweepAxis::SamplingRate => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(invalid());
                }
                b.k = ((value * b.n as f64).round() as usize).max(1);
            }
            SweepAxis::ServerPeriod => {
                if !(value >= 1.0 && value.fract() == 0.0 && value.is_finite()) {
                    return Err(invalid());
                }
                b.h = value as usize;
            }
            SweepAxis::MixingParam => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(invalid());
                }
                b.p = value;
            }
        }
        Ok(b)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sampling_rate" | "k_over_n" | "k" => Ok(SweepAxis::SamplingRate),
            "server_period" | "h" => Ok(SweepAxis::ServerPeriod),
            "mixing_param" | "p" => Ok(SweepAxis::MixingParam),
            other => Err(Error::InvalidConfig(format!(
                "unknown axis {other:?} (expected sampling_rate, server_period or mixing_param)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    #[serde(rename = "T_s2s")]
    pub t_s2s: u64,
    #[serde(rename = "T_s2a")]
    pub t_s2a: u64,
    pub gamma_s2s: f64,
    pub gamma_s2a: f64,
}

/// `T` and `Γ` of both primitives at every grid value. Grid points run in
/// parallel; rows come back in grid order.
pub fn regime_sweep(base: &BoundInputs, axis: SweepAxis, grid: &[f64], model: RateModel) -> Result<Vec<SweepRow>> {
    let points = grid
        .iter()
        .map(|&v| axis.apply(base, v).map(|b| (v, b)))
        .collect::<Result<Vec<_>>>()?;
    points
        .par_iter()
        .map(|(v, b)| {
            let t_s2s = rounds(b, Primitive::S2S, model)?;
            let t_s2a = rounds(b, Primitive::S2A, model)?;
            Ok(SweepRow {
                axis_value: *v,
                t_s2s,
                t_s2a,
                gamma_s2s: gamma(Primitive::S2S, t_s2s, b.n, b.k, b.h),
                gamma_s2a: gamma(Primitive::S2A, t_s2a, b.n, b.k, b.h),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
