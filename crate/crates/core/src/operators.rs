//! Server-round operators and the bias/disagreement error functionals.
//!
//! A server round right-multiplies the parameter matrix by either
//!
//! * `W_S2S`: `1/K` on `S×S`, `1` on the diagonal outside `S`, `0` elsewhere;
//! * `W_S2A`: row `i` is `1/K` everywhere when `i ∈ S`, zero otherwise.
//!
//! Both are applied structurally (column averaging) rather than by a dense
//! product; [`ServerOperator::matrix`] materializes the dense form.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamMatrix;
use crate::topology::ComponentProjector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    S2S,
    S2A,
}

impl Primitive {
    pub const BOTH: [Primitive; 2] = [Primitive::S2S, Primitive::S2A];

    /// Downlink messages of one server round.
    pub fn downlinks(&self, n: usize, k: usize) -> usize {
        match self {
            Primitive::S2S => k,
            Primitive::S2A => n,
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::S2S => "s2s",
            Primitive::S2A => "s2a",
        })
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2s" => Ok(Primitive::S2S),
            "s2a" => Ok(Primitive::S2A),
            other => Err(Error::InvalidConfig(format!(
                "unknown primitive {other:?} (expected s2s or s2a)"
            ))),
        }
    }
}

/// `K` distinct device indices out of `n`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    indices: Vec<usize>,
    n: usize,
}

impl SampleSet {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        let k = indices.len();
        if k == 0 || k > n || indices.last().is_some_and(|&i| i >= n) {
            return Err(Error::InvalidK { n, k });
        }
        Ok(Self { indices, n })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Uniform sample of `k` devices without replacement (partial Fisher–Yates).
pub fn sample_devices<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<SampleSet> {
    if k == 0 || k > n {
        return Err(Error::InvalidK { n, k });
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    Ok(SampleSet { indices: pool, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerOperator {
    primitive: Primitive,
    sample: SampleSet,
}

impl ServerOperator {
    pub fn new(primitive: Primitive, sample: SampleSet) -> Self {
        Self { primitive, sample }
    }

    pub fn primitive(&self) -> Primitive {
        self.primitive
    }

    pub fn sample(&self) -> &SampleSet {
        &self.sample
    }

    pub fn n(&self) -> usize {
        self.sample.n
    }

    /// Dense `n × n` form.
    pub fn matrix(&self) -> Array2<f64> {
        let n = self.n();
        let k = self.sample.k() as f64;
        let mut m = Array2::zeros((n, n));
        match self.primitive {
            Primitive::S2S => {
                for i in 0..n {
                    if !self.sample.contains(i) {
                        m[[i, i]] = 1.0;
                    }
                }
                for &i in self.sample.indices() {
                    for &j in self.sample.indices() {
                        m[[i, j]] = 1.0 / k;
                    }
                }
            }
            Primitive::S2A => {
                for &i in self.sample.indices() {
                    m.row_mut(i).fill(1.0 / k);
                }
            }
        }
        m
    }

    /// `X · W` without forming `W`.
    pub fn apply(&self, x: &ParamMatrix) -> Result<ParamMatrix> {
        x.expect_devices(self.n())?;
        let mean = sampled_mean(x, &self.sample);
        let mut out = x.entries().clone();
        match self.primitive {
            Primitive::S2S => {
                for &i in self.sample.indices() {
                    out.column_mut(i).assign(&mean);
                }
            }
            Primitive::S2A => {
                for mut col in out.columns_mut() {
                    col.assign(&mean);
                }
            }
        }
        Ok(ParamMatrix::new(out))
    }
}

pub fn s2s_matrix(s: &SampleSet) -> ServerOperator {
    ServerOperator::new(Primitive::S2S, s.clone())
}

pub fn s2a_matrix(s: &SampleSet) -> ServerOperator {
    ServerOperator::new(Primitive::S2A, s.clone())
}

// Shifted by the first sampled column so identical columns average exactly.
fn sampled_mean(x: &ParamMatrix, s: &SampleSet) -> Array1<f64> {
    let base = x.column(s.indices()[0]).to_owned();
    let mut acc = Array1::zeros(x.dim());
    for &i in &s.indices()[1..] {
        acc += &(&x.column(i) - &base);
    }
    base + acc / s.k() as f64
}

/// Squared errors around one server step. All norms are squared Frobenius.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorSnapshot {
    pub round: usize,
    /// `‖X̄_after − X̄_before‖²` of the server step.
    pub bias_sq: f64,
    /// `‖X − X̄‖²` of the resulting matrix.
    pub disagreement_sq: f64,
    pub disagreement_intra_sq: f64,
    pub disagreement_inter_sq: f64,
}

/// Applies `op` and measures the step's bias and the result's disagreement.
pub fn apply_server_step(
    x: &ParamMatrix,
    op: &ServerOperator,
    proj: &ComponentProjector,
) -> Result<(ParamMatrix, ErrorSnapshot)> {
    let out = op.apply(x)?;
    let bias_sq = average_shift_sq(x, &out);
    let (total, intra, inter) = disagreement_decomposed(&out, proj)?;
    Ok((
        out,
        ErrorSnapshot {
            round: 0,
            bias_sq,
            disagreement_sq: total,
            disagreement_intra_sq: intra,
            disagreement_inter_sq: inter,
        },
    ))
}

/// `n · ‖x̄_after − x̄_before‖²`, i.e. the Frobenius distance of the averaged matrices.
pub fn average_shift_sq(before: &ParamMatrix, after: &ParamMatrix) -> f64 {
    let diff = after.average() - before.average();
    before.devices() as f64 * diff.dot(&diff)
}

pub fn disagreement_sq(x: &ParamMatrix) -> f64 {
    let avg = x.average();
    x.entries()
        .columns()
        .into_iter()
        .map(|c| {
            let d = &c - &avg;
            d.dot(&d)
        })
        .sum()
}

/// `(‖X(I−Π)‖², ‖X(I−Π_C)‖², ‖X(Π_C−Π)‖²)`.
pub fn disagreement_decomposed(x: &ParamMatrix, proj: &ComponentProjector) -> Result<(f64, f64, f64)> {
    x.expect_devices(proj.n())?;
    let global = x.average();
    let mut intra = 0.0;
    let mut inter = 0.0;
    for comp in proj.components() {
        let sub = x.entries().select(Axis(1), comp);
        let mean = sub.mean_axis(Axis(1)).expect("components are nonempty");
        for col in sub.columns() {
            let d = &col - &mean;
            intra += d.dot(&d);
        }
        let d = &mean - &global;
        inter += comp.len() as f64 * d.dot(&d);
    }
    Ok((intra + inter, intra, inter))
}

/// Dimension of the fixed probe matrix used by [`expected_ratio_check`].
pub const RATIO_PROBE_DIM: usize = 8;

/// Monte-Carlo estimate of the expected error ratio of one server step.
///
/// S2S: post-step disagreement over pre-step disagreement, expected
/// `(n−K)/(n−1)`. S2A: bias over pre-step disagreement, expected
/// `(n−K)/(K(n−1))`. The probe `X` is drawn once; only the sample is redrawn.
pub fn expected_ratio_check<R: Rng + ?Sized>(
    primitive: Primitive,
    n: usize,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if n < 2 || k == 0 || k > n {
        return Err(Error::InvalidK { n, k });
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    let x = ParamMatrix::new(Array2::from_shape_simple_fn((RATIO_PROBE_DIM, n), || {
        rng.sample(StandardNormal)
    }));
    let before = disagreement_sq(&x);
    let mut acc = 0.0;
    for _ in 0..trials {
        let op = ServerOperator::new(primitive, sample_devices(n, k, rng)?);
        let out = op.apply(&x)?;
        acc += match primitive {
            Primitive::S2S => disagreement_sq(&out),
            Primitive::S2A => average_shift_sq(&x, &out),
        };
    }
    Ok(acc / trials as f64 / before)
}

/// Closed-form expectation matched by [`expected_ratio_check`].
pub fn theoretical_ratio(primitive: Primitive, n: usize, k: usize) -> f64 {
    let (n, k) = (n as f64, k as f64);
    match primitive {
        Primitive::S2S => (n - k) / (n - 1.0),
        Primitive::S2A => (n - k) / (k * (n - 1.0)),
    }
}
