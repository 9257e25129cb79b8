//! Device objectives with controllable intra- and inter-component heterogeneity.
//!
//! Two families:
//!
//! * quadratic `f_i(x) = ½ L ‖x − μ_i‖²`, where `μ_i` is a shared base point
//!   plus a per-component offset plus a per-device perturbation centred inside
//!   its component; the optimum and `f*` are closed form;
//! * multinomial logistic regression on synthetic Gaussian class clusters with
//!   an L2 term, the reference optimum found once by accelerated gradient
//!   descent.
//!
//! Stochastic gradients add isotropic Gaussian noise with per-coordinate
//! variance `σ̄²/dim`, so `E‖noise‖² = σ̄²`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_top_eigenvalue, EIGEN_MAX_ITER, EIGEN_TOL};
use crate::params::ParamMatrix;
use crate::rng::{stream, Domain};
use crate::topology::{ComponentProjector, MixingMatrix, Topology};

pub const DEFAULT_L2: f64 = 0.01;
pub const DEFAULT_PROBES: usize = 16;
pub const PROBE_RADIUS: f64 = 5.0;
pub const HET_DRAWS: usize = 100;
const REFERENCE_TOL: f64 = 1e-8;
const REFERENCE_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "split", rename_all = "snake_case")]
pub enum IntraSplit {
    Iid,
    OffsetScale { scale: f64 },
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "split", rename_all = "snake_case")]
pub enum InterSplit {
    Iid,
    OffsetScale { scale: f64 },
    DisjointClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityConfig {
    pub intra: IntraSplit,
    pub inter: InterSplit,
}

impl HeterogeneityConfig {
    pub const IID: Self = Self {
        intra: IntraSplit::Iid,
        inter: InterSplit::Iid,
    };

    pub fn offsets(intra: f64, inter: f64) -> Self {
        Self {
            intra: IntraSplit::OffsetScale { scale: intra },
            inter: InterSplit::OffsetScale { scale: inter },
        }
    }

    fn validate(&self) -> Result<()> {
        match self.intra {
            IntraSplit::OffsetScale { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                return Err(Error::InvalidConfig(format!("intra offset scale {scale} must be ≥ 0")))
            }
            IntraSplit::Dirichlet { alpha } if !(alpha > 0.0) => {
                return Err(Error::InvalidConfig(format!("dirichlet alpha {alpha} must be > 0")))
            }
            _ => {}
        }
        if let InterSplit::OffsetScale { scale } = self.inter {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::InvalidConfig(format!("inter offset scale {scale} must be ≥ 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceData {
    /// `m × d` feature rows.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Quadratic {
        curvature: f64,
        /// `d × n`, column `i` is `μ_i`.
        targets: Array2<f64>,
    },
    Logistic {
        classes: usize,
        features: usize,
        l2: f64,
        devices: Vec<DeviceData>,
        f_star: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceObjective {
    model: Model,
    noise_std: f64,
    smoothness: f64,
    optimum: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterogeneityEstimate {
    pub zeta_intra: f64,
    pub zeta_inter: f64,
    pub probe_count: usize,
}

impl DeviceObjective {
    pub fn kind(&self) -> ObjectiveKind {
        match self.model {
            Model::Quadratic { .. } => ObjectiveKind::Quadratic,
            Model::Logistic { .. } => ObjectiveKind::Logistic,
        }
    }

    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn devices(&self) -> usize {
        match &self.model {
            Model::Quadratic { targets, .. } => targets.ncols(),
            Model::Logistic { devices, .. } => devices.len(),
        }
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn with_noise(mut self, sigma_bar: f64) -> Self {
        self.noise_std = sigma_bar;
        self
    }

    /// Smoothness constant valid for every `f_i`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Global minimizer `x*` (reference solution for logistic).
    pub fn optimum(&self) -> &Array1<f64> {
        &self.optimum
    }

    pub fn f_star(&self) -> f64 {
        match &self.model {
            Model::Quadratic { .. } => self.value(&self.optimum),
            Model::Logistic { f_star, .. } => *f_star,
        }
    }

    /// Quadratic targets `μ_i` as a `d × n` matrix.
    pub fn targets(&self) -> Option<&Array2<f64>> {
        match &self.model {
            Model::Quadratic { targets, .. } => Some(targets),
            Model::Logistic { .. } => None,
        }
    }

    pub fn device_data(&self) -> Option<&[DeviceData]> {
        match &self.model {
            Model::Logistic { devices, .. } => Some(devices),
            Model::Quadratic { .. } => None,
        }
    }

    pub fn local_value(&self, i: usize, x: &Array1<f64>) -> f64 {
        match &self.model {
            Model::Quadratic { curvature, targets } => {
                let d = x - &targets.column(i);
                0.5 * curvature * d.dot(&d)
            }
            Model::Logistic {
                classes,
                features,
                l2,
                devices,
                ..
            } => logistic_value(&devices[i], x, *classes, *features, *l2),
        }
    }

    pub fn local_gradient(&self, i: usize, x: &Array1<f64>) -> Array1<f64> {
        match &self.model {
            Model::Quadratic { curvature, targets } => (x - &targets.column(i)) * *curvature,
            Model::Logistic {
                classes,
                features,
                l2,
                devices,
                ..
            } => logistic_gradient(&devices[i], x, *classes, *features, *l2),
        }
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn value(&self, x: &Array1<f64>) -> f64 {
        let n = self.devices();
        (0..n).map(|i| self.local_value(i, x)).sum::<f64>() / n as f64
    }

    pub fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        let n = self.devices();
        match &self.model {
            Model::Quadratic { curvature, targets } => {
                let mean = targets.mean_axis(Axis(1)).expect("n ≥ 1");
                (x - &mean) * *curvature
            }
            Model::Logistic { .. } => {
                let mut g = Array1::zeros(self.dim());
                for i in 0..n {
                    g += &self.local_gradient(i, x);
                }
                g / n as f64
            }
        }
    }
}

/// Quadratic objectives `f_i(x) = ½ L ‖x − μ_i‖²` arranged on `t`'s components.
///
/// Component `c` is offset by `s·(cos 2πc/C, sin 2πc/C, 0, …)` (just
/// `s·cos 2πc/C` when `d = 1`), and device perturbations of RMS size
/// `intra` are centred within each component.
pub fn make_quadratic(d: usize, t: &Topology, h: &HeterogeneityConfig, l: f64, seed: u64) -> Result<DeviceObjective> {
    if d == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothness L = {l} must be positive")));
    }
    h.validate()?;
    let intra = match h.intra {
        IntraSplit::Iid => 0.0,
        IntraSplit::OffsetScale { scale } => scale,
        IntraSplit::Dirichlet { .. } => {
            return Err(Error::InvalidConfig(
                "dirichlet splits apply to logistic objectives only".into(),
            ))
        }
    };
    let inter = match h.inter {
        InterSplit::Iid => 0.0,
        InterSplit::OffsetScale { scale } => scale,
        InterSplit::DisjointClasses => {
            return Err(Error::InvalidConfig(
                "class splits apply to logistic objectives only".into(),
            ))
        }
    };

    let n = t.n();
    let c_count = t.num_components();
    let mut rng = stream(seed, Domain::Objective, 0, 0);
    let base: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut targets = Array2::zeros((d, n));
    for (c, comp) in t.components().iter().enumerate() {
        let angle = 2.0 * PI * c as f64 / c_count as f64;
        let mut center = base.clone();
        center[0] += inter * angle.cos();
        if d > 1 {
            center[1] += inter * angle.sin();
        }
        let mut rng = stream(seed, Domain::Objective, 1, c as u64);
        let mut pert = Array2::<f64>::zeros((d, comp.len()));
        if intra > 0.0 {
            let sd = intra / (d as f64).sqrt();
            pert.mapv_inplace(|_| sd * rng.sample::<f64, _>(StandardNormal));
            let mean = pert.mean_axis(Axis(1)).expect("nonempty component");
            for mut col in pert.columns_mut() {
                col -= &mean;
            }
        }
        for (k, &i) in comp.iter().enumerate() {
            targets.column_mut(i).assign(&(&center + &pert.column(k)));
        }
    }
    let optimum = targets.mean_axis(Axis(1)).expect("n ≥ 1");
    Ok(DeviceObjective {
        model: Model::Quadratic { curvature: l, targets },
        noise_std: 0.0,
        smoothness: l,
        optimum,
    })
}

/// Synthetic multinomial logistic regression.
///
/// Class `k` has mean `μ_k ~ N(0, 4I)` in `R^d` and unit-variance features.
/// The parameter is the `classes × d` weight matrix, flattened row-major.
pub fn make_logistic(
    d: usize,
    classes: usize,
    samples_per_device: usize,
    t: &Topology,
    h: &HeterogeneityConfig,
    seed: u64,
) -> Result<DeviceObjective> {
    if d == 0 || classes < 2 || samples_per_device == 0 {
        return Err(Error::InvalidConfig(
            "logistic objectives need d ≥ 1, at least 2 classes and 1 sample per device".into(),
        ));
    }
    h.validate()?;
    let c_count = t.num_components();
    if h.inter == InterSplit::DisjointClasses && classes < 2 * c_count {
        return Err(Error::InvalidConfig(format!(
            "disjoint class split needs at least {} classes for {c_count} components, got {classes}",
            2 * c_count
        )));
    }

    let mut rng = stream(seed, Domain::Objective, 0, 0);
    let means = Array2::from_shape_simple_fn((classes, d), || 2.0 * rng.sample::<f64, _>(StandardNormal));

    let allowed_for = |c: usize| -> Vec<usize> {
        match h.inter {
            InterSplit::DisjointClasses => (c * classes / c_count..(c + 1) * classes / c_count).collect(),
            _ => (0..classes).collect(),
        }
    };

    let mut devices = Vec::with_capacity(t.n());
    for (c, comp) in t.components().iter().enumerate() {
        let allowed = allowed_for(c);
        let angle = 2.0 * PI * c as f64 / c_count as f64;
        let mut comp_shift = Array1::zeros(d);
        if let InterSplit::OffsetScale { scale } = h.inter {
            comp_shift[0] = scale * angle.cos();
            if d > 1 {
                comp_shift[1] = scale * angle.sin();
            }
        }
        let mut shifts = Array2::<f64>::zeros((comp.len(), d));
        if let IntraSplit::OffsetScale { scale } = h.intra {
            let mut rng = stream(seed, Domain::Objective, 1, c as u64);
            let sd = scale / (d as f64).sqrt();
            shifts.mapv_inplace(|_| sd * rng.sample::<f64, _>(StandardNormal));
            let mean = shifts.mean_axis(Axis(0)).expect("nonempty component");
            for mut row in shifts.rows_mut() {
                row -= &mean;
            }
        }
        for (k, &i) in comp.iter().enumerate() {
            let mut rng = stream(seed, Domain::Objective, 2, i as u64);
            let labels: Vec<usize> = match h.intra {
                IntraSplit::Dirichlet { alpha } => {
                    let props = dirichlet(alpha, allowed.len(), &mut rng);
                    (0..samples_per_device)
                        .map(|_| allowed[categorical(&props, &mut rng)])
                        .collect()
                }
                _ => (0..samples_per_device)
                    .map(|j| allowed[(j + i) % allowed.len()])
                    .collect(),
            };
            let mut features = Array2::zeros((samples_per_device, d));
            for (j, &y) in labels.iter().enumerate() {
                for f in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    features[[j, f]] = means[[y, f]] + comp_shift[f] + shifts[[k, f]] + noise;
                }
            }
            devices.push(DeviceData {
                features,
                labels,
                component: c,
            });
        }
    }
    logistic_from_devices(devices, classes, DEFAULT_L2)
}

/// Builds a logistic objective from explicit device data and solves for the
/// reference optimum.
pub fn logistic_from_devices(devices: Vec<DeviceData>, classes: usize, l2: f64) -> Result<DeviceObjective> {
    let features = devices
        .first()
        .ok_or_else(|| Error::InvalidConfig("no devices".into()))?
        .features
        .ncols();
    for (i, dev) in devices.iter().enumerate() {
        if dev.labels.is_empty() || dev.labels.len() != dev.features.nrows() || dev.features.ncols() != features {
            return Err(Error::InvalidConfig(format!("device {i} has malformed data")));
        }
        if dev.labels.iter().any(|&y| y >= classes) || !dev.features.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "device {i} has invalid labels or features"
            )));
        }
    }
    let mut smoothness: f64 = 0.0;
    for dev in &devices {
        let cov = dev.features.t().dot(&dev.features) / dev.features.nrows() as f64;
        let top = psd_top_eigenvalue(cov.view(), None, EIGEN_TOL, EIGEN_MAX_ITER)?;
        smoothness = smoothness.max(0.5 * top + l2);
    }
    let mut obj = DeviceObjective {
        model: Model::Logistic {
            classes,
            features,
            l2,
            devices,
            f_star: 0.0,
        },
        noise_std: 0.0,
        smoothness,
        optimum: Array1::zeros(classes * features),
    };
    let x_star = reference_solve(&obj)?;
    let f_star = obj.value(&x_star);
    if let Model::Logistic { f_star: slot, .. } = &mut obj.model {
        *slot = f_star;
    }
    obj.optimum = x_star;
    Ok(obj)
}

/// Nesterov's method for strongly convex objectives, stopping at
/// `‖∇f‖ ≤ 1e-8`.
fn reference_solve(obj: &DeviceObjective) -> Result<Array1<f64>> {
    let l = obj.smoothness;
    let mu = match &obj.model {
        Model::Logistic { l2, .. } => *l2,
        Model::Quadratic { curvature, .. } => *curvature,
    };
    let kappa = (l / mu).sqrt();
    let beta = (kappa - 1.0) / (kappa + 1.0);
    let mut x = Array1::zeros(obj.dim());
    let mut y = x.clone();
    let mut gnorm = f64::INFINITY;
    for _ in 0..REFERENCE_MAX_ITER {
        let gx = obj.gradient(&x);
        gnorm = gx.dot(&gx).sqrt();
        if gnorm <= REFERENCE_TOL {
            return Ok(x);
        }
        let gy = obj.gradient(&y);
        let next = &y - &(gy / l);
        y = &next + &((&next - &x) * beta);
        x = next;
    }
    Err(Error::NotConverged {
        what: "logistic reference solve",
        iterations: REFERENCE_MAX_ITER,
        residual: gnorm,
    })
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..k).map(|_| rng.sample(gamma)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every gamma draw underflowed: all mass on one class
        let mut p = vec![0.0; k];
        p[rng.gen_range(0..k)] = 1.0;
        p
    }
}

fn categorical<R: Rng + ?Sized>(props: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in props.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    props.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn logits(dev: &DeviceData, x: &Array1<f64>, classes: usize, features: usize) -> Array2<f64> {
    let w = x
        .view()
        .into_shape_with_order((classes, features))
        .expect("parameter length is classes × features");
    dev.features.dot(&w.t())
}

fn logistic_value(dev: &DeviceData, x: &Array1<f64>, classes: usize, features: usize, l2: f64) -> f64 {
    let z = logits(dev, x, classes, features);
    let mut loss = 0.0;
    for (row, &y) in z.rows().into_iter().zip(&dev.labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
        loss += lse - row[y];
    }
    loss / dev.labels.len() as f64 + 0.5 * l2 * x.dot(x)
}

fn logistic_gradient(dev: &DeviceData, x: &Array1<f64>, classes: usize, features: usize, l2: f64) -> Array1<f64> {
    let mut p = logits(dev, x, classes, features);
    for (mut row, &y) in p.rows_mut().into_iter().zip(&dev.labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
        row[y] -= 1.0;
    }
    let g = p.t().dot(&dev.features) / dev.labels.len() as f64;
    let mut flat = Array1::from_iter(g.iter().copied());
    flat.scaled_add(l2, x);
    flat
}

/// `∇f_i(x)` plus `N(0, σ̄²/dim · I)` noise.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    obj: &DeviceObjective,
    i: usize,
    x: &Array1<f64>,
    rng: &mut R,
) -> Array1<f64> {
    let mut g = obj.local_gradient(i, x);
    if obj.noise_std > 0.0 {
        let sd = obj.noise_std / (obj.dim() as f64).sqrt();
        g.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
    }
    g
}

/// `f(x) − f*`.
pub fn optimality_gap(obj: &DeviceObjective, x: &Array1<f64>) -> f64 {
    match &obj.model {
        Model::Quadratic { curvature, .. } => {
            let d = x - &obj.optimum;
            0.5 * curvature * d.dot(&d)
        }
        Model::Logistic { f_star, .. } => obj.value(x) - f_star,
    }
}

/// `count` points drawn uniformly from the radius-5 ball around `x*`.
pub fn default_probes(obj: &DeviceObjective, count: usize, seed: u64) -> Vec<Array1<f64>> {
    let dim = obj.dim();
    let mut rng = stream(seed, Domain::Probe, 1, 0);
    (0..count)
        .map(|_| {
            let z: Array1<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = z.dot(&z).sqrt().max(f64::MIN_POSITIVE);
            let u: f64 = rng.gen();
            let r = PROBE_RADIUS * u.powf(1.0 / dim as f64);
            obj.optimum() + &(z * (r / norm))
        })
        .collect()
}

/// Estimates the heterogeneity constants as maxima over `probes` of
/// `(1/n) E‖G(W − Π_C)‖²` and `(1/n) E‖G(Π_C − Π)‖²`, where `G` stacks the
/// stochastic gradients at the probe. Expectations use [`HET_DRAWS`] draws
/// (one when the objective is noiseless). Returns square roots.
pub fn measure_heterogeneity<R: Rng + ?Sized>(
    obj: &DeviceObjective,
    w: &MixingMatrix,
    proj: &ComponentProjector,
    probes: &[Array1<f64>],
    rng: &mut R,
) -> Result<HeterogeneityEstimate> {
    let n = obj.devices();
    if w.n() != n || proj.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: w.n(),
        });
    }
    if probes.is_empty() {
        return Err(Error::InvalidConfig("at least one probe point is required".into()));
    }
    let draws = if obj.noise_std > 0.0 { HET_DRAWS } else { 1 };
    let w_minus = w.entries() - proj.entries();
    let mut best_intra: f64 = 0.0;
    let mut best_inter: f64 = 0.0;
    for x in probes {
        if x.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                expected: obj.dim(),
                found: x.len(),
            });
        }
        let mut intra = 0.0;
        let mut inter = 0.0;
        for _ in 0..draws {
            let mut g = Array2::zeros((obj.dim(), n));
            for i in 0..n {
                g.column_mut(i).assign(&stochastic_gradient(obj, i, x, rng));
            }
            let gi = g.dot(&w_minus);
            intra += gi.iter().map(|v| v * v).sum::<f64>();
            let (_, _, e) = crate::operators::disagreement_decomposed(&ParamMatrix::new(g), proj)?;
            inter += e;
        }
        best_intra = best_intra.max(intra / (draws * n) as f64);
        best_inter = best_inter.max(inter / (draws * n) as f64);
    }
    Ok(HeterogeneityEstimate {
        zeta_intra: best_intra.sqrt(),
        zeta_inter: best_inter.sqrt(),
        probe_count: probes.len(),
    })
}

/// Writes logistic device data as CSV with columns
/// `device,component,label,feature_0,…`.
pub fn export_dataset<W: Write>(obj: &DeviceObjective, out: W) -> Result<()> {
    let devices = obj
        .device_data()
        .ok_or_else(|| Error::InvalidConfig("only logistic objectives carry a dataset".into()))?;
    let d = devices[0].features.ncols();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["device".to_string(), "component".into(), "label".into()];
    header.extend((0..d).map(|f| format!("feature_{f}")));
    w.write_record(&header)?;
    for (i, dev) in devices.iter().enumerate() {
        for (row, &y) in dev.features.rows().into_iter().zip(&dev.labels) {
            let mut rec = vec![i.to_string(), dev.component.to_string(), y.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`export_dataset`]. Devices must appear with
/// contiguous ids starting at 0.
pub fn import_dataset<R: Read>(input: R, classes: usize, l2: f64) -> Result<DeviceObjective> {
    let mut r = csv::Reader::from_reader(input);
    let d = r.headers()?.len().saturating_sub(3);
    if d == 0 {
        return Err(Error::InvalidConfig("dataset has no feature columns".into()));
    }
    let mut rows: Vec<(usize, usize, usize, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |k: usize| -> Result<&str> {
            rec.get(k)
                .ok_or_else(|| Error::InvalidConfig(format!("short record {:?}", rec.position())))
        };
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("{s:?}: {e}")))
        };
        let dev = parse_usize(field(0)?)?;
        let comp = parse_usize(field(1)?)?;
        let label = parse_usize(field(2)?)?;
        let feats = (0..d)
            .map(|f| {
                let s = field(3 + f)?;
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((dev, comp, label, feats));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let mut devices = Vec::with_capacity(n);
    for i in 0..n {
        let mine: Vec<_> = rows.iter().filter(|r| r.0 == i).collect();
        if mine.is_empty() {
            return Err(Error::InvalidConfig(format!("device {i} has no samples")));
        }
        let features = Array2::from_shape_fn((mine.len(), d), |(j, f)| mine[j].3[f]);
        devices.push(DeviceData {
            features,
            labels: mine.iter().map(|r| r.2).collect(),
            component: mine[0].1,
        });
    }
    logistic_from_devices(devices, classes, l2)
}
