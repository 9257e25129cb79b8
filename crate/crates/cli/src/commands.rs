use std::collections::hash_map::DefaultHasher;
use std::fs::{self, File};
use std::hash::{Hash, Hasher};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use semidec_core::bounds::{
    gamma, regime_sweep, rounds, rounds_to_epsilon, write_sweep_csv, BoundInputs, RateModel, Regime, SweepAxis,
    SweepRow,
};
use semidec_core::engine::{run, RunTrace};
use semidec_core::objectives::{
    default_probes, make_logistic, make_quadratic, measure_heterogeneity, optimality_gap, DeviceObjective,
    HeterogeneityEstimate, ObjectiveKind,
};
use semidec_core::rng::{stream, Domain};
use semidec_core::topology::{build_topology, component_projector, metropolis_weights, spectral_mixing_parameter};
use semidec_core::Primitive;

use crate::config::{Config, ConfigError};

pub fn build_objective(cfg: &Config) -> Result<DeviceObjective> {
    let net = cfg.network()?;
    let objective = cfg.objective()?;
    let t = build_topology(net.kind()?, &net.component_sizes, objective.seed)?;
    let h = objective.heterogeneity();
    let obj = match objective.kind {
        ObjectiveKind::Quadratic => make_quadratic(objective.dim, &t, &h, objective.curvature, objective.seed)?,
        ObjectiveKind::Logistic => make_logistic(
            objective.dim,
            objective.classes,
            objective.samples_per_device,
            &t,
            &h,
            objective.seed,
        )?,
    };
    Ok(obj.with_noise(objective.sigma_bar))
}

/// Hash of everything that shapes a run except the primitive and the seeds.
pub fn fingerprint(cfg: &Config) -> String {
    let mut shape = Config {
        bounds: None,
        ..cfg.clone()
    };
    if let Some(run) = shape.run.as_mut() {
        run.primitives.clear();
        run.seeds.clear();
    }
    let mut h = DefaultHasher::new();
    shape.to_toml().hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Mean and standard error; the error is absent for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, Some((var / m).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub fingerprint: String,
    pub primitive: Primitive,
    pub seeds: usize,
    pub f_gap_mean: f64,
    pub f_gap_stderr: Option<f64>,
    pub grad_norm_sq_mean: f64,
    pub grad_norm_sq_stderr: Option<f64>,
    /// Messages of one run; identical across seeds.
    pub uplinks: u64,
    pub downlinks: u64,
}

fn summarize(fingerprint: &str, primitive: Primitive, traces: &[&RunTrace]) -> SummaryRow {
    let gaps: Vec<f64> = traces.iter().map(|t| t.last().f_gap).collect();
    let grads: Vec<f64> = traces.iter().map(|t| t.last().grad_norm_sq).collect();
    let (f_gap_mean, f_gap_stderr) = mean_stderr(&gaps);
    let (grad_norm_sq_mean, grad_norm_sq_stderr) = mean_stderr(&grads);
    SummaryRow {
        fingerprint: fingerprint.to_string(),
        primitive,
        seeds: traces.len(),
        f_gap_mean,
        f_gap_stderr,
        grad_norm_sq_mean,
        grad_norm_sq_stderr,
        uplinks: traces[0].uplinks,
        downlinks: traces[0].downlinks,
    }
}

/// Runs every (primitive, seed) pair in parallel and summarizes per primitive.
fn run_all(cfg: &Config, seeds: &[u64]) -> Result<(Vec<RunTrace>, Vec<SummaryRow>)> {
    let configs = cfg.sim_configs(seeds)?;
    let obj = build_objective(cfg)?;
    let traces = configs
        .par_iter()
        .map(|c| run(c, &obj))
        .collect::<semidec_core::Result<Vec<_>>>()?;
    let fp = fingerprint(cfg);
    let summary = cfg
        .run()?
        .primitives
        .iter()
        .map(|&p| {
            let mine: Vec<&RunTrace> = traces.iter().filter(|t| t.config.primitive == p).collect();
            summarize(&fp, p, &mine)
        })
        .collect();
    Ok((traces, summary))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &Config, seeds: &[u64], out: &Path) -> Result<Vec<SummaryRow>> {
    let (traces, summary) = run_all(cfg, seeds)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for t in &traces {
        t.write_csv(create(&out.join(t.config.trace_file_name()))?)?;
    }
    write_rows(&out.join("summary.csv"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSweepRow {
    pub axis_value: f64,
    pub primitive: Primitive,
    pub k: usize,
    pub h: usize,
    pub f_gap_mean: f64,
    pub f_gap_stderr: Option<f64>,
    pub grad_norm_sq_mean: f64,
    pub grad_norm_sq_stderr: Option<f64>,
    pub uplinks: u64,
    pub downlinks: u64,
}

pub struct SweepOutput {
    pub bounds: Vec<SweepRow>,
    pub simulated: Option<Vec<SimSweepRow>>,
}

fn simulated_point(cfg: &Config, axis: SweepAxis, value: f64, seeds: &[u64]) -> Result<Vec<SimSweepRow>> {
    let bad = || ConfigError(format!("invalid grid value {value} for axis {axis}"));
    let mut point = cfg.clone();
    let n = cfg.network()?.n();
    let run_section = point
        .run
        .as_mut()
        .ok_or_else(|| ConfigError("missing [run] section".into()))?;
    match axis {
        SweepAxis::SamplingRate => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(bad().into());
            }
            run_section.k = ((value * n as f64).round() as usize).max(1);
        }
        SweepAxis::ServerPeriod => {
            if !(value >= 1.0 && value.fract() == 0.0 && value.is_finite()) {
                return Err(bad().into());
            }
            run_section.h = value as usize;
        }
        SweepAxis::MixingParam => {
            return Err(ConfigError(
                "the mixing parameter follows from the topology and cannot be swept by simulation".into(),
            )
            .into())
        }
    }
    let (k, h) = (run_section.k, run_section.h);
    let (_, summary) = run_all(&point, seeds)?;
    Ok(summary
        .into_iter()
        .map(|s| SimSweepRow {
            axis_value: value,
            primitive: s.primitive,
            k,
            h,
            f_gap_mean: s.f_gap_mean,
            f_gap_stderr: s.f_gap_stderr,
            grad_norm_sq_mean: s.grad_norm_sq_mean,
            grad_norm_sq_stderr: s.grad_norm_sq_stderr,
            uplinks: s.uplinks,
            downlinks: s.downlinks,
        })
        .collect())
}

/// Writes `sweep_{axis}.csv` and, when simulating, `sweep_{axis}_sim.csv`.
pub fn sweep(
    cfg: &Config,
    axis: SweepAxis,
    grid: &[f64],
    model: RateModel,
    simulate: Option<&[u64]>,
    out: &Path,
) -> Result<SweepOutput> {
    if grid.is_empty() {
        return Err(ConfigError("the sweep grid is empty".into()).into());
    }
    let rows = regime_sweep(cfg.bounds()?, axis, grid, model)?;
    let simulated = match simulate {
        Some(seeds) => {
            let mut all = Vec::new();
            for &v in grid {
                all.extend(simulated_point(cfg, axis, v, seeds)?);
            }
            Some(all)
        }
        None => None,
    };
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_sweep_csv(&rows, create(&out.join(format!("sweep_{axis}.csv")))?)?;
    if let Some(sim) = &simulated {
        write_rows(&out.join(format!("sweep_{axis}_sim.csv")), sim)?;
    }
    Ok(SweepOutput {
        bounds: rows,
        simulated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundLine {
    pub primitive: Primitive,
    pub t_rounds: u64,
    /// Only the tuned model optimizes a stepsize.
    pub eta_star: Option<f64>,
    pub gamma: f64,
}

pub fn bounds(cfg: &Config, model: RateModel, primitives: &[Primitive]) -> Result<Vec<BoundLine>> {
    let b = cfg.bounds()?;
    primitives
        .iter()
        .map(|&p| {
            let (t_rounds, eta_star) = match model {
                RateModel::Tuned => {
                    let r = rounds_to_epsilon(b, p)?;
                    (r.t_rounds, Some(r.eta_star))
                }
                RateModel::Theorem => (rounds(b, p, model)?, None),
            };
            Ok(BoundLine {
                primitive: p,
                t_rounds,
                eta_star,
                gamma: gamma(p, t_rounds, b.n, b.k, b.h),
            })
        })
        .collect()
}

/// Primitive with the smaller key; `None` on a tie or a single line.
pub fn winner(lines: &[BoundLine], key: impl Fn(&BoundLine) -> f64) -> Option<Primitive> {
    match lines {
        [a, b] if key(a) < key(b) => Some(a.primitive),
        [a, b] if key(b) < key(a) => Some(b.primitive),
        _ => None,
    }
}

pub struct HetReport {
    pub estimate: HeterogeneityEstimate,
    pub p: f64,
    pub bounds: BoundInputs,
    pub written: PathBuf,
}

const DEFAULT_EPSILON: f64 = 1e-3;
const DEFAULT_PERIOD: usize = 5;

/// Estimates the heterogeneity constants and the mixing parameter, then writes
/// the configuration with a filled-in `[bounds]` section to `bounds.toml`.
pub fn measure_het(cfg: &Config, out: &Path) -> Result<HetReport> {
    let net = cfg.network()?;
    let objective = cfg.objective()?;
    let obj = build_objective(cfg)?;
    let t = build_topology(net.kind()?, &net.component_sizes, objective.seed)?;
    let w = metropolis_weights(&t);
    let proj = component_projector(&t);
    let p = spectral_mixing_parameter(&w)?.p;
    let probes = default_probes(&obj, objective.probes, objective.seed);
    let mut rng = stream(objective.seed, Domain::Probe, 2, 0);
    let estimate = measure_heterogeneity(&obj, &w, &proj, &probes, &mut rng)?;

    let n = net.n();
    let x0 = match cfg.run.as_ref().and_then(|r| r.x0.clone()) {
        Some(v) => Array1::from(v),
        None => Array1::zeros(obj.dim()),
    };
    let d = &x0 - obj.optimum();
    let prior = cfg.bounds.as_ref();
    let k = cfg
        .run
        .as_ref()
        .map(|r| r.k)
        .or(prior.map(|b| b.k))
        .unwrap_or(n.div_ceil(5).max(2))
        .clamp(1, n);
    let h = cfg
        .run
        .as_ref()
        .map(|r| r.h)
        .or(prior.map(|b| b.h))
        .unwrap_or(DEFAULT_PERIOD);
    let bounds = BoundInputs {
        n,
        k,
        h,
        p,
        l: obj.smoothness(),
        sigma_bar: objective.sigma_bar,
        zeta_intra: estimate.zeta_intra,
        zeta_inter: estimate.zeta_inter,
        epsilon: prior.map_or(DEFAULT_EPSILON, |b| b.epsilon),
        r0_sq: d.dot(&d),
        f0: optimality_gap(&obj, &x0),
        regime: prior.map_or(Regime::Convex, |b| b.regime),
    };
    let written_cfg = Config {
        bounds: Some(bounds),
        ..cfg.clone()
    };
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let written = out.join("bounds.toml");
    fs::write(&written, written_cfg.to_toml()).with_context(|| format!("cannot write {}", written.display()))?;
    Ok(HetReport {
        estimate,
        p,
        bounds,
        written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_matches_hand_values() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, divided by 4
        assert!((s.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, None));
    }

    #[test]
    fn fingerprint_ignores_seeds_and_primitives() {
        let text = "[network]\ncomponent_sizes = [4, 4]\ntopology = \"ring\"\n\
                    [objective]\nkind = \"quadratic\"\ndim = 2\n\
                    [run]\nk = 2\nh = 2\nrounds = 5\neta = 0.1\nseeds = [1]\n";
        let a = Config::parse(text).unwrap();
        let b = Config::parse(&text.replace("seeds = [1]", "seeds = [4, 5]\nprimitives = [\"s2a\"]")).unwrap();
        let c = Config::parse(&text.replace("eta = 0.1", "eta = 0.2")).unwrap();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&c));
    }

    #[test]
    fn winner_breaks_no_ties() {
        let line = |primitive, t| BoundLine {
            primitive,
            t_rounds: t,
            eta_star: None,
            gamma: 0.0,
        };
        let lines = [line(Primitive::S2S, 3), line(Primitive::S2A, 4)];
        assert_eq!(winner(&lines, |l| l.t_rounds as f64), Some(Primitive::S2S));
        assert_eq!(winner(&lines, |l| l.gamma), None);
        assert_eq!(winner(&lines[..1], |l| l.gamma), None);
    }
}
