//! The round loop of semi-decentralized SGD.
//!
//! Round `t`:
//!
//! 1. every device takes one stochastic-gradient step, `X ← X − η∇F(X)`;
//! 2. D2D mixing, `X ← X·W` (with `W` redrawn per round when time-varying);
//! 3. if `t ≡ 0 (mod H)`, the server samples `K` devices and applies the
//!    configured S2S or S2A operator.
//!
//! Randomness is split into independent streams per (device, round) for
//! gradient noise, per server round for sampling and per round for topology
//! draws, so switching the primitive leaves the gradient noise untouched.

use std::io::Write;

use ndarray::Array1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::objectives::{optimality_gap, stochastic_gradient, DeviceObjective};
use crate::operators::{
    apply_server_step, average_shift_sq, disagreement_decomposed, sample_devices, Primitive, ServerOperator,
};
use crate::params::ParamMatrix;
use crate::rng::{stream, Domain};
use crate::topology::{
    build_topology, component_projector, metropolis_weights, resample_topology, MixingMatrix, TopologyKind,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub component_sizes: Vec<usize>,
    pub topology: TopologyKind,
    pub primitive: Primitive,
    pub k: usize,
    pub h: usize,
    pub rounds: usize,
    pub eta: f64,
    pub seed: u64,
    pub time_varying: bool,
    /// Record stride; server rounds and the final round are always kept.
    pub trace_every: usize,
    /// Shared starting point; zeros when absent.
    pub x0: Option<Vec<f64>>,
}

impl SimConfig {
    pub fn n(&self) -> usize {
        self.component_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.component_sizes.is_empty() || self.component_sizes.contains(&0) {
            return Err(Error::InvalidConfig("component sizes must be positive".into()));
        }
        if self.k == 0 || self.k > n {
            return Err(Error::InvalidK { n, k: self.k });
        }
        if self.h == 0 {
            return Err(Error::InvalidConfig("server period H must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("round count T must be at least 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "stepsize {} must be finite and ≥ 0",
                self.eta
            )));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidConfig("trace_every must be at least 1".into()));
        }
        Ok(())
    }

    /// `{primitive}_K{K}_H{H}_{topology}_seed{seed}.csv`
    pub fn trace_file_name(&self) -> String {
        format!(
            "{}_K{}_H{}_{}_seed{}.csv",
            self.primitive, self.k, self.h, self.topology, self.seed
        )
    }
}

/// State after the communication steps of `round`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub round: usize,
    pub is_server: bool,
    /// `f(x̄) − f*`.
    pub f_gap: f64,
    /// `‖∇f(x̄)‖²`.
    pub grad_norm_sq: f64,
    /// Shift of the global average caused by this round's communication: the
    /// server step on server rounds, D2D mixing otherwise.
    pub bias_sq: f64,
    pub disagreement_sq: f64,
    pub intra_sq: f64,
    pub inter_sq: f64,
    /// Cumulative message counters.
    pub uplinks: u64,
    pub downlinks: u64,
    #[serde(skip)]
    pub average: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: SimConfig,
    pub records: Vec<TraceRecord>,
    pub final_params: ParamMatrix,
    pub server_rounds: usize,
    pub uplinks: u64,
    pub downlinks: u64,
}

impl RunTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a run records at least round 0")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rounds `{0, H, 2H, …} ∩ [0, T)`.
pub fn server_round_schedule(t: usize, h: usize) -> Vec<usize> {
    (0..t).step_by(h.max(1)).collect()
}

pub fn message_cost(trace: &RunTrace) -> (u64, u64) {
    (trace.uplinks, trace.downlinks)
}

pub fn run(cfg: &SimConfig, obj: &DeviceObjective) -> Result<RunTrace> {
    cfg.validate()?;
    let n = cfg.n();
    if obj.devices() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: obj.devices(),
        });
    }
    let dim = obj.dim();
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; dim]);
    if x0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x0.len(),
        });
    }

    let topology = build_topology(cfg.topology, &cfg.component_sizes, cfg.seed)?;
    let proj = component_projector(&topology);
    let static_w = metropolis_weights(&topology);
    let resample = cfg.time_varying && cfg.topology.supports_resampling();

    let mut x = ParamMatrix::replicated(&x0, n);
    let mut records = Vec::new();
    let (mut uplinks, mut downlinks, mut server_rounds) = (0u64, 0u64, 0usize);

    for t in 0..cfg.rounds {
        let mut grads = ndarray::Array2::zeros((dim, n));
        for i in 0..n {
            let mut rng = stream(cfg.seed, Domain::Gradient, i as u64, t as u64);
            let xi = x.column(i).to_owned();
            grads.column_mut(i).assign(&stochastic_gradient(obj, i, &xi, &mut rng));
        }
        x.entries_mut().scaled_add(-cfg.eta, &grads);

        let round_w: MixingMatrix;
        let w = if resample && t > 0 {
            round_w = metropolis_weights(&resample_topology(&topology, t, cfg.seed)?);
            &round_w
        } else {
            &static_w
        };
        let mixed = ParamMatrix::new(x.entries().dot(w.entries()));

        let is_server = t % cfg.h == 0;
        let (next, bias_sq, total, intra, inter) = if is_server {
            let mut rng = stream(cfg.seed, Domain::Sampling, t as u64, 0);
            let op = ServerOperator::new(cfg.primitive, sample_devices(n, cfg.k, &mut rng)?);
            let (out, snap) = apply_server_step(&mixed, &op, &proj)?;
            uplinks += cfg.k as u64;
            downlinks += cfg.primitive.downlinks(n, cfg.k) as u64;
            server_rounds += 1;
            (
                out,
                snap.bias_sq,
                snap.disagreement_sq,
                snap.disagreement_intra_sq,
                snap.disagreement_inter_sq,
            )
        } else {
            let bias = average_shift_sq(&x, &mixed);
            let (total, intra, inter) = disagreement_decomposed(&mixed, &proj)?;
            (mixed, bias, total, intra, inter)
        };
        x = next;
        if !x.is_finite() {
            return Err(Error::NonFiniteState { round: t });
        }

        if is_server || t % cfg.trace_every == 0 || t + 1 == cfg.rounds {
            let avg = x.average();
            let g = obj.gradient(&avg);
            records.push(TraceRecord {
                round: t,
                is_server,
                f_gap: optimality_gap(obj, &avg),
                grad_norm_sq: g.dot(&g),
                bias_sq,
                disagreement_sq: total,
                intra_sq: intra,
                inter_sq: inter,
                uplinks,
                downlinks,
                average: avg,
            });
        }
    }

    Ok(RunTrace {
        config: cfg.clone(),
        records,
        final_params: x,
        server_rounds,
        uplinks,
        downlinks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_quadratic, HeterogeneityConfig};
    use crate::topology::Topology;

    fn config(primitive: Primitive, k: usize, h: usize) -> SimConfig {
        SimConfig {
            component_sizes: vec![5, 5],
            topology: TopologyKind::Ring,
            primitive,
            k,
            h,
            rounds: 30,
            eta: 0.1,
            seed: 3,
            time_varying: false,
            trace_every: 1,
            x0: None,
        }
    }

    fn objective(t: &Topology, sigma: f64) -> DeviceObjective {
        make_quadratic(3, t, &HeterogeneityConfig::offsets(0.5, 2.0), 1.0, 9)
            .unwrap()
            .with_noise(sigma)
    }

    fn topo(cfg: &SimConfig) -> Topology {
        build_topology(cfg.topology, &cfg.component_sizes, cfg.seed).unwrap()
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(server_round_schedule(10, 5), vec![0, 5]);
        assert_eq!(server_round_schedule(3, 1), vec![0, 1, 2]);
        assert_eq!(server_round_schedule(5, 7), vec![0]);
    }

    #[test]
    fn message_counts() {
        let mut cfg = config(Primitive::S2S, 4, 3);
        let obj = objective(&topo(&cfg), 0.0);
        let trace = run(&cfg, &obj).unwrap();
        assert_eq!(trace.server_rounds, 10);
        assert_eq!(message_cost(&trace), (40, 40));
        cfg.primitive = Primitive::S2A;
        let trace = run(&cfg, &obj).unwrap();
        assert_eq!(message_cost(&trace), (40, 100));
    }

    #[test]
    fn full_sampling_primitives_coincide() {
        let a = config(Primitive::S2S, 10, 4);
        let b = config(Primitive::S2A, 10, 4);
        let obj = objective(&topo(&a), 0.7);
        let ta = run(&a, &obj).unwrap();
        let tb = run(&b, &obj).unwrap();
        assert_eq!(ta.records, tb.records);
        assert_eq!(ta.final_params, tb.final_params);
    }

    #[test]
    fn zero_stepsize_is_static() {
        let mut cfg = config(Primitive::S2A, 3, 2);
        cfg.eta = 0.0;
        cfg.x0 = Some(vec![1.0, -2.0, 0.5]);
        let obj = objective(&topo(&cfg), 1.0);
        let trace = run(&cfg, &obj).unwrap();
        assert_eq!(trace.final_params, ParamMatrix::replicated(&[1.0, -2.0, 0.5], 10));
        for r in &trace.records {
            assert_eq!(r.bias_sq, 0.0);
            assert_eq!(r.disagreement_sq, 0.0);
        }
    }

    #[test]
    fn trace_invariants() {
        for primitive in Primitive::BOTH {
            let cfg = config(primitive, 3, 4);
            let obj = objective(&topo(&cfg), 0.3);
            let trace = run(&cfg, &obj).unwrap();
            for r in &trace.records {
                let sum = r.intra_sq + r.inter_sq;
                assert!((sum - r.disagreement_sq).abs() <= 1e-10 * r.disagreement_sq.max(1e-300));
                if r.is_server {
                    match primitive {
                        Primitive::S2S => assert!(r.bias_sq <= 1e-18),
                        Primitive::S2A => assert!(r.disagreement_sq <= 1e-18),
                    }
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = config(Primitive::S2A, 3, 4);
        cfg.topology = TopologyKind::RandomRegular { degree: 2 };
        cfg.component_sizes = vec![6, 6];
        cfg.time_varying = true;
        let obj = objective(&topo(&cfg), 0.3);
        let a = run(&cfg, &obj).unwrap();
        let b = run(&cfg, &obj).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_csv(&mut buf_a).unwrap();
        b.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        let header = String::from_utf8(buf_a).unwrap();
        assert!(header.starts_with(
            "round,is_server,f_gap,grad_norm_sq,bias_sq,disagreement_sq,intra_sq,inter_sq,uplinks,downlinks\n"
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = config(Primitive::S2S, 3, 4);
        cfg.eta = 1e6;
        cfg.rounds = 200;
        let obj = objective(&topo(&cfg), 0.0);
        assert!(matches!(run(&cfg, &obj), Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn file_name_pattern() {
        let cfg = config(Primitive::S2A, 3, 4);
        assert_eq!(cfg.trace_file_name(), "s2a_K3_H4_ring_seed3.csv");
    }
}
