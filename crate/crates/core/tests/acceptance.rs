//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p semidec-core --test acceptance` (add `--release`
//! for realistic runtimes; limits are enforced only in release builds).

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use semidec_core::bounds::{
    communication_cost, cost_ratio, recursion_bound, recursion_bruteforce, regime_sweep, rounds_to_epsilon,
    BoundInputs, RateModel, RecursionParams, Regime, SweepAxis,
};
use semidec_core::engine::{run, server_round_schedule, RunTrace, SimConfig};
use semidec_core::objectives::{
    make_logistic, make_quadratic, DeviceObjective, HeterogeneityConfig, InterSplit, IntraSplit,
};
use semidec_core::operators::{
    apply_server_step, disagreement_decomposed, expected_ratio_check, sample_devices, theoretical_ratio, ServerOperator,
};
use semidec_core::rng::{stream, Domain};
use semidec_core::topology::{
    build_topology, component_projector, metropolis_weights, spectral_mixing_parameter, ComponentProjector,
    TopologyKind,
};
use semidec_core::{ParamMatrix, Primitive};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn operator_identities() -> Outcome {
    let (n, k, d) = (100, 20, 8);
    let proj = ComponentProjector::from_components(&[(0..n).collect()]);
    let mut rng = stream(1, Domain::Probe, 10, 0);
    let (mut worst_bias, mut worst_dis) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = ParamMatrix::new(normal_matrix(d, n, &mut rng));
        let s = sample_devices(n, k, &mut rng).map_err(|e| e.to_string())?;
        let (_, a) =
            apply_server_step(&x, &ServerOperator::new(Primitive::S2S, s.clone()), &proj).map_err(|e| e.to_string())?;
        let (_, b) =
            apply_server_step(&x, &ServerOperator::new(Primitive::S2A, s), &proj).map_err(|e| e.to_string())?;
        worst_bias = worst_bias.max(a.bias_sq);
        worst_dis = worst_dis.max(b.disagreement_sq);
    }
    check(worst_bias <= 1e-18, format!("S2S bias {worst_bias:e}"))?;
    check(worst_dis <= 1e-18, format!("S2A disagreement {worst_dis:e}"))?;
    Ok(format!(
        "max S2S bias {worst_bias:.1e}, max S2A disagreement {worst_dis:.1e}"
    ))
}

fn ratio_laws() -> Outcome {
    let mut rng = stream(2, Domain::Ratio, 0, 0);
    let s2s = expected_ratio_check(Primitive::S2S, 100, 20, 10_000, &mut rng).map_err(|e| e.to_string())?;
    let s2a = expected_ratio_check(Primitive::S2A, 100, 20, 10_000, &mut rng).map_err(|e| e.to_string())?;
    let (ws, wa) = (
        theoretical_ratio(Primitive::S2S, 100, 20),
        theoretical_ratio(Primitive::S2A, 100, 20),
    );
    let msg = format!("S2S {s2s:.4} (want {ws:.4}), S2A {s2a:.5} (want {wa:.5})");
    check((s2s / ws - 1.0).abs() <= 0.02, msg.clone())?;
    check((s2a / wa - 1.0).abs() <= 0.05, msg.clone())?;
    Ok(msg)
}

fn orthogonal_decomposition() -> Outcome {
    let mut rng = stream(3, Domain::Probe, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..40);
        let d = rng.gen_range(1..6);
        let split = rng.gen_range(1..n);
        let proj = ComponentProjector::from_components(&[(0..split).collect(), (split..n).collect()]);
        let x = ParamMatrix::new(normal_matrix(d, n, &mut rng));
        let (t, a, e) = disagreement_decomposed(&x, &proj).map_err(|e| e.to_string())?;
        let dense_t = (x.entries() - &x.entries().dot(&proj.global())).mapv(|v| v * v).sum();
        worst = worst.max(((a + e) - t).abs() / t).max((dense_t - t).abs() / t);
    }
    check(worst <= 1e-10, format!("relative error {worst:e}"))?;
    let x = ParamMatrix::new(ndarray::array![[1.0, 2.0, 3.0, 4.0]]);
    let proj = ComponentProjector::from_components(&[vec![0, 1], vec![2, 3]]);
    let (t, a, e) = disagreement_decomposed(&x, &proj).map_err(|e| e.to_string())?;
    check(
        (t - 5.0).abs() <= 1e-12 && (a - 1.0).abs() <= 1e-12 && (e - 4.0).abs() <= 1e-12,
        format!("hand example gave ({t}, {a}, {e})"),
    )?;
    Ok(format!("max relative error {worst:.1e}; hand example (5, 1, 4)"))
}

fn kinds() -> [TopologyKind; 4] {
    [
        TopologyKind::Ring,
        TopologyKind::Grid2D,
        TopologyKind::Complete,
        TopologyKind::RandomRegular { degree: 4 },
    ]
}

fn mixing_contraction() -> Outcome {
    let mut rng = stream(4, Domain::Probe, 0, 0);
    let mut summary = Vec::new();
    for kind in kinds() {
        let t = build_topology(kind, &[50, 50], 7).map_err(|e| e.to_string())?;
        let w = metropolis_weights(&t);
        let proj = component_projector(&t);
        let mp = spectral_mixing_parameter(&w).map_err(|e| e.to_string())?;
        let eye = Array2::<f64>::eye(100);
        let w_minus = w.entries() - proj.entries();
        let i_minus = &eye - proj.entries();
        for _ in 0..100 {
            let x = normal_matrix(4, 100, &mut rng);
            let lhs = x.dot(&w_minus).mapv(|v| v * v).sum();
            let rhs = (1.0 - mp.p) * x.dot(&i_minus).mapv(|v| v * v).sum() + 1e-9;
            check(lhs <= rhs, format!("{kind}: {lhs} > {rhs}"))?;
        }
        if kind == TopologyKind::Complete {
            check(mp.p == 1.0, format!("complete graph p = {}", mp.p))?;
        }
        summary.push(format!("{kind} p={:.4}", mp.p));
    }
    let ring4 = build_topology(TopologyKind::Ring, &[4], 0).map_err(|e| e.to_string())?;
    let p4 = spectral_mixing_parameter(&metropolis_weights(&ring4)).map_err(|e| e.to_string())?;
    check((p4.p - 8.0 / 9.0).abs() <= 1e-9, format!("ring n_c=4 p = {}", p4.p))?;
    Ok(format!("{}; ring4 p={:.10}", summary.join(", "), p4.p))
}

fn doubly_stochastic() -> Outcome {
    let mut worst = 0.0f64;
    for kind in kinds() {
        for seed in 0..10 {
            let t = build_topology(kind, &[50, 50], seed).map_err(|e| e.to_string())?;
            let w = metropolis_weights(&t);
            for i in 0..100 {
                worst = worst
                    .max((w.entries().row(i).sum() - 1.0).abs())
                    .max((w.entries().column(i).sum() - 1.0).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("max |sum − 1| = {worst:.1e} over 40 matrices"))
}

fn recursion_oracle() -> Outcome {
    let mut rng = stream(6, Domain::Probe, 0, 0);
    let (mut contractive, mut expansive) = (0, 0);
    for _ in 0..1000 {
        let a2: f64 = if rng.gen_bool(0.5) {
            contractive += 1;
            rng.gen_range(0.0..0.999)
        } else {
            expansive += 1;
            rng.gen_range(1.001..1.5)
        };
        let h = rng.gen_range(1..8);
        let p = RecursionParams {
            a1: rng.gen_range(0.0..0.999) / a2.powi(h as i32 - 1),
            a2,
            b1: rng.gen_range(0.0..5.0),
            b2: rng.gen_range(0.0..5.0),
            h,
            t: rng.gen_range(0..60),
        };
        let bound = recursion_bound(&p).map_err(|e| e.to_string())?;
        let brute = recursion_bruteforce(&p);
        check(bound >= brute * (1.0 - 1e-12), format!("{p:?}: {bound} < {brute}"))?;
    }
    let half = recursion_bruteforce(&RecursionParams {
        a1: 0.0,
        a2: 0.5,
        b1: 0.0,
        b2: 1.0,
        h: 2,
        t: 9,
    });
    let third = recursion_bruteforce(&RecursionParams {
        a1: 0.0,
        a2: 2.0,
        b1: 0.0,
        b2: 1.0,
        h: 3,
        t: 8,
    });
    check(half == 0.5, format!("contractive hand value {half}"))?;
    check(
        (third - 4.0 / 3.0).abs() <= 1e-15,
        format!("expansive hand value {third}"),
    )?;
    Ok(format!(
        "{contractive} contractive + {expansive} expansive draws dominated; hand values 0.5, 4/3"
    ))
}

/// n = 20 devices in two components.
const DESK_SIZES: [usize; 2] = [10, 10];

fn sim(kind: TopologyKind, primitive: Primitive, k: usize, h: usize, rounds: usize, eta: f64, seed: u64) -> SimConfig {
    SimConfig {
        component_sizes: DESK_SIZES.to_vec(),
        topology: kind,
        primitive,
        k,
        h,
        rounds,
        eta,
        seed,
        time_varying: false,
        trace_every: 1,
        x0: None,
    }
}

fn quadratic(kind: TopologyKind, intra: f64, inter: f64, sigma: f64, seed: u64) -> Result<DeviceObjective, String> {
    let t = build_topology(kind, &DESK_SIZES, seed).map_err(|e| e.to_string())?;
    Ok(
        make_quadratic(10, &t, &HeterogeneityConfig::offsets(intra, inter), 1.0, seed)
            .map_err(|e| e.to_string())?
            .with_noise(sigma),
    )
}

fn full_sampling_coincidence() -> Outcome {
    let kind = TopologyKind::Ring;
    let obj = quadratic(kind, 1.0, 3.0, 1.0, 5)?;
    let a = run(&sim(kind, Primitive::S2S, 20, 5, 100, 0.05, 5), &obj).map_err(|e| e.to_string())?;
    let b = run(&sim(kind, Primitive::S2A, 20, 5, 100, 0.05, 5), &obj).map_err(|e| e.to_string())?;
    let same = a.records.len() == b.records.len()
        && a.records.iter().zip(&b.records).all(|(x, y)| {
            x.f_gap.to_bits() == y.f_gap.to_bits()
                && x.bias_sq.to_bits() == y.bias_sq.to_bits()
                && x.disagreement_sq.to_bits() == y.disagreement_sq.to_bits()
                && x.intra_sq.to_bits() == y.intra_sq.to_bits()
                && x.inter_sq.to_bits() == y.inter_sq.to_bits()
                && x.uplinks == y.uplinks
                && x.downlinks == y.downlinks
        })
        && a.final_params
            .entries()
            .iter()
            .zip(b.final_params.entries())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    check(same, "traces differ")?;
    Ok(format!("{} records bitwise identical", a.records.len()))
}

fn centralized_limit() -> Outcome {
    let kind = TopologyKind::Complete;
    let obj = quadratic(kind, 1.0, 3.0, 0.0, 8)?;
    let eta = 0.1;
    let trace = run(&sim(kind, Primitive::S2S, 20, 1, 50, eta, 8), &obj).map_err(|e| e.to_string())?;
    let mut x = Array1::<f64>::zeros(obj.dim());
    let mut worst = 0.0f64;
    for r in &trace.records {
        x = &x - &(obj.gradient(&x) * eta);
        worst = worst.max((&r.average - &x).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    }
    check(trace.records.len() == 50, "expected 50 records")?;
    check(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation from centralized GD {worst:.1e} over 50 rounds"))
}

fn fd_error(obj: &DeviceObjective, x: &Array1<f64>) -> f64 {
    let g = obj.gradient(x);
    let h = 1e-5;
    let mut fd = Array1::zeros(x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        fd[k] = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
    }
    let diff = &fd - &g;
    diff.dot(&diff).sqrt() / g.dot(&g).sqrt().max(1e-12)
}

fn gradient_correctness() -> Outcome {
    let t = build_topology(TopologyKind::Ring, &[5, 5], 0).map_err(|e| e.to_string())?;
    let quad = make_quadratic(6, &t, &HeterogeneityConfig::offsets(1.0, 2.0), 1.5, 3).map_err(|e| e.to_string())?;
    let h = HeterogeneityConfig {
        intra: IntraSplit::Dirichlet { alpha: 0.5 },
        inter: InterSplit::DisjointClasses,
    };
    let logi = make_logistic(4, 4, 12, &t, &h, 3).map_err(|e| e.to_string())?;
    let mut rng = stream(9, Domain::Probe, 0, 0);
    let (mut wq, mut wl) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let xq: Array1<f64> = (0..quad.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let xl: Array1<f64> = (0..logi.dim()).map(|_| rng.sample(StandardNormal)).collect();
        wq = wq.max(fd_error(&quad, &xq));
        wl = wl.max(fd_error(&logi, &xl));
    }
    check(wq <= 1e-5 && wl <= 1e-5, format!("quadratic {wq:e}, logistic {wl:e}"))?;
    Ok(format!("max relative error quadratic {wq:.1e}, logistic {wl:.1e}"))
}

struct RegimeStats {
    mean_gap: f64,
    traces: Vec<RunTrace>,
}

fn regime_runs(
    kind: TopologyKind,
    primitive: Primitive,
    k: usize,
    intra: f64,
    inter: f64,
) -> Result<RegimeStats, String> {
    let mut traces = Vec::new();
    for seed in 0..5 {
        let obj = quadratic(kind, intra, inter, 1.0, seed)?;
        traces.push(run(&sim(kind, primitive, k, 5, 200, 0.05, seed), &obj).map_err(|e| e.to_string())?);
    }
    let mean_gap = traces.iter().map(|t| t.last().f_gap).sum::<f64>() / traces.len() as f64;
    Ok(RegimeStats { mean_gap, traces })
}

fn desk_regimes() -> Outcome {
    let r3_s2s = regime_runs(TopologyKind::Ring, Primitive::S2S, 4, 0.0, 5.0)?;
    let r3_s2a = regime_runs(TopologyKind::Ring, Primitive::S2A, 4, 0.0, 5.0)?;
    let r1_s2s = regime_runs(TopologyKind::Complete, Primitive::S2S, 16, 0.1, 0.1)?;
    let r1_s2a = regime_runs(TopologyKind::Complete, Primitive::S2A, 16, 0.1, 0.1)?;

    let mut spikes_ok = true;
    let mut min_spike_ratio = f64::INFINITY;
    for trace in &r3_s2a.traces {
        let mut quiet: Vec<f64> = trace
            .records
            .iter()
            .filter(|r| !r.is_server)
            .map(|r| r.bias_sq)
            .collect();
        quiet.sort_by(f64::total_cmp);
        let median = quiet[quiet.len() / 2];
        for r in trace.records.iter().filter(|r| r.is_server) {
            spikes_ok &= r.bias_sq > 0.0 && r.bias_sq >= 10.0 * median;
            min_spike_ratio = min_spike_ratio.min(r.bias_sq / median.max(f64::MIN_POSITIVE));
        }
    }
    let msg = format!(
        "R3 gap S2S {:.3e} vs S2A {:.3e}; R1 gap S2A {:.3e} vs 1.1×S2S {:.3e}; min spike/median {:.1e}",
        r3_s2s.mean_gap,
        r3_s2a.mean_gap,
        r1_s2a.mean_gap,
        1.1 * r1_s2s.mean_gap,
        min_spike_ratio
    );
    check(r3_s2s.mean_gap < r3_s2a.mean_gap, format!("(a) failed: {msg}"))?;
    check(r1_s2a.mean_gap <= 1.1 * r1_s2s.mean_gap, format!("(b) failed: {msg}"))?;
    check(spikes_ok, format!("(c) failed: {msg}"))?;
    Ok(msg)
}

fn sweep_inputs(zeta: f64) -> BoundInputs {
    BoundInputs {
        n: 100,
        k: 20,
        h: 5,
        p: 1.0,
        l: 1.0,
        sigma_bar: 0.0,
        zeta_intra: zeta,
        zeta_inter: zeta,
        epsilon: 1e-5,
        r0_sq: 0.0,
        f0: 1.0,
        regime: Regime::NonConvex,
    }
}

fn rate_orderings() -> Outcome {
    let grid = [0.2, 0.4, 0.6, 0.8];
    let low = regime_sweep(&sweep_inputs(0.1), SweepAxis::SamplingRate, &grid, RateModel::Theorem)
        .map_err(|e| e.to_string())?;
    let high = regime_sweep(&sweep_inputs(1.0), SweepAxis::SamplingRate, &grid, RateModel::Theorem)
        .map_err(|e| e.to_string())?;
    let tuned_low = regime_sweep(&sweep_inputs(0.1), SweepAxis::SamplingRate, &grid, RateModel::Tuned)
        .map_err(|e| e.to_string())?;
    let tuned_high = regime_sweep(&sweep_inputs(1.0), SweepAxis::SamplingRate, &grid, RateModel::Tuned)
        .map_err(|e| e.to_string())?;
    let wins = |rows: &[semidec_core::bounds::SweepRow], s2a: bool| {
        rows.iter()
            .filter(|r| if s2a { r.t_s2a <= r.t_s2s } else { r.t_s2s <= r.t_s2a })
            .count()
    };
    let msg = format!(
        "rate expressions: S2A wins {}/4 at ζ=0.1, S2S wins {}/4 at ζ=1; tuned per-round bounds: {}/4 and {}/4",
        wins(&low, true),
        wins(&high, false),
        wins(&tuned_low, true),
        wins(&tuned_high, false)
    );
    check(wins(&low, true) == 4 && wins(&high, false) == 4, msg.clone())?;
    Ok(msg)
}

fn communication_costs() -> Outcome {
    let mut rng = stream(12, Domain::Probe, 0, 0);
    for case in 0..10 {
        let sizes = vec![rng.gen_range(3..12), rng.gen_range(3..12)];
        let n: usize = sizes.iter().sum();
        let k = rng.gen_range(1..=n);
        let h = rng.gen_range(1..8);
        let rounds = rng.gen_range(1..60);
        let t = build_topology(TopologyKind::Ring, &sizes, case).map_err(|e| e.to_string())?;
        let obj = make_quadratic(3, &t, &HeterogeneityConfig::offsets(0.5, 1.0), 1.0, case)
            .map_err(|e| e.to_string())?
            .with_noise(0.5);
        let r = server_round_schedule(rounds, h).len() as u64;
        for primitive in Primitive::BOTH {
            let cfg = SimConfig {
                component_sizes: sizes.clone(),
                topology: TopologyKind::Ring,
                primitive,
                k,
                h,
                rounds,
                eta: 0.05,
                seed: case,
                time_varying: false,
                trace_every: 1,
                x0: None,
            };
            let trace = run(&cfg, &obj).map_err(|e| e.to_string())?;
            let want = match primitive {
                Primitive::S2S => 2 * k as u64 * r,
                Primitive::S2A => (k + n) as u64 * r,
            };
            check(
                trace.uplinks + trace.downlinks == want && trace.uplinks == k as u64 * r,
                format!(
                    "case {case} {primitive}: counters {}+{} vs {want}",
                    trace.uplinks, trace.downlinks
                ),
            )?;
        }
    }
    let mut worst = 0.0f64;
    for k in [10, 20, 50, 100] {
        let b = BoundInputs { k, ..sweep_inputs(0.1) };
        let s2s = rounds_to_epsilon(&b, Primitive::S2S).map_err(|e| e.to_string())?;
        let s2a = rounds_to_epsilon(&b, Primitive::S2A).map_err(|e| e.to_string())?;
        let (_, ratio) = communication_cost(&s2a, Primitive::S2A, b.n, k, b.h, &s2s);
        let want = (k + b.n) as f64 / (2.0 * k as f64) * s2a.t_rounds as f64 / s2s.t_rounds as f64;
        worst = worst.max((ratio / want - 1.0).abs());
        worst = worst.max((cost_ratio(s2a.t_rounds, s2s.t_rounds, b.n, k) / want - 1.0).abs());
    }
    check(worst <= 4.0 * f64::EPSILON, format!("ratio relative error {worst:e}"))?;
    Ok(format!(
        "10 configs × 2 primitives exact; ratio relative error {worst:.1e}"
    ))
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "operator identities",
            limit: Some(Duration::from_secs(1)),
            check: operator_identities,
        },
        Criterion {
            id: 2,
            name: "error ratio laws",
            limit: Some(Duration::from_secs(5)),
            check: ratio_laws,
        },
        Criterion {
            id: 3,
            name: "orthogonal decomposition",
            limit: None,
            check: orthogonal_decomposition,
        },
        Criterion {
            id: 4,
            name: "mixing contraction",
            limit: None,
            check: mixing_contraction,
        },
        Criterion {
            id: 5,
            name: "doubly stochastic weights",
            limit: None,
            check: doubly_stochastic,
        },
        Criterion {
            id: 6,
            name: "recursion oracle",
            limit: Some(Duration::from_secs(1)),
            check: recursion_oracle,
        },
        Criterion {
            id: 7,
            name: "K=n coincidence",
            limit: None,
            check: full_sampling_coincidence,
        },
        Criterion {
            id: 8,
            name: "centralized limit",
            limit: None,
            check: centralized_limit,
        },
        Criterion {
            id: 9,
            name: "gradient correctness",
            limit: None,
            check: gradient_correctness,
        },
        Criterion {
            id: 10,
            name: "desk-scale regimes",
            limit: Some(Duration::from_secs(60)),
            check: desk_regimes,
        },
        Criterion {
            id: 11,
            name: "rate orderings",
            limit: Some(Duration::from_secs(10)),
            check: rate_orderings,
        },
        Criterion {
            id: 12,
            name: "communication costs",
            limit: None,
            check: communication_costs,
        },
    ];
    let enforce_time = !cfg!(debug_assertions);
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.check)();
        let elapsed = start.elapsed();
        if let (Some(limit), true, Ok(detail)) = (c.limit, enforce_time, &outcome) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; exceeded {limit:?}"));
            }
        }
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => {
                failed += 1;
                ("FAIL", d.as_str())
            }
        };
        println!(
            "{tag} [{:>2}] {:<26} {:>8.3}s  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
