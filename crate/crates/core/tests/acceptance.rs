use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvopt::adomplus::{
    auto_consensus_steps, derive_params, effective_chi, run, theoretical_rate, AdomPlus, AdomPlusState,
    ErrorMetric, MultiConsensusMixer, RunOutcome, SaddlePoint, StopRule,
};
use tvopt::dvector::{mix, multi_mix, project_consensus, DistVec};
use tvopt::harness::{run_experiment, ExperimentConfig, OUTPUT_DIR_ENV};
use tvopt::lowerbound::{build_hard_instance, rho, SpanTracker};
use tvopt::netmodel::{GossipSequence, TopologyKind, TopologySchedule};
use tvopt::oracle::{gen_random_quadratic, gen_synthetic_logistic, reference_minimizer, LocalObjectiveSet};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, u64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn zero_sum(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DistVec {
    let v = DistVec::from_flat(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    project_consensus(&v)
}

fn kinds() -> Vec<(&'static str, TopologyKind)> {
    vec![
        ("random_geometric_cycle", TopologyKind::RandomGeometricCycle { radius: 0.45, pool_size: 5 }),
        ("ring_star_alternate", TopologyKind::RingStarAlternate),
        ("lower_bound_star", TopologyKind::LowerBoundStar),
    ]
}

/// Node counts per kind; the rotating star needs a multiple of three.
fn sizes(kind: &TopologyKind) -> [usize; 3] {
    match kind {
        TopologyKind::LowerBoundStar => [3, 9, 99],
        _ => [4, 9, 100],
    }
}

fn solve(obj: &LocalObjectiveSet, seq: &GossipSequence, chi: f64, t: usize, stop: StopRule) -> RunOutcome {
    let p = derive_params(obj.l(), obj.mu(), effective_chi(chi, t)).unwrap();
    let x_ref = reference_minimizer(obj, 1e-12).unwrap();
    let sp = SaddlePoint::from_minimizer(obj, &x_ref, p.nu).unwrap();
    let solver = AdomPlus::new(p, obj, MultiConsensusMixer::new(seq, t).unwrap()).unwrap();
    run(&solver, AdomPlusState::zeros(obj.n(), obj.d()), &sp, &stop, |_| {}).unwrap()
}

fn gossip_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for (name, kind) in kinds() {
        for n in sizes(&kind) {
            let sched = TopologySchedule::build(kind.clone(), n, 11).map_err(|e| format!("{name} n={n}: {e}"))?;
            let seq = GossipSequence::new(&sched).map_err(|e| e.to_string())?;
            let chi = seq.chi().map_err(|e| e.to_string())?;
            for q in 0..100 {
                let w = seq.at(q).matrix();
                for i in 0..n {
                    let row: f64 = w.row(i).iter().sum();
                    let col: f64 = w.column(i).iter().sum();
                    ensure(row.abs() <= 1e-12 && col.abs() <= 1e-12, || {
                        format!("{name} n={n} round {q}: row/col sum {row:e}/{col:e}")
                    })?;
                }
                for _ in 0..50 {
                    let x = zero_sum(&mut rng, n, 1);
                    let wx = mix(seq.at(q), &x).unwrap();
                    let lhs = wx.sub(&x).norm_sq();
                    let rhs = (1.0 - 1.0 / chi) * x.norm_sq();
                    ensure(lhs <= rhs, || format!("{name} n={n} round {q}: {lhs:e} > {rhs:e}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} contraction checks across 9 schedules"))
}

fn multi_consensus_halving() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for (name, kind) in kinds() {
        let n = 9;
        let seq = GossipSequence::new(&TopologySchedule::build(kind, n, 5).unwrap()).unwrap();
        let chi = seq.chi().unwrap();
        let t = auto_consensus_steps(chi);
        ensure(t == (chi * std::f64::consts::LN_2).ceil() as usize, || format!("{name}: T = {t}"))?;
        for k in 0..20 {
            for _ in 0..50 {
                let x = zero_sum(&mut rng, n, 3);
                let ratio = multi_mix(&seq, k, t, &x).unwrap().sub(&x).norm_sq() / x.norm_sq();
                ensure(ratio <= 0.5, || format!("{name} k={k}: ratio {ratio}"))?;
                worst = worst.max(ratio);
            }
        }
    }
    Ok(format!("worst ratio {worst:.4}"))
}

fn fixed_point() -> Outcome {
    let n = 6;
    let seq = GossipSequence::new(&TopologySchedule::build(TopologyKind::RingStarAlternate, n, 0).unwrap()).unwrap();
    let chi = seq.chi().unwrap();
    let mut worst = 0.0f64;
    for obj in [gen_random_quadratic(n, 5, 50.0, 3).unwrap(), gen_synthetic_logistic(n, 20, 5, 3, 100.0).unwrap()] {
        let p = derive_params(obj.l(), obj.mu(), chi).unwrap();
        let x_ref = reference_minimizer(&obj, 1e-14).unwrap();
        let sp = SaddlePoint::from_minimizer(&obj, &x_ref, p.nu).unwrap();
        let solver = AdomPlus::new(p, &obj, MultiConsensusMixer::new(&seq, 1).unwrap()).unwrap();
        let mut s = AdomPlusState::at_saddle(&sp).unwrap();
        for _ in 0..100 {
            solver.step(&mut s).map_err(|e| e.to_string())?;
        }
        let pairs = [(&s.x, &sp.x), (&s.x_f, &sp.x), (&s.y, &sp.y), (&s.y_f, &sp.y), (&s.z, &sp.z), (&s.z_f, &sp.z)];
        for (v, r) in pairs {
            let rel = v.dist_sq(r).sqrt() / r.norm_sq().sqrt().max(f64::MIN_POSITIVE);
            ensure(rel <= 1e-9, || format!("relative drift {rel:e}"))?;
            worst = worst.max(rel);
        }
        let scale = sp.y.norm_sq().max(sp.z.norm_sq()).sqrt();
        let m_drift = project_consensus(&s.m).norm_sq().sqrt() / scale;
        ensure(m_drift <= 1e-9, || format!("momentum drift {m_drift:e}"))?;
    }
    Ok(format!("worst relative drift {worst:.2e}"))
}

fn lyapunov_certification() -> Outcome {
    let obj = gen_random_quadratic(9, 10, 100.0, 1).unwrap();
    let seq = GossipSequence::new(&TopologySchedule::build(TopologyKind::LowerBoundStar, 9, 0).unwrap()).unwrap();
    let chi = seq.chi().unwrap();
    let out = solve(&obj, &seq, chi, 1, StopRule::budget(2000));
    let psi: Vec<f64> = out.records.iter().map(|r| r.psi_x + r.psi_yz).collect();
    ensure(psi.len() == 2001, || format!("{} records", psi.len()))?;
    if let Some(k) = psi.windows(2).position(|w| w[1] > w[0]) {
        return Err(format!("potential increased at iteration {}: {:e} -> {:e}", k + 1, psi[k], psi[k + 1]));
    }
    let bound = 1.0 - theoretical_rate(obj.l(), obj.mu(), chi) + 1e-6;
    let worst = (0..psi.len() - 100).map(|k| (psi[k + 100] / psi[k]).powf(0.01)).fold(0.0, f64::max);
    ensure(worst <= bound, || format!("window factor {worst} > {bound}"))?;
    Ok(format!("chi {chi:.3}, worst window factor {worst:.6} <= {bound:.6}"))
}

fn rgc_logistic() -> (LocalObjectiveSet, GossipSequence) {
    let kind = TopologyKind::RandomGeometricCycle { radius: 0.7, pool_size: 10 };
    let seq = GossipSequence::new(&TopologySchedule::build(kind, 10, 3).unwrap()).unwrap();
    (gen_synthetic_logistic(10, 30, 20, 7, 1000.0).unwrap(), seq)
}

fn convergence_budget() -> Outcome {
    let (obj, seq) = rgc_logistic();
    let chi = seq.chi().unwrap();
    ensure(chi <= 20.0, || format!("measured chi {chi}"))?;
    let out = solve(&obj, &seq, chi, 1, StopRule::target(1e-9, ErrorMetric::StackedRelative));
    ensure(out.converged, || "target not reached".into())?;
    let x_ref = reference_minimizer(&obj, 1e-12).unwrap();
    let eps = 1e-9 * DistVec::consensus(obj.n(), &x_ref).norm_sq();
    let eta = derive_params(obj.l(), obj.mu(), chi).unwrap().eta;
    let r0 = out.records[0];
    let c = eta * (r0.psi_x + r0.psi_yz);
    let kappa = obj.l() / obj.mu();
    let budget = 32.0 * chi * kappa.sqrt() * (c / eps).ln();
    let k = out.iterations();
    ensure((k as f64) <= budget, || format!("{k} iterations > budget {budget:.0}"))?;
    Ok(format!("chi {chi:.2}: {k} iterations within budget {budget:.0}"))
}

fn kappa_scaling() -> Outcome {
    let (_, seq) = rgc_logistic();
    let chi = seq.chi().unwrap();
    let mut iters = vec![];
    for kappa in [1000.0, 4000.0] {
        let obj = gen_synthetic_logistic(10, 30, 20, 7, kappa).unwrap();
        let out = solve(&obj, &seq, chi, 1, StopRule::target(1e-9, ErrorMetric::StackedRelative));
        ensure(out.converged, || format!("kappa {kappa} did not converge"))?;
        iters.push(out.iterations());
    }
    let ratio = iters[1] as f64 / iters[0] as f64;
    ensure((1.5..=2.8).contains(&ratio), || format!("{iters:?}, ratio {ratio}"))?;
    Ok(format!("{} vs {} iterations, ratio {ratio:.3}", iters[0], iters[1]))
}

fn chi_robustness() -> Outcome {
    let mut rows = vec![];
    for chi in [3.0, 9.0, 30.0] {
        let inst = build_hard_instance(chi, 100.0, 1.0, 40).unwrap();
        let seq = GossipSequence::new(&inst.schedule().unwrap()).unwrap();
        let measured = seq.chi().unwrap();
        let t = auto_consensus_steps(measured);
        let out = solve(&inst.objective, &seq, measured, t, StopRule::target(1e-6, ErrorMetric::StackedRelative));
        ensure(out.converged, || format!("chi {chi} did not converge"))?;
        let k = out.iterations();
        ensure(out.state.comm_rounds == k * t, || format!("chi {chi}: comm rounds {}", out.state.comm_rounds))?;
        rows.push((k, out.state.comm_rounds));
    }
    let lo = rows.iter().map(|r| r.0).min().unwrap() as f64;
    let hi = rows.iter().map(|r| r.0).max().unwrap() as f64;
    ensure(hi / lo <= 2.0, || format!("iterations {rows:?}"))?;
    ensure(rows.windows(2).all(|w| w[0].1 < w[1].1), || format!("comm rounds {rows:?}"))?;
    Ok(format!("(iterations, comm rounds) {rows:?}"))
}

fn hard_solution() -> Outcome {
    ensure(rho(11.0, 2.0) == 1.0 / 3.0, || format!("rho(11, 2) = {}", rho(11.0, 2.0)))?;
    let inst = build_hard_instance(30.0, 100.0, 1.0, 200).unwrap();
    let x_ref = reference_minimizer(&inst.objective, 1e-13).map_err(|e| e.to_string())?;
    let dev = (0..50).map(|j| (x_ref[j] - inst.rho.powi(j as i32 + 1)).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-6, || format!("max deviation {dev:e}"))?;
    Ok(format!("rho {:.6}, max deviation {dev:.2e}", inst.rho))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lower_bound_certification() -> Outcome {
    let mut cfg = ExperimentConfig::load(configs_dir().join("hard_instance.json")).map_err(|e| e.to_string())?;
    cfg.certify = true;
    cfg.output.path = None;
    let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let cert = r.summary.certification.ok_or("no certificate attached")?;
    ensure(cert.passed, || format!("certificate failed: {cert:?}"))?;
    ensure(cert.steps == r.summary.iterations + 1, || format!("{} steps", cert.steps))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..1000 {
        let n = if trial % 2 == 0 { 9 } else { 30 };
        let mut t = SpanTracker::new(n).unwrap();
        for _ in 0..rng.random_range(1..600) {
            if rng.random_bool(0.5) {
                t.compute();
            } else {
                t.communicate();
            }
            ensure(t.span_bound_holds(), || format!("trial {trial}: round {} spans {:?}", t.rounds(), t.spans()))?;
        }
    }
    Ok(format!("{} certified iterations, 1000 interleavings", r.summary.iterations))
}

fn run_cli_csv(config: &Path, out_dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tvopt"))
        .args(["run", config.to_str().unwrap()])
        .env(OUTPUT_DIR_ENV, out_dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    std::fs::read(out_dir.join("trace.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut names = vec![];
    let mut entries: Vec<_> = std::fs::read_dir(configs_dir()).map_err(|e| e.to_string())?.flatten().collect();
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        let mut json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(entry.path()).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        json["output"] = serde_json::json!({"path": "trace.csv", "format": "csv"});
        let path = scratch.path().join(&name);
        std::fs::write(&path, json.to_string()).map_err(|e| e.to_string())?;
        let (a, b) = (scratch.path().join(format!("{name}.a")), scratch.path().join(format!("{name}.b")));
        let first = run_cli_csv(&path, &a)?;
        let second = run_cli_csv(&path, &b)?;
        ensure(!first.is_empty() && first == second, || format!("{name}: outputs differ"))?;
        names.push(name);
    }
    ensure(!names.is_empty(), || "no sample configs".into())?;
    Ok(format!("byte-identical CSV for {names:?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gossip axioms", gossip_axioms, 30),
        ("multi-consensus halving", multi_consensus_halving, 30),
        ("fixed point", fixed_point, 10),
        ("Lyapunov certification", lyapunov_certification, 60),
        ("convergence budget", convergence_budget, 120),
        ("kappa scaling", kappa_scaling, 180),
        ("chi robustness with multi-consensus", chi_robustness, 180),
        ("hard-instance solution", hard_solution, 60),
        ("lower-bound certification", lower_bound_certification, 120),
        ("determinism", determinism, 300),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|msg| {
            if elapsed <= Duration::from_secs(limit) {
                Ok(msg)
            } else {
                Err(format!("took {elapsed:.1?}, limit {limit} s"))
            }
        });
        match result {
            Ok(msg) => println!("acceptance {:>2} PASS  {name} ({elapsed:.2?}): {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("acceptance {:>2} FAIL  {name} ({elapsed:.2?}): {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
