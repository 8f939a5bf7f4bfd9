//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line; exits non-zero if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;

use dpkm::data::{gen_synthetic, parse_csv, Dataset, SyntheticSpec};
use dpkm::dplloyd::{dplloyd, dplloyd_one_round, laplace_scale, DPLloydParams};
use dpkm::error_models::{predict_dplloyd_mse, predict_eugkm_variance, ErrorModelParams};
use dpkm::eugkm::{choose_m, eugkm, exact_histogram, eugkm_grid, publish_synopsis, Grid, Synopsis, DEFAULT_THETA};
use dpkm::gkm::{gkm, resolve_ell, BlockPolicy, GkmParams};
use dpkm::harness::{make_init_sets, run_baseline, run_cell, run_experiment, Algorithm, DatasetSource, ExperimentConfig, Reps, Workload};
use dpkm::hybrid::{decide, hybrid, HybridParams};
use dpkm::kmeans::{lloyd_step, lloyd_steps, nicv, Centroids};
use dpkm::mechanisms::{exp_probabilities, exp_select_scores, laplace_sample};
use dpkm::pgkm::{num_rounds, per_selection_budget, pgkm, PgkmParams};
use dpkm::{Budget, DpError, Rng};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn reps_all(init_sets: usize, n: usize) -> Reps {
    Reps {
        init_sets,
        dplloyd: n,
        gkm: n,
        gkm3k: n,
        pgkm: n,
        eugkm: n,
        hybrid: n,
        hybrid_refine: 1,
    }
}

fn cell_mean(w: &Workload<'_>, alg: Algorithm, eps: f64, reps: &Reps) -> Result<f64, String> {
    let v = run_cell(w, alg, eps, reps).map_err(|e| format!("{alg} at eps={eps}: {e}"))?;
    Ok(mean(&v))
}

fn criterion_1() -> Outcome {
    ensure(choose_m(10_000, 1.0, 2, 10.0) == 1000.0, || format!("choose_m = {}", choose_m(10_000, 1.0, 2, 10.0)))?;
    let params = PgkmParams::default();
    let rounds = num_rounds(10_000, 1.0, &params);
    ensure(rounds == 8, || format!("num_rounds = {rounds}"))?;
    let per = per_selection_budget(1.0, rounds, params.m_prime);
    ensure(per == 1.0 / 80.0, || format!("per-selection budget = {per}"))?;
    for (n, k, policy, expected) in [
        (5_000, 15, BlockPolicy::NPow04, 30),
        (107_091, 5, BlockPolicy::ThreeK, 7139),
        (10_000, 5, BlockPolicy::NPow04, 40),
    ] {
        let ell = resolve_ell(n, k, policy).map_err(|e| e.to_string())?;
        ensure(ell == expected, || format!("resolve_ell({n}, {k}, {policy:?}) = {ell}, want {expected}"))?;
    }
    for eps in [0.1, 1.0, 3.0] {
        let s = laplace_scale(2, 1.0, 5, eps);
        ensure((s - 15.0 / eps).abs() <= 1e-12 * s, || format!("laplace_scale at eps={eps} = {s}"))?;
    }
    Ok("M=1000, rounds=8, eps/80, ell 30/7139/40, scale 15/eps".into())
}

fn criterion_2() -> Outcome {
    let beta = 2.0;
    let mut rng = Rng::new(2024);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| laplace_sample(beta, &mut rng).unwrap())
        .collect();
    let m = mean(&draws);
    let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    let target = 2.0 * beta * beta;
    ensure(m.abs() <= 0.03 * beta, || format!("laplace mean {m}"))?;
    ensure((var - target).abs() <= 0.03 * target, || format!("laplace variance {var} vs {target}"))?;

    let qualities = [0.0, -1.0, -2.5, -0.3, -4.0];
    let (eps, sens) = (1.5, 1.0);
    let analytic = exp_probabilities(&qualities, eps, sens).map_err(|e| e.to_string())?;
    let draws = 100_000;
    let mut budget = Budget::new(eps * draws as f64).map_err(|e| e.to_string())?;
    let mut freq = [0usize; 5];
    let mut rng = Rng::new(77);
    for _ in 0..draws {
        let i = exp_select_scores(&qualities, eps, sens, &mut rng, &mut budget, "tv").map_err(|e| e.to_string())?;
        freq[i] += 1;
    }
    let tv = 0.5
        * freq
            .iter()
            .zip(&analytic)
            .map(|(&f, p)| (f as f64 / draws as f64 - p).abs())
            .sum::<f64>();
    ensure(tv <= 0.02, || format!("exp_select TV distance {tv}"))?;
    Ok(format!("mean {m:.4}, var {var:.4} (target {target}), TV {tv:.4}"))
}

fn criterion_3() -> Outcome {
    let eps = 1e9;
    let spec = SyntheticSpec::new(2, 4, 4000, 0.6, 31);
    let (data, _) = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    let inits = make_init_sets(2, 4, 1.0, 30, 5);

    let params = DPLloydParams::default();
    let mut worst = 0.0f64;
    for (i, init) in inits.iter().take(5).enumerate() {
        let mut budget = Budget::new(eps).unwrap();
        let private = dplloyd(&data, init, eps, &params, &mut Rng::new(i as u64), &mut budget).map_err(|e| e.to_string())?;
        worst = worst.max(private.max_coord_diff(&lloyd_steps(&data, init, params.t)));
    }
    ensure(worst <= 1e-3, || format!("dplloyd vs lloyd max coordinate diff {worst}"))?;

    let grid = eugkm_grid(data.n(), 2, 1.0, eps, DEFAULT_THETA).map_err(|e| e.to_string())?;
    let mut budget = Budget::new(eps).unwrap();
    let syn = publish_synopsis(&data, &grid, eps, &mut Rng::new(3), &mut budget).map_err(|e| e.to_string())?;
    let exact = exact_histogram(&data, &grid);
    let count_diff = syn
        .counts
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(count_diff <= 1e-3, || format!("synopsis count diff {count_diff}"))?;

    let baseline = run_baseline(&data, &inits).map_err(|e| e.to_string())?;
    let mut budget = Budget::new(eps).unwrap();
    let (c, _) = eugkm(&data, 4, eps, DEFAULT_THETA, &inits, &mut Rng::new(9), &mut budget).map_err(|e| e.to_string())?;
    let eu = nicv(&data, &c);
    ensure(eu <= 1.05 * baseline, || format!("eugkm NICV {eu} vs baseline {baseline}"))?;

    let hp = HybridParams::default();
    let rng = Rng::new(12);
    let mut budget = Budget::new(eps).unwrap();
    let (h, decision) = hybrid(&data, 4, eps, &hp, &inits, &mut rng.clone(), &mut budget).map_err(|e| e.to_string())?;
    ensure(decision.applied_hybrid, || "hybrid not applied at eps=1e9".into())?;
    let mut b = Budget::new(eps).unwrap();
    let (mid, _) = eugkm(&data, 4, eps / 2.0, DEFAULT_THETA, &inits, &mut rng.clone(), &mut b).map_err(|e| e.to_string())?;
    let step_diff = h.max_coord_diff(&lloyd_step(&data, &mid));
    ensure(step_diff <= 1e-3, || format!("hybrid vs one Lloyd step diff {step_diff}"))?;

    Ok(format!(
        "dplloyd diff {worst:.2e}, count diff {count_diff:.2e}, eugkm/baseline {:.4}, hybrid diff {step_diff:.2e}",
        eu / baseline
    ))
}

fn criterion_4() -> Outcome {
    let mut checked = 0usize;
    for d in [2usize, 6] {
        let k = 4;
        let spec = SyntheticSpec::new(d, k, 2000, 0.5, 40 + d as u64);
        let (data, _) = gen_synthetic(&spec).map_err(|e| e.to_string())?;
        let inits = make_init_sets(d, k, 1.0, 3, 1);
        for eps in [0.05, 0.1, 1.0, 10.0] {
            let jobs: Vec<(&str, u64)> = ["dplloyd", "gkm", "gkm3k", "pgkm", "eugkm", "hybrid"]
                .iter()
                .flat_map(|a| (0..3u64).map(move |rep| (*a, rep)))
                .collect();
            let results: Vec<Result<f64, String>> = jobs
                .par_iter()
                .map(|&(alg, rep)| {
                    let mut rng = Rng::derived(rep, alg, (eps * 1000.0) as u64);
                    let mut budget = Budget::new(eps).map_err(|e| e.to_string())?;
                    let out = match alg {
                        "dplloyd" => dplloyd(&data, &inits[rep as usize], eps, &DPLloydParams::default(), &mut rng, &mut budget).map(|_| ()),
                        "gkm" => gkm(&data, k, eps, &GkmParams::new(BlockPolicy::NPow04), &mut rng, &mut budget).map(|_| ()),
                        "gkm3k" => gkm(&data, k, eps, &GkmParams::new(BlockPolicy::ThreeK), &mut rng, &mut budget).map(|_| ()),
                        "pgkm" => pgkm(&data, k, eps, &PgkmParams::default(), &mut rng, &mut budget).map(|_| ()),
                        "eugkm" => eugkm(&data, k, eps, DEFAULT_THETA, &inits, &mut rng, &mut budget).map(|_| ()),
                        _ => hybrid(&data, k, eps, &HybridParams::default(), &inits, &mut rng, &mut budget).map(|_| ()),
                    };
                    out.map_err(|e| format!("{alg} d={d} eps={eps}: {e}"))?;
                    Ok(budget.spent())
                })
                .collect();
            for ((alg, _), spent) in jobs.iter().zip(results) {
                let spent = spent?;
                ensure((spent - eps).abs() <= 1e-9, || format!("{alg} d={d} eps={eps} spent {spent}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} runs ended with ledger = eps"))
}

fn criterion_5() -> Outcome {
    // One DPLloyd round, k = 1: the assignment cannot change, so the error is
    // pure mechanism noise around the exact mean.
    let n = 10_000;
    let mut rng = Rng::new(500);
    let normal = rand_distr::Normal::new(0.5, 0.05).unwrap();
    let mut pts = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        pts.push(rng.sample::<f64, _>(normal).clamp(-1.0, 1.0));
    }
    let data = Dataset::with_domain(pts, 2, 1.0, "gaussian").map_err(|e| e.to_string())?;
    let init = Centroids::from_flat(vec![0.0, 0.0], 2).unwrap();
    let exact = lloyd_step(&data, &init);
    let mut notes = Vec::new();
    for eps in [0.1, 1.0, 10.0] {
        let errs: Vec<f64> = (0..2000u64)
            .into_par_iter()
            .map(|i| {
                let mut budget = Budget::new(eps).unwrap();
                let c = dplloyd_one_round(&data, &init, eps, &mut Rng::derived(5, "c5", i), &mut budget).unwrap();
                dpkm::kmeans::sq_dist(c.get(0), exact.get(0))
            })
            .collect();
        let empirical = mean(&errs);
        let p = ErrorModelParams { t: 1, ..ErrorModelParams::new(n, 2, 1, eps) };
        let predicted = predict_dplloyd_mse(&p);
        let ratio = empirical / predicted;
        ensure((1.0 / 3.0..=3.0).contains(&ratio), || {
            format!("dplloyd eps={eps}: empirical {empirical:.3e} vs predicted {predicted:.3e}")
        })?;
        notes.push(format!("dplloyd@{eps} x{ratio:.2}"));
    }

    // Synopsis centroid variance: one uniform square cluster [-0.5, 0.5]^2
    // covering a quarter of the domain, i.e. one of k = 4 equal clusters.
    let (k, c) = (4usize, 10_000usize);
    let mut pts = Vec::with_capacity(2 * c);
    for _ in 0..2 * c {
        pts.push(rng.gen_range(-0.5..0.5));
    }
    let data = Dataset::with_domain(pts, 2, 1.0, "square").map_err(|e| e.to_string())?;
    let grid = Grid::new(2, 40, 1.0).map_err(|e| e.to_string())?;
    let inside: Vec<(usize, Vec<f64>)> = (0..grid.n_cells())
        .map(|i| (i, grid.center(i)))
        .filter(|(_, x)| x.iter().all(|v| v.abs() < 0.5))
        .collect();
    for eps in [0.1, 1.0] {
        let centroids: Vec<[f64; 2]> = (0..2000u64)
            .into_par_iter()
            .map(|i| {
                let mut budget = Budget::new(eps).unwrap();
                let s = publish_synopsis(&data, &grid, eps, &mut Rng::derived(6, "c5s", i), &mut budget).unwrap();
                let mut acc = [0.0; 3];
                for (idx, x) in &inside {
                    acc[0] += s.counts[*idx] * x[0];
                    acc[1] += s.counts[*idx] * x[1];
                    acc[2] += s.counts[*idx];
                }
                [acc[0] / acc[2], acc[1] / acc[2]]
            })
            .collect();
        let mx = mean(&centroids.iter().map(|p| p[0]).collect::<Vec<_>>());
        let my = mean(&centroids.iter().map(|p| p[1]).collect::<Vec<_>>());
        let empirical = centroids.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>()
            / (centroids.len() - 1) as f64;
        let p = ErrorModelParams {
            m_cells: Some(grid.n_cells() as f64),
            ..ErrorModelParams::new(k * c, 2, k, eps)
        };
        let predicted = predict_eugkm_variance(&p);
        let ratio = empirical / predicted;
        ensure((1.0 / 3.0..=3.0).contains(&ratio), || {
            format!("synopsis eps={eps}: empirical {empirical:.3e} vs predicted {predicted:.3e}")
        })?;
        notes.push(format!("synopsis@{eps} x{ratio:.2}"));
    }
    Ok(notes.join(", "))
}

fn criterion_6() -> Outcome {
    let spec = SyntheticSpec::new(2, 5, 10_000, 0.5, 606);
    let (data, _) = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    let inits = make_init_sets(2, 5, 1.0, 10, 66);
    let baseline = run_baseline(&data, &inits).map_err(|e| e.to_string())?;
    let w = Workload {
        data: &data,
        k: 5,
        init_sets: &inits,
        seed: 6,
        theta: DEFAULT_THETA,
        rho: 0.25,
        t: 5,
    };
    // 10 initial sets x 5 runs for DPLloyd, 50 runs for the others.
    let mut reps = reps_all(10, 50);
    reps.dplloyd = 5;

    let eu_low = cell_mean(&w, Algorithm::Eugkm, 0.05, &reps)?;
    let dp_low = cell_mean(&w, Algorithm::DPLloyd, 0.05, &reps)?;
    let eu_high = cell_mean(&w, Algorithm::Eugkm, 2.0, &reps)?;
    let dp_high = cell_mean(&w, Algorithm::DPLloyd, 2.0, &reps)?;
    let dp_one = cell_mean(&w, Algorithm::DPLloyd, 1.0, &reps)?;
    let pg_one = cell_mean(&w, Algorithm::Pgkm, 1.0, &reps)?;

    let spec2 = SyntheticSpec::new(2, 2, 10_000, 0.8, 607);
    let (data2, _) = gen_synthetic(&spec2).map_err(|e| e.to_string())?;
    let inits2 = make_init_sets(2, 2, 1.0, 10, 67);
    let w2 = Workload { data: &data2, k: 2, init_sets: &inits2, ..w };
    let g3k = cell_mean(&w2, Algorithm::Gkm3k, 0.1, &reps)?;
    let g04 = cell_mean(&w2, Algorithm::Gkm, 0.1, &reps)?;

    let detail = format!(
        "baseline {baseline:.4}; eps=0.05 eugkm {eu_low:.4} dplloyd {dp_low:.4}; eps=2 eugkm {eu_high:.4} dplloyd {dp_high:.4}; \
         eps=0.1 gkm3k {g3k:.4} gkm {g04:.4}; eps=1 dplloyd {dp_one:.4} pgkm {pg_one:.4}"
    );
    ensure(eu_low < dp_low, || format!("(a) failed: {detail}"))?;
    ensure(eu_high <= 1.2 * baseline && dp_high <= 1.2 * baseline, || format!("(b) failed: {detail}"))?;
    ensure(g3k < g04, || format!("(c) failed: {detail}"))?;
    ensure(dp_one < pg_one, || format!("(d) failed: {detail}"))?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let (d, k, n) = (6usize, 5usize, 10_000usize);
    let spec = SyntheticSpec::new(d, k, n, 0.8, 707);
    let (data, _) = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    let inits = make_init_sets(d, k, 1.0, 5, 77);
    let params = HybridParams::default();
    let eps_b = decide(n, d, k, 1.0, 1.0, &params).eps_threshold;

    // Below the threshold the hybrid is EUGkM, draw for draw.
    let low = eps_b / 2.0;
    for i in 0..5u64 {
        let rng = Rng::derived(7, "fallback", i);
        let mut b1 = Budget::new(low).unwrap();
        let (h, decision) = hybrid(&data, k, low, &params, &inits, &mut rng.clone(), &mut b1).map_err(|e| e.to_string())?;
        ensure(!decision.applied_hybrid, || format!("hybrid applied below threshold at eps={low}"))?;
        let mut b2 = Budget::new(low).unwrap();
        let (e, _) = eugkm(&data, k, low, params.theta, &inits, &mut rng.clone(), &mut b2).map_err(|e| e.to_string())?;
        ensure(h == e, || "fallback output differs from EUGkM".into())?;
    }

    let baseline = run_baseline(&data, &inits).map_err(|e| e.to_string())?;
    let w = Workload {
        data: &data,
        k,
        init_sets: &inits,
        seed: 7,
        theta: params.theta,
        rho: params.rho,
        t: params.t,
    };
    let reps = reps_all(5, 50);
    let mut notes = vec![format!("eps_b {eps_b:.3}, baseline {baseline:.4}")];
    for eps in [eps_b.max(0.5), 2.0] {
        let hy = cell_mean(&w, Algorithm::Hybrid, eps, &reps)?;
        let eu = cell_mean(&w, Algorithm::Eugkm, eps, &reps)?;
        notes.push(format!("eps={eps:.3} hybrid {hy:.4} eugkm {eu:.4}"));
        ensure(hy <= eu + 0.05 * baseline, || notes.join("; "))?;
    }
    Ok(notes.join("; "))
}

fn criterion_8() -> Outcome {
    let spec = SyntheticSpec::new(2, 3, 1500, 0.6, 808);
    let mut cfg = ExperimentConfig::new(DatasetSource::Synthetic(spec), 3, vec![0.5, 1.0], Algorithm::ALL.to_vec());
    cfg.master_seed = 8;
    cfg.reps_overrides.insert("init_sets".into(), 3);
    for key in ["dplloyd", "gkm", "gkm3k", "pgkm", "eugkm", "hybrid", "hybrid_refine"] {
        cfg.reps_overrides.insert(key.into(), 3);
    }
    let a = run_experiment(&cfg).map_err(|e| e.to_string())?.to_csv();
    let b = run_experiment(&cfg).map_err(|e| e.to_string())?.to_csv();
    ensure(a == b, || "reports differ between identical runs".into())?;

    let (data, _) = gen_synthetic(&SyntheticSpec::new(2, 3, 1500, 0.6, 809)).map_err(|e| e.to_string())?;
    let grid = eugkm_grid(data.n(), 2, 1.0, 0.7, DEFAULT_THETA).map_err(|e| e.to_string())?;
    let mut budget = Budget::new(0.7).unwrap();
    let syn = publish_synopsis(&data, &grid, 0.7, &mut Rng::new(1), &mut budget).map_err(|e| e.to_string())?;
    let text = syn.to_text();
    let back = Synopsis::from_text(&text, "mem").map_err(|e| e.to_string())?;
    let bits_equal = back.counts.iter().zip(&syn.counts).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(bits_equal && back == syn && back.to_text() == text, || "synopsis round trip not exact".into())?;

    for (text, line) in [("0.1,0.2\n0.3,0.4\n0.5\n", 3), ("0.1,0.2\n0.3,abc\n", 2)] {
        match parse_csv(text, "mem", None) {
            Err(DpError::Format { line: l, .. }) if l == line => {}
            other => return Err(format!("csv {text:?}: expected format error at line {line}, got {other:?}")),
        }
    }
    Ok(format!("{} report bytes reproduced, synopsis of {} cells round-tripped", a.len(), syn.counts.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("formula exactness", criterion_1),
        ("mechanism statistics", criterion_2),
        ("noise-free oracles", criterion_3),
        ("budget audit", criterion_4),
        ("error-model validation", criterion_5),
        ("trend reproduction", criterion_6),
        ("hybrid behavior", criterion_7),
        ("determinism and formats", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| id.contains(p.as_str()) || name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {id} ({name}, {secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} ({name}, {secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
