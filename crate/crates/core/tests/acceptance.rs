//! End-to-end acceptance checks, one line each. Runs without the libtest
//! harness so the summary is always printed; exits non-zero on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use modbot_core::case_study;
use modbot_core::dynamics::{chain_e, two_link_d};
use modbot_core::grammar::enumerate_language;
use modbot_core::learner::{maximize, SearchOptions};
use modbot_core::lp::{solve_lp, LinearProgram, LpOutcome, Relation, Sense};
use modbot_core::planner::{plan, BlockSet, PathSpec, PlanOutcome};
use modbot_core::robustness::{
    evaluate, feasibility, min_slack, nominal_model, robustness, Feasibility, NominalOutcome,
};
use modbot_core::sat::{solve, Cnf, SatResult};
use modbot_core::synthesis::{check_design, correct_by_construction, s_synthesis, SynthesisConfig, INITIAL_WORD};
use modbot_core::{
    AbstractWorkspace, ConfigWord, ParamAssignment, Path, Polytope, Proposition, Region, RobotModel, RobustnessConfig,
    Sra, Srg, SynthesisOutcome, Workspace,
};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn timed(limit: Duration, t0: Instant, detail: String) -> Check {
    let el = t0.elapsed();
    if el > limit {
        Err(format!("{detail}; took {el:.1?} (limit {limit:?})"))
    } else {
        Ok(format!("{detail}; {el:.2?}"))
    }
}

fn two_links(srg: &Srg) -> ConfigWord {
    s_synthesis(&ConfigWord::parse(INITIAL_WORD, srg).unwrap(), srg, 4).unwrap()
}

fn language_equivalence() -> Check {
    let t0 = Instant::now();
    let srg = Srg::manipulator();
    // complete robots only: the grammar also derives arms without an end effector
    let from_grammar: std::collections::BTreeSet<ConfigWord> = enumerate_language(&srg, 11)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|w| w.contains("EN") && w.is_robot(&srg))
        .collect();
    let from_automaton = Sra::from_srg(&srg).map_err(|e| e.to_string())?.language(11);
    if from_grammar != from_automaton {
        let diff = from_grammar.symmetric_difference(&from_automaton).count();
        return Err(format!("{diff} words differ"));
    }
    timed(Duration::from_secs(5), t0, format!("{} words up to 11 tokens", from_grammar.len()))
}

fn reference_word() -> Check {
    let srg = Srg::manipulator();
    let sra = Sra::from_srg(&srg).map_err(|e| e.to_string())?;
    let w = ConfigWord::parse("B ε JO ε JO ε JO ε L ε JO ε L ε JO ε EN", &srg).map_err(|e| e.to_string())?;
    let a = sra.accepts(&w).map_err(|e| e.to_string())?;
    let run_len = a.run.as_ref().map_or(0, Vec::len);
    if !a.accepted || run_len != w.len() {
        return Err(format!("accepted {} run {run_len} for {} tokens", a.accepted, w.len()));
    }
    let b = sra.accepts(&ConfigWord::from_tokens(["B"])).map_err(|e| e.to_string())?;
    if b.accepted {
        return Err("bare base accepted".into());
    }
    Ok(format!("{}-token word accepted with a {run_len}-state run; \"B\" rejected", w.len()))
}

/// Random two-link problem on a 3 m square with a reachable nominal model.
struct Instance {
    aw: AbstractWorkspace,
    path: Path,
    model: RobotModel,
    cfg: RobustnessConfig,
}

fn random_instance(rng: &mut ChaCha8Rng, srg: &Srg, w: &ConfigWord) -> Instance {
    loop {
        let start = [rng.gen_range(0.3..2.7), rng.gen_range(0.3..2.7)];
        let tx = (start[0] + rng.gen_range(-1.0..1.0f64)).clamp(0.0, 2.5);
        let ty = (start[1] + rng.gen_range(-1.0..1.0f64)).clamp(0.0, 2.5);
        let regions = vec![Region::new(Polytope::from_box(tx, tx + 0.5, ty, ty + 0.5), Proposition::Target)];
        let ws = Workspace::with_free_fill([0.0, 3.0, 0.0, 3.0], regions)
            .unwrap()
            .with_start(Vector2::new(start[0], start[1]));
        let aw = ws.abstract_grid(0.25).unwrap();
        let spec = PathSpec::new(aw.start_cell().unwrap(), 40).unwrap();
        let PlanOutcome::Found(path) = plan(&aw, &spec, &BlockSet::new()).unwrap() else { continue };
        let cfg = RobustnessConfig {
            u_bound: rng.gen_range(0.05..6.0),
            dt: rng.gen_range(0.2..0.6),
            ..RobustnessConfig::default()
        };
        for _ in 0..50 {
            let theta = ParamAssignment::new(vec![rng.gen_range(0.5..2.5), rng.gen_range(0.5..2.5)]);
            if let NominalOutcome::Model(model) = nominal_model(w, srg, &theta, &aw, &path, &cfg).unwrap() {
                return Instance { aw, path, model, cfg };
            }
        }
    }
}

fn sign_instances() -> Vec<(Instance, f64, bool)> {
    let srg = Srg::manipulator();
    let w = two_links(&srg);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|_| {
            let inst = random_instance(&mut rng, &srg, &w);
            let rho = robustness(&inst.model, &inst.aw, &inst.path, &inst.cfg).unwrap().rho;
            let feasible = matches!(
                feasibility(&inst.model, &inst.aw, &inst.path, inst.cfg.u_bound, inst.cfg.margin_frac).unwrap(),
                Feasibility::Feasible { .. }
            );
            (inst, rho, feasible)
        })
        .collect()
}

fn sign_agreement(cases: &[(Instance, f64, bool)], t0: Instant) -> Check {
    let mismatches = cases.iter().filter(|(_, rho, f)| (*rho >= 0.0) != *f && rho.abs() > 1e-6).count();
    let robust = cases.iter().filter(|c| c.1 >= 0.0).count();
    let detail = format!("{} instances, {robust} robust, {mismatches} mismatches", cases.len());
    if mismatches > 0 {
        return Err(detail);
    }
    timed(Duration::from_secs(120), t0, detail)
}

fn slack_at_robust(cases: &[(Instance, f64, bool)]) -> Check {
    let mut worst = 0.0f64;
    let mut n = 0;
    for (inst, _, _) in cases.iter().filter(|c| c.1 >= 0.0) {
        let f = min_slack(&inst.model, &inst.aw, &inst.path, &inst.cfg).map_err(|e| e.to_string())?.f_k;
        worst = worst.max(f);
        n += 1;
    }
    let detail = format!("{n} robust instances, largest minimal slack {worst:.2e}");
    if n == 0 || worst > 1e-6 {
        Err(detail)
    } else {
        Ok(detail)
    }
}

fn monotone_under_extension() -> Check {
    let srg = Srg::manipulator();
    let w1 = ConfigWord::parse(INITIAL_WORD, &srg).unwrap();
    let w2 = two_links(&srg);
    let grid: Vec<f64> = (0..24).map(|i| 0.2 + 5.8 * i as f64 / 23.0).collect();
    let pinned = srg.link_bounds("L").map_or(0.2, |b| b[0]);
    let cfg = RobustnessConfig { dt: 0.5, ..RobustnessConfig::default() };
    let (mut finite, mut bad) = (0, Vec::new());
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = [rng.gen_range(0.3..2.7), rng.gen_range(0.3..2.7)];
        let tx = (s[0] + rng.gen_range(-0.8..0.8f64)).clamp(0.0, 2.5);
        let ty = (s[1] + rng.gen_range(-0.8..0.8f64)).clamp(0.0, 2.5);
        let regions = vec![Region::new(Polytope::from_box(tx, tx + 0.5, ty, ty + 0.5), Proposition::Target)];
        let ws = Workspace::with_free_fill([0.0, 3.0, 0.0, 3.0], regions).unwrap().with_start(Vector2::new(s[0], s[1]));
        let aw = ws.abstract_grid(0.25).unwrap();
        let spec = PathSpec::new(aw.start_cell().unwrap(), 60).unwrap();
        let PlanOutcome::Found(path) = plan(&aw, &spec, &BlockSet::new()).unwrap() else {
            return Err(format!("seed {seed}: no path"));
        };
        let best = |w: &ConfigWord, extra: Option<f64>| {
            grid.iter()
                .map(|&l| {
                    let mut th = vec![l];
                    th.extend(extra);
                    evaluate(w, &srg, &ParamAssignment::new(th), &aw, &path, &cfg).unwrap().1.rho
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let (before, after) = (best(&w1, None), best(&w2, Some(pinned)));
        if before.is_finite() {
            finite += 1;
        }
        if after < before - 1e-6 {
            bad.push(format!("seed {seed}: {before} -> {after}"));
        }
    }
    if bad.is_empty() {
        Ok(format!("20 seeds, {finite} with a finite one-link optimum, no decrease"))
    } else {
        Err(bad.join("; "))
    }
}

fn case_study_transition() -> Check {
    let t0 = Instant::now();
    let srg = Srg::manipulator();
    let ws = case_study::workspace();
    let aw = case_study::abstract_workspace().map_err(|e| e.to_string())?;
    let cfg = case_study::robustness_config();
    let spec = PathSpec::new(aw.start_cell().unwrap(), 200).unwrap();
    let PlanOutcome::Found(path) = plan(&aw, &spec, &BlockSet::new()).map_err(|e| e.to_string())? else {
        return Err("no path".into());
    };
    let w1 = ConfigWord::parse(INITIAL_WORD, &srg).unwrap();
    let one_link_best = (0..24)
        .map(|i| {
            let th = ParamAssignment::new(vec![0.2 + 5.8 * i as f64 / 23.0]);
            evaluate(&w1, &srg, &th, &aw, &path, &cfg).unwrap().1.rho
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if one_link_best >= 0.0 {
        return Err(format!("one link reaches rho {one_link_best}"));
    }
    let scfg = SynthesisConfig { cell: case_study::CELL, robustness: cfg, ..SynthesisConfig::default() };
    let SynthesisOutcome::Success(d) = correct_by_construction(&srg, &ws, &scfg).map_err(|e| e.to_string())? else {
        return Err("synthesis failed".into());
    };
    if d.n_links() != 2 || d.rho < 0.0 {
        return Err(format!("{} links, rho {}", d.n_links(), d.rho));
    }
    if !check_design(&srg, &ws, &d, &scfg).map_err(|e| e.to_string())?.is_verified() {
        return Err("synthesized design does not re-verify".into());
    }
    let reference = ParamAssignment::new(case_study::REFERENCE_LENGTHS.to_vec());
    let (_, r) = evaluate(&two_links(&srg), &srg, &reference, &aw, &path, &cfg).map_err(|e| e.to_string())?;
    if r.rho < 0.0 {
        return Err(format!("reference lengths give rho {}", r.rho));
    }
    timed(
        Duration::from_secs(600),
        t0,
        format!(
            "one link best {one_link_best}; synthesized {:.3?} with rho {}; reference rho {}",
            d.theta.lengths, d.rho, r.rho
        ),
    )
}

fn planner_scale() -> Check {
    let aw = case_study::abstract_workspace().map_err(|e| e.to_string())?;
    let spec = PathSpec::new(aw.start_cell().unwrap(), 200).unwrap();
    let PlanOutcome::Found(path) = plan(&aw, &spec, &BlockSet::new()).map_err(|e| e.to_string())? else {
        return Err("no path".into());
    };
    let n = path.cells.len() as f64;
    let detail = format!("{} cells against a reference of 81", path.cells.len());
    if (n - 81.0).abs() <= 0.5 * 81.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn truth_table(cnf: &Cnf) -> bool {
    (0u32..1 << cnf.n_vars).any(|bits| {
        cnf.clauses.iter().all(|c| {
            c.iter().any(|&l| {
                let v = bits >> (l.unsigned_abs() - 1) & 1 == 1;
                if l > 0 { v } else { !v }
            })
        })
    })
}

fn sat_kernel() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut disagree, mut sat) = (0, 0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=16usize);
        let m = rng.gen_range(1..=(5 * n));
        let mut cnf = Cnf::new(n);
        for _ in 0..m {
            let width = rng.gen_range(1..=3);
            let c: Vec<i32> = (0..width)
                .map(|_| {
                    let v = rng.gen_range(1..=n as i32);
                    if rng.gen_bool(0.5) { v } else { -v }
                })
                .collect();
            cnf.add_clause(c).unwrap();
        }
        let expect = truth_table(&cnf);
        let got = match solve(&cnf).map_err(|e| e.to_string())? {
            SatResult::Sat(model) => {
                if !cnf.satisfied_by(&model) {
                    return Err("returned model does not satisfy its formula".into());
                }
                true
            }
            SatResult::Unsat => false,
        };
        sat += usize::from(expect);
        disagree += usize::from(got != expect);
    }
    let detail = format!("200 formulas ({sat} satisfiable), {disagree} disagreements");
    if disagree == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Best feasible basic solution by trying every choice of `n` tight rows.
fn vertex_optimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let mut rows: Vec<(Vec<f64>, f64)> = lp.constraints.iter().map(|c| (c.coeffs.clone(), c.rhs)).collect();
    rows.extend((0..n).map(|j| ((0..n).map(|k| f64::from(u8::from(j == k))).collect(), 0.0)));
    let mut best: Option<f64> = None;
    let total = rows.len();
    for mask in 0u32..1 << total {
        if mask.count_ones() as usize != n {
            continue;
        }
        let pick: Vec<usize> = (0..total).filter(|i| mask >> i & 1 == 1).collect();
        let a = DMatrix::from_fn(n, n, |i, j| rows[pick[i]].0[j]);
        let b = DVector::from_iterator(n, pick.iter().map(|&i| rows[i].1));
        let Some(x) = a.lu().solve(&b) else { continue };
        let x: Vec<f64> = x.iter().copied().collect();
        if x.iter().any(|v| !v.is_finite()) || lp.max_violation(&x) > 1e-9 {
            continue;
        }
        let v = lp.objective_value(&x);
        best = Some(match (best, lp.sense) {
            (None, _) => v,
            (Some(b), Sense::Maximize) => b.max(v),
            (Some(b), Sense::Minimize) => b.min(v),
        });
    }
    best
}

fn lp_kernel() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst, mut infeasible) = (0.0f64, 0);
    for i in 0..100 {
        let n = rng.gen_range(1..=6usize);
        let m = rng.gen_range(1..=6usize);
        let obj = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut lp = if rng.gen_bool(0.5) { LinearProgram::maximize(obj) } else { LinearProgram::minimize(obj) };
        for _ in 0..m {
            let rel = [Relation::Le, Relation::Ge, Relation::Eq][rng.gen_range(0..3)];
            let rel = if rel == Relation::Eq && rng.gen_bool(0.7) { Relation::Le } else { rel };
            lp.add((0..n).map(|_| rng.gen_range(-2.0..3.0)).collect(), rel, rng.gen_range(-2.0..8.0));
        }
        for j in 0..n {
            lp.add_sparse(&[(j, 1.0)], Relation::Le, 5.0);
        }
        let oracle = vertex_optimum(&lp);
        match (solve_lp(&lp).map_err(|e| e.to_string())?, oracle) {
            (LpOutcome::Optimal { value, .. }, Some(v)) => worst = worst.max((value - v).abs()),
            (LpOutcome::Infeasible, None) => infeasible += 1,
            (got, want) => return Err(format!("instance {i}: solver {got:?}, vertices {want:?}")),
        }
    }
    let detail = format!("100 programs ({infeasible} infeasible), largest gap {worst:.1e}");
    if worst <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn learner_benchmark() -> Check {
    let t0 = Instant::now();
    let quad = |t: &[f64]| Ok(-(t[0] - 2.0).powi(2) - (t[1] - 3.0).powi(2));
    let near = |t: &[f64]| (t[0] - 2.0).hypot(t[1] - 3.0) <= 0.1 + 1e-9;
    let mut gp_evals = Vec::new();
    let mut hits = 0;
    for seed in 0..20 {
        let opts = SearchOptions { budget: 60, grid_per_dim: 61, seed, stop_at: None, ..SearchOptions::default() };
        let r = maximize(&[[0.0, 6.0], [0.0, 6.0]], &opts, quad).map_err(|e| e.to_string())?;
        hits += usize::from(near(&r.best_theta));
        gp_evals.push(r.history.iter().position(|h| near(&h.theta)).map_or(usize::MAX, |i| i + 1));
    }
    let mut random_evals: Vec<usize> = (0..20u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            (1..=100_000)
                .find(|_| near(&[rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0)]))
                .unwrap_or(usize::MAX)
        })
        .collect();
    gp_evals.sort_unstable();
    random_evals.sort_unstable();
    let median = |v: &[usize]| (v[9] as f64 + v[10] as f64) / 2.0;
    let (g, r) = (median(&gp_evals), median(&random_evals));
    let detail = format!("{hits}/20 seeds within 0.1; median evaluations {g} against random {r}; {:.1?}", t0.elapsed());
    if hits >= 18 && g < r {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dynamics_oracles() -> Check {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(1..=4usize);
        let lengths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..6.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
        let qd: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let e = chain_e(&lengths, &q, &qd).map_err(|e| e.to_string())?;
        for k in 0..3 {
            for l in 0..3 {
                let direct = e.stacked(k).transpose() * e.stacked(l);
                worst = worst.max((e.gram(k, l) - direct).amax());
            }
        }
    }
    let d = two_link_d(1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    let want = [[8.0 / 3.0, 5.0 / 6.0], [5.0 / 6.0, 1.0 / 3.0]];
    let spot = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| m.max((d[(i, j)] - want[i][j]).abs()));
    let detail = format!("Gram recursion gap {worst:.1e}; two-link D spot gap {spot:.1e}");
    if worst <= 1e-10 && spot <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let t_sign = Instant::now();
    let cases = sign_instances();
    let results: Vec<(&str, Check)> = vec![
        ("grammar and automaton languages agree", language_equivalence()),
        ("reference word accepted, base alone rejected", reference_word()),
        ("robustness sign matches direct feasibility", sign_agreement(&cases, t_sign)),
        ("robustness never drops when a link is added", monotone_under_extension()),
        ("robust instances have zero minimal slack", slack_at_robust(&cases)),
        ("case study: one link fails, two links certify", case_study_transition()),
        ("case-study path length near reference", planner_scale()),
        ("SAT verdicts match truth tables", sat_kernel()),
        ("LP optima match vertex enumeration", lp_kernel()),
        ("GP search beats random search", learner_benchmark()),
        ("dynamics oracles", dynamics_oracles()),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", i + 1)
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
