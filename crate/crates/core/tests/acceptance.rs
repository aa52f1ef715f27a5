//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any hard criterion fails. The ranking check is reported but
//! never gates the run.

mod common;

use std::sync::Arc;
use std::time::Instant;

use hdsa_core::forward::{sensor_grid, ForwardModel, SolveCounter};
use hdsa_core::hdsa::{
    apply_dm, report_from, risk_generalized, run_pipeline, spread_study, HdsaSetup, PipelineOutput, SampleRecord,
    SampleSummary,
};
use hdsa_core::lowrank::{build_lowrank, InverseMethod, LowRankConfig};
use hdsa_core::newton::{solve_map, SolverConfig};
use hdsa_core::params::{Aux, ComplementaryParams, N_AUX};
use hdsa_core::prior::PriorSpec;
use hdsa_core::scalar::{argmax, moments, posterior_comparison, scalar_hdsa, scalar_sample, trapezoid, ScalarProblem};
use hdsa_core::NodalField;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    soft: bool,
    detail: String,
}

impl Outcome {
    fn hard(pass: bool, detail: String) -> Self {
        Self { pass, soft: false, detail }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn unit(n: usize, j: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[j] = 1.0;
    e
}

fn setup(n: usize) -> HdsaSetup {
    let model = Arc::new(ForwardModel::new(n, PriorSpec::default(), &sensor_grid(5)).unwrap());
    HdsaSetup::new(model, ComplementaryParams::nominal(25))
}

/// Setup whose MAP solves target a relative gradient of 1e-10 and whose
/// inverse Hessian is applied by tightly converged CG.
fn exact_setup(n: usize) -> HdsaSetup {
    let mut s = setup(n);
    s.solver = SolverConfig {
        grad_tol: 1e-10,
        max_newton_steps: 100,
        ..SolverConfig::default()
    };
    s.lowrank = LowRankConfig {
        method: InverseMethod::Cg,
        cg_tol: 1e-12,
        cg_max_iterations: 2000,
        ..LowRankConfig::default()
    };
    s
}

fn random_theta(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(37, |i, _| {
        if i < N_AUX {
            rng.random_range(-1.0..1.0)
        } else {
            rng.random_range(-0.5..0.5)
        }
    })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn gradient_vs_fd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = SolveCounter::new();
    let (mut worst_best, mut worst_slope) = (0.0f64, 0.0f64);
    let mut slopes = Vec::new();
    for t in 0..20u64 {
        let (prob, _) = common::problem(16, 200 + t);
        let prob = prob.with_params(prob.params().with_theta(random_theta(&mut rng)).unwrap()).unwrap();
        let model = prob.model().clone();
        let m = model.prior().sample(model.prior_mean(), 1000 + t);
        let d = model.prior().sample(&DVector::zeros(m.len()), 2000 + t);
        let exact = prob.state(&m, &c).unwrap().gradient().dot(&d);
        // Half-decade steps from 1 down to 1e-8.
        let errs: Vec<(f64, f64)> = (0..=16)
            .map(|k| {
                let h = 10f64.powf(-(k as f64) / 2.0);
                let fd = (prob.cost(&(&m + &d * h), &c).unwrap() - prob.cost(&(&m - &d * h), &c).unwrap()) / (2.0 * h);
                (h, rel(fd, exact))
            })
            .collect();
        let best = errs.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        // Truncation regime: h in [1e-3, 1], three decades.
        let (lx, ly): (Vec<f64>, Vec<f64>) = errs[..=6].iter().map(|(h, e)| (h.log10(), e.log10())).unzip();
        let slope = least_squares_slope(&lx, &ly);
        worst_best = worst_best.max(best);
        worst_slope = worst_slope.max((slope - 2.0).abs());
        slopes.push(slope);
    }
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    Outcome::hard(
        worst_best <= 1e-5 && worst_slope <= 0.1,
        format!("20 triples, 16x16: worst best-step error {worst_best:.2e} (<= 1e-5), slopes over h in [1e-3, 1] in [{lo:.3}, {hi:.3}] (2 +/- 0.1)"),
    )
}

fn symmetry_and_pairing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = SolveCounter::new();
    let (mut hs, mut bs) = (0.0f64, 0.0f64);
    for t in 0..10u64 {
        let (prob, _) = common::problem(16, 300 + t);
        let prob = prob.with_params(prob.params().with_theta(random_theta(&mut rng)).unwrap()).unwrap();
        let model = prob.model().clone();
        let zero = DVector::zeros(model.n_nodes());
        let s = prob.state(&model.prior().sample(model.prior_mean(), 400 + t), &c).unwrap();
        let v = model.prior().sample(&zero, 500 + t);
        let w = model.prior().sample(&zero, 600 + t);
        let (a, b) = (s.hessian_apply(&v).dot(&w), v.dot(&s.hessian_apply(&w)));
        hs = hs.max((a - b).abs() / a.abs().max(b.abs()));
        let th = random_theta(&mut rng);
        let (a, b) = (s.b_apply(&th).unwrap().dot(&v), s.bt_apply(&s.incremental(&v)).unwrap().dot(&th));
        bs = bs.max((a - b).abs() / a.abs().max(b.abs()));
    }
    Outcome::hard(
        hs <= 1e-10 && bs <= 1e-10,
        format!("10 pairs, 16x16: Hessian symmetry {hs:.2e}, B/B^T pairing {bs:.2e} (<= 1e-10)"),
    )
}

fn m_norm(model: &ForwardModel, v: &NodalField) -> f64 {
    model.mass().norm(v)
}

fn map_sensitivity_vs_fd() -> Outcome {
    let s = exact_setup(8);
    let rec = s.run_sample(0, 31).unwrap();
    let model = s.model.clone();
    let prob = s.problem(rec.observations.clone()).unwrap();
    let resolve = |params: ComplementaryParams| -> (NodalField, bool) {
        let p = prob.with_params(params).unwrap();
        let sol = solve_map(&p, &rec.map, &s.solver, &SolveCounter::new()).unwrap();
        (sol.m, sol.stats.converged)
    };
    let picks = [
        (Aux::Beta.index(), "beta"),
        (Aux::F2.index(), "f2"),
        (Aux::W1.index(), "w1"),
        (Aux::Z1.index(), "z1"),
        (Aux::Gamma2.index(), "gamma2"),
        (N_AUX + 12, "sigma13"),
    ];
    let mut worst = 0.0f64;
    let mut unconverged = usize::from(!rec.stats.converged);
    let mut parts = Vec::new();
    for (j, name) in picks {
        let dm = apply_dm(&rec, &unit(37, j)).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for h in [1e-1, 1e-2, 1e-3, 1e-4] {
            let (plus, cp) = resolve(s.params.perturbed(j, h));
            let (minus, cm) = resolve(s.params.perturbed(j, -h));
            unconverged += usize::from(!cp) + usize::from(!cm);
            let fd = (plus - minus) / (2.0 * h);
            let e = m_norm(&model, &(&fd - &dm)) / m_norm(&model, &dm);
            if e < best.0 {
                best = (e, h);
            }
        }
        worst = worst.max(best.0);
        parts.push(format!("{name} {:.1e}@h={:.0e}", best.0, best.1));
    }
    Outcome::hard(
        worst <= 1e-3,
        format!(
            "8x8, M-norm relative error per j [{}], worst {worst:.2e} (<= 1e-3); {unconverged} MAP solves stopped at the noise floor before 1e-10",
            parts.join(", ")
        ),
    )
}

fn risk_of(s: &HdsaSetup, records: &[SampleRecord], params: &ComplementaryParams) -> f64 {
    let mut total = 0.0;
    for r in records {
        let p = s.problem(r.observations.clone()).unwrap().with_params(params.clone()).unwrap();
        let sol = solve_map(&p, &r.map, &s.solver, &SolveCounter::new()).unwrap();
        let e = &sol.m - &r.prior_draw;
        total += s.model.mass().bilinear(&e, &e);
    }
    total / records.len() as f64
}

fn risk_sensitivity_vs_fd() -> Outcome {
    let s = exact_setup(8);
    let records: Vec<SampleRecord> = (0..3).map(|i| s.run_sample(i, 41).unwrap()).collect();
    let mut d_r = DVector::zeros(37);
    for r in &records {
        d_r += r.risk_gradient().unwrap();
    }
    d_r /= records.len() as f64;
    let picks = [
        (Aux::Beta.index(), "beta"),
        (Aux::F2.index(), "f2"),
        (Aux::Z1.index(), "z1"),
        (Aux::Gamma2.index(), "gamma2"),
        (N_AUX + 6, "sigma7"),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (j, name) in picks {
        let mut best = (f64::INFINITY, 0.0);
        for h in [1e-1, 1e-2, 1e-3] {
            let fd = (risk_of(&s, &records, &s.params.perturbed(j, h)) - risk_of(&s, &records, &s.params.perturbed(j, -h))) / (2.0 * h);
            let e = rel(fd, d_r[j]);
            if e < best.0 {
                best = (e, h);
            }
        }
        worst = worst.max(best.0);
        parts.push(format!("{name} {:.1e}@h={:.0e}", best.0, best.1));
    }
    Outcome::hard(worst <= 1e-3, format!("8x8, n_s = 3, relative error [{}], worst {worst:.2e} (<= 1e-3)", parts.join(", ")))
}

fn dual_route() -> Outcome {
    let s = setup(8);
    let records: Vec<SampleRecord> = (0..3).map(|i| s.run_sample(i, 17).unwrap()).collect();
    let mut d_r = DVector::zeros(37);
    for r in &records {
        d_r += r.risk_gradient().unwrap();
    }
    d_r /= 3.0;
    let mut worst = 0.0f64;
    for j in 0..37 {
        let e = unit(37, j);
        let mut via_dm = 0.0;
        for r in &records {
            let me = r.state.model().mass().mul_vec(&r.error());
            via_dm += 2.0 * apply_dm(r, &e).unwrap().dot(&me);
        }
        worst = worst.max((via_dm / 3.0 - d_r[j]).abs());
    }
    let worst = worst / d_r.amax();
    Outcome::hard(worst <= 1e-8, format!("8x8, n_s = 3, 37 components: max |difference| / max |D^R| = {worst:.2e} (<= 1e-8)"))
}

fn low_rank_inverse() -> Outcome {
    let (prob, truth) = common::problem(6, 7);
    let sol = solve_map(&prob, &truth, &SolverConfig::default(), &SolveCounter::new()).unwrap();
    let state = sol.state;
    let n = state.m().len();
    let h = common::dense_hessian(&state);
    let chol = h.cholesky();
    let prior = state.model().prior();
    let lr = build_lowrank(&state, n, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut violations) = (0.0f64, 0);
    let Some(chol) = chol else {
        return Outcome::hard(false, "dense Hessian at the MAP point is not positive definite".into());
    };
    for _ in 0..5 {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let exact = chol.solve(&v);
        worst = worst.max((lr.inv_apply(&v) - &exact).norm() / exact.norm());
        let mut last = f64::INFINITY;
        for r in 0..=n {
            let e = lr.truncated(r).inv_apply(&v) - &exact;
            let err = prior.cameron_martin(&e, &e).sqrt();
            if err > last * (1.0 + 1e-9) + 1e-12 {
                violations += 1;
            }
            last = err;
        }
    }
    let c = SolveCounter::new();
    let fresh = prob.state(&sol.m, &c).unwrap();
    let r = 20;
    build_lowrank(&fresh, r, 1).unwrap();
    let cost = c.get();
    Outcome::hard(
        lr.rank() == n && worst <= 1e-8 && violations == 0 && cost == 2 * r as u64 + 2,
        format!(
            "6x6, r = n_m = {n}: inverse error {worst:.2e} (<= 1e-8), {violations} monotonicity violations in the R-norm over r = 0..{n}, {cost} solves for r = {r} from a fresh point (2r + 2 = {})",
            2 * r + 2
        ),
    )
}

fn index_structure(out: &PipelineOutput) -> Outcome {
    let r = &out.report;
    let mut singleton = 0.0f64;
    for g in r.groups.iter().filter(|g| g.members.len() == 1) {
        singleton = singleton.max(rel(g.map_raw, g.members[0].map_raw)).max(rel(g.risk_raw, g.members[0].risk_raw));
    }
    let d_r = DVector::from_column_slice(&r.d_r);
    let slice = DVector::from_column_slice(&r.d_r[N_AUX..]);
    let sigma = r.groups.iter().find(|g| g.name == "sigma").unwrap();
    let scheme = &setup(16).scheme;
    let direct = risk_generalized(&d_r, &scheme.groups[12]);
    let slice_err = rel(sigma.risk_raw, slice.norm()).max(rel(direct, slice.norm()));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut best: f64 = 0.0;
    for _ in 0..100_000 {
        let u = DVector::from_fn(slice.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        best = best.max(slice.dot(&u).abs() / u.norm());
    }
    let margin = sigma.risk_raw / best - 1.0;
    Outcome::hard(
        singleton <= 1e-12 && slice_err <= 1e-12 && margin >= -0.005,
        format!(
            "singleton generalized vs pointwise {singleton:.1e} (<= 1e-12), sigma index vs slice norm {slice_err:.1e} (<= 1e-12), margin over 1e5-sample random search {:+.3}% (>= -0.5%)",
            100.0 * margin
        ),
    )
}

fn scalar_oracle() -> Outcome {
    let p = ScalarProblem::default();
    let s = scalar_hdsa(&p, 10, 7, 1e-5).unwrap();
    let fd_err = rel(s.risk_sensitivity_fd, s.risk_sensitivity).max(rel(s.map_sensitivity_fd, s.map_sensitivity));
    let grid = p.grid(4001);
    let mut norm_err = 0.0f64;
    for i in 0..5 {
        let (_, y) = scalar_sample(&p, 3, i);
        for theta in [p.theta, p.perturbed_theta] {
            let pdf = p.posterior_pdf(&y, theta, &grid).unwrap();
            norm_err = norm_err.max((trapezoid(&grid, &pdf) - 1.0).abs());
        }
    }
    let c = posterior_comparison(&p, 2024, 8001).unwrap();
    let (peak0, peak1) = (argmax(&c.grid, &c.nominal), argmax(&c.grid, &c.perturbed));
    let (sd0, sd1) = (moments(&c.grid, &c.nominal).1, moments(&c.grid, &c.perturbed).1);
    let map = p.map_point(&c.data, p.theta).unwrap();
    let predicted = p.map_derivative(&c.data, p.theta, map) * (p.perturbed_theta - p.theta);
    let moved = peak0 != peak1 && (peak1 - peak0).signum() == predicted.signum();
    let spread = (sd1 - sd0).abs() > 1e-3 * sd0;
    Outcome::hard(
        fd_err <= 1e-6 && norm_err <= 1e-8 && moved && spread,
        format!(
            "formula vs FD {fd_err:.1e} (<= 1e-6), normalization error {norm_err:.1e} (<= 1e-8), peak {peak0:.4} -> {peak1:.4} (predicted sign {:+}), posterior sd {sd0:.4} -> {sd1:.4}",
            predicted.signum()
        ),
    )
}

fn ranking(summaries: &[SampleSummary]) -> Outcome {
    let scheme = setup(16).scheme;
    let refs: Vec<&SampleSummary> = summaries.iter().collect();
    let r = report_from(&refs, &scheme).unwrap();
    let aux: Vec<_> = r.groups.iter().filter(|g| g.name != "sigma").collect();
    let top_aux = |f: fn(&&hdsa_core::hdsa::GroupIndices) -> f64| {
        aux.iter().max_by(|a, b| f(a).total_cmp(&f(b))).map(|g| g.name.clone()).unwrap()
    };
    let (top_map, top_risk) = (top_aux(|g| g.map_raw), top_aux(|g| g.risk_raw));
    let mut order: Vec<_> = r.groups.iter().collect();
    order.sort_by(|a, b| b.risk_raw.total_cmp(&a.risk_raw));
    let top5: Vec<&str> = order[..5].iter().map(|g| g.name.as_str()).collect();
    let want = ["gamma2", "f2", "z1", "beta", "sigma"];
    let five_ok = want.iter().all(|w| top5.contains(w));
    let rank_of = |name: &str| order.iter().position(|g| g.name == name).unwrap() + 1;
    Outcome {
        pass: top_map == "gamma2" && top_risk == "gamma2" && five_ok,
        soft: true,
        detail: format!(
            "16x16, n_s = {}: top auxiliary by MAP index {top_map}, by risk index {top_risk}; risk top five {:?}; gamma2 ranks {} of 13 for risk",
            r.n_used,
            top5,
            rank_of("gamma2")
        ),
    }
}

fn spread(summaries: &[SampleSummary]) -> Outcome {
    let scheme = setup(16).scheme;
    let reports: Vec<_> = [20, 100, 500].iter().map(|&k| spread_study(summaries, &scheme, k, 10, 99).unwrap()).collect();
    let mut inversions = Vec::new();
    for (k, g) in scheme.groups.iter().enumerate() {
        let stds: Vec<f64> = reports.iter().map(|r| r.subgroups[k].risk_generalized_norm.unwrap().std).collect();
        for w in 0..2 {
            if stds[w + 1] > stds[w] {
                inversions.push(format!("{} ({:.2e} -> {:.2e})", g.name, stds[w], stds[w + 1]));
            }
        }
    }
    let mean_std = |r: &hdsa_core::hdsa::SpreadReport| {
        r.subgroups.iter().map(|g| g.risk_generalized_norm.unwrap().std).sum::<f64>() / r.subgroups.len() as f64
    };
    Outcome::hard(
        inversions.len() <= 1,
        format!(
            "pool {}, 10 groups each, mean std of normalized risk indices {:.3e} -> {:.3e} -> {:.3e}; {} inversions over 26 steps (<= 1){}",
            summaries.len(),
            mean_std(&reports[0]),
            mean_std(&reports[1]),
            mean_std(&reports[2]),
            inversions.len(),
            if inversions.is_empty() { String::new() } else { format!(": {}", inversions.join(", ")) }
        ),
    )
}

fn ledger(summaries: &[SampleSummary]) -> Outcome {
    let mut bad = 0;
    let mut extra_inverse = 0u64;
    for s in summaries {
        let (l, e) = (&s.ledger, &s.expected);
        let overhead = s.stats.bookkeeping_solves();
        extra_inverse += overhead;
        let ok = l.data_generation == 1
            && e.data_generation == 1
            && l.inverse_solve == e.inverse_solve + overhead
            && e.inverse_solve == 2 * s.stats.newton_steps as u64 + 2 * s.stats.cg_iterations as u64
            && l.risk_sensitivity == 2
            && l.map_sensitivity == 2 * 37
            && (s.cg_fallback || l.lowrank_build + 2 == e.lowrank_build);
        bad += usize::from(!ok);
    }
    Outcome::hard(
        bad == 0,
        format!(
            "{} samples, {bad} mismatches; rows: data 1, inverse 2L + 2*sum(I) plus 2 + backtracks ({:.1} per sample on average), risk 2, MAP 2*37, low rank 2r (state reused)",
            summaries.len(),
            extra_inverse as f64 / summaries.len() as f64
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "{} [{id:>2}] {name}{}: {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            if o.soft { " (soft)" } else { "" },
            o.detail
        );
        results.push((id, name, o, secs));
    };

    run(1, "adjoint gradient vs central FD", &gradient_vs_fd);
    run(2, "Hessian symmetry and B/B^T pairing", &symmetry_and_pairing);
    run(3, "MAP sensitivity vs re-solved MAP", &map_sensitivity_vs_fd);
    run(4, "Bayes-risk sensitivity vs FD", &risk_sensitivity_vs_fd);
    run(5, "dual-route identity", &dual_route);
    run(6, "low-rank inverse Hessian", &low_rank_inverse);

    let pool = run_pipeline(&setup(16), 600, 2024).unwrap();
    let first: Vec<SampleSummary> = pool.summaries[..100].to_vec();
    let hundred = PipelineOutput {
        report: report_from(&first.iter().collect::<Vec<_>>(), &setup(16).scheme).unwrap(),
        summaries: first.clone(),
        artifacts: Vec::new(),
    };
    run(7, "index structure", &|| index_structure(&hundred));
    run(8, "scalar oracle", &scalar_oracle);
    run(9, "ranking reproduction", &|| ranking(&first));
    run(10, "sample-size spread", &|| spread(&pool.summaries));
    run(11, "cost ledger", &|| ledger(&pool.summaries));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass && !r.2.soft).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria pass, hard failures {:?}, {:.0}s",
        results.iter().filter(|r| r.2.pass).count(),
        results.len(),
        failed,
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
