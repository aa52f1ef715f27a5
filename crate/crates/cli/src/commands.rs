use std::fs;
use std::path::Path;

use hdsa_core::config::RunConfig;
use hdsa_core::forward::SolveCounter;
use hdsa_core::hdsa::{run_pipeline, spread_study, HdsaSetup, PipelineOutput, SampleSeeds};
use hdsa_core::ledger::{CostLedger, ExpectedCosts};
use hdsa_core::newton::{solve_map, SolveStats};
use hdsa_core::scalar::{posterior_comparison, scalar_hdsa};
use hdsa_core::{HdsaError, NodalField};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::output::{opt, write_json, write_sensitivities, write_spread, ArrayDump, Result};

#[derive(Debug, Serialize)]
struct LedgerRow {
    sample: usize,
    recorded: CostLedger,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected: Option<ExpectedCosts>,
    newton_steps: usize,
    cg_iterations: usize,
    backtracks: usize,
    total: u64,
}

#[derive(Debug, Serialize)]
struct LedgerFile<'a> {
    command: &'a str,
    seed: u64,
    per_sample: Vec<LedgerRow>,
    totals: CostLedger,
    total_solves: u64,
}

fn write_ledger(out: &Path, command: &str, seed: u64, per_sample: Vec<LedgerRow>) -> Result<()> {
    let mut totals = CostLedger::default();
    for r in &per_sample {
        totals += r.recorded;
    }
    let file = LedgerFile {
        command,
        seed,
        total_solves: totals.total(),
        totals,
        per_sample,
    };
    write_json(&out.join("ledger.json"), &file)
}

fn rows<'a>(fields: &'a [NodalField]) -> impl Iterator<Item = &'a [f64]> {
    fields.iter().map(|f| f.as_slice())
}

fn meta(cfg: &RunConfig, seed: u64, n: usize) -> serde_json::Value {
    json!({"mesh": cfg.mesh, "n_nodes": (cfg.mesh + 1) * (cfg.mesh + 1), "seed": seed, "n_samples": n})
}

/// Prior draws and synthetic data (one PDE solve per sample).
pub fn synthesize(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let setup = cfg.setup()?;
    let draws: Vec<_> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let counter = SolveCounter::new();
            let (m, obs) = setup.draw(SampleSeeds::derive(seed, i), &counter)?;
            Ok::<_, HdsaError>((m, obs, counter.get()))
        })
        .collect::<std::result::Result<_, _>>()?;

    let mut w = csv::Writer::from_path(out.join("observations.csv"))?;
    w.write_record(["sample", "sensor", "x1", "x2", "y", "noise"])?;
    for (i, (_, obs, _)) in draws.iter().enumerate() {
        for (j, c) in obs.sensor_coords.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string(), c[0].to_string(), c[1].to_string(), obs.y[j].to_string(), obs.noise[j].to_string()])?;
        }
    }
    w.flush()?;

    let mut dump = ArrayDump::new(&out.join("samples"))?;
    let m: Vec<NodalField> = draws.iter().map(|d| d.0.clone()).collect();
    dump.add("prior_draws", rows(&m))?;
    dump.add("data", draws.iter().map(|d| d.1.y.as_slice()))?;
    dump.add("noise", draws.iter().map(|d| d.1.noise.as_slice()))?;
    dump.finish(meta(cfg, seed, draws.len()))?;

    let ledger = draws
        .iter()
        .enumerate()
        .map(|(i, d)| LedgerRow {
            sample: i,
            recorded: CostLedger {
                data_generation: d.2,
                ..CostLedger::default()
            },
            expected: None,
            newton_steps: 0,
            cg_iterations: 0,
            backtracks: 0,
            total: d.2,
        })
        .collect();
    write_ledger(out, "synthesize", seed, ledger)
}

fn stats_record(i: usize, s: &SolveStats, squared_error: f64) -> Vec<String> {
    vec![
        i.to_string(),
        s.converged.to_string(),
        s.newton_steps.to_string(),
        s.cg_iterations.to_string(),
        s.backtracks.to_string(),
        s.negative_curvature_steps.to_string(),
        s.pde_solves.to_string(),
        s.initial_cost.to_string(),
        s.final_cost.to_string(),
        s.initial_grad_norm.to_string(),
        s.final_grad_norm.to_string(),
        squared_error.to_string(),
    ]
}

const STATS_HEADER: [&str; 12] = [
    "sample",
    "converged",
    "newton_steps",
    "cg_iterations",
    "backtracks",
    "negative_curvature_steps",
    "pde_solves",
    "initial_cost",
    "final_cost",
    "initial_grad_norm",
    "final_grad_norm",
    "squared_error",
];

/// Data synthesis followed by one MAP solve per sample.
pub fn map(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let setup = cfg.setup()?;
    let solved: Vec<_> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| solve_one(&setup, seed, i))
        .collect::<std::result::Result<_, _>>()?;

    let mass = setup.model.mass();
    let mut w = csv::Writer::from_path(out.join("map_stats.csv"))?;
    w.write_record(STATS_HEADER)?;
    for (i, s) in solved.iter().enumerate() {
        let e = &s.map - &s.prior_draw;
        w.write_record(stats_record(i, &s.stats, mass.bilinear(&e, &e)))?;
    }
    w.flush()?;

    let mut dump = ArrayDump::new(&out.join("samples"))?;
    let prior: Vec<_> = solved.iter().map(|s| s.prior_draw.clone()).collect();
    let maps: Vec<_> = solved.iter().map(|s| s.map.clone()).collect();
    dump.add("prior_draws", rows(&prior))?;
    dump.add("data", solved.iter().map(|s| s.y.as_slice()))?;
    dump.add("map_points", rows(&maps))?;
    dump.finish(meta(cfg, seed, solved.len()))?;

    let ledger = solved
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let recorded = CostLedger {
                data_generation: s.data_generation,
                inverse_solve: s.stats.pde_solves,
                ..CostLedger::default()
            };
            LedgerRow {
                sample: i,
                recorded,
                expected: Some(ExpectedCosts {
                    lowrank_build: 0,
                    risk_sensitivity: 0,
                    map_sensitivity: 0,
                    ..ExpectedCosts::new(s.stats.newton_steps, s.stats.cg_iterations, None, 0)
                }),
                newton_steps: s.stats.newton_steps,
                cg_iterations: s.stats.cg_iterations,
                backtracks: s.stats.backtracks,
                total: recorded.total(),
            }
        })
        .collect();
    write_ledger(out, "map", seed, ledger)
}

struct Solved {
    prior_draw: NodalField,
    y: Vec<f64>,
    map: NodalField,
    stats: SolveStats,
    data_generation: u64,
}

fn solve_one(setup: &HdsaSetup, seed: u64, i: usize) -> std::result::Result<Solved, HdsaError> {
    let counter = SolveCounter::new();
    let (m, obs) = setup.draw(SampleSeeds::derive(seed, i), &counter)?;
    let data_generation = counter.get();
    let y = obs.y.clone();
    let problem = setup.problem(obs)?;
    let sol = solve_map(&problem, &m, &setup.solver, &counter)?;
    info!("sample {i}: {} Newton steps, {} CG iterations", sol.stats.newton_steps, sol.stats.cg_iterations);
    Ok(Solved {
        prior_draw: m,
        y,
        map: sol.m,
        stats: sol.stats,
        data_generation,
    })
}

fn pipeline_ledger(out: &PipelineOutput) -> Vec<LedgerRow> {
    out.summaries
        .iter()
        .map(|s| LedgerRow {
            sample: s.index,
            recorded: s.ledger,
            expected: Some(s.expected),
            newton_steps: s.stats.newton_steps,
            cg_iterations: s.stats.cg_iterations,
            backtracks: s.stats.backtracks,
            total: s.ledger.total(),
        })
        .collect()
}

fn write_sample_table(path: &Path, out: &PipelineOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = STATS_HEADER.to_vec();
    header.extend(["map_norm", "lowrank_rank", "cg_fallback"]);
    w.write_record(&header)?;
    for s in &out.summaries {
        let mut rec = stats_record(s.index, &s.stats, s.squared_error);
        rec.push(s.map_norm.to_string());
        rec.push(s.lowrank_rank.map(|r| r.to_string()).unwrap_or_default());
        rec.push(s.cg_fallback.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn persist(cfg: &RunConfig, seed: u64, out: &Path, p: &PipelineOutput) -> Result<()> {
    let mut dump = ArrayDump::new(&out.join("samples"))?;
    let prior: Vec<_> = p.artifacts.iter().map(|a| a.prior_draw.clone()).collect();
    let maps: Vec<_> = p.artifacts.iter().map(|a| a.map.clone()).collect();
    dump.add("prior_draws", rows(&prior))?;
    dump.add("data", p.artifacts.iter().map(|a| a.observations.y.as_slice()))?;
    dump.add("noise", p.artifacts.iter().map(|a| a.observations.noise.as_slice()))?;
    dump.add("map_points", rows(&maps))?;
    let indices: Vec<f64> = p.artifacts.iter().map(|a| a.index as f64).collect();
    dump.add("sample_index", std::iter::once(indices.as_slice()))?;
    dump.finish(meta(cfg, seed, p.artifacts.len()))
}

/// Full sensitivity pipeline.
pub fn hdsa(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let setup = cfg.setup()?;
    let result = run_pipeline(&setup, cfg.n_samples, seed)?;
    for w in &result.report.warnings {
        log::warn!("{w}");
    }
    write_sensitivities(&out.join("sensitivities.csv"), &result.report, seed)?;
    write_json(&out.join("report.json"), &result.report)?;
    write_sample_table(&out.join("samples.csv"), &result)?;
    write_ledger(out, "hdsa", seed, pipeline_ledger(&result))?;
    if cfg.persist_samples {
        persist(cfg, seed, out, &result)?;
    }
    Ok(())
}

/// Sample-group spread study over a pooled run.
pub fn spread(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let setup = cfg.setup()?;
    let pool = run_pipeline(&setup, cfg.spread.pool_size, seed)?;
    let reports = cfg
        .spread
        .group_sizes
        .iter()
        .map(|&g| spread_study(&pool.summaries, &setup.scheme, g, cfg.spread.n_groups, seed))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    write_spread(&out.join("spread.csv"), &reports)?;
    write_json(&out.join("spread.json"), &reports)?;
    write_sensitivities(&out.join("sensitivities.csv"), &pool.report, seed)?;
    write_sample_table(&out.join("samples.csv"), &pool)?;
    write_ledger(out, "spread", seed, pipeline_ledger(&pool))?;
    if cfg.persist_samples {
        persist(cfg, seed, out, &pool)?;
    }
    Ok(())
}

/// One-dimensional example: curves, densities and sensitivities.
pub fn oracle(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let oc = &cfg.oracle;
    let p = &oc.problem;
    let c = posterior_comparison(p, seed, oc.grid_points)?;

    let mut w = csv::Writer::from_path(out.join("oracle_state.csv"))?;
    w.write_record(["x", "y"])?;
    for (x, y) in c.curve_x.iter().zip(&c.curve_y) {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("oracle_data.csv"))?;
    w.write_record(["x", "y"])?;
    for (x, y) in p.sensors.iter().zip(&c.data) {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("oracle_pdf.csv"))?;
    w.write_record(["m", "prior", "posterior_nominal", "posterior_perturbed"])?;
    for i in 0..c.grid.len() {
        w.write_record([c.grid[i].to_string(), c.prior[i].to_string(), c.nominal[i].to_string(), c.perturbed[i].to_string()])?;
    }
    w.flush()?;

    let s = scalar_hdsa(p, oc.n_samples, seed, oc.fd_step)?;
    let norm = |v: f64, d: f64| if d > 0.0 { Some(v / d) } else { None };
    let mut w = csv::Writer::from_path(out.join("sensitivities.csv"))?;
    w.write_record(["qoi", "subgroup", "member", "pointwise_raw", "pointwise_norm", "generalized_raw", "generalized_norm", "n_s", "seed"])?;
    for (qoi, raw, d) in [("map", s.map_sensitivity, s.average_map_norm), ("risk", s.risk_sensitivity.abs(), s.bayes_risk)] {
        let n = opt(norm(raw, d));
        w.write_record([qoi, "theta", "theta", &raw.to_string(), &n, &raw.to_string(), &n, &oc.n_samples.to_string(), &seed.to_string()])?;
    }
    w.flush()?;
    write_json(&out.join("oracle.json"), &json!({"sensitivities": s, "data": c.data, "truth": c.truth}))?;
    let ledger = LedgerFile {
        command: "oracle",
        seed,
        per_sample: Vec::new(),
        totals: CostLedger::default(),
        total_solves: 0,
    };
    write_json(&out.join("ledger.json"), &ledger)
}

pub fn prepare_output(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    let stale = out.join("error.json");
    if stale.exists() {
        fs::remove_file(stale)?;
    }
    fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}
