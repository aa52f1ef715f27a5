//! Hyper-differential sensitivities of the MAP point and the Bayes risk.
//!
//! For each sample `i` (prior draw `m_i`, data `y_i`, MAP point `m*_i`):
//!
//! ```text
//! D^M_i = -H_i⁻¹ B_i
//! Ψ̂     = (1/n_s) Σ ‖m*_i - m_i‖²_M
//! D^R   = (2/n_s) Σ B_iᵀ z_i,   z_i = -H_i⁻¹ M (m*_i - m_i)
//! ```
//!
//! Indices are taken over subgroups of θ. The MAP indices are per-sample
//! operator norms averaged over samples; the risk indices come from the
//! averaged `D^R`.

use std::sync::Arc;

use log::{info, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{HessianMode, InverseProblem, OptimizationState};
use crate::error::{HdsaError, Result};
use crate::fem::NodalField;
use crate::forward::{ForwardModel, ObservationSet, SolveCounter};
use crate::ledger::{CostLedger, ExpectedCosts};
use crate::lowrank::{HessianInverse, LowRankConfig};
use crate::newton::{solve_map, SolveStats, SolverConfig};
use crate::params::{ComplementaryParams, N_AUX};

/// One subgroup of θ with its direction basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    pub name: String,
    pub members: Vec<usize>,
    /// One vector of length `n_θ` per member, supported on `members`.
    pub basis: Vec<DVector<f64>>,
}

impl Subgroup {
    pub fn canonical(name: impl Into<String>, members: Vec<usize>, n_theta: usize) -> Self {
        let basis = members
            .iter()
            .map(|&j| {
                let mut e = DVector::zeros(n_theta);
                e[j] = 1.0;
                e
            })
            .collect();
        Self {
            name: name.into(),
            members,
            basis,
        }
    }

    /// Gram matrix `bᵢᵀ bⱼ` of the basis.
    pub fn basis_gram(&self) -> DMatrix<f64> {
        let k = self.basis.len();
        DMatrix::from_fn(k, k, |i, j| self.basis[i].dot(&self.basis[j]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupScheme {
    pub groups: Vec<Subgroup>,
    pub names: Vec<String>,
}

impl SubgroupScheme {
    /// Each auxiliary scalar alone, plus all noise standard deviations as one
    /// group named `sigma`.
    pub fn paper(params: &ComplementaryParams) -> Self {
        let n = params.n_theta();
        let names = params.names();
        let mut groups: Vec<Subgroup> = (0..N_AUX).map(|j| Subgroup::canonical(names[j].clone(), vec![j], n)).collect();
        if n > N_AUX {
            groups.push(Subgroup::canonical("sigma", (N_AUX..n).collect(), n));
        }
        Self { groups, names }
    }

    pub fn n_theta(&self) -> usize {
        self.names.len()
    }

    /// Checks that the subgroups partition `0..n_θ` and that each basis is
    /// supported on its members and linearly independent.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_theta();
        let mut seen = vec![false; n];
        for g in &self.groups {
            if g.basis.len() != g.members.len() || g.members.is_empty() {
                return Err(HdsaError::InvalidConfig {
                    key: format!("subgroups.{}", g.name),
                    reason: "needs one basis vector per member".into(),
                });
            }
            for &j in &g.members {
                if j >= n || std::mem::replace(&mut seen[j], true) {
                    return Err(HdsaError::InvalidConfig {
                        key: format!("subgroups.{}", g.name),
                        reason: format!("θ index {j} is out of range or repeated"),
                    });
                }
            }
            for b in &g.basis {
                if b.len() != n || b.iter().enumerate().any(|(j, v)| *v != 0.0 && !g.members.contains(&j)) {
                    return Err(HdsaError::InvalidConfig {
                        key: format!("subgroups.{}", g.name),
                        reason: "basis vector leaves the subgroup".into(),
                    });
                }
            }
            if g.basis_gram().cholesky().is_none() {
                return Err(HdsaError::InvalidConfig {
                    key: format!("subgroups.{}", g.name),
                    reason: "basis is linearly dependent".into(),
                });
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(HdsaError::InvalidConfig {
                key: "subgroups".into(),
                reason: format!("θ index {j} belongs to no subgroup"),
            });
        }
        Ok(())
    }

    /// Selection `T_k θ`: zeroes components outside subgroup `k`.
    pub fn select(&self, k: usize, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(theta.len());
        for &j in &self.groups[k].members {
            out[j] = theta[j];
        }
        out
    }
}

/// `|dᵀ b| / ‖b‖`.
pub fn risk_pointwise(d_r: &DVector<f64>, b: &DVector<f64>) -> f64 {
    d_r.dot(b).abs() / b.norm()
}

/// `max |dᵀ θ| / ‖θ‖` over the span of the basis:
/// `sqrt(cᵀ G⁻¹ c)` with `c_j = dᵀ b_j` and `G` the basis Gram matrix.
pub fn risk_generalized(d_r: &DVector<f64>, group: &Subgroup) -> f64 {
    let c = DVector::from_iterator(group.basis.len(), group.basis.iter().map(|b| d_r.dot(b)));
    let gram = group.basis_gram();
    if gram.is_identity(0.0) {
        return c.norm();
    }
    let chol = gram.cholesky().expect("validated basis");
    c.dot(&chol.solve(&c)).max(0.0).sqrt()
}

/// `max ‖W x‖_M / ‖B x‖` for columns `W = D^M B`, from the column Gram
/// `WᵀMW` and the basis Gram `BᵀB`.
pub fn map_generalized(column_gram: &DMatrix<f64>, basis_gram: &DMatrix<f64>) -> f64 {
    let a = if basis_gram.is_identity(0.0) {
        column_gram.clone()
    } else {
        let l = basis_gram.clone().cholesky().expect("validated basis").l();
        let linv = l.try_inverse().expect("nonsingular factor");
        &linv * column_gram * linv.transpose()
    };
    let a = (&a + a.transpose()) * 0.5;
    SymmetricEigen::new(a).eigenvalues.max().max(0.0).sqrt()
}

/// Per-sample seeds split from the master seed by stream index, so that
/// sample `i` does not depend on how many samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSeeds {
    pub prior: u64,
    pub noise: u64,
    pub lanczos: u64,
}

impl SampleSeeds {
    pub fn derive(master: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        rng.set_stream(index as u64);
        Self {
            prior: rng.random(),
            noise: rng.random(),
            lanczos: rng.random(),
        }
    }
}

/// Everything shared by the per-sample pipelines.
#[derive(Debug, Clone)]
pub struct HdsaSetup {
    pub model: Arc<ForwardModel>,
    pub params: ComplementaryParams,
    pub solver: SolverConfig,
    pub lowrank: LowRankConfig,
    pub mode: HessianMode,
    pub noiseless_data: bool,
    pub scheme: SubgroupScheme,
}

impl HdsaSetup {
    pub fn new(model: Arc<ForwardModel>, params: ComplementaryParams) -> Self {
        let scheme = SubgroupScheme::paper(&params);
        Self {
            model,
            params,
            solver: SolverConfig::default(),
            lowrank: LowRankConfig::default(),
            mode: HessianMode::default(),
            noiseless_data: false,
            scheme,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        self.lowrank.validate()?;
        self.scheme.validate()?;
        if self.scheme.n_theta() != self.params.n_theta() {
            return Err(HdsaError::DimensionMismatch {
                expected: self.params.n_theta(),
                got: self.scheme.n_theta(),
            });
        }
        Ok(())
    }

    /// Draws `m_i` and synthesizes `y_i` (one PDE solve).
    pub fn draw(&self, seeds: SampleSeeds, counter: &SolveCounter) -> Result<(NodalField, ObservationSet)> {
        let m = self.model.prior().sample(self.model.prior_mean(), seeds.prior);
        let obs = self.model.synthesize_data(&m, &self.params, seeds.noise, counter)?;
        let obs = if self.noiseless_data { obs.noiseless() } else { obs };
        Ok((m, obs))
    }

    pub fn problem(&self, obs: ObservationSet) -> Result<InverseProblem> {
        Ok(InverseProblem::new(self.model.clone(), obs, self.params.clone())?.with_mode(self.mode))
    }

    /// Data generation, MAP solve from `m_i`, and inverse-Hessian setup.
    pub fn run_sample(&self, index: usize, master_seed: u64) -> Result<SampleRecord> {
        let seeds = SampleSeeds::derive(master_seed, index);
        let counter = SolveCounter::new();
        let (m, obs) = self.draw(seeds, &counter)?;
        let data_generation = counter.get();
        self.finish_sample(index, seeds, m, obs, counter, data_generation)
    }

    /// Runs the sample pipeline on a given draw and data set.
    pub fn run_sample_from(&self, index: usize, seeds: SampleSeeds, m: NodalField, obs: ObservationSet) -> Result<SampleRecord> {
        self.finish_sample(index, seeds, m, obs, SolveCounter::new(), 0)
    }

    fn finish_sample(
        &self,
        index: usize,
        seeds: SampleSeeds,
        m: NodalField,
        obs: ObservationSet,
        counter: SolveCounter,
        data_generation: u64,
    ) -> Result<SampleRecord> {
        let problem = self.problem(obs.clone())?;
        let before = counter.get();
        let sol = solve_map(&problem, &m, &self.solver, &counter)?;
        let inverse_solve = counter.get() - before;
        let before = counter.get();
        let inverse = HessianInverse::build(&sol.state, &self.lowrank, seeds.lanczos)?;
        let lowrank_build = counter.get() - before;
        Ok(SampleRecord {
            index,
            seeds,
            prior_draw: m,
            observations: obs,
            map: sol.m,
            stats: sol.stats,
            state: sol.state,
            inverse,
            counter,
            ledger: CostLedger {
                data_generation,
                inverse_solve,
                lowrank_build,
                ..CostLedger::default()
            },
        })
    }
}

/// One sample of the pipeline with its cached MAP state and inverse Hessian.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub index: usize,
    pub seeds: SampleSeeds,
    pub prior_draw: NodalField,
    pub observations: ObservationSet,
    pub map: NodalField,
    pub stats: SolveStats,
    pub state: OptimizationState,
    pub inverse: HessianInverse,
    pub ledger: CostLedger,
    counter: SolveCounter,
}

impl SampleRecord {
    pub fn counter(&self) -> &SolveCounter {
        &self.counter
    }

    pub fn error(&self) -> NodalField {
        &self.map - &self.prior_draw
    }

    /// `‖m*_i − m_i‖²_M`.
    pub fn squared_error(&self) -> f64 {
        let e = self.error();
        self.state.model().mass().bilinear(&e, &e)
    }

    pub fn map_norm(&self) -> f64 {
        self.state.model().mass().bilinear(&self.map, &self.map).sqrt()
    }

    pub fn inverse_apply(&self, v: &NodalField) -> Result<NodalField> {
        self.inverse.apply(&self.state, v)
    }

    /// `z_i = −H⁻¹ M (m*_i − m_i)`.
    pub fn risk_adjoint(&self) -> Result<NodalField> {
        let rhs = self.state.model().mass().mul_vec(&self.error());
        Ok(-self.inverse_apply(&rhs)?)
    }

    /// This sample's term `2 Bᵀ z_i` of `n_s · D^R`; two PDE solves beyond
    /// the inverse apply.
    pub fn risk_gradient(&self) -> Result<DVector<f64>> {
        let z = self.risk_adjoint()?;
        let inc = self.state.incremental(&z);
        Ok(self.state.bt_apply(&inc)? * 2.0)
    }
}

/// `D^M θ̃ = −H⁻¹ B θ̃`; two PDE solves plus one inverse apply.
pub fn apply_dm(sample: &SampleRecord, direction: &DVector<f64>) -> Result<NodalField> {
    let b = sample.state.b_apply(direction)?;
    Ok(-sample.inverse_apply(&b)?)
}

fn converged(samples: &[SampleRecord]) -> Result<Vec<&SampleRecord>> {
    if samples.is_empty() {
        return Err(HdsaError::NoSamples);
    }
    let used: Vec<_> = samples.iter().filter(|s| s.stats.converged).collect();
    if used.len() < samples.len() {
        warn!("{} unconverged samples excluded", samples.len() - used.len());
    }
    if used.is_empty() {
        return Err(HdsaError::AllSamplesFailed(samples.len()));
    }
    Ok(used)
}

/// `Ψ̂ = (1/n_s) Σ ‖m*_i − m_i‖²_M` over converged samples.
pub fn bayes_risk(samples: &[SampleRecord]) -> Result<f64> {
    let used = converged(samples)?;
    Ok(used.iter().map(|s| s.squared_error()).sum::<f64>() / used.len() as f64)
}

/// `D^R = (2/n_s) Σ B_iᵀ z_i` over converged samples.
pub fn assemble_dr(samples: &[SampleRecord]) -> Result<DVector<f64>> {
    let used = converged(samples)?;
    let mut acc = DVector::zeros(used[0].state.params().n_theta());
    for s in &used {
        acc += s.risk_gradient()?;
    }
    Ok(acc / used.len() as f64)
}

/// Per-sample quantities from which any sample group's report is formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub index: usize,
    pub seeds: SampleSeeds,
    pub converged: bool,
    pub squared_error: f64,
    pub map_norm: f64,
    /// `2 Bᵀ z_i`.
    pub risk_gradient: Vec<f64>,
    /// Pointwise MAP indices per subgroup and member.
    pub map_pointwise: Vec<Vec<f64>>,
    /// Generalized MAP index per subgroup.
    pub map_generalized: Vec<f64>,
    pub stats: SolveStats,
    pub ledger: CostLedger,
    pub expected: ExpectedCosts,
    pub lowrank_rank: Option<usize>,
    pub cg_fallback: bool,
}

/// Computes the risk term and all MAP indices of one sample.
pub fn summarize_sample(sample: &SampleRecord, scheme: &SubgroupScheme) -> Result<SampleSummary> {
    let counter = &sample.counter;
    let mut ledger = sample.ledger;

    let before = counter.get();
    let risk_gradient = sample.risk_gradient()?;
    ledger.risk_sensitivity = counter.get() - before;

    let before = counter.get();
    let mass = sample.state.model().mass();
    let mut map_pointwise = Vec::with_capacity(scheme.groups.len());
    let mut map_generalized = Vec::with_capacity(scheme.groups.len());
    for g in &scheme.groups {
        let cols = g.basis.iter().map(|b| apply_dm(sample, b)).collect::<Result<Vec<_>>>()?;
        let mcols: Vec<_> = cols.iter().map(|c| mass.mul_vec(c)).collect();
        let k = cols.len();
        let gram = DMatrix::from_fn(k, k, |i, j| cols[i].dot(&mcols[j]));
        let gram = (&gram + gram.transpose()) * 0.5;
        map_pointwise.push((0..k).map(|j| gram[(j, j)].max(0.0).sqrt() / g.basis[j].norm()).collect());
        map_generalized.push(map_generalized_index(&gram, g));
    }
    ledger.map_sensitivity = counter.get() - before;

    let lowrank = sample.inverse.low_rank();
    Ok(SampleSummary {
        index: sample.index,
        seeds: sample.seeds,
        converged: sample.stats.converged,
        squared_error: sample.squared_error(),
        map_norm: sample.map_norm(),
        risk_gradient: risk_gradient.iter().copied().collect(),
        map_pointwise,
        map_generalized,
        stats: sample.stats.clone(),
        ledger,
        expected: ExpectedCosts::new(
            sample.stats.newton_steps,
            sample.stats.cg_iterations,
            sample.inverse.lanczos_steps(),
            scheme.n_theta(),
        ),
        lowrank_rank: lowrank.map(|l| l.rank()),
        cg_fallback: lowrank.is_none(),
    })
}

fn map_generalized_index(gram: &DMatrix<f64>, g: &Subgroup) -> f64 {
    if g.members.len() == 1 {
        // Same value as the pointwise index, without the eigen-solve.
        return gram[(0, 0)].max(0.0).sqrt() / g.basis[0].norm();
    }
    map_generalized(gram, &g.basis_gram())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberIndices {
    pub name: String,
    pub theta_index: usize,
    pub map_raw: f64,
    pub map_norm: Option<f64>,
    pub risk_raw: f64,
    pub risk_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIndices {
    pub name: String,
    pub members: Vec<MemberIndices>,
    pub map_raw: f64,
    pub map_norm: Option<f64>,
    pub risk_raw: f64,
    pub risk_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub theta_names: Vec<String>,
    pub groups: Vec<GroupIndices>,
    pub d_r: Vec<f64>,
    pub bayes_risk: f64,
    pub average_map_norm: f64,
    pub n_samples: usize,
    pub n_used: usize,
    pub n_unconverged: usize,
    pub n_failed: usize,
    pub ledger: CostLedger,
    pub warnings: Vec<String>,
}

/// Averages sample summaries into raw indices (normalized fields unset).
pub fn aggregate(summaries: &[&SampleSummary], scheme: &SubgroupScheme) -> Result<SensitivityReport> {
    if summaries.is_empty() {
        return Err(HdsaError::NoSamples);
    }
    let used: Vec<&SampleSummary> = summaries.iter().copied().filter(|s| s.converged).collect();
    if used.is_empty() {
        return Err(HdsaError::AllSamplesFailed(summaries.len()));
    }
    let n = used.len() as f64;
    let n_theta = scheme.n_theta();
    let mut d_r = DVector::zeros(n_theta);
    let mut ledger = CostLedger::default();
    for s in summaries {
        ledger += s.ledger;
    }
    for s in &used {
        d_r += DVector::from_column_slice(&s.risk_gradient);
    }
    d_r /= n;
    let bayes_risk = used.iter().map(|s| s.squared_error).sum::<f64>() / n;
    let average_map_norm = used.iter().map(|s| s.map_norm).sum::<f64>() / n;

    let groups = scheme
        .groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let members = g
                .members
                .iter()
                .enumerate()
                .map(|(j, &t)| MemberIndices {
                    name: scheme.names[t].clone(),
                    theta_index: t,
                    map_raw: used.iter().map(|s| s.map_pointwise[k][j]).sum::<f64>() / n,
                    map_norm: None,
                    risk_raw: risk_pointwise(&d_r, &g.basis[j]),
                    risk_norm: None,
                })
                .collect();
            GroupIndices {
                name: g.name.clone(),
                members,
                map_raw: used.iter().map(|s| s.map_generalized[k]).sum::<f64>() / n,
                map_norm: None,
                risk_raw: risk_generalized(&d_r, g),
                risk_norm: None,
            }
        })
        .collect();

    Ok(SensitivityReport {
        theta_names: scheme.names.clone(),
        groups,
        d_r: d_r.iter().copied().collect(),
        bayes_risk,
        average_map_norm,
        n_samples: summaries.len(),
        n_used: used.len(),
        n_unconverged: summaries.len() - used.len(),
        n_failed: 0,
        ledger,
        warnings: Vec::new(),
    })
}

/// Divides MAP indices by the average MAP norm and risk indices by `Ψ̂`.
pub fn normalize_report(report: &SensitivityReport) -> Result<SensitivityReport> {
    if !(report.average_map_norm > 0.0) {
        return Err(HdsaError::ZeroNormalizer("average MAP norm"));
    }
    if !(report.bayes_risk > 0.0) {
        return Err(HdsaError::ZeroNormalizer("Bayes risk"));
    }
    let (a, r) = (report.average_map_norm, report.bayes_risk);
    let mut out = report.clone();
    for g in &mut out.groups {
        g.map_norm = Some(g.map_raw / a);
        g.risk_norm = Some(g.risk_raw / r);
        for m in &mut g.members {
            m.map_norm = Some(m.map_raw / a);
            m.risk_norm = Some(m.risk_raw / r);
        }
    }
    Ok(out)
}

/// Raw report plus normalized values where the normalizers are positive.
pub fn report_from(summaries: &[&SampleSummary], scheme: &SubgroupScheme) -> Result<SensitivityReport> {
    let raw = aggregate(summaries, scheme)?;
    match normalize_report(&raw) {
        Ok(r) => Ok(r),
        Err(e) => {
            let mut raw = raw;
            raw.warnings.push(format!("normalized indices omitted: {e}"));
            Ok(raw)
        }
    }
}

/// Persistable per-sample fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleArtifacts {
    pub index: usize,
    pub prior_draw: NodalField,
    pub observations: ObservationSet,
    pub map: NodalField,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: SensitivityReport,
    pub summaries: Vec<SampleSummary>,
    pub artifacts: Vec<SampleArtifacts>,
}

/// Full pipeline over samples `0..n_samples`, in parallel on the current
/// rayon pool. Reductions run in sample order.
pub fn run_pipeline(setup: &HdsaSetup, n_samples: usize, master_seed: u64) -> Result<PipelineOutput> {
    setup.validate()?;
    if n_samples == 0 {
        return Err(HdsaError::NoSamples);
    }
    let results: Vec<Result<(SampleSummary, SampleArtifacts)>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let rec = setup.run_sample(i, master_seed)?;
            let summary = summarize_sample(&rec, &setup.scheme)?;
            info!(
                "sample {i}: L = {}, ΣI = {}, solves = {}",
                summary.stats.newton_steps,
                summary.stats.cg_iterations,
                summary.ledger.total()
            );
            let art = SampleArtifacts {
                index: i,
                prior_draw: rec.prior_draw,
                observations: rec.observations,
                map: rec.map,
            };
            Ok((summary, art))
        })
        .collect();

    let mut summaries = Vec::with_capacity(n_samples);
    let mut artifacts = Vec::with_capacity(n_samples);
    let mut warnings = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((s, a)) => {
                if !s.converged {
                    warnings.push(format!("sample {i}: MAP solve did not converge; excluded"));
                }
                if s.cg_fallback && setup.lowrank.method == crate::lowrank::InverseMethod::LowRank {
                    warnings.push(format!("sample {i}: indefinite misfit Hessian; CG inverse used"));
                }
                summaries.push(s);
                artifacts.push(a);
            }
            Err(e) => {
                warn!("sample {i} failed: {e}");
                warnings.push(format!("sample {i}: {e}"));
            }
        }
    }
    if summaries.is_empty() {
        return Err(HdsaError::AllSamplesFailed(n_samples));
    }
    let refs: Vec<&SampleSummary> = summaries.iter().collect();
    let mut report = report_from(&refs, &setup.scheme)?;
    report.n_samples = n_samples;
    report.n_failed = n_samples - summaries.len();
    report.warnings.splice(0..0, warnings);
    Ok(PipelineOutput {
        report,
        summaries,
        artifacts,
    })
}

/// Min, max, mean and standard deviation of one index across groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpread {
    pub subgroup: String,
    pub map_generalized: Spread,
    pub risk_generalized: Spread,
    pub map_generalized_norm: Option<Spread>,
    pub risk_generalized_norm: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub group_size: usize,
    pub n_groups: usize,
    pub subgroups: Vec<GroupSpread>,
}

/// Reports on `n_groups` random groups of `group_size` samples, each drawn
/// without replacement from `pool` (groups may overlap one another).
pub fn spread_study(
    pool: &[SampleSummary],
    scheme: &SubgroupScheme,
    group_size: usize,
    n_groups: usize,
    seed: u64,
) -> Result<SpreadReport> {
    if group_size == 0 || group_size > pool.len() || n_groups == 0 {
        return Err(HdsaError::InvalidConfig {
            key: "spread.group_sizes".into(),
            reason: format!("group size {group_size} must lie in 1..={}", pool.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group_size as u64);
    let mut reports = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let mut idx = sample_indices(&mut rng, pool.len(), group_size).into_vec();
        idx.sort_unstable();
        let group: Vec<&SampleSummary> = idx.iter().map(|&i| &pool[i]).collect();
        reports.push(report_from(&group, scheme)?);
    }
    let subgroups = scheme
        .groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let col = |f: &dyn Fn(&GroupIndices) -> Option<f64>| -> Option<Spread> {
                let v: Option<Vec<f64>> = reports.iter().map(|r| f(&r.groups[k])).collect();
                v.map(|v| Spread::of(&v))
            };
            GroupSpread {
                subgroup: g.name.clone(),
                map_generalized: col(&|x| Some(x.map_raw)).expect("raw values"),
                risk_generalized: col(&|x| Some(x.risk_raw)).expect("raw values"),
                map_generalized_norm: col(&|x| x.map_norm),
                risk_generalized_norm: col(&|x| x.risk_norm),
            }
        })
        .collect();
    Ok(SpreadReport {
        group_size,
        n_groups,
        subgroups,
    })
}
