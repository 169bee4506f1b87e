//! End-to-end structure discovery: train every combination, score it and
//! select the minimal-AIC one.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CollocationSet, Sample, TrainingData};
use crate::error::{Error, Result};
use crate::loss::HybridLoss;
use crate::network::{Checkpoint, MlpParams, NetworkConfig};
use crate::operators::{enumerate, Combination, OperatorId};
use crate::recurrent::{train_rp, warm_start, Measurements, RpConfig, RpModel};
use crate::selection::{aic_clamped, cc, rmse, select_with_failures, CandidateResult, DiscoveryReport, FailedCandidate};
use crate::trainer::{train_combination, write_training_log, TrainConfig, TrainerState};

/// Everything needed to run discovery on one dataset.
#[derive(Debug, Clone)]
pub struct DiscoveryProblem {
    pub train: TrainingData,
    pub colloc: CollocationSet,
    /// Evaluation points with ground truth (test grid or held-out sensor).
    pub test: Vec<Sample>,
    pub library: Vec<OperatorId>,
    pub net_u: NetworkConfig,
    pub net_g: NetworkConfig,
    pub train_config: TrainConfig,
    pub rp: Option<RpConfig>,
}

/// Trained networks of one candidate.
#[derive(Debug, Clone)]
pub struct TrainedCandidate {
    pub result: CandidateResult,
    pub params_u: MlpParams,
    pub params_g: MlpParams,
    pub rp: Option<RpModel>,
    pub state: TrainerState,
}

impl TrainedCandidate {
    /// Predictions of the final model (recurrent when trained).
    pub fn predict(&self, points: &[(f64, f64)], measurements: &Measurements) -> Result<Vec<f64>> {
        match &self.rp {
            Some(rp) => rp.predict(points, measurements).map(|(v, _)| v),
            None => points.iter().map(|&(x, t)| self.params_u.forward(&[x, t])).collect(),
        }
    }
}

fn predictions_u(u: &MlpParams, samples: &[Sample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| u.forward(&[s.x, s.t])).collect()
}

fn truth(samples: &[Sample]) -> Vec<f64> {
    samples.iter().map(|s| s.u).collect()
}

fn metric_pair(pred: &[f64], samples: &[Sample]) -> (f64, f64) {
    let t = truth(samples);
    let r = rmse(pred, &t).unwrap_or(f64::NAN);
    let c = cc(pred, &t).unwrap_or(f64::NAN);
    (r, c)
}

/// Trains and scores one combination.
pub fn train_candidate(comb: &Combination, problem: &DiscoveryProblem) -> Result<TrainedCandidate> {
    let loss = HybridLoss::new(&problem.train, &problem.colloc)?.with_physics_weight(problem.train_config.physics_weight);
    let state = train_combination(comb, &problem.net_u, &problem.net_g, &loss, &problem.train_config)?;
    let comb = state.comb.clone();
    let train_samples = problem.train.samples();
    let residuals = loss.residuals(&state.params_u, &state.params_g, &comb)?;
    let residual_rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let mut diagnostics = Vec::new();
    if state.line_search_failures > 0 {
        diagnostics.push(format!("{} line-search soft failures", state.line_search_failures));
    }
    let monotone = state.history.iter().all(|r| r.monotone());

    let pre_test = predictions_u(&state.params_u, &problem.test)?;
    let rmse_test_u = metric_pair(&pre_test, &problem.test).0;

    let (train_pred, test_pred, rp_model, pre_rp) = match &problem.rp {
        Some(rp_cfg) => {
            let measurements = Measurements::from_samples(&train_samples);
            let model = warm_start(&state.params_u, rp_cfg)?;
            let model = train_rp(model, &problem.train, &problem.colloc, &comb, &state.params_g, &measurements, rp_cfg)?;
            let points: Vec<(f64, f64)> = train_samples.iter().map(|s| (s.x, s.t)).collect();
            let (train_pred, _) = model.predict(&points, &measurements)?;
            let test_points: Vec<(f64, f64)> = problem.test.iter().map(|s| (s.x, s.t)).collect();
            let (test_pred, _) = model.predict(&test_points, &measurements)?;
            (train_pred, test_pred, Some(model), Some(rmse_test_u))
        }
        None => (predictions_u(&state.params_u, &train_samples)?, pre_test, None, None),
    };
    let sigma2_hat = train_pred
        .iter()
        .zip(&train_samples)
        .map(|(p, s)| (p - s.u) * (p - s.u))
        .sum::<f64>()
        / train_samples.len() as f64;
    let rmse_train = sigma2_hat.sqrt();
    let cc_train = cc(&train_pred, &truth(&train_samples)).unwrap_or(f64::NAN);
    let (rmse_test, cc_test) = metric_pair(&test_pred, &problem.test);
    let n = train_samples.len();
    let aic = aic_clamped(comb.p(), n, sigma2_hat)?;

    let result = CandidateResult {
        combination: comb,
        n,
        sigma2_hat,
        aic,
        rmse_train,
        cc_train,
        rmse_test,
        cc_test,
        residual_rmse,
        outer_iterations: state.k,
        converged: state.converged,
        checkpoint_u: None,
        checkpoint_g: None,
        checkpoint_rp: None,
        rmse_test_pre_rp: pre_rp,
        monotone,
        diagnostics,
    };
    Ok(TrainedCandidate {
        result,
        params_u: state.params_u.clone(),
        params_g: state.params_g.clone(),
        rp: rp_model,
        state,
    })
}

#[derive(Debug, Clone, Default)]
pub struct DiscoverOptions {
    /// Combinations trained concurrently.
    pub parallel: usize,
    /// Run directory for per-combination checkpoints and reports.
    pub out_dir: Option<PathBuf>,
    /// Re-use finished per-combination results found in `out_dir`.
    pub resume: bool,
}

/// Per-combination record stored under `candidates/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub result: Option<CandidateResult>,
    pub failure: Option<FailedCandidate>,
}

pub fn candidate_dir(out: &Path) -> PathBuf {
    out.join("candidates")
}

pub fn candidate_file(out: &Path, mask: u32) -> PathBuf {
    candidate_dir(out).join(format!("m{mask:05}.json"))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_record(path: &Path) -> Result<CandidateRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn persist(out: &Path, trained: &mut TrainedCandidate, seed: u64) -> Result<()> {
    let dir = candidate_dir(out);
    let mask = trained.result.mask();
    let name_u = format!("m{mask:05}_u.json");
    let name_g = format!("m{mask:05}_g.json");
    trained.params_u.to_checkpoint(seed).save(&dir.join(&name_u))?;
    trained.params_g.to_checkpoint(seed).save(&dir.join(&name_g))?;
    trained.result.checkpoint_u = Some(format!("candidates/{name_u}"));
    trained.result.checkpoint_g = Some(format!("candidates/{name_g}"));
    if let Some(rp) = &trained.rp {
        let name = format!("m{mask:05}_rp.json");
        rp.save(&dir.join(&name))?;
        trained.result.checkpoint_rp = Some(format!("candidates/{name}"));
    }
    write_training_log(&dir.join(format!("m{mask:05}_log.csv")), &trained.state.history)?;
    save_json(
        &candidate_file(out, mask),
        &CandidateRecord {
            result: Some(trained.result.clone()),
            failure: None,
        },
    )
}

fn run_one(comb: &Combination, problem: &DiscoveryProblem, opts: &DiscoverOptions) -> Result<std::result::Result<CandidateResult, FailedCandidate>> {
    if let (Some(out), true) = (&opts.out_dir, opts.resume) {
        let path = candidate_file(out, comb.mask());
        if path.exists() {
            let rec = load_record(&path)?;
            if let Some(r) = rec.result {
                return Ok(Ok(r));
            }
            if let Some(f) = rec.failure {
                return Ok(Err(f));
            }
        }
    }
    match train_candidate(comb, problem) {
        Ok(mut trained) => {
            if let Some(out) = &opts.out_dir {
                persist(out, &mut trained, problem.train_config.seed)?;
            }
            Ok(Ok(trained.result))
        }
        Err(e @ (Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::Domain(_))) => {
            let failure = FailedCandidate {
                mask: comb.mask(),
                label: comb.label(),
                message: e.to_string(),
            };
            if let Some(out) = &opts.out_dir {
                save_json(
                    &candidate_file(out, comb.mask()),
                    &CandidateRecord {
                        result: None,
                        failure: Some(failure.clone()),
                    },
                )?;
            }
            Ok(Err(failure))
        }
        Err(e) => Err(e),
    }
}

/// Trains all `2^p - 1` combinations and ranks them by AIC.
///
/// Aborted combinations are recorded in the report; the run fails only if
/// every combination aborted.
pub fn discover(problem: &DiscoveryProblem, opts: &DiscoverOptions) -> Result<DiscoveryReport> {
    let combos = enumerate(&problem.library)?;
    if let Some(out) = &opts.out_dir {
        let dir = candidate_dir(out);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let outcomes: Vec<Result<std::result::Result<CandidateResult, FailedCandidate>>> = if opts.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel)
            .build()
            .map_err(|e| Error::config(e.to_string()))?;
        pool.install(|| combos.par_iter().map(|c| run_one(c, problem, opts)).collect())
    } else {
        combos.iter().map(|c| run_one(c, problem, opts)).collect()
    };
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o? {
            Ok(r) => results.push(r),
            Err(f) => failed.push(f),
        }
    }
    if results.is_empty() {
        return Err(Error::Diverged {
            k: 0,
            message: format!("all {} combinations aborted", failed.len()),
        });
    }
    select_with_failures(results, failed)
}

/// Loads the candidate records of a finished (or partial) run directory.
pub fn load_run(out: &Path) -> Result<DiscoveryReport> {
    let dir = candidate_dir(out);
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with('m') && n.ends_with(".json") && !n.contains('_'))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for p in entries {
        let rec = load_record(&p)?;
        results.extend(rec.result);
        failed.extend(rec.failure);
    }
    select_with_failures(results, failed)
}

/// Loads the solution-network checkpoint referenced by a result.
pub fn load_solution(out: &Path, result: &CandidateResult) -> Result<MlpParams> {
    let rel = result
        .checkpoint_u
        .as_ref()
        .ok_or_else(|| Error::config("candidate has no solution checkpoint"))?;
    Checkpoint::load(&out.join(rel))?.into_params()
}
