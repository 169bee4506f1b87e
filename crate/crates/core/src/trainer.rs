//! Alternating training of the solution network, the source network and
//! the operator coefficients for one combination.
//!
//! Each outer iteration `k` first refits the source network to the current
//! physics target `phi(u)^T lambda` (solution and coefficients frozen), then
//! refits the solution network on data + physics with the source frozen,
//! followed by Adam steps on the coefficients.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{HybridLoss, LambdaProblem, LossReport};
use crate::network::{MlpParams, NetworkConfig};
use crate::operators::Combination;
use crate::optim::{lbfgs_minimize, AdamConfig, AdamState, LbfgsConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_outer: usize,
    /// L-BFGS settings for the source-network phase.
    pub netg_lbfgs: LbfgsConfig,
    /// L-BFGS settings for the solution-network phase.
    pub netu_lbfgs: LbfgsConfig,
    pub adam: AdamConfig,
    /// Adam steps on `lambda` after each solution-network phase.
    pub adam_steps: usize,
    /// Relative tolerance on the change of `MSE_N` between outer iterations.
    pub tol: f64,
    /// Consecutive outer iterations below `tol` needed to stop.
    pub patience: usize,
    pub physics_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_outer: 50,
            netg_lbfgs: LbfgsConfig {
                max_iters: 50,
                ..LbfgsConfig::default()
            },
            netu_lbfgs: LbfgsConfig {
                max_iters: 100,
                ..LbfgsConfig::default()
            },
            adam: AdamConfig::default(),
            adam_steps: 200,
            tol: 1e-7,
            patience: 3,
            physics_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.netg_lbfgs.max_iters == 0 || self.netu_lbfgs.max_iters == 0 {
            return Err(Error::config("L-BFGS iteration caps must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tolerance must be positive"));
        }
        if !(self.physics_weight >= 0.0 && self.physics_weight.is_finite()) {
            return Err(Error::config("physics weight must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Losses around one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub k: usize,
    pub mse_dn: f64,
    pub mse_pn: f64,
    pub mse_n: f64,
    pub lambda_norm: f64,
    /// `MSE_PN` before and after the source-network phase.
    pub pn_before_g: f64,
    pub pn_after_g: f64,
    /// `MSE_N` before and after the solution/coefficient phase.
    pub n_before_u: f64,
    pub n_after_u: f64,
    pub netg_termination: Termination,
    pub netu_termination: Termination,
}

impl OuterRecord {
    pub fn monotone(&self) -> bool {
        self.pn_after_g <= self.pn_before_g && self.n_after_u <= self.n_before_u
    }
}

#[derive(Debug, Clone)]
pub struct TrainerState {
    pub k: usize,
    pub params_u: MlpParams,
    pub params_g: MlpParams,
    pub comb: Combination,
    pub history: Vec<OuterRecord>,
    pub initial: LossReport,
    pub converged: bool,
    pub netg_seconds: f64,
    pub netu_seconds: f64,
    pub line_search_failures: usize,
}

impl TrainerState {
    pub fn lambda(&self) -> &[f64] {
        &self.comb.lambda
    }

    pub fn last_report(&self) -> LossReport {
        self.history
            .last()
            .map(|r| LossReport {
                mse_dn: r.mse_dn,
                mse_pn: r.mse_pn,
                mse_n: r.mse_n,
            })
            .unwrap_or(self.initial)
    }
}

/// SplitMix64 finalizer; derives independent stream seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fresh parameters for combination `m`: seeds derive from `seed ^ m`;
/// `lambda` is uniform on `[-1, 1]`.
pub fn initialize(
    comb: &Combination,
    net_u: &NetworkConfig,
    net_g: &NetworkConfig,
    loss: &HybridLoss,
    config: &TrainConfig,
) -> Result<TrainerState> {
    config.validate()?;
    let base = config.seed ^ u64::from(comb.index());
    let params_u = MlpParams::init(&NetworkConfig {
        seed: derive_seed(base, 1),
        ..*net_u
    })?;
    let params_g = MlpParams::init(&NetworkConfig {
        seed: derive_seed(base, 2),
        ..*net_g
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, 3));
    let lambda: Vec<f64> = (0..comb.p()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let comb = comb.with_lambda(lambda)?;
    let initial = loss.report(&params_u, &params_g, &comb)?;
    Ok(TrainerState {
        k: 0,
        params_u,
        params_g,
        comb,
        history: Vec::new(),
        initial,
        converged: false,
        netg_seconds: 0.0,
        netu_seconds: 0.0,
        line_search_failures: 0,
    })
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Source-network phase: minimizes `MSE_PN` over `Theta_G` with `Theta_U`
/// and `lambda` frozen. Returns `(MSE_PN before, MSE_PN after, termination)`.
pub fn netg_step(state: &mut TrainerState, loss: &HybridLoss, config: &TrainConfig) -> Result<(f64, f64, Termination)> {
    let start = Instant::now();
    let targets = loss.physics_targets(&state.params_u, &state.comb)?;
    let template = state.params_g.clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let g = MlpParams::unflatten(template.layer_sizes(), theta)?;
        let (v, grad) = loss.physics_and_grad_g(&g, &targets)?;
        Ok((finite_or_inf(v), grad))
    };
    let before = loss.physics_and_grad_g(&state.params_g, &targets)?.0;
    let r = lbfgs_minimize(objective, state.params_g.as_slice(), &config.netg_lbfgs)?;
    if r.line_search_failed() {
        state.line_search_failures += 1;
    }
    let after = if r.value <= before {
        state.params_g.set_flat(&r.x)?;
        r.value
    } else {
        before
    };
    state.netg_seconds += start.elapsed().as_secs_f64();
    Ok((before, after, r.termination))
}

/// Solution phase: L-BFGS on `Theta_U` for `MSE_DN + w MSE_PN` with
/// `Theta_G` frozen, then Adam on `lambda`. The lowest-loss `lambda` seen
/// during the Adam steps is kept. Returns `(MSE_N before, MSE_N after,
/// termination)`.
pub fn netu_step(state: &mut TrainerState, loss: &HybridLoss, config: &TrainConfig) -> Result<(f64, f64, Termination)> {
    let start = Instant::now();
    let g_values = loss.source_values(&state.params_g)?;
    let template = state.params_u.clone();
    let comb = state.comb.clone();
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let u = MlpParams::unflatten(template.layer_sizes(), theta)?;
        let (rep, grad) = loss.total_and_grad_u(&u, &g_values, &comb)?;
        Ok((finite_or_inf(rep.mse_n), grad))
    };
    let before = loss.report(&state.params_u, &state.params_g, &state.comb)?.mse_n;
    let r = lbfgs_minimize(objective, state.params_u.as_slice(), &config.netu_lbfgs)?;
    if r.line_search_failed() {
        state.line_search_failures += 1;
    }
    if r.value <= before {
        state.params_u.set_flat(&r.x)?;
    }

    if config.adam_steps > 0 && comb.p() > 0 {
        let problem = LambdaProblem::new(loss, &state.params_u, &state.params_g, &state.comb)?;
        let mut lambda = state.comb.lambda.clone();
        let mut adam = AdamState::new(config.adam, lambda.len());
        let (mut best_v, mut grad) = problem.value_and_grad(&lambda);
        let mut best = lambda.clone();
        for _ in 0..config.adam_steps {
            adam.step(&mut lambda, &grad)?;
            let (v, g) = problem.value_and_grad(&lambda);
            if v < best_v {
                best_v = v;
                best.clone_from(&lambda);
            }
            grad = g;
        }
        state.comb.lambda = best;
    }
    let after = loss.report(&state.params_u, &state.params_g, &state.comb)?.mse_n;
    state.netu_seconds += start.elapsed().as_secs_f64();
    Ok((before, after, r.termination))
}

/// Runs outer iterations until `|dMSE_N| < tol (1 + MSE_N_prev)` holds for
/// `patience` consecutive iterations (a single one when `tol` is infinite)
/// or `max_outer` is reached.
pub fn train_combination(
    comb: &Combination,
    net_u: &NetworkConfig,
    net_g: &NetworkConfig,
    loss: &HybridLoss,
    config: &TrainConfig,
) -> Result<TrainerState> {
    let mut state = initialize(comb, net_u, net_g, loss, config)?;
    run_outer(&mut state, loss, config)?;
    Ok(state)
}

pub fn run_outer(state: &mut TrainerState, loss: &HybridLoss, config: &TrainConfig) -> Result<()> {
    let needed = if config.tol.is_infinite() { 1 } else { config.patience };
    let mut prev = state.last_report().mse_n;
    let mut streak = 0;
    while state.k < config.max_outer {
        let k = state.k + 1;
        let (pn_before_g, pn_after_g, netg_termination) = netg_step(state, loss, config)?;
        let (n_before_u, n_after_u, netu_termination) = netu_step(state, loss, config)?;
        let rep = loss.report(&state.params_u, &state.params_g, &state.comb)?;
        if !rep.is_finite() {
            return Err(Error::Diverged {
                k,
                message: format!("non-finite loss {rep:?}"),
            });
        }
        state.history.push(OuterRecord {
            k,
            mse_dn: rep.mse_dn,
            mse_pn: rep.mse_pn,
            mse_n: rep.mse_n,
            lambda_norm: norm(&state.comb.lambda),
            pn_before_g,
            pn_after_g,
            n_before_u,
            n_after_u,
            netg_termination,
            netu_termination,
        });
        state.k = k;
        if (rep.mse_n - prev).abs() < config.tol * (1.0 + prev) {
            streak += 1;
        } else {
            streak = 0;
        }
        prev = rep.mse_n;
        if streak >= needed {
            state.converged = true;
            break;
        }
    }
    Ok(())
}

/// Writes `k,mse_dn,mse_pn,mse_n,lambda_norm`.
pub fn write_training_log(path: &Path, history: &[OuterRecord]) -> Result<()> {
    let mut out = String::from("k,mse_dn,mse_pn,mse_n,lambda_norm\n");
    for r in history {
        out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.k, r.mse_dn, r.mse_pn, r.mse_n, r.lambda_norm));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
