//! Recurrent refinement network.
//!
//! The network takes `(x, t, u(x, t - dt), ..., u(x, t - l dt))`. Each
//! lagged value comes from a measurement when a sensor recorded one at that
//! place and time, otherwise from the model's own prediction there. Before
//! `l dt` (too little history for the recurrent network) the warm-start
//! solution network supplies the prediction; lag times before the start of
//! the record are clamped to it.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CollocationSet, Sample, TrainingData};
use crate::error::{Error, Result};
use crate::loss::HybridLoss;
use crate::network::{Checkpoint, MlpParams};
use crate::operators::Combination;
use crate::optim::{lbfgs_minimize, LbfgsConfig};

const KEY_SCALE: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpConfig {
    pub lags: usize,
    pub dt: f64,
    /// Rounds of (refresh lag inputs, L-BFGS fit).
    pub epochs: usize,
    pub lbfgs: LbfgsConfig,
    pub physics_weight: f64,
}

impl Default for RpConfig {
    fn default() -> Self {
        Self {
            lags: 1,
            dt: 0.1,
            epochs: 2,
            lbfgs: LbfgsConfig {
                max_iters: 100,
                ..LbfgsConfig::default()
            },
            physics_weight: 1.0,
        }
    }
}

impl RpConfig {
    pub fn validate(&self, t_span: f64) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::config("recurrent network needs at least one lag"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("lag step dt must be positive"));
        }
        if !(self.lags as f64 * self.dt < t_span) {
            return Err(Error::config(format!(
                "lags * dt = {} must be shorter than the time span {t_span}",
                self.lags as f64 * self.dt
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Measurement,
    Prediction,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Measurement => "measurement",
            Provenance::Prediction => "prediction",
        }
    }
}

fn key(x: f64, t: f64) -> (i64, i64) {
    ((x * KEY_SCALE).round() as i64, (t * KEY_SCALE).round() as i64)
}

/// Sensor readings indexed by position and time (matched to 1e-9).
#[derive(Debug, Clone, Default)]
pub struct Measurements {
    values: HashMap<(i64, i64), f64>,
}

impl Measurements {
    pub fn from_samples(samples: &[Sample]) -> Self {
        let mut values = HashMap::with_capacity(samples.len());
        for s in samples {
            values.entry(key(s.x, s.t)).or_insert(s.u);
        }
        Self { values }
    }

    pub fn get(&self, x: f64, t: f64) -> Option<f64> {
        self.values.get(&key(x, t)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One fetched lag input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub x: f64,
    pub t: f64,
    pub lag: usize,
    pub source: Provenance,
}

#[derive(Debug, Clone)]
pub struct RpModel {
    pub params: MlpParams,
    /// Warm-start solution network.
    pub anchor: MlpParams,
    pub lags: usize,
    pub dt: f64,
    /// Lag sources of every top-level evaluation made while training.
    pub provenance: Vec<ProvenanceEntry>,
    /// `(before, after)` total loss of each training epoch.
    pub epoch_losses: Vec<(f64, f64)>,
}

/// Copies the solution network and widens its first layer with zero
/// columns for the lag inputs, so the output initially ignores them.
pub fn warm_start(theta_u: &MlpParams, config: &RpConfig) -> Result<RpModel> {
    if theta_u.input_width() != 2 {
        return Err(Error::config(format!(
            "warm start needs a (x, t) solution network, got input width {}",
            theta_u.input_width()
        )));
    }
    if config.lags == 0 {
        return Err(Error::config("recurrent network needs at least one lag"));
    }
    let mut sizes = theta_u.layer_sizes().to_vec();
    sizes[0] = 2 + config.lags;
    let layers = theta_u.num_layers();
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for l in 0..layers {
        let w = theta_u.weights(l);
        if l == 0 {
            let n_out = sizes[1];
            let mut wide = Vec::with_capacity(n_out * sizes[0]);
            for i in 0..n_out {
                wide.extend_from_slice(&w[i * 2..i * 2 + 2]);
                wide.extend(std::iter::repeat_n(0.0, config.lags));
            }
            weights.push(wide);
        } else {
            weights.push(w.to_vec());
        }
        biases.push(theta_u.biases(l).to_vec());
    }
    Ok(RpModel {
        params: MlpParams::from_layers(&sizes, &weights, &biases)?,
        anchor: theta_u.clone(),
        lags: config.lags,
        dt: config.dt,
        provenance: Vec::new(),
        epoch_losses: Vec::new(),
    })
}

type Memo = HashMap<(i64, i64), f64>;

impl RpModel {
    fn history_start(&self) -> f64 {
        self.lags as f64 * self.dt
    }

    /// Value used for a lag at `(x, tau)`, with its source.
    fn lag_value(&self, x: f64, tau: f64, m: &Measurements, memo: &mut Memo) -> (f64, Provenance) {
        let tau = tau.max(0.0);
        if let Some(v) = m.get(x, tau) {
            return (v, Provenance::Measurement);
        }
        let k = key(x, tau);
        if let Some(&v) = memo.get(&k) {
            return (v, Provenance::Prediction);
        }
        let v = if tau < self.history_start() - 1e-12 {
            self.anchor.forward_unchecked(&[x, tau])
        } else {
            let inputs = self.inputs_at(x, tau, m, memo).0;
            self.params.forward_unchecked(&inputs)
        };
        memo.insert(k, v);
        (v, Provenance::Prediction)
    }

    fn inputs_at(&self, x: f64, t: f64, m: &Measurements, memo: &mut Memo) -> (Vec<f64>, Vec<Provenance>) {
        let mut inputs = Vec::with_capacity(2 + self.lags);
        inputs.push(x);
        inputs.push(t);
        let mut prov = Vec::with_capacity(self.lags);
        for j in 1..=self.lags {
            let (v, p) = self.lag_value(x, t - j as f64 * self.dt, m, memo);
            inputs.push(v);
            prov.push(p);
        }
        (inputs, prov)
    }

    /// Lag inputs for every point (clamping lag times at zero).
    fn lag_matrix(&self, points: &[(f64, f64)], m: &Measurements) -> (Vec<Vec<f64>>, Vec<Vec<Provenance>>) {
        let mut memo = Memo::new();
        points
            .iter()
            .map(|&(x, t)| {
                let (inputs, prov) = self.inputs_at(x, t, m, &mut memo);
                (inputs[2..].to_vec(), prov)
            })
            .unzip()
    }

    /// Predictions with the lag source of each input.
    pub fn predict(&self, points: &[(f64, f64)], m: &Measurements) -> Result<(Vec<f64>, Vec<Vec<Provenance>>)> {
        let mut memo = Memo::new();
        let mut out = Vec::with_capacity(points.len());
        let mut provs = Vec::with_capacity(points.len());
        for &(x, t) in points {
            let (inputs, prov) = self.inputs_at(x, t, m, &mut memo);
            out.push(self.params.forward(&inputs)?);
            provs.push(prov);
        }
        Ok((out, provs))
    }

    pub fn forward(&self, x: f64, t: f64, lags: &[f64]) -> Result<f64> {
        let mut inputs = vec![x, t];
        inputs.extend_from_slice(lags);
        self.params.forward(&inputs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = RpFile {
            format: RP_FORMAT.into(),
            version: 1,
            lags: self.lags,
            dt: self.dt,
            params: self.params.to_checkpoint(0),
            anchor: self.anchor.to_checkpoint(0),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: RpFile = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if file.format != RP_FORMAT {
            return Err(Error::config(format!("unknown recurrent checkpoint format '{}'", file.format)));
        }
        Ok(Self {
            params: file.params.into_params()?,
            anchor: file.anchor.into_params()?,
            lags: file.lags,
            dt: file.dt,
            provenance: Vec::new(),
            epoch_losses: Vec::new(),
        })
    }
}

const RP_FORMAT: &str = "pdedisc-rp";

#[derive(Debug, Serialize, Deserialize)]
struct RpFile {
    format: String,
    version: u32,
    lags: usize,
    dt: f64,
    params: Checkpoint,
    anchor: Checkpoint,
}

/// Lagged inputs at `(x, t)`; requires `t - lags * dt >= 0`.
pub fn delayed_inputs(x: f64, t: f64, config: &RpConfig, measurements: &Measurements, model: &RpModel) -> Result<(Vec<f64>, Vec<Provenance>)> {
    if t - config.lags as f64 * config.dt < -1e-12 {
        return Err(Error::config(format!(
            "t = {t} has less than lags * dt = {} of history; reduce the lag count or start later",
            config.lags as f64 * config.dt
        )));
    }
    let (inputs, prov) = model.inputs_at(x, t, measurements, &mut Memo::new());
    Ok((inputs[2..].to_vec(), prov))
}

/// Writes `x,t,u_hat,provenance`; multi-lag sources are joined with `;`.
pub fn write_predictions_csv(path: &Path, points: &[(f64, f64)], values: &[f64], provenance: &[Vec<Provenance>]) -> Result<()> {
    if points.len() != values.len() || points.len() != provenance.len() {
        return Err(Error::Data("prediction export columns differ in length".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["x", "t", "u_hat", "provenance"]).map_err(csv_err)?;
    for ((&(x, t), v), prov) in points.iter().zip(values).zip(provenance) {
        let sources: Vec<&str> = prov.iter().map(|p| p.as_str()).collect();
        w.write_record([x.to_string(), t.to_string(), v.to_string(), sources.join(";")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fits the recurrent network on `MSE_DN + w MSE_PN` with the source
/// network and coefficients frozen. Lag inputs are refreshed at the start
/// of every epoch and held constant during its L-BFGS run; physics jets
/// differentiate the `(x, t)` slots only.
pub fn train_rp(
    mut model: RpModel,
    data: &TrainingData,
    colloc: &CollocationSet,
    comb: &Combination,
    params_g: &MlpParams,
    measurements: &Measurements,
    config: &RpConfig,
) -> Result<RpModel> {
    if config.lbfgs.max_iters == 0 {
        return Ok(model);
    }
    let samples = data.samples();
    let data_points: Vec<(f64, f64)> = samples.iter().map(|s| (s.x, s.t)).collect();
    let colloc_points = colloc.points();
    for _ in 0..config.epochs {
        let (data_extra, data_prov) = model.lag_matrix(&data_points, measurements);
        let (colloc_extra, colloc_prov) = model.lag_matrix(&colloc_points, measurements);
        for ((&(x, t), prov), _) in data_points.iter().zip(&data_prov).zip(0..).chain(colloc_points.iter().zip(&colloc_prov).zip(0..)) {
            for (j, p) in prov.iter().enumerate() {
                model.provenance.push(ProvenanceEntry { x, t, lag: j + 1, source: *p });
            }
        }
        let loss = HybridLoss::from_parts(samples.clone(), colloc_points.clone(), data_extra, colloc_extra)?
            .with_physics_weight(config.physics_weight);
        let g_values = loss.source_values(params_g)?;
        let sizes = model.params.layer_sizes().to_vec();
        let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let p = MlpParams::unflatten(&sizes, theta)?;
            let (rep, grad) = loss.total_and_grad_u(&p, &g_values, comb)?;
            Ok((if rep.mse_n.is_finite() { rep.mse_n } else { f64::INFINITY }, grad))
        };
        let before = objective(model.params.as_slice())?.0;
        let r = lbfgs_minimize(objective, model.params.as_slice(), &config.lbfgs)?;
        let after = if r.value <= before {
            model.params.set_flat(&r.x)?;
            r.value
        } else {
            before
        };
        model.epoch_losses.push((before, after));
    }
    Ok(model)
}
