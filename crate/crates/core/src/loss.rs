//! Data-driven loss, physics-informed loss and their gradients.
//!
//! Point-wise terms are evaluated in fixed-size chunks (in parallel) and the
//! chunk partials are reduced in index order, so every value and gradient
//! is bit-reproducible regardless of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CollocationSet, Sample, TrainingData};
use crate::error::{Error, Result};
use crate::jet::{accumulate_param_grad, forward_jet_inputs, seed_inputs, Jet2};
use crate::network::MlpParams;
use crate::operators::{phi_dot_lambda, Combination};

const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse_dn: f64,
    pub mse_pn: f64,
    pub mse_n: f64,
}

impl LossReport {
    fn new(mse_dn: f64, mse_pn: f64, physics_weight: f64) -> Self {
        Self {
            mse_dn,
            mse_pn,
            mse_n: mse_dn + physics_weight * mse_pn,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mse_dn.is_finite() && self.mse_pn.is_finite() && self.mse_n.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSelector {
    /// `MSE_DN`
    Data,
    /// `MSE_PN`
    Physics,
    /// `MSE_DN + w * MSE_PN`
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Solution,
    Source,
    Lambda,
}

/// Measurement and collocation points for one training problem.
///
/// Each point may carry extra (constant) network inputs after `(x, t)`;
/// these are empty for the plain solution network and hold lagged values
/// for the recurrent one.
#[derive(Debug, Clone)]
pub struct HybridLoss {
    data: Vec<Sample>,
    data_extra: Vec<Vec<f64>>,
    colloc: Vec<(f64, f64)>,
    colloc_extra: Vec<Vec<f64>>,
    physics_weight: f64,
}

fn chunked_sum<T, F>(items: &[T], n_grad: usize, f: F) -> (f64, Vec<f64>)
where
    T: Sync,
    F: Fn(usize, &T, &mut [f64]) -> f64 + Sync,
{
    let partials: Vec<(f64, Vec<f64>)> = items
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = vec![0.0; n_grad];
            let mut s = 0.0;
            for (i, item) in chunk.iter().enumerate() {
                s += f(c * CHUNK + i, item, &mut g);
            }
            (s, g)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; n_grad];
    for (s, g) in partials {
        total += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total, grad)
}

fn chunked_values<T, F>(items: &[T], f: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(usize, &T) -> f64 + Sync,
{
    items
        .par_chunks(CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| chunk.iter().enumerate().map(move |(i, it)| (c * CHUNK + i, it)).map(|(i, it)| f(i, it)).collect::<Vec<_>>())
        .collect()
}

fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().sum()
}

impl HybridLoss {
    pub fn new(data: &TrainingData, colloc: &CollocationSet) -> Result<Self> {
        Self::from_parts(data.samples(), colloc.points(), Vec::new(), Vec::new())
    }

    /// Builds a problem whose points carry extra constant inputs. Empty
    /// `data_extra`/`colloc_extra` mean no extra inputs.
    pub fn from_parts(
        data: Vec<Sample>,
        colloc: Vec<(f64, f64)>,
        data_extra: Vec<Vec<f64>>,
        colloc_extra: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::config("measurement set is empty"));
        }
        if colloc.is_empty() {
            return Err(Error::config("collocation set is empty"));
        }
        let data_extra = if data_extra.is_empty() { vec![Vec::new(); data.len()] } else { data_extra };
        let colloc_extra = if colloc_extra.is_empty() { vec![Vec::new(); colloc.len()] } else { colloc_extra };
        if data_extra.len() != data.len() || colloc_extra.len() != colloc.len() {
            return Err(Error::config("extra inputs do not match the point count"));
        }
        Ok(Self {
            data,
            data_extra,
            colloc,
            colloc_extra,
            physics_weight: 1.0,
        })
    }

    pub fn with_physics_weight(mut self, w: f64) -> Self {
        self.physics_weight = w;
        self
    }

    pub fn physics_weight(&self) -> f64 {
        self.physics_weight
    }

    pub fn data_len(&self) -> usize {
        self.data.len()
    }

    pub fn colloc_len(&self) -> usize {
        self.colloc.len()
    }

    pub fn data(&self) -> &[Sample] {
        &self.data
    }

    pub fn colloc(&self) -> &[(f64, f64)] {
        &self.colloc
    }

    fn check_u(&self, u: &MlpParams) -> Result<()> {
        let want = 2 + self.data_extra[0].len();
        if u.input_width() != want {
            return Err(Error::config(format!(
                "solution network has input width {}, problem needs {want}",
                u.input_width()
            )));
        }
        Ok(())
    }

    fn check_g(g: &MlpParams) -> Result<()> {
        if g.input_width() != 2 {
            return Err(Error::config("source network must take (x, t)"));
        }
        Ok(())
    }

    fn data_inputs(&self, i: usize) -> Vec<f64> {
        let s = &self.data[i];
        let mut v = Vec::with_capacity(2 + self.data_extra[i].len());
        v.push(s.x);
        v.push(s.t);
        v.extend_from_slice(&self.data_extra[i]);
        v
    }

    fn colloc_jet_inputs(&self, i: usize) -> Vec<Jet2> {
        let (x, t) = self.colloc[i];
        let (jx, jt) = seed_inputs(x, t);
        let mut v = Vec::with_capacity(2 + self.colloc_extra[i].len());
        v.push(jx);
        v.push(jt);
        v.extend(self.colloc_extra[i].iter().map(|&e| Jet2::constant(e)));
        v
    }

    /// Predictions of the solution network at the measurement points.
    pub fn predictions(&self, u: &MlpParams) -> Result<Vec<f64>> {
        self.check_u(u)?;
        Ok(chunked_values(&self.data, |i, _| u.forward_unchecked(&self.data_inputs(i))))
    }

    pub fn mse_dn(&self, u: &MlpParams) -> Result<f64> {
        let pred = self.predictions(u)?;
        let sq: Vec<f64> = pred.iter().zip(&self.data).map(|(p, s)| (p - s.u).powi(2)).collect();
        Ok(ordered_sum(&sq) / self.data.len() as f64)
    }

    /// Jets of the solution network at the collocation points.
    pub fn solution_jets(&self, u: &MlpParams) -> Result<Vec<Jet2>> {
        self.check_u(u)?;
        let jets: Vec<Result<Jet2>> = (0..self.colloc.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                chunk
                    .iter()
                    .map(|&i| forward_jet_inputs(u, &self.colloc_jet_inputs(i)).map(|(j, _)| j))
                    .collect::<Vec<_>>()
            })
            .collect();
        jets.into_iter().collect()
    }

    /// Source network values at the collocation points.
    pub fn source_values(&self, g: &MlpParams) -> Result<Vec<f64>> {
        Self::check_g(g)?;
        Ok(chunked_values(&self.colloc, |_, &(x, t)| g.forward_unchecked(&[x, t])))
    }

    /// `phi(u)^T lambda` at every collocation point.
    pub fn physics_targets(&self, u: &MlpParams, comb: &Combination) -> Result<Vec<f64>> {
        Ok(self.solution_jets(u)?.iter().map(|j| phi_dot_lambda(comb, j)).collect())
    }

    pub fn residuals(&self, u: &MlpParams, g: &MlpParams, comb: &Combination) -> Result<Vec<f64>> {
        let targets = self.physics_targets(u, comb)?;
        let gv = self.source_values(g)?;
        Ok(targets.iter().zip(&gv).map(|(a, b)| a - b).collect())
    }

    pub fn mse_pn(&self, u: &MlpParams, g: &MlpParams, comb: &Combination) -> Result<f64> {
        let r = self.residuals(u, g, comb)?;
        let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
        Ok(ordered_sum(&sq) / self.colloc.len() as f64)
    }

    pub fn report(&self, u: &MlpParams, g: &MlpParams, comb: &Combination) -> Result<LossReport> {
        Ok(LossReport::new(self.mse_dn(u)?, self.mse_pn(u, g, comb)?, self.physics_weight))
    }

    /// Value and `Theta_U` gradient of `MSE_DN + w * MSE_PN` for frozen
    /// source values `g_values` (one per collocation point).
    pub fn total_and_grad_u(&self, u: &MlpParams, g_values: &[f64], comb: &Combination) -> Result<(LossReport, Vec<f64>)> {
        self.check_u(u)?;
        if g_values.len() != self.colloc.len() {
            return Err(Error::config("source values do not match the collocation set"));
        }
        let n = u.len();
        let nd = self.data.len() as f64;
        let ne = self.colloc.len() as f64;
        let (dn_sum, mut grad) = chunked_sum(&self.data, n, |i, s, g| {
            let inputs = self.data_inputs(i);
            // first pass for the residual, second accumulates
            let pred = u.forward_unchecked(&inputs);
            let r = pred - s.u;
            u.accumulate_value_grad(&inputs, 2.0 * r / nd, g);
            r * r
        });
        let active = comb.active();
        let w = self.physics_weight;
        let failed = std::sync::atomic::AtomicBool::new(false);
        let (pn_sum, pgrad) = chunked_sum(&self.colloc, n, |i, _, g| {
            let inputs = self.colloc_jet_inputs(i);
            let Ok((jet, tape)) = forward_jet_inputs(u, &inputs) else {
                failed.store(true, std::sync::atomic::Ordering::Relaxed);
                return 0.0;
            };
            let f = phi_dot_lambda(comb, &jet) - g_values[i];
            let mut up = Jet2::ZERO;
            for (op, l) in active.iter().zip(&comb.lambda) {
                *up.get_mut(op.component()) += 2.0 * w * f * l / ne;
            }
            if accumulate_param_grad(u, &tape, &up, g).is_err() {
                failed.store(true, std::sync::atomic::Ordering::Relaxed);
            }
            f * f
        });
        if failed.into_inner() {
            return Err(Error::config("jet evaluation failed"));
        }
        for (a, b) in grad.iter_mut().zip(&pgrad) {
            *a += b;
        }
        Ok((LossReport::new(dn_sum / nd, pn_sum / ne, w), grad))
    }

    /// Value and `Theta_G` gradient of `MSE_PN` for frozen targets
    /// `phi(u)^T lambda`.
    pub fn physics_and_grad_g(&self, g: &MlpParams, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        Self::check_g(g)?;
        if targets.len() != self.colloc.len() {
            return Err(Error::config("targets do not match the collocation set"));
        }
        let ne = self.colloc.len() as f64;
        let (sum, grad) = chunked_sum(&self.colloc, g.len(), |i, &(x, t), gr| {
            let f = targets[i] - g.forward_unchecked(&[x, t]);
            // d f / d g_hat = -1
            g.accumulate_value_grad(&[x, t], -2.0 * f / ne, gr);
            f * f
        });
        Ok((sum / ne, grad))
    }

    /// Gradient of the selected loss with respect to one variable block.
    pub fn grad(
        &self,
        selector: LossSelector,
        block: Block,
        u: &MlpParams,
        g: &MlpParams,
        comb: &Combination,
    ) -> Result<Vec<f64>> {
        let w = match selector {
            LossSelector::Data => 0.0,
            LossSelector::Physics => 1.0,
            LossSelector::Total => self.physics_weight,
        };
        match block {
            Block::Solution => {
                let g_values = self.source_values(g)?;
                let scaled = self.clone().with_physics_weight(w);
                let (_, mut grad) = scaled.total_and_grad_u(u, &g_values, comb)?;
                if selector == LossSelector::Physics {
                    // remove the data part
                    let data_only = self.clone().with_physics_weight(0.0);
                    let (_, dgrad) = data_only.total_and_grad_u(u, &g_values, comb)?;
                    for (a, b) in grad.iter_mut().zip(&dgrad) {
                        *a -= b;
                    }
                }
                Ok(grad)
            }
            Block::Source => {
                if selector == LossSelector::Data {
                    return Ok(vec![0.0; g.len()]);
                }
                let targets = self.physics_targets(u, comb)?;
                let (_, mut grad) = self.physics_and_grad_g(g, &targets)?;
                grad.iter_mut().for_each(|v| *v *= w);
                Ok(grad)
            }
            Block::Lambda => {
                if selector == LossSelector::Data {
                    return Ok(vec![0.0; comb.p()]);
                }
                let feats = LambdaProblem::new(self, u, g, comb)?;
                let (_, mut grad) = feats.value_and_grad(&comb.lambda);
                grad.iter_mut().for_each(|v| *v *= w);
                Ok(grad)
            }
        }
    }
}

/// `MSE_PN` as a function of `lambda` alone, with `Theta_U` and `Theta_G`
/// frozen: `mean_i (phi_i . lambda - g_i)^2`.
#[derive(Debug, Clone)]
pub struct LambdaProblem {
    features: Vec<Vec<f64>>,
    g_values: Vec<f64>,
}

impl LambdaProblem {
    pub fn new(loss: &HybridLoss, u: &MlpParams, g: &MlpParams, comb: &Combination) -> Result<Self> {
        let jets = loss.solution_jets(u)?;
        Ok(Self {
            features: jets.iter().map(|j| comb.features(j)).collect(),
            g_values: loss.source_values(g)?,
        })
    }

    pub fn value_and_grad(&self, lambda: &[f64]) -> (f64, Vec<f64>) {
        let n = self.features.len() as f64;
        let mut grad = vec![0.0; lambda.len()];
        let mut sum = 0.0;
        for (phi, gv) in self.features.iter().zip(&self.g_values) {
            let f: f64 = phi.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>() - gv;
            sum += f * f;
            for (gr, p) in grad.iter_mut().zip(phi) {
                *gr += 2.0 * f * p / n;
            }
        }
        (sum / n, grad)
    }
}

/// Mean squared data misfit of `u` over `D`.
pub fn mse_dn(params_u: &MlpParams, data: &TrainingData) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("measurement set is empty"));
    }
    let samples = data.samples();
    let mut sq = Vec::with_capacity(samples.len());
    for s in &samples {
        let r = params_u.forward(&[s.x, s.t])? - s.u;
        sq.push(r * r);
    }
    Ok(ordered_sum(&sq) / samples.len() as f64)
}

/// Mean squared residual `phi(u)^T lambda - g` over `E`.
pub fn mse_pn(params_u: &MlpParams, params_g: &MlpParams, comb: &Combination, colloc: &CollocationSet) -> Result<f64> {
    if colloc.is_empty() {
        return Err(Error::config("collocation set is empty"));
    }
    let points = colloc.points();
    let mut sq = Vec::with_capacity(points.len());
    for &(x, t) in &points {
        let (jet, _) = crate::jet::forward_jet(params_u, x, t)?;
        let f = crate::operators::residual(comb, &jet, params_g.forward(&[x, t])?);
        sq.push(f * f);
    }
    Ok(ordered_sum(&sq) / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainSpec;
    use crate::network::NetworkConfig;
    use crate::operators::OperatorId;

    fn small(seed: u64) -> MlpParams {
        MlpParams::init(&NetworkConfig {
            input_width: 2,
            hidden_layers: 2,
            hidden_width: 6,
            seed,
        })
        .unwrap()
    }

    fn problem() -> (TrainingData, CollocationSet) {
        let dom = DomainSpec::new((0.0, 1.0), (0.0, 1.0)).unwrap();
        let b = vec![Sample { x: 0.0, t: 0.3, u: 0.2 }, Sample { x: 0.4, t: 0.0, u: -0.1 }];
        let i = vec![Sample { x: 0.5, t: 0.5, u: 0.7 }, Sample { x: 0.2, t: 0.9, u: 0.1 }];
        let d = TrainingData::new(dom, b, i).unwrap();
        let c = CollocationSet::from_training(&d);
        (d, c)
    }

    #[test]
    fn single_point_mse_dn() {
        let dom = DomainSpec::new((0.0, 1.0), (0.0, 1.0)).unwrap();
        let d = TrainingData::new(dom, vec![], vec![Sample { x: 0.5, t: 0.5, u: -3.0 }]).unwrap();
        let z = MlpParams::zeros(&[2, 3, 1]).unwrap();
        assert_eq!(mse_dn(&z, &d).unwrap(), 9.0);
    }

    #[test]
    fn zero_lambda_zero_source() {
        let (_, c) = problem();
        let comb = Combination::new(OperatorId::heat_library(), 0b0101, None).unwrap();
        let g = MlpParams::zeros(&[2, 4, 1]).unwrap();
        assert_eq!(mse_pn(&small(1), &g, &comb, &c).unwrap(), 0.0);
    }

    #[test]
    fn empty_sets_rejected() {
        let dom = DomainSpec::new((0.0, 1.0), (0.0, 1.0)).unwrap();
        let d = TrainingData::new(dom, vec![], vec![]).unwrap();
        assert!(mse_dn(&small(0), &d).is_err());
        let c = CollocationSet { boundary: vec![], interior: vec![] };
        let comb = Combination::new(OperatorId::heat_library(), 1, None).unwrap();
        assert!(mse_pn(&small(0), &small(1), &comb, &c).is_err());
    }

    #[test]
    fn source_gradient_of_data_loss_is_zero() {
        let (d, c) = problem();
        let loss = HybridLoss::new(&d, &c).unwrap();
        let comb = Combination::new(OperatorId::heat_library(), 0b0111, Some(vec![0.3, -0.2, 0.9])).unwrap();
        let g = loss.grad(LossSelector::Data, Block::Source, &small(1), &small(2), &comb).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_gradient_single_point() {
        // f = 1, phi = (2, 3) -> grad = (4, 6)
        let p = LambdaProblem {
            features: vec![vec![2.0, 3.0]],
            g_values: vec![4.0],
        };
        let (v, g) = p.value_and_grad(&[1.0, 1.0]);
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![4.0, 6.0]);
    }

    #[test]
    fn report_sums() {
        let (d, c) = problem();
        let loss = HybridLoss::new(&d, &c).unwrap();
        let comb = Combination::new(OperatorId::heat_library(), 0b1001, Some(vec![0.5, 1.5])).unwrap();
        let r = loss.report(&small(3), &small(4), &comb).unwrap();
        assert!((r.mse_n - (r.mse_dn + r.mse_pn)).abs() < 1e-12);
        assert!(r.mse_dn >= 0.0 && r.mse_pn >= 0.0);
    }
}
