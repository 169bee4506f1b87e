//! Second-order forward jets through tanh MLPs and their reverse pass.
//!
//! A [`Jet2`] carries a scalar field together with its first and second
//! partial derivatives in the two coordinates `(x, t)`. Affine layers map
//! every component linearly; tanh layers apply the closed-form chain rule.
//! The recorded [`JetTape`] is enough to pull a cotangent on the six output
//! components back to the network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::MlpParams;

/// Value and partial derivatives up to order two in `(x, t)`.
///
/// Also used as a cotangent: one weight per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Jet2 {
    pub value: f64,
    pub d_x: f64,
    pub d_t: f64,
    pub d_xx: f64,
    pub d_xt: f64,
    pub d_tt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JetComponent {
    Value,
    Dx,
    Dt,
    Dxx,
    Dxt,
    Dtt,
}

impl JetComponent {
    pub const ALL: [JetComponent; 6] = [
        JetComponent::Value,
        JetComponent::Dx,
        JetComponent::Dt,
        JetComponent::Dxx,
        JetComponent::Dxt,
        JetComponent::Dtt,
    ];
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 {
        value: 0.0,
        d_x: 0.0,
        d_t: 0.0,
        d_xx: 0.0,
        d_xt: 0.0,
        d_tt: 0.0,
    };

    /// A coordinate-independent input (zero derivatives).
    pub fn constant(value: f64) -> Self {
        Jet2 { value, ..Jet2::ZERO }
    }

    /// Cotangent that selects a single component with the given weight.
    pub fn select(component: JetComponent, weight: f64) -> Self {
        let mut j = Jet2::ZERO;
        *j.get_mut(component) = weight;
        j
    }

    pub fn get(&self, c: JetComponent) -> f64 {
        match c {
            JetComponent::Value => self.value,
            JetComponent::Dx => self.d_x,
            JetComponent::Dt => self.d_t,
            JetComponent::Dxx => self.d_xx,
            JetComponent::Dxt => self.d_xt,
            JetComponent::Dtt => self.d_tt,
        }
    }

    pub fn get_mut(&mut self, c: JetComponent) -> &mut f64 {
        match c {
            JetComponent::Value => &mut self.value,
            JetComponent::Dx => &mut self.d_x,
            JetComponent::Dt => &mut self.d_t,
            JetComponent::Dxx => &mut self.d_xx,
            JetComponent::Dxt => &mut self.d_xt,
            JetComponent::Dtt => &mut self.d_tt,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.value, self.d_x, self.d_t, self.d_xx, self.d_xt, self.d_tt]
    }

    #[inline]
    fn axpy(&mut self, w: f64, other: &Jet2) {
        self.value += w * other.value;
        self.d_x += w * other.d_x;
        self.d_t += w * other.d_t;
        self.d_xx += w * other.d_xx;
        self.d_xt += w * other.d_xt;
        self.d_tt += w * other.d_tt;
    }

    #[inline]
    fn dot(&self, other: &Jet2) -> f64 {
        self.value * other.value
            + self.d_x * other.d_x
            + self.d_t * other.d_t
            + self.d_xx * other.d_xx
            + self.d_xt * other.d_xt
            + self.d_tt * other.d_tt
    }

    #[inline]
    fn tanh(&self) -> Jet2 {
        let y = self.value.tanh();
        let s = 1.0 - y * y;
        let d2 = -2.0 * y * s;
        Jet2 {
            value: y,
            d_x: s * self.d_x,
            d_t: s * self.d_t,
            d_xx: s * self.d_xx + d2 * self.d_x * self.d_x,
            d_xt: s * self.d_xt + d2 * self.d_x * self.d_t,
            d_tt: s * self.d_tt + d2 * self.d_t * self.d_t,
        }
    }

    /// Pulls a cotangent on `tanh(z)` back to a cotangent on `z`.
    #[inline]
    fn tanh_backward(z: &Jet2, bar: &Jet2) -> Jet2 {
        let y = z.value.tanh();
        let s = 1.0 - y * y;
        let d2 = -2.0 * y * s;
        let d3 = -2.0 * s * s + 4.0 * y * y * s;
        let first = bar.d_x * z.d_x
            + bar.d_t * z.d_t
            + bar.d_xx * z.d_xx
            + bar.d_xt * z.d_xt
            + bar.d_tt * z.d_tt;
        let second = bar.d_xx * z.d_x * z.d_x + bar.d_xt * z.d_x * z.d_t + bar.d_tt * z.d_t * z.d_t;
        Jet2 {
            value: bar.value * s + first * d2 + second * d3,
            d_x: bar.d_x * s + 2.0 * bar.d_xx * d2 * z.d_x + bar.d_xt * d2 * z.d_t,
            d_t: bar.d_t * s + 2.0 * bar.d_tt * d2 * z.d_t + bar.d_xt * d2 * z.d_x,
            d_xx: bar.d_xx * s,
            d_xt: bar.d_xt * s,
            d_tt: bar.d_tt * s,
        }
    }
}

/// Canonical seed jets for the coordinates `x` and `t`.
pub fn seed_inputs(x: f64, t: f64) -> (Jet2, Jet2) {
    (
        Jet2 {
            value: x,
            d_x: 1.0,
            ..Jet2::ZERO
        },
        Jet2 {
            value: t,
            d_t: 1.0,
            ..Jet2::ZERO
        },
    )
}

/// Per-layer record of a jet forward pass.
#[derive(Debug, Clone)]
pub struct JetTape {
    layer_sizes: Vec<usize>,
    /// `acts[0]` are the input jets; `acts[l + 1]` the outputs of layer `l`.
    acts: Vec<Vec<Jet2>>,
    /// Pre-activation jets of each hidden layer.
    pre: Vec<Vec<Jet2>>,
}

impl JetTape {
    pub fn output(&self) -> Jet2 {
        self.acts.last().unwrap()[0]
    }

    pub fn inputs(&self) -> &[Jet2] {
        &self.acts[0]
    }

    /// Re-runs the forward pass from the recorded inputs.
    pub fn replay(&self, params: &MlpParams) -> Result<Jet2> {
        self.check(params)?;
        Ok(forward_jet_inputs(params, &self.acts[0])?.0)
    }

    fn check(&self, params: &MlpParams) -> Result<()> {
        if params.layer_sizes() != self.layer_sizes.as_slice() {
            return Err(Error::config(format!(
                "tape recorded for layers {:?}, params have {:?}",
                self.layer_sizes,
                params.layer_sizes()
            )));
        }
        Ok(())
    }
}

/// Jet forward pass of a two-input network at `(x, t)`.
pub fn forward_jet(params: &MlpParams, x: f64, t: f64) -> Result<(Jet2, JetTape)> {
    if params.input_width() != 2 {
        return Err(Error::config(format!(
            "forward_jet needs a 2-input network, got input width {}",
            params.input_width()
        )));
    }
    let (jx, jt) = seed_inputs(x, t);
    forward_jet_inputs(params, &[jx, jt])
}

/// Jet forward pass with arbitrary input jets (extra inputs are usually
/// [`Jet2::constant`]).
pub fn forward_jet_inputs(params: &MlpParams, inputs: &[Jet2]) -> Result<(Jet2, JetTape)> {
    let sizes = params.layer_sizes();
    if inputs.len() != sizes[0] {
        return Err(Error::config(format!(
            "network expects {} inputs, got {}",
            sizes[0],
            inputs.len()
        )));
    }
    let layers = params.num_layers();
    let mut acts = Vec::with_capacity(layers + 1);
    let mut pre = Vec::with_capacity(layers.saturating_sub(1));
    acts.push(inputs.to_vec());
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = params.weights(l);
        let b = params.biases(l);
        let prev = &acts[l];
        let mut z = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let mut zi = Jet2::constant(b[i]);
            for (wij, aj) in w[i * n_in..(i + 1) * n_in].iter().zip(prev) {
                zi.axpy(*wij, aj);
            }
            z.push(zi);
        }
        if l + 1 < layers {
            let a = z.iter().map(Jet2::tanh).collect();
            pre.push(z);
            acts.push(a);
        } else {
            acts.push(z);
        }
    }
    let tape = JetTape {
        layer_sizes: sizes.to_vec(),
        acts,
        pre,
    };
    Ok((tape.output(), tape))
}

/// Gradient of `sum_c upstream_c * output_c` with respect to every
/// parameter, in flattening order.
pub fn grad_wrt_params(params: &MlpParams, tape: &JetTape, upstream: &Jet2) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    accumulate_param_grad(params, tape, upstream, &mut grad)?;
    Ok(grad)
}

/// Adds the parameter gradient of `upstream . output` into `grad`.
pub fn accumulate_param_grad(
    params: &MlpParams,
    tape: &JetTape,
    upstream: &Jet2,
    grad: &mut [f64],
) -> Result<()> {
    tape.check(params)?;
    if grad.len() != params.len() {
        return Err(Error::config("gradient buffer length does not match params"));
    }
    let sizes = params.layer_sizes();
    let layers = params.num_layers();
    // cotangent on the pre-activations of the current layer
    let mut zbar = vec![*upstream];
    for l in (0..layers).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let off = params.layer_offset(l);
        let w = params.weights(l);
        let prev = &tape.acts[l];
        {
            let (gw, rest) = grad[off..].split_at_mut(n_in * n_out);
            let gb = &mut rest[..n_out];
            for i in 0..n_out {
                let zb = &zbar[i];
                gb[i] += zb.value;
                for (g, a) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(prev) {
                    *g += zb.dot(a);
                }
            }
        }
        if l == 0 {
            break;
        }
        let mut abar = vec![Jet2::ZERO; n_in];
        for i in 0..n_out {
            for (ab, wij) in abar.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                ab.axpy(*wij, &zbar[i]);
            }
        }
        zbar = tape.pre[l - 1]
            .iter()
            .zip(&abar)
            .map(|(z, ab)| Jet2::tanh_backward(z, ab))
            .collect();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    #[test]
    fn seeds() {
        let (jx, jt) = seed_inputs(0.0, 0.0);
        assert_eq!(jx.to_array(), [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(jt.to_array(), [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let (jx, _) = seed_inputs(std::f64::consts::PI, 10.0);
        assert_eq!(jx.value, std::f64::consts::PI);
        assert_eq!(jx.d_x, 1.0);
        assert_eq!(jx.d_xx, 0.0);
        let (_, jt) = seed_inputs(1.5, 0.25);
        assert_eq!(jt.value, 0.25);
        assert_eq!(jt.d_t, 1.0);
        assert_eq!(jt.d_xt, 0.0);
    }

    #[test]
    fn affine_network() {
        let p = MlpParams::from_layers(&[2, 1], &[vec![2.0, 3.0]], &[vec![1.0]]).unwrap();
        let (j, _) = forward_jet(&p, 1.0, 1.0).unwrap();
        assert_eq!(j.to_array(), [6.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_network() {
        let p = MlpParams::zeros(&[2, 8, 8, 1]).unwrap();
        let (j, _) = forward_jet(&p, 0.7, 3.0).unwrap();
        assert_eq!(j, Jet2::ZERO);
    }

    #[test]
    fn value_matches_plain_forward() {
        let p = MlpParams::init(&NetworkConfig::default_field(4)).unwrap();
        for &(x, t) in &[(0.1, 0.2), (3.0, 9.0), (-1.0, 0.5)] {
            let (j, _) = forward_jet(&p, x, t).unwrap();
            assert!((j.value - p.forward(&[x, t]).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_net_value_gradient_is_input() {
        let p = MlpParams::from_layers(&[2, 1], &[vec![1.7, 0.0]], &[vec![0.0]]).unwrap();
        let (_, tape) = forward_jet(&p, 0.4, 2.0).unwrap();
        let g = grad_wrt_params(&p, &tape, &Jet2::select(JetComponent::Value, 1.0)).unwrap();
        assert_eq!(g[0], 0.4);
        assert_eq!(g[1], 2.0);
        assert_eq!(g[2], 1.0);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let p = MlpParams::init(&NetworkConfig::default_field(1)).unwrap();
        let (_, tape) = forward_jet(&p, 0.4, 2.0).unwrap();
        let g = grad_wrt_params(&p, &tape, &Jet2::ZERO).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn replay_is_bit_exact() {
        let p = MlpParams::init(&NetworkConfig::default_field(2)).unwrap();
        let (j, tape) = forward_jet(&p, 1.1, 4.2).unwrap();
        let r = tape.replay(&p).unwrap();
        assert_eq!(j.to_array().map(f64::to_bits), r.to_array().map(f64::to_bits));
    }

    #[test]
    fn tape_mismatch_is_config_error() {
        let p = MlpParams::init(&NetworkConfig::default_field(2)).unwrap();
        let q = MlpParams::zeros(&[2, 3, 1]).unwrap();
        let (_, tape) = forward_jet(&p, 1.1, 4.2).unwrap();
        assert!(grad_wrt_params(&q, &tape, &Jet2::ZERO).is_err());
        assert!(tape.replay(&q).is_err());
    }

    #[test]
    fn wrong_input_width() {
        let p = MlpParams::zeros(&[3, 4, 1]).unwrap();
        assert!(forward_jet(&p, 0.0, 0.0).is_err());
        assert!(forward_jet_inputs(&p, &[Jet2::ZERO; 3]).is_ok());
    }

    #[test]
    fn constant_extra_inputs_do_not_carry_derivatives() {
        // u = tanh(x + t + 5 z): derivatives in (x, t) only
        let p = MlpParams::from_layers(&[3, 1, 1], &[vec![1.0, 1.0, 5.0], vec![1.0]], &[vec![0.0], vec![0.0]])
            .unwrap();
        let (jx, jt) = seed_inputs(0.1, 0.2);
        let (j, _) = forward_jet_inputs(&p, &[jx, jt, Jet2::constant(0.05)]).unwrap();
        let y = (0.55f64).tanh();
        assert!((j.d_x - (1.0 - y * y)).abs() < 1e-15);
        assert!((j.d_t - (1.0 - y * y)).abs() < 1e-15);
    }
}
