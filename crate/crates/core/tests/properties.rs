mod common;

use common::{random_net, random_problem};
use pdedisc::jet::forward_jet;
use pdedisc::loss::{Block, HybridLoss, LossSelector};
use pdedisc::network::{MlpParams, NetworkConfig};
use pdedisc::operators::{Combination, OperatorId};
use pdedisc::optim::LbfgsConfig;
use pdedisc::recurrent::{train_rp, warm_start, Measurements, RpConfig};
use pdedisc::trainer::{initialize, netg_step, netu_step, train_combination, TrainConfig};
use proptest::prelude::*;

/// Network computing `a(x, t) + b(x, t)` by stacking hidden units.
fn sum_network(a: &MlpParams, b: &MlpParams) -> MlpParams {
    let sa = a.layer_sizes();
    let sb = b.layer_sizes();
    let layers = a.num_layers();
    let mut sizes = vec![2];
    for l in 1..layers {
        sizes.push(sa[l] + sb[l]);
    }
    sizes.push(1);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layers {
        let (wa, wb) = (a.weights(l), b.weights(l));
        let n_in = sizes[l];
        let mut w = Vec::new();
        if l == 0 {
            w.extend_from_slice(wa);
            w.extend_from_slice(wb);
            biases.push([a.biases(l), b.biases(l)].concat());
        } else if l + 1 < layers {
            // block diagonal
            for i in 0..sa[l + 1] {
                let mut row = vec![0.0; n_in];
                row[..sa[l]].copy_from_slice(&wa[i * sa[l]..(i + 1) * sa[l]]);
                w.extend(row);
            }
            for i in 0..sb[l + 1] {
                let mut row = vec![0.0; n_in];
                row[sa[l]..].copy_from_slice(&wb[i * sb[l]..(i + 1) * sb[l]]);
                w.extend(row);
            }
            biases.push([a.biases(l), b.biases(l)].concat());
        } else {
            w.extend_from_slice(wa);
            w.extend_from_slice(wb);
            biases.push(vec![a.biases(l)[0] + b.biases(l)[0]]);
        }
        weights.push(w);
    }
    MlpParams::from_layers(&sizes, &weights, &biases).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jets_are_linear_in_the_output(sa in 0u64..1000, sb in 0u64..1000, x in -2.0f64..2.0, t in -2.0f64..2.0) {
        let a = random_net(&[2, 6, 5, 1], sa);
        let b = random_net(&[2, 4, 7, 1], sb + 5000);
        let s = sum_network(&a, &b);
        let (ja, _) = forward_jet(&a, x, t).unwrap();
        let (jb, _) = forward_jet(&b, x, t).unwrap();
        let (js, _) = forward_jet(&s, x, t).unwrap();
        for ((p, q), r) in ja.to_array().iter().zip(jb.to_array()).zip(js.to_array()) {
            prop_assert!((p + q - r).abs() <= 1e-12, "{} + {} vs {}", p, q, r);
        }
    }

    #[test]
    fn jets_are_deterministic_and_finite(seed in 0u64..1000, x in -50.0f64..50.0, t in -50.0f64..50.0) {
        let p = random_net(&[2, 8, 8, 1], seed);
        let (a, tape) = forward_jet(&p, x, t).unwrap();
        let (b, _) = forward_jet(&p, x, t).unwrap();
        prop_assert!(a.is_finite());
        prop_assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
        prop_assert_eq!(tape.replay(&p).unwrap().to_array().map(f64::to_bits), a.to_array().map(f64::to_bits));
    }
}

fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], label: &str) {
    let h = 1e-6;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let down = f(&xp);
        xp[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        assert!(
            (fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
            "{label}[{i}]: analytic {} vs fd {fd}",
            grad[i]
        );
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let (data, colloc) = random_problem(4, 6, 14, |x, t| x * (-t).exp());
    let loss = HybridLoss::new(&data, &colloc).unwrap().with_physics_weight(0.7);
    let u = random_net(&[2, 6, 6, 1], 1);
    let g = random_net(&[2, 5, 1], 2);
    let comb = Combination::new(OperatorId::wave_library(), 0b10101, Some(vec![0.4, -1.3, 0.8])).unwrap();
    let sizes_u = u.layer_sizes().to_vec();
    let sizes_g = g.layer_sizes().to_vec();

    for selector in [LossSelector::Data, LossSelector::Physics, LossSelector::Total] {
        let value = |rep: pdedisc::loss::LossReport| match selector {
            LossSelector::Data => rep.mse_dn,
            LossSelector::Physics => rep.mse_pn,
            LossSelector::Total => rep.mse_n,
        };
        let gu = loss.grad(selector, Block::Solution, &u, &g, &comb).unwrap();
        fd_check(
            |th| value(loss.report(&MlpParams::unflatten(&sizes_u, th).unwrap(), &g, &comb).unwrap()),
            u.as_slice(),
            &gu,
            "theta_u",
        );
        let gg = loss.grad(selector, Block::Source, &u, &g, &comb).unwrap();
        fd_check(
            |th| value(loss.report(&u, &MlpParams::unflatten(&sizes_g, th).unwrap(), &comb).unwrap()),
            g.as_slice(),
            &gg,
            "theta_g",
        );
        let gl = loss.grad(selector, Block::Lambda, &u, &g, &comb).unwrap();
        fd_check(
            |l| value(loss.report(&u, &g, &comb.with_lambda(l.to_vec()).unwrap()).unwrap()),
            &comb.lambda,
            &gl,
            "lambda",
        );
    }
}

fn small_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        seed,
        max_outer: 4,
        adam_steps: 20,
        ..TrainConfig::default()
    };
    c.netg_lbfgs.max_iters = 15;
    c.netu_lbfgs.max_iters = 15;
    c
}

fn small_net(seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_width: 2,
        hidden_layers: 2,
        hidden_width: 8,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_phases_never_increase_their_objective(seed in 0u64..100, mask in 1u32..16) {
        let (data, colloc) = random_problem(seed, 6, 18, |x, t| (x + 0.5 * t).sin());
        let loss = HybridLoss::new(&data, &colloc).unwrap();
        let comb = Combination::new(OperatorId::heat_library(), mask, None).unwrap();
        let cfg = small_config(seed);
        let state = train_combination(&comb, &small_net(0), &small_net(0), &loss, &cfg).unwrap();
        prop_assert_eq!(state.history.len(), state.k);
        for r in &state.history {
            prop_assert!(r.pn_after_g <= r.pn_before_g, "{:?}", r);
            prop_assert!(r.n_after_u <= r.n_before_u, "{:?}", r);
        }
    }

    #[test]
    fn phases_freeze_the_other_blocks(seed in 0u64..100) {
        let (data, colloc) = random_problem(seed, 6, 12, |x, t| x - t);
        let loss = HybridLoss::new(&data, &colloc).unwrap();
        let comb = Combination::new(OperatorId::heat_library(), 0b0101, None).unwrap();
        let cfg = small_config(seed);
        let mut state = initialize(&comb, &small_net(0), &small_net(0), &loss, &cfg).unwrap();
        let (u0, l0) = (state.params_u.clone(), state.comb.lambda.clone());
        let dn0 = loss.mse_dn(&state.params_u).unwrap();
        netg_step(&mut state, &loss, &cfg).unwrap();
        prop_assert_eq!(&state.params_u, &u0);
        prop_assert_eq!(&state.comb.lambda, &l0);
        prop_assert_eq!(loss.mse_dn(&state.params_u).unwrap(), dn0);
        let g1 = state.params_g.clone();
        netu_step(&mut state, &loss, &cfg).unwrap();
        prop_assert_eq!(&state.params_g, &g1);
    }
}

#[test]
fn recurrent_training_starts_at_the_solution_network_fit() {
    let (data, colloc) = random_problem(9, 6, 20, |x, t| x * (-t).exp());
    let loss = HybridLoss::new(&data, &colloc).unwrap();
    let comb = Combination::new(OperatorId::heat_library(), 0b0101, None).unwrap();
    let state = train_combination(&comb, &small_net(0), &small_net(0), &loss, &small_config(1)).unwrap();
    let cfg = RpConfig {
        dt: 0.05,
        lbfgs: LbfgsConfig {
            max_iters: 10,
            ..LbfgsConfig::default()
        },
        ..RpConfig::default()
    };
    let measurements = Measurements::from_samples(&data.samples());
    let model = warm_start(&state.params_u, &cfg).unwrap();
    let points: Vec<(f64, f64)> = data.samples().iter().map(|s| (s.x, s.t)).collect();
    let (before, _) = model.predict(&points, &measurements).unwrap();
    let netu: Vec<f64> = points.iter().map(|&(x, t)| state.params_u.forward(&[x, t]).unwrap()).collect();
    assert_eq!(before, netu);

    let trained = train_rp(model, &data, &colloc, &state.comb, &state.params_g, &measurements, &cfg).unwrap();
    let first = trained.epoch_losses[0].0;
    let netu_loss = loss.report(&state.params_u, &state.params_g, &state.comb).unwrap().mse_n;
    assert!((first - netu_loss).abs() <= 1e-12 * (1.0 + netu_loss), "{first} vs {netu_loss}");
    for (b, a) in &trained.epoch_losses {
        assert!(a <= b);
    }
}
