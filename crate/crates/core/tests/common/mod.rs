//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use pdedisc::data::{CollocationSet, DomainSpec, Sample, TrainingData};
use pdedisc::jet::Jet2;
use pdedisc::network::{MlpParams, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Double-double number `hi + lo`, about 32 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd(pub f64, pub f64);

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd(s, b - (s - a))
}

impl Dd {
    pub const ONE: Dd = Dd(1.0, 0.0);

    pub fn from(v: f64) -> Dd {
        Dd(v, 0.0)
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.0, o.0);
        let (t, f) = two_sum(self.1, o.1);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.0, r.1 + f)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd(-o.0, -o.1))
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        quick_two_sum(p, e + self.0 * o.1 + self.1 * o.0)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.0 / o.0;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.0 / o.0;
        quick_two_sum(q1, q2).add(Dd::from(q3))
    }

    /// Multiplication by a power of two (exact).
    pub fn scale(self, s: f64) -> Dd {
        Dd(self.0 * s, self.1 * s)
    }

    pub fn exp(self) -> Dd {
        const LN2: Dd = Dd(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17);
        let k = (self.0 / LN2.0).round();
        let r = self.sub(LN2.mul(Dd::from(k))).scale(1.0 / 1024.0);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..25 {
            term = term.mul(r).div(Dd::from(n as f64));
            sum = sum.add(term);
        }
        for _ in 0..10 {
            sum = sum.mul(sum);
        }
        sum.scale(2f64.powi(k as i32))
    }

    pub fn tanh(self) -> Dd {
        if self.0.abs() > 20.0 {
            return Dd::from(self.0.signum());
        }
        let e = self.scale(2.0).exp();
        e.sub(Dd::ONE).div(e.add(Dd::ONE))
    }
}

/// Forward pass of a tanh MLP in double-double arithmetic, written from the
/// flattening layout (row-major weights, then biases, layer by layer).
pub fn forward_dd(params: &MlpParams, inputs: &[Dd]) -> Dd {
    let sizes = params.layer_sizes();
    let flat = params.as_slice();
    let layers = sizes.len() - 1;
    let mut act = inputs.to_vec();
    let mut off = 0;
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut next = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let mut z = Dd::from(flat[off + n_in * n_out + i]);
            for j in 0..n_in {
                z = z.add(Dd::from(flat[off + i * n_in + j]).mul(act[j]));
            }
            next.push(if l + 1 < layers { z.tanh() } else { z });
        }
        off += n_in * n_out + n_out;
        act = next;
    }
    act[0]
}

/// Fourth-order central-difference jet (Richardson combination of steps
/// `h` and `2h`) of the double-double forward pass.
pub fn fd_jet(params: &MlpParams, x: f64, t: f64, h: f64) -> Jet2 {
    let f = |dx: f64, dt: f64| forward_dd(params, &[Dd::from(x).add(Dd::from(dx)), Dd::from(t).add(Dd::from(dt))]);
    let f0 = f(0.0, 0.0);
    let first = |s: f64, ex: f64, et: f64| f(s * ex, s * et).sub(f(-s * ex, -s * et)).div(Dd::from(2.0 * s));
    let second = |s: f64, ex: f64, et: f64| {
        f(s * ex, s * et)
            .sub(f0.scale(2.0))
            .add(f(-s * ex, -s * et))
            .div(Dd::from(s * s))
    };
    let mixed = |s: f64| {
        f(s, s)
            .sub(f(s, -s))
            .sub(f(-s, s))
            .add(f(-s, -s))
            .div(Dd::from(4.0 * s * s))
    };
    let rich = |a: Dd, b: Dd| a.scale(4.0).sub(b).div(Dd::from(3.0)).0;
    Jet2 {
        value: f0.0,
        d_x: rich(first(h, 1.0, 0.0), first(2.0 * h, 1.0, 0.0)),
        d_t: rich(first(h, 0.0, 1.0), first(2.0 * h, 0.0, 1.0)),
        d_xx: rich(second(h, 1.0, 0.0), second(2.0 * h, 1.0, 0.0)),
        d_xt: rich(mixed(h), mixed(2.0 * h)),
        d_tt: rich(second(h, 0.0, 1.0), second(2.0 * h, 0.0, 1.0)),
    }
}

/// `|a - b| <= rel * |b|` when `|b| >= floor`, else `|a - b| <= abs`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64, abs: f64) -> bool {
    if b.abs() >= floor {
        (a - b).abs() <= rel * b.abs()
    } else {
        (a - b).abs() <= abs
    }
}

/// Network with every parameter (biases included) drawn from `N`-ish
/// uniform noise, so no structural zeros hide errors.
pub fn random_net(sizes: &[usize], seed: u64) -> MlpParams {
    let hidden = sizes.len() - 2;
    let mut p = MlpParams::init(&NetworkConfig {
        input_width: sizes[0],
        hidden_layers: hidden,
        hidden_width: sizes[1],
        seed,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for v in p.as_mut_slice() {
        *v += rng.gen_range(-0.3..0.3);
    }
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random problem on `[0, 1] x [0, 1]` with values from `f`.
pub fn random_problem(seed: u64, n_boundary: usize, n_interior: usize, f: impl Fn(f64, f64) -> f64) -> (TrainingData, CollocationSet) {
    let mut r = rng(seed);
    let dom = DomainSpec::new((0.0, 1.0), (0.0, 1.0)).unwrap();
    let boundary = (0..n_boundary)
        .map(|i| {
            let (x, t) = match i % 3 {
                0 => (r.gen_range(0.0..1.0), 0.0),
                1 => (0.0, r.gen_range(0.0..1.0)),
                _ => (1.0, r.gen_range(0.0..1.0)),
            };
            Sample { x, t, u: f(x, t) }
        })
        .collect();
    let interior = (0..n_interior)
        .map(|_| {
            let x = r.gen_range(0.01..0.99);
            let t = r.gen_range(0.01..0.99);
            Sample { x, t, u: f(x, t) }
        })
        .collect();
    let data = TrainingData::new(dom, boundary, interior).unwrap();
    let colloc = CollocationSet::from_training(&data);
    (data, colloc)
}
