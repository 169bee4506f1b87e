//! Candidate differential-operator library and its subset combinations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet2, JetComponent};

pub const MAX_LIBRARY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorId {
    #[serde(rename = "u_t")]
    Ut,
    #[serde(rename = "u_x")]
    Ux,
    #[serde(rename = "u_xx")]
    Uxx,
    #[serde(rename = "u_xt")]
    Uxt,
    #[serde(rename = "u_tt")]
    Utt,
}

impl OperatorId {
    pub fn component(self) -> JetComponent {
        match self {
            OperatorId::Ut => JetComponent::Dt,
            OperatorId::Ux => JetComponent::Dx,
            OperatorId::Uxx => JetComponent::Dxx,
            OperatorId::Uxt => JetComponent::Dxt,
            OperatorId::Utt => JetComponent::Dtt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorId::Ut => "u_t",
            OperatorId::Ux => "u_x",
            OperatorId::Uxx => "u_xx",
            OperatorId::Uxt => "u_xt",
            OperatorId::Utt => "u_tt",
        }
    }

    /// `[u_t, u_x, u_xx, u_xt]`
    pub fn heat_library() -> Vec<OperatorId> {
        vec![OperatorId::Ut, OperatorId::Ux, OperatorId::Uxx, OperatorId::Uxt]
    }

    /// Heat library plus `u_tt`.
    pub fn wave_library() -> Vec<OperatorId> {
        let mut lib = Self::heat_library();
        lib.push(OperatorId::Utt);
        lib
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u_t" => Ok(OperatorId::Ut),
            "u_x" => Ok(OperatorId::Ux),
            "u_xx" => Ok(OperatorId::Uxx),
            "u_xt" => Ok(OperatorId::Uxt),
            "u_tt" => Ok(OperatorId::Utt),
            other => Err(Error::config(format!("unknown operator '{other}'"))),
        }
    }
}

/// A non-empty subset of the library with coefficients for its active terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    library: Vec<OperatorId>,
    mask: u32,
    /// One coefficient per active operator, in library order.
    pub lambda: Vec<f64>,
}

pub fn validate_library(library: &[OperatorId]) -> Result<()> {
    if library.is_empty() {
        return Err(Error::config("operator library is empty"));
    }
    if library.len() > MAX_LIBRARY {
        return Err(Error::config(format!(
            "operator library has {} entries, at most {MAX_LIBRARY} supported",
            library.len()
        )));
    }
    for (i, a) in library.iter().enumerate() {
        if library[..i].contains(a) {
            return Err(Error::config(format!("operator {a} listed twice")));
        }
    }
    Ok(())
}

/// All `2^p - 1` non-empty subsets in ascending mask order, with zero
/// coefficients.
pub fn enumerate(library: &[OperatorId]) -> Result<Vec<Combination>> {
    validate_library(library)?;
    let count = 1u32 << library.len();
    (1..count)
        .map(|mask| Combination::new(library.to_vec(), mask, None))
        .collect()
}

impl Combination {
    pub fn new(library: Vec<OperatorId>, mask: u32, lambda: Option<Vec<f64>>) -> Result<Self> {
        validate_library(&library)?;
        let full = (1u32 << library.len()) - 1;
        if mask == 0 || mask & !full != 0 {
            return Err(Error::config(format!(
                "mask {mask:#b} is not a non-empty subset of a {}-term library",
                library.len()
            )));
        }
        let p = mask.count_ones() as usize;
        let lambda = lambda.unwrap_or_else(|| vec![0.0; p]);
        if lambda.len() != p {
            return Err(Error::config(format!(
                "combination has {p} active terms but {} coefficients",
                lambda.len()
            )));
        }
        Ok(Self { library, mask, lambda })
    }

    pub fn from_operators(library: Vec<OperatorId>, active: &[OperatorId], lambda: Vec<f64>) -> Result<Self> {
        let mut mask = 0u32;
        for op in active {
            let i = library
                .iter()
                .position(|o| o == op)
                .ok_or_else(|| Error::config(format!("operator {op} is not in the library")))?;
            mask |= 1 << i;
        }
        // lambda is given in `active` order; store it in library order
        let mut ordered = Vec::with_capacity(active.len());
        for op in library.iter().filter(|o| active.contains(o)) {
            let j = active.iter().position(|a| a == op).unwrap();
            ordered.push(*lambda.get(j).ok_or_else(|| Error::config("too few coefficients"))?);
        }
        Self::new(library, mask, Some(ordered))
    }

    pub fn library(&self) -> &[OperatorId] {
        &self.library
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    /// Enumeration index `m`; equal to the mask.
    pub fn index(&self) -> u32 {
        self.mask
    }

    /// Number of active operators.
    pub fn p(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn active(&self) -> Vec<OperatorId> {
        self.library
            .iter()
            .enumerate()
            .filter(|(i, _)| self.mask & (1 << i) != 0)
            .map(|(_, op)| *op)
            .collect()
    }

    pub fn contains(&self, op: OperatorId) -> bool {
        self.active().contains(&op)
    }

    /// Mask as a bit string, most significant library entry first.
    pub fn mask_bits(&self) -> String {
        (0..self.library.len())
            .rev()
            .map(|i| if self.mask & (1 << i) != 0 { '1' } else { '0' })
            .collect()
    }

    /// Active operator names joined with `+`.
    pub fn label(&self) -> String {
        self.active().iter().map(|o| o.name()).collect::<Vec<_>>().join("+")
    }

    /// Values of the active operators at a jet, in library order.
    pub fn features(&self, jet: &Jet2) -> Vec<f64> {
        self.active().iter().map(|o| jet.get(o.component())).collect()
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.library.clone(), self.mask, Some(lambda))
    }
}

/// `phi(u)^T lambda` over the active operators.
pub fn phi_dot_lambda(comb: &Combination, jet: &Jet2) -> f64 {
    comb.active()
        .iter()
        .zip(&comb.lambda)
        .map(|(op, l)| l * jet.get(op.component()))
        .sum()
}

/// Residual `phi(u)^T lambda - g_hat`.
pub fn residual(comb: &Combination, jet_u: &Jet2, g_hat: f64) -> f64 {
    phi_dot_lambda(comb, jet_u) - g_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jet(v: [f64; 6]) -> Jet2 {
        Jet2 {
            value: v[0],
            d_x: v[1],
            d_t: v[2],
            d_xx: v[3],
            d_xt: v[4],
            d_tt: v[5],
        }
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate(&[OperatorId::Ut]).unwrap().len(), 1);
        assert_eq!(enumerate(&OperatorId::heat_library()).unwrap().len(), 15);
        assert_eq!(enumerate(&OperatorId::wave_library()).unwrap().len(), 31);
        assert!(matches!(enumerate(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn enumeration_order_is_binary_counting() {
        let lib = vec![OperatorId::Ut, OperatorId::Ux, OperatorId::Uxx];
        let masks: Vec<String> = enumerate(&lib).unwrap().iter().map(|c| c.mask_bits()).collect();
        assert_eq!(masks, ["001", "010", "011", "100", "101", "110", "111"]);
    }

    #[test]
    fn duplicate_operator_rejected() {
        assert!(enumerate(&[OperatorId::Ut, OperatorId::Ut]).is_err());
    }

    #[test]
    fn operator_names_roundtrip() {
        for op in OperatorId::wave_library() {
            assert_eq!(op.name().parse::<OperatorId>().unwrap(), op);
        }
        assert!("u_xxx".parse::<OperatorId>().is_err());
    }

    #[test]
    fn heat_form() {
        let a2 = 0.7;
        let comb = Combination::from_operators(
            OperatorId::heat_library(),
            &[OperatorId::Ut, OperatorId::Uxx],
            vec![1.0, -a2],
        )
        .unwrap();
        let j = jet([0.3, 0.1, 2.0, 0.5, 9.0, 4.0]);
        assert!((phi_dot_lambda(&comb, &j) - (2.0 - a2 * 0.5)).abs() < 1e-15);
        assert_eq!(comb.label(), "u_t+u_xx");
        assert_eq!(comb.p(), 2);
    }

    #[test]
    fn zero_lambda_and_residual_cases() {
        let lib = OperatorId::heat_library();
        let comb = Combination::new(lib.clone(), 0b0101, None).unwrap();
        let j = jet([1.0, 2.0, 2.0, 1.0, 3.0, 4.0]);
        assert_eq!(phi_dot_lambda(&comb, &j), 0.0);

        let comb = comb.with_lambda(vec![1.0, -1.0]).unwrap();
        assert_eq!(residual(&comb, &j, 0.0), 1.0);
        assert_eq!(residual(&comb, &j, phi_dot_lambda(&comb, &j)), 0.0);
    }

    #[test]
    fn lambda_length_checked() {
        assert!(Combination::new(OperatorId::heat_library(), 0b11, Some(vec![1.0])).is_err());
        assert!(Combination::new(OperatorId::heat_library(), 0, None).is_err());
        assert!(Combination::new(OperatorId::heat_library(), 0b10000, None).is_err());
    }

    proptest! {
        #[test]
        fn dot_matches_brute_force(
            mask in 1u32..32,
            lam in proptest::collection::vec(-5.0f64..5.0, 5),
            v in proptest::array::uniform6(-10.0f64..10.0),
        ) {
            let lib = OperatorId::wave_library();
            let p = mask.count_ones() as usize;
            let comb = Combination::new(lib.clone(), mask, Some(lam[..p].to_vec())).unwrap();
            let j = jet(v);
            // library order [u_t, u_x, u_xx, u_xt, u_tt] -> jet slots [2, 1, 3, 4, 5]
            let slots = [2usize, 1, 3, 4, 5];
            let mut expected = 0.0;
            let mut k = 0;
            for (i, slot) in slots.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    expected += lam[k] * v[*slot];
                    k += 1;
                }
            }
            prop_assert!((phi_dot_lambda(&comb, &j) - expected).abs() <= 1e-15 * (1.0 + expected.abs()) * 8.0);
        }

        #[test]
        fn residual_is_linear(
            l1 in proptest::collection::vec(-3.0f64..3.0, 2),
            l2 in proptest::collection::vec(-3.0f64..3.0, 2),
            g1 in -3.0f64..3.0, g2 in -3.0f64..3.0,
            v in proptest::array::uniform6(-3.0f64..3.0),
        ) {
            let lib = OperatorId::heat_library();
            let j = jet(v);
            let c1 = Combination::new(lib.clone(), 0b0101, Some(l1.clone())).unwrap();
            let c2 = c1.with_lambda(l2.clone()).unwrap();
            let sum = c1.with_lambda(vec![l1[0] + l2[0], l1[1] + l2[1]]).unwrap();
            let lhs = residual(&sum, &j, g1 + g2);
            let rhs = residual(&c1, &j, g1) + residual(&c2, &j, g2);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn enumeration_is_reproducible_bijection(p in 1usize..=5) {
            let lib: Vec<_> = OperatorId::wave_library().into_iter().take(p).collect();
            let a = enumerate(&lib).unwrap();
            let b = enumerate(&lib).unwrap();
            prop_assert_eq!(&a, &b);
            let idx: Vec<u32> = a.iter().map(|c| c.index()).collect();
            prop_assert_eq!(idx, (1..(1u32 << p)).collect::<Vec<_>>());
        }
    }
}
