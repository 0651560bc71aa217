//! Single-letter rate bounds for the discrete channel: assemble the joint
//! distribution induced by an input policy and evaluate the three conditional
//! mutual informations
//!
//! ```text
//! R1   <= I(X1; Y | X2, S, S̃1, S̃2, U)
//! R2   <= I(X2; Y | X1, S, S̃1, S̃2, U)
//! R1+R2 <= I(X1, X2; Y | S, S̃1, S̃2, U)
//! ```
//!
//! by exact summation over the full joint. The symmetric-delay case is the
//! same computation (the delayed joint is diagonal), and the one-encoder case
//! runs with a singleton s̃1 axis and the policy shape `P(q)P(x1|q)P(x2|s̃,q)`.
//!
//! All entropy accumulation happens in natural log with compensated
//! summation and is converted to bits at the boundary.

use crate::channel::DiscreteStateMac;
use crate::markov::DelayedJoint;
use crate::tensor::JointTable;
use thiserror::Error;

/// Slice normalization tolerance for policies and channel tables.
const SLICE_TOL: f64 = 1e-12;
/// Normalization tolerance for assembled joints.
const JOINT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum InforateError {
    #[error("policy tables do not match ({what})")]
    ShapeMismatch { what: String },
    #[error("policy slice {slice} sums to {sum}, not 1 within 1e-12")]
    NonNormalizedPolicy { slice: String, sum: f64 },
    #[error("|U| = {nu} exceeds the cardinality bound 3")]
    AuxTooLarge { nu: usize },
    #[error("joint sums to {sum}, not 1 within 1e-10")]
    NonNormalizedJoint { sum: f64 },
}

/// Conditional input law `P(u|s̃1) P(x1|s̃1,u) P(x2|s̃1,s̃2,u)`.
///
/// `k1` is the size of the s̃1 axis: equal to the state count for finite
/// delays, and 1 in the one-encoder case, where `u` plays the role of the
/// time-sharing variable `Q` and `x1` is state-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPolicy {
    pub nu: usize,
    pub k1: usize,
    pub k: usize,
    pub nx1: usize,
    pub nx2: usize,
    /// `[s̃1][u]`
    pub pu: Vec<f64>,
    /// `[s̃1][u][x1]`
    pub px1: Vec<f64>,
    /// `[s̃1][s̃2][u][x2]`
    pub px2: Vec<f64>,
}

impl InputPolicy {
    pub fn new(
        nu: usize,
        k1: usize,
        k: usize,
        nx1: usize,
        nx2: usize,
        pu: Vec<f64>,
        px1: Vec<f64>,
        px2: Vec<f64>,
    ) -> Result<Self, InforateError> {
        let policy = Self {
            nu,
            k1,
            k,
            nx1,
            nx2,
            pu,
            px1,
            px2,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Uniform policy on every conditional slice.
    pub fn uniform(nu: usize, k1: usize, k: usize, nx1: usize, nx2: usize) -> Self {
        Self {
            nu,
            k1,
            k,
            nx1,
            nx2,
            pu: vec![1.0 / nu as f64; k1 * nu],
            px1: vec![1.0 / nx1 as f64; k1 * nu * nx1],
            px2: vec![1.0 / nx2 as f64; k1 * k * nu * nx2],
        }
    }

    /// Product policy without an auxiliary variable: `P(x1|s̃1) P(x2|s̃1,s̃2)`.
    pub fn product(
        k1: usize,
        k: usize,
        px1: Vec<f64>,
        px2: Vec<f64>,
    ) -> Result<Self, InforateError> {
        let nx1 = px1.len() / k1;
        let nx2 = px2.len() / (k1 * k);
        Self::new(1, k1, k, nx1, nx2, vec![1.0; k1], px1, px2)
    }

    pub fn validate(&self) -> Result<(), InforateError> {
        if self.nu == 0 || self.nu > 3 {
            return Err(InforateError::AuxTooLarge { nu: self.nu });
        }
        let shapes = [
            ("pu", self.pu.len(), self.k1 * self.nu),
            ("px1", self.px1.len(), self.k1 * self.nu * self.nx1),
            ("px2", self.px2.len(), self.k1 * self.k * self.nu * self.nx2),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(InforateError::ShapeMismatch {
                    what: format!("{name}: len {got}, expected {want}"),
                });
            }
        }
        check_slices(&self.pu, self.nu, "pu")?;
        check_slices(&self.px1, self.nx1, "px1")?;
        check_slices(&self.px2, self.nx2, "px2")?;
        Ok(())
    }

    #[inline]
    pub fn pu(&self, s1t: usize, u: usize) -> f64 {
        self.pu[s1t * self.nu + u]
    }

    #[inline]
    pub fn px1(&self, s1t: usize, u: usize, x1: usize) -> f64 {
        self.px1[(s1t * self.nu + u) * self.nx1 + x1]
    }

    #[inline]
    pub fn px2(&self, s1t: usize, s2t: usize, u: usize, x2: usize) -> f64 {
        self.px2[((s1t * self.k + s2t) * self.nu + u) * self.nx2 + x2]
    }

    /// FNV-1a over the table bit patterns; stable provenance fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: f64| {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for &v in self.pu.iter().chain(&self.px1).chain(&self.px2) {
            eat(v);
        }
        h
    }
}

fn check_slices(table: &[f64], width: usize, name: &str) -> Result<(), InforateError> {
    for (i, slice) in table.chunks(width).enumerate() {
        let sum: f64 = slice.iter().sum();
        if (sum - 1.0).abs() > SLICE_TOL || slice.iter().any(|&v| v < -1e-15 || !v.is_finite()) {
            return Err(InforateError::NonNormalizedPolicy {
                slice: format!("{name}[{i}]"),
                sum,
            });
        }
    }
    Ok(())
}

/// The three rate bounds of one policy, in bits/symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTriple {
    pub r1: f64,
    pub r2: f64,
    pub rsum: f64,
}

impl RateTriple {
    pub const ZERO: RateTriple = RateTriple {
        r1: 0.0,
        r2: 0.0,
        rsum: 0.0,
    };

    /// Pentagon corner where user 1 is decoded last:
    /// `(R1, R2) = (r1, rsum - r1)`.
    pub fn corner_a(&self) -> (f64, f64) {
        (self.r1, (self.rsum - self.r1).max(0.0))
    }

    /// Pentagon corner where user 2 is decoded last:
    /// `(R1, R2) = (rsum - r2, r2)`.
    pub fn corner_b(&self) -> (f64, f64) {
        ((self.rsum - self.r2).max(0.0), self.r2)
    }
}

/// Joint pmf over `(U, S̃1, S̃2, S, X1, X2, Y)` in that axis order.
#[derive(Debug, Clone)]
pub struct SingleLetterJoint {
    table: JointTable,
}

/// Axis positions inside [`SingleLetterJoint`].
pub mod axis {
    pub const U: usize = 0;
    pub const S1T: usize = 1;
    pub const S2T: usize = 2;
    pub const S: usize = 3;
    pub const X1: usize = 4;
    pub const X2: usize = 5;
    pub const Y: usize = 6;
}

impl SingleLetterJoint {
    pub fn from_table(table: JointTable) -> Self {
        assert_eq!(table.dims().len(), 7, "expected 7 axes (u,s̃1,s̃2,s,x1,x2,y)");
        Self { table }
    }

    pub fn table(&self) -> &JointTable {
        &self.table
    }

    pub fn dims(&self) -> &[usize] {
        self.table.dims()
    }

    /// The three rate bounds by exact summation.
    pub fn rate_triple(&self) -> Result<RateTriple, InforateError> {
        let sum = self.table.total();
        if (sum - 1.0).abs() > JOINT_TOL {
            return Err(InforateError::NonNormalizedJoint { sum });
        }
        let h = |dropped: &[usize]| {
            let mut keep = [true; 7];
            for &ax in dropped {
                keep[ax] = false;
            }
            self.table.marginal_entropy_bits(&keep)
        };
        use axis::{X1, X2, Y};
        let h_all = h(&[]);
        let h_no_y = h(&[Y]);
        let r1 = h_no_y + h(&[X1]) - h_all - h(&[X1, Y]);
        let r2 = h_no_y + h(&[X2]) - h_all - h(&[X2, Y]);
        let rsum = h_no_y + h(&[X1, X2]) - h_all - h(&[X1, X2, Y]);
        let clip = |v: f64| if v < 0.0 && v > -1e-9 { 0.0 } else { v };
        Ok(RateTriple {
            r1: clip(r1),
            r2: clip(r2),
            rsum: clip(rsum),
        })
    }
}

/// Product joint
/// `P(s̃1,s̃2,s) P(u|s̃1) P(x1|s̃1,u) P(x2|s̃1,s̃2,u) p(y|x1,x2,s)`.
pub fn assemble_joint(
    dj: &DelayedJoint,
    ch: &DiscreteStateMac,
    policy: &InputPolicy,
) -> Result<SingleLetterJoint, InforateError> {
    policy.validate()?;
    if policy.k1 != dj.k1() || policy.k != dj.k() || dj.k() != ch.k() {
        return Err(InforateError::ShapeMismatch {
            what: format!(
                "policy (k1={}, k={}) vs joint (k1={}, k={}) vs channel (k={})",
                policy.k1,
                policy.k,
                dj.k1(),
                dj.k(),
                ch.k()
            ),
        });
    }
    if policy.nx1 != ch.nx1() || policy.nx2 != ch.nx2() {
        return Err(InforateError::ShapeMismatch {
            what: format!(
                "policy alphabets ({}, {}) vs channel ({}, {})",
                policy.nx1,
                policy.nx2,
                ch.nx1(),
                ch.nx2()
            ),
        });
    }
    let (nu, k1, k, nx1, nx2, ny) = (policy.nu, policy.k1, policy.k, policy.nx1, policy.nx2, ch.ny());
    let mut table = JointTable::zeros(vec![nu, k1, k, k, nx1, nx2, ny]);
    let data = table.data_mut();
    let mut idx = 0usize;
    for u in 0..nu {
        for a in 0..k1 {
            let w_u = policy.pu(a, u);
            for b in 0..k {
                for s in 0..k {
                    let w_state = dj.prob(a, b, s);
                    for x1 in 0..nx1 {
                        let w_x1 = policy.px1(a, u, x1);
                        for x2 in 0..nx2 {
                            let w_x2 = policy.px2(a, b, u, x2);
                            let stem = w_u * w_state * w_x1 * w_x2;
                            for y in 0..ny {
                                data[idx] = stem * ch.prob(y, x1, x2, s);
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(SingleLetterJoint { table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{DelayProfile, MarkovChain};

    fn hb(p: f64) -> f64 {
        if p <= 0.0 || p >= 1.0 {
            return 0.0;
        }
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    fn single_state_chain() -> MarkovChain {
        MarkovChain::validate(&[vec![1.0]]).unwrap()
    }

    /// Y = X1, X2 ignored.
    fn identity_channel() -> DiscreteStateMac {
        let mut law = vec![0.0; 2 * 2 * 1 * 2];
        for x1 in 0..2usize {
            for x2 in 0..2usize {
                law[((x1 * 2 + x2) * 1) * 2 + x1] = 1.0;
            }
        }
        DiscreteStateMac::new(2, 2, 1, 2, law).unwrap()
    }

    #[test]
    fn identity_channel_rates() {
        let chain = single_state_chain();
        let dj = chain.delayed_joint(DelayProfile::finite(0, 0).unwrap());
        let policy = InputPolicy::uniform(1, 1, 1, 2, 2);
        let triple = assemble_joint(&dj, &identity_channel(), &policy)
            .unwrap()
            .rate_triple()
            .unwrap();
        assert!((triple.r1 - 1.0).abs() < 1e-12);
        assert!(triple.r2.abs() < 1e-12);
        assert!((triple.rsum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_independent_of_inputs_gives_zero_rates() {
        let chain = single_state_chain();
        let dj = chain.delayed_joint(DelayProfile::finite(0, 0).unwrap());
        let ch = DiscreteStateMac::new(2, 2, 1, 2, vec![0.3, 0.7].repeat(4)).unwrap();
        let policy = InputPolicy::uniform(2, 1, 1, 2, 2);
        let triple = assemble_joint(&dj, &ch, &policy)
            .unwrap()
            .rate_triple()
            .unwrap();
        assert!(triple.r1.abs() < 1e-12);
        assert!(triple.r2.abs() < 1e-12);
        assert!(triple.rsum.abs() < 1e-12);
    }

    #[test]
    fn xor_bsc_pair_matches_binary_entropy_formula() {
        // Uniform inputs, perfect CSI: rsum = 1 - (H_b(0.1) + H_b(0.4)) / 2,
        // and r1 = r2 = rsum on this XOR channel.
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let dj = chain.delayed_joint(DelayProfile::finite(0, 0).unwrap());
        let ch = DiscreteStateMac::xor_bsc(&[0.1, 0.4]).unwrap();
        let policy = InputPolicy::uniform(1, 2, 2, 2, 2);
        let triple = assemble_joint(&dj, &ch, &policy)
            .unwrap()
            .rate_triple()
            .unwrap();
        let expect = 1.0 - 0.5 * (hb(0.1) + hb(0.4));
        assert!((triple.rsum - expect).abs() < 1e-12, "rsum = {}", triple.rsum);
        assert!((triple.r1 - expect).abs() < 1e-12);
        assert!((triple.r2 - expect).abs() < 1e-12);
    }

    #[test]
    fn assembled_joint_is_normalized_for_arbitrary_policy() {
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let dj = chain.delayed_joint(DelayProfile::finite(1, 0).unwrap());
        let ch = DiscreteStateMac::xor_bsc(&[0.1, 0.4]).unwrap();
        let policy = InputPolicy::new(
            2,
            2,
            2,
            2,
            2,
            vec![0.3, 0.7, 0.9, 0.1],
            vec![0.2, 0.8, 0.5, 0.5, 1.0, 0.0, 0.6, 0.4],
            [
                vec![0.25, 0.75],
                vec![0.5, 0.5],
                vec![0.1, 0.9],
                vec![0.7, 0.3],
                vec![0.0, 1.0],
                vec![0.45, 0.55],
                vec![0.33, 0.67],
                vec![0.8, 0.2],
            ]
            .concat(),
        )
        .unwrap();
        let joint = assemble_joint(&dj, &ch, &policy).unwrap();
        assert!((joint.table().total() - 1.0).abs() < 1e-10);
        let t = joint.rate_triple().unwrap();
        // Pentagon consistency for a fixed policy.
        assert!(t.r1.max(t.r2) <= t.rsum + 1e-12);
        assert!(t.rsum <= t.r1 + t.r2 + 1e-12);
    }

    #[test]
    fn rates_invariant_under_relabeling() {
        let chain = MarkovChain::two_state(0.2, 0.3).unwrap();
        let dj = chain.delayed_joint(DelayProfile::finite(1, 1).unwrap());
        let ch = DiscreteStateMac::xor_bsc(&[0.05, 0.3]).unwrap();
        let policy = InputPolicy::new(
            2,
            2,
            2,
            2,
            2,
            vec![0.6, 0.4, 0.2, 0.8],
            vec![0.7, 0.3, 0.4, 0.6, 0.9, 0.1, 0.2, 0.8],
            vec![0.5; 2 * 2 * 2 * 2]
                .iter()
                .enumerate()
                .map(|(i, _)| if i % 2 == 0 { 0.35 } else { 0.65 })
                .collect(),
        )
        .unwrap();
        let base = assemble_joint(&dj, &ch, &policy)
            .unwrap()
            .rate_triple()
            .unwrap();

        // Relabel X1 (swap symbols) in both policy and channel.
        let mut px1 = policy.px1.clone();
        for pair in px1.chunks_mut(2) {
            pair.swap(0, 1);
        }
        let relabeled = InputPolicy::new(2, 2, 2, 2, 2, policy.pu.clone(), px1, policy.px2.clone())
            .unwrap();
        let mut law = Vec::new();
        for x1 in 0..2usize {
            for x2 in 0..2usize {
                for s in 0..2usize {
                    for y in 0..2usize {
                        law.push(ch.prob(y, x1 ^ 1, x2, s));
                    }
                }
            }
        }
        let ch_swapped = DiscreteStateMac::new(2, 2, 2, 2, law).unwrap();
        let swapped = assemble_joint(&dj, &ch_swapped, &relabeled)
            .unwrap()
            .rate_triple()
            .unwrap();
        assert!((base.r1 - swapped.r1).abs() < 1e-12);
        assert!((base.r2 - swapped.r2).abs() < 1e-12);
        assert!((base.rsum - swapped.rsum).abs() < 1e-12);
    }

    #[test]
    fn state_independent_policy_matches_no_csi_rates() {
        // With P(x1), P(x2) independent of the delayed states, the bounds
        // reduce to the plain MAC rates with state known at the receiver.
        let chain = MarkovChain::two_state(0.15, 0.35).unwrap();
        let dj = chain.delayed_joint(DelayProfile::finite(2, 1).unwrap());
        let ch = DiscreteStateMac::xor_bsc(&[0.1, 0.25]).unwrap();
        let p1 = [0.7, 0.3];
        let p2 = [0.4, 0.6];
        let policy = InputPolicy::product(
            2,
            2,
            [p1, p1].concat(),
            [p2, p2, p2, p2].concat(),
        )
        .unwrap();
        let got = assemble_joint(&dj, &ch, &policy)
            .unwrap()
            .rate_triple()
            .unwrap();

        // Oracle: direct summation of I(X1,X2;Y|S) on the product law.
        let pi = chain.stationary();
        let mut rsum = 0.0;
        let mut r1 = 0.0;
        for (s, &ps) in pi.iter().enumerate() {
            // H(Y|S=s)
            let mut hy = 0.0;
            for y in 0..2usize {
                let mut py = 0.0;
                for x1 in 0..2usize {
                    for x2 in 0..2usize {
                        py += p1[x1] * p2[x2] * ch.prob(y, x1, x2, s);
                    }
                }
                if py > 0.0 {
                    hy -= py * py.log2();
                }
            }
            // H(Y|X1,X2,S=s) and H(Y|X2,S=s)
            let mut hy_given_x = 0.0;
            let mut hy_given_x2 = 0.0;
            for x2 in 0..2usize {
                for y in 0..2usize {
                    let mut py = 0.0;
                    for x1 in 0..2usize {
                        py += p1[x1] * ch.prob(y, x1, x2, s);
                    }
                    if py > 0.0 {
                        hy_given_x2 -= p2[x2] * py * py.log2();
                    }
                }
                for x1 in 0..2usize {
                    for y in 0..2usize {
                        let p = ch.prob(y, x1, x2, s);
                        if p > 0.0 {
                            hy_given_x -= p1[x1] * p2[x2] * p * p.log2();
                        }
                    }
                }
            }
            rsum += ps * (hy - hy_given_x);
            r1 += ps * (hy_given_x2 - hy_given_x);
        }
        assert!((got.rsum - rsum).abs() < 1e-12);
        assert!((got.r1 - r1).abs() < 1e-12);
    }

    #[test]
    fn aux_cardinality_bound_enforced() {
        let err = InputPolicy::uniform(4, 2, 2, 2, 2).validate().unwrap_err();
        assert!(matches!(err, InforateError::AuxTooLarge { nu: 4 }));
    }
}
