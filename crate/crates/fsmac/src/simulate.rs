//! Monte Carlo verification of the multiplexing scheme's statistical
//! scaffolding: state paths, per-delayed-state codebook occupancy, the
//! zero-fill/error-declaration rule, and plug-in empirical rate estimates.
//!
//! RNG: ChaCha12 with a 64-bit seed (`ChaCha12Rng::seed_from_u64`), chosen
//! for portable, platform-independent streams. Identical seeds reproduce
//! reports bit for bit. Decoding itself is not simulated; occupancy counts
//! and plug-in mutual information are the verifiable content.

use crate::channel::DiscreteStateMac;
use crate::inforate::{InputPolicy, RateTriple, SingleLetterJoint};
use crate::markov::{Delay, DelayProfile, MarkovChain};
use crate::tensor::JointTable;
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("epsilon' = {value} must lie in (0, min state probability = {min_prob})")]
    BadEpsilon { value: f64, min_prob: f64 },
    #[error("occupancy statistics need finite delays (d1 = ∞)")]
    InfiniteDelay,
    #[error("block length n = {n} must exceed d1 = {d1}")]
    BlockTooShort { n: usize, d1: u32 },
    #[error("policy shape does not match chain/channel ({what})")]
    ShapeMismatch { what: String },
}

#[inline]
fn next_f64(rng: &mut ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn sample_pmf(rng: &mut ChaCha12Rng, pmf: impl Iterator<Item = f64>) -> usize {
    let u = next_f64(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in pmf.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Stationary-start state path: `S_1 ~ π`, then Markov steps.
/// Deterministic given the seed.
pub fn sample_state_path(chain: &MarkovChain, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let k = chain.k();
    let mut path = Vec::with_capacity(n);
    if n == 0 {
        return path;
    }
    let first = sample_pmf(&mut rng, chain.stationary().iter().copied());
    path.push(first);
    for _ in 1..n {
        let prev = *path.last().unwrap();
        let next = sample_pmf(&mut rng, (0..k).map(|j| chain.step_prob(prev, j)));
        path.push(next);
    }
    path
}

/// Occupancy tallies of one block: how often each delayed-state value (and
/// pair) was seen, against the codebook lengths `n_j(·) = (P(·) - ε')·n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyReport {
    pub n: usize,
    pub d1: u32,
    pub d2: u32,
    pub epsilon_prime: f64,
    /// `N_{s̃1}`, counted over the symbols where both delayed states exist.
    pub counts1: Vec<u64>,
    /// `N_{s̃1, s̃2}`, row-major k×k.
    pub counts2: Vec<u64>,
    /// Any count fell below its codebook length.
    pub declared_error: bool,
}

impl OccupancyReport {
    pub fn samples(&self) -> u64 {
        self.counts1.iter().sum()
    }
}

/// Walk one state path and tally delayed-state occupancies. The first `d1`
/// symbols have no delayed state and are excluded from the counts.
pub fn occupancy_trial(
    chain: &MarkovChain,
    delays: DelayProfile,
    n: usize,
    epsilon_prime: f64,
    seed: u64,
) -> Result<OccupancyReport, SimulateError> {
    let d1 = match delays.d1() {
        Delay::Finite(d) => d,
        Delay::Infinite => return Err(SimulateError::InfiniteDelay),
    };
    let d2 = delays.d2();
    let k = chain.k();
    let min_prob = chain.stationary().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(epsilon_prime > 0.0 && epsilon_prime < min_prob) {
        return Err(SimulateError::BadEpsilon {
            value: epsilon_prime,
            min_prob,
        });
    }
    if n <= d1 as usize {
        return Err(SimulateError::BlockTooShort { n, d1 });
    }
    let path = sample_state_path(chain, n, seed);
    let mut counts1 = vec![0u64; k];
    let mut counts2 = vec![0u64; k * k];
    for i in d1 as usize..n {
        let s1t = path[i - d1 as usize];
        let s2t = path[i - d2 as usize];
        counts1[s1t] += 1;
        counts2[s1t * k + s2t] += 1;
    }
    let dj = chain.delayed_joint(delays);
    let nf = n as f64;
    let mut declared_error = false;
    for (a, &c) in counts1.iter().enumerate() {
        let needed = (chain.stationary()[a] - epsilon_prime) * nf;
        if (c as f64) < needed {
            declared_error = true;
        }
    }
    for a in 0..k {
        for b in 0..k {
            let needed = (dj.pair_weight(a, b) - epsilon_prime) * nf;
            if (counts2[a * k + b] as f64) < needed {
                declared_error = true;
            }
        }
    }
    Ok(OccupancyReport {
        n,
        d1,
        d2,
        epsilon_prime,
        counts1,
        counts2,
        declared_error,
    })
}

/// Simulate `(u, s̃1, s̃2, s, x1, x2, y)` along a real state path, form the
/// empirical joint, and evaluate the exact rate formulas on it (plug-in
/// estimator). The analytic rates are the n → ∞ limit.
pub fn empirical_rate_estimate(
    chain: &MarkovChain,
    delays: DelayProfile,
    ch: &DiscreteStateMac,
    policy: &InputPolicy,
    n: usize,
    seed: u64,
) -> Result<RateTriple, SimulateError> {
    let d1 = match delays.d1() {
        Delay::Finite(d) => d,
        Delay::Infinite => return Err(SimulateError::InfiniteDelay),
    };
    let k = chain.k();
    if policy.k1 != k || policy.k != k || policy.nx1 != ch.nx1() || policy.nx2 != ch.nx2() {
        return Err(SimulateError::ShapeMismatch {
            what: format!(
                "policy (k1={}, k={}, nx1={}, nx2={}) vs chain k={k}, channel ({}, {})",
                policy.k1,
                policy.k,
                policy.nx1,
                policy.nx2,
                ch.nx1(),
                ch.nx2()
            ),
        });
    }
    if n <= d1 as usize {
        return Err(SimulateError::BlockTooShort { n, d1 });
    }
    let d2 = delays.d2() as usize;
    let path = sample_state_path(chain, n, seed);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let (nu, ny) = (policy.nu, ch.ny());
    let dims = vec![nu, k, k, k, policy.nx1, policy.nx2, ny];
    let mut counts = JointTable::zeros(dims);
    let samples = n - d1 as usize;
    let weight = 1.0 / samples as f64;
    for i in d1 as usize..n {
        let s1t = path[i - d1 as usize];
        let s2t = path[i - d2];
        let s = path[i];
        let u = sample_pmf(&mut rng, (0..nu).map(|v| policy.pu(s1t, v)));
        let x1 = sample_pmf(&mut rng, (0..policy.nx1).map(|v| policy.px1(s1t, u, v)));
        let x2 = sample_pmf(&mut rng, (0..policy.nx2).map(|v| policy.px2(s1t, s2t, u, v)));
        let y = sample_pmf(&mut rng, (0..ny).map(|v| ch.prob(v, x1, x2, s)));
        let idx = ((((((u * k) + s1t) * k + s2t) * k + s) * policy.nx1 + x1) * policy.nx2 + x2)
            * ny
            + y;
        counts.data_mut()[idx] += weight;
    }
    let joint = SingleLetterJoint::from_table(counts);
    joint.rate_triple().map_err(|e| SimulateError::ShapeMismatch {
        what: format!("empirical joint: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_reproduce_bit_for_bit() {
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let delays = DelayProfile::finite(1, 0).unwrap();
        let a = occupancy_trial(&chain, delays, 10_000, 0.01, 7).unwrap();
        let b = occupancy_trial(&chain, delays, 10_000, 0.01, 7).unwrap();
        assert_eq!(a, b);
        let c = occupancy_trial(&chain, delays, 10_000, 0.01, 8).unwrap();
        assert_ne!(a.counts1, c.counts1);
    }

    #[test]
    fn single_step_path_draws_from_stationary() {
        let chain = MarkovChain::two_state(0.1, 0.3).unwrap();
        let path = sample_state_path(&chain, 1, 3);
        assert_eq!(path.len(), 1);
        assert!(path[0] < 2);
    }

    #[test]
    fn iid_chain_empirical_frequency_approaches_stationary() {
        // g = b = 0.5 makes the rows equal, so states are i.i.d. uniform.
        let chain = MarkovChain::two_state(0.5, 0.5).unwrap();
        let n = 100_000;
        let path = sample_state_path(&chain, n, 123);
        let frac = path.iter().filter(|&&s| s == 0).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn pair_counts_marginalize_to_single_counts() {
        let chain = MarkovChain::two_state(0.2, 0.3).unwrap();
        let delays = DelayProfile::finite(2, 1).unwrap();
        let rep = occupancy_trial(&chain, delays, 5000, 0.01, 99).unwrap();
        for a in 0..2 {
            let row: u64 = (0..2).map(|b| rep.counts2[a * 2 + b]).sum();
            assert_eq!(row, rep.counts1[a]);
        }
        assert_eq!(rep.samples(), 5000 - 2);
    }

    #[test]
    fn equal_delays_put_pair_counts_on_the_diagonal() {
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let delays = DelayProfile::finite(3, 3).unwrap();
        let rep = occupancy_trial(&chain, delays, 2000, 0.01, 5).unwrap();
        assert_eq!(rep.counts2[1], 0);
        assert_eq!(rep.counts2[2], 0);
    }

    #[test]
    fn epsilon_close_to_stationary_mass_never_declares() {
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let delays = DelayProfile::finite(1, 0).unwrap();
        // Thresholds (0.5 - 0.49)·n are nearly zero.
        let mut errors = 0;
        for seed in 0..20 {
            let rep = occupancy_trial(&chain, delays, 10_000, 0.49, seed).unwrap();
            errors += rep.declared_error as u32;
        }
        assert_eq!(errors, 0);
    }

    #[test]
    fn epsilon_bounds_are_validated() {
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let delays = DelayProfile::finite(1, 0).unwrap();
        assert!(matches!(
            occupancy_trial(&chain, delays, 100, 0.0, 1),
            Err(SimulateError::BadEpsilon { .. })
        ));
        assert!(matches!(
            occupancy_trial(&chain, delays, 100, 0.6, 1),
            Err(SimulateError::BadEpsilon { .. })
        ));
    }

    #[test]
    fn empirical_estimate_recovers_identity_channel_rate() {
        let chain = MarkovChain::validate(&[vec![1.0]]).unwrap();
        let delays = DelayProfile::finite(0, 0).unwrap();
        let mut law = vec![0.0; 2 * 2 * 1 * 2];
        for x1 in 0..2usize {
            for x2 in 0..2usize {
                law[((x1 * 2 + x2) * 1) * 2 + x1] = 1.0;
            }
        }
        let ch = DiscreteStateMac::new(2, 2, 1, 2, law).unwrap();
        let policy = InputPolicy::uniform(1, 1, 1, 2, 2);
        let est = empirical_rate_estimate(&chain, delays, &ch, &policy, 20_000, 11).unwrap();
        assert!((est.r1 - 1.0).abs() < 0.02, "r1 estimate {}", est.r1);
        assert!(est.r2.abs() < 0.02);
    }

    #[test]
    fn estimation_error_shrinks_with_block_length() {
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let delays = DelayProfile::finite(1, 0).unwrap();
        let ch = DiscreteStateMac::xor_bsc(&[0.1, 0.4]).unwrap();
        let policy = InputPolicy::uniform(1, 2, 2, 2, 2);
        let exact = crate::inforate::assemble_joint(&chain.delayed_joint(delays), &ch, &policy)
            .unwrap()
            .rate_triple()
            .unwrap();
        let small = empirical_rate_estimate(&chain, delays, &ch, &policy, 100, 42).unwrap();
        let large = empirical_rate_estimate(&chain, delays, &ch, &policy, 100_000, 42).unwrap();
        let err_small = (small.rsum - exact.rsum).abs();
        let err_large = (large.rsum - exact.rsum).abs();
        assert!(err_large < err_small, "{err_large} !< {err_small}");
        assert!(err_large < 0.02);
    }
}
