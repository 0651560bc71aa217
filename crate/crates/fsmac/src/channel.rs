//! Channel models: the per-state discrete MAC law `p(y|x1,x2,s)` and the
//! Gaussian/fading parametric family, plus named constructors for the
//! standard two-state examples.
//!
//! Gaussian channels stay parametric; their rates are evaluated in closed
//! form (see the `gaussian` module) rather than by discretizing the noise.

use crate::markov::{MarkovChain, MarkovError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("law table has {got} entries, expected {expected} for the given alphabets")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("p(y|x1={x1},x2={x2},s={s}) sums to {sum}, not 1 within 1e-12")]
    NonNormalized { x1: usize, x2: usize, s: usize, sum: f64 },
    #[error("law entry {value} at (x1={x1},x2={x2},s={s},y={y}) is outside [0,1]")]
    EntryOutOfRange { x1: usize, x2: usize, s: usize, y: usize, value: f64 },
    #[error("state map covers {got} states, chain has {expected}")]
    MissingState { expected: usize, got: usize },
    #[error("noise variance for state {state} is {value}, must be positive")]
    NonPositiveVariance { state: usize, value: f64 },
    #[error("noise variance spread {ratio:.3e} exceeds 1e12, ill-conditioned")]
    IllConditioned { ratio: f64 },
    #[error("power budget {value} must be finite and nonnegative")]
    BadBudget { value: f64 },
    #[error(transparent)]
    Chain(#[from] MarkovError),
}

/// Finite-alphabet state-dependent MAC law, `law[x1][x2][s][y]`.
#[derive(Debug, Clone)]
pub struct DiscreteStateMac {
    nx1: usize,
    nx2: usize,
    k: usize,
    ny: usize,
    law: Vec<f64>,
}

impl DiscreteStateMac {
    /// Validate a flat `p(y|x1,x2,s)` table indexed `[x1][x2][s][y]`.
    pub fn new(
        nx1: usize,
        nx2: usize,
        k: usize,
        ny: usize,
        law: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        let expected = nx1 * nx2 * k * ny;
        if law.len() != expected || nx1 == 0 || nx2 == 0 || k == 0 || ny == 0 {
            return Err(ChannelError::ShapeMismatch {
                expected,
                got: law.len(),
            });
        }
        for x1 in 0..nx1 {
            for x2 in 0..nx2 {
                for s in 0..k {
                    let base = ((x1 * nx2 + x2) * k + s) * ny;
                    let mut sum = 0.0;
                    for y in 0..ny {
                        let v = law[base + y];
                        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                            return Err(ChannelError::EntryOutOfRange { x1, x2, s, y, value: v });
                        }
                        sum += v;
                    }
                    if (sum - 1.0).abs() > 1e-12 {
                        return Err(ChannelError::NonNormalized { x1, x2, s, sum });
                    }
                }
            }
        }
        Ok(Self {
            nx1,
            nx2,
            k,
            ny,
            law,
        })
    }

    /// Binary MAC `Y = X1 ⊕ X2 ⊕ N_s` where `N_s ~ Bernoulli(flips[s])`.
    pub fn xor_bsc(flips: &[f64]) -> Result<Self, ChannelError> {
        let k = flips.len();
        let mut law = vec![0.0; 2 * 2 * k * 2];
        for x1 in 0..2usize {
            for x2 in 0..2usize {
                for (s, &p) in flips.iter().enumerate() {
                    let clean = x1 ^ x2;
                    let base = ((x1 * 2 + x2) * k + s) * 2;
                    law[base + clean] = 1.0 - p;
                    law[base + (clean ^ 1)] = p;
                }
            }
        }
        Self::new(2, 2, k, 2, law)
    }

    pub fn nx1(&self) -> usize {
        self.nx1
    }

    pub fn nx2(&self) -> usize {
        self.nx2
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn prob(&self, y: usize, x1: usize, x2: usize, s: usize) -> f64 {
        self.law[((x1 * self.nx2 + x2) * self.k + s) * self.ny + y]
    }
}

/// State-dependent Gaussian MAC `Y = h1(s)X1 + h2(s)X2 + N_s`,
/// `N_s ~ N(0, σ_s²)`, with average power budgets on both senders.
#[derive(Debug, Clone)]
pub struct GaussianStateMac {
    sigma2: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    budget1: f64,
    budget2: f64,
}

impl GaussianStateMac {
    pub fn new(
        k: usize,
        sigma2: Vec<f64>,
        h1: Vec<f64>,
        h2: Vec<f64>,
        budget1: f64,
        budget2: f64,
    ) -> Result<Self, ChannelError> {
        for v in [&sigma2, &h1, &h2] {
            if v.len() != k {
                return Err(ChannelError::MissingState {
                    expected: k,
                    got: v.len(),
                });
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (state, &v) in sigma2.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ChannelError::NonPositiveVariance { state, value: v });
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi / lo > 1e12 {
            return Err(ChannelError::IllConditioned { ratio: hi / lo });
        }
        for &p in [budget1, budget2].iter() {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(ChannelError::BadBudget { value: p });
            }
        }
        Ok(Self {
            sigma2,
            h1,
            h2,
            budget1,
            budget2,
        })
    }

    /// Pure AGN model (all gains 1).
    pub fn agn(k: usize, sigma2: Vec<f64>, budget1: f64, budget2: f64) -> Result<Self, ChannelError> {
        Self::new(k, sigma2, vec![1.0; k], vec![1.0; k], budget1, budget2)
    }

    pub fn k(&self) -> usize {
        self.sigma2.len()
    }

    pub fn sigma2(&self, s: usize) -> f64 {
        self.sigma2[s]
    }

    pub fn h1(&self, s: usize) -> f64 {
        self.h1[s]
    }

    pub fn h2(&self, s: usize) -> f64 {
        self.h2[s]
    }

    pub fn budget1(&self) -> f64 {
        self.budget1
    }

    pub fn budget2(&self) -> f64 {
        self.budget2
    }
}

/// The two-state AGN configuration: Markov chain with `g = P(G|B)`,
/// `b = P(B|G)` and noise variances `σ_G², σ_B²` under unit gains.
pub fn build_two_state_agn(
    g: f64,
    b: f64,
    sigma_g2: f64,
    sigma_b2: f64,
    p1: f64,
    p2: f64,
) -> Result<(MarkovChain, GaussianStateMac), ChannelError> {
    let chain = MarkovChain::two_state(g, b)?;
    let model = GaussianStateMac::agn(2, vec![sigma_g2, sigma_b2], p1, p2)?;
    Ok((chain, model))
}

/// The two-state switch channel: user 1 is heard only in state G, user 2
/// only in state B.
pub fn build_switch_channel(
    g: f64,
    b: f64,
    sigma_g2: f64,
    sigma_b2: f64,
    p1: f64,
    p2: f64,
) -> Result<(MarkovChain, GaussianStateMac), ChannelError> {
    let chain = MarkovChain::two_state(g, b)?;
    let model = GaussianStateMac::new(
        2,
        vec![sigma_g2, sigma_b2],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        p1,
        p2,
    )?;
    Ok((chain, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_bsc_is_normalized_and_deterministic_at_zero_flip() {
        let ch = DiscreteStateMac::xor_bsc(&[0.0, 0.4]).unwrap();
        assert_eq!(ch.prob(1, 1, 0, 0), 1.0);
        assert_eq!(ch.prob(0, 1, 0, 0), 0.0);
        assert!((ch.prob(0, 1, 0, 1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn non_normalized_row_is_rejected() {
        let mut law = vec![0.5; 2 * 2 * 1 * 2];
        law[0] = 0.49;
        let err = DiscreteStateMac::new(2, 2, 1, 2, law).unwrap_err();
        assert!(matches!(err, ChannelError::NonNormalized { .. }));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = DiscreteStateMac::new(2, 2, 2, 2, vec![0.5; 8]).unwrap_err();
        assert!(matches!(err, ChannelError::ShapeMismatch { .. }));
    }

    #[test]
    fn two_state_agn_carries_fig3_chain() {
        let (chain, model) = build_two_state_agn(0.1, 0.3, 1.0, 100.0, 10.0, 10.0).unwrap();
        assert!((chain.stationary()[0] - 0.25).abs() < 1e-12);
        assert_eq!(model.sigma2(1), 100.0);
        assert_eq!(model.h1(0), 1.0);
    }

    #[test]
    fn switch_channel_gains() {
        let (_, model) = build_switch_channel(0.1, 0.1, 1.0, 10.0, 10.0, 10.0).unwrap();
        assert_eq!((model.h1(0), model.h1(1)), (1.0, 0.0));
        assert_eq!((model.h2(0), model.h2(1)), (0.0, 1.0));
    }

    #[test]
    fn gaussian_rejects_bad_variance_and_spread() {
        assert!(matches!(
            GaussianStateMac::agn(2, vec![1.0, 0.0], 1.0, 1.0),
            Err(ChannelError::NonPositiveVariance { .. })
        ));
        assert!(matches!(
            GaussianStateMac::agn(2, vec![1.0, 1e13], 1.0, 1.0),
            Err(ChannelError::IllConditioned { .. })
        ));
        assert!(matches!(
            GaussianStateMac::new(2, vec![1.0, 2.0], vec![1.0], vec![1.0, 1.0], 1.0, 1.0),
            Err(ChannelError::MissingState { .. })
        ));
    }
}
