//! Capacity regions and optimal power control for finite-state Markov
//! multiple-access channels with delayed channel-state information at the
//! transmitters.
//!
//! The channel state follows an ergodic finite-state Markov chain, the
//! receiver sees the state instantly, and the two encoders see it after
//! `d1` and `d2` symbols (`d1 >= d2`, possibly `d1 = ∞`). The single-letter
//! rate region depends on the state process only through the stationary
//! joint of `(S̃1, S̃2, S) = (S_{-d1}, S_{-d2}, S)`.
//!
//! Module map:
//! * [`markov`] — chain validation, stationary law, d-step powers, the
//!   two-state closed form, delayed-state joints;
//! * [`channel`] — discrete per-state MAC laws and the Gaussian/fading family;
//! * [`inforate`] — exact conditional mutual-information rate bounds for a
//!   fixed input policy;
//! * [`region`] — discrete rate-region frontier via weighted-sum policy
//!   optimization, with a grid-search oracle;
//! * [`gaussian`] — closed-form Gaussian/fading rates, KKT-certified power
//!   control, delay sweeps;
//! * [`multiletter`] — causal conditioning and directed information at small
//!   horizons, used to cross-check the single-letter formulas;
//! * [`simulate`] — Monte Carlo checks of the multiplexing scheme's
//!   occupancy statistics and plug-in rate estimates.
//!
//! All rates are in bits per symbol.

pub mod channel;
pub mod gaussian;
pub mod inforate;
pub mod markov;
pub mod multiletter;
pub mod region;
pub mod simulate;
pub mod tensor;

/// A point of the rate region, in bits/symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub r1: f64,
    pub r2: f64,
}

impl RatePoint {
    pub const ORIGIN: RatePoint = RatePoint { r1: 0.0, r2: 0.0 };

    /// Support value in direction `(w1, w2)`.
    pub fn weighted(&self, w1: f64, w2: f64) -> f64 {
        w1 * self.r1 + w2 * self.r2
    }

    pub fn dominates(&self, other: &RatePoint, tol: f64) -> bool {
        self.r1 >= other.r1 - tol && self.r2 >= other.r2 - tol
    }
}
