//! Finite-state Markov chain machinery: validation, stationary law, d-step
//! transition powers, the two-state closed form, and the delayed-state joint
//! laws every rate formula is built on.
//!
//! Conventions, fixed once so transposition bugs cannot leak into call sites:
//!
//! * `K` is **row-stochastic**: `K[from][to] = P(next = to | current = from)`.
//! * All accessors take `(from, to)` arguments.
//! * The two-state chain orders its states `[G, B]` with `g = P(G|B)` and
//!   `b = P(B|G)`, so `K = [[1-b, b], [g, 1-g]]` and the stationary law is
//!   `π = (g/(g+b), b/(g+b))`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("transition matrix must be square and non-empty, got {rows} rows")]
    NotSquare { rows: usize },
    #[error("entry K[{from}][{to}] = {value} is outside [0, 1]")]
    EntryOutOfRange { from: usize, to: usize, value: f64 },
    #[error("row {row} sums to {sum}, which is off by more than 1e-9")]
    NonStochastic { row: usize, sum: f64 },
    #[error("chain is not ergodic (reducible or periodic)")]
    NotErgodic,
    #[error("stationary probability of state {state} is {value} <= 1e-15")]
    ZeroStationaryMass { state: usize, value: f64 },
    #[error("two-state parameters g={g}, b={b} do not give an ergodic chain")]
    DegenerateChain { g: f64, b: f64 },
    #[error("delays must satisfy d2 <= d1, got d1={d1:?}, d2={d2}")]
    DelayOrder { d1: Delay, d2: u32 },
    #[error("expected {expected} states, got {got}")]
    StateCountMismatch { expected: usize, got: usize },
}

/// Small dense square matrix, row-major. Enough linear algebra for chains of
/// desk-scale size; no external solver needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MarkovError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(MarkovError::NotSquare { rows: n });
        }
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self {
            n,
            data: vec![0.0; n * n],
        };
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    #[inline]
    pub fn set(&mut self, from: usize, to: usize, value: f64) {
        self.data[from * self.n + to] = value;
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self {
            n,
            data: vec![0.0; n * n],
        };
        for i in 0..n {
            for l in 0..n {
                let a = self.data[i * n + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[l * n + j];
                }
            }
        }
        out
    }

    /// Matrix power by repeated squaring.
    pub fn pow(&self, mut d: u32) -> Self {
        let mut result = Self::identity(self.n);
        let mut base = self.clone();
        while d > 0 {
            if d & 1 == 1 {
                result = result.mul(&base);
            }
            d >>= 1;
            if d > 0 {
                base = base.mul(&base);
            }
        }
        result
    }
}

/// CSI delay of one encoder. `Infinite` is structural (the one-encoder case
/// of the rate region), not a large number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delay {
    Finite(u32),
    Infinite,
}

impl Delay {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Delay::Infinite)
    }
}

/// Pair of CSI delays with the ordering `d1 >= d2` (`Infinite` dominates).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayProfile {
    d1: Delay,
    d2: u32,
}

impl DelayProfile {
    pub fn new(d1: Delay, d2: u32) -> Result<Self, MarkovError> {
        if let Delay::Finite(d1v) = d1 {
            if d2 > d1v {
                return Err(MarkovError::DelayOrder { d1, d2 });
            }
        }
        Ok(Self { d1, d2 })
    }

    pub fn finite(d1: u32, d2: u32) -> Result<Self, MarkovError> {
        Self::new(Delay::Finite(d1), d2)
    }

    pub fn symmetric(d: u32) -> Self {
        Self {
            d1: Delay::Finite(d),
            d2: d,
        }
    }

    pub fn one_encoder(d2: u32) -> Self {
        Self {
            d1: Delay::Infinite,
            d2,
        }
    }

    pub fn d1(&self) -> Delay {
        self.d1
    }

    pub fn d2(&self) -> u32 {
        self.d2
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self.d1, Delay::Finite(v) if v == self.d2)
    }
}

/// Validated ergodic finite-state Markov chain with cached stationary law.
///
/// Immutable after construction; freely shareable across threads.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    states: Vec<String>,
    kmat: SquareMatrix,
    stationary: Vec<f64>,
}

impl MarkovChain {
    /// Validate a transition matrix and cache its stationary distribution.
    ///
    /// Rows must sum to 1 within 1e-9 (they are renormalized exactly), the
    /// chain must be irreducible and aperiodic, and every stationary
    /// probability must exceed 1e-15.
    pub fn validate(rows: &[Vec<f64>]) -> Result<Self, MarkovError> {
        let labels = (0..rows.len()).map(|i| format!("s{i}")).collect();
        Self::validate_labeled(labels, rows)
    }

    pub fn validate_labeled(states: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, MarkovError> {
        let mut kmat = SquareMatrix::from_rows(rows)?;
        let n = kmat.n();
        if states.len() != n {
            return Err(MarkovError::StateCountMismatch {
                expected: n,
                got: states.len(),
            });
        }
        for from in 0..n {
            let mut sum = 0.0;
            for to in 0..n {
                let v = kmat.get(from, to);
                if !(v >= -1e-12 && v <= 1.0 + 1e-12) || !v.is_finite() {
                    return Err(MarkovError::EntryOutOfRange { from, to, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MarkovError::NonStochastic { row: from, sum });
            }
            for to in 0..n {
                let v = (kmat.get(from, to) / sum).clamp(0.0, 1.0);
                kmat.set(from, to, v);
            }
        }
        if !is_ergodic(&kmat) {
            return Err(MarkovError::NotErgodic);
        }
        let stationary = solve_stationary(&kmat)?;
        Ok(Self {
            states,
            kmat,
            stationary,
        })
    }

    /// The two-state chain with `g = P(G|B)`, `b = P(B|G)`, states `[G, B]`.
    pub fn two_state(g: f64, b: f64) -> Result<Self, MarkovError> {
        if !(g > 0.0 && b > 0.0 && g + b < 2.0 && g <= 1.0 && b <= 1.0) {
            return Err(MarkovError::DegenerateChain { g, b });
        }
        Self::validate_labeled(
            vec!["G".into(), "B".into()],
            &[vec![1.0 - b, b], vec![g, 1.0 - g]],
        )
    }

    pub fn k(&self) -> usize {
        self.kmat.n()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn transition_matrix(&self) -> &SquareMatrix {
        &self.kmat
    }

    pub fn step_prob(&self, from: usize, to: usize) -> f64 {
        self.kmat.get(from, to)
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// `K^d` via repeated squaring; `d = 0` is the identity.
    pub fn d_step_matrix(&self, d: u32) -> SquareMatrix {
        self.kmat.pow(d)
    }

    /// Joint law of the delayed states and the current state,
    /// `P(s̃1, s̃2, s) = π(s̃1)·K^{d1-d2}(s̃1→s̃2)·K^{d2}(s̃2→s)`.
    pub fn delayed_joint(&self, delays: DelayProfile) -> DelayedJoint {
        let k = self.k();
        let kd2 = self.d_step_matrix(delays.d2());
        match delays.d1() {
            Delay::Finite(d1) => {
                let gap = self.d_step_matrix(d1 - delays.d2());
                let mut table = vec![0.0; k * k * k];
                for a in 0..k {
                    for b in 0..k {
                        let w = self.stationary[a] * gap.get(a, b);
                        for s in 0..k {
                            table[(a * k + b) * k + s] = w * kd2.get(b, s);
                        }
                    }
                }
                DelayedJoint { k1: k, k, table }
            }
            Delay::Infinite => {
                // One-encoder variant: s̃1 is dropped; the pair law P(s̃2, s)
                // sits on a singleton s̃1 axis.
                let mut table = vec![0.0; k * k];
                for b in 0..k {
                    for s in 0..k {
                        table[b * k + s] = self.stationary[b] * kd2.get(b, s);
                    }
                }
                DelayedJoint { k1: 1, k, table }
            }
        }
    }
}

/// Closed-form `K^d` of the two-state chain (states `[G, B]`):
///
/// ```text
/// K^d = [[1 - π_B·λ̄,  π_B·λ̄ ],
///        [    π_G·λ̄,  1 - π_G·λ̄]],   λ̄ = 1 - (1-g-b)^d
/// ```
///
/// Agrees entrywise with `d_step_matrix` of the corresponding chain to
/// machine precision.
pub fn two_state_d_step(g: f64, b: f64, d: u32) -> Result<SquareMatrix, MarkovError> {
    if !(g > 0.0 && b > 0.0 && g + b < 2.0 && g <= 1.0 && b <= 1.0) {
        return Err(MarkovError::DegenerateChain { g, b });
    }
    let pi_g = g / (g + b);
    let pi_b = b / (g + b);
    let mixed = 1.0 - (1.0 - g - b).powi(d as i32);
    SquareMatrix::from_rows(&[
        vec![1.0 - pi_b * mixed, pi_b * mixed],
        vec![pi_g * mixed, 1.0 - pi_g * mixed],
    ])
}

/// Stationary joint of `(S̃1, S̃2, S)`; `k1 = 1` when `d1` is infinite.
#[derive(Debug, Clone)]
pub struct DelayedJoint {
    k1: usize,
    k: usize,
    table: Vec<f64>,
}

impl DelayedJoint {
    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn prob(&self, s1t: usize, s2t: usize, s: usize) -> f64 {
        self.table[(s1t * self.k + s2t) * self.k + s]
    }

    /// Marginal weight of the delayed pair, `P(s̃1, s̃2)`.
    pub fn pair_weight(&self, s1t: usize, s2t: usize) -> f64 {
        (0..self.k).map(|s| self.prob(s1t, s2t, s)).sum()
    }

    /// Marginal of the first delayed state (π when `d1` is finite).
    pub fn s1_marginal(&self) -> Vec<f64> {
        (0..self.k1)
            .map(|a| (0..self.k).map(|b| self.pair_weight(a, b)).sum())
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.table.iter().sum()
    }
}

fn is_ergodic(kmat: &SquareMatrix) -> bool {
    let n = kmat.n();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| kmat.get(i, j) > 0.0).collect())
        .collect();
    // Irreducibility: state 0 reaches everything and everything reaches it.
    let forward = reachable(&adj, false);
    let backward = reachable(&adj, true);
    if forward.iter().any(|&r| !r) || backward.iter().any(|&r| !r) {
        return false;
    }
    // Aperiodicity: gcd of return times of state 0. A horizon of 3k covers
    // reaching any simple cycle, traversing it, and coming back, which pins
    // the gcd to the true period.
    let mut exact = vec![false; n];
    exact[0] = true;
    let mut g = 0u64;
    for _t in 1..=(3 * n) {
        let mut next = vec![false; n];
        for (i, &on) in exact.iter().enumerate() {
            if !on {
                continue;
            }
            for (j, slot) in next.iter_mut().enumerate() {
                if adj[i][j] {
                    *slot = true;
                }
            }
        }
        exact = next;
        if exact[0] {
            g = gcd(g, _t as u64);
            if g == 1 {
                return true;
            }
        }
    }
    g == 1
}

fn reachable(adj: &[Vec<bool>], transpose: bool) -> Vec<bool> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            let edge = if transpose { adj[j][i] } else { adj[i][j] };
            if edge && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

fn gcd(a: u64, b: u64) -> u64 {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}

/// Solve `πK = π`, `Σπ = 1` by Gaussian elimination on `(K^T - I)` stacked
/// with the normalization row. Exact and deterministic for desk-scale k.
fn solve_stationary(kmat: &SquareMatrix) -> Result<Vec<f64>, MarkovError> {
    let n = kmat.n();
    let rows = n + 1;
    let mut a = vec![0.0f64; rows * n];
    let mut rhs = vec![0.0f64; rows];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = kmat.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[n * n + j] = 1.0;
    }
    rhs[n] = 1.0;

    let mut row_of_pivot = Vec::with_capacity(n);
    let mut used = vec![false; rows];
    for col in 0..n {
        // Partial pivot among unused rows.
        let mut best = None;
        let mut best_abs = 0.0;
        for (r, &u) in used.iter().enumerate() {
            if !u && a[r * n + col].abs() > best_abs {
                best_abs = a[r * n + col].abs();
                best = Some(r);
            }
        }
        let piv = best.ok_or(MarkovError::NotErgodic)?;
        used[piv] = true;
        row_of_pivot.push(piv);
        let pivot = a[piv * n + col];
        for r in 0..rows {
            if used[r] && r != piv {
                continue;
            }
            if r == piv {
                continue;
            }
            let factor = a[r * n + col] / pivot;
            if factor != 0.0 {
                for j in col..n {
                    a[r * n + j] -= factor * a[piv * n + j];
                }
                rhs[r] -= factor * rhs[piv];
            }
        }
    }
    let mut pi = vec![0.0f64; n];
    for col in (0..n).rev() {
        let r = row_of_pivot[col];
        let mut acc = rhs[r];
        for j in col + 1..n {
            acc -= a[r * n + j] * pi[j];
        }
        pi[col] = acc / a[r * n + col];
    }
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
    }
    for (state, &v) in pi.iter().enumerate() {
        if v <= 1e-15 {
            return Err(MarkovError::ZeroStationaryMass { state, value: v });
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_gb(g: f64, b: f64) -> MarkovChain {
        MarkovChain::two_state(g, b).unwrap()
    }

    #[test]
    fn symmetric_two_state_has_uniform_stationary() {
        let chain = chain_gb(0.1, 0.1);
        assert!((chain.stationary()[0] - 0.5).abs() < 1e-12);
        assert!((chain.stationary()[1] - 0.5).abs() < 1e-12);
        assert_eq!(chain.states(), ["G", "B"]);
        assert!((chain.step_prob(0, 0) - 0.9).abs() < 1e-15);
        assert!((chain.step_prob(0, 1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn stationary_matches_g_over_g_plus_b() {
        // g = 0.1, b = 0.3 -> π = (0.25, 0.75), K = [[0.7, 0.3], [0.1, 0.9]]
        let chain = chain_gb(0.1, 0.3);
        assert!((chain.step_prob(0, 0) - 0.7).abs() < 1e-15);
        assert!((chain.step_prob(1, 0) - 0.1).abs() < 1e-15);
        assert!((chain.stationary()[0] - 0.25).abs() < 1e-12);
        assert!((chain.stationary()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn identity_matrix_is_rejected_as_not_ergodic() {
        let err = MarkovChain::validate(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, MarkovError::NotErgodic));
    }

    #[test]
    fn period_two_chain_is_rejected() {
        let err = MarkovChain::validate(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, MarkovError::NotErgodic));
    }

    #[test]
    fn bad_row_sum_is_rejected() {
        let err = MarkovChain::validate(&[vec![0.9, 0.2], vec![0.1, 0.9]]).unwrap_err();
        assert!(matches!(err, MarkovError::NonStochastic { row: 0, .. }));
    }

    #[test]
    fn d_step_zero_is_identity() {
        let chain = chain_gb(0.1, 0.1);
        let m = chain.d_step_matrix(0);
        assert_eq!(m, SquareMatrix::identity(2));
    }

    #[test]
    fn d_step_one_is_the_transition_matrix() {
        let chain = chain_gb(0.1, 0.1);
        let m = chain.d_step_matrix(1);
        assert!((m.get(0, 0) - 0.9).abs() < 1e-15);
        assert!((m.get(0, 1) - 0.1).abs() < 1e-15);
        assert!((m.get(1, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn d_step_200_mixes_to_stationary() {
        // Oracle: iterated plain multiplication, no squaring.
        let chain = chain_gb(0.1, 0.1);
        let mut iter = SquareMatrix::identity(2);
        for _ in 0..200 {
            iter = iter.mul(chain.transition_matrix());
        }
        let fast = chain.d_step_matrix(200);
        for i in 0..2 {
            for j in 0..2 {
                assert!((fast.get(i, j) - iter.get(i, j)).abs() < 1e-13);
                assert!((fast.get(i, j) - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn closed_form_matches_matrix_power() {
        let cases = [(0.1, 0.1), (0.2, 0.4), (0.05, 0.45), (0.9, 0.3)];
        for (g, b) in cases {
            let chain = chain_gb(g, b);
            for d in [0u32, 1, 2, 3, 7, 50, 200] {
                let closed = two_state_d_step(g, b, d).unwrap();
                let power = chain.d_step_matrix(d);
                for i in 0..2 {
                    for j in 0..2 {
                        assert!(
                            (closed.get(i, j) - power.get(i, j)).abs() < 1e-12,
                            "g={g} b={b} d={d} entry ({i},{j})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_rejects_degenerate_parameters() {
        assert!(matches!(
            two_state_d_step(0.0, 0.0, 3),
            Err(MarkovError::DegenerateChain { .. })
        ));
        assert!(matches!(
            two_state_d_step(1.0, 1.0, 3),
            Err(MarkovError::DegenerateChain { .. })
        ));
    }

    #[test]
    fn rows_of_powers_stay_stochastic_and_stationary_is_preserved() {
        let chain = chain_gb(0.3, 0.2);
        let pi = chain.stationary();
        for d in [0u32, 1, 5, 17, 100] {
            let m = chain.d_step_matrix(d);
            for i in 0..2 {
                let sum: f64 = m.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
            for j in 0..2 {
                let v: f64 = (0..2).map(|i| pi[i] * m.get(i, j)).sum();
                assert!((v - pi[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delayed_joint_zero_delay_is_diagonal() {
        let chain = chain_gb(0.1, 0.3);
        let dj = chain.delayed_joint(DelayProfile::finite(0, 0).unwrap());
        for a in 0..2 {
            for b in 0..2 {
                for s in 0..2 {
                    let want = if a == b && b == s {
                        chain.stationary()[s]
                    } else {
                        0.0
                    };
                    assert!((dj.prob(a, b, s) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn delayed_joint_matches_path_enumeration() {
        // Oracle: sum over full state paths of length d1 + 1.
        let chain = chain_gb(0.1, 0.1);
        let d1 = 2u32;
        let d2 = 1u32;
        let dj = chain.delayed_joint(DelayProfile::finite(d1, d2).unwrap());
        let k = chain.k();
        let mut oracle = vec![0.0f64; k * k * k];
        // Path (v0, v1, v2) with v0 = s̃1, v1 = s̃2 (gap 1), v2 = s (gap 1).
        for v0 in 0..k {
            for v1 in 0..k {
                for v2 in 0..k {
                    oracle[(v0 * k + v1) * k + v2] += chain.stationary()[v0]
                        * chain.step_prob(v0, v1)
                        * chain.step_prob(v1, v2);
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                for s in 0..k {
                    assert!((dj.prob(a, b, s) - oracle[(a * k + b) * k + s]).abs() < 1e-12);
                }
            }
        }
        assert!((dj.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delayed_joint_marginals_are_stationary() {
        let chain = chain_gb(0.2, 0.4);
        let dj = chain.delayed_joint(DelayProfile::finite(3, 1).unwrap());
        let pi = chain.stationary();
        let m1 = dj.s1_marginal();
        for (got, want) in m1.iter().zip(pi.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        // Summing out s̃1 and s̃2 must give π back (stationarity).
        for s in 0..2 {
            let mass: f64 = (0..2)
                .flat_map(|a| (0..2).map(move |b| (a, b)))
                .map(|(a, b)| dj.prob(a, b, s))
                .sum();
            assert!((mass - pi[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_d1_gives_singleton_first_axis() {
        let chain = chain_gb(0.1, 0.3);
        let dj = chain.delayed_joint(DelayProfile::one_encoder(1));
        assert_eq!(dj.k1(), 1);
        let pi = chain.stationary();
        for b in 0..2 {
            for s in 0..2 {
                let want = pi[b] * chain.step_prob(b, s);
                assert!((dj.prob(0, b, s) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn delay_profile_rejects_d2_greater_than_d1() {
        assert!(DelayProfile::finite(1, 2).is_err());
        assert!(DelayProfile::new(Delay::Infinite, 1_000_000).is_ok());
    }

    #[test]
    fn two_state_mixing_is_monotone_in_d() {
        // TV distance between the two rows of K^d is |1-g-b|^d.
        let (g, b) = (0.15, 0.25);
        let chain = chain_gb(g, b);
        let mut prev = f64::INFINITY;
        for d in 0..40 {
            let m = chain.d_step_matrix(d);
            let tv = 0.5 * ((m.get(0, 0) - m.get(1, 0)).abs() + (m.get(0, 1) - m.get(1, 1)).abs());
            let expect = (1.0 - g - b).abs().powi(d as i32);
            assert!((tv - expect).abs() < 1e-12);
            assert!(tv <= prev + 1e-15);
            prev = tv;
        }
    }
}
