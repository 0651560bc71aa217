//! Directed information and causal conditioning at desk scale.
//!
//! The multi-letter region at horizon n bounds the rates by
//!
//! ```text
//! R1    <= (1/n) I(X1^n -> Y^n,S^n || X2^n)
//! R2    <= (1/n) I(X2^n -> Y^n,S^n || X1^n)
//! R1+R2 <= (1/n) I((X1,X2)^n -> Y^n,S^n)
//! ```
//!
//! with `I(X^n -> W^n) = Σ_i I(X^i; W_i | W^{i-1})`. This module evaluates
//! those quantities exactly for given causally conditioned input laws and
//! embeds single-letter policies into them; it deliberately does not
//! optimize over causal laws (the multi-letter region is used here as a
//! cross-validation oracle, not a search space).

use crate::channel::DiscreteStateMac;
use crate::inforate::{InputPolicy, RateTriple};
use crate::markov::{Delay, DelayProfile, MarkovChain};
use crate::tensor::JointTable;
use thiserror::Error;

/// Hard cap on sequence-joint cells (memory and runtime guard).
const CELL_BUDGET: usize = 1 << 22;

#[derive(Debug, Error)]
pub enum MultiletterError {
    #[error("sequence joint would need {cells} cells, budget is {budget}")]
    BudgetExceeded { cells: u128, budget: usize },
    #[error("sequence joint sums to {sum}, not 1 within 1e-9")]
    NonNormalized { sum: f64 },
    #[error("causal law step {step} slice {slice} sums to {sum}")]
    NonNormalizedLaw { step: usize, slice: usize, sum: f64 },
    #[error("embedding requires a product policy (|U| = 1), got |U| = {nu}")]
    NeedsProductPolicy { nu: usize },
    #[error("shape mismatch: {what}")]
    ShapeMismatch { what: String },
}

/// Causally conditioned input law `P(x_i | x^{i-1}, s^{i-d})` for
/// `i = 1..n`; before the delay window opens the state condition is empty.
#[derive(Debug, Clone)]
pub struct CausalLaw {
    pub n: usize,
    pub delay: Delay,
    pub k: usize,
    pub nx: usize,
    /// `steps[i-1]` is indexed `[x-prefix][s-prefix(visible)] -> pmf over x`,
    /// both prefixes mixed-radix with the earliest symbol most significant.
    steps: Vec<Vec<f64>>,
}

impl CausalLaw {
    pub fn new(
        n: usize,
        delay: Delay,
        k: usize,
        nx: usize,
        steps: Vec<Vec<f64>>,
    ) -> Result<Self, MultiletterError> {
        let law = Self {
            n,
            delay,
            k,
            nx,
            steps,
        };
        law.validate()?;
        Ok(law)
    }

    fn visible(&self, t: usize) -> usize {
        match self.delay {
            Delay::Infinite => 0,
            Delay::Finite(d) => t.saturating_sub(d as usize),
        }
    }

    fn validate(&self) -> Result<(), MultiletterError> {
        if self.steps.len() != self.n {
            return Err(MultiletterError::ShapeMismatch {
                what: format!("{} step tables for horizon {}", self.steps.len(), self.n),
            });
        }
        for t in 1..=self.n {
            let slices = self.nx.pow((t - 1) as u32) * self.k.pow(self.visible(t) as u32);
            let table = &self.steps[t - 1];
            if table.len() != slices * self.nx {
                return Err(MultiletterError::ShapeMismatch {
                    what: format!("step {t}: len {} vs {}", table.len(), slices * self.nx),
                });
            }
            for (slice, chunk) in table.chunks(self.nx).enumerate() {
                let sum: f64 = chunk.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(MultiletterError::NonNormalizedLaw {
                        step: t,
                        slice,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    /// `P(x_t | x^{t-1}, s^{t-d})`; `x_prefix` and `s_prefix` are the full
    /// histories, of which the visible part of `s_prefix` is used.
    pub fn prob(&self, t: usize, x_prefix: &[usize], s_prefix: &[usize], x: usize) -> f64 {
        let vis = self.visible(t);
        let mut idx = 0usize;
        for &xp in &x_prefix[..t - 1] {
            idx = idx * self.nx + xp;
        }
        for &sp in &s_prefix[..vis] {
            idx = idx * self.k + sp;
        }
        self.steps[t - 1][idx * self.nx + x]
    }
}

/// Embed a single-letter product policy into causally conditioned laws per
/// the multiplexing construction: once `s_{i-d}` is visible the per-symbol
/// law conditions on it; before that the policy's marginal input law is
/// used (the first symbols carry no state argument).
pub fn embed_policy(
    chain: &MarkovChain,
    delays: DelayProfile,
    policy: &InputPolicy,
    n: usize,
) -> Result<(CausalLaw, CausalLaw), MultiletterError> {
    if policy.nu != 1 {
        return Err(MultiletterError::NeedsProductPolicy { nu: policy.nu });
    }
    let k = chain.k();
    let expected_k1 = if delays.d1().is_infinite() { 1 } else { k };
    if policy.k1 != expected_k1 || policy.k != k {
        return Err(MultiletterError::ShapeMismatch {
            what: format!(
                "policy (k1={}, k={}) vs chain k={k} with d1={:?}",
                policy.k1,
                policy.k,
                delays.d1()
            ),
        });
    }
    let dj = chain.delayed_joint(delays);

    // Encoder 1: P(x1 | s_{t-d1}), marginalized before the window opens.
    let s1_marginal = dj.s1_marginal();
    let marginal1: Vec<f64> = (0..policy.nx1)
        .map(|x| {
            (0..policy.k1)
                .map(|a| s1_marginal[a] * policy.px1(a, 0, x))
                .sum()
        })
        .collect();
    let law1 = build_law(n, delays.d1(), k, policy.nx1, |t, s_prefix, x| {
        let vis = match delays.d1() {
            Delay::Infinite => 0,
            Delay::Finite(d) => t.saturating_sub(d as usize),
        };
        if vis >= 1 {
            policy.px1(s_prefix[vis - 1], 0, x)
        } else if delays.d1().is_infinite() {
            policy.px1(0, 0, x)
        } else {
            marginal1[x]
        }
    });

    // Encoder 2: P(x2 | s_{t-d1}, s_{t-d2}); when only s_{t-d2} is visible
    // the s̃1 coordinate is averaged against its conditional law, and before
    // that the full marginal is used.
    let pair = |a: usize, b: usize| dj.pair_weight(a, b);
    let marginal2: Vec<f64> = (0..policy.nx2)
        .map(|x| {
            (0..policy.k1)
                .flat_map(|a| (0..k).map(move |b| (a, b)))
                .map(|(a, b)| pair(a, b) * policy.px2(a, b, 0, x))
                .sum()
        })
        .collect();
    let d1 = delays.d1();
    let d2 = delays.d2() as usize;
    let law2 = build_law(n, Delay::Finite(delays.d2()), k, policy.nx2, |t, s_prefix, x| {
        let vis2 = t.saturating_sub(d2);
        if vis2 == 0 {
            return marginal2[x];
        }
        let s2t = s_prefix[vis2 - 1];
        let vis1 = match d1 {
            Delay::Infinite => 0,
            Delay::Finite(d) => t.saturating_sub(d as usize),
        };
        if let Delay::Infinite = d1 {
            return policy.px2(0, s2t, 0, x);
        }
        if vis1 >= 1 {
            policy.px2(s_prefix[vis1 - 1], s2t, 0, x)
        } else {
            // s̃1 not yet visible: average it against P(s̃1 | s̃2).
            let mass: f64 = (0..policy.k1).map(|a| pair(a, s2t)).sum();
            (0..policy.k1)
                .map(|a| pair(a, s2t) / mass * policy.px2(a, s2t, 0, x))
                .sum()
        }
    });
    Ok((law1?, law2?))
}

fn build_law(
    n: usize,
    delay: Delay,
    k: usize,
    nx: usize,
    law: impl Fn(usize, &[usize], usize) -> f64,
) -> Result<CausalLaw, MultiletterError> {
    let mut steps = Vec::with_capacity(n);
    for t in 1..=n {
        let vis = match delay {
            Delay::Infinite => 0,
            Delay::Finite(d) => t.saturating_sub(d as usize),
        };
        let x_slices = nx.pow((t - 1) as u32);
        let s_slices = k.pow(vis as u32);
        let mut table = vec![0.0; x_slices * s_slices * nx];
        let mut s_prefix = vec![0usize; vis];
        for xs in 0..x_slices {
            for ss in 0..s_slices {
                let mut rem = ss;
                for pos in (0..vis).rev() {
                    s_prefix[pos] = rem % k;
                    rem /= k;
                }
                for x in 0..nx {
                    table[(xs * s_slices + ss) * nx + x] = law(t, &s_prefix, x);
                }
            }
        }
        steps.push(table);
    }
    CausalLaw::new(n, delay, k, nx, steps)
}

/// Joint pmf over three sequence tracks `(X1^n, X2^n, W^n)`; for state
/// channels the output track folds `(Y, S)` into one symbol. Single-input
/// directed information uses `nx2 = 1`.
#[derive(Debug, Clone)]
pub struct SequenceJoint {
    n: usize,
    nx1: usize,
    nx2: usize,
    nw: usize,
    table: JointTable,
}

impl SequenceJoint {
    pub fn new(
        n: usize,
        nx1: usize,
        nx2: usize,
        nw: usize,
        data: Vec<f64>,
    ) -> Result<Self, MultiletterError> {
        let cells = (nx1 as u128 * nx2 as u128 * nw as u128).pow(n as u32);
        if cells > CELL_BUDGET as u128 {
            return Err(MultiletterError::BudgetExceeded {
                cells,
                budget: CELL_BUDGET,
            });
        }
        if data.len() as u128 != cells {
            return Err(MultiletterError::ShapeMismatch {
                what: format!("{} cells vs expected {}", data.len(), cells),
            });
        }
        let mut dims = Vec::with_capacity(3 * n);
        dims.extend(std::iter::repeat(nx1).take(n));
        dims.extend(std::iter::repeat(nx2).take(n));
        dims.extend(std::iter::repeat(nw).take(n));
        let table = JointTable::new(dims, data);
        let sum = table.total();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MultiletterError::NonNormalized { sum });
        }
        Ok(Self {
            n,
            nx1,
            nx2,
            nw,
            table,
        })
    }

    fn keep_mask(&self, x1_up_to: usize, x2_up_to: usize, w_up_to: usize) -> Vec<bool> {
        let mut keep = vec![false; 3 * self.n];
        for t in 0..x1_up_to {
            keep[t] = true;
        }
        for t in 0..x2_up_to {
            keep[self.n + t] = true;
        }
        for t in 0..w_up_to {
            keep[2 * self.n + t] = true;
        }
        keep
    }

    fn h(&self, x1_up_to: usize, x2_up_to: usize, w_up_to: usize) -> f64 {
        self.table
            .marginal_entropy_bits(&self.keep_mask(x1_up_to, x2_up_to, w_up_to))
    }

    /// `I((X1,X2)^n -> W^n) = Σ_i I(X1^i, X2^i; W_i | W^{i-1})`, in bits.
    pub fn directed_info_inputs(&self) -> f64 {
        (1..=self.n)
            .map(|i| self.h(0, 0, i) - self.h(0, 0, i - 1) - self.h(i, i, i) + self.h(i, i, i - 1))
            .sum()
    }

    /// `I(X1^n -> W^n || X2^n) = Σ_i I(X1^i; W_i | W^{i-1}, X2^i)`.
    pub fn directed_info_1_given_2(&self) -> f64 {
        (1..=self.n)
            .map(|i| self.h(0, i, i) - self.h(0, i, i - 1) - self.h(i, i, i) + self.h(i, i, i - 1))
            .sum()
    }

    /// `I(X2^n -> W^n || X1^n)`.
    pub fn directed_info_2_given_1(&self) -> f64 {
        (1..=self.n)
            .map(|i| self.h(i, 0, i) - self.h(i, 0, i - 1) - self.h(i, i, i) + self.h(i, i, i - 1))
            .sum()
    }

    /// The expectation-of-log-ratio form `E[log P(W^n||X^n) / P(W^n)]`,
    /// evaluated cell by cell against the causal-conditional marginals.
    /// Independent route for cross-checking `directed_info_inputs`.
    pub fn log_ratio_form_inputs(&self) -> f64 {
        let mut numer_marg = Vec::with_capacity(self.n + 1);
        let mut denom_marg = Vec::with_capacity(self.n + 1);
        let mut w_marg = Vec::with_capacity(self.n + 1);
        for i in 0..=self.n {
            numer_marg.push(self.table.marginal(&self.keep_mask(i, i, i)));
            if i < self.n {
                denom_marg.push(self.table.marginal(&self.keep_mask(i + 1, i + 1, i)));
            }
            w_marg.push(self.table.marginal(&self.keep_mask(0, 0, i)));
        }
        // Index of the (x^i, w^j) projection inside the marginal layout.
        let project = |cell: &[usize], x_up: usize, w_up: usize| -> usize {
            let mut idx = 0usize;
            for t in 0..x_up {
                idx = idx * self.nx1 + cell[t];
            }
            for t in 0..x_up {
                idx = idx * self.nx2 + cell[self.n + t];
            }
            for t in 0..w_up {
                idx = idx * self.nw + cell[2 * self.n + t];
            }
            idx
        };
        let project_w = |cell: &[usize], w_up: usize| -> usize {
            let mut idx = 0usize;
            for t in 0..w_up {
                idx = idx * self.nw + cell[2 * self.n + t];
            }
            idx
        };
        let dims = self.table.dims().to_vec();
        let mut cell = vec![0usize; dims.len()];
        let mut acc = 0.0;
        for (flat, &p) in self.table.data().iter().enumerate() {
            if p > 0.0 {
                let mut log_causal = 0.0;
                for i in 1..=self.n {
                    // P(w_i | w^{i-1}, x^i) = m(x^i, w^i) / m(x^i, w^{i-1})
                    let num = numer_marg[i][project(&cell, i, i)];
                    let den = denom_marg[i - 1][project(&cell, i, i - 1)];
                    log_causal += (num / den).ln();
                }
                let log_output = w_marg[self.n][project_w(&cell, self.n)].ln();
                acc += p * (log_causal - log_output);
            }
            if flat + 1 == self.table.len() {
                break;
            }
            let mut ax = dims.len() - 1;
            loop {
                cell[ax] += 1;
                if cell[ax] < dims[ax] {
                    break;
                }
                cell[ax] = 0;
                ax -= 1;
            }
        }
        acc / std::f64::consts::LN_2
    }
}

/// Build the full sequence joint for the stationary-start state channel and
/// evaluate the three multi-letter bounds, per symbol (divided by n).
pub fn rn_point(
    chain: &MarkovChain,
    delays: DelayProfile,
    ch: &DiscreteStateMac,
    law1: &CausalLaw,
    law2: &CausalLaw,
    n: usize,
) -> Result<RateTriple, MultiletterError> {
    let k = chain.k();
    if ch.k() != k {
        return Err(MultiletterError::ShapeMismatch {
            what: format!("channel has {} states, chain has {k}", ch.k()),
        });
    }
    if law1.n < n || law2.n < n {
        return Err(MultiletterError::ShapeMismatch {
            what: format!("laws cover horizons {}/{} < n={n}", law1.n, law2.n),
        });
    }
    if law1.delay != delays.d1() || law2.delay != Delay::Finite(delays.d2()) {
        return Err(MultiletterError::ShapeMismatch {
            what: format!(
                "law delays ({:?}, {:?}) vs profile ({:?}, {})",
                law1.delay,
                law2.delay,
                delays.d1(),
                delays.d2()
            ),
        });
    }
    let (nx1, nx2, ny) = (ch.nx1(), ch.nx2(), ch.ny());
    let nw = k * ny;
    let cells = (nx1 as u128 * nx2 as u128 * nw as u128).pow(n as u32);
    if cells > CELL_BUDGET as u128 {
        return Err(MultiletterError::BudgetExceeded {
            cells,
            budget: CELL_BUDGET,
        });
    }
    let pi = chain.stationary();
    let mut data = vec![0.0f64; cells as usize];
    let mut x1s = vec![0usize; n];
    let mut x2s = vec![0usize; n];
    let mut ws = vec![0usize; n];
    let mut ss = vec![0usize; n];
    let mut ys = vec![0usize; n];
    for (flat, slot) in data.iter_mut().enumerate() {
        // Decode the cell (x1 track, x2 track, w track), w = s*ny + y.
        let mut rem = flat;
        for t in (0..n).rev() {
            ws[t] = rem % nw;
            rem /= nw;
        }
        for t in (0..n).rev() {
            x2s[t] = rem % nx2;
            rem /= nx2;
        }
        for t in (0..n).rev() {
            x1s[t] = rem % nx1;
            rem /= nx1;
        }
        for t in 0..n {
            ss[t] = ws[t] / ny;
            ys[t] = ws[t] % ny;
        }
        let mut p = 1.0;
        for t in 1..=n {
            let s = ss[t - 1];
            p *= if t == 1 {
                pi[s]
            } else {
                chain.step_prob(ss[t - 2], s)
            };
            if p == 0.0 {
                break;
            }
            p *= law1.prob(t, &x1s, &ss, x1s[t - 1]);
            p *= law2.prob(t, &x2s, &ss, x2s[t - 1]);
            p *= ch.prob(ys[t - 1], x1s[t - 1], x2s[t - 1], s);
            if p == 0.0 {
                break;
            }
        }
        *slot = p;
    }
    let joint = SequenceJoint::new(n, nx1, nx2, nw, data)?;
    let per = 1.0 / n as f64;
    let clip = |v: f64| if v < 0.0 && v > -1e-9 { 0.0 } else { v };
    Ok(RateTriple {
        r1: clip(per * joint.directed_info_1_given_2()),
        r2: clip(per * joint.directed_info_2_given_1()),
        rsum: clip(per * joint.directed_info_inputs()),
    })
}
