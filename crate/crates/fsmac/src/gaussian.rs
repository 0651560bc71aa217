//! Closed-form rate evaluation and power-policy optimization for the
//! Gaussian/fading channel family.
//!
//! Every bound is a weighted sum of logs over the delayed-state joint,
//!
//! ```text
//! ½ Σ_{s̃1} π(s̃1) Σ_{s̃2} K^{d1-d2}(s̃1→s̃2) Σ_s K^{d2}(s̃2→s)
//!     log2(1 + SNR(s̃1, s̃2, s))
//! ```
//!
//! with SNR terms `h1²p1/σ²`, `h2²p2/σ²` and `(h1²p1 + h2²p2)/σ²` for the
//! three bounds. The objectives are concave in the power maps and the
//! constraints are affine, so projected gradient ascent with a weighted
//! simplex projection reaches the global optimum; every returned optimum is
//! certified by its Kuhn-Tucker residual.
//!
//! Three structural cases, mirroring the delay profile:
//! * asymmetric `d1 > d2`: `p1(s̃1)`, `p2(s̃1, s̃2)`;
//! * symmetric `d1 = d2`: `p1(s̃)`, `p2(s̃)`;
//! * one-encoder `d1 = ∞`: `p1` a single constant, `p2(s̃2)`.

use crate::channel::GaussianStateMac;
use crate::inforate::RateTriple;
use crate::markov::{Delay, DelayProfile, DelayedJoint, MarkovChain};
use crate::region::CornerId;
use crate::tensor::LN_2;
use crate::RatePoint;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("power policy shape does not match the delay case ({what})")]
    ShapeMismatch { what: String },
    #[error("optimizer did not reach KKT residual {target:.1e} in {iters} iterations (best {best:.3e})")]
    NonConvergence {
        target: f64,
        iters: usize,
        best: f64,
    },
    #[error("chain has {chain} states but the model has {model}")]
    StateMismatch { chain: usize, model: usize },
}

/// Structural delay case; fixes the shape of [`PowerPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayCase {
    Asymmetric,
    Symmetric,
    OneEncoder,
}

impl DelayCase {
    pub fn of(delays: DelayProfile) -> Self {
        match delays.d1() {
            Delay::Infinite => DelayCase::OneEncoder,
            Delay::Finite(d1) if d1 == delays.d2() => DelayCase::Symmetric,
            Delay::Finite(_) => DelayCase::Asymmetric,
        }
    }
}

/// Power allocation as a function of the transmitter's delayed state
/// knowledge.
///
/// * `Asymmetric`: `p1` has `k` entries (per s̃1), `p2` has `k·k` entries
///   (row-major per (s̃1, s̃2)).
/// * `Symmetric`: `p1`, `p2` have `k` entries (per s̃).
/// * `OneEncoder`: `p1` is a single constant, `p2` has `k` entries (per s̃2).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPolicy {
    pub case: DelayCase,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

impl PowerPolicy {
    /// Budget-filling constant policy, `p1 ≡ 𝒫1`, `p2 ≡ 𝒫2`.
    pub fn constant(case: DelayCase, k: usize, p1: f64, p2: f64) -> Self {
        let n1 = match case {
            DelayCase::OneEncoder => 1,
            _ => k,
        };
        let n2 = match case {
            DelayCase::Asymmetric => k * k,
            _ => k,
        };
        Self {
            case,
            p1: vec![p1; n1],
            p2: vec![p2; n2],
        }
    }

    fn check(&self, k: usize, delays: DelayProfile) -> Result<(), GaussianError> {
        let case = DelayCase::of(delays);
        if case != self.case {
            return Err(GaussianError::ShapeMismatch {
                what: format!("policy case {:?} vs delays case {:?}", self.case, case),
            });
        }
        let (n1, n2) = match case {
            DelayCase::Asymmetric => (k, k * k),
            DelayCase::Symmetric => (k, k),
            DelayCase::OneEncoder => (1, k),
        };
        if self.p1.len() != n1 || self.p2.len() != n2 {
            return Err(GaussianError::ShapeMismatch {
                what: format!(
                    "p1 len {} (want {n1}), p2 len {} (want {n2})",
                    self.p1.len(),
                    self.p2.len()
                ),
            });
        }
        if self.p1.iter().chain(&self.p2).any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(GaussianError::ShapeMismatch {
                what: "powers must be finite and nonnegative".into(),
            });
        }
        Ok(())
    }

    /// Power of encoder 1 given its delayed state.
    #[inline]
    pub fn power1(&self, s1t: usize) -> f64 {
        match self.case {
            DelayCase::OneEncoder => self.p1[0],
            _ => self.p1[s1t],
        }
    }

    /// Power of encoder 2 given the delayed pair (`k` = state count).
    #[inline]
    pub fn power2(&self, s1t: usize, s2t: usize, k: usize) -> f64 {
        match self.case {
            DelayCase::Asymmetric => self.p2[s1t * k + s2t],
            _ => self.p2[s2t],
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for &v in self.p1.iter().chain(&self.p2) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Exact evaluation of the three rate bounds for a fixed power policy.
pub fn gaussian_rate_triple(
    chain: &MarkovChain,
    delays: DelayProfile,
    model: &GaussianStateMac,
    policy: &PowerPolicy,
) -> Result<RateTriple, GaussianError> {
    check_model(chain, model)?;
    policy.check(chain.k(), delays)?;
    let dj = chain.delayed_joint(delays);
    let k = chain.k();
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    let mut rsum = 0.0;
    for a in 0..dj.k1() {
        for b in 0..k {
            let p1 = policy.power1(a);
            let p2 = policy.power2(a, b, k);
            for s in 0..k {
                let w = dj.prob(a, b, s);
                if w == 0.0 {
                    continue;
                }
                let sig = model.sigma2(s);
                let g1 = model.h1(s) * model.h1(s) * p1;
                let g2 = model.h2(s) * model.h2(s) * p2;
                r1 += w * 0.5 * (1.0 + g1 / sig).log2();
                r2 += w * 0.5 * (1.0 + g2 / sig).log2();
                rsum += w * 0.5 * (1.0 + (g1 + g2) / sig).log2();
            }
        }
    }
    Ok(RateTriple { r1, r2, rsum })
}

fn check_model(chain: &MarkovChain, model: &GaussianStateMac) -> Result<(), GaussianError> {
    if chain.k() != model.k() {
        return Err(GaussianError::StateMismatch {
            chain: chain.k(),
            model: model.k(),
        });
    }
    Ok(())
}

/// Solver knobs. The defaults satisfy the certification contract
/// (KKT residual ≤ 1e-8 at every returned optimum).
#[derive(Debug, Clone, Copy)]
pub struct PowerSolveOptions {
    pub kkt_tol: f64,
    pub max_iters: usize,
}

impl Default for PowerSolveOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iters: 200_000,
        }
    }
}

/// Stationarity, complementary-slackness and feasibility gaps of a policy
/// for the sum-rate objective, per power block and combined.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// `|u_i - ν|` on active entries, `max(0, u_i - ν)` on entries pinned
    /// at zero, for the p1 block then the p2 block.
    pub stationarity_p1: Vec<f64>,
    pub stationarity_p2: Vec<f64>,
    /// `p_i · |ν - u_i|` per entry.
    pub slackness_p1: Vec<f64>,
    pub slackness_p2: Vec<f64>,
    /// `|Σ w·p - 𝒫|` for each budget.
    pub budget_gap: [f64; 2],
    /// `max(0, -min_i p_i)`.
    pub nonneg_gap: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_p1
            .iter()
            .chain(&self.stationarity_p2)
            .chain(&self.slackness_p1)
            .chain(&self.slackness_p2)
            .chain(&self.budget_gap)
            .chain(std::iter::once(&self.nonneg_gap))
            .fold(0.0f64, |acc, &v| acc.max(v))
    }
}

/// Internal flattened view of the concave program: a list of (weight, σ²,
/// h1², h2², p1-variable, p2-variable) terms plus the two weighted budget
/// constraints.
struct Program {
    k: usize,
    dj: DelayedJoint,
    sigma2: Vec<f64>,
    h1sq: Vec<f64>,
    h2sq: Vec<f64>,
    /// Budget weights of the p1 block (π over s̃1; `[1]` for one-encoder).
    w1: Vec<f64>,
    /// Budget weights of the p2 block (pair weights, or π per s̃).
    w2: Vec<f64>,
    case: DelayCase,
    budget1: f64,
    budget2: f64,
    /// p1 is a fixed constant in the one-encoder case.
    p1_fixed: bool,
}

impl Program {
    fn new(chain: &MarkovChain, delays: DelayProfile, model: &GaussianStateMac) -> Self {
        let case = DelayCase::of(delays);
        let dj = chain.delayed_joint(delays);
        let k = chain.k();
        let w1 = match case {
            DelayCase::OneEncoder => vec![1.0],
            _ => chain.stationary().to_vec(),
        };
        let w2 = match case {
            DelayCase::Asymmetric => {
                let mut w = vec![0.0; k * k];
                for a in 0..k {
                    for b in 0..k {
                        w[a * k + b] = dj.pair_weight(a, b);
                    }
                }
                w
            }
            DelayCase::Symmetric => chain.stationary().to_vec(),
            DelayCase::OneEncoder => (0..k).map(|b| dj.pair_weight(0, b)).collect(),
        };
        Self {
            k,
            dj,
            sigma2: (0..k).map(|s| model.sigma2(s)).collect(),
            h1sq: (0..k).map(|s| model.h1(s) * model.h1(s)).collect(),
            h2sq: (0..k).map(|s| model.h2(s) * model.h2(s)).collect(),
            w1,
            w2,
            case,
            budget1: model.budget1(),
            budget2: model.budget2(),
            p1_fixed: case == DelayCase::OneEncoder,
        }
    }

    fn policy(&self, p1: &[f64], p2: &[f64]) -> PowerPolicy {
        PowerPolicy {
            case: self.case,
            p1: p1.to_vec(),
            p2: p2.to_vec(),
        }
    }

    #[inline]
    fn p2_index(&self, a: usize, b: usize) -> usize {
        match self.case {
            DelayCase::Asymmetric => a * self.k + b,
            _ => b,
        }
    }

    /// Weighted objective `c1·f1 + c2·f2 + c12·f12` in bits and its gradient
    /// with respect to (p1, p2).
    fn eval(
        &self,
        coeff: (f64, f64, f64),
        p1: &[f64],
        p2: &[f64],
        grad1: &mut [f64],
        grad2: &mut [f64],
    ) -> f64 {
        let (c1, c2, c12) = coeff;
        grad1.iter_mut().for_each(|g| *g = 0.0);
        grad2.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        let half_ln2 = 0.5 / LN_2;
        for a in 0..self.dj.k1() {
            let p1v = p1[if self.p1_fixed { 0 } else { a }];
            for b in 0..self.k {
                let j2 = self.p2_index(a, b);
                let p2v = p2[j2];
                for s in 0..self.k {
                    let w = self.dj.prob(a, b, s);
                    if w == 0.0 {
                        continue;
                    }
                    let sig = self.sigma2[s];
                    let g1 = self.h1sq[s] * p1v;
                    let g2 = self.h2sq[s] * p2v;
                    if c1 != 0.0 {
                        value += c1 * w * 0.5 * (1.0 + g1 / sig).log2();
                        if !self.p1_fixed {
                            grad1[a] += c1 * w * half_ln2 * self.h1sq[s] / (sig + g1);
                        }
                    }
                    if c2 != 0.0 {
                        value += c2 * w * 0.5 * (1.0 + g2 / sig).log2();
                        grad2[j2] += c2 * w * half_ln2 * self.h2sq[s] / (sig + g2);
                    }
                    if c12 != 0.0 {
                        value += c12 * w * 0.5 * (1.0 + (g1 + g2) / sig).log2();
                        let denom = sig + g1 + g2;
                        if !self.p1_fixed {
                            grad1[a] += c12 * w * half_ln2 * self.h1sq[s] / denom;
                        }
                        grad2[j2] += c12 * w * half_ln2 * self.h2sq[s] / denom;
                    }
                }
            }
        }
        value
    }

    /// Projected gradient ascent to the named KKT tolerance for the
    /// (concave) weighted objective.
    fn maximize(
        &self,
        coeff: (f64, f64, f64),
        opts: PowerSolveOptions,
    ) -> Result<(PowerPolicy, f64), GaussianError> {
        let mut p1 = if self.p1_fixed {
            vec![self.budget1]
        } else if self.budget1 == 0.0 {
            vec![0.0; self.w1.len()]
        } else {
            vec![self.budget1; self.w1.len()]
        };
        let mut p2 = if self.budget2 == 0.0 {
            vec![0.0; self.w2.len()]
        } else {
            vec![self.budget2; self.w2.len()]
        };
        // Structurally unreachable (s̃1, s̃2) combinations carry no weight;
        // pin them to zero so the output is well determined.
        for (i, &w) in self.w2.iter().enumerate() {
            if w == 0.0 {
                p2[i] = 0.0;
            }
        }

        let opt1 = !self.p1_fixed && self.budget1 > 0.0;
        let opt2 = self.budget2 > 0.0;
        let mut g1 = vec![0.0; p1.len()];
        let mut g2 = vec![0.0; p2.len()];
        let mut value = self.eval(coeff, &p1, &p2, &mut g1, &mut g2);
        let mut step = 1.0f64.max(self.budget1 + self.budget2);
        let mut best_res = f64::INFINITY;
        for _iter in 0..opts.max_iters {
            let res = self.kkt(coeff, &p1, &p2).max_residual();
            best_res = best_res.min(res);
            if res <= opts.kkt_tol {
                return Ok((self.policy(&p1, &p2), value));
            }
            // Armijo backtracking on the projected point.
            let mut accepted = false;
            let mut t = step;
            for _ in 0..60 {
                let mut q1 = p1.clone();
                let mut q2 = p2.clone();
                if opt1 {
                    for (q, &g) in q1.iter_mut().zip(&g1) {
                        *q += t * g;
                    }
                    project_weighted_simplex(&mut q1, &self.w1, self.budget1);
                }
                if opt2 {
                    for (q, &g) in q2.iter_mut().zip(&g2) {
                        *q += t * g;
                    }
                    project_weighted_simplex_masked(&mut q2, &self.w2, self.budget2);
                }
                let mut n1 = vec![0.0; q1.len()];
                let mut n2 = vec![0.0; q2.len()];
                let candidate = self.eval(coeff, &q1, &q2, &mut n1, &mut n2);
                let inner: f64 = g1
                    .iter()
                    .zip(q1.iter().zip(&p1))
                    .map(|(&g, (&q, &p))| g * (q - p))
                    .chain(
                        g2.iter()
                            .zip(q2.iter().zip(&p2))
                            .map(|(&g, (&q, &p))| g * (q - p)),
                    )
                    .sum();
                if candidate >= value + 1e-4 * inner || inner <= 1e-18 {
                    p1 = q1;
                    p2 = q2;
                    g1 = n1;
                    g2 = n2;
                    value = candidate;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                step = (t * 2.0).clamp(1e-12, 1e6);
            } else {
                step *= 0.5;
            }
        }
        Err(GaussianError::NonConvergence {
            target: opts.kkt_tol,
            iters: opts.max_iters,
            best: best_res,
        })
    }

    /// KKT record for a weighted objective at the given point.
    fn kkt(&self, coeff: (f64, f64, f64), p1: &[f64], p2: &[f64]) -> KktReport {
        let mut g1 = vec![0.0; p1.len()];
        let mut g2 = vec![0.0; p2.len()];
        self.eval(coeff, p1, p2, &mut g1, &mut g2);
        let block = |p: &[f64], w: &[f64], grad: &[f64], budget: f64, optimized: bool| {
            let act_tol = 1e-7 * budget.max(1.0);
            let mut stat = vec![0.0; p.len()];
            let mut slack = vec![0.0; p.len()];
            let live: Vec<usize> = (0..p.len()).filter(|&i| w[i] > 0.0).collect();
            if !optimized || live.is_empty() {
                return (stat, slack, 0.0);
            }
            let util: Vec<f64> = live.iter().map(|&i| grad[i] / w[i]).collect();
            let active: Vec<usize> = (0..live.len()).filter(|&j| p[live[j]] > act_tol).collect();
            let nu = if active.is_empty() {
                util.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
            } else {
                let num: f64 = active.iter().map(|&j| w[live[j]] * util[j]).sum();
                let den: f64 = active.iter().map(|&j| w[live[j]]).sum();
                num / den
            };
            for (j, &i) in live.iter().enumerate() {
                stat[i] = if p[i] > act_tol {
                    (util[j] - nu).abs()
                } else {
                    (util[j] - nu).max(0.0)
                };
                slack[i] = p[i] * (util[j] - nu).abs();
            }
            let gap = (live.iter().map(|&i| w[i] * p[i]).sum::<f64>() - budget).abs();
            (stat, slack, gap)
        };
        let opt1 = !self.p1_fixed && self.budget1 > 0.0;
        let (stationarity_p1, slackness_p1, gap1) =
            block(p1, &self.w1, &g1, self.budget1, opt1);
        let gap1 = if self.p1_fixed {
            (p1[0] - self.budget1).abs()
        } else if opt1 {
            gap1
        } else {
            p1.iter().map(|&v| v.abs()).fold(0.0f64, f64::max)
        };
        let (stationarity_p2, slackness_p2, gap2) =
            block(p2, &self.w2, &g2, self.budget2, self.budget2 > 0.0);
        let gap2 = if self.budget2 > 0.0 {
            gap2
        } else {
            p2.iter().map(|&v| v.abs()).fold(0.0f64, f64::max)
        };
        let nonneg = p1
            .iter()
            .chain(p2.iter())
            .fold(0.0f64, |acc, &v| acc.max(-v));
        KktReport {
            stationarity_p1,
            stationarity_p2,
            slackness_p1,
            slackness_p2,
            budget_gap: [gap1, gap2],
            nonneg_gap: nonneg,
        }
    }
}

/// Maximum sum rate and the achieving power policy.
pub fn optimize_sum_rate(
    chain: &MarkovChain,
    delays: DelayProfile,
    model: &GaussianStateMac,
    opts: PowerSolveOptions,
) -> Result<(PowerPolicy, f64), GaussianError> {
    check_model(chain, model)?;
    Program::new(chain, delays, model).maximize((0.0, 0.0, 1.0), opts)
}

/// KKT residual record of a feasible policy for the sum-rate objective.
pub fn kkt_residual(
    chain: &MarkovChain,
    delays: DelayProfile,
    model: &GaussianStateMac,
    policy: &PowerPolicy,
) -> Result<KktReport, GaussianError> {
    check_model(chain, model)?;
    policy.check(chain.k(), delays)?;
    let prog = Program::new(chain, delays, model);
    Ok(prog.kkt((0.0, 0.0, 1.0), &policy.p1, &policy.p2))
}

/// Maximize `w1·R1 + w2·R2` over the region; the relevant pentagon corner
/// objective is concave, so the returned support value is globally optimal.
pub fn optimize_direction(
    chain: &MarkovChain,
    delays: DelayProfile,
    model: &GaussianStateMac,
    w1: f64,
    w2: f64,
    opts: PowerSolveOptions,
) -> Result<(RatePoint, PowerPolicy, CornerId), GaussianError> {
    check_model(chain, model)?;
    let prog = Program::new(chain, delays, model);
    // For w1 >= w2 the maximum over every pentagon sits at corner A
    // (user 1 decoded last); for w1 <= w2 at corner B. The corresponding
    // corner objectives (w1-w2)·f1 + w2·f12 and (w2-w1)·f2 + w1·f12 are
    // concave exactly on those half-lines.
    let corner_a = w1 >= w2;
    let coeff = if corner_a {
        (w1 - w2, 0.0, w2)
    } else {
        (0.0, w2 - w1, w1)
    };
    let (policy, _) = prog.maximize(coeff, opts)?;
    let triple = gaussian_rate_triple(chain, delays, model, &policy)?;
    let (pa, pb) = (triple.corner_a(), triple.corner_b());
    let (va, vb) = (w1 * pa.0 + w2 * pa.1, w1 * pb.0 + w2 * pb.1);
    let (point, corner) = if va >= vb - 1e-12 {
        (pa, CornerId::A)
    } else {
        (pb, CornerId::B)
    };
    Ok((
        RatePoint {
            r1: point.0,
            r2: point.1,
        },
        policy,
        corner,
    ))
}

/// `max α·R1 + R2` (the weighted problem swept to trace the region).
pub fn optimize_weighted(
    chain: &MarkovChain,
    delays: DelayProfile,
    model: &GaussianStateMac,
    alpha: f64,
    opts: PowerSolveOptions,
) -> Result<(RatePoint, PowerPolicy, CornerId), GaussianError> {
    optimize_direction(chain, delays, model, alpha, 1.0, opts)
}

/// Which delay family a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepCase {
    /// `d1 = d`, `d2` fixed.
    Asymmetric { d2: u32 },
    /// `d1 = d2 = d`.
    Symmetric,
    /// `d1 = ∞`, `d2 = d`.
    OneEncoder,
}

#[derive(Debug, Clone)]
pub struct DelaySweepRow {
    pub d: u32,
    pub sum_rate_bits: f64,
    pub policy: PowerPolicy,
}

/// Optimized sum rate per delay value.
pub fn delay_sweep(
    chain: &MarkovChain,
    model: &GaussianStateMac,
    case: SweepCase,
    d_values: &[u32],
    opts: PowerSolveOptions,
) -> Result<Vec<DelaySweepRow>, GaussianError> {
    let mut rows = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let delays = match case {
            SweepCase::Asymmetric { d2 } => DelayProfile::finite(d, d2).map_err(|_| {
                GaussianError::ShapeMismatch {
                    what: format!("asymmetric sweep requires d >= d2, got d={d}"),
                }
            })?,
            SweepCase::Symmetric => DelayProfile::symmetric(d),
            SweepCase::OneEncoder => DelayProfile::one_encoder(d),
        };
        let (policy, rate) = optimize_sum_rate(chain, delays, model, opts)?;
        rows.push(DelaySweepRow {
            d,
            sum_rate_bits: rate,
            policy,
        });
    }
    Ok(rows)
}

/// Euclidean projection onto `{p >= 0, Σ w_i p_i = budget}` with `w_i > 0`.
/// Exact breakpoint search on the piecewise-linear multiplier equation.
fn project_weighted_simplex(p: &mut [f64], w: &[f64], budget: f64) {
    debug_assert_eq!(p.len(), w.len());
    if budget <= 0.0 {
        p.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // p_i(λ) = max(0, y_i - λ w_i); find λ with Σ w_i p_i(λ) = budget.
    let mut ratios: Vec<(f64, usize)> = p
        .iter()
        .zip(w)
        .enumerate()
        .map(|(i, (&y, &wi))| (y / wi, i))
        .collect();
    ratios.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut s1 = 0.0; // Σ w_i y_i over the active prefix
    let mut s2 = 0.0; // Σ w_i² over the active prefix
    let mut lambda = 0.0;
    for (rank, &(r, i)) in ratios.iter().enumerate() {
        s1 += w[i] * p[i];
        s2 += w[i] * w[i];
        let candidate = (s1 - budget) / s2;
        let next = ratios.get(rank + 1).map(|&(rn, _)| rn);
        if candidate <= r && next.map_or(true, |rn| candidate >= rn) {
            lambda = candidate;
            break;
        }
    }
    for (v, &wi) in p.iter_mut().zip(w) {
        *v = (*v - lambda * wi).max(0.0);
    }
    // One Newton polish on the active set pins the budget to fp accuracy.
    let active: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let resid: f64 = active.iter().map(|&i| w[i] * p[i]).sum::<f64>() - budget;
    let denom: f64 = active.iter().map(|&i| w[i] * w[i]).sum();
    if denom > 0.0 {
        let adj = resid / denom;
        for &i in &active {
            p[i] = (p[i] - adj * w[i]).max(0.0);
        }
    }
}

/// Same projection, but entries with zero weight are pinned to zero rather
/// than projected (they are structurally unreachable).
fn project_weighted_simplex_masked(p: &mut [f64], w: &[f64], budget: f64) {
    let live: Vec<usize> = (0..p.len()).filter(|&i| w[i] > 0.0).collect();
    let mut pv: Vec<f64> = live.iter().map(|&i| p[i]).collect();
    let wv: Vec<f64> = live.iter().map(|&i| w[i]).collect();
    project_weighted_simplex(&mut pv, &wv, budget);
    p.iter_mut().for_each(|v| *v = 0.0);
    for (j, &i) in live.iter().enumerate() {
        p[i] = pv[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_switch_channel, build_two_state_agn};

    fn deep_fade_agn() -> (MarkovChain, GaussianStateMac) {
        build_two_state_agn(0.1, 0.1, 1.0, 100.0, 10.0, 10.0).unwrap()
    }

    #[test]
    fn zero_power_gives_zero_rates() {
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::finite(1, 0).unwrap();
        let policy = PowerPolicy::constant(DelayCase::Asymmetric, 2, 0.0, 0.0);
        let t = gaussian_rate_triple(&chain, delays, &model, &policy).unwrap();
        assert_eq!((t.r1, t.r2, t.rsum), (0.0, 0.0, 0.0));
    }

    #[test]
    fn equal_noise_constant_policy_rate() {
        // σ² = 4 everywhere, powers (10, 10): rsum = ½ log2(6) for any delays.
        let (chain, model) = build_two_state_agn(0.1, 0.1, 4.0, 4.0, 10.0, 10.0).unwrap();
        for delays in [
            DelayProfile::finite(0, 0).unwrap(),
            DelayProfile::finite(7, 2).unwrap(),
            DelayProfile::one_encoder(3),
        ] {
            let policy = PowerPolicy::constant(DelayCase::of(delays), 2, 10.0, 10.0);
            let t = gaussian_rate_triple(&chain, delays, &model, &policy).unwrap();
            assert!((t.rsum - 0.5 * 6.0f64.log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_policy_matches_mixed_baseline() {
        // Deep-fade AGN parameters, constant powers: the baseline the delay sweep
        // converges to. Oracle: ¼·log2(21) + ¼·log2(1.2), computed inline.
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::symmetric(5);
        let policy = PowerPolicy::constant(DelayCase::Symmetric, 2, 10.0, 10.0);
        let t = gaussian_rate_triple(&chain, delays, &model, &policy).unwrap();
        let oracle = 0.25 * 21.0f64.log2() + 0.25 * 1.2f64.log2();
        assert!((t.rsum - oracle).abs() < 1e-12);
        assert!((oracle - 1.1639).abs() < 1e-4);
    }

    #[test]
    fn equal_noise_optimum_is_constant() {
        let (chain, model) = build_two_state_agn(0.1, 0.1, 4.0, 4.0, 10.0, 10.0).unwrap();
        for delays in [
            DelayProfile::finite(0, 0).unwrap(),
            DelayProfile::finite(5, 1).unwrap(),
            DelayProfile::one_encoder(2),
        ] {
            let (policy, rate) =
                optimize_sum_rate(&chain, delays, &model, PowerSolveOptions::default()).unwrap();
            assert!(
                (rate - 0.5 * 6.0f64.log2()).abs() < 1e-7,
                "case {:?}: rate {rate}",
                DelayCase::of(delays)
            );
            let report = kkt_residual(&chain, delays, &model, &policy).unwrap();
            assert!(report.max_residual() <= 1e-7);
        }
    }

    #[test]
    fn optimizer_beats_constant_policy_at_zero_delay() {
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::finite(0, 0).unwrap();
        let (policy, rate) =
            optimize_sum_rate(&chain, delays, &model, PowerSolveOptions::default()).unwrap();
        let constant = gaussian_rate_triple(
            &chain,
            delays,
            &model,
            &PowerPolicy::constant(DelayCase::of(delays), 2, 10.0, 10.0),
        )
        .unwrap();
        assert!(rate > constant.rsum + 0.1, "rate {rate} vs {}", constant.rsum);
        // Both budgets tight.
        let report = kkt_residual(&chain, delays, &model, &policy).unwrap();
        assert!(report.budget_gap[0] < 1e-9 && report.budget_gap[1] < 1e-9);
        assert!(report.max_residual() <= 1e-8);
    }

    #[test]
    fn constant_policy_on_unequal_noise_has_positive_stationarity_gap() {
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::finite(0, 0).unwrap();
        let policy = PowerPolicy::constant(DelayCase::of(delays), 2, 10.0, 10.0);
        let report = kkt_residual(&chain, delays, &model, &policy).unwrap();
        let max_stat = report
            .stationarity_p1
            .iter()
            .chain(&report.stationarity_p2)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(max_stat > 1e-3, "expected suboptimality, got {max_stat}");
    }

    #[test]
    fn large_delay_matches_infinite_mixing_limit() {
        // Symmetric d = 10^6 vs the constant policy: within 1e-6 bits.
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::symmetric(1_000_000);
        let (_, rate) =
            optimize_sum_rate(&chain, delays, &model, PowerSolveOptions::default()).unwrap();
        let constant = gaussian_rate_triple(
            &chain,
            delays,
            &model,
            &PowerPolicy::constant(DelayCase::Symmetric, 2, 10.0, 10.0),
        )
        .unwrap();
        assert!((rate - constant.rsum).abs() < 1e-6);
    }

    #[test]
    fn fading_with_unit_gains_equals_agn_path() {
        let (chain, agn) = deep_fade_agn();
        let fading =
            GaussianStateMac::new(2, vec![1.0, 100.0], vec![1.0, 1.0], vec![1.0, 1.0], 10.0, 10.0)
                .unwrap();
        let delays = DelayProfile::finite(3, 1).unwrap();
        let policy = PowerPolicy {
            case: DelayCase::Asymmetric,
            p1: vec![14.0, 6.0],
            p2: vec![3.0, 9.0, 11.0, 13.0],
        };
        let a = gaussian_rate_triple(&chain, delays, &agn, &policy).unwrap();
        let f = gaussian_rate_triple(&chain, delays, &fading, &policy).unwrap();
        assert!((a.r1 - f.r1).abs() < 1e-12);
        assert!((a.r2 - f.r2).abs() < 1e-12);
        assert!((a.rsum - f.rsum).abs() < 1e-12);
    }

    #[test]
    fn one_encoder_r1_is_the_fixed_formula() {
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::one_encoder(2);
        let policy = PowerPolicy {
            case: DelayCase::OneEncoder,
            p1: vec![10.0],
            p2: vec![4.0, 16.0],
        };
        let t = gaussian_rate_triple(&chain, delays, &model, &policy).unwrap();
        let kd = chain.d_step_matrix(2);
        let mut want = 0.0;
        for st in 0..2 {
            for s in 0..2 {
                want += chain.stationary()[st]
                    * kd.get(st, s)
                    * 0.5
                    * (1.0 + 10.0 / model.sigma2(s)).log2();
            }
        }
        assert!((t.r1 - want).abs() < 1e-12);
    }

    #[test]
    fn weighted_alpha_one_agrees_with_sum_rate() {
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::finite(2, 0).unwrap();
        let opts = PowerSolveOptions::default();
        let (_, sum_rate) = optimize_sum_rate(&chain, delays, &model, opts).unwrap();
        let (point, _, corner) = optimize_weighted(&chain, delays, &model, 1.0, opts).unwrap();
        assert_eq!(corner, CornerId::A);
        assert!((point.r1 + point.r2 - sum_rate).abs() < 1e-7);
    }

    #[test]
    fn switch_channel_region_is_a_rectangle() {
        let (chain, model) = build_switch_channel(0.1, 0.1, 1.0, 10.0, 10.0, 10.0).unwrap();
        let delays = DelayProfile::finite(0, 0).unwrap();
        let opts = PowerSolveOptions::default();
        let mut corners = Vec::new();
        for alpha in [0.25, 1.0, 4.0] {
            let (point, _, _) = optimize_weighted(&chain, delays, &model, alpha, opts).unwrap();
            corners.push(point);
        }
        for pair in corners.windows(2) {
            assert!((pair[0].r1 - pair[1].r1).abs() < 1e-6);
            assert!((pair[0].r2 - pair[1].r2).abs() < 1e-6);
        }
    }

    #[test]
    fn delay_sweep_is_monotone_on_equal_noise() {
        let (chain, model) = build_two_state_agn(0.1, 0.1, 4.0, 4.0, 10.0, 10.0).unwrap();
        let rows = delay_sweep(
            &chain,
            &model,
            SweepCase::Symmetric,
            &[0, 1, 2, 5],
            PowerSolveOptions::default(),
        )
        .unwrap();
        for row in &rows {
            assert!((row.sum_rate_bits - 0.5 * 6.0f64.log2()).abs() < 1e-7);
        }
    }

    #[test]
    fn optimum_is_stable_under_one_percent_feasible_perturbations() {
        // Transfer 1% of a budget between two states along the constraint
        // surface: the objective must not increase by more than 1e-8.
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::symmetric(2);
        let (policy, rate) =
            optimize_sum_rate(&chain, delays, &model, PowerSolveOptions::default()).unwrap();
        let pi = chain.stationary();
        let shift = 0.01 * model.budget1();
        for (block, other) in [(0usize, 1usize), (1, 0)] {
            for sign in [1.0, -1.0] {
                let mut p = policy.clone();
                let delta = sign * shift;
                let apply = |v: &mut Vec<f64>| {
                    v[block] += delta / pi[block];
                    v[other] -= delta / pi[other];
                };
                apply(&mut p.p1);
                if p.p1.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let perturbed = gaussian_rate_triple(&chain, delays, &model, &p).unwrap();
                assert!(
                    perturbed.rsum <= rate + 1e-8,
                    "perturbation raised the rate: {} vs {rate}",
                    perturbed.rsum
                );
            }
        }
    }

    #[test]
    fn weighted_solve_matches_fine_grid_oracle_at_alpha_two() {
        // Asymmetric d1 = 4, d2 = 0 at α = 2 (corner A). Oracle: coarse grid
        // over the four free power coordinates with tight budgets, refined
        // once around the argmax.
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::finite(4, 0).unwrap();
        let opts = PowerSolveOptions::default();
        let (point, _, _) = optimize_weighted(&chain, delays, &model, 2.0, opts).unwrap();
        let opt_value = 2.0 * point.r1 + point.r2;

        let dj = chain.delayed_joint(delays);
        let pi = chain.stationary();
        let w: Vec<f64> = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| dj.pair_weight(a, b))
            .collect();
        let corner_value = |p1g: f64, p2: &[f64; 4]| -> f64 {
            let p1b = (10.0 - pi[0] * p1g) / pi[1];
            if p1b < 0.0 {
                return f64::NEG_INFINITY;
            }
            let policy = PowerPolicy {
                case: DelayCase::Asymmetric,
                p1: vec![p1g, p1b],
                p2: p2.to_vec(),
            };
            let t = gaussian_rate_triple(&chain, delays, &model, &policy).unwrap();
            let (a, b) = (t.corner_a(), t.corner_b());
            (2.0 * a.0 + a.1).max(2.0 * b.0 + b.1)
        };
        // Nested grid refinement over the free coordinates
        // (p1(G), p2(GG), p2(GB), p2(BG)); p1(B) and p2(BB) follow from the
        // tight budgets. Spans start at the full feasible box.
        let scan = |center: &[f64; 4], spans: &[f64; 4]| -> ([f64; 4], f64) {
            let mut best = ([0.0; 4], f64::NEG_INFINITY);
            let grid = |c: f64, s: f64| (0..=10).map(move |i| (c - s + i as f64 * s / 5.0).max(0.0));
            for p1g in grid(center[0], spans[0]) {
                for pgg in grid(center[1], spans[1]) {
                    for pgb in grid(center[2], spans[2]) {
                        for pbg in grid(center[3], spans[3]) {
                            let used = w[0] * pgg + w[1] * pgb + w[2] * pbg;
                            let pbb = (10.0 - used) / w[3];
                            if pbb < 0.0 {
                                continue;
                            }
                            let value = corner_value(p1g, &[pgg, pgb, pbg, pbb]);
                            if value > best.1 {
                                best = ([p1g, pgg, pgb, pbg], value);
                            }
                        }
                    }
                }
            }
            best
        };
        let mut spans = [10.0, 5.0 / w[0], 5.0 / w[1], 5.0 / w[2]];
        let mut center = spans;
        let mut fine = f64::NEG_INFINITY;
        for _round in 0..4 {
            let (c, v) = scan(&center, &spans);
            center = c;
            fine = v;
            spans = spans.map(|s| s / 5.0);
        }
        assert!(
            opt_value >= fine - 1e-9,
            "optimizer {opt_value} below grid {fine}"
        );
        assert!(
            (opt_value - fine).abs() <= 1e-4,
            "optimizer {opt_value} vs fine grid {fine}"
        );
    }

    #[test]
    fn example2_fading_region_is_not_a_rectangle() {
        // Two-state fading gains h1=(1,0.5), h2=(0.5,1), equal unit noise:
        // the users interfere, so the sum-bound corner differs from the
        // per-user maxima.
        let chain = MarkovChain::two_state(0.1, 0.1).unwrap();
        let model = GaussianStateMac::new(
            2,
            vec![1.0, 1.0],
            vec![1.0, 0.5],
            vec![0.5, 1.0],
            10.0,
            10.0,
        )
        .unwrap();
        let delays = DelayProfile::finite(0, 0).unwrap();
        let opts = PowerSolveOptions::default();
        let (r1_axis, _, _) = optimize_direction(&chain, delays, &model, 1.0, 0.0, opts).unwrap();
        let (sum_pt, _, _) = optimize_weighted(&chain, delays, &model, 1.0, opts).unwrap();
        assert!(sum_pt.r1 + sum_pt.r2 < r1_axis.r1 + r1_axis.r2 + 2.0);
        // At the sum-optimal corner user 2 sacrifices rate: it is not at its
        // solo maximum.
        let (r2_axis, _, _) = optimize_direction(&chain, delays, &model, 0.0, 1.0, opts).unwrap();
        assert!(sum_pt.r2 < r2_axis.r2 - 1e-3 || sum_pt.r1 < r1_axis.r1 - 1e-3);
    }

    #[test]
    fn projection_hits_weighted_budget_exactly() {
        let mut p = vec![3.0, -1.0, 7.0];
        let w = vec![0.25, 0.5, 0.25];
        project_weighted_simplex(&mut p, &w, 2.0);
        let dot: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((dot - 2.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn projection_is_identity_on_feasible_points() {
        let mut p = vec![2.0, 2.0];
        let w = vec![0.5, 0.5];
        project_weighted_simplex(&mut p, &w, 2.0);
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn policy_shape_mismatch_is_reported() {
        let (chain, model) = deep_fade_agn();
        let delays = DelayProfile::finite(1, 0).unwrap();
        let bad = PowerPolicy::constant(DelayCase::Symmetric, 2, 1.0, 1.0);
        assert!(matches!(
            gaussian_rate_triple(&chain, delays, &model, &bad),
            Err(GaussianError::ShapeMismatch { .. })
        ));
    }
}
