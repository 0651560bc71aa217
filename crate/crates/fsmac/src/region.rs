//! Discrete-channel capacity-region frontier: maximize weighted sum rates
//! over input policies, sweep weights, and clean up with the upper concave
//! envelope (time-sharing). A grid-search oracle validates the optimizer on
//! small instances.
//!
//! The inner problem is nonconvex in the policy, so each weighted solve is
//! multi-start projected gradient ascent over the product of conditional
//! simplices; the result is a certified *lower* bound on the true support
//! value. The weighted objective is decomposed per pentagon corner
//! (corner A `(r1, rsum-r1)`, corner B `(rsum-r2, r2)`) to avoid the
//! subgradient kink where the active corner switches.

use crate::channel::DiscreteStateMac;
use crate::inforate::{InforateError, InputPolicy, RateTriple};
use crate::markov::{DelayProfile, DelayedJoint, MarkovChain};
use crate::tensor::{kahan_sum, strides_of, LN_2};
use crate::RatePoint;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("no optimization start converged (best value {best_value}, {converged}/{total} stalled)")]
    NonConvergence {
        best_value: f64,
        converged: usize,
        total: usize,
    },
    #[error("grid would enumerate {total} policies, budget is {budget}")]
    BudgetExceeded { total: u128, budget: u64 },
    #[error("weight direction ({w1}, {w2}) must be nonnegative and nonzero")]
    BadDirection { w1: f64, w2: f64 },
    #[error(transparent)]
    Rate(#[from] InforateError),
}

/// Which pentagon corner a frontier point came from: `A` is
/// `(r1, rsum - r1)` (user 1 decoded last), `B` is `(rsum - r2, r2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CornerId {
    A,
    B,
}

impl std::fmt::Display for CornerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CornerId::A => write!(f, "A"),
            CornerId::B => write!(f, "B"),
        }
    }
}

/// Multi-start solver knobs; defaults follow the validated configuration
/// (16 starts, Dirichlet(1) plus deterministic starts, 1e-9/50-iteration
/// stall rule, |U| = 3).
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub multistarts: usize,
    pub seed: u64,
    pub u_size: usize,
    pub stall_tol: f64,
    pub stall_iters: usize,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            multistarts: 16,
            seed: 0x5eed,
            u_size: 3,
            stall_tol: 1e-9,
            stall_iters: 50,
            max_iters: 4000,
        }
    }
}

/// Result of one weighted solve.
#[derive(Debug, Clone)]
pub struct DirectionResult {
    pub point: RatePoint,
    pub policy: InputPolicy,
    pub corner: CornerId,
    /// Achieved support value `w1·R1 + w2·R2`.
    pub value: f64,
}

/// One point of a swept frontier with its provenance.
#[derive(Debug, Clone)]
pub struct FrontierPoint {
    pub w1: f64,
    pub w2: f64,
    pub corner: CornerId,
    pub point: RatePoint,
    pub policy_hash: u64,
}

/// Swept frontier after concave-envelope cleanup: points are pairwise
/// non-dominated and sorted by increasing `r1`.
#[derive(Debug, Clone)]
pub struct RateRegion {
    pub frontier: Vec<FrontierPoint>,
}

impl RateRegion {
    /// Support value of the enveloped region in direction `(w1, w2)`.
    pub fn support(&self, w1: f64, w2: f64) -> f64 {
        self.frontier
            .iter()
            .map(|f| f.point.weighted(w1, w2))
            .fold(0.0, f64::max)
    }

    /// Height of the piecewise-linear envelope at the given `r1`
    /// (flat extension to the left, unreachable to the right).
    pub fn value_at(&self, r1: f64) -> f64 {
        if self.frontier.is_empty() {
            return if r1 <= 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let first = &self.frontier[0].point;
        if r1 <= first.r1 {
            return first.r2;
        }
        for pair in self.frontier.windows(2) {
            let (a, b) = (&pair[0].point, &pair[1].point);
            if r1 <= b.r1 {
                let t = (r1 - a.r1) / (b.r1 - a.r1);
                return a.r2 + t * (b.r2 - a.r2);
            }
        }
        let last = &self.frontier.last().unwrap().point;
        if r1 <= last.r1 + 1e-12 {
            last.r2
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Upper concave envelope of a point cloud, returned as its non-dominated
/// vertices sorted by `r1`. Time-sharing justifies the hull; the axes and
/// origin are always available.
pub fn upper_concave_envelope(mut points: Vec<FrontierPoint>) -> Vec<FrontierPoint> {
    points.retain(|p| p.point.r1 > -1e-12 && p.point.r2 > -1e-12);
    if points.is_empty() {
        return points;
    }
    points.sort_by(|a, b| {
        a.point
            .r1
            .partial_cmp(&b.point.r1)
            .unwrap()
            .then(b.point.r2.partial_cmp(&a.point.r2).unwrap())
    });
    // Keep the best r2 per r1 coordinate.
    let mut dedup: Vec<FrontierPoint> = Vec::with_capacity(points.len());
    for p in points {
        match dedup.last() {
            Some(last) if (last.point.r1 - p.point.r1).abs() < 1e-12 => {}
            _ => dedup.push(p),
        }
    }
    // Monotone-chain upper hull (left to right, clockwise turns only).
    let cross = |o: &RatePoint, a: &RatePoint, b: &RatePoint| {
        (a.r1 - o.r1) * (b.r2 - o.r2) - (a.r2 - o.r2) * (b.r1 - o.r1)
    };
    let mut hull: Vec<FrontierPoint> = Vec::with_capacity(dedup.len());
    for p in dedup {
        while hull.len() >= 2
            && cross(
                &hull[hull.len() - 2].point,
                &hull[hull.len() - 1].point,
                &p.point,
            ) >= -1e-15
        {
            hull.pop();
        }
        hull.push(p);
    }
    // Pareto cleanup: drop hull vertices dominated by another vertex.
    let kept: Vec<FrontierPoint> = hull
        .iter()
        .filter(|p| {
            !hull.iter().any(|q| {
                (q.point.r1 > p.point.r1 + 1e-12 && q.point.r2 >= p.point.r2 - 1e-12)
                    || (q.point.r2 > p.point.r2 + 1e-12 && q.point.r1 >= p.point.r1 - 1e-12)
            })
        })
        .cloned()
        .collect();
    kept
}

// ---------------------------------------------------------------------------
// Weighted-sum optimization
// ---------------------------------------------------------------------------

/// Maximize the support of the per-policy pentagon in direction `(α, 1)`.
/// Returns the best corner point and the policy achieving it.
pub fn weighted_sum_max(
    chain: &MarkovChain,
    delays: DelayProfile,
    ch: &DiscreteStateMac,
    alpha: f64,
    opts: &SolveOptions,
) -> Result<(RatePoint, InputPolicy), RegionError> {
    let r = support_direction(chain, delays, ch, alpha, 1.0, opts)?;
    Ok((r.point, r.policy))
}

/// Maximize `w1·R1 + w2·R2` over policies and pentagon corners.
pub fn support_direction(
    chain: &MarkovChain,
    delays: DelayProfile,
    ch: &DiscreteStateMac,
    w1: f64,
    w2: f64,
    opts: &SolveOptions,
) -> Result<DirectionResult, RegionError> {
    if !(w1 >= 0.0 && w2 >= 0.0) || w1 + w2 <= 0.0 {
        return Err(RegionError::BadDirection { w1, w2 });
    }
    let dj = chain.delayed_joint(delays);
    let mut eval = Evaluator::new(&dj, ch, opts.u_size);
    let mut best: Option<(f64, CornerId, Vec<f64>)> = None;
    let mut converged = 0usize;
    let mut total = 0usize;
    for corner in [CornerId::A, CornerId::B] {
        let coeff = match corner {
            CornerId::A => (w1 - w2, 0.0, w2),
            CornerId::B => (0.0, w2 - w1, w1),
        };
        for start_idx in 0..opts.multistarts {
            total += 1;
            let theta0 = eval.start_point(start_idx, opts.seed);
            let (theta, _, stalled) = eval.ascend(coeff, theta0, opts);
            if stalled {
                converged += 1;
            }
            // The weighted value of the best corner of this policy.
            let triple = eval.triple_of(&theta);
            let (pa, pb) = (triple.corner_a(), triple.corner_b());
            let cand = (w1 * pa.0 + w2 * pa.1).max(w1 * pb.0 + w2 * pb.1);
            let replace = match &best {
                None => true,
                Some((bv, _, btheta)) => {
                    cand > bv + 1e-12
                        || ((cand - bv).abs() <= 1e-12 && lex_less(&theta, btheta))
                }
            };
            if replace {
                best = Some((cand, corner, theta));
            }
        }
    }
    if converged == 0 {
        let best_value = best.as_ref().map(|(v, _, _)| *v).unwrap_or(f64::NAN);
        return Err(RegionError::NonConvergence {
            best_value,
            converged,
            total,
        });
    }
    let (_, _, theta) = best.unwrap();
    let policy = eval.policy_of(&theta)?;
    let triple = eval.triple_of(&theta);
    let (pa, pb) = (triple.corner_a(), triple.corner_b());
    let (va, vb) = (w1 * pa.0 + w2 * pa.1, w1 * pb.0 + w2 * pb.1);
    let (point, corner) = if va >= vb - 1e-12 {
        (RatePoint { r1: pa.0, r2: pa.1 }, CornerId::A)
    } else {
        (RatePoint { r1: pb.0, r2: pb.1 }, CornerId::B)
    };
    Ok(DirectionResult {
        value: point.weighted(w1, w2),
        point,
        policy,
        corner,
    })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Sweep the weighted problem over both orientations (`(α,1)` and `(1,α)`),
/// include the axis directions, and clean up with the concave envelope.
pub fn frontier_sweep(
    chain: &MarkovChain,
    delays: DelayProfile,
    ch: &DiscreteStateMac,
    alphas: &[f64],
    opts: &SolveOptions,
) -> Result<RateRegion, RegionError> {
    let mut directions = vec![(1.0, 0.0), (0.0, 1.0)];
    for &a in alphas {
        directions.push((a, 1.0));
        directions.push((1.0, a));
    }
    directions.retain(|&(a, b)| a >= 0.0 && b >= 0.0 && a + b > 0.0);
    let mut points = Vec::new();
    for (w1, w2) in directions {
        let r = support_direction(chain, delays, ch, w1, w2, opts)?;
        points.push(FrontierPoint {
            w1,
            w2,
            corner: r.corner,
            point: r.point,
            policy_hash: r.policy.fingerprint(),
        });
    }
    Ok(RateRegion {
        frontier: upper_concave_envelope(points),
    })
}

// ---------------------------------------------------------------------------
// Grid-search oracle
// ---------------------------------------------------------------------------

/// Oracle configuration: probability increment `step` (>= 0.1 intended),
/// auxiliary cardinality (<= 2 to keep grids feasible) and an enumeration
/// budget the call refuses to exceed.
#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    pub step: f64,
    pub u_size: usize,
    pub budget: u64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            u_size: 1,
            budget: 5_000_000,
        }
    }
}

/// Evaluate every grid policy and return all pentagon corners. Conditional
/// slices that can never occur (zero delayed-pair probability) are pinned
/// uniform instead of enumerated.
pub fn brute_force_region(
    chain: &MarkovChain,
    delays: DelayProfile,
    ch: &DiscreteStateMac,
    grid: &GridOptions,
) -> Result<Vec<RatePoint>, RegionError> {
    let dj = chain.delayed_joint(delays);
    let mut eval = Evaluator::new(&dj, ch, grid.u_size);
    let m = (1.0 / grid.step).round() as usize;
    let layout = eval.layout.clone();

    // Candidate pmfs per slice width.
    let mut pmfs_by_width: std::collections::HashMap<usize, Vec<Vec<f64>>> =
        std::collections::HashMap::new();
    for slice in &layout {
        pmfs_by_width
            .entry(slice.width)
            .or_insert_with(|| compositions(m, slice.width));
    }
    let mut total: u128 = 1;
    for slice in &layout {
        if slice.relevant {
            total = total.saturating_mul(pmfs_by_width[&slice.width].len() as u128);
        }
    }
    if total > grid.budget as u128 {
        return Err(RegionError::BudgetExceeded {
            total,
            budget: grid.budget,
        });
    }

    let mut theta = eval.uniform_theta();
    let enumerated: Vec<usize> = (0..layout.len()).filter(|&i| layout[i].relevant).collect();
    let mut counters = vec![0usize; enumerated.len()];
    let mut out = Vec::with_capacity((total as usize) * 2);
    loop {
        for (slot, &slice_idx) in counters.iter().zip(&enumerated) {
            let slice = &layout[slice_idx];
            let pmf = &pmfs_by_width[&slice.width][*slot];
            theta[slice.offset..slice.offset + slice.width].copy_from_slice(pmf);
        }
        let triple = eval.triple_of(&theta);
        let (a, b) = (triple.corner_a(), triple.corner_b());
        out.push(RatePoint { r1: a.0, r2: a.1 });
        out.push(RatePoint { r1: b.0, r2: b.1 });
        // Odometer over the enumerated slices.
        let mut pos = 0;
        loop {
            if pos == counters.len() {
                return Ok(out);
            }
            counters[pos] += 1;
            if counters[pos] < pmfs_by_width[&layout[enumerated[pos]].width].len() {
                break;
            }
            counters[pos] = 0;
            pos += 1;
        }
    }
}

/// All pmfs on `width` symbols with entries that are multiples of `1/m`.
fn compositions(m: usize, width: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; width];
    fn rec(rest: usize, pos: usize, current: &mut [usize], m: usize, out: &mut Vec<Vec<f64>>) {
        if pos == current.len() - 1 {
            current[pos] = rest;
            out.push(current.iter().map(|&c| c as f64 / m as f64).collect());
            return;
        }
        for take in 0..=rest {
            current[pos] = take;
            rec(rest - take, pos + 1, current, m, out);
        }
    }
    rec(m, 0, &mut current, m, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Policy-space evaluator: objective, analytic gradient, projected ascent
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct SliceInfo {
    offset: usize,
    width: usize,
    /// Slices reachable with positive probability; the rest stay uniform.
    relevant: bool,
}

/// Flattened policy layout: `[pu | px1 | px2]`, each conditional slice a
/// probability simplex.
struct Evaluator<'a> {
    dj: &'a DelayedJoint,
    ch: &'a DiscreteStateMac,
    nu: usize,
    k1: usize,
    k: usize,
    nx1: usize,
    nx2: usize,
    ny: usize,
    dims: [usize; 7],
    layout: Vec<SliceInfo>,
    px1_off: usize,
    px2_off: usize,
    theta_len: usize,
    // Scratch
    joint: Vec<f64>,
    marginals: [Vec<f64>; 7],
    proj_strides: [[usize; 7]; 7],
}

/// Marginal slots: dropped-axis sets used by the three rate bounds.
/// 0: ¬y, 1: ¬x1, 2: ¬{x1,y}, 3: ¬x2, 4: ¬{x2,y}, 5: ¬{x1,x2},
/// 6: ¬{x1,x2,y}.  Axis order is (u, s̃1, s̃2, s, x1, x2, y).
const DROPS: [&[usize]; 7] = [
    &[6],
    &[4],
    &[4, 6],
    &[5],
    &[5, 6],
    &[4, 5],
    &[4, 5, 6],
];

impl<'a> Evaluator<'a> {
    fn new(dj: &'a DelayedJoint, ch: &'a DiscreteStateMac, nu: usize) -> Self {
        let (k1, k) = (dj.k1(), dj.k());
        let (nx1, nx2, ny) = (ch.nx1(), ch.nx2(), ch.ny());
        let dims = [nu, k1, k, k, nx1, nx2, ny];
        let mut layout = Vec::new();
        let mut offset = 0;
        for _a in 0..k1 {
            layout.push(SliceInfo {
                offset,
                width: nu,
                relevant: true,
            });
            offset += nu;
        }
        let px1_off = offset;
        for _ in 0..k1 * nu {
            layout.push(SliceInfo {
                offset,
                width: nx1,
                relevant: true,
            });
            offset += nx1;
        }
        let px2_off = offset;
        for a in 0..k1 {
            for b in 0..k {
                let relevant = dj.pair_weight(a, b) > 0.0;
                for _u in 0..nu {
                    layout.push(SliceInfo {
                        offset,
                        width: nx2,
                        relevant,
                    });
                    offset += nx2;
                }
            }
        }
        let theta_len = offset;
        let joint_len: usize = dims.iter().product();
        let mut proj_strides = [[0usize; 7]; 7];
        let mut marginals: [Vec<f64>; 7] = Default::default();
        for (slot, drops) in DROPS.iter().enumerate() {
            let kept_dims: Vec<usize> = (0..7)
                .map(|ax| if drops.contains(&ax) { 1 } else { dims[ax] })
                .collect();
            let st = strides_of(&kept_dims);
            for ax in 0..7 {
                proj_strides[slot][ax] = if drops.contains(&ax) { 0 } else { st[ax] };
            }
            marginals[slot] = vec![0.0; kept_dims.iter().product()];
        }
        Self {
            dj,
            ch,
            nu,
            k1,
            k,
            nx1,
            nx2,
            ny,
            dims,
            layout,
            px1_off,
            px2_off,
            theta_len,
            joint: vec![0.0; joint_len],
            marginals,
            proj_strides,
        }
    }

    fn uniform_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.theta_len];
        for slice in &self.layout {
            let v = 1.0 / slice.width as f64;
            theta[slice.offset..slice.offset + slice.width]
                .iter_mut()
                .for_each(|x| *x = v);
        }
        theta
    }

    fn start_point(&self, idx: usize, seed: u64) -> Vec<f64> {
        match idx {
            0 => self.uniform_theta(),
            1 | 2 => {
                // Deterministic corner starts: couple symbols to states.
                let shift = idx - 1;
                let mut theta = vec![0.0; self.theta_len];
                for a in 0..self.k1 {
                    theta[self.layout[a].offset + (a + shift) % self.nu] = 1.0;
                }
                for a in 0..self.k1 {
                    for u in 0..self.nu {
                        let slice = &self.layout[self.k1 + a * self.nu + u];
                        theta[slice.offset + (a + shift) % self.nx1] = 1.0;
                    }
                }
                let px2_slice0 = self.k1 + self.k1 * self.nu;
                for a in 0..self.k1 {
                    for b in 0..self.k {
                        for u in 0..self.nu {
                            let slice =
                                &self.layout[px2_slice0 + (a * self.k + b) * self.nu + u];
                            theta[slice.offset + (b + shift) % self.nx2] = 1.0;
                        }
                    }
                }
                theta
            }
            _ => {
                // Dirichlet(1) on every slice, a fresh deterministic stream
                // per start index.
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(
                    seed ^ (idx as u64).wrapping_mul(0x9e3779b97f4a7c15),
                );
                let mut theta = vec![0.0; self.theta_len];
                for slice in &self.layout {
                    let xs = &mut theta[slice.offset..slice.offset + slice.width];
                    let mut sum = 0.0;
                    for x in xs.iter_mut() {
                        let u = next_f64(&mut rng);
                        *x = -(1.0 - u).ln();
                        sum += *x;
                    }
                    xs.iter_mut().for_each(|x| *x /= sum);
                }
                theta
            }
        }
    }

    fn policy_of(&self, theta: &[f64]) -> Result<InputPolicy, InforateError> {
        InputPolicy::new(
            self.nu,
            self.k1,
            self.k,
            self.nx1,
            self.nx2,
            theta[..self.px1_off].to_vec(),
            theta[self.px1_off..self.px2_off].to_vec(),
            theta[self.px2_off..].to_vec(),
        )
    }

    #[inline]
    fn pu(&self, theta: &[f64], a: usize, u: usize) -> f64 {
        theta[a * self.nu + u]
    }

    #[inline]
    fn px1(&self, theta: &[f64], a: usize, u: usize, x1: usize) -> f64 {
        theta[self.px1_off + (a * self.nu + u) * self.nx1 + x1]
    }

    #[inline]
    fn px2(&self, theta: &[f64], a: usize, b: usize, u: usize, x2: usize) -> f64 {
        theta[self.px2_off + ((a * self.k + b) * self.nu + u) * self.nx2 + x2]
    }

    /// Assemble the joint and all marginals for the current policy.
    fn load(&mut self, theta: &[f64]) {
        self.joint.iter_mut().for_each(|v| *v = 0.0);
        for m in self.marginals.iter_mut() {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut flat = 0usize;
        for u in 0..self.nu {
            for a in 0..self.k1 {
                let f_u = self.pu(theta, a, u);
                for b in 0..self.k {
                    for s in 0..self.k {
                        let f_state = self.dj.prob(a, b, s);
                        for x1 in 0..self.nx1 {
                            let f_x1 = self.px1(theta, a, u, x1);
                            for x2 in 0..self.nx2 {
                                let f_x2 = self.px2(theta, a, b, u, x2);
                                let stem = f_u * f_state * f_x1 * f_x2;
                                for y in 0..self.ny {
                                    self.joint[flat] = stem * self.ch.prob(y, x1, x2, s);
                                    flat += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        // Project into the seven marginals in one odometer pass.
        let dims = self.dims;
        let mut coords = [0usize; 7];
        let mut projs = [0usize; 7];
        for (flat, &p) in self.joint.iter().enumerate() {
            for slot in 0..7 {
                self.marginals[slot][projs[slot]] += p;
            }
            if flat + 1 == self.joint.len() {
                break;
            }
            let mut ax = 6;
            loop {
                coords[ax] += 1;
                for slot in 0..7 {
                    projs[slot] += self.proj_strides[slot][ax];
                }
                if coords[ax] < dims[ax] {
                    break;
                }
                for slot in 0..7 {
                    projs[slot] -= self.proj_strides[slot][ax] * dims[ax];
                }
                coords[ax] = 0;
                ax -= 1;
            }
        }
    }

    fn entropies(&self) -> (f64, [f64; 7]) {
        let h_joint = entropy_nats(&self.joint);
        let mut hs = [0.0; 7];
        for (slot, m) in self.marginals.iter().enumerate() {
            hs[slot] = entropy_nats(m);
        }
        (h_joint, hs)
    }

    /// The three rate bounds at the loaded policy (bits).
    fn triple_loaded(&self) -> RateTriple {
        let (h, hs) = self.entropies();
        let r1 = (hs[0] + hs[1] - h - hs[2]) / LN_2;
        let r2 = (hs[0] + hs[3] - h - hs[4]) / LN_2;
        let rsum = (hs[0] + hs[5] - h - hs[6]) / LN_2;
        let clip = |v: f64| if v < 0.0 { 0.0 } else { v };
        RateTriple {
            r1: clip(r1),
            r2: clip(r2),
            rsum: clip(rsum),
        }
    }

    fn triple_of(&mut self, theta: &[f64]) -> RateTriple {
        self.load(theta);
        self.triple_loaded()
    }

    fn objective(&mut self, coeff: (f64, f64, f64), theta: &[f64]) -> f64 {
        let t = self.triple_of(theta);
        coeff.0 * t.r1 + coeff.1 * t.r2 + coeff.2 * t.rsum
    }

    /// Analytic gradient of `c1·r1 + c3·r2 + c2·rsum` with respect to theta,
    /// using `∂I/∂p = ln` of conditional ratios at each cell. Cells with zero
    /// probability get a floored log so boundary policies still produce a
    /// usable ascent direction.
    fn gradient(&mut self, coeff: (f64, f64, f64), theta: &[f64], grad: &mut [f64]) {
        let (c1, c3, c2) = (coeff.0, coeff.1, coeff.2);
        self.load(theta);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let dims = self.dims;
        let mut coords = [0usize; 7];
        let mut projs = [0usize; 7];
        const FLOOR: f64 = 1e-100;
        for (flat, &p) in self.joint.iter().enumerate() {
            let (u, a, b, s) = (coords[0], coords[1], coords[2], coords[3]);
            let (x1, x2) = (coords[4], coords[5]);
            let f_state = self.dj.prob(a, b, s);
            if f_state > 0.0 {
                let f_ch = self.ch.prob(coords[6], x1, x2, s);
                if f_ch > 0.0 {
                    let f_u = self.pu(theta, a, u);
                    let f_x1 = self.px1(theta, a, u, x1);
                    let f_x2 = self.px2(theta, a, b, u, x2);
                    let base = f_state * f_ch;
                    let mut g_cell = 0.0;
                    let ratio = |num: f64, d1: f64, d2: f64| {
                        ((num.max(FLOOR)) / (d1 * d2).max(FLOOR)).ln()
                    };
                    if c1 != 0.0 {
                        g_cell += c1
                            * ratio(
                                p * self.marginals[2][projs[2]],
                                self.marginals[0][projs[0]],
                                self.marginals[1][projs[1]],
                            );
                    }
                    if c3 != 0.0 {
                        g_cell += c3
                            * ratio(
                                p * self.marginals[4][projs[4]],
                                self.marginals[0][projs[0]],
                                self.marginals[3][projs[3]],
                            );
                    }
                    if c2 != 0.0 {
                        g_cell += c2
                            * ratio(
                                p * self.marginals[6][projs[6]],
                                self.marginals[0][projs[0]],
                                self.marginals[5][projs[5]],
                            );
                    }
                    g_cell /= LN_2;
                    grad[a * self.nu + u] += g_cell * base * f_x1 * f_x2;
                    grad[self.px1_off + (a * self.nu + u) * self.nx1 + x1] +=
                        g_cell * base * f_u * f_x2;
                    grad[self.px2_off + ((a * self.k + b) * self.nu + u) * self.nx2 + x2] +=
                        g_cell * base * f_u * f_x1;
                }
            }
            if flat + 1 == self.joint.len() {
                break;
            }
            let mut ax = 6;
            loop {
                coords[ax] += 1;
                for slot in 0..7 {
                    projs[slot] += self.proj_strides[slot][ax];
                }
                if coords[ax] < dims[ax] {
                    break;
                }
                for slot in 0..7 {
                    projs[slot] -= self.proj_strides[slot][ax] * dims[ax];
                }
                coords[ax] = 0;
                ax -= 1;
            }
        }
    }

    /// Project onto the product of simplices and renormalize each slice.
    fn project(&self, theta: &mut [f64]) {
        for slice in &self.layout {
            let xs = &mut theta[slice.offset..slice.offset + slice.width];
            if !slice.relevant {
                let v = 1.0 / slice.width as f64;
                xs.iter_mut().for_each(|x| *x = v);
                continue;
            }
            project_simplex(xs);
            let sum: f64 = xs.iter().sum();
            xs.iter_mut().for_each(|x| *x /= sum);
        }
    }

    /// Projected gradient ascent with Armijo backtracking; "stalled" means
    /// the objective improved by less than `stall_tol` over `stall_iters`
    /// consecutive iterations, which is the convergence criterion.
    fn ascend(
        &mut self,
        coeff: (f64, f64, f64),
        mut theta: Vec<f64>,
        opts: &SolveOptions,
    ) -> (Vec<f64>, f64, bool) {
        self.project(&mut theta);
        let mut grad = vec![0.0; self.theta_len];
        let mut value = self.objective(coeff, &theta);
        let mut history = Vec::with_capacity(opts.max_iters + 1);
        history.push(value);
        let mut step = 0.5f64;
        for _iter in 0..opts.max_iters {
            self.gradient(coeff, &theta, &mut grad);
            let mut t = step;
            let mut accepted = false;
            for _ in 0..45 {
                let mut cand: Vec<f64> = theta
                    .iter()
                    .zip(&grad)
                    .map(|(&x, &g)| x + t * g)
                    .collect();
                self.project(&mut cand);
                let inner: f64 = cand
                    .iter()
                    .zip(&theta)
                    .zip(&grad)
                    .map(|((&c, &x), &g)| (c - x) * g)
                    .sum();
                let cand_value = self.objective(coeff, &cand);
                if cand_value >= value + 1e-4 * inner.max(0.0) && cand_value > value {
                    theta = cand;
                    value = cand_value;
                    accepted = true;
                    break;
                }
                if inner.abs() < 1e-16 {
                    break;
                }
                t *= 0.5;
            }
            step = if accepted {
                (t * 2.0).min(4.0)
            } else {
                (step * 0.5).max(1e-12)
            };
            history.push(value);
            let win = opts.stall_iters;
            if history.len() > win && value - history[history.len() - 1 - win] < opts.stall_tol {
                return (theta, value, true);
            }
        }
        (theta, value, false)
    }
}

fn entropy_nats(p: &[f64]) -> f64 {
    kahan_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()))
}

/// Euclidean projection onto the probability simplex (sort-based, exact).
fn project_simplex(x: &mut [f64]) {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if v - candidate > 0.0 {
            tau = candidate;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
}

fn next_f64(rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
