//! Brute-force verifiers: none of these use the structural results the
//! constructions rely on.

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::lp::{Cmp, LinearProgram};
use crate::marginals::{closed_form_xy, slack_total, Convention, DiscreteDist};
use crate::prior::PriorBySum;
use crate::transport::secmax;
use crate::ATOM_TOL;

pub const GRID_MAX_N: usize = 3;
pub const GRID_MAX_POINTS: usize = 12;
const JOINT_MAX_VARS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    points: Vec<f64>,
}

impl GridSpec {
    /// Sorts, deduplicates and adds the endpoints 0 and 1.
    pub fn new(points: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut pts: Vec<f64> = points.into_iter().chain([0.0, 1.0]).collect();
        if pts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return invalid("grid points must lie in [0, 1]");
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= ATOM_TOL);
        Ok(Self { points: pts })
    }

    pub fn uniform(intervals: usize) -> Result<Self> {
        Self::new((0..=intervals.max(1)).map(|i| i as f64 / intervals.max(1) as f64))
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Optimal revenue of the full signaling problem with bids restricted to the grid.
///
/// One variable π(x | o) per click profile o with positive probability and bid
/// profile x ∈ gridⁿ. Calibration is imposed per bidder and per grid value.
pub fn grid_lp_optimal(prior: &PriorBySum, grid: &GridSpec) -> Result<f64> {
    let n = prior.n();
    if n > GRID_MAX_N {
        return invalid(format!("grid LP supports n <= {GRID_MAX_N}, got {n}"));
    }
    let g = grid.len();
    if g > GRID_MAX_POINTS {
        return invalid(format!("grid LP supports at most {GRID_MAX_POINTS} points, got {g}"));
    }
    let pts = grid.points();
    let binom = |k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let profiles: Vec<(Vec<u8>, f64)> = (0..1usize << n)
        .map(|mask| {
            let o: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
            let k = o.iter().filter(|&&b| b == 1).count();
            (o, prior.lam(k) / binom(k))
        })
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let bids: Vec<Vec<usize>> = (0..n).map(|_| 0..g).multi_cartesian_product().collect();
    let nb = bids.len();
    let nvars = profiles.len() * nb;

    let mut objective = vec![0.0; nvars];
    for (p, (_, lam)) in profiles.iter().enumerate() {
        for (j, x) in bids.iter().enumerate() {
            let vals: Vec<f64> = x.iter().map(|&i| pts[i]).collect();
            objective[p * nb + j] = lam * secmax(&vals);
        }
    }
    let mut lp = LinearProgram::new(objective);
    for p in 0..profiles.len() {
        let row: Vec<(usize, f64)> = (0..nb).map(|j| (p * nb + j, 1.0)).collect();
        lp.add_sparse(&row, Cmp::Eq, 1.0);
    }
    for i in 0..n {
        for (v, &val) in pts.iter().enumerate() {
            let mut row = Vec::new();
            for (p, (o, lam)) in profiles.iter().enumerate() {
                let coef = lam * (o[i] as f64 - val);
                if coef == 0.0 {
                    continue;
                }
                for (j, x) in bids.iter().enumerate() {
                    if x[i] == v {
                        row.push((p * nb + j, coef));
                    }
                }
            }
            if !row.is_empty() {
                lp.add_sparse(&row, Cmp::Eq, 0.0);
            }
        }
    }
    Ok(lp.maximize()?.value)
}

/// Exact maximum expected secmax over couplings of k draws from f1 and n−k
/// draws from f0.
///
/// Any coupling can be symmetrized within the two groups without changing its
/// value, so it suffices to put weight on unordered multisets: a pair of
/// multisets with weight w contributes w·count(v)/k to the f1-marginal at v.
pub fn brute_force_transport(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<f64> {
    if k > n || n < 2 {
        return invalid(format!("need 0 <= k <= n and n >= 2, got k={k}, n={n}"));
    }
    let one = DiscreteDist::point(1.0);
    let zero = DiscreteDist::point(0.0);
    let f1 = if k > 0 {
        f1.ok_or_else(|| crate::Error::Invalid(format!("f1 missing for k={k}")))?
    } else {
        &one
    };
    let f0 = if k < n {
        f0.ok_or_else(|| crate::Error::Invalid(format!("f0 missing for k={k}")))?
    } else {
        &zero
    };
    let ms1: Vec<Vec<usize>> = (0..f1.len()).combinations_with_replacement(k).collect();
    let ms0: Vec<Vec<usize>> = (0..f0.len()).combinations_with_replacement(n - k).collect();
    let nvars = ms1.len() * ms0.len();
    if nvars > JOINT_MAX_VARS {
        return invalid(format!("joint support too large: {nvars} multiset pairs"));
    }
    let mut objective = Vec::with_capacity(nvars);
    for a in &ms1 {
        for b in &ms0 {
            let vals: Vec<f64> = a.iter().map(|&i| f1.support()[i]).chain(b.iter().map(|&i| f0.support()[i])).collect();
            objective.push(secmax(&vals));
        }
    }
    let mut lp = LinearProgram::new(objective);
    if k > 0 {
        for (v, &p) in f1.probs().iter().enumerate() {
            let mut row = Vec::new();
            for (ia, a) in ms1.iter().enumerate() {
                let c = a.iter().filter(|&&i| i == v).count();
                if c > 0 {
                    row.extend((0..ms0.len()).map(|ib| (ia * ms0.len() + ib, c as f64)));
                }
            }
            lp.add_sparse(&row, Cmp::Eq, k as f64 * p);
        }
    }
    if k < n {
        for (v, &p) in f0.probs().iter().enumerate() {
            let mut row = Vec::new();
            for ib in 0..ms0.len() {
                let c = ms0[ib].iter().filter(|&&i| i == v).count();
                if c > 0 {
                    row.extend((0..ms1.len()).map(|ia| (ia * ms0.len() + ib, c as f64)));
                }
            }
            lp.add_sparse(&row, Cmp::Eq, (n - k) as f64 * p);
        }
    }
    let all: Vec<(usize, f64)> = (0..nvars).map(|j| (j, 1.0)).collect();
    lp.add_sparse(&all, Cmp::Eq, 1.0);
    Ok(lp.maximize()?.value)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub x_best: f64,
    pub value: f64,
    pub closed_form_x: f64,
    /// |x_best − closed_form_x| ≤ 1e−5.
    pub matches_closed_form: bool,
}

/// Revenue of the marginal design as a function of the slack x given to the
/// single-click class.
pub fn marginal_objective(prior: &PriorBySum, x: f64, conv: Convention) -> f64 {
    let (l0, l1) = (prior.lam(0), prior.lam(1));
    let y = slack_total(prior) - x;
    let t1_term = if l1 > 0.0 { l1 * (l1 + x) / (2.0 * l1 + x) } else { 0.0 };
    let t0_term = if l0 > 0.0 {
        let d = match conv {
            Convention::MainText => l0,
            Convention::Appendix => 2.0 * l0,
        };
        l0 * y / (d + y)
    } else {
        0.0
    };
    t1_term + t0_term + prior.full_info_revenue()
}

pub fn scan_marginal_objective(prior: &PriorBySum, resolution: usize, conv: Convention) -> Result<ScanResult> {
    if resolution < 1000 {
        return invalid(format!("scan resolution must be >= 1000, got {resolution}"));
    }
    let big_a = slack_total(prior);
    let f = |x: f64| marginal_objective(prior, x, conv);
    let step = big_a / resolution as f64;
    let (i_best, _) = (0..=resolution)
        .into_par_iter()
        .map(|i| (i, f(i as f64 * step)))
        .reduce(|| (0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
    let mut x_best = i_best as f64 * step;
    let mut value = f(x_best);
    if big_a > 0.0 {
        // Golden-section search on the bracket around the grid maximum.
        let (mut lo, mut hi) = ((x_best - step).max(0.0), (x_best + step).min(big_a));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (hi - r * (hi - lo), lo + r * (hi - lo));
        for _ in 0..100 {
            if f(c) >= f(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - r * (hi - lo);
            d = lo + r * (hi - lo);
        }
        let xm = 0.5 * (lo + hi);
        if f(xm) >= value {
            x_best = xm;
            value = f(xm);
        }
    }
    let closed_form_x = closed_form_xy(prior).0;
    Ok(ScanResult { x_best, value, closed_form_x, matches_closed_form: (x_best - closed_form_x).abs() <= 1e-5 })
}
