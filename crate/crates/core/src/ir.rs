//! Individually rational approximation.
//!
//! The single-click class gets a strictly increasing ladder of calibrated bid
//! levels around t*_1, and the clicking bidder always bids one level above the
//! non-clicking one, so that bidder wins alone. The other classes keep the shape
//! of the optimal design. The ladder is calibrated level by level. Clicked mass
//! for each level comes from the t*_1 atoms of the classes k ≥ 2. Any shortfall
//! is moved down from their atoms at 1. In region 2 the t0 atoms are lowered to
//! t_{0,IR}, so revenue equals welfare.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginals::{solve_linsys, thresholds_from, Convention, DiscreteDist, LinSysSolution, MarginalFamily, Thresholds};
use crate::prior::PriorBySum;
use crate::signaling::{CalibratedSignaling, SignalingMeta, Variant};
use crate::transport::{correlate, secmax, secmax_upper_bound, PlanRow, TransportPlan};

/// Ladder t_{1,IR,l} for l in [−M, M], stored at index l + M.
#[derive(Debug, Clone, Serialize)]
pub struct SerratedSequence {
    #[serde(rename = "M")]
    pub m: usize,
    pub c_star: f64,
    pub t1_star: f64,
    /// Offset added to l in the step formula; nonzero only when c* < ε²(M−1)/2M.
    pub shift: usize,
    pub levels: Vec<f64>,
}

impl SerratedSequence {
    pub fn level(&self, l: i64) -> f64 {
        self.levels[(l + self.m as i64) as usize]
    }

    /// Mean of the 2M levels below the top one.
    pub fn mean_levels(&self) -> f64 {
        let k = 2 * self.m;
        self.levels[..k].iter().sum::<f64>() / k as f64
    }
}

/// Extra fields carried by an IR bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrInfo {
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub region: u8,
    pub levels: Vec<f64>,
    pub t0_ir: f64,
    pub shift: usize,
    /// Clicked mass (λ_k·k-weighted) moved off atoms at 1 to fund the ladder.
    pub deficit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IrMarginalFamily {
    pub epsilon: f64,
    pub region: u8,
    pub thresholds: Thresholds,
    pub linsys: LinSysSolution,
    pub seq: SerratedSequence,
    pub t0_ir: f64,
    /// Indexed by k; b_{k,IR}.
    pub b_ir: Vec<f64>,
    /// Per k: (level index, weight) of f_{k,1,IR} on the ladder.
    pub level_mass: Vec<Vec<(usize, f64)>>,
    /// Per k: weight moved from the atom at 1 onto the ladder.
    pub drawn: Vec<f64>,
    pub deficit: f64,
    pub family: MarginalFamily,
}

/// 1 when t*_0·λ0 ≤ λ1·(1 − t*_1) (ties included), else 2.
pub fn region_of(prior: &PriorBySum, th: &Thresholds) -> u8 {
    if prior.lam(0) <= 0.0 || th.t0 * prior.lam(0) <= prior.lam(1) * (1.0 - th.t1) {
        1
    } else {
        2
    }
}

pub fn region(prior: &PriorBySum) -> Result<u8> {
    let lin = solve_linsys(prior)?;
    Ok(region_of(prior, &thresholds_from(prior, &lin, Convention::Appendix)))
}

/// min(√λ1, 4λn/λ1): the sufficient condition stated with the approximation guarantee.
pub fn stated_epsilon_bound(prior: &PriorBySum) -> f64 {
    let l1 = prior.lam(1);
    if l1 <= 0.0 {
        return 0.0;
    }
    l1.sqrt().min(4.0 * prior.lam(prior.n()) / l1)
}

enum BuildError {
    Bound(String),
    Other(Error),
}

impl From<Error> for BuildError {
    fn from(e: Error) -> Self {
        BuildError::Other(e)
    }
}

fn ladder(l1: f64, c_star: f64, t1: f64, eps: f64) -> SerratedSequence {
    let m = ((1.0 / eps) - 1e-9).ceil().max(1.0) as usize;
    let mf = m as f64;
    let e2 = eps * eps;
    let shift = if c_star >= e2 * (mf - 1.0) / (2.0 * mf) {
        0
    } else {
        ((mf - 1.0 - 2.0 * mf * c_star / e2).ceil().max(0.0) as usize).min(m - 1)
    };
    let big_b = 2.0 * l1 + c_star;
    let mut levels = Vec::with_capacity(2 * m + 1);
    for idx in 0..2 * m {
        let s = (idx as f64 - mf + shift as f64) / (2.0 * mf);
        levels.push(t1 + s * l1 / ((big_b + s * e2) * big_b) * e2);
    }
    levels.push(1.0);
    SerratedSequence { m, c_star, t1_star: t1, shift, levels }
}

pub fn serrated_sequence(prior: &PriorBySum, epsilon: f64) -> Result<SerratedSequence> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::EpsilonRange { bound: "0 < epsilon <= 1".into(), max_valid: max_valid_epsilon(prior) });
    }
    if prior.lam(1) <= 0.0 {
        return Err(Error::EpsilonRange { bound: "epsilon <= sqrt(lambda_1)".into(), max_valid: 0.0 });
    }
    let lin = solve_linsys(prior)?;
    let th = thresholds_from(prior, &lin, Convention::Appendix);
    Ok(ladder(prior.lam(1), lin.x_star, th.t1, epsilon))
}

/// t*_0 in region 1; otherwise λ1/(2Mλ0)·Σ_l (1 − t_{1,IR,l}), which makes the
/// bidders' total surplus exactly zero.
pub fn ir_threshold_t0(prior: &PriorBySum, _epsilon: f64, seq: &SerratedSequence) -> Result<f64> {
    let lin = solve_linsys(prior)?;
    let th = thresholds_from(prior, &lin, Convention::Appendix);
    Ok(t0_for_region(prior, &th, seq))
}

fn t0_for_region(prior: &PriorBySum, th: &Thresholds, seq: &SerratedSequence) -> f64 {
    if region_of(prior, th) == 1 {
        th.t0
    } else {
        prior.lam(1) / prior.lam(0) * (1.0 - seq.mean_levels())
    }
}

fn build(prior: &PriorBySum, eps: f64) -> std::result::Result<IrMarginalFamily, BuildError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(BuildError::Bound("0 < epsilon <= 1".into()));
    }
    let n = prior.n();
    let nf = n as f64;
    let (l0, l1) = (prior.lam(0), prior.lam(1));
    if l1 <= 0.0 {
        return Err(BuildError::Bound("epsilon <= sqrt(lambda_1)".into()));
    }
    let lin = solve_linsys(prior)?;
    let th = thresholds_from(prior, &lin, Convention::Appendix);
    let c_star = lin.x_star;
    let seq = ladder(l1, c_star, th.t1, eps);
    let m = seq.m;
    let mf = m as f64;
    let e2 = eps * eps;

    // Clicked mass (Σ_k λ_k·k·f_{k,1}) each level needs from the classes k ≥ 2.
    let need: Vec<f64> = (0..2 * m)
        .map(|idx| {
            let s = (idx as f64 - mf + seq.shift as f64) / (2.0 * mf);
            let own = if idx == 0 { l1 } else { 0.0 };
            (own + c_star + s * e2) / (2.0 * mf)
        })
        .collect();
    if need[0] <= 0.0 || need.iter().any(|v| *v < -1e-15) {
        return Err(BuildError::Bound("epsilon <= sqrt(lambda_1)".into()));
    }

    let region = region_of(prior, &th);
    let mut b_ir = lin.b.clone();
    let t0_ir = t0_for_region(prior, &th, &seq);
    if region == 2 {
        let target = 2.0 * l0 * t0_ir / (1.0 - t0_ir);
        if !(t0_ir < 1.0) || target > lin.y_star * (1.0 + 1e-12) + 1e-15 {
            return Err(BuildError::Bound("region 2: t0_IR <= t0*".into()));
        }
        let mut cut = (lin.y_star - target).max(0.0);
        for k in (2..=n).rev() {
            let w = prior.lam(k) * k as f64;
            if w <= 0.0 || cut <= 0.0 {
                continue;
            }
            let r = lin.b[k].min(cut / w);
            b_ir[k] = lin.b[k] - r;
            cut -= w * r;
        }
    }
    let excess: Vec<f64> = (0..=n).map(|k| if k >= 2 { lin.b[k] - b_ir[k] } else { 0.0 }).collect();

    // Sources as (k, weighted amount, from_top): deficit first, then the t*_1 atoms.
    let total_need: f64 = need.iter().sum();
    let deficit = total_need - c_star;
    let mut sources: Vec<(usize, f64, bool)> = Vec::new();
    if deficit > 0.0 {
        let cap_of = |k: usize| {
            if region == 2 {
                prior.lam(k) * k as f64 * excess[k]
            } else {
                2.0 * prior.lam(k)
            }
        };
        let mut left = deficit;
        for k in (2..=n).rev() {
            let take = cap_of(k).min(left);
            if take > 0.0 {
                sources.push((k, take, true));
                left -= take;
            }
        }
        if left > 1e-12 * deficit.max(1e-300) {
            let bound = if region == 2 {
                "region 2: epsilon <= (2 n lambda_n / lambda_1)(b*_n - b_n,IR)"
            } else {
                "epsilon <= 4 lambda_n / lambda_1 (funding of the ladder)"
            };
            return Err(BuildError::Bound(bound.into()));
        }
    }
    for k in (2..=n).rev() {
        let w = prior.lam(k) * k as f64 * lin.a[k];
        if w > 0.0 {
            sources.push((k, w, false));
        }
    }

    let mut level_mass: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + 1];
    let mut drawn = vec![0.0; n + 1];
    let mut used_a = vec![0.0; n + 1];
    let mut si = 0;
    for (idx, &req) in need.iter().enumerate() {
        let mut left = req;
        while left > 0.0 && si < sources.len() {
            let (k, ref mut avail, top) = sources[si];
            let take = avail.min(left);
            if take > 0.0 {
                let unweighted = take / (prior.lam(k) * k as f64);
                level_mass[k].push((idx, unweighted));
                if top {
                    drawn[k] += unweighted;
                } else {
                    used_a[k] += unweighted;
                }
            }
            *avail -= take;
            left -= take;
            if *avail <= 0.0 {
                si += 1;
            }
        }
        if left > 1e-9 * total_need {
            return Err(BuildError::Other(Error::Numerical(format!("ladder level {idx} is short by {left:e}"))));
        }
        if left > 0.0 {
            // Rounding dust from summing many levels; take it from an atom at 1.
            let k = (2..=n).max_by(|&a, &b| (prior.lam(a) * a as f64).total_cmp(&(prior.lam(b) * b as f64))).expect("n >= 2");
            let unweighted = left / (prior.lam(k) * k as f64);
            level_mass[k].push((idx, unweighted));
            drawn[k] += unweighted;
        }
    }

    let t0_atom = if l0 > 0.0 { t0_ir } else { 1.0 };
    let mut f1 = Vec::with_capacity(n);
    let mut f0 = Vec::with_capacity(n);
    let unit = 1.0 / (2.0 * mf);
    f1.push(DiscreteDist::new((1..2 * m).map(|idx| (seq.levels[idx], unit)).chain([(1.0, unit)])).map_err(BuildError::Other)?);
    for k in 2..=n {
        let kf = k as f64;
        let top = 2.0 / kf + excess[k] - drawn[k] + (lin.a[k] - used_a[k]).max(0.0);
        let atoms = [(1.0, top.max(0.0)), (t0_atom, b_ir[k])]
            .into_iter()
            .chain(level_mass[k].iter().map(|&(idx, w)| (seq.levels[idx], w)));
        f1.push(DiscreteDist::new(atoms)?);
    }
    f0.push(DiscreteDist::new([(t0_ir, 2.0 / nf), (0.0, (nf - 2.0) / nf)])?);
    let share = unit / (nf - 1.0);
    f0.push(DiscreteDist::new((0..2 * m).map(|idx| (seq.levels[idx], share)).chain([(0.0, (nf - 2.0) / (nf - 1.0))]))?);
    for _ in 2..n {
        f0.push(DiscreteDist::point(0.0));
    }
    let family = MarginalFamily::new(n, f1, f0)?;
    let out = IrMarginalFamily {
        epsilon: eps,
        region,
        thresholds: th,
        linsys: lin,
        seq,
        t0_ir,
        b_ir,
        level_mass,
        drawn,
        deficit: deficit.max(0.0),
        family,
    };
    // Every class with a click is won by a clicking bidder, so total bidder
    // surplus is welfare minus revenue.
    let rev = ir_revenue(prior, &out)?;
    if rev > prior.welfare() + 1e-12 {
        return Err(BuildError::Bound("ex-ante individual rationality".into()));
    }
    Ok(out)
}

/// Largest ε in (0, 1] for which the construction succeeds, by bisection.
pub fn max_valid_epsilon(prior: &PriorBySum) -> f64 {
    if build(prior, 1.0).is_ok() {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mid < 1e-6 {
            break;
        }
        if build(prior, mid).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn ir_marginals(prior: &PriorBySum, epsilon: f64) -> Result<IrMarginalFamily> {
    match build(prior, epsilon) {
        Ok(f) => Ok(f),
        Err(BuildError::Other(e)) => Err(e),
        Err(BuildError::Bound(bound)) => Err(Error::EpsilonRange { bound, max_valid: max_valid_epsilon(prior) }),
    }
}

/// Revenue of the IR design computed from its marginals alone.
pub fn ir_revenue(prior: &PriorBySum, irm: &IrMarginalFamily) -> Result<f64> {
    let n = prior.n();
    let fam = &irm.family;
    let mut rev = 0.0;
    for k in 0..=n {
        let lam = prior.lam(k);
        if lam <= 0.0 {
            continue;
        }
        let v = if k == 1 {
            irm.seq.mean_levels()
        } else if k + 1 == n {
            secmax_upper_bound(k, fam.f1(k), None, k)?
        } else {
            secmax_upper_bound(k, fam.f1(k), fam.f0(k), n)?
        };
        rev += lam * v;
    }
    Ok(rev)
}

/// Single-click class: the clicking bidder bids level l+1 against level l.
fn staircase(irm: &IrMarginalFamily, n: usize) -> TransportPlan {
    let levels = &irm.seq.levels;
    let steps = 2 * irm.seq.m;
    let others = n - 1;
    let w = 1.0 / (steps as f64 * others as f64);
    let mut rows = Vec::with_capacity(steps * others);
    for idx in 0..steps {
        for pos in 0..others {
            let mut bids = vec![0.0; n];
            bids[0] = levels[idx + 1];
            bids[1 + pos] = levels[idx];
            rows.push(PlanRow { bids, w });
        }
    }
    TransportPlan::from_rows(n, 1, rows)
}

pub fn design_ir(prior: &PriorBySum, epsilon: f64) -> Result<CalibratedSignaling> {
    let irm = ir_marginals(prior, epsilon)?;
    let n = prior.n();
    let fam = &irm.family;
    let plans = (0..=n)
        .into_par_iter()
        .map(|k| if k == 1 { Ok(staircase(&irm, n)) } else { correlate(k, fam.f1(k), fam.f0(k), n) })
        .collect::<Result<Vec<_>>>()?;
    let info = IrInfo {
        epsilon,
        m: irm.seq.m,
        region: irm.region,
        levels: irm.seq.levels.clone(),
        t0_ir: irm.t0_ir,
        shift: irm.seq.shift,
        deficit: irm.deficit,
    };
    Ok(CalibratedSignaling {
        prior: prior.clone(),
        meta: SignalingMeta { t1: irm.thresholds.t1, t0: irm.t0_ir, variant: Variant::Ir, family: irm.family },
        ir: Some(info),
        plans,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityReport {
    /// Expected utility of each bidder (equal by symmetry).
    pub per_bidder: Vec<f64>,
    /// Contribution of each click class to a single bidder's utility.
    pub per_class: Vec<f64>,
}

/// Exact ex-ante utility under uniform tie-breaking. The winner's surplus uses
/// its realized click outcome: in a canonical row, coordinate i clicks iff i < k.
pub fn exante_utility(sig: &CalibratedSignaling) -> UtilityReport {
    let n = sig.n();
    let per_class: Vec<f64> = sig
        .plans
        .iter()
        .enumerate()
        .map(|(k, plan)| {
            let total: f64 = plan
                .rows
                .iter()
                .map(|r| {
                    let top = r.bids.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let price = secmax(&r.bids);
                    let winners: Vec<usize> = (0..n).filter(|&i| r.bids[i] == top).collect();
                    let gain: f64 = winners.iter().map(|&i| if i < k { 1.0 } else { 0.0 } - price).sum();
                    r.w * gain / winners.len() as f64
                })
                .sum();
            sig.prior.lam(k) * total / n as f64
        })
        .collect();
    let u: f64 = per_class.iter().sum();
    UtilityReport { per_bidder: vec![u; n], per_class }
}
