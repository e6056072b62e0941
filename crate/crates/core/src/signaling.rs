use std::collections::BTreeMap;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ir::IrInfo;
use crate::marginals::{optimal_marginals_from, solve_linsys, thresholds_from, Convention, DiscreteDist, MarginalFamily};
use crate::prior::PriorBySum;
use crate::transport::{correlate, induced_secmax, PlanRow, TransportPlan};
use crate::ATOM_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Optimal,
    Ir,
    FullInfo,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalingMeta {
    pub t1: f64,
    pub t0: f64,
    pub variant: Variant,
    pub family: MarginalFamily,
}

/// A symmetric calibrated signaling: one canonical plan per click count k,
/// with the first k coordinates clicking. Realized profiles are obtained by
/// placing the canonical coordinates on the clicking and non-clicking bidders
/// uniformly at random.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedSignaling {
    pub prior: PriorBySum,
    pub meta: SignalingMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<IrInfo>,
    pub plans: Vec<TransportPlan>,
}

impl CalibratedSignaling {
    pub fn n(&self) -> usize {
        self.prior.n()
    }

    /// Structural checks for bundles read from disk.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.plans.len() != n + 1 {
            return invalid(format!("expected {} plans, found {}", n + 1, self.plans.len()));
        }
        for (k, p) in self.plans.iter().enumerate() {
            if p.k != k || p.n != n {
                return invalid(format!("plan {k} is labelled (n={}, k={})", p.n, p.k));
            }
            if p.rows.iter().any(|r| r.bids.len() != n || r.w < 0.0 || r.bids.iter().any(|b| !(0.0..=1.0).contains(b))) {
                return invalid(format!("plan {k} has a malformed row"));
            }
        }
        Ok(())
    }
}

pub(crate) fn assemble(prior: &PriorBySum, fam: &MarginalFamily) -> Result<Vec<TransportPlan>> {
    let n = prior.n();
    (0..=n).into_par_iter().map(|k| correlate(k, fam.f1(k), fam.f0(k), n)).collect()
}

/// The revenue-optimal calibrated signaling.
pub fn design_optimal(prior: &PriorBySum) -> Result<CalibratedSignaling> {
    let lin = solve_linsys(prior)?;
    let th = thresholds_from(prior, &lin, Convention::Appendix);
    let family = optimal_marginals_from(prior, &lin, &th)?;
    let plans = assemble(prior, &family)?;
    Ok(CalibratedSignaling {
        prior: prior.clone(),
        meta: SignalingMeta { t1: th.t1, t0: th.t0, variant: Variant::Optimal, family },
        ir: None,
        plans,
    })
}

/// Reveal the outcome profile itself.
pub fn full_information(prior: &PriorBySum) -> CalibratedSignaling {
    let n = prior.n();
    let plans = (0..=n)
        .map(|k| {
            let bids = (0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
            TransportPlan { n, k, rows: vec![PlanRow { bids, w: 1.0 }] }
        })
        .collect();
    let f1 = (1..=n).map(|_| DiscreteDist::point(1.0)).collect();
    let f0 = (0..n).map(|_| DiscreteDist::point(0.0)).collect();
    let family = MarginalFamily::new(n, f1, f0).expect("shape is fixed");
    CalibratedSignaling {
        prior: prior.clone(),
        meta: SignalingMeta { t1: 1.0, t0: 0.0, variant: Variant::FullInfo, family },
        ir: None,
        plans,
    }
}

/// Expected second-highest bid.
pub fn revenue(sig: &CalibratedSignaling) -> f64 {
    sig.plans.iter().enumerate().map(|(k, p)| sig.prior.lam(k) * p.expected_secmax()).sum()
}

pub fn conditional_secmax(sig: &CalibratedSignaling, k: usize) -> Result<DiscreteDist> {
    match sig.plans.get(k) {
        Some(p) => induced_secmax(p),
        None => invalid(format!("class k = {k} outside [0, {}]", sig.n())),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationCheck {
    pub passed: bool,
    pub max_violation: f64,
    pub worst_value: Option<f64>,
    /// (bid value, click probability given that bid)
    pub points: Vec<(f64, f64)>,
}

/// E[o_i | x_i = x] = x for every bid value, computed from the plans.
pub fn verify_calibration(sig: &CalibratedSignaling, tol: f64) -> CalibrationCheck {
    let mut acc: Vec<(f64, f64, f64)> = Vec::new();
    for (k, plan) in sig.plans.iter().enumerate() {
        let lam = sig.prior.lam(k);
        if lam <= 0.0 {
            continue;
        }
        for r in &plan.rows {
            for (i, &x) in r.bids.iter().enumerate() {
                let m = lam * r.w;
                acc.push((x, if i < k { m } else { 0.0 }, m));
            }
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, f64)> = Vec::new();
    for (x, c, t) in acc {
        match merged.last_mut() {
            Some(l) if x - l.0 < ATOM_TOL => {
                l.1 += c;
                l.2 += t;
            }
            _ => merged.push((x, c, t)),
        }
    }
    let mut worst = 0.0;
    let mut at = None;
    let mut points = Vec::with_capacity(merged.len());
    for (x, c, t) in merged {
        if t <= 0.0 {
            continue;
        }
        let rate = c / t;
        points.push((x, rate));
        let v = (rate - x).abs();
        if v > worst {
            worst = v;
            at = Some(x);
        }
    }
    CalibrationCheck { passed: worst <= tol, max_violation: worst, worst_value: at, points }
}

/// Explicit signaling on outcome profiles: profile → [(bid profile, weight)].
pub type RawSignaling = BTreeMap<Vec<u8>, Vec<(Vec<f64>, f64)>>;

/// λ(o) = λ_k / C(n, k) for a profile with k ones.
pub fn profile_weight(prior: &PriorBySum, k: usize) -> f64 {
    let n = prior.n();
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    prior.lam(k) / c
}

fn check_raw(raw: &RawSignaling, n: usize) -> Result<()> {
    if n > 10 {
        return invalid(format!("explicit profiles need n <= 10, got {n}"));
    }
    for (o, rows) in raw {
        if o.len() != n || o.iter().any(|&b| b > 1) {
            return invalid(format!("bad outcome profile {o:?}"));
        }
        if rows.iter().any(|(b, w)| b.len() != n || *w < 0.0) {
            return invalid(format!("bad bid row for profile {o:?}"));
        }
    }
    Ok(())
}

pub fn raw_revenue(raw: &RawSignaling, prior: &PriorBySum) -> f64 {
    raw.iter()
        .map(|(o, rows)| {
            let k = o.iter().filter(|&&b| b == 1).count();
            profile_weight(prior, k) * rows.iter().map(|(b, w)| w * crate::transport::secmax(b)).sum::<f64>()
        })
        .sum()
}

/// Averages a raw signaling over all bidder permutations and reduces it to
/// canonical per-class plans. Revenue is unchanged.
pub fn symmetrize(raw: &RawSignaling, prior: &PriorBySum) -> Result<CalibratedSignaling> {
    let n = prior.n();
    check_raw(raw, n)?;
    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let nperm = perms.len() as f64;
    let mut plans = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let canon: Vec<u8> = (0..n).map(|i| u8::from(i < k)).collect();
        let mut rows = Vec::new();
        for sigma in &perms {
            // π̄(x | o) averages π(x∘σ | o∘σ); with o canonical, (o∘σ)_i = o_{σ(i)}.
            let o: Vec<u8> = sigma.iter().map(|&s| canon[s]).collect();
            let Some(list) = raw.get(&o) else { continue };
            for (z, w) in list {
                let mut x = vec![0.0; n];
                for (i, &s) in sigma.iter().enumerate() {
                    x[s] = z[i];
                }
                rows.push(PlanRow { bids: x, w: w / nperm });
            }
        }
        let mut plan = TransportPlan::from_rows(n, k, rows);
        if plan.rows.is_empty() {
            // Class never specified: treat it as full information.
            plan.rows.push(PlanRow { bids: canon.iter().map(|&b| b as f64).collect(), w: 1.0 });
        }
        plans.push(plan);
    }
    let family = family_from_plans(&plans, n)?;
    Ok(CalibratedSignaling {
        prior: prior.clone(),
        meta: SignalingMeta { t1: f64::NAN, t0: f64::NAN, variant: Variant::Custom, family },
        ir: None,
        plans,
    })
}

/// Per-class marginals read off coordinate 0 (outcome 1) and coordinate n−1 (outcome 0).
pub fn family_from_plans(plans: &[TransportPlan], n: usize) -> Result<MarginalFamily> {
    let norm = |plan: &TransportPlan, i: usize| -> Result<DiscreteDist> {
        let atoms = plan.coordinate_marginal(i);
        let tot: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteDist::new(atoms.into_iter().map(|(x, p)| (x, p / tot)))
    };
    let f1 = (1..=n).map(|k| norm(&plans[k], 0)).collect::<Result<Vec<_>>>()?;
    let f0 = (0..n).map(|k| norm(&plans[k], n - 1)).collect::<Result<Vec<_>>>()?;
    MarginalFamily::new(n, f1, f0)
}

/// Largest deviation from the symmetric-marginal property: within each class,
/// all clicking coordinates share one marginal and all others share another.
pub fn symmetry_defect(sig: &CalibratedSignaling) -> f64 {
    let n = sig.n();
    let mut worst: f64 = 0.0;
    for (k, plan) in sig.plans.iter().enumerate() {
        for (lo, hi) in [(0, k), (k, n)] {
            if hi <= lo {
                continue;
            }
            let first = plan.coordinate_marginal(lo);
            for i in lo + 1..hi {
                let other = plan.coordinate_marginal(i);
                for &(x, p) in &first {
                    let q: f64 = other.iter().filter(|a| (a.0 - x).abs() < ATOM_TOL).map(|a| a.1).sum();
                    worst = worst.max((p - q).abs());
                }
                for &(x, q) in &other {
                    let p: f64 = first.iter().filter(|a| (a.0 - x).abs() < ATOM_TOL).map(|a| a.1).sum();
                    worst = worst.max((p - q).abs());
                }
            }
        }
    }
    worst
}
