use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prior::PriorBySum;
use crate::ATOM_TOL;

/// Finitely supported distribution on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Atom {
    x: f64,
    p: f64,
}

impl DiscreteDist {
    /// Sorts, merges atoms closer than [`ATOM_TOL`], drops zero weights and
    /// checks that the total is 1 within 1e-9.
    pub fn new<I: IntoIterator<Item = (f64, f64)>>(atoms: I) -> Result<Self> {
        let mut v: Vec<(f64, f64)> = Vec::new();
        for (x, p) in atoms {
            if !x.is_finite() || !(-ATOM_TOL..=1.0 + ATOM_TOL).contains(&x) {
                return invalid(format!("support value {x} outside [0, 1]"));
            }
            if !p.is_finite() || p < -1e-12 {
                return invalid(format!("negative or non-finite weight {p} at {x}"));
            }
            if p > 0.0 {
                v.push((x.clamp(0.0, 1.0), p));
            }
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::with_capacity(v.len());
        let mut probs: Vec<f64> = Vec::with_capacity(v.len());
        for (x, p) in v {
            match support.last() {
                Some(&last) if x - last < ATOM_TOL => *probs.last_mut().unwrap() += p,
                _ => {
                    support.push(x);
                    probs.push(p);
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("weights sum to {total}, expected 1"));
        }
        Ok(Self { support, probs })
    }

    pub fn point(x: f64) -> Self {
        Self { support: vec![x.clamp(0.0, 1.0)], probs: vec![1.0] }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn atoms(&self) -> impl DoubleEndedIterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    /// Weight of the atom within [`ATOM_TOL`] of `x`, or 0.
    pub fn mass_at(&self, x: f64) -> f64 {
        let i = self.support.partition_point(|&s| s < x - ATOM_TOL);
        match self.support.get(i) {
            Some(&s) if (s - x).abs() < ATOM_TOL => self.probs[i],
            _ => 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(x, p)| x * p).sum()
    }

    /// Largest absolute weight difference over the union of supports.
    pub fn distance(&self, other: &DiscreteDist) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, p) in self.atoms() {
            worst = worst.max((p - other.mass_at(x)).abs());
        }
        for (x, p) in other.atoms() {
            worst = worst.max((p - self.mass_at(x)).abs());
        }
        worst
    }

    pub fn is_point(&self, x: f64) -> bool {
        self.len() == 1 && (self.support[0] - x).abs() < ATOM_TOL
    }
}

impl Serialize for DiscreteDist {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let atoms: Vec<Atom> = self.atoms().map(|(x, p)| Atom { x, p }).collect();
        atoms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteDist {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let atoms = Vec::<Atom>::deserialize(d)?;
        DiscreteDist::new(atoms.into_iter().map(|a| (a.x, a.p))).map_err(serde::de::Error::custom)
    }
}

/// Per-class bid marginals: `f1[k]` for k in 1..=n and `f0[k]` for k in 0..n.
/// The entries `f1[0]` and `f0[n]` are always `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFamily {
    pub n: usize,
    pub f1: Vec<Option<DiscreteDist>>,
    pub f0: Vec<Option<DiscreteDist>>,
}

impl MarginalFamily {
    pub fn new(n: usize, f1: Vec<DiscreteDist>, f0: Vec<DiscreteDist>) -> Result<Self> {
        if f1.len() != n || f0.len() != n {
            return invalid(format!("expected {n} marginals per side, got {} and {}", f1.len(), f0.len()));
        }
        let mut a = vec![None];
        a.extend(f1.into_iter().map(Some));
        let mut b: Vec<Option<DiscreteDist>> = f0.into_iter().map(Some).collect();
        b.push(None);
        Ok(Self { n, f1: a, f0: b })
    }

    pub fn f1(&self, k: usize) -> Option<&DiscreteDist> {
        self.f1.get(k).and_then(|d| d.as_ref())
    }

    pub fn f0(&self, k: usize) -> Option<&DiscreteDist> {
        self.f0.get(k).and_then(|d| d.as_ref())
    }

    fn check_shape(&self) -> Result<()> {
        let ok = self.f1.len() == self.n + 1
            && self.f0.len() == self.n + 1
            && self.f1[0].is_none()
            && self.f0[self.n].is_none()
            && (1..=self.n).all(|k| self.f1[k].is_some())
            && (0..self.n).all(|k| self.f0[k].is_some());
        if ok {
            Ok(())
        } else {
            invalid("marginal family has the wrong shape")
        }
    }
}

/// Half-mass ½(k·f1 + (n−k)·f0) merged over both supports, descending in x.
pub(crate) fn half_mass_desc(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = Vec::new();
    if let Some(f) = f1 {
        v.extend(f.atoms().map(|(x, p)| (x, 0.5 * k as f64 * p)));
    }
    if let Some(f) = f0 {
        v.extend(f.atoms().map(|(x, p)| (x, 0.5 * (n - k) as f64 * p)));
    }
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (x, q) in v {
        match out.last_mut() {
            Some(last) if last.0 - x < ATOM_TOL => last.1 += q,
            _ => out.push((x, q)),
        }
    }
    out
}

fn check_k(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<()> {
    if k > n {
        return invalid(format!("class k = {k} outside [0, {n}]"));
    }
    if (k >= 1) != f1.is_some() || (k < n) != f0.is_some() {
        return invalid(format!("class k = {k} of n = {n} needs f1 iff k >= 1 and f0 iff k < n"));
    }
    Ok(())
}

/// Minimum second-highest bid t_k: the largest t at which the accumulated
/// half-mass above t reaches 1.
pub fn min_secmax(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<f64> {
    check_k(k, f1, f0, n)?;
    let mut acc = 0.0;
    let q = half_mass_desc(k, f1, f0, n);
    for &(x, m) in &q {
        acc += m;
        if acc >= 1.0 - 1e-12 {
            return Ok(x);
        }
    }
    Ok(q.last().map_or(0.0, |a| a.0))
}

/// The smallest possible distribution of the second-highest bid compatible with
/// the marginals: half-mass above t_k, and the residual at t_k.
pub fn secmax_profile(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<(f64, DiscreteDist)> {
    let t = min_secmax(k, f1, f0, n)?;
    let mut atoms = Vec::new();
    let mut acc = 0.0;
    for (x, m) in half_mass_desc(k, f1, f0, n) {
        if x > t + ATOM_TOL / 2.0 {
            atoms.push((x, m));
            acc += m;
        } else {
            atoms.push((t, (1.0 - acc).max(0.0)));
            break;
        }
    }
    Ok((t, DiscreteDist::new(atoms)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub feasible: bool,
    pub worst_violation: f64,
    pub offending_value: Option<f64>,
}

/// Checks x·D(x) = N(x) at every support value, and N(0) = 0.
pub fn check_calibration_feasible(prior: &PriorBySum, fam: &MarginalFamily, tol: f64) -> Result<CalibrationReport> {
    let n = prior.n();
    if fam.n != n {
        return invalid(format!("family has n = {}, prior has n = {n}", fam.n));
    }
    fam.check_shape()?;
    // (x, clicked mass, total mass)
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    for k in 0..=n {
        let lam = prior.lam(k);
        if let Some(f) = fam.f1(k) {
            pts.extend(f.atoms().map(|(x, p)| (x, lam * k as f64 * p, lam * k as f64 * p)));
        }
        if let Some(f) = fam.f0(k) {
            pts.extend(f.atoms().map(|(x, p)| (x, 0.0, lam * (n - k) as f64 * p)));
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, f64)> = Vec::new();
    for (x, nn, d) in pts {
        match merged.last_mut() {
            Some(last) if x - last.0 < ATOM_TOL => {
                last.1 += nn;
                last.2 += d;
            }
            _ => merged.push((x, nn, d)),
        }
    }
    let mut worst = 0.0;
    let mut at = None;
    for (x, nn, d) in merged {
        let v = if x < ATOM_TOL { nn } else { (x * d - nn).abs() };
        if v > worst {
            worst = v;
            at = Some(x);
        }
    }
    Ok(CalibrationReport { feasible: worst <= tol, worst_violation: worst, offending_value: if worst > tol { at } else { None } })
}

/// Split of the slack Σ(k−2)λ_k between the t1 atoms (a) and t0 atoms (b).
#[derive(Debug, Clone, Serialize)]
pub struct LinSysSolution {
    /// Indexed by k; entries 0 and 1 are zero.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub x_star: f64,
    pub y_star: f64,
    /// Set when n = 2 (b_2 = 0 is forced) or when the b_n reserve had to be released.
    pub degenerate: bool,
}

pub fn slack_total(prior: &PriorBySum) -> f64 {
    (2..=prior.n()).map(|k| (k as f64 - 2.0) * prior.lam(k)).sum()
}

/// Closed-form aggregate split (x*, y*) of the slack, maximizing
/// λ1(λ1+x)/(2λ1+x) + λ0(A−x)/(2λ0+A−x) over [0, A].
pub fn closed_form_xy(prior: &PriorBySum) -> (f64, f64) {
    let (l0, l1) = (prior.lam(0), prior.lam(1));
    let big_a = slack_total(prior);
    let s2 = std::f64::consts::SQRT_2;
    let den = l1 + s2 * l0;
    let x = if den > 0.0 { ((l1 * big_a + 2.0 * l1 * l0 * (1.0 - s2)) / den).max(0.0).min(big_a) } else { 0.0 };
    (x, big_a - x)
}

pub fn solve_linsys(prior: &PriorBySum) -> Result<LinSysSolution> {
    let n = prior.n();
    let (l0, l1, ln) = (prior.lam(0), prior.lam(1), prior.lam(n));
    if ln <= 0.0 {
        return invalid("lambda_n = 0: no feasible split with b_n > 0");
    }
    if l0 <= 0.0 && l1 <= 0.0 {
        return invalid("lambda_0 = lambda_1 = 0: thresholds undefined");
    }
    let (x_star, y_star) = closed_form_xy(prior);

    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    let reserve = if n > 2 { 1e-9f64.min((n as f64 - 2.0) / n as f64) } else { 0.0 };
    let mut rem = x_star;
    for k in (2..=n).rev() {
        let full = (k as f64 - 2.0) / k as f64;
        let lk = prior.lam(k);
        let cap = if k == n { full - reserve } else { full };
        if lk > 0.0 && rem > 0.0 {
            a[k] = cap.min(rem / (lk * k as f64)).max(0.0);
            rem -= lk * k as f64 * a[k];
        }
    }
    let mut degenerate = n == 2;
    if rem > 1e-15 {
        // Only reachable when y_star is below the reserve; release it.
        let full = (n as f64 - 2.0) / n as f64;
        let extra = (full - a[n]).min(rem / (ln * n as f64));
        a[n] += extra;
        rem -= ln * n as f64 * extra;
        degenerate = true;
        if rem > 1e-12 {
            return Err(Error::Numerical(format!("slack split left {rem:e} unassigned")));
        }
    }
    for k in 2..=n {
        b[k] = ((k as f64 - 2.0) / k as f64 - a[k]).max(0.0);
    }
    Ok(LinSysSolution { a, b, x_star, y_star, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// t0 = y/(λ0 + y)
    MainText,
    /// t0 = y/(2λ0 + y); the only form under which the optimal family is calibrated.
    Appendix,
}

#[derive(Debug, Clone, Serialize)]
pub struct Thresholds {
    pub t1: f64,
    pub t0: f64,
    pub convention: Convention,
    /// λ1 = 0 or λ0 = 0 forced a placeholder value.
    pub degenerate: bool,
    /// The requested convention broke t0 ≤ t1 or t1 ≥ 1/2 and the other one was used.
    pub fell_back: bool,
}

fn thresholds_for(prior: &PriorBySum, (x_star, y_star): (f64, f64), conv: Convention) -> (f64, f64, bool) {
    let (l0, l1) = (prior.lam(0), prior.lam(1));
    let mut degenerate = false;
    let t1 = if l1 > 0.0 {
        (l1 + x_star) / (2.0 * l1 + x_star)
    } else {
        degenerate = true;
        0.5
    };
    let t0 = if l0 > 0.0 {
        let d = match conv {
            Convention::MainText => l0,
            Convention::Appendix => 2.0 * l0,
        };
        y_star / (d + y_star)
    } else {
        degenerate = true;
        0.0
    };
    (t1, t0, degenerate)
}

/// Thresholds only need the aggregate split, so λn = 0 is accepted here.
pub fn optimal_thresholds(prior: &PriorBySum, conv: Convention) -> Result<Thresholds> {
    if prior.lam(0) <= 0.0 && prior.lam(1) <= 0.0 {
        return invalid("lambda_0 = lambda_1 = 0: thresholds undefined");
    }
    Ok(thresholds_xy(prior, closed_form_xy(prior), conv))
}

pub fn thresholds_from(prior: &PriorBySum, lin: &LinSysSolution, conv: Convention) -> Thresholds {
    thresholds_xy(prior, (lin.x_star, lin.y_star), conv)
}

fn thresholds_xy(prior: &PriorBySum, xy: (f64, f64), conv: Convention) -> Thresholds {
    let ok = |t1: f64, t0: f64| t0 <= t1 + 1e-12 && t1 >= 0.5 - 1e-12;
    let (t1, t0, degenerate) = thresholds_for(prior, xy, conv);
    if ok(t1, t0) {
        return Thresholds { t1, t0, convention: conv, degenerate, fell_back: false };
    }
    let other = match conv {
        Convention::MainText => Convention::Appendix,
        Convention::Appendix => Convention::MainText,
    };
    let (t1, t0, degenerate) = thresholds_for(prior, xy, other);
    Thresholds { t1, t0, convention: other, degenerate, fell_back: true }
}

/// The revenue-optimal calibrated marginal family.
pub fn optimal_marginals(prior: &PriorBySum) -> Result<MarginalFamily> {
    let lin = solve_linsys(prior)?;
    let th = thresholds_from(prior, &lin, Convention::Appendix);
    optimal_marginals_from(prior, &lin, &th)
}

pub(crate) fn optimal_marginals_from(prior: &PriorBySum, lin: &LinSysSolution, th: &Thresholds) -> Result<MarginalFamily> {
    let n = prior.n();
    let nf = n as f64;
    let (t1, t0) = (th.t1, th.t0);
    // With λ0 = 0 the t0 atom carries only clicked mass; it is calibrated only at 1.
    let t0_atom = if prior.lam(0) > 0.0 { t0 } else { 1.0 };
    let mut f1 = Vec::with_capacity(n);
    let mut f0 = Vec::with_capacity(n);
    for k in 1..=n {
        if k == 1 {
            f1.push(DiscreteDist::point(t1));
        } else {
            let kf = k as f64;
            f1.push(DiscreteDist::new([(1.0, 2.0 / kf), (t1, lin.a[k]), (t0_atom, lin.b[k])])?);
        }
    }
    for k in 0..n {
        f0.push(match k {
            0 => DiscreteDist::new([(t0, 2.0 / nf), (0.0, (nf - 2.0) / nf)])?,
            1 => DiscreteDist::new([(t1, 1.0 / (nf - 1.0)), (0.0, (nf - 2.0) / (nf - 1.0))])?,
            _ => DiscreteDist::point(0.0),
        });
    }
    MarginalFamily::new(n, f1, f0)
}

/// Revenue of the optimal design in closed form: λ0·t0 + λ1·t1 + Σ_{k≥2} λ_k.
pub fn optimal_revenue(prior: &PriorBySum, th: &Thresholds) -> f64 {
    prior.lam(0) * th.t0 + prior.lam(1) * th.t1 + prior.full_info_revenue()
}
