//! Couplings of a marginal pair (f_{k,1}, f_{k,0}) into a joint bid plan that
//! maximizes the expected second-highest bid.
//!
//! Plans are canonical: coordinates `0..k` carry outcome 1 and `k..n` carry
//! outcome 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lp::{Cmp, LinearProgram};
use crate::marginals::{half_mass_desc, min_secmax, DiscreteDist};
use crate::ATOM_TOL;

const MASS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub bids: Vec<f64>,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub n: usize,
    pub k: usize,
    pub rows: Vec<PlanRow>,
}

impl TransportPlan {
    /// Merges rows with identical bids (first occurrence order) and drops empty ones.
    pub fn from_rows(n: usize, k: usize, rows: impl IntoIterator<Item = PlanRow>) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut out: Vec<PlanRow> = Vec::new();
        for r in rows {
            if r.w <= 0.0 {
                continue;
            }
            let key: Vec<u64> = r.bids.iter().map(|b| b.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => out[i].w += r.w,
                None => {
                    index.insert(key, out.len());
                    out.push(r);
                }
            }
        }
        Self { n, k, rows: out }
    }

    pub fn expected_secmax(&self) -> f64 {
        self.rows.iter().map(|r| r.w * secmax(&r.bids)).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.rows.iter().map(|r| r.w).sum()
    }

    /// Weight distribution of coordinate `i`, merged and ascending.
    pub fn coordinate_marginal(&self, i: usize) -> Vec<(f64, f64)> {
        merge_atoms(self.rows.iter().map(|r| (r.bids[i], r.w)).collect())
    }
}

fn merge_atoms(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (x, p) in v {
        match out.last_mut() {
            Some(last) if x - last.0 < ATOM_TOL => last.1 += p,
            _ => out.push((x, p)),
        }
    }
    out
}

/// Second-largest entry, counting multiplicity.
pub fn secmax(bids: &[f64]) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in bids {
        if x > a {
            b = a;
            a = x;
        } else if x > b {
            b = x;
        }
    }
    b
}

pub fn is_multi_maximal(bids: &[f64]) -> bool {
    let top = bids.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    bids.iter().filter(|&&x| x >= top - ATOM_TOL).count() >= 2
}

pub fn induced_secmax(plan: &TransportPlan) -> Result<DiscreteDist> {
    DiscreteDist::new(merge_atoms(plan.rows.iter().map(|r| (secmax(&r.bids), r.w)).collect()))
}

/// ∫_{t_k}^1 (x − t_k)·½(k·f1 + (n−k)·f0) dx + t_k.
pub fn secmax_upper_bound(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<f64> {
    let t = min_secmax(k, f1, f0, n)?;
    let over: f64 = half_mass_desc(k, f1, f0, n).iter().filter(|a| a.0 > t).map(|(x, q)| (x - t) * q).sum();
    Ok(over + t)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub feasible: bool,
    pub worst_deviation: f64,
    pub weight_error: f64,
}

/// Compares every coordinate marginal with its target and the total weight with 1.
pub fn check_plan_feasible(plan: &TransportPlan, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, tol: f64) -> PlanReport {
    let mut worst: f64 = 0.0;
    for i in 0..plan.n {
        let target = if i < plan.k { f1 } else { f0 };
        let Some(target) = target else {
            worst = f64::INFINITY;
            continue;
        };
        let got = plan.coordinate_marginal(i);
        for &(x, p) in &got {
            worst = worst.max((p - target.mass_at(x)).abs());
        }
        for (x, p) in target.atoms() {
            let g: f64 = got.iter().filter(|a| (a.0 - x).abs() < ATOM_TOL).map(|a| a.1).sum();
            worst = worst.max((p - g).abs());
        }
    }
    let weight_error = (plan.total_weight() - 1.0).abs();
    let bad_bids = plan.rows.iter().any(|r| r.bids.len() != plan.n || r.w < 0.0);
    PlanReport { feasible: !bad_bids && worst <= tol && weight_error <= tol, worst_deviation: worst, weight_error }
}

/// Remaining mass of one coordinate's marginal, consumed lowest value first.
#[derive(Clone)]
struct Pool {
    vals: Vec<f64>,
    mass: Vec<f64>,
    next: usize,
}

impl Pool {
    fn new(atoms: Vec<(f64, f64)>) -> Self {
        let atoms = merge_atoms(atoms);
        Self { vals: atoms.iter().map(|a| a.0).collect(), mass: atoms.iter().map(|a| a.1).collect(), next: 0 }
    }

    /// Lowest value with mass left; when exhausted by round-off, the top value with no mass.
    fn lowest(&mut self) -> (usize, f64) {
        while self.next < self.vals.len() && self.mass[self.next] <= MASS_EPS {
            self.next += 1;
        }
        if self.next < self.vals.len() {
            (self.next, self.mass[self.next])
        } else {
            (self.vals.len().saturating_sub(1), f64::INFINITY)
        }
    }

    fn value(&self, i: usize) -> f64 {
        self.vals.get(i).copied().unwrap_or(0.0)
    }

    fn take(&mut self, i: usize, m: f64) {
        if let Some(v) = self.mass.get_mut(i) {
            *v -= m;
        }
    }

    fn sub(&mut self, x: f64, m: f64) {
        if let Some(i) = self.vals.iter().position(|v| (v - x).abs() < ATOM_TOL) {
            self.mass[i] -= m;
        }
    }
}

/// Descending-scan pairing for classes with k ∉ {1, n−1}.
///
/// Every coordinate of a group is paired with its cyclic successor at each
/// support value above t_k, half of its mass per pair; at t_k only the residual
/// needed to reach total weight 1 is paired. Remaining coordinates take the
/// lowest value still unused by their marginal.
pub fn correlate_general(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<TransportPlan> {
    if k > n {
        return invalid(format!("class k = {k} outside [0, {n}]"));
    }
    if k == 1 || k + 1 == n {
        return invalid(format!("class k = {k} of n = {n} needs the single-bidder LP coupling"));
    }
    let t = min_secmax(k, f1, f0, n)?;
    let mut groups: Vec<(Vec<usize>, &DiscreteDist)> = Vec::new();
    if let Some(f) = f1 {
        groups.push(((0..k).collect(), f));
    }
    if let Some(f) = f0 {
        groups.push(((k..n).collect(), f));
    }

    // Pair schedule: (x, i, j, amount).
    let mut schedule: Vec<(f64, usize, usize, f64)> = Vec::new();
    let mut placed = 0.0;
    for (x, _) in half_mass_desc(k, f1, f0, n) {
        let at_t = x <= t + ATOM_TOL / 2.0;
        for (coords, f) in &groups {
            let half = 0.5 * f.mass_at(x);
            if half <= 0.0 {
                continue;
            }
            let s = coords.len();
            for p in 0..s {
                let amount = if at_t { half.min(1.0 - placed).max(0.0) } else { half };
                if amount > MASS_EPS {
                    schedule.push((x, coords[p], coords[(p + 1) % s], amount));
                    placed += amount;
                }
            }
        }
        if at_t {
            break;
        }
    }

    let mut pools: Vec<Pool> = (0..n)
        .map(|i| {
            let f = if i < k { f1 } else { f0 };
            Pool::new(f.map(|d| d.atoms().collect()).unwrap_or_default())
        })
        .collect();
    for &(x, i, j, a) in &schedule {
        pools[i].sub(x, a);
        pools[j].sub(x, a);
    }

    let mut rows = Vec::new();
    for &(x, i, j, amount) in &schedule {
        let mut left = amount;
        while left > MASS_EPS {
            let mut bids = vec![0.0; n];
            bids[i] = x;
            bids[j] = x;
            let mut m = left;
            let mut picks = Vec::with_capacity(n);
            for (l, pool) in pools.iter_mut().enumerate() {
                if l == i || l == j {
                    continue;
                }
                let (idx, avail) = pool.lowest();
                m = m.min(avail);
                picks.push((l, idx));
            }
            for &(l, idx) in &picks {
                bids[l] = pools[l].value(idx);
                pools[l].take(idx, m);
            }
            rows.push(PlanRow { bids, w: m });
            left -= m;
        }
    }
    Ok(TransportPlan::from_rows(n, k, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMass {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

/// Solution of the single-distinguished-bidder coupling LP.
///
/// `m(x, y)`: the distinguished bidder bids x and the top other bidder bids y.
/// `h(y1, y2)`: the two top other bidders bid y1 ≥ y2 and set the price y2;
/// stored with `x = y1`, `y = y2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct K1Solution {
    pub m: Vec<PairMass>,
    pub h: Vec<PairMass>,
    pub value: f64,
}

impl K1Solution {
    fn objective(&self) -> f64 {
        self.m.iter().map(|p| p.x.min(p.y) * p.w).sum::<f64>() + self.h.iter().map(|p| p.y * p.w).sum::<f64>()
    }

    /// Replaces `m` by the comonotone coupling of its own row and column sums.
    /// min(x, y) is supermodular, so the value cannot drop.
    fn make_monotone(&mut self) {
        let mut rows: Vec<(f64, f64)> = merge_atoms(self.m.iter().map(|p| (p.x, p.w)).collect());
        let mut cols: Vec<(f64, f64)> = merge_atoms(self.m.iter().map(|p| (p.y, p.w)).collect());
        rows.reverse();
        cols.reverse();
        let (mut i, mut j) = (0, 0);
        let mut m = Vec::new();
        while i < rows.len() && j < cols.len() {
            let w = rows[i].1.min(cols[j].1);
            if w > MASS_EPS {
                m.push(PairMass { x: rows[i].0, y: cols[j].0, w });
            }
            rows[i].1 -= w;
            cols[j].1 -= w;
            if rows[i].1 <= MASS_EPS {
                i += 1;
            }
            if cols[j].1 <= MASS_EPS {
                j += 1;
            }
        }
        self.m = m;
        self.value = self.objective();
    }

    pub fn is_monotone(&self) -> bool {
        self.m.iter().all(|a| self.m.iter().all(|b| !(a.x > b.x + ATOM_TOL && a.y < b.y - ATOM_TOL)))
    }
}

/// Maximize Σ min(x,y)·m + Σ y2·h subject to Σ_y m(x,·) ≤ f11(x),
/// Σ_x m(·,y) + (uses of y in h) ≤ (n−1)·f10(y) and total mass 1.
///
/// Every row of a coupling is an m or an h term with the same price, and the
/// unused bidders can be filled from what is left without lowering the price,
/// so the LP value is the optimum.
pub fn correlate_k1_lp(f11: &DiscreteDist, f10: &DiscreteDist, n: usize) -> Result<K1Solution> {
    if n < 2 {
        return invalid("n must be at least 2");
    }
    let xs: Vec<(f64, f64)> = f11.atoms().collect();
    let ys: Vec<(f64, f64)> = f10.atoms().collect();
    let (nx, ny) = (xs.len(), ys.len());
    // h pairs (j1, j2) with ys[j1] ≥ ys[j2]; atoms are ascending.
    let pairs: Vec<(usize, usize)> = if n >= 3 { (0..ny).flat_map(|a| (0..=a).map(move |b| (a, b))).collect() } else { Vec::new() };
    let nm = nx * ny;
    let mut obj = Vec::with_capacity(nm + pairs.len());
    for &(x, _) in &xs {
        for &(y, _) in &ys {
            obj.push(x.min(y));
        }
    }
    obj.extend(pairs.iter().map(|&(_, b)| ys[b].0));
    let mut lp = LinearProgram::new(obj);
    for (i, &(_, p)) in xs.iter().enumerate() {
        let c: Vec<(usize, f64)> = (0..ny).map(|j| (i * ny + j, 1.0)).collect();
        lp.add_sparse(&c, Cmp::Le, p);
    }
    for (j, &(_, p)) in ys.iter().enumerate() {
        let mut c: Vec<(usize, f64)> = (0..nx).map(|i| (i * ny + j, 1.0)).collect();
        for (q, &(a, b)) in pairs.iter().enumerate() {
            let uses = (a == j) as u8 + (b == j) as u8;
            if uses > 0 {
                c.push((nm + q, uses as f64));
            }
        }
        lp.add_sparse(&c, Cmp::Le, (n - 1) as f64 * p);
    }
    lp.add(vec![1.0; nm + pairs.len()], Cmp::Eq, 1.0);
    let sol = lp.maximize()?;
    let mut m = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let w = sol.x[i * ny + j];
            if w > MASS_EPS {
                m.push(PairMass { x: xs[i].0, y: ys[j].0, w });
            }
        }
    }
    let h: Vec<PairMass> = pairs
        .iter()
        .enumerate()
        .map(|(q, &(a, b))| PairMass { x: ys[a].0, y: ys[b].0, w: sol.x[nm + q] })
        .filter(|p| p.w > MASS_EPS)
        .collect();
    let mut out = K1Solution { m, h, value: 0.0 };
    out.make_monotone();
    Ok(out)
}

/// Builds a plan from an LP solution. The distinguished bidder is coordinate 0;
/// each canonical row is spread evenly over the n−1 cyclic shifts of the others.
pub fn plan_from_k1(sol: &K1Solution, f11: &DiscreteDist, f10: &DiscreteDist, n: usize) -> Result<TransportPlan> {
    if n < 2 {
        return invalid("n must be at least 2");
    }
    if n == 2 && !sol.h.is_empty() {
        return invalid("h mass needs at least two other bidders");
    }
    let mut p1 = Pool::new(f11.atoms().collect());
    let mut p0 = Pool::new(f10.atoms().map(|(y, p)| (y, (n - 1) as f64 * p)).collect());
    for pm in &sol.m {
        p1.sub(pm.x, pm.w);
        p0.sub(pm.y, pm.w);
    }
    for ph in &sol.h {
        p0.sub(ph.x, ph.w);
        p0.sub(ph.y, ph.w);
    }
    for (pool, name) in [(&p1, "distinguished"), (&p0, "other")] {
        if pool.mass.iter().any(|&v| v < -1e-9) {
            return Err(Error::Numerical(format!("LP solution exceeds the {name} marginal")));
        }
    }

    // Canonical rows with NaN marking filler slots.
    let mut canon: Vec<(Vec<f64>, f64)> = Vec::new();
    for pm in &sol.m {
        let mut b = vec![f64::NAN; n];
        b[0] = pm.x;
        b[1] = pm.y;
        canon.push((b, pm.w));
    }
    for ph in &sol.h {
        let mut b = vec![f64::NAN; n];
        b[1] = ph.x;
        b[2] = ph.y;
        canon.push((b, ph.w));
    }
    let mut filled: Vec<(Vec<f64>, f64)> = Vec::new();
    for (bids, w) in canon {
        let mut pieces = vec![(bids, w)];
        for slot in 0..n {
            if !pieces[0].0[slot].is_nan() {
                continue;
            }
            let pool = if slot == 0 { &mut p1 } else { &mut p0 };
            let mut next = Vec::new();
            for (b, mut pw) in pieces {
                while pw > MASS_EPS {
                    let (idx, avail) = pool.lowest();
                    let take = pw.min(avail);
                    let mut nb = b.clone();
                    nb[slot] = pool.value(idx);
                    pool.take(idx, take);
                    next.push((nb, take));
                    pw -= take;
                }
            }
            pieces = next;
        }
        filled.extend(pieces);
    }

    let others = n - 1;
    let mut rows = Vec::with_capacity(filled.len() * others);
    for (b, w) in filled {
        for r in 0..others {
            let mut bids = Vec::with_capacity(n);
            bids.push(b[0]);
            bids.extend((0..others).map(|i| b[1 + (i + r) % others]));
            rows.push(PlanRow { bids, w: w / others as f64 });
        }
    }
    Ok(TransportPlan::from_rows(n, 1, rows))
}

/// Optimal coupling for any class, choosing the method by k.
pub fn correlate(k: usize, f1: Option<&DiscreteDist>, f0: Option<&DiscreteDist>, n: usize) -> Result<TransportPlan> {
    if k > n {
        return invalid(format!("class k = {k} outside [0, {n}]"));
    }
    if k != 1 && k + 1 != n {
        return correlate_general(k, f1, f0, n);
    }
    let (Some(g1), Some(g0)) = (f1, f0) else {
        return invalid(format!("class k = {k} needs both marginals"));
    };
    if k == 1 {
        let sol = correlate_k1_lp(g1, g0, n)?;
        return plan_from_k1(&sol, g1, g0, n);
    }
    if g0.is_point(0.0) {
        // The zero bidder never affects the price: couple the n−1 others alone.
        let sub = correlate_general(n - 1, Some(g1), None, n - 1)?;
        let rows = sub.rows.into_iter().map(|mut r| {
            r.bids.push(0.0);
            r
        });
        return Ok(TransportPlan::from_rows(n, k, rows));
    }
    // One outcome-0 bidder against n−1 outcome-1 bidders: the same LP with roles swapped.
    let sol = correlate_k1_lp(g0, g1, n)?;
    let swapped = plan_from_k1(&sol, g0, g1, n)?;
    let rows = swapped.rows.into_iter().map(|mut r| {
        r.bids.rotate_left(1);
        r
    });
    Ok(TransportPlan::from_rows(n, k, rows))
}
