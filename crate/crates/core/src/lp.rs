//! Dense two-phase primal simplex for the small exact LPs used by the
//! transport solver and the oracles.
//!
//! Entering columns follow Dantzig's rule until a run of degenerate pivots is
//! seen, after which Bland's rule takes over for the rest of the solve.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const OPT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// maximize c·x subject to rows (a·x cmp b) and x ≥ 0.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    nvars: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Cmp, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self { nvars: objective.len(), objective, rows: Vec::new() }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) {
        assert_eq!(coeffs.len(), self.nvars, "constraint width mismatch");
        self.rows.push((coeffs, cmp, rhs));
    }

    /// Sparse convenience form of [`add`](Self::add).
    pub fn add_sparse(&mut self, coeffs: &[(usize, f64)], cmp: Cmp, rhs: f64) {
        let mut dense = vec![0.0; self.nvars];
        for &(j, v) in coeffs {
            dense[j] += v;
        }
        self.add(dense, cmp, rhs);
    }

    pub fn maximize(&self) -> Result<LpSolution> {
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau {
    m: usize,
    width: usize, // structural + slack/surplus + artificial columns
    nvars: usize,
    first_art: usize,
    a: Vec<f64>, // m rows of (width + 1), last entry = rhs
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n_slack = lp.rows.iter().filter(|r| r.1 != Cmp::Eq).count();
        let n_art = lp
            .rows
            .iter()
            .filter(|r| {
                let flip = r.2 < 0.0;
                !matches!((r.1, flip), (Cmp::Le, false) | (Cmp::Ge, true))
            })
            .count();
        let first_art = lp.nvars + n_slack;
        let width = first_art + n_art;
        let stride = width + 1;
        let mut a = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let (mut s, mut art) = (lp.nvars, first_art);
        for (i, (coeffs, cmp, rhs)) in lp.rows.iter().enumerate() {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            let row = &mut a[i * stride..(i + 1) * stride];
            for (j, v) in coeffs.iter().enumerate() {
                row[j] = sign * v;
            }
            row[width] = sign * rhs;
            let cmp = match (cmp, sign < 0.0) {
                (Cmp::Le, true) => Cmp::Ge,
                (Cmp::Ge, true) => Cmp::Le,
                (c, _) => *c,
            };
            match cmp {
                Cmp::Le => {
                    row[s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Cmp::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Cmp::Eq => {
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Self { m, width, nvars: lp.nvars, first_art, a, basis }
    }

    fn stride(&self) -> usize {
        self.width + 1
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let stride = self.stride();
        let p = self.a[r * stride + c];
        for v in &mut self.a[r * stride..(r + 1) * stride] {
            *v /= p;
        }
        let prow: Vec<f64> = self.a[r * stride..(r + 1) * stride].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * stride + c];
            if f != 0.0 {
                let row = &mut self.a[i * stride..(i + 1) * stride];
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for maximizing `cost`; entry `width` holds −(objective value).
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let stride = self.stride();
        let mut obj = vec![0.0; stride];
        obj[..cost.len()].copy_from_slice(cost);
        for i in 0..self.m {
            let cb = obj_coef(cost, self.basis[i]);
            if cb != 0.0 {
                for (v, a) in obj.iter_mut().zip(&self.a[i * stride..(i + 1) * stride]) {
                    *v -= cb * a;
                }
            }
        }
        obj
    }

    fn optimize(&mut self, obj: &mut [f64], allowed: usize) -> Result<()> {
        let stride = self.stride();
        let width = self.width;
        let mut bland = false;
        let mut degenerate = 0usize;
        let max_iter = 50_000 + 50 * (self.m + width);
        for _ in 0..max_iter {
            let enter = if bland {
                (0..allowed).find(|&j| obj[j] > OPT_TOL)
            } else {
                let mut best = None;
                let mut bv = OPT_TOL;
                for (j, &v) in obj.iter().enumerate().take(allowed) {
                    if v > bv {
                        bv = v;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let aic = self.a[i * stride + c];
                if aic > PIVOT_TOL {
                    let ratio = self.a[i * stride + width].max(0.0) / aic;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(Error::Numerical("linear program is unbounded".into()));
            };
            if ratio <= 1e-14 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(r, c, obj);
        }
        Err(Error::Numerical("simplex iteration limit reached".into()))
    }

    fn solve(mut self, objective: &[f64]) -> Result<LpSolution> {
        let stride = self.stride();
        let width = self.width;
        if self.first_art < width {
            let mut phase1 = vec![0.0; width];
            for v in &mut phase1[self.first_art..] {
                *v = -1.0;
            }
            let mut obj = self.reduced_costs(&phase1);
            self.optimize(&mut obj, width)?;
            let infeas = obj[width];
            if infeas > FEAS_TOL {
                return Err(Error::Numerical(format!("linear program is infeasible (phase-one residual {infeas:e})")));
            }
            // Drive remaining artificial columns out of the basis.
            for i in 0..self.m {
                if self.basis[i] >= self.first_art {
                    let row = &self.a[i * stride..(i + 1) * stride];
                    if let Some(c) = (0..self.first_art).find(|&j| row[j].abs() > PIVOT_TOL) {
                        let mut dummy = vec![0.0; stride];
                        self.pivot(i, c, &mut dummy);
                    }
                }
            }
        }
        let mut obj = self.reduced_costs(objective);
        self.optimize(&mut obj, self.first_art)?;
        let mut x = vec![0.0; self.nvars];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.nvars {
                x[b] = self.a[i * stride + width].max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { value, x })
    }
}

fn obj_coef(cost: &[f64], j: usize) -> f64 {
    cost.get(j).copied().unwrap_or(0.0)
}
