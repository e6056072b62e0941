//! Revenue comparison across Bernoulli(p) priors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ir::{ir_marginals, ir_revenue, region_of};
use crate::marginals::{optimal_revenue, optimal_thresholds, Convention};
use crate::prior::PriorBySum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub welfare: f64,
    pub rev_opt: f64,
    /// NaN when ε is outside the valid range for this prior.
    pub rev_ir: f64,
    pub rev_full: f64,
    pub t1: f64,
    pub t0: f64,
    pub region: u8,
}

pub fn sweep_row(n: usize, p: f64, epsilon: f64) -> Result<SweepRow> {
    let prior = PriorBySum::from_bernoulli(n, p)?;
    let welfare = prior.welfare();
    let rev_full = prior.full_info_revenue();
    if prior.lam(0) <= 0.0 && prior.lam(1) <= 0.0 {
        // Two or more clicks almost surely: revealing everything is optimal.
        return Ok(SweepRow { p, welfare, rev_opt: rev_full, rev_ir: rev_full, rev_full, t1: 1.0, t0: 0.0, region: 1 });
    }
    if prior.lam(n) <= 0.0 {
        // Only reachable at p = 0 (or underflow); nobody clicks or the design is trivial.
        let th = optimal_thresholds(&prior, Convention::Appendix)?;
        let rev = optimal_revenue(&prior, &th);
        return Ok(SweepRow { p, welfare, rev_opt: rev, rev_ir: rev.min(welfare), rev_full, t1: th.t1, t0: th.t0, region: region_of(&prior, &th) });
    }
    let th = optimal_thresholds(&prior, Convention::Appendix)?;
    let rev_opt = optimal_revenue(&prior, &th);
    let rev_ir = match ir_marginals(&prior, epsilon) {
        Ok(irm) => ir_revenue(&prior, &irm)?,
        Err(crate::Error::EpsilonRange { .. }) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(SweepRow { p, welfare, rev_opt, rev_ir, rev_full, t1: th.t1, t0: th.t0, region: region_of(&prior, &th) })
}

/// Rows for p_start + i·(p_end − p_start)/(steps − 1), i = 0..steps, sorted by p.
pub fn sweep(n: usize, p_start: f64, p_end: f64, steps: usize, epsilon: f64) -> Result<Vec<SweepRow>> {
    if steps == 0 {
        return invalid("p-steps must be >= 1");
    }
    if !(0.0..=1.0).contains(&p_start) || !(0.0..=1.0).contains(&p_end) {
        return invalid("p range must lie in [0, 1]");
    }
    let ps: Vec<f64> = (0..steps)
        .map(|i| if steps == 1 { p_start } else { p_start + i as f64 * (p_end - p_start) / (steps - 1) as f64 })
        .collect();
    let mut rows = ps.into_par_iter().map(|p| sweep_row(n, p, epsilon)).collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.p.total_cmp(&b.p));
    Ok(rows)
}
