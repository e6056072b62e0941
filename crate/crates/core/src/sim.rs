//! Monte-Carlo second-price auctions under a signaling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signaling::CalibratedSignaling;
use crate::transport::secmax;

pub const DEFAULT_SHARDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBucket {
    pub value: f64,
    pub hits: u64,
    pub clicks: u64,
    pub rate: f64,
}

impl CalibrationBucket {
    /// Binomial standard error of the click rate if the bid were calibrated.
    pub fn stderr(&self) -> f64 {
        if self.hits == 0 {
            return 0.0;
        }
        (self.value * (1.0 - self.value) / self.hits as f64).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub samples: u64,
    pub seed: u64,
    pub shards: usize,
    pub revenue_mean: f64,
    pub revenue_stderr: f64,
    pub utility_mean: Vec<f64>,
    pub utility_stderr: Vec<f64>,
    pub calibration: Vec<CalibrationBucket>,
}

struct Tally {
    count: u64,
    rev: f64,
    rev_sq: f64,
    util: Vec<f64>,
    util_sq: Vec<f64>,
    /// (hits, clicks) per distinct bid value.
    buckets: Vec<(u64, u64)>,
}

impl Tally {
    fn new(n: usize, values: usize) -> Self {
        Self { count: 0, rev: 0.0, rev_sq: 0.0, util: vec![0.0; n], util_sq: vec![0.0; n], buckets: vec![(0, 0); values] }
    }

    fn merge(&mut self, other: &Tally) {
        self.count += other.count;
        self.rev += other.rev;
        self.rev_sq += other.rev_sq;
        for i in 0..self.util.len() {
            self.util[i] += other.util[i];
            self.util_sq[i] += other.util_sq[i];
        }
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }
}

struct Sampler<'a> {
    sig: &'a CalibratedSignaling,
    classes: WeightedIndex<f64>,
    class_ids: Vec<usize>,
    rows: Vec<Option<WeightedIndex<f64>>>,
    /// Distinct bid values, ascending by bit pattern (all bids are non-negative).
    values: Vec<u64>,
    /// Per class, per row, per coordinate: index into `values`.
    slots: Vec<Vec<Vec<u32>>>,
}

impl<'a> Sampler<'a> {
    fn new(sig: &'a CalibratedSignaling) -> Result<Self> {
        let class_ids: Vec<usize> = (0..=sig.n()).filter(|&k| sig.prior.lam(k) > 0.0).collect();
        let classes = WeightedIndex::new(class_ids.iter().map(|&k| sig.prior.lam(k)))
            .map_err(|e| crate::Error::Invalid(format!("prior: {e}")))?;
        let mut rows = Vec::with_capacity(sig.plans.len());
        for (k, plan) in sig.plans.iter().enumerate() {
            if sig.prior.lam(k) > 0.0 {
                let w = WeightedIndex::new(plan.rows.iter().map(|r| r.w.max(0.0)))
                    .map_err(|e| crate::Error::Invalid(format!("plan for k={k}: {e}")))?;
                rows.push(Some(w));
            } else {
                rows.push(None);
            }
        }
        let mut values: Vec<u64> = sig.plans.iter().flat_map(|p| p.rows.iter().flat_map(|r| r.bids.iter().map(|b| b.to_bits()))).collect();
        values.sort_unstable();
        values.dedup();
        let slots = sig
            .plans
            .iter()
            .map(|p| {
                p.rows
                    .iter()
                    .map(|r| r.bids.iter().map(|b| values.binary_search(&b.to_bits()).expect("value collected") as u32).collect())
                    .collect()
            })
            .collect();
        Ok(Self { sig, classes, class_ids, rows, values, slots })
    }

    fn shard(&self, samples: u64, seed: u64, stream: u64) -> Tally {
        let n = self.sig.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut t = Tally::new(n, self.values.len());
        let mut perm: Vec<usize> = (0..n).collect();
        let mut bids = vec![0.0; n];
        let mut clicks = vec![0u8; n];
        let mut top_set = Vec::with_capacity(n);
        for _ in 0..samples {
            let k = self.class_ids[self.classes.sample(&mut rng)];
            let r = self.rows[k].as_ref().expect("class with mass has a sampler").sample(&mut rng);
            let row = &self.sig.plans[k].rows[r];
            let slots = &self.slots[k][r];
            perm.shuffle(&mut rng);
            for (j, &i) in perm.iter().enumerate() {
                bids[i] = row.bids[j];
                clicks[i] = (j < k) as u8;
            }
            let price = secmax(&bids);
            let top = bids.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top_set.clear();
            top_set.extend((0..n).filter(|&i| bids[i] == top));
            let winner = top_set[rng.gen_range(0..top_set.len())];
            t.count += 1;
            t.rev += price;
            t.rev_sq += price * price;
            let u = clicks[winner] as f64 - price;
            t.util[winner] += u;
            t.util_sq[winner] += u * u;
            // Calibration only needs the canonical coordinate, not the bidder.
            for (j, &v) in slots.iter().enumerate() {
                let e = &mut t.buckets[v as usize];
                e.0 += 1;
                e.1 += (j < k) as u64;
            }
        }
        t
    }
}

fn mean_stderr(sum: f64, sum_sq: f64, count: u64) -> (f64, f64) {
    let n = count as f64;
    let mean = sum / n;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

pub fn run(sig: &CalibratedSignaling, samples: u64, seed: u64) -> Result<SimReport> {
    run_sharded(sig, samples, seed, DEFAULT_SHARDS)
}

/// Shard s draws from stream s of the seeded generator. The report depends
/// only on (sig, samples, seed, shards).
pub fn run_sharded(sig: &CalibratedSignaling, samples: u64, seed: u64, shards: usize) -> Result<SimReport> {
    if samples == 0 {
        return invalid("samples must be >= 1");
    }
    let shards = shards.max(1);
    let sampler = Sampler::new(sig)?;
    let per = samples / shards as u64;
    let extra = samples % shards as u64;
    let parts: Vec<Tally> = (0..shards)
        .into_par_iter()
        .map(|s| sampler.shard(per + ((s as u64) < extra) as u64, seed, s as u64))
        .collect();
    let mut total = Tally::new(sig.n(), sampler.values.len());
    for part in &parts {
        total.merge(part);
    }
    let (revenue_mean, revenue_stderr) = mean_stderr(total.rev, total.rev_sq, total.count);
    let (utility_mean, utility_stderr) = (0..sig.n())
        .map(|i| mean_stderr(total.util[i], total.util_sq[i], total.count))
        .unzip();
    let calibration = sampler
        .values
        .iter()
        .zip(&total.buckets)
        .filter(|(_, b)| b.0 > 0)
        .map(|(&bits, &(hits, clicks))| CalibrationBucket {
            value: f64::from_bits(bits),
            hits,
            clicks,
            rate: clicks as f64 / hits as f64,
        })
        .collect();
    Ok(SimReport { samples, seed, shards, revenue_mean, revenue_stderr, utility_mean, utility_stderr, calibration })
}
