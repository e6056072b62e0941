#![allow(dead_code)]

use calsig::{DiscreteDist, PriorBySum};
use rand::Rng;

/// Random prior on n bidders with every λ_k > 0.
pub fn random_prior<R: Rng>(rng: &mut R, n: usize) -> PriorBySum {
    let raw: Vec<f64> = (0..=n).map(|_| rng.gen_range(0.02..1.0f64)).collect();
    let s: f64 = raw.iter().sum();
    let mut lam: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let head: f64 = lam[..n].iter().sum();
    lam[n] = 1.0 - head;
    PriorBySum::new(lam).unwrap()
}

/// Random distribution with 1..=max_support atoms on multiples of 0.05.
pub fn random_dist<R: Rng>(rng: &mut R, max_support: usize) -> DiscreteDist {
    let m = rng.gen_range(1..=max_support);
    let atoms: Vec<(f64, f64)> = (0..m).map(|_| (rng.gen_range(0..=20) as f64 / 20.0, rng.gen_range(0.05..1.0))).collect();
    let s: f64 = atoms.iter().map(|a| a.1).sum();
    DiscreteDist::new(atoms.into_iter().map(|(x, p)| (x, p / s))).unwrap()
}

pub fn ex11() -> PriorBySum {
    PriorBySum::new(vec![0.1, 0.4, 0.4, 0.1]).unwrap()
}

pub fn dd(a: &[(f64, f64)]) -> DiscreteDist {
    DiscreteDist::new(a.iter().copied()).unwrap()
}

/// Marginals of the four-bidder, two-click correlation example.
pub fn fig3() -> (DiscreteDist, DiscreteDist) {
    (dd(&[(1.0, 0.4), (0.8, 0.4), (0.2, 0.2)]), dd(&[(0.8, 0.2), (0.2, 0.2), (0.0, 0.6)]))
}
