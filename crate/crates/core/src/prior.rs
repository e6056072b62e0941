use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Symmetric prior over click profiles, stored as the distribution of the
/// number of clicks: `lambda[k]` is the total mass of profiles with k ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorBySum {
    n: usize,
    lambda: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PriorJson {
    Explicit { n: usize, lambda: Vec<f64> },
    Bernoulli { bernoulli: BernoulliJson },
}

#[derive(Deserialize)]
struct BernoulliJson {
    n: usize,
    p: f64,
}

impl PriorBySum {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() < 3 {
            return invalid(format!("need n >= 2 (lambda of length >= 3), got length {}", lambda.len()));
        }
        if let Some((k, v)) = lambda.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return invalid(format!("lambda[{k}] = {v} is not a non-negative number"));
        }
        let s: f64 = lambda.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return invalid(format!("lambda sums to {s}, expected 1"));
        }
        Ok(Self { n: lambda.len() - 1, lambda })
    }

    /// Outcomes i.i.d. Bernoulli(p): binomial click counts.
    pub fn from_bernoulli(n: usize, p: f64) -> Result<Self> {
        if n < 2 {
            return invalid(format!("need n >= 2, got {n}"));
        }
        if !(0.0..=1.0).contains(&p) {
            return invalid(format!("p = {p} outside [0, 1]"));
        }
        let mut lambda = Vec::with_capacity(n + 1);
        let mut binom = 1.0f64;
        for k in 0..=n {
            if k > 0 {
                binom = binom * (n - k + 1) as f64 / k as f64;
            }
            lambda.push(binom * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32));
        }
        // Absorb round-off so the simplex check holds for large n.
        let s: f64 = lambda.iter().sum();
        for v in &mut lambda {
            *v /= s;
        }
        Self::new(lambda)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        match serde_json::from_str::<PriorJson>(text)? {
            PriorJson::Explicit { n, lambda } => {
                if lambda.len() != n + 1 {
                    return invalid(format!("lambda has length {}, expected n+1 = {}", lambda.len(), n + 1));
                }
                Self::new(lambda)
            }
            PriorJson::Bernoulli { bernoulli } => Self::from_bernoulli(bernoulli.n, bernoulli.p),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lam(&self, k: usize) -> f64 {
        self.lambda[k]
    }

    /// Probability that at least one bidder clicks.
    pub fn welfare(&self) -> f64 {
        self.lambda[1..].iter().sum()
    }

    /// Revenue of revealing outcomes: the price is 1 iff two or more click.
    pub fn full_info_revenue(&self) -> f64 {
        self.lambda[2..].iter().sum()
    }
}

impl<'de> Deserialize<'de> for PriorBySum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Self::from_json(&v.to_string()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_small() {
        let p = PriorBySum::from_bernoulli(3, 0.5).unwrap();
        for (a, b) in p.lambda().iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = PriorBySum::from_bernoulli(2, 0.0).unwrap();
        assert_eq!(p.lambda(), &[1.0, 0.0, 0.0]);
        let p = PriorBySum::from_bernoulli(20, 0.3).unwrap();
        assert!((p.lam(6) - 0.191638982).abs() < 1e-8);
        assert!((p.welfare() - (1.0 - 0.7f64.powi(20))).abs() < 1e-12);
    }

    #[test]
    fn baselines() {
        let p = PriorBySum::new(vec![0.1, 0.4, 0.4, 0.1]).unwrap();
        assert!((p.welfare() - 0.9).abs() < 1e-15);
        assert!((p.full_info_revenue() - 0.5).abs() < 1e-15);
        let p = PriorBySum::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.welfare(), 0.0);
        assert_eq!(p.full_info_revenue(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PriorBySum::new(vec![0.5, 0.5]).is_err());
        assert!(PriorBySum::new(vec![0.5, 0.6, -0.1]).is_err());
        assert!(PriorBySum::new(vec![0.5, 0.4, 0.0]).is_err());
        assert!(PriorBySum::from_bernoulli(1, 0.5).is_err());
        assert!(PriorBySum::from_bernoulli(3, 1.5).is_err());
    }

    #[test]
    fn json_forms() {
        let p = PriorBySum::from_json(r#"{"n":3,"lambda":[0.1,0.4,0.4,0.1]}"#).unwrap();
        assert_eq!(p.n(), 3);
        let q = PriorBySum::from_json(r#"{"bernoulli":{"n":4,"p":0.25}}"#).unwrap();
        assert_eq!(q.n(), 4);
        assert!(PriorBySum::from_json(r#"{"n":2,"lambda":[0.1,0.9]}"#).is_err());
        assert!(PriorBySum::from_json("not json").is_err());
        let back: PriorBySum = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
