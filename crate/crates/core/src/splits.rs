//! Walk-forward train/validation/test splits.
//!
//! Fit dates `t_1 < ... < t_n` (followed by an implicit infinity) cut the
//! date axis into test windows `[t_i, t_{i+1})`. For round `i` a uniformly
//! random `p_val` fraction of the dates before `t_i` is held out for
//! validation and the rest is training data, so nothing a model sees comes
//! after its test window starts.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::time::TradingDate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRound {
    pub index: usize,
    pub fit_date: TradingDate,
    pub train: Vec<TradingDate>,
    pub val: Vec<TradingDate>,
    pub test: Vec<TradingDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Finite fit dates; the final boundary is implicitly infinite.
    pub fit_dates: Vec<TradingDate>,
    pub first_date: TradingDate,
    pub last_date: TradingDate,
    pub p_val: f64,
    pub seed: u64,
    pub rounds: Vec<SplitRound>,
}

impl SplitPlan {
    /// Round whose test window contains `date`.
    pub fn round_of(&self, date: TradingDate) -> Option<&SplitRound> {
        self.rounds.iter().find(|r| r.test.binary_search(&date).is_ok())
    }

    pub fn test_dates(&self) -> Vec<TradingDate> {
        self.rounds.iter().flat_map(|r| r.test.iter().copied()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Build the plan for data spanning `first_date..=last_date`.
pub fn make_splits(
    fit_dates: &[TradingDate],
    first_date: TradingDate,
    last_date: TradingDate,
    p_val: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(p_val > 0.0 && p_val < 1.0) {
        return Err(CoreError::Config(format!("p_val must lie in (0, 1), got {p_val}")));
    }
    if fit_dates.is_empty() {
        return Err(CoreError::Config("at least one fit date is required".into()));
    }
    if fit_dates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::Config("fit dates must be strictly increasing".into()));
    }
    if fit_dates[0] <= first_date || *fit_dates.last().unwrap() > last_date {
        return Err(CoreError::Config(format!(
            "fit dates must lie in ({first_date}, {last_date}]"
        )));
    }
    let mut rounds = Vec::with_capacity(fit_dates.len());
    for (i, &t) in fit_dates.iter().enumerate() {
        let end = fit_dates.get(i + 1).map_or(last_date, |n| n - 1);
        let prior: Vec<TradingDate> = (first_date..t).collect();
        let n_val = (p_val * prior.len() as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut picked = rand::seq::index::sample(&mut rng, prior.len(), n_val).into_vec();
        picked.sort_unstable();
        let mut is_val = vec![false; prior.len()];
        for j in picked {
            is_val[j] = true;
        }
        let (val, train): (Vec<_>, Vec<_>) = prior.iter().partition(|d| is_val[(**d - first_date) as usize]);
        rounds.push(SplitRound {
            index: i + 1,
            fit_date: t,
            train,
            val,
            test: (t..=end).collect(),
        });
    }
    Ok(SplitPlan {
        fit_dates: fit_dates.to_vec(),
        first_date,
        last_date,
        p_val,
        seed,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn windows_follow_fit_dates() {
        let plan = make_splits(&[10, 20], 1, 35, 0.2, 1).unwrap();
        assert_eq!(plan.rounds[0].test, (10..20).collect::<Vec<_>>());
        assert_eq!(plan.rounds[1].test, (20..=35).collect::<Vec<_>>());
    }

    #[test]
    fn validation_fraction() {
        let plan = make_splits(&[101], 1, 150, 0.2, 9).unwrap();
        assert_eq!(plan.rounds[0].val.len(), 20);
        assert_eq!(plan.rounds[0].train.len(), 80);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(make_splits(&[10], 1, 20, 0.0, 0).is_err());
        assert!(make_splits(&[10], 1, 20, 1.0, 0).is_err());
        assert!(make_splits(&[10, 10], 1, 20, 0.2, 0).is_err());
        assert!(make_splits(&[], 1, 20, 0.2, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let plan = make_splits(&[5, 9], 1, 12, 0.3, 4).unwrap();
        let back: SplitPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        assert_eq!(back, plan);
    }

    proptest! {
        #[test]
        fn disjoint_covering_and_causal(
            mut cuts in proptest::collection::btree_set(2u32..200, 1..6),
            extra in 0u32..50,
            p_val in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let fit: Vec<u32> = std::mem::take(&mut cuts).into_iter().collect();
            let last = fit.last().unwrap() + extra;
            let plan = make_splits(&fit, 1, last, p_val, seed).unwrap();
            let tests = plan.test_dates();
            let expected: Vec<u32> = (fit[0]..=last).collect();
            prop_assert_eq!(tests, expected);
            for r in &plan.rounds {
                let min_test = r.test[0];
                prop_assert!(r.train.iter().chain(&r.val).all(|d| *d < min_test));
                prop_assert_eq!(r.train.len() + r.val.len(), (min_test - 1) as usize);
                prop_assert!(r.val.iter().all(|d| r.train.binary_search(d).is_err()));
            }
        }
    }
}
