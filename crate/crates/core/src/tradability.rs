//! Radius-neighbour tradability classifier.
//!
//! Features are `(moneyness, days to maturity)` quantile-scaled on the
//! training points. A query's tradability probability is the mean label of
//! the training points within the radius, or of the five nearest points when
//! the ball is empty. The radius is chosen from 50 values evenly spaced in
//! `(0, 0.1]` by validation misclassification at threshold 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scaler::QuantileScaler;

pub const FALLBACK_K: usize = 5;

/// One labelled observation: raw features and whether the asset traded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradePoint {
    pub moneyness: f64,
    pub days_to_maturity: f64,
    pub traded: bool,
}

/// The 50 candidate radii `0.002, 0.004, ..., 0.1`.
pub fn default_radii() -> Vec<f64> {
    (1..=50).map(|i| 0.1 * i as f64 / 50.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradabilityModel {
    pub radius: f64,
    pub fallback_k: usize,
    pub scaler: QuantileScaler,
    points: Vec<[f64; 2]>,
    labels: Vec<f64>,
    /// Validation misclassification rate per candidate radius.
    pub val_errors: Vec<(f64, f64)>,
}

impl TradabilityModel {
    fn scaled(&self, moneyness: f64, days: f64) -> [f64; 2] {
        let z = self.scaler.transform_row(&[moneyness, days]).expect("two features");
        [z[0], z[1]]
    }

    /// Probability estimate for raw features.
    pub fn predict(&self, moneyness: f64, days_to_maturity: f64) -> f64 {
        let q = self.scaled(moneyness, days_to_maturity);
        predict_scaled(&self.points, &self.labels, q, self.radius, self.fallback_k)
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn predict_scaled(points: &[[f64; 2]], labels: &[f64], q: [f64; 2], radius: f64, k: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, y) in points.iter().zip(labels) {
        if dist(*p, q) <= radius {
            sum += y;
            count += 1;
        }
    }
    if count > 0 {
        return sum / count as f64;
    }
    knn_mean(points, labels, q, k)
}

fn knn_mean(points: &[[f64; 2]], labels: &[f64], q: [f64; 2], k: usize) -> f64 {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist(*p, q), i)).collect();
    let k = k.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
    }
    d[..k].iter().map(|(_, i)| labels[*i]).sum::<f64>() / k as f64
}

/// Fit the classifier, choosing the radius with the lowest validation
/// misclassification (ties go to the smaller radius).
pub fn fit_tradability(train: &[TradePoint], val: &[TradePoint], radii: &[f64]) -> Result<TradabilityModel> {
    if train.is_empty() {
        return Err(CoreError::Empty("tradability training set".into()));
    }
    if radii.is_empty() {
        return Err(CoreError::Config("no candidate radii".into()));
    }
    let raw: Vec<Vec<f64>> = train.iter().map(|p| vec![p.moneyness, p.days_to_maturity]).collect();
    let scaler = QuantileScaler::fit(&raw)?;
    let points: Vec<[f64; 2]> = scaler
        .transform(&raw)?
        .into_iter()
        .map(|z| [z[0], z[1]])
        .collect();
    let labels: Vec<f64> = train.iter().map(|p| p.traded as u8 as f64).collect();

    let mut model = TradabilityModel {
        radius: radii[0],
        fallback_k: FALLBACK_K,
        scaler,
        points,
        labels,
        val_errors: Vec::new(),
    };
    if val.is_empty() {
        log::warn!("empty tradability validation set; keeping radius {}", radii[0]);
        return Ok(model);
    }
    let max_r = radii.iter().copied().fold(0.0, f64::max);
    let mut wrong = vec![0usize; radii.len()];
    for v in val {
        let q = model.scaled(v.moneyness, v.days_to_maturity);
        // neighbours within the largest radius, sorted by distance
        let mut near: Vec<(f64, f64)> = model
            .points
            .iter()
            .zip(&model.labels)
            .filter_map(|(p, y)| {
                let d = dist(*p, q);
                (d <= max_r).then_some((d, *y))
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut fallback: Option<f64> = None;
        for (ri, &r) in radii.iter().enumerate() {
            let n_in = near.partition_point(|(d, _)| *d <= r);
            let pred = if n_in > 0 {
                near[..n_in].iter().map(|(_, y)| y).sum::<f64>() / n_in as f64
            } else {
                *fallback.get_or_insert_with(|| knn_mean(&model.points, &model.labels, q, FALLBACK_K))
            };
            if (pred >= 0.5) != v.traded {
                wrong[ri] += 1;
            }
        }
    }
    let mut best = 0;
    for i in 1..radii.len() {
        if wrong[i] < wrong[best] {
            best = i;
        }
    }
    model.radius = radii[best];
    model.val_errors = radii
        .iter()
        .zip(&wrong)
        .map(|(r, w)| (*r, *w as f64 / val.len() as f64))
        .collect();
    Ok(model)
}
