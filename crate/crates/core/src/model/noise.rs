use std::collections::HashMap;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::Table;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-dimension population mean and variance of a set of equal-length rows.
pub fn population_stats<T: Real, R: AsRef<[T]>>(rows: impl IntoIterator<Item = R>) -> (Vec<T>, Vec<T>) {
    let rows: Vec<R> = rows.into_iter().collect();
    let Some(first) = rows.first() else {
        return (Vec::new(), Vec::new());
    };
    let dim = first.as_ref().len();
    let n = T::lit(rows.len() as f64);
    let mut mean = vec![T::zero(); dim];
    for r in &rows {
        for (m, &x) in mean.iter_mut().zip(r.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); dim];
    for r in &rows {
        for ((v, &x), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Gaussian noise statistics for the three raw-stage (modality-specific)
/// representations, and the fraction of batch entities that get noised.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<T> {
    pub mean: [Vec<T>; 3],
    pub var: [Vec<T>; 3],
    pub ratio: f64,
}

/// Statistics over every row of each modality table.
pub fn noise_stats<T: Real>(modal: &[Table<T>; 3], ratio: f64) -> Result<NoiseModel<T>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("noise ratio {ratio} outside [0, 1]")));
    }
    if modal.iter().any(|t| t.rows == 0) {
        return Err(Error::Invalid("noise statistics need at least one row".into()));
    }
    let stats: Vec<_> = modal
        .iter()
        .map(|t| population_stats((0..t.rows).map(|i| t.row(i))))
        .collect();
    let mut it = stats.into_iter();
    let (m0, v0) = it.next().unwrap();
    let (m1, v1) = it.next().unwrap();
    let (m2, v2) = it.next().unwrap();
    Ok(NoiseModel {
        mean: [m0, m1, m2],
        var: [v0, v1, v2],
        ratio,
    })
}

/// Concrete noise vectors for one batch: entity id → additive noise per
/// modality. Entities absent from the map are clean.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseDraw<T> {
    pub rows: HashMap<u32, [Vec<T>; 3]>,
}

impl<T: Real> NoiseModel<T> {
    /// Picks `round(ratio · |entities|)` of the given entities and draws
    /// `N(mean, var)` noise for each of their three modalities.
    pub fn sample(&self, entities: &[u32], rng: &mut ChaCha8Rng) -> NoiseDraw<T> {
        let k = ((self.ratio * entities.len() as f64).round() as usize).min(entities.len());
        let mut picked: Vec<usize> = sample(rng, entities.len(), k).into_vec();
        picked.sort_unstable();
        let mut rows = HashMap::with_capacity(k);
        for i in picked {
            let draw = std::array::from_fn(|m| {
                self.mean[m]
                    .iter()
                    .zip(&self.var[m])
                    .map(|(&mu, &var)| {
                        let z: f64 = StandardNormal.sample(rng);
                        mu + var.sqrt() * T::lit(z)
                    })
                    .collect()
            });
            rows.insert(entities[i], draw);
        }
        NoiseDraw { rows }
    }
}
