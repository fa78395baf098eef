use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;

/// Running per-feature mean and variance (Welford), pooled over agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub count: u64,
    pub mean: [f64; OBS_DIM],
    m2: [f64; OBS_DIM],
}

impl Default for ObsNormalizer {
    fn default() -> Self {
        ObsNormalizer {
            count: 0,
            mean: [0.0; OBS_DIM],
            m2: [0.0; OBS_DIM],
        }
    }
}

impl ObsNormalizer {
    pub fn update(&mut self, obs: &[f64; OBS_DIM]) {
        self.count += 1;
        let n = self.count as f64;
        for k in 0..OBS_DIM {
            let delta = obs[k] - self.mean[k];
            self.mean[k] += delta / n;
            self.m2[k] += delta * (obs[k] - self.mean[k]);
        }
    }

    pub fn std_dev(&self) -> [f64; OBS_DIM] {
        let mut out = [1.0; OBS_DIM];
        if self.count > 1 {
            for (o, m2) in out.iter_mut().zip(self.m2) {
                let sd = (m2 / self.count as f64).sqrt();
                *o = if sd > 1e-8 { sd } else { 1.0 };
            }
        }
        out
    }

    pub fn normalize(&self, obs: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let sd = self.std_dev();
        let mut out = [0.0; OBS_DIM];
        for k in 0..OBS_DIM {
            out[k] = (obs[k] - self.mean[k]) / sd[k];
        }
        out
    }

    /// Normalised rows as a `len x OBS_DIM` matrix.
    pub fn batch<'a>(&self, rows: impl ExactSizeIterator<Item = &'a [f64; OBS_DIM]>) -> Array2<f64> {
        let sd = self.std_dev();
        let len = rows.len();
        let mut out = Array2::zeros((len, OBS_DIM));
        for (r, obs) in rows.enumerate() {
            for k in 0..OBS_DIM {
                out[[r, k]] = (obs[k] - self.mean[k]) / sd[k];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_population_moments() {
        let mut n = ObsNormalizer::default();
        let data = [[1.0, 10.0, 5.0], [3.0, 20.0, 5.0], [5.0, 60.0, 5.0]];
        for d in &data {
            n.update(d);
        }
        assert!((n.mean[0] - 3.0).abs() < 1e-12);
        assert!((n.mean[1] - 30.0).abs() < 1e-12);
        let sd = n.std_dev();
        assert!((sd[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        // Constant feature keeps unit scale.
        assert_eq!(sd[2], 1.0);
        let z = n.normalize(&[3.0, 30.0, 5.0]);
        assert_eq!(z, [0.0, 0.0, 0.0]);
        let b = n.batch(data.iter());
        assert_eq!(b.dim(), (3, 3));
        assert!((b[[2, 0]] - 2.0 / sd[0]).abs() < 1e-12);
    }
}
