//! Small descriptive statistics used when aggregating replications and seeds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for fewer than two values.
    pub std_dev: Option<f64>,
    /// Half-width of the two-sided 95% Student-t interval around the mean.
    pub ci95_half_width: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        let mean = if count == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / count as f64
        };
        if count < 2 {
            return Summary {
                count,
                mean,
                std_dev: None,
                ci95_half_width: None,
            };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        let std_dev = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (count - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        Summary {
            count,
            mean,
            std_dev: Some(std_dev),
            ci95_half_width: Some(t * std_dev / (count as f64).sqrt()),
        }
    }

    pub fn ci95(&self) -> Option<(f64, f64)> {
        self.ci95_half_width.map(|h| (self.mean - h, self.mean + h))
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even length.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
