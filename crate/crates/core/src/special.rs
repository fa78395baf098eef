//! Gauss error function and the Gaussian CDF built on it.

/// Gauss error function.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// `P(X <= x)` for `X ~ N(0, std_dev^2)`, written as `1/2 + erf(x / (sqrt2 * std_dev)) / 2`.
pub fn gaussian_cdf(x: f64, std_dev: f64) -> f64 {
    0.5 + 0.5 * erf(x / (std::f64::consts::SQRT_2 * std_dev))
}
