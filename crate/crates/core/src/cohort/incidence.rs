use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

string_enum! {
    pub enum CiMethod {
        /// `rate ± 1.96 * sqrt(events) / person_years`.
        NormalApprox => "normal_approx",
        /// Chi-square (Garwood) limits for a Poisson count.
        ExactPoisson => "exact_poisson",
    }
}

impl Default for CiMethod {
    fn default() -> Self {
        CiMethod::ExactPoisson
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IncidenceError {
    #[error("person-years must be positive and finite, got {0}")]
    PersonYears(f64),
}

/// Crude rate with its 95% interval, all per 100,000 person-years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncidenceEstimate {
    pub events: u64,
    pub person_years: f64,
    pub rate_per_100k: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: CiMethod,
}

const PER: f64 = 100_000.0;
const Z975: f64 = 1.959_963_984_540_054;

fn chi2_quantile(df: f64, p: f64) -> f64 {
    ChiSquared::new(df).expect("positive df").inverse_cdf(p)
}

/// Exact Poisson limits on the count scale.
fn poisson_limits(events: u64) -> (f64, f64) {
    let k = events as f64;
    let low = if events == 0 { 0.0 } else { chi2_quantile(2.0 * k, 0.025) / 2.0 };
    let high = chi2_quantile(2.0 * k + 2.0, 0.975) / 2.0;
    (low, high)
}

/// With zero events the normal interval degenerates to a point, so its
/// upper limit falls back to the exact one.
pub fn incidence(events: u64, person_years: f64, method: CiMethod) -> Result<IncidenceEstimate, IncidenceError> {
    if !(person_years.is_finite() && person_years > 0.0) {
        return Err(IncidenceError::PersonYears(person_years));
    }
    let scale = PER / person_years;
    let rate = events as f64 * scale;
    let (ci_low, ci_high) = match method {
        CiMethod::NormalApprox if events > 0 => {
            let half = Z975 * (events as f64).sqrt() * scale;
            ((rate - half).max(0.0), rate + half)
        }
        _ => {
            let (lo, hi) = poisson_limits(events);
            (lo * scale, hi * scale)
        }
    };
    Ok(IncidenceEstimate {
        events,
        person_years,
        rate_per_100k: rate,
        ci_low,
        ci_high,
        ci_method: method,
    })
}
