use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided 5% critical value of the large-sample t distribution.
pub const T_CRITICAL_0_05: f64 = 1.645;

/// Mean and sample (n - 1) standard deviation; SD is 0 for fewer than two
/// values.
pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestMethod {
    /// Unequal variances.
    #[default]
    Welch,
    /// Equal variances, pooled estimate.
    Pooled,
}

impl std::fmt::Display for TTestMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TTestMethod::Welch => "welch",
            TTestMethod::Pooled => "pooled",
        })
    }
}

impl std::str::FromStr for TTestMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "welch" => Ok(TTestMethod::Welch),
            "pooled" => Ok(TTestMethod::Pooled),
            _ => Err(Error::Parse(format!("unknown t-test method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_value: f64,
    pub method: TTestMethod,
    pub first: SampleSummary,
    pub second: SampleSummary,
    pub critical_value_0_05: f64,
}

impl TTestResult {
    /// Second sample significantly larger at the one-sided 5% level.
    pub fn significant(&self) -> bool {
        self.t_value > self.critical_value_0_05
    }
}

/// Two-sample t statistic for `second - first`.
pub fn students_t(first: SampleSummary, second: SampleSummary, method: TTestMethod) -> Result<TTestResult> {
    for s in [first, second] {
        if s.n < 2 || !(s.sd >= 0.0) || !s.mean.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "t test needs n >= 2 and a non-negative SD, got {s:?}"
            )));
        }
    }
    let (n1, n2) = (first.n as f64, second.n as f64);
    let (v1, v2) = (first.sd.powi(2), second.sd.powi(2));
    let se = match method {
        TTestMethod::Welch => (v1 / n1 + v2 / n2).sqrt(),
        TTestMethod::Pooled => {
            let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
            (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt()
        }
    };
    let diff = second.mean - first.mean;
    let t_value = if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        diff.signum() * f64::INFINITY
    } else {
        diff / se
    };
    Ok(TTestResult {
        t_value,
        method,
        first,
        second,
        critical_value_0_05: T_CRITICAL_0_05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn s(mean: f64, sd: f64, n: usize) -> SampleSummary {
        SampleSummary { mean, sd, n }
    }

    #[test]
    fn welch_by_hand() {
        // 5.5 / sqrt(7.64^2/12 + 7.55^2/12) = 5.5 / 3.1006...
        let r = students_t(s(78.25, 7.64, 12), s(83.75, 7.55, 12), TTestMethod::Welch).unwrap();
        let by_hand = 5.5 / ((7.64f64 * 7.64 + 7.55 * 7.55) / 12.0).sqrt();
        assert_abs_diff_eq!(r.t_value, by_hand, epsilon = 1e-12);
        assert_abs_diff_eq!(r.t_value, 1.774, epsilon = 1e-3);
        assert!(r.significant());
        assert_eq!(r.critical_value_0_05, 1.645);
    }

    #[test]
    fn pooled_equals_welch_for_equal_n() {
        let a = students_t(s(1.0, 2.0, 10), s(3.0, 1.0, 10), TTestMethod::Welch).unwrap();
        let b = students_t(s(1.0, 2.0, 10), s(3.0, 1.0, 10), TTestMethod::Pooled).unwrap();
        assert_abs_diff_eq!(a.t_value, b.t_value, epsilon = 1e-12);
        let c = students_t(s(1.0, 2.0, 5), s(3.0, 1.0, 20), TTestMethod::Pooled).unwrap();
        // pooled: sp^2 = (4*4 + 19*1)/23
        let sp2 = (4.0 * 4.0 + 19.0) / 23.0;
        assert_abs_diff_eq!(c.t_value, 2.0 / (sp2 * (0.2 + 0.05f64)).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn antisymmetry_and_zero() {
        for m in [TTestMethod::Welch, TTestMethod::Pooled] {
            let a = students_t(s(10.0, 3.0, 7), s(12.0, 4.0, 9), m).unwrap();
            let b = students_t(s(12.0, 4.0, 9), s(10.0, 3.0, 7), m).unwrap();
            assert_eq!(a.t_value, -b.t_value);
            assert_eq!(students_t(s(5.0, 1.0, 4), s(5.0, 1.0, 4), m).unwrap().t_value, 0.0);
            assert_eq!(students_t(s(5.0, 0.0, 4), s(5.0, 0.0, 4), m).unwrap().t_value, 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(students_t(s(1.0, 1.0, 1), s(1.0, 1.0, 5), TTestMethod::Welch).is_err());
        assert!(students_t(s(1.0, -1.0, 3), s(1.0, 1.0, 5), TTestMethod::Welch).is_err());
    }

    #[test]
    fn sample_sd() {
        let (m, sd) = mean_and_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_abs_diff_eq!(sd, (32.0f64 / 7.0).sqrt(), epsilon = 1e-12);
        assert_eq!(mean_and_sd(&[3.0]), (3.0, 0.0));
    }
}
