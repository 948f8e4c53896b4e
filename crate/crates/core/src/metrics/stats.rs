use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-tailed.
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-tailed.
    pub p: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub dof: f64,
}

fn two_tailed(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Pearson r with a t-test of `r = 0` on `n - 2` degrees of freedom.
pub fn pearson_with_p(x: &[f64], y: &[f64]) -> Result<Correlation, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(MetricError::TooFewSamples { needed: 3, got: n });
    }
    let (mx, _) = mean_var(x);
    let (my, _) = mean_var(y);
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        xy += dx * dy;
        xx += dx * dx;
        yy += dy * dy;
    }
    if xx <= 0.0 || yy <= 0.0 {
        return Err(MetricError::Undefined("Pearson correlation"));
    }
    let r = (xy / (xx.sqrt() * yy.sqrt())).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let t = if r.abs() == 1.0 {
        f64::INFINITY.copysign(r)
    } else {
        r * (dof / (1.0 - r * r)).sqrt()
    };
    Ok(Correlation {
        r,
        p: two_tailed(t, dof),
        n,
    })
}

/// Welch's unequal-variance t-test of `mean(a) = mean(b)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, MetricError> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(MetricError::TooFewSamples {
                needed: 2,
                got: g.len(),
            });
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    if sa + sb <= 0.0 {
        return Err(MetricError::Undefined("Welch t-test"));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let dof = (sa + sb).powi(2)
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(TTest {
        t,
        p: two_tailed(t, dof),
        dof,
    })
}
