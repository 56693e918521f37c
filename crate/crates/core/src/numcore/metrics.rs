use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard regression diagnostics. `r2` is NaN (with `r2_defined = false`)
/// when the targets are constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mape_skipped: usize,
    pub r2: f64,
    pub r2_defined: bool,
    pub mae: f64,
}

pub fn regression_metrics(y_hat: &[f64], y: &[f64]) -> Result<RegressionMetrics> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape("predictions and targets differ in length".into()));
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData("metrics need at least 2 points".into()));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs = 0.0;
    let mut pct = 0.0;
    let mut skipped = 0;
    for (&p, &t) in y_hat.iter().zip(y) {
        let e = p - t;
        ss_res += e * e;
        ss_tot += (t - mean) * (t - mean);
        abs += e.abs();
        if t == 0.0 {
            skipped += 1;
        } else {
            pct += (e / t).abs();
        }
    }
    let counted = y.len() - skipped;
    let r2_defined = ss_tot > 0.0;
    Ok(RegressionMetrics {
        mse: ss_res / n,
        rmse: (ss_res / n).sqrt(),
        mape: if counted > 0 { pct / counted as f64 } else { f64::NAN },
        mape_skipped: skipped,
        r2: if r2_defined { 1.0 - ss_res / ss_tot } else { f64::NAN },
        r2_defined,
        mae: abs / n,
    })
}
