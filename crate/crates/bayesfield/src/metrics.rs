//! Forecast scores for point and interval predictions.
//!
//! Point forecasts are scored by root-mean-square error and mean absolute
//! error; central prediction intervals by the mean interval score, which
//! charges the interval width plus `2/α` times the distance by which the
//! observation escapes the interval.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_paired(y: &[f64], other: &[f64], what: &str) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyInput("score inputs".into()));
    }
    if y.len() != other.len() {
        return Err(Error::dim(what, y.len(), other.len()));
    }
    Ok(())
}

/// Root-mean-square error `√(Σ(y−ŷ)²/n)`.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_paired(y, yhat, "point forecasts")?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / y.len() as f64).sqrt())
}

/// Mean absolute error `Σ|y−ŷ|/n`.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_paired(y, yhat, "point forecasts")?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Mean interval score at level `alpha`.
///
/// Each record contributes `(u−ℓ) + (2/α)(ℓ−y)·1[y<ℓ] + (2/α)(y−u)·1[y>u]`,
/// so the score equals the mean interval width exactly when every
/// observation is covered.
pub fn mis(y: &[f64], lower: &[f64], upper: &[f64], alpha: f64) -> Result<f64> {
    check_paired(y, lower, "interval lower bounds")?;
    check_paired(y, upper, "interval upper bounds")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie strictly inside (0, 1)"));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(Error::invalid(
            "prediction interval",
            "lower bound exceeds upper bound",
        ));
    }
    let penalty = 2.0 / alpha;
    let mut total = 0.0;
    for ((&yi, &l), &u) in y.iter().zip(lower).zip(upper) {
        total += u - l;
        if yi < l {
            total += penalty * (l - yi);
        }
        if yi > u {
            total += penalty * (yi - u);
        }
    }
    Ok(total / y.len() as f64)
}

/// Bundle of all three scores over one evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rmse: f64,
    pub mae: f64,
    pub mis: f64,
    pub n: usize,
    pub alpha: f64,
}

impl ScoreReport {
    /// Scores point forecasts `yhat` and intervals `[lower, upper]` against `y`.
    pub fn compute(
        y: &[f64],
        yhat: &[f64],
        lower: &[f64],
        upper: &[f64],
        alpha: f64,
    ) -> Result<Self> {
        Ok(ScoreReport {
            rmse: rmse(y, yhat)?,
            mae: mae(y, yhat)?,
            mis: mis(y, lower, upper, alpha)?,
            n: y.len(),
            alpha,
        })
    }

    /// Column header matching [`ScoreReport::to_delimited`].
    pub const DELIMITED_HEADER: &'static str = "n,alpha,rmse,mae,mis";

    /// The report as one comma-separated line, full precision.
    pub fn to_delimited(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.n, self.alpha, self.rmse, self.mae, self.mis
        )
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records:  {}", self.n)?;
        writeln!(f, "rmse:     {:.6}", self.rmse)?;
        writeln!(f, "mae:      {:.6}", self.mae)?;
        write!(
            f,
            "mis:      {:.6}  (alpha = {})",
            self.mis, self.alpha
        )
    }
}
