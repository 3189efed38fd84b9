//! Trend statistics over a recursive-entropy trajectory: fixed-size
//! position groups, a log-linear least-squares fit, and a three-way
//! classification of the direction.

use serde::{Deserialize, Serialize};

use crate::dist::RecursiveEntropyRecord;
use crate::error::CoreError;

/// Records per group.
pub const GROUP_SIZE: usize = 10;

/// Slopes smaller than this in magnitude classify as flat.
pub const FLAT_SLOPE_EPSILON: f64 = 1e-6;

/// Summary of one group of consecutive records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendGroup {
    /// Median of the token positions in the group.
    pub median_token_index: f64,
    pub mean_re: f64,
    pub min_re: f64,
    pub max_re: f64,
    /// Population variance of the group's values.
    pub variance: f64,
    /// Number of records in the group (the final group may be short).
    pub count: usize,
}

/// A fitted line with its coefficient of determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
}

/// Direction of the fitted trend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendClass {
    Descending,
    Ascending,
    Flat,
}

/// Groups, the primary semi-log fit (ln of group mean against median
/// position), a secondary log-log fit, and the classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendAnalysis {
    pub groups: Vec<TrendGroup>,
    pub slope: f64,
    pub intercept: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
    pub classification: TrendClass,
    /// Same fit with positions also on a log scale; absent when a median
    /// position is not strictly positive.
    pub loglog: Option<FitLine>,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> Result<FitLine, CoreError> {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    if !(sxx.is_finite() && sxx > 0.0) {
        return Err(CoreError::InvalidRecords(
            "group positions have no spread, cannot fit a line".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    // A perfectly flat series explains itself; only residual error drops r2.
    let r_squared = if ss_tot <= f64::EPSILON * n {
        if ss_res <= f64::EPSILON * n {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(FitLine {
        slope,
        intercept,
        r_squared,
    })
}

fn summarize(chunk: &[RecursiveEntropyRecord]) -> TrendGroup {
    let mut positions: Vec<f64> = chunk.iter().map(|r| r.position as f64).collect();
    positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = positions.len() / 2;
    let median_token_index = if positions.len() % 2 == 0 {
        (positions[mid - 1] + positions[mid]) / 2.0
    } else {
        positions[mid]
    };
    let count = chunk.len();
    let mean_re = chunk.iter().map(|r| r.value).sum::<f64>() / count as f64;
    let min_re = chunk.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let max_re = chunk
        .iter()
        .map(|r| r.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let variance = chunk
        .iter()
        .map(|r| (r.value - mean_re) * (r.value - mean_re))
        .sum::<f64>()
        / count as f64;
    TrendGroup {
        median_token_index,
        mean_re,
        min_re,
        max_re,
        variance,
        count,
    }
}

/// Analyzes a trajectory of records in the order given.
///
/// Records are grouped into runs of [`GROUP_SIZE`]; every group appears in
/// the output, but only full groups enter the regressions, so a short tail
/// cannot tilt the slope. Requires at least two full groups of records
/// with finite positive values.
pub fn analyze_trend(records: &[RecursiveEntropyRecord]) -> Result<TrendAnalysis, CoreError> {
    let needed = 2 * GROUP_SIZE;
    if records.len() < needed {
        return Err(CoreError::InsufficientData {
            records: records.len(),
            needed,
        });
    }
    if let Some(bad) = records
        .iter()
        .find(|r| !(r.value.is_finite() && r.value > 0.0))
    {
        return Err(CoreError::InvalidRecords(format!(
            "record at position {} has non-positive value {}",
            bad.position, bad.value
        )));
    }

    let groups: Vec<TrendGroup> = records.chunks(GROUP_SIZE).map(summarize).collect();
    let full: Vec<&TrendGroup> = groups.iter().filter(|g| g.count == GROUP_SIZE).collect();

    let xs: Vec<f64> = full.iter().map(|g| g.median_token_index).collect();
    let ys: Vec<f64> = full.iter().map(|g| g.mean_re.ln()).collect();
    let primary = fit_line(&xs, &ys)?;

    let loglog = if xs.iter().all(|&x| x > 0.0) {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        fit_line(&lx, &ys).ok()
    } else {
        None
    };

    let classification = if primary.slope.abs() < FLAT_SLOPE_EPSILON {
        TrendClass::Flat
    } else if primary.slope < 0.0 {
        TrendClass::Descending
    } else {
        TrendClass::Ascending
    };

    Ok(TrendAnalysis {
        groups,
        slope: primary.slope,
        intercept: primary.intercept,
        r_squared: primary.r_squared,
        classification,
        loglog,
    })
}
