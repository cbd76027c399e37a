use serde::{Deserialize, Serialize};

use super::BenchError;

/// Initial, agent and default-pipeline op counts for one benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricRow {
    pub i: u64,
    pub r: u64,
    pub d: u64,
}

impl MetricRow {
    pub fn new(i: u64, r: u64, d: u64) -> Self {
        Self { i, r, d }
    }

    /// `(I - R) / (I - D)`, or `Excluded` when the row cannot enter the
    /// product.
    pub fn ratio(&self) -> RowRatio {
        let MetricRow { i, r, d } = *self;
        if r > i || d > i {
            return RowRatio::Excluded;
        }
        if i == d {
            return if r == i {
                RowRatio::Ratio(1.0)
            } else {
                RowRatio::Excluded
            };
        }
        RowRatio::Ratio((i - r) as f64 / (i - d) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowRatio {
    Ratio(f64),
    Excluded,
}

impl RowRatio {
    pub fn value(self) -> Option<f64> {
        match self {
            RowRatio::Ratio(x) => Some(x),
            RowRatio::Excluded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub value: f64,
    pub included: usize,
    /// Positions of excluded rows in the input.
    pub excluded: Vec<usize>,
}

/// Geometric mean of per-row reduction ratios, taken as the exponential of
/// the mean log ratio.
pub fn geometric_mean_metric(rows: &[MetricRow]) -> Result<MetricResult, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    let mut excluded = vec![];
    let mut ratios = vec![];
    for (k, row) in rows.iter().enumerate() {
        match row.ratio() {
            RowRatio::Ratio(x) => ratios.push(x),
            RowRatio::Excluded => excluded.push(k),
        }
    }
    if ratios.is_empty() {
        return Err(BenchError::MetricUndefined(rows.len()));
    }
    let value = if ratios.contains(&0.0) {
        0.0
    } else if ratios.len() == 1 {
        ratios[0]
    } else {
        (ratios.iter().map(|x| x.ln()).sum::<f64>() / ratios.len() as f64).exp()
    };
    Ok(MetricResult {
        value,
        included: ratios.len(),
        excluded,
    })
}

/// Percentage by which the agent's reduction exceeds the default's.
pub fn improvement_percent(i: u64, r: u64, d: u64) -> f64 {
    let gain = (i as f64 - r as f64) - (i as f64 - d as f64);
    100.0 * gain / (i as f64 - d as f64).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_rows() {
        let one = geometric_mean_metric(&[MetricRow::new(100, 80, 90)]).unwrap();
        assert_eq!(one.value, 2.0);
        let two = geometric_mean_metric(&[MetricRow::new(100, 80, 90), MetricRow::new(100, 95, 90)]).unwrap();
        assert_eq!(two.value, 1.0);
    }

    #[test]
    fn degenerate_rows() {
        assert_eq!(MetricRow::new(10, 10, 10).ratio(), RowRatio::Ratio(1.0));
        assert_eq!(MetricRow::new(10, 8, 10).ratio(), RowRatio::Excluded);
        assert_eq!(MetricRow::new(10, 11, 8).ratio(), RowRatio::Excluded);
        let res = geometric_mean_metric(&[MetricRow::new(10, 8, 10), MetricRow::new(10, 6, 6)]).unwrap();
        assert_eq!((res.value, res.included, res.excluded), (1.0, 1, vec![0]));
        assert!(matches!(
            geometric_mean_metric(&[MetricRow::new(10, 8, 10)]),
            Err(BenchError::MetricUndefined(1))
        ));
    }

    #[test]
    fn zero_ratio_zeroes_metric() {
        let res = geometric_mean_metric(&[MetricRow::new(10, 10, 5), MetricRow::new(10, 2, 5)]).unwrap();
        assert_eq!(res.value, 0.0);
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_percent(100, 80, 90), 100.0);
        assert_eq!(improvement_percent(100, 90, 90), 0.0);
        assert!(improvement_percent(100, 95, 90) < 0.0);
        assert_eq!(improvement_percent(10, 9, 10), 100.0);
    }
}
