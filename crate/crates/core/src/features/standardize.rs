use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column z-score parameters fit on training rows (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Self> {
        let mut sum = vec![0.0; width];
        let mut count = 0usize;
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for row in &rows {
            if row.len() != width {
                return Err(Error::Dimension {
                    expected: width,
                    got: row.len(),
                });
            }
            for (s, v) in sum.iter_mut().zip(row.iter()) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Ok(StandardizationStats {
                mean: vec![0.0; width],
                std: vec![0.0; width],
            });
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; width];
        for row in &rows {
            for ((acc, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(StandardizationStats { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Z-scores `row` in place. Zero-variance columns map to 0.
    pub fn apply(&self, row: &mut [f64]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::Dimension {
                expected: self.width(),
                got: row.len(),
            });
        }
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
        Ok(())
    }

    pub fn applied(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut out = row.to_vec();
        self.apply(&mut out)?;
        Ok(out)
    }
}

/// Standardizes every row. With `stats = None` the statistics are fit on
/// `rows` first (training time); otherwise the given ones are applied.
pub fn standardize(
    rows: &[Vec<f64>],
    stats: Option<&StandardizationStats>,
) -> Result<(Vec<Vec<f64>>, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let width = rows.first().map_or(0, Vec::len);
            StandardizationStats::fit(rows.iter().map(Vec::as_slice), width)?
        }
    };
    let out = rows
        .iter()
        .map(|r| stats.applied(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, stats))
}
