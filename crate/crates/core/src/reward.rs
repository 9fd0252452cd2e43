//! Tabulated reward over (accuracy loss, energy gain), both in percent.
//! Rows are loss bins, columns gain bins; bins are left-closed and inputs
//! beyond the last edge fall into the last bin.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LutConfig {
    pub loss_bins: usize,
    pub gain_bins: usize,
    pub loss_max: f64,
    pub gain_max: f64,
    /// Explicit bin edges (`bins + 1` values) replacing the uniform ones.
    pub loss_edges: Option<Vec<f64>>,
    pub gain_edges: Option<Vec<f64>>,
    /// Loss at which the reward weight crosses zero.
    pub loss_knee: f64,
    /// Cells with both gain and loss midpoints below this get `low_value`.
    pub low_action: f64,
    pub low_value: f64,
}

impl Default for LutConfig {
    fn default() -> Self {
        LutConfig {
            loss_bins: 40,
            gain_bins: 40,
            loss_max: 20.0,
            gain_max: 100.0,
            loss_edges: None,
            gain_edges: None,
            loss_knee: 10.0,
            low_action: 5.0,
            low_value: -0.1,
        }
    }
}

fn uniform_edges(n: usize, max: f64) -> Vec<f64> {
    (0..=n).map(|i| max * i as f64 / n as f64).collect()
}

fn check_edges(name: &str, e: &[f64]) -> Result<()> {
    if e.len() < 2 {
        return Err(Error::Config(format!("{name} edges need at least two values")));
    }
    if e.windows(2).any(|w| !(w[1] > w[0])) || e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} edges must be finite and strictly increasing")));
    }
    Ok(())
}

/// Reward weight of an accuracy loss (percent): a downward parabola that
/// reaches zero at the knee, then a negative linear ramp.
pub fn loss_weight(loss: f64, knee: f64) -> f64 {
    let r = loss / knee;
    if loss < knee {
        1.0 - r * r
    } else {
        -0.5 * r
    }
}

/// Generator value at a point; `gain` in percent.
pub fn generator(loss: f64, gain: f64, cfg: &LutConfig) -> f64 {
    if gain < cfg.low_action && loss < cfg.low_action {
        return cfg.low_value;
    }
    gain / 100.0 * loss_weight(loss, cfg.loss_knee)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLUT {
    pub loss_edges: Vec<f64>,
    pub gain_edges: Vec<f64>,
    /// `grid[loss_bin][gain_bin]`.
    pub grid: Vec<Vec<f64>>,
}

pub fn build_lut(cfg: &LutConfig) -> Result<RewardLUT> {
    let loss_edges = cfg
        .loss_edges
        .clone()
        .unwrap_or_else(|| uniform_edges(cfg.loss_bins, cfg.loss_max));
    let gain_edges = cfg
        .gain_edges
        .clone()
        .unwrap_or_else(|| uniform_edges(cfg.gain_bins, cfg.gain_max));
    check_edges("loss", &loss_edges)?;
    check_edges("gain", &gain_edges)?;
    let mid = |e: &[f64], i: usize| 0.5 * (e[i] + e[i + 1]);
    let grid = (0..loss_edges.len() - 1)
        .map(|i| {
            (0..gain_edges.len() - 1)
                .map(|j| generator(mid(&loss_edges, i), mid(&gain_edges, j), cfg))
                .collect()
        })
        .collect();
    Ok(RewardLUT {
        loss_edges,
        gain_edges,
        grid,
    })
}

fn bin(edges: &[f64], x: f64) -> usize {
    let n = edges.len() - 1;
    edges.partition_point(|&e| e <= x).saturating_sub(1).min(n - 1)
}

impl Default for RewardLUT {
    fn default() -> Self {
        build_lut(&LutConfig::default()).expect("default LUT config is valid")
    }
}

impl RewardLUT {
    pub fn shape(&self) -> (usize, usize) {
        (self.grid.len(), self.grid.first().map_or(0, |r| r.len()))
    }

    pub fn cell(&self, loss_bin: usize, gain_bin: usize) -> f64 {
        self.grid[loss_bin][gain_bin]
    }

    /// Bin indices of a (loss, gain) point. Negative values clamp to the
    /// first bin, values past the last edge to the last one.
    pub fn bins(&self, loss_pct: f64, gain_pct: f64) -> Result<(usize, usize)> {
        if loss_pct.is_nan() || gain_pct.is_nan() {
            return Err(Error::InvalidArgument("NaN reward input".into()));
        }
        Ok((bin(&self.loss_edges, loss_pct), bin(&self.gain_edges, gain_pct)))
    }

    pub fn lookup(&self, loss_pct: f64, gain_pct: f64) -> Result<f64> {
        let (i, j) = self.bins(loss_pct, gain_pct)?;
        Ok(self.grid[i][j])
    }

    pub fn max_cell(&self) -> f64 {
        self.grid.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_cell(&self) -> f64 {
        self.grid.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Row-major argmax, first occurrence.
    pub fn argmax(&self) -> (usize, usize) {
        let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
        for (i, row) in self.grid.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best {
                    best = v;
                    at = (i, j);
                }
            }
        }
        at
    }

    /// Grid as CSV, one loss bin per row, no header.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in &self.grid {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Reads a grid exported by [`RewardLUT::to_csv`]; edges come from `cfg`.
    pub fn from_csv(text: &str, cfg: &LutConfig) -> Result<Self> {
        let mut lut = build_lut(cfg)?;
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut grid = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("LUT cell {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            grid.push(row);
        }
        let (rows, cols) = lut.shape();
        if grid.len() != rows || grid.iter().any(|r| r.len() != cols) {
            return Err(Error::Config(format!("LUT CSV must be {rows} x {cols}")));
        }
        lut.grid = grid;
        Ok(lut)
    }

    pub fn load_csv(path: impl AsRef<Path>, cfg: &LutConfig) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_cell_is_low_loss_high_gain() {
        let lut = RewardLUT::default();
        assert_eq!(lut.shape(), (40, 40));
        assert_eq!(lut.argmax(), (0, 39));
        assert_eq!(lut.cell(0, 39), lut.max_cell());
    }

    #[test]
    fn low_action_cell_is_negative() {
        let lut = RewardLUT::default();
        assert_eq!(lut.lookup(3.0, 2.0).unwrap(), -0.1);
        assert_eq!(lut.lookup(0.0, 0.0).unwrap(), -0.1);
    }

    #[test]
    fn high_loss_below_low_loss() {
        let lut = RewardLUT::default();
        let high_loss_max = (20..40).flat_map(|i| lut.grid[i].iter().copied()).fold(f64::MIN, f64::max);
        let zero_loss_min = (2..40).map(|j| lut.grid[0][j]).fold(f64::MAX, f64::min);
        assert!(high_loss_max <= 0.0);
        assert!(zero_loss_min > 0.0);
    }

    #[test]
    fn edges_and_clamps() {
        let lut = RewardLUT::default();
        assert_eq!(lut.bins(0.5, 2.5).unwrap(), (1, 1));
        assert_eq!(lut.lookup(35.0, 50.0).unwrap(), lut.lookup(20.0, 50.0).unwrap());
        assert_eq!(lut.bins(20.0, 100.0).unwrap(), (39, 39));
        assert!(lut.lookup(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn monotone_outside_low_action_region() {
        let lut = RewardLUT::default();
        let low = |i: usize, j: usize| i < 10 && j < 2;
        for i in 0..20 {
            for j in 0..40 {
                if j + 1 < 40 && !low(i, j) {
                    assert!(lut.grid[i][j + 1] >= lut.grid[i][j]);
                }
                if i + 1 < 20 && !low(i, j) {
                    assert!(lut.grid[i + 1][j] <= lut.grid[i][j]);
                }
            }
        }
    }

    #[test]
    fn rejects_non_monotone_edges() {
        let cfg = LutConfig {
            loss_edges: Some(vec![0.0, 2.0, 1.0]),
            ..LutConfig::default()
        };
        assert!(build_lut(&cfg).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let lut = RewardLUT::default();
        let text = lut.to_csv().unwrap();
        assert_eq!(text.lines().count(), 40);
        assert_eq!(RewardLUT::from_csv(&text, &LutConfig::default()).unwrap(), lut);
        assert!(RewardLUT::from_csv("1,2\n", &LutConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn lookup_matches_generator(loss in 0.0f64..20.0, gain in 0.0f64..100.0) {
            let cfg = LutConfig::default();
            let lut = build_lut(&cfg).unwrap();
            let i = (loss / 0.5).floor() as usize;
            let j = (gain / 2.5).floor() as usize;
            let expected = generator(0.25 + 0.5 * i as f64, 1.25 + 2.5 * j as f64, &cfg);
            prop_assert_eq!(lut.lookup(loss, gain).unwrap(), expected);
        }

        #[test]
        fn argmax_scale_invariant(c in 0.01f64..100.0) {
            let mut lut = RewardLUT::default();
            let before = lut.argmax();
            for v in lut.grid.iter_mut().flatten() { *v *= c; }
            prop_assert_eq!(lut.argmax(), before);
        }
    }
}
