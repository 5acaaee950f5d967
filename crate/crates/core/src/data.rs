//! Demand datasets: synthetic generation, CSV ingestion, min-max
//! normalization, and weekly-block train/test splitting.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::num::Scalar;
use crate::Real;

pub const HOURS_PER_WEEK: usize = 168;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Hourly per-area demand snapshots with a train/test tag per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandDataset {
    pub timestamps: Vec<u64>,
    pub areas: Vec<String>,
    /// `(hours, areas)` in MW.
    pub values: Mat<Real>,
    pub split: Vec<SplitTag>,
}

impl DemandDataset {
    pub fn new(timestamps: Vec<u64>, areas: Vec<String>, values: Mat<Real>) -> Result<Self> {
        if values.rows() != timestamps.len() {
            return Err(Error::DimensionMismatch {
                context: "DemandDataset timestamps",
                expected: values.rows(),
                got: timestamps.len(),
            });
        }
        if values.cols() != areas.len() {
            return Err(Error::DimensionMismatch {
                context: "DemandDataset areas",
                expected: values.cols(),
                got: areas.len(),
            });
        }
        if values.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("demand values".into()));
        }
        let split = vec![SplitTag::Train; values.rows()];
        Ok(DemandDataset {
            timestamps,
            areas,
            values,
            split,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn n_areas(&self) -> usize {
        self.values.cols()
    }

    pub fn row_indices(&self, tag: SplitTag) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn rows_with_tag(&self, tag: SplitTag) -> Mat<Real> {
        self.values.select_rows(&self.row_indices(tag))
    }

    /// Writes the `timestamp,<area>...` CSV schema at full float precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "timestamp")?;
        for a in &self.areas {
            write!(w, ",{a}")?;
        }
        writeln!(w)?;
        for (t, row) in self.timestamps.iter().zip(self.values.iter_rows()) {
            write!(w, "{t}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Randomly assigns contiguous 168-hour blocks to train/test.
    ///
    /// Only full weeks participate in the draw; a trailing partial week
    /// always stays in the training set. At least one block remains train.
    pub fn split_weekly(&mut self, test_fraction: Real, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidConfig(
                "test_fraction must lie in [0, 1)".into(),
            ));
        }
        let full_blocks = self.rows() / HOURS_PER_WEEK;
        let mut n_test = (full_blocks as Real * test_fraction).round() as usize;
        if full_blocks > 0 {
            n_test = n_test.min(full_blocks - 1);
        }
        self.split = vec![SplitTag::Train; self.rows()];
        let mut blocks: Vec<usize> = (0..full_blocks).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        blocks.shuffle(&mut rng);
        for &b in blocks.iter().take(n_test) {
            for r in b * HOURS_PER_WEEK..(b + 1) * HOURS_PER_WEEK {
                self.split[r] = SplitTag::Test;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Synthetic hourly demand: per-area base load scaled by shared seasonal and
/// diurnal sinusoids and a cross-area correlated Gaussian factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_areas: usize,
    pub hours: usize,
    pub seed: u64,
    pub base_loads_mw: Vec<Real>,
    pub seasonal_amplitude: Real,
    pub diurnal_amplitude: Real,
    /// Pairwise correlation of the per-area noise factors, in `[0, 1]`.
    pub correlation: Real,
    pub noise_scale: Real,
    /// Spreads the seasonal/diurnal weighting across areas (0 = identical
    /// shape everywhere, 1 = strongly seasonal areas at one end, strongly
    /// diurnal at the other). Gives the data a second principal direction
    /// besides total load.
    #[serde(default)]
    pub shape_diversity: Real,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_areas: 5,
            hours: 17_520, // two years
            seed: 0,
            base_loads_mw: vec![3000.0, 5000.0, 8000.0, 4000.0, 6000.0],
            seasonal_amplitude: 0.14,
            diurnal_amplitude: 0.09,
            correlation: 0.6,
            noise_scale: 0.09,
            shape_diversity: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_areas == 0 || self.hours == 0 {
            return Err(Error::InvalidConfig("need at least one area and hour".into()));
        }
        if self.base_loads_mw.len() != self.n_areas {
            return Err(Error::InvalidConfig(format!(
                "base_loads_mw has {} entries for {} areas",
                self.base_loads_mw.len(),
                self.n_areas
            )));
        }
        if self.base_loads_mw.iter().any(|&b| b <= 0.0) {
            return Err(Error::InvalidConfig("base loads must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.shape_diversity) {
            return Err(Error::InvalidConfig(
                "shape_diversity must lie in [0, 1]".into(),
            ));
        }
        let hi = 1.0 + self.shape_diversity;
        let lo = 1.0 - self.shape_diversity;
        let worst = (hi * self.seasonal_amplitude + lo * self.diurnal_amplitude)
            .max(lo * self.seasonal_amplitude + hi * self.diurnal_amplitude);
        if self.seasonal_amplitude < 0.0 || self.diurnal_amplitude < 0.0 || worst >= 1.0 {
            return Err(Error::InvalidConfig(
                "amplitudes must be nonnegative and stay below 1 in every area".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::InvalidConfig("correlation must lie in [0, 1]".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::InvalidConfig("noise_scale must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DemandDataset> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let d = cfg.n_areas;
    let rho_common = cfg.correlation.sqrt();
    let rho_own = (1.0 - cfg.correlation).sqrt();
    // Per-area weights of the two sinusoids; mean weight is 1 either way.
    let tilt: Vec<Real> = (0..d)
        .map(|a| {
            let t = if d > 1 {
                a as Real / (d - 1) as Real
            } else {
                0.5
            };
            cfg.shape_diversity * (2.0 * t - 1.0)
        })
        .collect();
    let mut values = Mat::zeros(cfg.hours, d);
    for t in 0..cfg.hours {
        let seasonal = (2.0 * std::f64::consts::PI * (t % 8760) as Real / 8760.0).sin();
        let diurnal = (2.0 * std::f64::consts::PI * (t % 24) as Real / 24.0).sin();
        let common: Real = StandardNormal.sample(&mut rng);
        let row = values.row_mut(t);
        for (a, slot) in row.iter_mut().enumerate() {
            let shape = 1.0
                + (1.0 + tilt[a]) * cfg.seasonal_amplitude * seasonal
                + (1.0 - tilt[a]) * cfg.diurnal_amplitude * diurnal;
            let own: Real = StandardNormal.sample(&mut rng);
            let factor = rho_common * common + rho_own * own;
            let v = cfg.base_loads_mw[a] * shape * (1.0 + cfg.noise_scale * factor);
            *slot = v.max(0.0);
        }
    }
    let areas = (0..d).map(|a| format!("A{}", a + 1)).collect();
    let timestamps = (0..cfg.hours as u64).collect();
    DemandDataset::new(timestamps, areas, values)
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

pub fn load_csv_path(path: &Path) -> Result<DemandDataset> {
    let file = std::fs::File::open(path)?;
    load_csv(file)
}

/// Parses the `timestamp,<area>...` schema. Rows with any missing or
/// non-numeric value are rejected naming the row and column; timestamps must
/// strictly increase.
pub fn load_csv<R: Read>(reader: R) -> Result<DemandDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::CsvParse {
            row: 0,
            column: "<header>".into(),
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("timestamp") {
        return Err(Error::CsvParse {
            row: 0,
            column: "<header>".into(),
            message: "first column must be 'timestamp'".into(),
        });
    }
    let areas: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if areas.is_empty() {
        return Err(Error::CsvParse {
            row: 0,
            column: "<header>".into(),
            message: "no area columns".into(),
        });
    }

    let mut timestamps = Vec::new();
    let mut rows: Vec<Vec<Real>> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row_no = idx + 1;
        let record = record.map_err(|e| Error::CsvParse {
            row: row_no,
            column: "<row>".into(),
            message: e.to_string(),
        })?;
        if record.len() != areas.len() + 1 {
            return Err(Error::CsvParse {
                row: row_no,
                column: "<row>".into(),
                message: format!(
                    "expected {} fields, got {}",
                    areas.len() + 1,
                    record.len()
                ),
            });
        }
        let ts: u64 = record
            .get(0)
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::CsvParse {
                row: row_no,
                column: "timestamp".into(),
                message: format!("not an integer: '{}'", record.get(0).unwrap()),
            })?;
        if let Some(&last) = timestamps.last() {
            if ts <= last {
                return Err(Error::CsvParse {
                    row: row_no,
                    column: "timestamp".into(),
                    message: format!("timestamps must increase ({last} then {ts})"),
                });
            }
        }
        let mut row = Vec::with_capacity(areas.len());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let trimmed = cell.trim();
            if trimmed.is_empty() {
                return Err(Error::CsvParse {
                    row: row_no,
                    column: areas[c].clone(),
                    message: "missing value".into(),
                });
            }
            let v: Real = trimmed.parse().map_err(|_| Error::CsvParse {
                row: row_no,
                column: areas[c].clone(),
                message: format!("not a number: '{trimmed}'"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::CsvParse {
                    row: row_no,
                    column: areas[c].clone(),
                    message: format!("demand must be finite and nonnegative, got {v}"),
                });
            }
            row.push(v);
        }
        timestamps.push(ts);
        rows.push(row);
    }
    DemandDataset::new(timestamps, areas, Mat::from_rows(&rows)?)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-dimension min-max statistics mapping the training range onto `[0, 1]`.
///
/// Zero-range dimensions are flagged: they normalize to 0 and denormalize to
/// their pinned minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned"))]
pub struct NormStats<S> {
    pub min: Vec<S>,
    pub max: Vec<S>,
    pub zero_range: Vec<bool>,
}

impl<S: Scalar> NormStats<S> {
    pub fn from_mat(values: &Mat<S>) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::InvalidConfig(
                "normalization needs at least one row".into(),
            ));
        }
        let d = values.cols();
        let mut min = vec![S::infinity(); d];
        let mut max = vec![S::neg_infinity(); d];
        for row in values.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        let zero_range = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        Ok(NormStats {
            min,
            max,
            zero_range,
        })
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn normalize_state(&self, state: &[S]) -> Vec<S> {
        state
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.zero_range[j] {
                    S::zero()
                } else {
                    (v - self.min[j]) / (self.max[j] - self.min[j])
                }
            })
            .collect()
    }

    pub fn denormalize_state(&self, state: &[S]) -> Vec<S> {
        state
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.zero_range[j] {
                    self.min[j]
                } else {
                    self.min[j] + v * (self.max[j] - self.min[j])
                }
            })
            .collect()
    }

    pub fn normalize_mat(&self, values: &Mat<S>) -> Mat<S> {
        let mut out = values.clone();
        for i in 0..out.rows() {
            let row = self.normalize_state(values.row(i));
            out.row_mut(i).copy_from_slice(&row);
        }
        out
    }

    pub fn denormalize_mat(&self, values: &Mat<S>) -> Mat<S> {
        let mut out = values.clone();
        for i in 0..out.rows() {
            let row = self.denormalize_state(values.row(i));
            out.row_mut(i).copy_from_slice(&row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_areas: 3,
            hours: 500,
            seed: 7,
            base_loads_mw: vec![100.0, 200.0, 300.0],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_amplitude_zero_noise_is_constant_base() {
        let cfg = SynthConfig {
            seasonal_amplitude: 0.0,
            diurnal_amplitude: 0.0,
            noise_scale: 0.0,
            ..small_cfg()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for row in ds.values.iter_rows() {
            assert_eq!(row, &[100.0, 200.0, 300.0]);
        }
    }

    #[test]
    fn full_correlation_gives_perfect_rank_correlation() {
        // With a single shared shape (no diversity), a common-only noise
        // factor makes every pair of areas comonotone.
        let cfg = SynthConfig {
            correlation: 1.0,
            shape_diversity: 0.0,
            ..small_cfg()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                let rho = spearman(&ds.values.col(a), &ds.values.col(b)).unwrap();
                assert_relative_eq!(rho, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn configured_factor_correlation_is_recovered() {
        let cfg = SynthConfig {
            n_areas: 2,
            hours: 100_000,
            seed: 3,
            base_loads_mw: vec![100.0, 100.0],
            seasonal_amplitude: 0.0,
            diurnal_amplitude: 0.0,
            correlation: 0.7,
            noise_scale: 0.05,
            shape_diversity: 0.0,
        };
        let ds = generate_synthetic(&cfg).unwrap();
        // Recover the noise factor from the generated values.
        let f0: Vec<Real> = ds.values.col(0).iter().map(|v| (v / 100.0 - 1.0) / 0.05).collect();
        let f1: Vec<Real> = ds.values.col(1).iter().map(|v| (v / 100.0 - 1.0) / 0.05).collect();
        let n = f0.len() as Real;
        let m0 = f0.iter().sum::<Real>() / n;
        let m1 = f1.iter().sum::<Real>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in f0.iter().zip(&f1) {
            sxy += (a - m0) * (b - m1);
            sxx += (a - m0) * (a - m0);
            syy += (b - m1) * (b - m1);
        }
        let pearson = sxy / (sxx * syy).sqrt();
        assert!(
            (pearson - 0.7).abs() < 0.05,
            "factor correlation {pearson} not near 0.7"
        );
    }

    #[test]
    fn generator_is_deterministic_under_seed() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let b = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weekly_split_ten_weeks_is_eight_two() {
        let cfg = SynthConfig {
            hours: 10 * HOURS_PER_WEEK,
            ..small_cfg()
        };
        let mut ds = generate_synthetic(&cfg).unwrap();
        ds.split_weekly(0.2, 1).unwrap();
        let test_rows = ds.row_indices(SplitTag::Test).len();
        assert_eq!(test_rows, 2 * HOURS_PER_WEEK);
        assert_eq!(
            ds.row_indices(SplitTag::Train).len() + test_rows,
            ds.rows()
        );
    }

    #[test]
    fn weekly_split_is_block_contiguous_and_seed_stable() {
        let cfg = SynthConfig {
            hours: 6 * HOURS_PER_WEEK + 30, // trailing partial week
            ..small_cfg()
        };
        let mut a = generate_synthetic(&cfg).unwrap();
        a.split_weekly(0.25, 9).unwrap();
        let mut b = generate_synthetic(&cfg).unwrap();
        b.split_weekly(0.25, 9).unwrap();
        assert_eq!(a.split, b.split);
        // Partial trailing week stays train.
        for r in 6 * HOURS_PER_WEEK..a.rows() {
            assert_eq!(a.split[r], SplitTag::Train);
        }
        // Tags constant within each full block.
        for blk in 0..6 {
            let tag = a.split[blk * HOURS_PER_WEEK];
            for r in blk * HOURS_PER_WEEK..(blk + 1) * HOURS_PER_WEEK {
                assert_eq!(a.split[r], tag);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = load_csv(buf.as_slice()).unwrap();
        assert_eq!(ds.values, back.values);
        assert_eq!(ds.timestamps, back.timestamps);
        assert_eq!(ds.areas, back.areas);
    }

    #[test]
    fn csv_parse_errors_name_row_and_column() {
        let text = "timestamp,A1,A2\n0,1.0,2.0\n1,,3.0\n";
        match load_csv(text.as_bytes()) {
            Err(Error::CsvParse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "A1");
            }
            other => panic!("expected CsvParse, got {other:?}"),
        }
        let ragged = "timestamp,A1,A2\n0,1.0\n";
        assert!(matches!(
            load_csv(ragged.as_bytes()),
            Err(Error::CsvParse { row: 1, .. })
        ));
        let non_monotone = "timestamp,A1\n5,1.0\n5,2.0\n";
        match load_csv(non_monotone.as_bytes()) {
            Err(Error::CsvParse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "timestamp");
            }
            other => panic!("expected CsvParse, got {other:?}"),
        }
        let non_numeric = "timestamp,A1\n0,abc\n";
        assert!(matches!(
            load_csv(non_numeric.as_bytes()),
            Err(Error::CsvParse { row: 1, .. })
        ));
    }

    #[test]
    fn normalization_maps_extremes_and_round_trips() {
        let m = Mat::from_rows(&[vec![10.0, 5.0], vec![20.0, 5.0], vec![15.0, 5.0]]).unwrap();
        let stats = NormStats::from_mat(&m).unwrap();
        assert_eq!(stats.zero_range, vec![false, true]);
        let lo = stats.normalize_state(&[10.0, 5.0]);
        let hi = stats.normalize_state(&[20.0, 5.0]);
        assert_eq!(lo, vec![0.0, 0.0]);
        assert_eq!(hi, vec![1.0, 0.0]);
        // Zero-range dimension denormalizes to its pinned value.
        assert_eq!(stats.denormalize_state(&[0.3, 0.9]), vec![13.0, 5.0]);

        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v = [
                10.0 + 10.0 * rng.random::<Real>(),
                5.0,
            ];
            let back = stats.denormalize_state(&stats.normalize_state(&v));
            assert_relative_eq!(back[0], v[0], epsilon = 1e-12);
            assert_eq!(back[1], 5.0);
        }
    }

    #[test]
    fn norm_stats_use_train_rows_only() {
        let cfg = SynthConfig {
            hours: 4 * HOURS_PER_WEEK,
            ..small_cfg()
        };
        let mut ds = generate_synthetic(&cfg).unwrap();
        ds.split_weekly(0.25, 3).unwrap();
        let train = ds.rows_with_tag(SplitTag::Train);
        let stats = NormStats::from_mat(&train).unwrap();
        // Stat extremes must come from train rows alone.
        for j in 0..ds.n_areas() {
            let col = train.col(j);
            let mn = col.iter().copied().fold(Real::INFINITY, Real::min);
            let mx = col.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            assert_eq!(stats.min[j], mn);
            assert_eq!(stats.max[j], mx);
        }
    }
}
