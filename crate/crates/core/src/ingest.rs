//! Gridded sea-surface temperature: the `SSTG1` file format, land masking,
//! anomaly normalization and a synthetic stand-in generator.
//!
//! `SSTG1` layout, little-endian throughout: the 5-byte magic `SSTG1`, `H`, `W`,
//! `T` as `u64`, the fill value as `f64`, then `T` frames of `H * W` `f64` values in
//! row-major order (degrees Celsius). A point holding the fill value in the first
//! frame is land and must hold it in every frame.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynsys::{FieldGrid, SnapshotMatrix};
use crate::error::{check_dim, Error, Result};

const MAGIC: &[u8; 5] = b"SSTG1";

/// Weekly frames on a shared grid with one land/ocean mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SstArchive {
    /// `(T, H, W)`.
    frames: Array3<f64>,
    weeks: Vec<u64>,
    /// `true` at ocean points.
    mask: Array2<bool>,
    fill: f64,
}

fn is_fill(v: f64, fill: f64) -> bool {
    v == fill || (v.is_nan() && fill.is_nan())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "SSTG1",
        reason: reason.into(),
    }
}

impl SstArchive {
    /// Builds an archive from frames; land points are set to `fill`.
    pub fn new(mut frames: Array3<f64>, mask: Array2<bool>, fill: f64) -> Result<Self> {
        let (t, h, w) = frames.dim();
        if t == 0 {
            return Err(Error::Empty("SST frames"));
        }
        if mask.dim() != (h, w) {
            return Err(Error::InvalidArgument(format!(
                "mask shape {:?} differs from frame shape {:?}",
                mask.dim(),
                (h, w)
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("no valid points".into()));
        }
        for mut frame in frames.outer_iter_mut() {
            for (v, &ocean) in frame.iter_mut().zip(mask.iter()) {
                if !ocean {
                    *v = fill;
                } else if !v.is_finite() || is_fill(*v, fill) {
                    return Err(Error::InvalidArgument(format!("invalid value {v} at an ocean point")));
                }
            }
        }
        Ok(Self {
            frames,
            weeks: (0..t as u64).collect(),
            mask,
            fill,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn weeks(&self) -> &[u64] {
        &self.weeks
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn fill(&self) -> f64 {
        self.fill
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn ocean_points(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Frame `t` on a regular 1-degree-style grid: cell-centre latitudes from south
    /// to north and longitudes from 0 east.
    pub fn frame(&self, t: usize) -> Result<FieldGrid> {
        let (h, w) = self.shape();
        let lat = Array1::from_shape_fn(h, |i| -90.0 + (i as f64 + 0.5) * 180.0 / h as f64);
        let lon = Array1::from_shape_fn(w, |j| (j as f64 + 0.5) * 360.0 / w as f64);
        let mut values = self.frames.index_axis(Axis(0), t).to_owned();
        // land carries the fill value, which may be NaN; give the field a finite stand-in
        values.zip_mut_with(&self.mask, |v, &m| {
            if !m {
                *v = 0.0;
            }
        });
        FieldGrid::grid(values, lat, lon, Some(self.mask.clone()))
    }

    /// Frames `range` as a new archive with week indices kept.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::InvalidArgument(format!("frame range {range:?} of {}", self.len())));
        }
        Ok(Self {
            frames: self.frames.slice(ndarray::s![range.clone(), .., ..]).to_owned(),
            weeks: self.weeks[range].to_vec(),
            mask: self.mask.clone(),
            fill: self.fill,
        })
    }
}

pub fn read_sst<R: Read>(mut r: R) -> Result<SstArchive> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 8];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut word)?;
        *d = usize::try_from(u64::from_le_bytes(word)).map_err(|_| bad("dimension overflow"))?;
    }
    let [h, w, t] = dims;
    if h == 0 || w == 0 || t == 0 {
        return Err(bad(format!("empty shape {h}x{w}x{t}")));
    }
    let total = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(t))
        .filter(|&v| v <= 1 << 34)
        .ok_or_else(|| bad("implausible header"))?;
    r.read_exact(&mut word)?;
    let fill = f64::from_le_bytes(word);

    let mut bytes = vec![0u8; total * 8];
    r.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("file shorter than its header declares"),
        _ => e.into(),
    })?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    drop(bytes);
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after the last frame"));
    }
    let frames = Array3::from_shape_vec((t, h, w), values).expect("length matches header");

    let first = frames.index_axis(Axis(0), 0);
    let mask = first.mapv(|v| !is_fill(v, fill));
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("no valid points".into()));
    }
    for (k, frame) in frames.outer_iter().enumerate() {
        for ((ij, &v), &ocean) in frame.indexed_iter().zip(mask.iter()) {
            if ocean == is_fill(v, fill) {
                return Err(bad(format!("frame {k} point {ij:?} disagrees with the land mask")));
            }
            if ocean && v.is_nan() {
                return Err(bad(format!("NaN at ocean point {ij:?} of frame {k}")));
            }
        }
    }
    SstArchive::new(frames, mask, fill)
}

pub fn write_sst<W: Write>(mut w: W, archive: &SstArchive) -> Result<()> {
    let (t, h, wd) = archive.frames.dim();
    w.write_all(MAGIC)?;
    for v in [h, wd, t] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&archive.fill.to_le_bytes())?;
    for v in archive.frames.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_sst(path: &Path) -> Result<SstArchive> {
    read_sst(BufReader::new(File::open(path)?))
}

pub fn save_sst(path: &Path, archive: &SstArchive) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sst(&mut w, archive)?;
    w.flush()?;
    Ok(())
}

/// Row-major positions of the ocean points, used to go between grids and vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskIndex {
    pub height: usize,
    pub width: usize,
    /// Flat `i * width + j` offsets, ascending.
    pub points: Vec<usize>,
}

impl MaskIndex {
    pub fn from_mask(mask: &Array2<bool>) -> Result<Self> {
        let (height, width) = mask.dim();
        let points: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
            .collect();
        if points.is_empty() {
            return Err(Error::InvalidArgument("no valid points".into()));
        }
        Ok(Self {
            height,
            width,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Places `values` back on the grid with `fill` at land points.
    pub fn inflate(&self, values: &[f64], fill: f64) -> Result<Array2<f64>> {
        check_dim("ocean values", self.len(), values.len())?;
        let mut grid = Array2::from_elem((self.height, self.width), fill);
        let flat = grid.as_slice_mut().expect("standard layout");
        for (&k, &v) in self.points.iter().zip(values) {
            flat[k] = v;
        }
        Ok(grid)
    }
}

/// One column per frame holding its ocean points in row-major order.
pub fn flatten_masked(archive: &SstArchive) -> Result<(SnapshotMatrix, MaskIndex)> {
    let index = MaskIndex::from_mask(&archive.mask)?;
    let (t, h, w) = archive.frames.dim();
    let flat = archive
        .frames
        .view()
        .into_shape_with_order((t, h * w))
        .expect("contiguous frames");
    let mut a = Array2::zeros((index.len(), t));
    for (k, frame) in flat.outer_iter().enumerate() {
        for (row, &p) in index.points.iter().enumerate() {
            a[[row, k]] = frame[p];
        }
    }
    Ok((SnapshotMatrix::new(a)?, index))
}

/// Per-point temporal mean removal followed by division by one global scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScaler {
    pub mean: Vec<f64>,
    /// Largest `|u - mean|` over the fitted data.
    pub scale: f64,
}

impl AnomalyScaler {
    pub fn fit(snapshots: &SnapshotMatrix) -> Result<Self> {
        if snapshots.cols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 snapshots for anomalies, got {}",
                snapshots.cols()
            )));
        }
        let a = snapshots.as_array();
        let mean = a.mean_axis(Axis(1)).expect("non-empty");
        let mut scale = 0.0f64;
        for (row, m) in a.rows().into_iter().zip(mean.iter()) {
            for v in row {
                scale = scale.max((v - m).abs());
            }
        }
        if scale == 0.0 {
            return Err(Error::InvalidArgument("zero anomaly range: data is constant in time".into()));
        }
        Ok(Self {
            mean: mean.to_vec(),
            scale,
        })
    }

    pub fn apply(&self, snapshots: &SnapshotMatrix) -> Result<SnapshotMatrix> {
        check_dim("anomaly state size", self.mean.len(), snapshots.rows())?;
        let mean = Array1::from(self.mean.clone()).insert_axis(Axis(1));
        SnapshotMatrix::new((snapshots.as_array() - &mean) / self.scale)
    }

    pub fn invert(&self, snapshots: &SnapshotMatrix) -> Result<SnapshotMatrix> {
        check_dim("anomaly state size", self.mean.len(), snapshots.rows())?;
        let mean = Array1::from(self.mean.clone()).insert_axis(Axis(1));
        SnapshotMatrix::new(snapshots.as_array() * self.scale + &mean)
    }
}

/// Fits an [`AnomalyScaler`] on `snapshots` and applies it.
pub fn normalize_anomaly(snapshots: &SnapshotMatrix) -> Result<(SnapshotMatrix, AnomalyScaler)> {
    let scaler = AnomalyScaler::fit(snapshots)?;
    Ok((scaler.apply(snapshots)?, scaler))
}

/// Settings of the synthetic SST generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSstConfig {
    pub height: usize,
    pub width: usize,
    /// Seasonal amplitude in degrees at the poles, scaled by `sin(latitude)`.
    pub seasonal_amplitude: f64,
    /// Traveling-wave anomaly amplitude in degrees.
    pub wave_amplitude: f64,
    pub waves: usize,
    /// Standard deviation of white noise added per point and week.
    pub noise: f64,
}

impl Default for SynthSstConfig {
    fn default() -> Self {
        Self {
            height: 36,
            width: 72,
            seasonal_amplitude: 4.0,
            wave_amplitude: 0.5,
            waves: 4,
            noise: 0.02,
        }
    }
}

/// Weeks in one seasonal cycle.
pub const SEASON_WEEKS: f64 = 52.0;

impl SynthSstConfig {
    pub fn latitude(&self, i: usize) -> f64 {
        (-90.0 + (i as f64 + 0.5) * 180.0 / self.height as f64).to_radians()
    }

    pub fn longitude(&self, j: usize) -> f64 {
        ((j as f64 + 0.5) * 360.0 / self.width as f64).to_radians()
    }

    /// Time-mean temperature at grid point `(i, j)`.
    pub fn climatology(&self, i: usize, j: usize) -> f64 {
        let (phi, lam) = (self.latitude(i), self.longitude(j));
        -1.8 + 29.8 * phi.cos().powi(2) + 1.5 * phi.cos() * (2.0 * lam).sin() + 0.8 * (3.0 * phi).sin() * lam.cos()
    }

    /// Polar caps and two meridional continents.
    pub fn is_ocean(&self, i: usize, j: usize) -> bool {
        let lat = self.latitude(i).to_degrees();
        let lon = self.longitude(j).to_degrees();
        let polar = !(-75.0..=75.0).contains(&lat);
        let continent = lat.abs() < 60.0 && ((60.0..100.0).contains(&lon) || (240.0..285.0).contains(&lon));
        !(polar || continent)
    }
}

struct Wave {
    amp: f64,
    k: f64,
    l: f64,
    omega: f64,
    phase: f64,
}

/// Synthetic archive on the default coarse grid.
pub fn synth_sst(weeks: usize, seed: u64) -> Result<SstArchive> {
    synth_sst_with(&SynthSstConfig::default(), weeks, seed)
}

/// Seasonal cycle plus fixed climatology plus a few traveling waves plus noise.
///
/// The wave parameters and the noise come from a ChaCha8 stream seeded with
/// `seed`; the climatology and mask are fixed by the grid.
pub fn synth_sst_with(config: &SynthSstConfig, weeks: usize, seed: u64) -> Result<SstArchive> {
    if weeks == 0 {
        return Err(Error::InvalidArgument("need at least one week".into()));
    }
    if config.height < 2 || config.width < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid {}x{} is too small",
            config.height, config.width
        )));
    }
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Wave> = (0..config.waves)
        .map(|_| Wave {
            amp: config.wave_amplitude * rng.random_range(0.5..1.0),
            k: rng.random_range(1..=4) as f64,
            l: rng.random_range(1..=3) as f64,
            omega: 2.0 * std::f64::consts::PI / rng.random_range(20.0..200.0),
            phase: rng.random_range(0.0..2.0 * std::f64::consts::PI),
        })
        .collect();

    let (h, w) = (config.height, config.width);
    let mask = Array2::from_shape_fn((h, w), |(i, j)| config.is_ocean(i, j));
    let clim = Array2::from_shape_fn((h, w), |(i, j)| config.climatology(i, j));
    let mut frames = Array3::zeros((weeks, h, w));
    for (t, mut frame) in frames.outer_iter_mut().enumerate() {
        let season = (2.0 * std::f64::consts::PI * t as f64 / SEASON_WEEKS).sin();
        for ((i, j), v) in frame.indexed_iter_mut() {
            if !mask[[i, j]] {
                continue;
            }
            let (phi, lam) = (config.latitude(i), config.longitude(j));
            let mut u = clim[[i, j]] + config.seasonal_amplitude * phi.sin() * season;
            for wv in &waves {
                u += wv.amp * phi.cos() * (wv.k * lam + wv.l * phi - wv.omega * t as f64 + wv.phase).cos();
            }
            *v = u + noise.sample(&mut rng);
        }
    }
    SstArchive::new(frames, mask, f64::NAN)
}
