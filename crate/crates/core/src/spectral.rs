//! Cross power spectral density fields and Welch estimation.
//!
//! Convention: two-sided spectrum in radians per sample, normalised so that
//! unit-variance white noise has `Φ(ω) = 1` at every frequency. The grid is
//! the FFT bin grid `ω_f = 2πf/L` for `f = 1..=L/2`. The DC bin is left out
//! and the Nyquist bin is kept.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::TimeSeriesPanel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("invalid Welch configuration: {0}")]
    InvalidConfig(String),
    #[error("{segments} segments available, at least {min} required")]
    TooFewSegments { segments: usize, min: usize },
    #[error("non-finite sample in series `{0}`")]
    NonFinite(String),
    #[error("series `{0}` has zero variance")]
    DegenerateSeries(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("field dump: {0}")]
    Dump(String),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

pub type C64 = Complex<f64>;

const PSD_TOL: f64 = 1e-8;
pub const MIN_SEGMENTS: usize = 8;

/// Averaging statistics of a Welch estimate, used by the null model of
/// partial-coherence scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchStats {
    pub segments: usize,
    /// Equivalent number of independent segments after overlap correlation.
    pub effective_segments: f64,
    /// Variance inflation of a bin average caused by taper leakage between
    /// neighbouring bins, `1 + 2 Σ_j |c_j|²`.
    pub bin_correlation_factor: f64,
    pub window_len: usize,
}

/// Hermitian cross-PSD matrices on a strictly increasing frequency grid in `(0, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensityField {
    labels: Vec<String>,
    grid: Vec<f64>,
    matrices: Vec<DMatrix<C64>>,
    stats: Option<WelchStats>,
}

fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).map(|z| z * 0.5)
}

impl SpectralDensityField {
    /// Validates shapes, grid, Hermitian symmetry and positive semidefiniteness,
    /// and symmetrises every matrix.
    pub fn new(
        labels: Vec<String>,
        grid: Vec<f64>,
        matrices: Vec<DMatrix<C64>>,
        stats: Option<WelchStats>,
    ) -> Result<Self> {
        let field = Self::new_unchecked(labels, grid, matrices, stats)?;
        for (f, m) in field.matrices.iter().enumerate() {
            let min = m.clone().symmetric_eigenvalues().min();
            let scale = m.diagonal().iter().map(|z| z.re.abs()).fold(0.0, f64::max);
            if min < -PSD_TOL * scale.max(1.0) {
                return Err(SpectralError::InvalidField(format!(
                    "matrix at bin {f} is not positive semidefinite (min eigenvalue {min:e})"
                )));
            }
        }
        Ok(field)
    }

    /// Like [`new`](Self::new) but skips the eigenvalue check. Shapes,
    /// grid and Hermitian symmetry are still enforced.
    pub(crate) fn new_unchecked(
        labels: Vec<String>,
        grid: Vec<f64>,
        matrices: Vec<DMatrix<C64>>,
        stats: Option<WelchStats>,
    ) -> Result<Self> {
        let m = labels.len();
        if grid.len() != matrices.len() {
            return Err(SpectralError::InvalidField(format!(
                "{} grid points but {} matrices",
                grid.len(),
                matrices.len()
            )));
        }
        if grid.is_empty() {
            return Err(SpectralError::InvalidField("empty grid".into()));
        }
        for w in grid.windows(2) {
            if w[1] <= w[0] {
                return Err(SpectralError::InvalidField(
                    "grid not strictly increasing".into(),
                ));
            }
        }
        if grid[0] <= 0.0 || *grid.last().unwrap() > PI + 1e-12 {
            return Err(SpectralError::InvalidField(
                "grid must lie in (0, π]".into(),
            ));
        }
        let mut out = Vec::with_capacity(matrices.len());
        for (f, mat) in matrices.into_iter().enumerate() {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(SpectralError::InvalidField(format!(
                    "matrix at bin {f} is {}x{}, expected {m}x{m}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(SpectralError::InvalidField(format!(
                    "non-finite entry at bin {f}"
                )));
            }
            let scale = mat.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
            let asym = (&mat - mat.adjoint())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if asym > 1e-6 * scale {
                return Err(SpectralError::InvalidField(format!(
                    "matrix at bin {f} is not Hermitian (deviation {asym:e})"
                )));
            }
            out.push(hermitian_part(&mat));
        }
        Ok(Self {
            labels,
            grid,
            matrices: out,
            stats,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn matrices(&self) -> &[DMatrix<C64>] {
        &self.matrices
    }

    pub fn stats(&self) -> Option<&WelchStats> {
        self.stats.as_ref()
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Multiplies every matrix by a positive constant.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            labels: self.labels.clone(),
            grid: self.grid.clone(),
            matrices: self.matrices.iter().map(|m| m.map(|z| z * c)).collect(),
            stats: self.stats,
        }
    }

    /// Reorders nodes: entry `k` of the result is node `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let m = self.labels.len();
        assert_eq!(order.len(), m);
        Self {
            labels: order.iter().map(|&i| self.labels[i].clone()).collect(),
            grid: self.grid.clone(),
            matrices: self
                .matrices
                .iter()
                .map(|mat| DMatrix::from_fn(m, m, |r, c| mat[(order[r], order[c])]))
                .collect(),
            stats: self.stats,
        }
    }

    /// Writes the JSON header and the little-endian complex64 payload
    /// (row-major by bin, row, column).
    pub fn write_dump<W1: Write, W2: Write>(&self, header: W1, mut payload: W2) -> Result<()> {
        let doc = FieldHeader {
            labels: self.labels.clone(),
            grid: self.grid.clone(),
            stats: self.stats,
        };
        serde_json::to_writer_pretty(header, &doc)
            .map_err(|e| SpectralError::Dump(e.to_string()))?;
        let m = self.labels.len();
        let mut buf = Vec::with_capacity(self.grid.len() * m * m * 8);
        for mat in &self.matrices {
            for r in 0..m {
                for c in 0..m {
                    let z = mat[(r, c)];
                    buf.extend_from_slice(&(z.re as f32).to_le_bytes());
                    buf.extend_from_slice(&(z.im as f32).to_le_bytes());
                }
            }
        }
        payload
            .write_all(&buf)
            .map_err(|e| SpectralError::Dump(e.to_string()))
    }

    pub fn read_dump<R1: Read, R2: Read>(header: R1, mut payload: R2) -> Result<Self> {
        let doc: FieldHeader =
            serde_json::from_reader(header).map_err(|e| SpectralError::Dump(e.to_string()))?;
        let m = doc.labels.len();
        let mut bytes = Vec::new();
        payload
            .read_to_end(&mut bytes)
            .map_err(|e| SpectralError::Dump(e.to_string()))?;
        let expected = doc.grid.len() * m * m * 8;
        if bytes.len() != expected {
            return Err(SpectralError::Dump(format!(
                "payload has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut vals = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64);
        let matrices = (0..doc.grid.len())
            .map(|_| {
                let mut mat = DMatrix::zeros(m, m);
                for r in 0..m {
                    for c in 0..m {
                        let re = vals.next().expect("length checked");
                        let im = vals.next().expect("length checked");
                        mat[(r, c)] = C64::new(re, im);
                    }
                }
                mat
            })
            .collect();
        Self::new_unchecked(doc.labels, doc.grid, matrices, doc.stats)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    labels: Vec<String>,
    grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stats: Option<WelchStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Hann,
    Rectangular,
}

impl Taper {
    /// Periodic taper of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Taper::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            Taper::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetrendMode {
    None,
    #[default]
    Mean,
    Difference,
}

/// Panel-level detrending: `Mean` subtracts each node's sample mean,
/// `Difference` takes first differences (one sample shorter).
pub fn detrend(panel: &TimeSeriesPanel, mode: DetrendMode) -> TimeSeriesPanel {
    match mode {
        DetrendMode::None => panel.clone(),
        DetrendMode::Mean => panel.map_rows(|row| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|x| x - mean).collect()
        }),
        DetrendMode::Difference => {
            panel.map_rows(|row| row.windows(2).map(|w| w[1] - w[0]).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WelchConfig {
    pub window_len: usize,
    pub overlap: f64,
    pub taper: Taper,
    /// `Mean` is applied per segment; `Difference` to the whole panel first.
    pub detrend: DetrendMode,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            window_len: 1024,
            overlap: 0.5,
            taper: Taper::Hann,
            detrend: DetrendMode::Mean,
        }
    }
}

impl WelchConfig {
    pub fn step(&self) -> usize {
        ((self.window_len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    pub fn segments_for(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.step() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || !self.window_len.is_power_of_two() {
            return Err(SpectralError::InvalidConfig(format!(
                "window_len {} must be a power of two >= 2",
                self.window_len
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(SpectralError::InvalidConfig(format!(
                "overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        Ok(())
    }

    /// FFT bin grid `2πf/L`, `f = 1..=L/2`.
    pub fn grid(&self) -> Vec<f64> {
        let l = self.window_len as f64;
        (1..=self.window_len / 2)
            .map(|f| 2.0 * PI * f as f64 / l)
            .collect()
    }

    fn stats(&self, segments: usize) -> WelchStats {
        let w = self.taper.coefficients(self.window_len);
        let energy: f64 = w.iter().map(|x| x * x).sum();
        let step = self.step();
        let mut corr = 0.0;
        for k in 1..segments {
            let shift = k * step;
            if shift >= self.window_len {
                break;
            }
            let rho: f64 = w[..self.window_len - shift]
                .iter()
                .zip(&w[shift..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / energy;
            corr += (1.0 - k as f64 / segments as f64) * rho * rho;
        }
        let l = self.window_len as f64;
        let mut leak = 0.0;
        for j in 1..=self.window_len / 2 {
            let c: C64 = w
                .iter()
                .enumerate()
                .map(|(n, x)| C64::from_polar(x * x, -2.0 * PI * (j * n) as f64 / l))
                .sum::<C64>()
                / energy;
            leak += c.norm_sqr();
        }
        WelchStats {
            segments,
            effective_segments: segments as f64 / (1.0 + 2.0 * corr),
            bin_correlation_factor: 1.0 + 2.0 * leak,
            window_len: self.window_len,
        }
    }
}

/// Shared per-segment machinery: taper, FFT and cross-product accumulation.
struct SegmentKernel {
    m: usize,
    bins: usize,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    remove_mean: bool,
}

impl SegmentKernel {
    fn new(m: usize, cfg: &WelchConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            bins: cfg.window_len / 2,
            taper: cfg.taper.coefficients(cfg.window_len),
            fft: planner.plan_fft_forward(cfg.window_len),
            remove_mean: cfg.detrend == DetrendMode::Mean,
        }
    }

    fn accumulator(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.bins * self.m * self.m]
    }

    /// `segment(i)` yields node `i`'s samples for this segment.
    fn add<'s>(&self, acc: &mut [C64], segment: impl Fn(usize) -> &'s [f64], spectra: &mut [C64]) {
        let (m, bins, len) = (self.m, self.bins, self.taper.len());
        let mut buf = vec![C64::new(0.0, 0.0); len];
        for i in 0..m {
            let x = segment(i);
            let mean = if self.remove_mean {
                x.iter().sum::<f64>() / len as f64
            } else {
                0.0
            };
            for (b, (v, w)) in buf.iter_mut().zip(x.iter().zip(&self.taper)) {
                *b = C64::new((v - mean) * w, 0.0);
            }
            self.fft.process(&mut buf);
            spectra[i * bins..(i + 1) * bins].copy_from_slice(&buf[1..=bins]);
        }
        for f in 0..bins {
            let block = &mut acc[f * m * m..(f + 1) * m * m];
            for i in 0..m {
                let xi = spectra[i * bins + f];
                for k in i..m {
                    block[i * m + k] += xi * spectra[k * bins + f].conj();
                }
            }
        }
    }

    fn finish(
        &self,
        acc: &[C64],
        segments: usize,
        labels: Vec<String>,
        grid: Vec<f64>,
        stats: WelchStats,
    ) -> Result<SpectralDensityField> {
        let m = self.m;
        let energy: f64 = self.taper.iter().map(|w| w * w).sum();
        let norm = 1.0 / (segments as f64 * energy);
        let matrices = (0..self.bins)
            .map(|f| {
                let block = &acc[f * m * m..(f + 1) * m * m];
                let mut mat = DMatrix::zeros(m, m);
                for i in 0..m {
                    mat[(i, i)] = C64::new(block[i * m + i].re * norm, 0.0);
                    for k in i + 1..m {
                        let z = block[i * m + k] * norm;
                        mat[(i, k)] = z;
                        mat[(k, i)] = z.conj();
                    }
                }
                mat
            })
            .collect();
        SpectralDensityField::new_unchecked(labels, grid, matrices, Some(stats))
    }
}

const SEGMENT_BLOCK: usize = 64;

/// Welch averaged cross-periodogram estimate of the panel's cross-PSD field.
pub fn welch_cross_psd(panel: &TimeSeriesPanel, cfg: &WelchConfig) -> Result<SpectralDensityField> {
    cfg.validate()?;
    let panel = match cfg.detrend {
        DetrendMode::Difference => detrend(panel, DetrendMode::Difference),
        _ => panel.clone(),
    };
    let m = panel.node_count();
    for (label, row) in panel.labels().iter().zip(panel.rows()) {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(SpectralError::NonFinite(label.clone()));
        }
        let first = row[0];
        if row.iter().all(|&x| x == first) {
            return Err(SpectralError::DegenerateSeries(label.clone()));
        }
    }
    let n = panel.len();
    let segments = cfg.segments_for(n);
    if segments < MIN_SEGMENTS {
        return Err(SpectralError::TooFewSegments {
            segments,
            min: MIN_SEGMENTS,
        });
    }
    let kernel = SegmentKernel::new(m, cfg);
    let step = cfg.step();
    let len = cfg.window_len;
    let rows = panel.rows();

    // Blocks of consecutive segments are summed in parallel, then combined in
    // block order so the result does not depend on scheduling.
    let partials: Vec<Vec<C64>> = (0..segments.div_ceil(SEGMENT_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut acc = kernel.accumulator();
            let mut spectra = vec![C64::new(0.0, 0.0); m * kernel.bins];
            let end = ((blk + 1) * SEGMENT_BLOCK).min(segments);
            for s in blk * SEGMENT_BLOCK..end {
                let start = s * step;
                kernel.add(&mut acc, |i| &rows[i][start..start + len], &mut spectra);
            }
            acc
        })
        .collect();
    let mut acc = kernel.accumulator();
    for p in &partials {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    kernel.finish(
        &acc,
        segments,
        panel.labels().to_vec(),
        cfg.grid(),
        cfg.stats(segments),
    )
}

/// Incremental Welch estimator fed one multichannel sample at a time, for
/// runs too long to hold in memory. Only per-segment mean removal is
/// supported (`Difference` would need the previous sample and is rejected).
pub struct WelchAccumulator {
    cfg: WelchConfig,
    labels: Vec<String>,
    kernel: SegmentKernel,
    acc: Vec<C64>,
    spectra: Vec<C64>,
    history: Vec<Vec<f64>>,
    seen: usize,
    segments: usize,
}

impl WelchAccumulator {
    pub fn new(labels: Vec<String>, cfg: WelchConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.detrend == DetrendMode::Difference {
            return Err(SpectralError::InvalidConfig(
                "streaming estimation does not support difference detrending".into(),
            ));
        }
        let m = labels.len();
        let kernel = SegmentKernel::new(m, &cfg);
        Ok(Self {
            acc: kernel.accumulator(),
            spectra: vec![C64::new(0.0, 0.0); m * kernel.bins],
            history: vec![Vec::with_capacity(2 * cfg.window_len); m],
            kernel,
            cfg,
            labels,
            seen: 0,
            segments: 0,
        })
    }

    pub fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.labels.len());
        for (h, &x) in self.history.iter_mut().zip(sample) {
            h.push(x);
        }
        self.seen += 1;
        let len = self.cfg.window_len;
        let step = self.cfg.step();
        if self.seen >= len && (self.seen - len).is_multiple_of(step) {
            let hist = &self.history;
            let start = hist[0].len() - len;
            self.kernel
                .add(&mut self.acc, |i| &hist[i][start..], &mut self.spectra);
            self.segments += 1;
            let keep = len.saturating_sub(step);
            for h in &mut self.history {
                let drop = h.len() - keep;
                h.drain(..drop);
            }
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn finish(self) -> Result<SpectralDensityField> {
        if self.segments < MIN_SEGMENTS {
            return Err(SpectralError::TooFewSegments {
                segments: self.segments,
                min: MIN_SEGMENTS,
            });
        }
        if let Some(i) = (0..self.labels.len()).find(|&i| {
            (0..self.kernel.bins).all(|f| {
                self.acc[f * self.labels.len().pow(2) + i * self.labels.len() + i].re == 0.0
            })
        }) {
            return Err(SpectralError::DegenerateSeries(self.labels[i].clone()));
        }
        self.kernel.finish(
            &self.acc,
            self.segments,
            self.labels,
            self.cfg.grid(),
            self.cfg.stats(self.segments),
        )
    }
}
