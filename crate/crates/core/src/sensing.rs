//! Sensing receiver: dechirp, frame concatenation, SVD clutter filter,
//! fast-time summation and STFT spectrograms.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::waveform::{reference_chirp, IsacConfig, PhaseSequence};

/// Column-major complex matrix; each column is one chirp (fast time).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_columns(rows: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || data.len() % rows != 0 {
            return Err(Error::shape(format!(
                "{} samples do not form columns of {rows}",
                data.len()
            )));
        }
        Ok(ComplexMatrix {
            rows,
            cols: data.len() / rows,
            data,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[Complex64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [Complex64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius inner product `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexMatrix) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }
}

/// One frame's sensing matrix `Y_k`: `N_c` rows by `M` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingFrameMatrix(pub ComplexMatrix);

/// `N_f` concatenated frames, optionally decimated in slow time.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingCube {
    pub matrix: ComplexMatrix,
    pub frames: usize,
    /// Column rate along slow time, in Hz.
    pub slow_time_rate_hz: f64,
}

/// Removes the reference chirp and each chirp's QPSK phase.
pub fn dechirp(rx: &[Complex64], phases: &PhaseSequence, cfg: &IsacConfig) -> Result<SensingFrameMatrix> {
    let n = cfg.samples_per_chirp();
    let m = cfg.chirps_per_frame;
    if rx.len() != n * m || phases.len() != m {
        return Err(Error::invalid(format!(
            "dechirp expects {} samples and {m} phases, got {} and {}",
            n * m,
            rx.len(),
            phases.len()
        )));
    }
    let reference = reference_chirp(cfg)?;
    let mut data = Vec::with_capacity(n * m);
    for (chirp, &phi) in rx.chunks_exact(n).zip(phases.as_slice()) {
        dechirp_into(chirp, &reference, phi, &mut data);
    }
    Ok(SensingFrameMatrix(ComplexMatrix { rows: n, cols: m, data }))
}

/// Appends one dechirped column to `out`.
pub fn dechirp_into(chirp: &[Complex64], reference: &[Complex64], phase: f64, out: &mut Vec<Complex64>) {
    let unrot = Complex64::from_polar(1.0, -phase);
    out.extend(chirp.iter().zip(reference).map(|(&y, r)| y * r.conj() * unrot));
}

pub fn concat_frames(frames: &[SensingFrameMatrix], cfg: &IsacConfig) -> Result<SensingCube> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no frames to concatenate"))?;
    let rows = first.0.rows;
    let cols = first.0.cols;
    if frames.iter().any(|f| f.0.rows != rows || f.0.cols != cols) {
        return Err(Error::shape("frames have different dimensions"));
    }
    let mut data = Vec::with_capacity(rows * cols * frames.len());
    for f in frames {
        data.extend_from_slice(&f.0.data);
    }
    Ok(SensingCube {
        matrix: ComplexMatrix {
            rows,
            cols: cols * frames.len(),
            data,
        },
        frames: frames.len(),
        slow_time_rate_hz: 1.0 / cfg.chirp_duration_s,
    })
}

/// Top-`r` left singular vectors of a column-major matrix, computed from the
/// eigen-decomposition of its fast-time Gram matrix.
pub fn dominant_subspace(m: &ComplexMatrix, r: usize) -> Vec<Vec<Complex64>> {
    let n = m.rows;
    let mut gram = vec![Complex64::new(0.0, 0.0); n * n];
    for col in m.data.chunks_exact(n) {
        for i in 0..n {
            let yi = col[i];
            let row = &mut gram[i * n..(i + 1) * n];
            for j in i..n {
                row[j] += yi * col[j].conj();
            }
        }
    }
    let g = DMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            gram[i * n + j]
        } else {
            gram[j * n + i].conj()
        }
    });
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .take(r)
        .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect()
}

/// Subtracts the best rank-`r` approximation of the cube.
pub fn svd_clutter_filter(cube: &SensingCube, rank: usize) -> Result<SensingCube> {
    let m = &cube.matrix;
    if rank >= m.rows.min(m.cols) {
        return Err(Error::invalid(format!(
            "clutter rank {rank} must be below min({}, {})",
            m.rows, m.cols
        )));
    }
    let mut out = cube.clone();
    if rank == 0 {
        return Ok(out);
    }
    let basis = dominant_subspace(m, rank);
    for c in 0..m.cols {
        let col = out.matrix.column_mut(c);
        for u in &basis {
            let coeff: Complex64 = u.iter().zip(col.iter()).map(|(a, b)| a.conj() * b).sum();
            for (y, a) in col.iter_mut().zip(u) {
                *y -= a * coeff;
            }
        }
    }
    Ok(out)
}

/// Sums every slow-time column over fast time.
pub fn slow_time_series(cube: &SensingCube) -> Vec<Complex64> {
    let n = cube.matrix.rows;
    cube.matrix.data.chunks_exact(n).map(|c| c.iter().sum()).collect()
}

/// Range profile of a dechirped column. The dechirped tone of a target at
/// range `R` sits at `-2 R mu / c`, so bins are read from the inverse DFT:
/// bin `k` corresponds to beat magnitude `k * F_s / N_c`.
pub fn range_profile(column: &[Complex64]) -> Vec<f64> {
    let mut buf = column.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    buf.iter().map(|z| z.norm()).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Symmetric Hann window, `0.5 - 0.5 cos(2 pi n / (W - 1))`.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// STFT power with the frequency axis shifted so index 0 is `-F/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StftPower {
    pub fft_size: usize,
    pub frames: usize,
    pub bin_hz: f64,
    /// Frame-major: `power[t * fft_size + k]`.
    pub power: Vec<f64>,
}

impl StftPower {
    pub fn frequency(&self, k: usize) -> f64 {
        (k as f64 - (self.fft_size / 2) as f64) * self.bin_hz
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.power[t * self.fft_size..(t + 1) * self.fft_size]
    }

    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Indices of the bins with `|f| <= band_hz`, in ascending frequency.
    pub fn band_bins(&self, band_hz: f64) -> std::ops::Range<usize> {
        let lo = (0..self.fft_size).find(|&k| self.frequency(k) >= -band_hz - 1e-9).unwrap_or(0);
        let hi = (0..self.fft_size)
            .rev()
            .find(|&k| self.frequency(k) <= band_hz + 1e-9)
            .unwrap_or(self.fft_size - 1);
        lo..hi + 1
    }

    /// Per-frame peak frequency inside `|f| <= band_hz`, refined by parabolic
    /// interpolation of the log power around the peak.
    pub fn ridge(&self, band_hz: f64) -> Vec<f64> {
        let band = self.band_bins(band_hz);
        (0..self.frames)
            .map(|t| {
                let frame = self.frame(t);
                let local = argmax(&frame[band.clone()]);
                let k = band.start + local;
                let mut offset = 0.0;
                if k > band.start && k + 1 < band.end {
                    let (a, b, c) = (
                        frame[k - 1].max(1e-300).ln(),
                        frame[k].max(1e-300).ln(),
                        frame[k + 1].max(1e-300).ln(),
                    );
                    let denom = a - 2.0 * b + c;
                    if denom.abs() > 1e-12 {
                        offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
                    }
                }
                self.frequency(k) + offset * self.bin_hz
            })
            .collect()
    }
}

pub fn stft_power(series: &[Complex64], window: usize, hop: usize, fft_size: usize, rate_hz: f64) -> Result<StftPower> {
    if window == 0 || window > series.len() {
        return Err(Error::invalid(format!(
            "window {window} does not fit a series of {}",
            series.len()
        )));
    }
    if hop == 0 || fft_size < window {
        return Err(Error::invalid("hop must be >= 1 and fft size >= window"));
    }
    let win = hann(window);
    let frames = (series.len() - window) / hop + 1;
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let mut power = Vec::with_capacity(frames * fft_size);
    let half = fft_size / 2;
    for t in 0..frames {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (b, (x, w)) in buf.iter_mut().zip(series[t * hop..t * hop + window].iter().zip(&win)) {
            *b = x * w;
        }
        fft.process(&mut buf);
        for k in 0..fft_size {
            power.push(buf[(k + half) % fft_size].norm_sqr());
        }
    }
    Ok(StftPower {
        fft_size,
        frames,
        bin_hz: rate_hz / fft_size as f64,
        power,
    })
}

/// Post-STFT shaping of the spectrogram image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftParams {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub doppler_band_hz: f64,
    pub height: usize,
    pub width: usize,
    pub floor_db: f64,
}

impl StftParams {
    /// Defaults for the undecimated 100 kHz slow-time rate.
    pub fn full() -> Self {
        StftParams {
            window: 512,
            hop: 128,
            fft_size: 1024,
            doppler_band_hz: 2000.0,
            height: 28,
            width: 28,
            floor_db: -80.0,
        }
    }

    /// Defaults for a slow time decimated by 10 (10 kHz).
    pub fn reduced() -> Self {
        StftParams {
            window: 64,
            hop: 16,
            fft_size: 128,
            ..StftParams::full()
        }
    }
}

/// Standardized log-magnitude spectrogram, row-major with rows in ascending
/// Doppler frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub params: StftParams,
    /// Total STFT power before any normalization.
    pub raw_energy: f64,
}

impl Spectrogram {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

pub fn stft_spectrogram(series: &[Complex64], rate_hz: f64, params: &StftParams) -> Result<Spectrogram> {
    let stft = stft_power(series, params.window, params.hop, params.fft_size, rate_hz)?;
    Ok(spectrogram_from_power(&stft, params))
}

pub fn spectrogram_from_power(stft: &StftPower, params: &StftParams) -> Spectrogram {
    let peak = stft.power.iter().cloned().fold(0.0, f64::max);
    let band = stft.band_bins(params.doppler_band_hz);
    let rows = band.len();
    let cols = stft.frames;
    // Rows are frequency, columns are time.
    let mut db = vec![params.floor_db; rows * cols];
    if peak > 0.0 {
        for t in 0..cols {
            let frame = stft.frame(t);
            for (r, k) in band.clone().enumerate() {
                let rel = 10.0 * (frame[k] / peak).log10();
                db[r * cols + t] = if rel.is_finite() { rel.max(params.floor_db) } else { params.floor_db };
            }
        }
    }
    let resized = resample_area(&db, rows, cols, params.height, params.width);
    let n = resized.len() as f64;
    let mean = resized.iter().sum::<f64>() / n;
    let var = resized.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let data = if var < 1e-12 {
        vec![0.0; resized.len()]
    } else {
        let sd = var.sqrt();
        resized.iter().map(|v| ((v - mean) / sd) as f32).collect()
    };
    Spectrogram {
        height: params.height,
        width: params.width,
        data,
        params: *params,
        raw_energy: stft.total(),
    }
}

fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut w = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((j, overlap / scale));
                }
                j += 1;
            }
            w
        })
        .collect()
}

/// Area-weighted resampling of a row-major image; exact block averaging when
/// the sizes divide, piecewise-constant upsampling otherwise.
pub fn resample_area(src: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let wr = area_weights(rows, out_rows);
    let wc = area_weights(cols, out_cols);
    let mut tmp = vec![0.0; rows * out_cols];
    for r in 0..rows {
        for (c, ws) in wc.iter().enumerate() {
            tmp[r * out_cols + c] = ws.iter().map(|&(j, w)| w * src[r * cols + j]).sum();
        }
    }
    let mut out = vec![0.0; out_rows * out_cols];
    for (r, ws) in wr.iter().enumerate() {
        for c in 0..out_cols {
            out[r * out_cols + c] = ws.iter().map(|&(j, w)| w * tmp[j * out_cols + c]).sum();
        }
    }
    out
}
