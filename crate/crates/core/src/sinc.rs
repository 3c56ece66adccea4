//! Learnable band-pass sinc filterbank.
//!
//! Each filter is a difference of two scaled sinc functions parameterized
//! only by its low cutoff and bandwidth (normalized frequency, cycles per
//! sample). Kernels are materialized on demand and are differentiable
//! w.r.t. both parameters, so the cutoffs train by plain gradient descent.
//!
//! Raw parameters are kept unconstrained; the effective cutoffs are
//! `a1 = |f_low| + f_floor` and `a2 = min(a1 + |band|, 0.5)` with
//! `f_floor = 50 Hz / sample_rate`, which keeps `0 < a1 < a2 ≤ 0.5` during
//! optimization without constrained updates. Gradients flow through the
//! absolute-value reparameterization.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ops::{conv1d, conv1d_backward};
use crate::tensor::Tensor;

/// Floor for dB magnitudes so perfect nulls serialize as a finite value.
pub const DB_FLOOR: f64 = -300.0;

/// Per-filter learnable cutoff parameters plus the fixed kernel geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SincFilterParams {
    /// Raw low-cutoff parameter per filter, normalized frequency.
    pub f_low: Vec<f64>,
    /// Raw bandwidth parameter per filter, normalized frequency.
    pub band: Vec<f64>,
    /// Odd number of taps; the kernel is symmetric around its center.
    pub kernel_len: usize,
    /// Hz, used for the cutoff floor and for reporting.
    pub sample_rate: f64,
    /// Apply a Hamming window to each kernel. Disabling it exposes the
    /// bare truncated-sinc kernels to unit tests.
    pub window: bool,
}

/// Magnitude response of one materialized filter, in dB relative to peak.
#[derive(Clone, Debug)]
pub struct FilterResponse {
    /// Strictly increasing normalized frequencies in [0, 0.5].
    pub freqs: Vec<f64>,
    pub magnitude_db: Vec<f64>,
}

impl SincFilterParams {
    /// Build params whose *effective* cutoffs equal the given `(a1, a2)`
    /// pairs in normalized frequency (each must respect the floor and
    /// Nyquist constraints).
    pub fn from_effective(
        cutoffs: &[(f64, f64)],
        kernel_len: usize,
        sample_rate: f64,
        window: bool,
    ) -> Result<Self> {
        let floor = 50.0 / sample_rate;
        let mut f_low = Vec::with_capacity(cutoffs.len());
        let mut band = Vec::with_capacity(cutoffs.len());
        for &(a1, a2) in cutoffs {
            if !(a1 >= floor && a1 <= a2 && a2 <= 0.5) {
                return Err(Error::InvalidFrequencyRange {
                    detail: format!(
                        "cutoffs ({a1}, {a2}) must satisfy {floor} <= a1 <= a2 <= 0.5"
                    ),
                });
            }
            f_low.push(a1 - floor);
            band.push(a2 - a1);
        }
        let params = SincFilterParams {
            f_low,
            band,
            kernel_len,
            sample_rate,
            window,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_len == 0 || self.kernel_len % 2 == 0 {
            return Err(Error::InvalidConfig {
                detail: format!("kernel_len must be odd, got {}", self.kernel_len),
            });
        }
        if self.f_low.is_empty() || self.f_low.len() != self.band.len() {
            return Err(Error::InvalidConfig {
                detail: "filter parameter vectors must be non-empty and equal length".into(),
            });
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidConfig {
                detail: "sample_rate must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.f_low.len()
    }

    /// 50 Hz in normalized frequency.
    pub fn f_floor(&self) -> f64 {
        50.0 / self.sample_rate
    }

    /// Effective `(a1, a2)` for filter `i` after the clamping rule.
    pub fn effective_cutoffs(&self, i: usize) -> (f64, f64) {
        let a1 = self.f_low[i].abs() + self.f_floor();
        let a2 = (a1 + self.band[i].abs()).min(0.5);
        (a1, a2)
    }
}

/// Convert Hz to mel: `mel(f) = 2595 · log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `count + 1` mel-equidistant edge frequencies between `f_min` and `f_max`.
pub fn mel_edges(count: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    (0..=count)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / count as f64))
        .collect()
}

/// Mel-spaced initialization: filter `i` gets cutoffs `(edge_i, edge_{i+1})`
/// converted to normalized frequency. Edges below the 50 Hz floor clamp to
/// the floor.
pub fn mel_init(
    count: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
    kernel_len: usize,
    window: bool,
) -> Result<SincFilterParams> {
    if count == 0 {
        return Err(Error::InvalidConfig {
            detail: "filter count must be >= 1".into(),
        });
    }
    if !(f_min > 0.0 && f_min < f_max && f_max <= sample_rate / 2.0) {
        return Err(Error::InvalidFrequencyRange {
            detail: format!(
                "need 0 < f_min < f_max <= sample_rate/2, got f_min={f_min}, f_max={f_max}, sample_rate={sample_rate}"
            ),
        });
    }
    let floor_hz = 50.0;
    let edges = mel_edges(count, f_min, f_max);
    let cutoffs: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let a1 = edges[i].max(floor_hz) / sample_rate;
            let a2 = (edges[i + 1].max(floor_hz) / sample_rate).min(0.5).max(a1);
            (a1, a2)
        })
        .collect();
    SincFilterParams::from_effective(&cutoffs, kernel_len, sample_rate, window)
}

/// One term of the band-pass difference: `2a·sinc(2πan)` evaluated stably,
/// with the `n = 0` value defined by continuity as `2a`.
fn sinc_term(a: f64, n: f64) -> f64 {
    if n == 0.0 {
        2.0 * a
    } else {
        (2.0 * PI * a * n).sin() / (PI * n)
    }
}

/// Hamming window coefficients for an odd kernel, mirrored so symmetry is
/// bit-exact.
fn hamming(kernel_len: usize) -> Vec<f64> {
    let mut w = vec![1.0; kernel_len];
    let denom = (kernel_len - 1) as f64;
    for j in 0..=(kernel_len - 1) / 2 {
        let v = 0.54 - 0.46 * (2.0 * PI * j as f64 / denom).cos();
        w[j] = v;
        w[kernel_len - 1 - j] = v;
    }
    w
}

/// Materialize all kernels: `kernel[f, j] = w[j] · g(n_j, a1, a2)` with
/// `n_j = j − (kernel_len−1)/2`. Kernels are exactly symmetric; a
/// zero-bandwidth filter yields the all-zero kernel.
pub fn materialize(params: &SincFilterParams) -> Result<Tensor> {
    params.validate()?;
    let len = params.kernel_len;
    let center = (len - 1) / 2;
    let w = if params.window {
        hamming(len)
    } else {
        vec![1.0; len]
    };
    let mut data = vec![0.0; params.count() * len];
    for f in 0..params.count() {
        let (a1, a2) = params.effective_cutoffs(f);
        let row = &mut data[f * len..(f + 1) * len];
        // Mirror around the center tap so symmetry holds bit-for-bit.
        for j in 0..=center {
            let n = (center - j) as f64;
            let v = (sinc_term(a2, n) - sinc_term(a1, n)) * w[j];
            row[j] = v;
            row[len - 1 - j] = v;
        }
    }
    Ok(Tensor::raw(vec![params.count(), len], data))
}

/// Chain `grad_kernels` (shape `[count, kernel_len]`) through the cutoff
/// parameterization: returns gradients on `f_low` and `band`.
///
/// `∂g/∂a2 = 2cos(2πa2 n)` and `∂g/∂a1 = −2cos(2πa1 n)` (both valid at
/// n = 0); the clamp at 0.5 blocks the a2 path, and `|·|` contributes its
/// sign (taken as +1 at exactly 0).
pub fn materialize_backward(params: &SincFilterParams, grad_kernels: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let len = params.kernel_len;
    let center = ((len - 1) / 2) as f64;
    let w = if params.window {
        hamming(len)
    } else {
        vec![1.0; len]
    };
    let mut d_f_low = vec![0.0; params.count()];
    let mut d_band = vec![0.0; params.count()];
    for f in 0..params.count() {
        let (a1, a2) = params.effective_cutoffs(f);
        let clamped = params.f_low[f].abs() + params.f_floor() + params.band[f].abs() > 0.5;
        let sgn_low = if params.f_low[f] < 0.0 { -1.0 } else { 1.0 };
        let sgn_band = if params.band[f] < 0.0 { -1.0 } else { 1.0 };
        let g_row = &grad_kernels.data()[f * len..(f + 1) * len];
        let mut da1 = 0.0;
        let mut da2 = 0.0;
        for (j, g) in g_row.iter().enumerate() {
            let n = j as f64 - center;
            da1 += g * w[j] * (-2.0 * (2.0 * PI * a1 * n).cos());
            da2 += g * w[j] * (2.0 * (2.0 * PI * a2 * n).cos());
        }
        if clamped {
            da2 = 0.0;
        }
        d_f_low[f] = (da1 + da2) * sgn_low;
        d_band[f] = da2 * sgn_band;
    }
    (d_f_low, d_band)
}

/// Filterbank forward pass: materialize, then convolve.
/// `waveform: [batch, chunk_len]` → `[batch, count, out_len]`.
pub fn sinc_forward(params: &SincFilterParams, waveform: &Tensor, stride: usize) -> Result<Tensor> {
    let kernels = materialize(params)?;
    conv1d(waveform, &kernels, stride)
}

/// Backward of [`sinc_forward`]: gradients on the waveform and on the
/// cutoff parameters.
pub fn sinc_backward(
    params: &SincFilterParams,
    waveform: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let kernels = materialize(params)?;
    let (d_wave, d_kernels) = conv1d_backward(waveform, &kernels, stride, grad_out)?;
    let (d_f_low, d_band) = materialize_backward(params, &d_kernels);
    Ok((d_wave, d_f_low, d_band))
}

/// Magnitude of the DTFT of one materialized kernel, sampled at `n_points`
/// frequencies spanning [0, 0.5], in dB relative to the peak. An all-zero
/// kernel (zero bandwidth) is reported as an error rather than a silent
/// −inf curve.
pub fn frequency_response(
    params: &SincFilterParams,
    filter_index: usize,
    n_points: usize,
) -> Result<FilterResponse> {
    if filter_index >= params.count() {
        return Err(Error::FilterIndex {
            index: filter_index,
            count: params.count(),
        });
    }
    if n_points < 2 {
        return Err(Error::InvalidConfig {
            detail: "frequency_response needs at least 2 points".into(),
        });
    }
    let kernels = materialize(params)?;
    let len = params.kernel_len;
    let row = &kernels.data()[filter_index * len..(filter_index + 1) * len];
    if row.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroKernel {
            filter: filter_index,
        });
    }
    let center = (len - 1) / 2;
    let mut freqs = Vec::with_capacity(n_points);
    let mut mags = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let f = 0.5 * i as f64 / (n_points - 1) as f64;
        // Symmetric kernel: the DTFT is real.
        let mut h = row[center];
        for d in 1..=center {
            h += 2.0 * row[center + d] * (2.0 * PI * f * d as f64).cos();
        }
        freqs.push(f);
        mags.push(h.abs());
    }
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let db = mags
        .iter()
        .map(|&m| {
            if m == 0.0 {
                DB_FLOOR
            } else {
                (20.0 * (m / peak).log10()).max(DB_FLOOR)
            }
        })
        .collect();
    Ok(FilterResponse {
        freqs,
        magnitude_db: db,
    })
}

impl FilterResponse {
    /// Frequency of the response peak (0 dB by construction).
    pub fn peak_freq(&self) -> f64 {
        let mut best = 0;
        for (i, &db) in self.magnitude_db.iter().enumerate() {
            if db > self.magnitude_db[best] {
                best = i;
            }
        }
        self.freqs[best]
    }

    /// First and last frequencies at which the response is within 3 dB of
    /// the peak.
    pub fn minus3db_points(&self) -> (f64, f64) {
        let lo = self
            .magnitude_db
            .iter()
            .position(|&db| db >= -3.0)
            .map(|i| self.freqs[i])
            .unwrap_or(self.peak_freq());
        let hi = self
            .magnitude_db
            .iter()
            .rposition(|&db| db >= -3.0)
            .map(|i| self.freqs[i])
            .unwrap_or(self.peak_freq());
        (lo, hi)
    }

    /// Response in dB at the grid point nearest `freq`.
    pub fn db_at(&self, freq: f64) -> f64 {
        let step = self.freqs[1] - self.freqs[0];
        let i = ((freq / step).round() as usize).min(self.freqs.len() - 1);
        self.magnitude_db[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_filter_spans_requested_range() {
        let p = mel_init(1, 16000.0, 100.0, 200.0, 101, true).unwrap();
        let (a1, a2) = p.effective_cutoffs(0);
        assert!((a1 - 100.0 / 16000.0).abs() < 1e-12);
        assert!((a2 - 200.0 / 16000.0).abs() < 1e-12);
    }

    #[test]
    fn mel_edges_are_equispaced_in_mel() {
        let edges = mel_edges(40, 30.0, 8000.0);
        assert_eq!(edges.len(), 41);
        assert!((edges[0] - 30.0).abs() < 1e-9);
        assert!((edges[40] - 8000.0).abs() < 1e-6);
        let step = hz_to_mel(8000.0) - hz_to_mel(30.0);
        for i in 0..40 {
            let got = hz_to_mel(edges[i + 1]) - hz_to_mel(edges[i]);
            assert!((got - step / 40.0).abs() < 1e-9, "edge {i}: {got}");
        }
    }

    #[test]
    fn bands_tile_without_gaps() {
        let p = mel_init(40, 16000.0, 100.0, 8000.0, 251, true).unwrap();
        for i in 0..p.count() {
            let (a1, a2) = p.effective_cutoffs(i);
            assert!(a1 < a2, "filter {i}");
            if i + 1 < p.count() {
                let (next_a1, _) = p.effective_cutoffs(i + 1);
                assert!((a2 - next_a1).abs() < 1e-12, "gap at filter {i}");
            }
        }
    }

    #[test]
    fn mel_init_rejects_bad_ranges() {
        assert!(mel_init(0, 16000.0, 100.0, 200.0, 101, true).is_err());
        assert!(mel_init(4, 16000.0, 0.0, 200.0, 101, true).is_err());
        assert!(mel_init(4, 16000.0, 300.0, 200.0, 101, true).is_err());
        assert!(mel_init(4, 16000.0, 100.0, 9000.0, 101, true).is_err()); // above Nyquist
        assert!(mel_init(4, 16000.0, 100.0, 8000.0, 100, true).is_err()); // even kernel
    }

    #[test]
    fn zero_band_materializes_all_zero() {
        let p = SincFilterParams::from_effective(&[(0.1, 0.1)], 33, 16000.0, true).unwrap();
        let k = materialize(&p).unwrap();
        assert!(k.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_tap_is_twice_the_bandwidth() {
        let p = SincFilterParams::from_effective(&[(0.05, 0.15)], 33, 16000.0, false).unwrap();
        let k = materialize(&p).unwrap();
        assert!((k.data()[16] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn first_off_center_tap_matches_scalar_evaluation() {
        // g(1, 0.05, 0.15) = 2·0.15·sin(0.3π)/(0.3π) − 2·0.05·sin(0.1π)/(0.1π)
        let p = SincFilterParams::from_effective(&[(0.05, 0.15)], 33, 16000.0, false).unwrap();
        let k = materialize(&p).unwrap();
        let expected = ((0.3 * PI).sin() - (0.1 * PI).sin()) / PI;
        assert!((expected - 0.1592).abs() < 5e-5); // sanity vs the published figure
        assert!((k.data()[17] - expected).abs() < 1e-15);
        assert!((k.data()[15] - expected).abs() < 1e-15);
    }

    #[test]
    fn kernels_are_bit_exactly_symmetric() {
        let p = mel_init(8, 16000.0, 60.0, 8000.0, 251, true).unwrap();
        let k = materialize(&p).unwrap();
        let len = p.kernel_len;
        for f in 0..p.count() {
            let row = &k.data()[f * len..(f + 1) * len];
            for j in 0..len {
                assert_eq!(row[j].to_bits(), row[len - 1 - j].to_bits());
            }
        }
    }

    #[test]
    fn zero_waveform_gives_zero_output_and_gradients() {
        let p = mel_init(4, 16000.0, 100.0, 4000.0, 33, true).unwrap();
        let wave = Tensor::zeros(vec![2, 64]);
        let out = sinc_forward(&p, &wave, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let grad = Tensor::filled(out.shape().to_vec(), 1.0);
        let (_, d_low, d_band) = sinc_backward(&p, &wave, 1, &grad).unwrap();
        assert!(d_low.iter().all(|&v| v == 0.0));
        assert!(d_band.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn in_band_sinusoid_passes_out_of_band_is_rejected() {
        let p = SincFilterParams::from_effective(&[(0.1, 0.2)], 251, 16000.0, true).unwrap();
        let n = 4000;
        let make = |freq: f64| {
            let data: Vec<f64> = (0..n).map(|i| (2.0 * PI * freq * i as f64).sin()).collect();
            Tensor::raw(vec![1, n], data)
        };
        let rms = |t: &Tensor| (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        let in_band = rms(&sinc_forward(&p, &make(0.15), 1).unwrap());
        let out_band = rms(&sinc_forward(&p, &make(0.35), 1).unwrap());
        assert!(
            in_band / out_band > 10.0, // ≥ 20 dB
            "in-band {in_band} vs out-of-band {out_band}"
        );
    }

    #[test]
    fn response_peak_inside_band_and_zero_band_flagged() {
        let p = SincFilterParams::from_effective(&[(0.1, 0.2)], 251, 16000.0, true).unwrap();
        let resp = frequency_response(&p, 0, 1024).unwrap();
        let peak = resp.peak_freq();
        assert!(peak >= 0.1 && peak <= 0.2, "peak at {peak}");

        let z = SincFilterParams::from_effective(&[(0.1, 0.1)], 251, 16000.0, true).unwrap();
        assert!(matches!(
            frequency_response(&z, 0, 64),
            Err(Error::ZeroKernel { filter: 0 })
        ));
        assert!(matches!(
            frequency_response(&p, 3, 64),
            Err(Error::FilterIndex { index: 3, count: 1 })
        ));
    }

    #[test]
    fn wideband_filter_has_wide_minus3db_bandwidth() {
        let sr = 16000.0;
        let p = SincFilterParams::from_effective(&[(50.0 / sr, 0.5)], 511, sr, true).unwrap();
        let resp = frequency_response(&p, 0, 4096).unwrap();
        let (lo, hi) = resp.minus3db_points();
        assert!(hi - lo >= 0.45, "bandwidth {}", hi - lo);
    }

    #[test]
    fn clamp_keeps_cutoffs_valid_under_extreme_params() {
        // Negative raw params and oversized bands still land in (0, 0.5].
        let p = SincFilterParams {
            f_low: vec![-0.3, 0.2],
            band: vec![2.0, -0.4],
            kernel_len: 33,
            sample_rate: 16000.0,
            window: true,
        };
        for i in 0..2 {
            let (a1, a2) = p.effective_cutoffs(i);
            assert!(a1 > 0.0 && a1 <= a2 && a2 <= 0.5, "filter {i}: ({a1}, {a2})");
        }
    }
}
