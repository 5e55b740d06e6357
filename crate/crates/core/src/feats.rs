//! Acoustic front end: framing, log-mel filterbank, MFCC, context windowing
//! and feature binning.
//!
//! All operations here are pure functions of their inputs; identical inputs
//! produce bit-identical outputs.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::AudioSignal;
use crate::error::{config_err, contract_err, data_err, Result};

/// Pre-emphasis coefficient applied before windowing.
pub const PRE_EMPHASIS: f64 = 0.97;

/// Floor applied to mel-band energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;

/// A T x D matrix of per-frame features plus frame-grid metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Number of analysis frames for a signal of `len` samples.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        1 + (len - win) / hop
    }
}

/// Window length in samples for a frame length in milliseconds.
pub fn samples_per_frame(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

/// Split a signal into pre-emphasized, Hamming-windowed frames.
///
/// Frame t covers samples [t*hop, t*hop + win); trailing samples that do not
/// fill a window are dropped.
pub fn frame_signal(
    signal: &AudioSignal,
    frame_length_ms: f64,
    frame_shift_ms: f64,
) -> Result<Array2<f64>> {
    let win = samples_per_frame(frame_length_ms, signal.sample_rate);
    let hop = samples_per_frame(frame_shift_ms, signal.sample_rate);
    if hop == 0 || win < hop {
        return config_err(format!(
            "frame length ({frame_length_ms} ms) must be >= frame shift ({frame_shift_ms} ms) > 0"
        ));
    }
    if signal.samples.len() < win {
        return data_err(format!(
            "signal of {} samples is shorter than one {win}-sample frame",
            signal.samples.len()
        ));
    }

    let mut emphasized = Vec::with_capacity(signal.samples.len());
    emphasized.push(signal.samples[0]);
    for i in 1..signal.samples.len() {
        emphasized.push(signal.samples[i] - PRE_EMPHASIS * signal.samples[i - 1]);
    }

    let window = hamming_window(win);
    let t = frame_count(emphasized.len(), win, hop);
    let mut frames = Array2::zeros((t, win));
    for ti in 0..t {
        let start = ti * hop;
        for j in 0..win {
            frames[[ti, j]] = emphasized[start + j] * window[j];
        }
    }
    Ok(frames)
}

/// Hamming window of the given length.
pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// `mel = 2595 log10(1 + hz/700)`
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels` rows of `nfft/2 + 1` weights.
///
/// Filter edges are mel-spaced between 0 Hz and Nyquist; weights are
/// evaluated at each bin's exact frequency so filter peaks sit at their
/// nominal center frequencies.
pub fn mel_filterbank(n_mels: usize, nfft: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = nfft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| hz_to_mel(0.0) + (hz_to_mel(nyquist) - hz_to_mel(0.0)) * i as f64 / (n_mels + 1) as f64)
        .collect();
    let hz_points: Vec<f64> = mel_points.iter().map(|&m| mel_to_hz(m)).collect();

    let mut bank = Array2::zeros((n_mels, n_bins));
    for k in 0..n_mels {
        let (left, center, right) = (hz_points[k], hz_points[k + 1], hz_points[k + 2]);
        for j in 0..n_bins {
            let f = j as f64 * sample_rate as f64 / nfft as f64;
            let w = if f >= left && f <= center && center > left {
                (f - left) / (center - left)
            } else if f > center && f <= right && right > center {
                (right - f) / (right - center)
            } else {
                0.0
            };
            bank[[k, j]] = w;
        }
    }
    bank
}

/// Center frequency in Hz of mel filter `k` (0-based) out of `n_mels`.
pub fn mel_filter_center(k: usize, n_mels: usize, sample_rate: u32) -> f64 {
    let nyquist = sample_rate as f64 / 2.0;
    let mel = hz_to_mel(nyquist) * (k + 1) as f64 / (n_mels + 1) as f64;
    mel_to_hz(mel)
}

fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p
}

/// Power spectra of windowed frames, one row per frame, `nfft/2 + 1` bins.
fn power_spectra(frames: &Array2<f64>, nfft: usize) -> Array2<f64> {
    let n_bins = nfft / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut out = Array2::zeros((frames.nrows(), n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for (ti, frame) in frames.rows().into_iter().enumerate() {
        for c in buf.iter_mut() {
            *c = Complex::new(0.0, 0.0);
        }
        for (j, &v) in frame.iter().enumerate() {
            buf[j] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for j in 0..n_bins {
            out[[ti, j]] = buf[j].norm_sqr();
        }
    }
    out
}

/// Log mel filterbank features from windowed frames.
///
/// FFT size is the next power of two at or above the frame length; band
/// energies are floored at [`LOG_FLOOR`] before the natural log.
pub fn logmel_frames(
    frames: &Array2<f64>,
    n_mels: usize,
    sample_rate: u32,
) -> Result<Array2<f64>> {
    if n_mels == 0 {
        return config_err("n_mels must be >= 1");
    }
    let nfft = next_pow2(frames.ncols().max(1));
    let spectra = power_spectra(frames, nfft);
    let bank = mel_filterbank(n_mels, nfft, sample_rate);
    let energies = spectra.dot(&bank.t());
    Ok(energies.mapv(|e| e.max(LOG_FLOOR).ln()))
}

/// Orthonormal DCT-II of a vector.
pub fn dct_ii_orthonormal(input: &[f64]) -> Vec<f64> {
    let n = input.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut sum = 0.0;
        for (i, &x) in input.iter().enumerate() {
            sum += x * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        out.push(scale * sum);
    }
    out
}

/// MFCCs from windowed frames: orthonormal DCT-II of the log-mel vector,
/// keeping the first `n_ceps` coefficients.
pub fn mfcc_frames(
    frames: &Array2<f64>,
    n_ceps: usize,
    n_mels: usize,
    sample_rate: u32,
) -> Result<Array2<f64>> {
    if n_ceps > n_mels {
        return config_err(format!("n_ceps ({n_ceps}) must be <= n_mels ({n_mels})"));
    }
    let logmel = logmel_frames(frames, n_mels, sample_rate)?;
    let mut out = Array2::zeros((logmel.nrows(), n_ceps));
    for (ti, row) in logmel.rows().into_iter().enumerate() {
        let ceps = dct_ii_orthonormal(row.as_slice().unwrap());
        for k in 0..n_ceps {
            out[[ti, k]] = ceps[k];
        }
    }
    Ok(out)
}

/// End-to-end log-mel extraction from a signal.
pub fn extract_logmel(
    signal: &AudioSignal,
    n_mels: usize,
    frame_length_ms: f64,
    frame_shift_ms: f64,
) -> Result<FeatureMatrix> {
    let frames = frame_signal(signal, frame_length_ms, frame_shift_ms)?;
    let data = logmel_frames(&frames, n_mels, signal.sample_rate)?;
    Ok(FeatureMatrix {
        data,
        frame_shift_ms,
        frame_length_ms,
    })
}

/// End-to-end MFCC extraction from a signal.
pub fn extract_mfcc(
    signal: &AudioSignal,
    n_ceps: usize,
    n_mels: usize,
    frame_length_ms: f64,
    frame_shift_ms: f64,
) -> Result<FeatureMatrix> {
    let frames = frame_signal(signal, frame_length_ms, frame_shift_ms)?;
    let data = mfcc_frames(&frames, n_ceps, n_mels, signal.sample_rate)?;
    Ok(FeatureMatrix {
        data,
        frame_shift_ms,
        frame_length_ms,
    })
}

/// Stack each frame with `r` frames of left and right context.
///
/// Out-of-range neighbors are replaced by the first/last frame, so output
/// row t is `[x_{t-r}, ..., x_t, ..., x_{t+r}]` with D' = D*(2r+1).
pub fn context_window(feats: &FeatureMatrix, r: usize) -> FeatureMatrix {
    let (t, d) = (feats.num_frames(), feats.dim());
    let width = 2 * r + 1;
    let mut out = Array2::zeros((t, d * width));
    for ti in 0..t {
        for (slot, offset) in (-(r as isize)..=r as isize).enumerate() {
            let src = (ti as isize + offset).clamp(0, t as isize - 1) as usize;
            out.slice_mut(s![ti, slot * d..(slot + 1) * d])
                .assign(&feats.data.row(src));
        }
    }
    FeatureMatrix {
        data: out,
        frame_shift_ms: feats.frame_shift_ms,
        frame_length_ms: feats.frame_length_ms,
    }
}

/// Mean-reduce every `n` adjacent frames without overlap.
///
/// The last bin may be partial and is averaged over its actual members.
/// The effective frame shift is multiplied by `n`.
pub fn bin_features(feats: &FeatureMatrix, n: usize) -> Result<FeatureMatrix> {
    if n < 1 {
        return config_err("bin size must be >= 1");
    }
    let t = feats.num_frames();
    let d = feats.dim();
    let bins = t.div_ceil(n);
    let mut out = Array2::zeros((bins, d));
    for b in 0..bins {
        let start = b * n;
        let end = ((b + 1) * n).min(t);
        let mut acc = Array1::zeros(d);
        for ti in start..end {
            acc += &feats.data.row(ti);
        }
        acc /= (end - start) as f64;
        out.row_mut(b).assign(&acc);
    }
    Ok(FeatureMatrix {
        data: out,
        frame_shift_ms: feats.frame_shift_ms * n as f64,
        frame_length_ms: feats.frame_length_ms,
    })
}

/// Bin frame labels alongside [`bin_features`]: a bin is positive iff the
/// mean of its member labels is >= 0.5.
pub fn bin_labels(labels: &[u8], n: usize) -> Vec<u8> {
    assert!(n >= 1);
    labels
        .chunks(n)
        .map(|chunk| {
            let ones: usize = chunk.iter().map(|&l| l as usize).sum();
            u8::from(2 * ones >= chunk.len())
        })
        .collect()
}

/// Undo binning on per-bin predictions: repeat each value `n` times and
/// truncate to the original frame count.
pub fn expand_predictions(preds: &[f64], n: usize, orig_len: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return config_err("bin size must be >= 1");
    }
    if preds.len() != orig_len.div_ceil(n) {
        return contract_err(format!(
            "expected ceil({orig_len}/{n}) = {} predictions, got {}",
            orig_len.div_ceil(n),
            preds.len()
        ));
    }
    let mut out = Vec::with_capacity(orig_len);
    'outer: for &p in preds {
        for _ in 0..n {
            if out.len() == orig_len {
                break 'outer;
            }
            out.push(p);
        }
    }
    Ok(out)
}

/// Write a feature matrix as CSV, one frame per row.
pub fn write_features_csv(feats: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in feats.data.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(file, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tone(freq: f64, secs: f64, rate: u32) -> AudioSignal {
        let n = (secs * rate as f64) as usize;
        let samples = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioSignal::new(samples, rate).unwrap()
    }

    fn fm(data: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix {
            data,
            frame_shift_ms: 10.0,
            frame_length_ms: 25.0,
        }
    }

    #[test]
    fn one_second_at_8k_gives_98_frames_of_200_samples() {
        let sig = AudioSignal::new(vec![0.1; 8000], 8000).unwrap();
        let frames = frame_signal(&sig, 25.0, 10.0).unwrap();
        assert_eq!(frames.dim(), (98, 200));
    }

    #[test]
    fn exactly_one_window_gives_one_frame() {
        let sig = AudioSignal::new(vec![0.1; 200], 8000).unwrap();
        let frames = frame_signal(&sig, 25.0, 10.0).unwrap();
        assert_eq!(frames.nrows(), 1);
    }

    #[test]
    fn short_signal_is_a_data_error() {
        let sig = AudioSignal::new(vec![0.1; 199], 8000).unwrap();
        assert!(frame_signal(&sig, 25.0, 10.0).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let sig = AudioSignal::new(vec![0.0; 1000], 8000).unwrap();
        let frames = frame_signal(&sig, 25.0, 10.0).unwrap();
        assert!(frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shift_longer_than_length_is_a_config_error() {
        let sig = AudioSignal::new(vec![0.1; 1000], 8000).unwrap();
        assert!(frame_signal(&sig, 10.0, 25.0).is_err());
    }

    // Independent oracle: evaluate each filter's triangular response at the
    // FFT bin nearest the tone frequency, from first principles.
    fn oracle_filter_response_at(freq: f64, k: usize, n_mels: usize, rate: u32, nfft: usize) -> f64 {
        let bin = (freq * nfft as f64 / rate as f64).round();
        let f = bin * rate as f64 / nfft as f64;
        let m = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let inv = |mel: f64| 700.0 * (10.0f64.powf(mel / 2595.0) - 1.0);
        let top = m(rate as f64 / 2.0);
        let left = inv(top * k as f64 / (n_mels + 1) as f64);
        let center = inv(top * (k + 1) as f64 / (n_mels + 1) as f64);
        let right = inv(top * (k + 2) as f64 / (n_mels + 1) as f64);
        if f >= left && f <= center {
            (f - left) / (center - left)
        } else if f > center && f <= right {
            (right - f) / (right - center)
        } else {
            0.0
        }
    }

    #[test]
    fn pure_tone_at_filter_center_peaks_that_filter() {
        let n_mels = 36;
        let rate = 8000;
        for k in [4usize, 9, 14, 19, 24, 29] {
            let freq = mel_filter_center(k, n_mels, rate);
            let sig = tone(freq, 0.5, rate);
            let frames = frame_signal(&sig, 25.0, 10.0).unwrap();
            let lm = logmel_frames(&frames, n_mels, rate).unwrap();
            // Mean over frames, then argmax across filters.
            let mean = lm.mean_axis(ndarray::Axis(0)).unwrap();
            let argmax = mean
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k, "tone at {freq:.1} Hz should peak filter {k}");
            // The oracle agrees that filter k has the largest direct response
            // at the tone's bin.
            let oracle_best = (0..n_mels)
                .max_by(|&a, &b| {
                    oracle_filter_response_at(freq, a, n_mels, rate, 256)
                        .partial_cmp(&oracle_filter_response_at(freq, b, n_mels, rate, 256))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(oracle_best, k);
        }
    }

    #[test]
    fn silent_frame_hits_log_floor() {
        let frames = Array2::zeros((1, 200));
        let lm = logmel_frames(&frames, 36, 8000).unwrap();
        for &v in lm.iter() {
            assert_abs_diff_eq!(v, LOG_FLOOR.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn doubling_amplitude_adds_log4_to_unfloored_bins() {
        let sig = tone(700.0, 0.3, 8000);
        let frames = frame_signal(&sig, 25.0, 10.0).unwrap();
        let lm1 = logmel_frames(&frames, 36, 8000).unwrap();
        let lm2 = logmel_frames(&frames.mapv(|v| 2.0 * v), 36, 8000).unwrap();
        let floor = LOG_FLOOR.ln();
        let mut checked = 0;
        for (a, b) in lm1.iter().zip(lm2.iter()) {
            if *a > floor + 1e-9 && *b > floor + 1e-9 {
                assert_abs_diff_eq!(b - a, 4.0f64.ln(), epsilon = 1e-9);
                checked += 1;
            } else {
                // Floored bins only ever move up.
                assert!(b >= a);
            }
        }
        assert!(checked > 100, "too few un-floored bins exercised");
    }

    #[test]
    fn logmel_monotone_under_gain() {
        let sig = tone(450.0, 0.2, 8000);
        let frames = frame_signal(&sig, 25.0, 10.0).unwrap();
        let lo = logmel_frames(&frames, 24, 8000).unwrap();
        let hi = logmel_frames(&frames.mapv(|v| 3.0 * v), 24, 8000).unwrap();
        for (a, b) in lo.iter().zip(hi.iter()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn dct_of_constant_puts_everything_in_c0() {
        let c = 2.5;
        let n = 16;
        let out = dct_ii_orthonormal(&vec![c; n]);
        assert_abs_diff_eq!(out[0], c * (n as f64).sqrt(), epsilon = 1e-12);
        for &v in &out[1..] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn orthonormal_dct_inverts_exactly() {
        let input: Vec<f64> = (0..12).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let coef = dct_ii_orthonormal(&input);
        let n = input.len();
        // Inverse of the orthonormal DCT-II (= orthonormal DCT-III).
        for (i, &x) in input.iter().enumerate() {
            let mut rec = coef[0] / (n as f64).sqrt();
            for k in 1..n {
                rec += (2.0 / n as f64).sqrt()
                    * coef[k]
                    * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
            }
            assert_abs_diff_eq!(rec, x, epsilon = 1e-9);
        }
    }

    #[test]
    fn dct_matches_double_loop_oracle() {
        let input: Vec<f64> = vec![0.3, -1.2, 2.7, 0.0, 4.4, -0.9, 1.1];
        let n = input.len();
        let got = dct_ii_orthonormal(&input);
        for k in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                sum += input[i]
                    * (std::f64::consts::PI / n as f64 * (i as f64 + 0.5) * k as f64).cos();
            }
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            assert_abs_diff_eq!(got[k], scale * sum, epsilon = 1e-12);
        }
    }

    #[test]
    fn mfcc_rejects_more_ceps_than_mels() {
        let frames = Array2::zeros((2, 64));
        assert!(mfcc_frames(&frames, 30, 20, 8000).is_err());
    }

    #[test]
    fn context_zero_is_identity() {
        let f = fm(ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(context_window(&f, 0).data, f.data);
    }

    #[test]
    fn context_replicates_edges() {
        let f = fm(ndarray::arr2(&[[1.0], [2.0], [3.0]]));
        let out = context_window(&f, 1);
        assert_eq!(
            out.data,
            ndarray::arr2(&[[1.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 3.0]])
        );
    }

    #[test]
    fn context_width_matches_eleven_frame_window() {
        let f = fm(Array2::zeros((4, 36)));
        assert_eq!(context_window(&f, 5).dim(), 36 * 11);
    }

    #[test]
    fn context_middle_columns_equal_input() {
        let f = fm(ndarray::arr2(&[
            [1.0, 2.0, 3.0],
            [4.0, 5.0, 6.0],
            [7.0, 8.0, 9.0],
            [10.0, 11.0, 12.0],
        ]));
        for r in 0..4usize {
            let out = context_window(&f, r);
            let mid = out.data.slice(s![.., r * 3..(r + 1) * 3]);
            assert_eq!(mid, f.data);
        }
    }

    #[test]
    fn bin_of_one_is_identity() {
        let f = fm(ndarray::arr2(&[[1.0, 3.0], [3.0, 5.0]]));
        assert_eq!(bin_features(&f, 1).unwrap().data, f.data);
    }

    #[test]
    fn bin_averages_with_partial_tail() {
        let f = fm(ndarray::arr2(&[[1.0, 3.0], [3.0, 5.0], [10.0, 10.0]]));
        let out = bin_features(&f, 2).unwrap();
        assert_eq!(out.data, ndarray::arr2(&[[2.0, 4.0], [10.0, 10.0]]));
        assert_abs_diff_eq!(out.frame_shift_ms, 20.0);
    }

    #[test]
    fn bin_eight_frames_by_four_gives_two_rows() {
        let f = fm(Array2::ones((8, 3)));
        assert_eq!(bin_features(&f, 4).unwrap().num_frames(), 2);
    }

    #[test]
    fn bin_rejects_zero() {
        let f = fm(Array2::ones((4, 2)));
        assert!(bin_features(&f, 0).is_err());
    }

    #[test]
    fn expand_repeats_and_truncates() {
        assert_eq!(
            expand_predictions(&[1.0, 2.0], 2, 3).unwrap(),
            vec![1.0, 1.0, 2.0]
        );
        assert_eq!(expand_predictions(&[7.0], 4, 4).unwrap(), vec![7.0; 4]);
        assert_eq!(expand_predictions(&[5.0], 1, 1).unwrap(), vec![5.0]);
    }

    #[test]
    fn expand_rejects_length_mismatch() {
        assert!(expand_predictions(&[1.0, 2.0, 3.0], 2, 3).is_err());
    }

    #[test]
    fn bin_then_expand_preserves_frame_count() {
        for t in [1usize, 5, 8, 13] {
            for n in [1usize, 2, 4, 7] {
                let f = fm(Array2::ones((t, 2)));
                let binned = bin_features(&f, n).unwrap();
                let preds: Vec<f64> = (0..binned.num_frames()).map(|i| i as f64).collect();
                let expanded = expand_predictions(&preds, n, t).unwrap();
                assert_eq!(expanded.len(), t);
            }
        }
    }

    #[test]
    fn bin_labels_majority_rule() {
        assert_eq!(bin_labels(&[1, 1, 0, 0], 2), vec![1, 0]);
        // Mean exactly 0.5 counts as positive.
        assert_eq!(bin_labels(&[1, 0], 2), vec![1]);
        assert_eq!(bin_labels(&[0, 0, 1], 2), vec![0, 1]);
    }

    #[test]
    fn features_csv_round_trip_by_eye() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let f = fm(ndarray::arr2(&[[1.5, -2.25], [0.0, 3.0]]));
        write_features_csv(&f, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1.5,-2.25\n0,3\n");
    }
}
