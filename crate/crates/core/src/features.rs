//! Log-mel front end and the `LMEL` feature file format.
//!
//! Feature file layout (little endian): magic `LMEL`, `u32` frames, `u32`
//! bins, then `frames * bins` `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"LMEL";
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_FRAME_LEN_S: f64 = 0.040;
pub const DEFAULT_HOP_S: f64 = 0.020;
pub const DEFAULT_N_MELS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// A `frames x bins` log-mel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClip {
    pub frames: usize,
    pub bins: usize,
    /// Row-major, one row per frame.
    pub values: Vec<f64>,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
}

impl FeatureClip {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::shape(format!(
                "{frames}x{bins} feature clip needs {} values, got {}",
                frames * bins,
                values.len()
            )));
        }
        Ok(FeatureClip {
            frames,
            bins,
            values,
            frame_hop_s: DEFAULT_HOP_S,
            frame_len_s: DEFAULT_FRAME_LEN_S,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hamming,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hamming if n == 1 => vec![1.0],
            Window::Hamming => (0..n)
                .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame_len_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub window: Window,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_len_s: DEFAULT_FRAME_LEN_S,
            hop_s: DEFAULT_HOP_S,
            n_mels: DEFAULT_N_MELS,
            window: Window::Hamming,
        }
    }
}

/// Magnitude spectrogram, one row per frame with `frame/2 + 1` bins.
///
/// Frames start every hop; the signal is zero-padded at the end so that
/// there are `ceil(len / hop)` frames (500 for 10 s at a 20 ms hop).
pub fn stft_magnitude(w: &Waveform, frame_len_s: f64, hop_s: f64, window: Window) -> Result<Vec<Vec<f64>>> {
    let sr = f64::from(w.sample_rate);
    let frame = (frame_len_s * sr).round() as usize;
    let hop = (hop_s * sr).round() as usize;
    if frame < 2 || !(hop_s > 0.0) || hop == 0 {
        return Err(Error::Input(format!(
            "frame of {frame} samples / hop of {hop} samples is unusable"
        )));
    }
    if w.samples.len() < frame {
        return Err(Error::InputTooShort {
            samples: w.samples.len(),
            frame,
        });
    }
    let n_frames = w.samples.len().div_ceil(hop);
    let coeffs = window.coefficients(frame);
    let fft = FftPlanner::new().plan_fft_forward(frame);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    let mut out = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = w.samples.get(start + i).copied().unwrap_or(0.0);
            *c = Complex::new(s * coeffs[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..frame / 2 + 1].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of `n_mels` filters equally spaced in mel between 0 and Nyquist.
pub fn mel_centers(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(f64::from(sample_rate) / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular mel filters over `n_fft_bins` linearly spaced bins from 0 Hz to Nyquist.
///
/// Returns `n_mels` rows of `n_fft_bins` weights.
pub fn mel_filterbank(n_fft_bins: usize, n_mels: usize, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    if n_mels == 0 || n_fft_bins < 2 || n_mels > n_fft_bins || sample_rate == 0 {
        return Err(Error::FilterbankDegenerate(format!(
            "{n_mels} mel filters over {n_fft_bins} FFT bins"
        )));
    }
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| nyquist * k as f64 / (n_fft_bins - 1) as f64;
    let mut bank = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row: Vec<f64> = (0..n_fft_bins)
            .map(|k| {
                let f = bin_hz(k);
                ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0)
            })
            .collect();
        if !row.iter().any(|&v| v > 0.0) {
            return Err(Error::FilterbankDegenerate(format!(
                "mel filter {m} ({mid:.1} Hz) covers no FFT bin"
            )));
        }
        bank.push(row);
    }
    Ok(bank)
}

/// `ln(mel_filterbank * |STFT|^2 + LOG_FLOOR)` with the default front end.
pub fn extract_logmel(w: &Waveform) -> Result<FeatureClip> {
    extract_logmel_with(w, &FeatureConfig::default())
}

pub fn extract_logmel_with(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureClip> {
    let spec = stft_magnitude(w, cfg.frame_len_s, cfg.hop_s, cfg.window)?;
    let n_fft_bins = spec[0].len();
    let bank = mel_filterbank(n_fft_bins, cfg.n_mels, w.sample_rate)?;
    let mut values = Vec::with_capacity(spec.len() * cfg.n_mels);
    for row in &spec {
        let power: Vec<f64> = row.iter().map(|m| m * m).collect();
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            values.push((e + LOG_FLOOR).ln());
        }
    }
    let mut clip = FeatureClip::new(spec.len(), cfg.n_mels, values)?;
    clip.frame_hop_s = cfg.hop_s;
    clip.frame_len_s = cfg.frame_len_s;
    Ok(clip)
}

pub fn encode_features(clip: &FeatureClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * clip.values.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(clip.frames as u32).to_le_bytes());
    out.extend_from_slice(&(clip.bins as u32).to_le_bytes());
    for &v in &clip.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureClip> {
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Format("missing LMEL header".into()));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = frames
        .checked_mul(bins)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("feature dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "header declares {frames}x{bins} values but payload holds {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureClip::new(frames, bins, values)
}

pub fn write_feature_file(path: &Path, clip: &FeatureClip) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_features(clip)).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: &Path) -> Result<FeatureClip> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// Reads 16-bit PCM mono WAV, scaling samples to [-1, 1).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono WAV; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fmt = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(fmt)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(fmt)?;
    }
    writer.finalize().map_err(fmt)
}
