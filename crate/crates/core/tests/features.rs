use mtl_core::features::*;
use mtl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct O(n^2) DFT magnitude of one windowed frame, first n/2+1 bins.
fn naive_dft(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let cos: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let sin: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin()).collect();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &x) in frame.iter().enumerate() {
                let idx = (k * j) % n;
                re += x * cos[idx];
                im -= x * sin[idx];
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn naive_logmel(w: &Waveform, frame: usize, hop: usize, n_mels: usize) -> Vec<f64> {
    let win: Vec<f64> = (0..frame)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (frame - 1) as f64).cos())
        .collect();
    let bins = frame / 2 + 1;
    let nyq = f64::from(w.sample_rate) / 2.0;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| inv(mel(nyq) * i as f64 / (n_mels + 1) as f64)).collect();
    let n_frames = w.samples.len().div_ceil(hop);
    let mut out = Vec::new();
    for t in 0..n_frames {
        let seg: Vec<f64> = (0..frame)
            .map(|i| w.samples.get(t * hop + i).copied().unwrap_or(0.0) * win[i])
            .collect();
        let mag = naive_dft(&seg);
        for m in 0..n_mels {
            let mut e = 0.0;
            for (k, a) in mag.iter().enumerate() {
                let f = nyq * k as f64 / (bins - 1) as f64;
                let up = (f - edges[m]) / (edges[m + 1] - edges[m]);
                let down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
                e += up.min(down).max(0.0) * a * a;
            }
            out.push((e + 1e-10).ln());
        }
    }
    out
}

#[test]
fn dc_signal_concentrates_in_bin_zero() {
    let w = Waveform::new(vec![1.0; 4000], 8000).unwrap();
    let spec = stft_magnitude(&w, 0.01, 0.005, Window::Rectangular).unwrap();
    // Full frames only: the padded tail is not pure DC.
    for row in &spec[..spec.len() - 2] {
        assert!((row[0] - 80.0).abs() < 1e-9);
        assert!(row[1..].iter().all(|&v| v < 1e-9));
    }
}

#[test]
fn zero_signal_gives_zero_magnitude() {
    let w = Waveform::new(vec![0.0; 1000], 8000).unwrap();
    let spec = stft_magnitude(&w, 0.01, 0.005, Window::Hamming).unwrap();
    assert!(spec.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn bin_centered_sine_peaks_at_its_bin() {
    let (sr, frame, k) = (8000u32, 80usize, 7usize);
    let f = k as f64 * f64::from(sr) / frame as f64;
    let samples: Vec<f64> = (0..800)
        .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / f64::from(sr)).sin())
        .collect();
    let w = Waveform::new(samples.clone(), sr).unwrap();
    let spec = stft_magnitude(&w, 0.01, 0.005, Window::Rectangular).unwrap();
    let argmax = |r: &[f64]| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    for (t, row) in spec.iter().enumerate().take(spec.len() - 2) {
        let oracle = naive_dft(&samples[t * 40..t * 40 + frame]);
        assert_eq!(argmax(row), k);
        assert_eq!(argmax(&oracle), k);
        for (a, b) in row.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn frame_count_uses_end_padding() {
    let w = Waveform::new(vec![0.1; 441_000], 44_100).unwrap();
    let spec = stft_magnitude(&w, 0.04, 0.02, Window::Hamming).unwrap();
    assert_eq!(spec.len(), 500);
    assert_eq!(spec[0].len(), 1764 / 2 + 1);
}

#[test]
fn single_mel_filter_spans_band() {
    let bank = mel_filterbank(257, 1, 16000).unwrap();
    assert_eq!(bank.len(), 1);
    assert!(bank[0].iter().sum::<f64>() > 0.0);
    assert!(bank[0][0] == 0.0 && bank[0][256] < 1e-9);
}

#[test]
fn default_filterbank_has_increasing_centers() {
    let bank = mel_filterbank(883, 64, 44_100).unwrap();
    assert_eq!(bank.len(), 64);
    for row in &bank {
        assert!(row.iter().all(|&v| v >= 0.0) && row.iter().any(|&v| v > 0.0));
    }
    let centers = mel_centers(64, 44_100);
    assert!(centers.windows(2).all(|p| p[0] < p[1]));
}

#[test]
fn centers_match_mel_formula() {
    let sr = 44_100u32;
    let top = 2595.0 * (1.0 + 22_050.0 / 700.0_f64).log10();
    for (i, c) in mel_centers(64, sr).iter().enumerate() {
        let m = top * (i + 1) as f64 / 65.0;
        let want = 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        assert!((c - want).abs() < 1e-9 * want.max(1.0));
        assert!((hz_to_mel(*c) - m).abs() < 1e-9);
    }
    // each filter peaks at the bin nearest its center
    let bank = mel_filterbank(883, 64, sr).unwrap();
    let bin_hz = 22_050.0 / 882.0;
    for (row, c) in bank.iter().zip(mel_centers(64, sr)) {
        let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((peak as f64 * bin_hz - c).abs() <= bin_hz);
    }
}

#[test]
fn silence_gives_log_floor() {
    let w = Waveform::new(vec![0.0; 441_000], 44_100).unwrap();
    let clip = extract_logmel(&w).unwrap();
    assert_eq!((clip.frames, clip.bins), (500, 64));
    assert!(clip.values.iter().all(|&v| v == (1e-10f64).ln()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("silence.lmel");
    write_feature_file(&path, &clip).unwrap();
    let back = load_feature_file(&path).unwrap();
    let floor32 = f64::from((1e-10f64).ln() as f32);
    assert!(back.values.iter().all(|&v| v == floor32));
}

#[test]
fn white_noise_matches_naive_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<f64> = (0..16_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let w = Waveform::new(samples, 16_000).unwrap();
    let clip = extract_logmel_with(
        &w,
        &FeatureConfig {
            n_mels: 40,
            ..FeatureConfig::default()
        },
    )
    .unwrap();
    assert_eq!((clip.frames, clip.bins), (50, 40));
    let oracle = naive_logmel(&w, 640, 320, 40);
    for (a, b) in clip.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(&clip.values) - mean(&oracle)).abs() < 1e-10);
    // column means of white noise vary smoothly between neighbouring bands
    let col_mean = |m: usize| (0..49).map(|t| clip.values[t * 40 + m]).sum::<f64>() / 49.0;
    for m in 1..40 {
        assert!((col_mean(m) - col_mean(m - 1)).abs() < 3.0);
    }
}

#[test]
fn feature_file_round_trip_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values: Vec<f64> = (0..500 * 64).map(|_| f64::from(rng.random::<f32>())).collect();
    let clip = FeatureClip::new(500, 64, values).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.lmel");
    write_feature_file(&path, &clip).unwrap();
    let back = load_feature_file(&path).unwrap();
    assert_eq!(back.values, clip.values);
    assert_eq!(encode_features(&back), std::fs::read(&path).unwrap());

    let mut bytes = encode_features(&FeatureClip::new(2, 63, vec![0.0; 126]).unwrap());
    bytes[8..12].copy_from_slice(&64u32.to_le_bytes());
    assert!(matches!(decode_features(&bytes), Err(Error::Format(_))));
    assert!(matches!(decode_features(b"LMEX\0\0\0\0\0\0\0\0"), Err(Error::Format(_))));
}

#[test]
fn wav_round_trip() {
    let samples: Vec<f64> = (0..8000).map(|i| ((i % 100) as f64 / 100.0 - 0.5) * 0.8).collect();
    let w = Waveform::new(samples, 8000).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    write_wav(&path, &w).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, 8000);
    assert!(w.samples.iter().zip(&back.samples).all(|(a, b)| (a - b).abs() < 1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_never_decreases_logmel(seed in any::<u64>(), c in 1.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples.clone(), 8000).unwrap();
        let louder = Waveform::new(samples.iter().map(|s| s * c).collect(), 8000).unwrap();
        let a = extract_logmel_with(&w, &FeatureConfig { n_mels: 16, ..FeatureConfig::default() }).unwrap();
        let b = extract_logmel_with(&louder, &FeatureConfig { n_mels: 16, ..FeatureConfig::default() }).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn extraction_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples, 8000).unwrap();
        let cfg = FeatureConfig { n_mels: 16, ..FeatureConfig::default() };
        let a = encode_features(&extract_logmel_with(&w, &cfg).unwrap());
        let b = encode_features(&extract_logmel_with(&w, &cfg).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ten_second_clips_are_500_frames(sr in prop::sample::select(vec![16_000u32, 22_050, 44_100, 48_000])) {
        let w = Waveform::new(vec![0.01; sr as usize * 10], sr).unwrap();
        let spec = stft_magnitude(&w, 0.04, 0.02, Window::Hamming).unwrap();
        prop_assert_eq!(spec.len(), 500);
    }
}
