use mtl_core::dataset::Dataset;
use mtl_core::features::encode_features;
use mtl_core::synthdata::{generate_dataset, DatasetSpec, FeatureSource};
use mtl_core::Error;

fn small_fast(clips: usize) -> DatasetSpec {
    DatasetSpec {
        clips_per_scene: clips,
        ..DatasetSpec::fast()
    }
}

#[test]
fn certain_priors_place_events_only_where_allowed() {
    let mut spec = small_fast(30);
    for (s, scene) in spec.scenes.iter_mut().enumerate() {
        scene.event_priors = vec![0.0; 6];
        if s == 0 {
            scene.event_priors[2] = 1.0;
        }
    }
    let data = generate_dataset(&spec, 1).unwrap();
    let m = data.n_events();
    for c in &data.clips {
        let frames_with_2 = (0..c.features.frames).filter(|t| c.events[t * m + 2] == 1).count();
        if c.scene == 0 {
            assert!(frames_with_2 >= 1);
        } else {
            assert_eq!(frames_with_2, 0);
        }
    }
}

#[test]
fn rolls_match_interval_bookkeeping() {
    let data = generate_dataset(&small_fast(40), 2).unwrap();
    let m = data.n_events();
    for c in &data.clips {
        // one interval per class at most, so per-class roll sums equal lengths
        for class in 0..m {
            let from_roll: usize = (0..c.features.frames).map(|t| c.events[t * m + class] as usize).sum();
            let from_intervals: usize = c
                .intervals
                .iter()
                .filter(|iv| iv.class == class)
                .map(|iv| iv.offset - iv.onset)
                .sum();
            assert_eq!(from_roll, from_intervals);
        }
        let total_roll: usize = c.events.iter().map(|&v| v as usize).sum();
        let total_len: usize = c.intervals.iter().map(|iv| iv.offset - iv.onset).sum();
        assert_eq!(total_roll, total_len);
    }
}

#[test]
fn same_seed_same_bytes() {
    let spec = small_fast(10);
    let a = generate_dataset(&spec, 7).unwrap();
    let b = generate_dataset(&spec, 7).unwrap();
    assert_eq!(a, b);
    let bytes = |d: &Dataset| d.clips.iter().flat_map(|c| encode_features(&c.features)).collect::<Vec<u8>>();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(a, generate_dataset(&spec, 8).unwrap());
}

#[test]
fn event_frequencies_match_priors() {
    let spec = small_fast(600);
    let data = generate_dataset(&spec, 3).unwrap();
    for (s, scene) in spec.scenes.iter().enumerate() {
        let clips: Vec<_> = data.clips.iter().filter(|c| c.scene == s).collect();
        let n = clips.len() as f64;
        for (e, &p) in scene.event_priors.iter().enumerate() {
            let hits = clips.iter().filter(|c| c.intervals.iter().any(|iv| iv.class == e)).count() as f64;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!(
                (hits / n - p).abs() <= 3.0 * sigma + 1e-12,
                "scene {s} event {e}: {} vs {p}",
                hits / n
            );
        }
    }
}

#[test]
fn centroid_classifier_confuses_the_shared_pair_most() {
    let data = generate_dataset(&DatasetSpec::fast(), 11).unwrap();
    let (train, test) = data.split();
    let bins = 16;
    let mean_feature = |i: usize| {
        let c = &data.clips[i].features;
        (0..bins)
            .map(|d| (0..c.frames).map(|t| c.values[t * bins + d]).sum::<f64>() / c.frames as f64)
            .collect::<Vec<f64>>()
    };
    let n = data.n_scenes();
    let mut centroids = vec![vec![0.0; bins]; n];
    let mut counts = vec![0.0; n];
    for &i in &train {
        let f = mean_feature(i);
        let s = data.clips[i].scene;
        counts[s] += 1.0;
        for (c, v) in centroids[s].iter_mut().zip(f) {
            *c += v;
        }
    }
    for (c, k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k);
    }
    let mut confusion = vec![vec![0usize; n]; n];
    for &i in &test {
        let f = mean_feature(i);
        let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let pred = (0..n).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
        confusion[data.clips[i].scene][pred] += 1;
    }
    let pair = |a: usize, b: usize| confusion[a][b] + confusion[b][a];
    let shared = pair(0, 1);
    assert!(shared > 0);
    for a in 0..n {
        for b in a + 1..n {
            if (a, b) != (0, 1) {
                assert!(shared > pair(a, b), "pair ({a},{b}) {} vs shared {shared}", pair(a, b));
            }
        }
    }
}

#[test]
fn dataset_directory_round_trip() {
    let spec = small_fast(5);
    let data = generate_dataset(&spec, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path(), &serde_json::to_value(&spec).unwrap()).unwrap();
    assert!(dir.path().join("labels.csv").exists());
    assert!(dir.path().join("features").join(format!("{}.lmel", data.clips[0].id)).exists());
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, data);
}

#[test]
fn malformed_labels_are_rejected() {
    let data = generate_dataset(&small_fast(2), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path(), &serde_json::json!({})).unwrap();
    let path = dir.path().join("labels.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let broken = text.replacen("\n", "\nbogus_clip,0,100,\"1,2\"\n", 1);
    std::fs::write(&path, broken).unwrap();
    assert!(matches!(Dataset::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn waveform_source_yields_same_geometry() {
    let spec = DatasetSpec {
        clips_per_scene: 2,
        source: FeatureSource::Waveform,
        noise_std: 0.0,
        ..DatasetSpec::fast()
    };
    let data = generate_dataset(&spec, 5).unwrap();
    let m = data.n_events();
    for c in &data.clips {
        assert_eq!((c.features.frames, c.features.bins), (100, 16));
        assert!(c.features.values.iter().all(|v| v.is_finite()));
        // frames carrying an event are louder in the event's peak band
        for iv in &c.intervals {
            let peak = spec.event_templates[iv.class]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let mid = (iv.onset + iv.offset) / 2;
            let quiet = (0..c.features.frames).find(|&t| (0..m).all(|e| c.events[t * m + e] == 0));
            if let Some(q) = quiet {
                assert!(c.features.values[mid * 16 + peak] > c.features.values[q * 16 + peak]);
            }
        }
    }
}
