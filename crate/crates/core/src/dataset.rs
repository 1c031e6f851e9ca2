//! Labeled clips and the on-disk dataset layout.
//!
//! A dataset directory holds `features/<clip_id>.lmel`, `labels.csv` and
//! `spec.json`. `labels.csv` has the columns `clip_id, scene_id, n_frames,
//! events`, where `events` is a space-separated list of
//! `class,onset_frame,offset_frame` triples with exclusive offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{load_feature_file, write_feature_file, FeatureClip};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventInterval {
    pub class: usize,
    pub onset: usize,
    /// Exclusive.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub features: FeatureClip,
    pub scene: usize,
    /// `[frames, n_events]` binary roll.
    pub events: Vec<u8>,
    pub intervals: Vec<EventInterval>,
}

impl LabeledClip {
    /// Builds a clip whose roll is the union of `intervals`.
    pub fn from_intervals(
        id: String,
        features: FeatureClip,
        scene: usize,
        n_events: usize,
        intervals: Vec<EventInterval>,
    ) -> Result<Self> {
        let frames = features.frames;
        let mut events = vec![0u8; frames * n_events];
        for iv in &intervals {
            if iv.class >= n_events || iv.onset >= iv.offset || iv.offset > frames {
                return Err(Error::Label(format!(
                    "clip {id}: interval {iv:?} invalid for {frames} frames and {n_events} events"
                )));
            }
            for t in iv.onset..iv.offset {
                events[t * n_events + iv.class] = 1;
            }
        }
        Ok(LabeledClip {
            id,
            features,
            scene,
            events,
            intervals,
        })
    }

    pub fn scene_one_hot(&self, n_scenes: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_scenes];
        v[self.scene] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene_names: Vec<String>,
    pub event_names: Vec<String>,
    pub clips: Vec<LabeledClip>,
}

#[derive(Serialize, Deserialize)]
struct SpecNames {
    scene_names: Vec<String>,
    event_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    clip_id: String,
    scene_id: usize,
    n_frames: usize,
    events: String,
}

impl Dataset {
    pub fn n_scenes(&self) -> usize {
        self.scene_names.len()
    }

    pub fn n_events(&self) -> usize {
        self.event_names.len()
    }

    /// `(frames, bins)` shared by every clip.
    pub fn geometry(&self) -> Result<(usize, usize)> {
        let first = self.clips.first().ok_or_else(|| Error::Input("dataset is empty".into()))?;
        let g = (first.features.frames, first.features.bins);
        if let Some(c) = self.clips.iter().find(|c| (c.features.frames, c.features.bins) != g) {
            return Err(Error::shape(format!("clip {} differs from geometry {g:?}", c.id)));
        }
        Ok(g)
    }

    /// Train and held-out indices: every fourth clip of each scene is held out.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut seen = vec![0usize; self.n_scenes()];
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, c) in self.clips.iter().enumerate() {
            if seen[c.scene] % 4 == 3 {
                test.push(i);
            } else {
                train.push(i);
            }
            seen[c.scene] += 1;
        }
        (train, test)
    }

    /// Writes features and labels; `spec_json` is stored verbatim as `spec.json`.
    pub fn write(&self, dir: &Path, spec_json: &serde_json::Value) -> Result<()> {
        let feat_dir = dir.join("features");
        std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
        for c in &self.clips {
            write_feature_file(&feat_dir.join(format!("{}.lmel", c.id)), &c.features)?;
        }
        let labels = dir.join("labels.csv");
        let mut w = csv::Writer::from_path(&labels).map_err(|e| Error::Format(format!("{}: {e}", labels.display())))?;
        for c in &self.clips {
            let events = c
                .intervals
                .iter()
                .map(|iv| format!("{},{},{}", iv.class, iv.onset, iv.offset))
                .collect::<Vec<_>>()
                .join(" ");
            w.serialize(LabelRow {
                clip_id: c.id.clone(),
                scene_id: c.scene,
                n_frames: c.features.frames,
                events,
            })
            .map_err(|e| Error::Format(format!("{}: {e}", labels.display())))?;
        }
        w.flush().map_err(|e| Error::io(&labels, e))?;

        let mut spec = spec_json.clone();
        if let Some(obj) = spec.as_object_mut() {
            obj.insert("scene_names".into(), serde_json::json!(self.scene_names));
            obj.insert("event_names".into(), serde_json::json!(self.event_names));
        }
        let path = dir.join("spec.json");
        let text = serde_json::to_string_pretty(&spec).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec_path = dir.join("spec.json");
        let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let names: SpecNames =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", spec_path.display())))?;
        let labels = dir.join("labels.csv");
        let mut r = csv::Reader::from_path(&labels).map_err(|e| Error::Format(format!("{}: {e}", labels.display())))?;
        let mut clips = Vec::new();
        for (line, row) in r.deserialize::<LabelRow>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("{}: {e}", labels.display())))?;
            let bad = |what: &str| Error::Format(format!("{}:{}: {what}", labels.display(), line + 2));
            if row.scene_id >= names.scene_names.len() {
                return Err(bad("scene_id out of range"));
            }
            let mut intervals = Vec::new();
            for triple in row.events.split_whitespace() {
                let parts: Vec<usize> = triple
                    .split(',')
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("malformed event triple"))?;
                let [class, onset, offset] = parts[..] else {
                    return Err(bad("event triple needs three fields"));
                };
                intervals.push(EventInterval { class, onset, offset });
            }
            let features = load_feature_file(&dir.join("features").join(format!("{}.lmel", row.clip_id)))?;
            if features.frames != row.n_frames {
                return Err(bad("n_frames disagrees with the feature file"));
            }
            clips.push(LabeledClip::from_intervals(
                row.clip_id,
                features,
                row.scene_id,
                names.event_names.len(),
                intervals,
            )?);
        }
        Ok(Dataset {
            scene_names: names.scene_names,
            event_names: names.event_names,
            clips,
        })
    }
}

/// Stacks clips into a `[N, 1, T, D]` network input.
pub fn stack_features(clips: &[&LabeledClip]) -> Result<Tensor> {
    let first = clips.first().ok_or_else(|| Error::Input("empty batch".into()))?;
    let (t, d) = (first.features.frames, first.features.bins);
    let mut data = Vec::with_capacity(clips.len() * t * d);
    for c in clips {
        if (c.features.frames, c.features.bins) != (t, d) {
            return Err(Error::shape(format!("clip {} is not {t}x{d}", c.id)));
        }
        data.extend_from_slice(&c.features.values);
    }
    Tensor::new(vec![clips.len(), 1, t, d], data)
}
