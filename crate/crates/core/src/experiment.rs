//! Experiment runs, ablation grids and their reports.
//!
//! A run directory holds `manifest.json`, `config.json`, `report.json`,
//! `report.csv`, `confusion.csv`, `per_event.csv` and one `seed_<s>/`
//! directory per seed with `model.mtlw`, `network.json` and `losses.csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stack_features, Dataset, LabeledClip};
use crate::error::{Error, Result};
use crate::eval::{binarize_events, csv_cell, mean_std, MetricReport, REPORT_COLUMNS};
use crate::model::{GrlPosition, LayerGraph, Variant};
use crate::training::{run_training, EpochLoss, ExperimentConfig, FakeLabels};

const EVAL_BATCH: usize = 32;

/// Scores `graph` on the clips at `idx` against their true labels.
pub fn evaluate(graph: &mut LayerGraph, data: &Dataset, idx: &[usize], threshold: f64) -> Result<MetricReport> {
    let cfg = graph.config().clone();
    let mut scene_pred = Vec::new();
    let mut event_pred = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let clips: Vec<&LabeledClip> = chunk.iter().map(|&i| &data.clips[i]).collect();
        let p = graph.predict(&stack_features(&clips)?)?;
        if let Some(s) = p.scene_probs {
            for row in s.data().chunks(cfg.n_scenes) {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                scene_pred.push(best);
            }
        }
        if let Some(e) = p.event_probs {
            event_pred.extend(binarize_events(e.data(), threshold));
        }
    }
    let scene_ref: Vec<usize> = idx.iter().map(|&i| data.clips[i].scene).collect();
    let event_ref: Vec<u8> = idx.iter().flat_map(|&i| data.clips[i].events.iter().copied()).collect();
    MetricReport::from_predictions(
        cfg.variant.has_scene().then_some((&scene_pred[..], &scene_ref[..], cfg.n_scenes)),
        cfg.variant.has_event().then_some((&event_pred[..], &event_ref[..], cfg.n_events)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
    pub losses: Vec<EpochLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Keyed by [`REPORT_COLUMNS`].
    pub headline: BTreeMap<String, MeanStd>,
    pub per_event_f: Vec<MeanStd>,
    pub confusion: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub scene_names: Vec<String>,
    pub event_names: Vec<String>,
    pub seeds: Vec<SeedReport>,
    pub summary: Summary,
}

impl RunReport {
    pub fn failed_seeds(&self) -> usize {
        self.seeds.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn mean(&self, column: &str) -> Option<f64> {
        self.summary.headline.get(column).map(|m| m.mean)
    }
}

fn summarize(seeds: &[SeedReport]) -> Summary {
    let ok: Vec<&MetricReport> = seeds.iter().filter_map(|s| s.metrics.as_ref()).collect();
    let mut headline = BTreeMap::new();
    for (c, col) in REPORT_COLUMNS.iter().enumerate() {
        let vals: Vec<f64> = ok.iter().filter_map(|m| m.headline()[c]).collect();
        if let Some((mean, std)) = mean_std(&vals) {
            headline.insert(col.to_string(), MeanStd { mean, std });
        }
    }
    let m = ok.first().map_or(0, |r| r.per_event_f.len());
    let per_event_f = (0..m)
        .map(|e| {
            let vals: Vec<f64> = ok.iter().map(|r| r.per_event_f[e]).collect();
            let (mean, std) = mean_std(&vals).unwrap_or((0.0, 0.0));
            MeanStd { mean, std }
        })
        .collect();
    let n = ok.first().map_or(0, |r| r.confusion.len());
    let confusion = (0..n)
        .map(|i| {
            let rows: Option<Vec<&Vec<f64>>> = ok.iter().map(|r| r.confusion[i].as_ref()).collect();
            rows.map(|rows| {
                (0..n)
                    .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                    .collect()
            })
        })
        .collect();
    Summary {
        headline,
        per_event_f,
        confusion,
    }
}

pub fn report_csv(report: &RunReport) -> String {
    let mut out = format!("method,seed,status,{}\n", REPORT_COLUMNS.join(","));
    for s in &report.seeds {
        let status = if s.error.is_some() { "failed" } else { "ok" };
        let cells: Vec<String> = match &s.metrics {
            Some(m) => m.headline().iter().map(|&v| csv_cell(v)).collect(),
            None => vec![String::new(); REPORT_COLUMNS.len()],
        };
        out.push_str(&format!("{},{},{status},{}\n", report.name, s.seed, cells.join(",")));
    }
    out
}

pub fn confusion_csv(scene_names: &[String], confusion: &[Option<Vec<f64>>]) -> String {
    let mut out = format!("reference,{}\n", scene_names.join(","));
    for (name, row) in scene_names.iter().zip(confusion) {
        let cells: Vec<String> = match row {
            Some(r) => r.iter().map(|v| format!("{v:.2}")).collect(),
            None => vec!["undefined".into(); scene_names.len()],
        };
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    out
}

fn per_event_csv(report: &RunReport) -> String {
    let mut out = String::from("event,f_mean,f_std\n");
    for (name, f) in report.event_names.iter().zip(&report.summary.per_event_f) {
        out.push_str(&format!("{name},{:.6},{:.6}\n", f.mean, f.std));
    }
    out
}

fn losses_csv(losses: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,total,scene,event\n");
    for l in losses {
        out.push_str(&format!("{},{:.9e},{:.9e},{:.9e}\n", l.epoch, l.total, l.scene, l.event));
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub dataset: PathBuf,
    pub seeds: Vec<u64>,
    pub held_out_clips: usize,
    pub files: Vec<String>,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config(format!("config {:?}: missing key `dataset`", cfg.name)))?;
    if !path.join("labels.csv").exists() {
        return Err(Error::Config(format!(
            "`dataset` = {} is not a dataset directory (no labels.csv)",
            path.display()
        )));
    }
    Dataset::load(path)
}

fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

/// Trains every seed of `cfg`, evaluates on the held-out split and writes the
/// run directory `out_root/<name>`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path, workers: usize) -> Result<(PathBuf, RunReport)> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    run_experiment_on(cfg, &data, out_root, workers)
}

/// Like [`run_experiment`] with an already loaded dataset.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    data: &Dataset,
    out_root: &Path,
    workers: usize,
) -> Result<(PathBuf, RunReport)> {
    let name = if cfg.name.is_empty() { "run" } else { &cfg.name };
    let run_dir = out_root.join(name);
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let (train, test) = data.split();
    if test.is_empty() {
        return Err(Error::Input("held-out split is empty; need at least 4 clips per scene".into()));
    }
    let outcomes = run_training(cfg, data, &train, workers)?;
    let mut files = vec!["config.json".to_string()];
    let mut seeds = Vec::new();
    for (seed, outcome) in outcomes {
        let rep = match outcome {
            Ok(mut run) => {
                let dir = seed_dir(&run_dir, seed);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                run.graph.save(&dir.join("model.mtlw"), &dir.join("network.json"))?;
                write(&dir.join("losses.csv"), &losses_csv(&run.losses))?;
                for f in ["model.mtlw", "network.json", "losses.csv"] {
                    files.push(format!("seed_{seed}/{f}"));
                }
                SeedReport {
                    seed,
                    metrics: Some(evaluate(&mut run.graph, data, &test, cfg.threshold)?),
                    error: None,
                    losses: run.losses,
                }
            }
            Err(e) => SeedReport {
                seed,
                metrics: None,
                error: Some(e.to_string()),
                losses: Vec::new(),
            },
        };
        seeds.push(rep);
    }
    let report = RunReport {
        name: name.to_string(),
        scene_names: data.scene_names.clone(),
        event_names: data.event_names.clone(),
        summary: summarize(&seeds),
        seeds,
    };
    write(&run_dir.join("config.json"), &to_json(cfg)?)?;
    write(&run_dir.join("report.json"), &to_json(&report)?)?;
    write(&run_dir.join("report.csv"), &report_csv(&report))?;
    write(&run_dir.join("confusion.csv"), &confusion_csv(&report.scene_names, &report.summary.confusion))?;
    write(&run_dir.join("per_event.csv"), &per_event_csv(&report))?;
    files.extend(["report.json", "report.csv", "confusion.csv", "per_event.csv"].map(String::from));
    let manifest = RunManifest {
        name: report.name.clone(),
        dataset: cfg.dataset.clone().unwrap_or_default(),
        seeds: cfg.seeds.clone(),
        held_out_clips: test.len(),
        files,
    };
    write(&run_dir.join("manifest.json"), &to_json(&manifest)?)?;
    Ok((run_dir, report))
}

/// Recomputes the report of a finished run from its stored checkpoints.
pub fn evaluate_run(run_dir: &Path) -> Result<RunReport> {
    let cfg: ExperimentConfig = read_json(&run_dir.join("config.json"))?;
    let old: RunReport = read_json(&run_dir.join("report.json"))?;
    let data = load_dataset(&cfg)?;
    let (_, test) = data.split();
    let mut seeds = Vec::new();
    for s in &old.seeds {
        if s.error.is_some() {
            seeds.push(s.clone());
            continue;
        }
        let dir = seed_dir(run_dir, s.seed);
        let mut graph = LayerGraph::load(&dir.join("model.mtlw"), &dir.join("network.json"))?;
        seeds.push(SeedReport {
            metrics: Some(evaluate(&mut graph, &data, &test, cfg.threshold)?),
            ..s.clone()
        });
    }
    Ok(RunReport {
        summary: summarize(&seeds),
        seeds,
        ..old
    })
}

/// Ablation grid file: shared `dataset` and `seeds`, shared `[defaults]`
/// and one `[[method]]` table per member. Without any `[[method]]` the
/// nine standard methods are used.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    dataset: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    defaults: toml::Table,
    #[serde(default)]
    method: Vec<toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub members: Vec<ExperimentConfig>,
}

/// Member names whose confusion matrices are exported as figure panels.
pub const CONFUSION_PANELS: [&str; 4] = ["asc_only", "mtl", "grl_e1", "fake_event"];

pub fn standard_methods() -> Vec<(&'static str, Variant, Option<GrlPosition>, FakeLabels)> {
    use FakeLabels as F;
    use GrlPosition as P;
    vec![
        ("asc_only", Variant::AscOnly, None, F::None),
        ("sed_only", Variant::SedOnly, None, F::None),
        ("mtl", Variant::Mtl, None, F::None),
        ("grl_s1", Variant::Mtl, Some(P::S1), F::None),
        ("grl_s2", Variant::Mtl, Some(P::S2), F::None),
        ("fake_scene", Variant::Mtl, None, F::Scene),
        ("grl_e1", Variant::Mtl, Some(P::E1), F::None),
        ("grl_e2", Variant::Mtl, Some(P::E2), F::None),
        ("fake_event", Variant::Mtl, None, F::Event),
    ]
}

impl AblationGrid {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: GridFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut methods = file.method;
        if methods.is_empty() {
            for (name, variant, grl, fake) in standard_methods() {
                let mut t = toml::Table::new();
                t.insert("name".into(), name.into());
                t.insert("variant".into(), variant.to_string().into());
                if let Some(p) = grl {
                    t.insert("grl_position".into(), p.to_string().into());
                }
                let fake = match fake {
                    FakeLabels::None => "none",
                    FakeLabels::Scene => "scene",
                    FakeLabels::Event => "event",
                };
                t.insert("fake_labels".into(), fake.into());
                methods.push(t);
            }
        }
        let mut members = Vec::new();
        for (i, m) in methods.into_iter().enumerate() {
            for shared in ["dataset", "seeds"] {
                if m.contains_key(shared) || file.defaults.contains_key(shared) {
                    return Err(Error::Config(format!(
                        "method {}: `{shared}` must be set once at the top of the grid file",
                        i + 1
                    )));
                }
            }
            let mut t = file.defaults.clone();
            t.extend(m);
            let mut cfg: ExperimentConfig = t
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("method {}: {e}", i + 1)))?;
            cfg.dataset = file.dataset.clone().map(|d| match base_dir {
                Some(b) if d.is_relative() => b.join(d),
                _ => d,
            });
            if let Some(s) = &file.seeds {
                cfg.seeds = s.clone();
            }
            if cfg.name.is_empty() {
                return Err(Error::Config(format!("method {} has no name", i + 1)));
            }
            cfg.validate()
                .map_err(|e| Error::Config(format!("method {}: {e}", cfg.name)))?;
            members.push(cfg);
        }
        let mut names: Vec<&str> = members.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("method name {:?} is used twice", w[0])));
        }
        Ok(AblationGrid { members })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub name: String,
    pub report: std::result::Result<RunReport, String>,
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut header = vec!["method".to_string(), "status".into(), "seeds_ok".into()];
    for c in REPORT_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    header.push("error".into());
    let mut out = header.join(",") + "\n";
    for row in rows {
        let mut cells = vec![row.name.clone()];
        match &row.report {
            Ok(r) => {
                let failed = r.failed_seeds();
                cells.push(if failed == 0 { "ok".into() } else { "partial".into() });
                cells.push((r.seeds.len() - failed).to_string());
                for c in REPORT_COLUMNS {
                    let m = r.summary.headline.get(c);
                    cells.push(csv_cell(m.map(|m| m.mean)));
                    cells.push(csv_cell(m.map(|m| m.std)));
                }
                let errs: Vec<&str> = r.seeds.iter().filter_map(|s| s.error.as_deref()).collect();
                cells.push(csv_quote(&errs.join("; ")));
            }
            Err(e) => {
                cells.push("failed".into());
                cells.push("0".into());
                cells.extend(std::iter::repeat_n(String::new(), 2 * REPORT_COLUMNS.len()));
                cells.push(csv_quote(e));
            }
        }
        out.push_str(&(cells.join(",") + "\n"));
    }
    out
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Methods as rows, events as columns, plus the macro mean of the row.
pub fn grid_per_event_csv(rows: &[GridRow]) -> Option<String> {
    let events = rows.iter().find_map(|r| {
        r.report
            .as_ref()
            .ok()
            .filter(|r| !r.summary.per_event_f.is_empty())
            .map(|r| r.event_names.clone())
    })?;
    let mut out = format!("method,{},macro_f\n", events.join(","));
    for row in rows {
        let Ok(r) = &row.report else { continue };
        if r.summary.per_event_f.is_empty() {
            continue;
        }
        let means: Vec<f64> = r.summary.per_event_f.iter().map(|m| m.mean).collect();
        let macro_f = means.iter().sum::<f64>() / means.len() as f64;
        let cells: Vec<String> = means.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("{},{},{macro_f:.6}\n", row.name, cells.join(",")));
    }
    Some(out)
}

/// Runs every member into `out_dir/<name>`, at most `workers` members at a
/// time. A failing member is recorded in its row and the grid continues.
pub fn run_grid(grid: &AblationGrid, out_dir: &Path, workers: usize) -> Result<Vec<GridRow>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let first = grid
        .members
        .first()
        .ok_or_else(|| Error::Config("grid has no methods".into()))?;
    let data = load_dataset(first)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let rows: Vec<GridRow> = pool.install(|| {
        grid.members
            .par_iter()
            .map(|cfg| GridRow {
                name: cfg.name.clone(),
                report: run_experiment_on(cfg, &data, out_dir, 1)
                    .map(|(_, r)| r)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });
    write(&out_dir.join("grid.csv"), &grid_csv(&rows))?;
    if let Some(text) = grid_per_event_csv(&rows) {
        write(&out_dir.join("per_event.csv"), &text)?;
    }
    for row in &rows {
        if let (true, Ok(r)) = (CONFUSION_PANELS.contains(&row.name.as_str()), &row.report) {
            write(
                &out_dir.join(format!("confusion_{}.csv", row.name)),
                &confusion_csv(&r.scene_names, &r.summary.confusion),
            )?;
        }
    }
    let manifest = serde_json::json!({
        "methods": rows.iter().map(|r| &r.name).collect::<Vec<_>>(),
        "dataset": first.dataset,
        "seeds": first.seeds,
    });
    write(&out_dir.join("manifest.json"), &to_json(&manifest)?)?;
    Ok(rows)
}

pub fn load_report(run_dir: &Path) -> Result<RunReport> {
    read_json(&run_dir.join("report.json"))
}
