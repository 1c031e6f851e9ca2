use std::path::{Path, PathBuf};

use mtl_core::experiment::*;
use mtl_core::plots::emit_plots;
use mtl_core::synthdata::{generate_dataset, DatasetSpec};
use mtl_core::training::ExperimentConfig;
use mtl_core::Error;

fn write_dataset(dir: &Path, clips: usize) -> PathBuf {
    let spec = DatasetSpec {
        clips_per_scene: clips,
        ..DatasetSpec::fast()
    };
    let data = generate_dataset(&spec, 9).unwrap();
    let path = dir.join("data");
    data.write(&path, &serde_json::to_value(&spec).unwrap()).unwrap();
    path
}

fn quick(name: &str, dataset: &Path, extra: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!(
        "name = \"{name}\"\narchitecture = \"toy\"\nepochs = 2\nbatch_size = 4\nseeds = [0, 1]\n{extra}"
    ))
    .unwrap();
    cfg.dataset = Some(dataset.to_path_buf());
    cfg
}

#[test]
fn run_directory_layout_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 12);
    let (run, report) = run_experiment(&quick("mtl", &data, ""), &dir.path().join("out"), 1).unwrap();
    for f in [
        "manifest.json",
        "config.json",
        "report.json",
        "report.csv",
        "confusion.csv",
        "per_event.csv",
        "seed_0/model.mtlw",
        "seed_1/network.json",
        "seed_1/losses.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,seed,status,scene_micro_f,scene_macro_f,event_micro_f,event_macro_f"
    );
    assert_eq!(lines.count(), 2);
    let conf = std::fs::read_to_string(run.join("confusion.csv")).unwrap();
    assert_eq!(conf.lines().next().unwrap(), "reference,city_center,residential_area,home,office");
    assert_eq!(report.failed_seeds(), 0);

    // macro F is the mean of the stored per-class values
    for s in &report.seeds {
        let m = s.metrics.as_ref().unwrap();
        let mean = m.per_event_f.iter().sum::<f64>() / m.per_event_f.len() as f64;
        assert!((m.event_macro_f.unwrap() - mean).abs() < 1e-9);
    }
    let mean_of_means = report.summary.per_event_f.iter().map(|m| m.mean).sum::<f64>() / 6.0;
    assert!((report.mean("event_macro_f").unwrap() - mean_of_means).abs() < 1e-9);

    let again = evaluate_run(&run).unwrap();
    assert_eq!(report_csv(&again), csv);
    assert_eq!(again, load_report(&run).unwrap());
}

#[test]
fn missing_dataset_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml("epochs = 1").unwrap();
    match run_experiment(&cfg, dir.path(), 1) {
        Err(Error::Config(msg)) => assert!(msg.contains("dataset"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn grid_defaults_to_nine_methods() {
    let grid = AblationGrid::from_toml("dataset = \"d\"\nseeds = [1]\n[defaults]\nepochs = 3\n", Some(Path::new("/x"))).unwrap();
    let names: Vec<&str> = grid.members.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names.len(), 9);
    for p in CONFUSION_PANELS {
        assert!(names.contains(&p));
    }
    assert!(grid.members.iter().all(|m| m.epochs == 3 && m.seeds == [1]));
    assert_eq!(grid.members[0].dataset.as_deref(), Some(Path::new("/x/d")));
}

#[test]
fn grid_file_errors() {
    for text in [
        "[[method]]\nname = \"a\"\n[[method]]\nname = \"a\"\n",
        "[[method]]\nname = \"a\"\nseeds = [1]\n",
        "[[method]]\nvariant = \"mtl\"\n",
        "[[method]]\nname = \"a\"\nfake_labels = \"scene\"\ngrl_position = \"S1\"\n",
    ] {
        assert!(matches!(AblationGrid::from_toml(text, None), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn grid_continues_past_a_failing_member() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 8);
    let text = format!(
        "dataset = {:?}\nseeds = [0]\n[defaults]\narchitecture = \"toy\"\nepochs = 1\nbatch_size = 4\n\
         [[method]]\nname = \"mtl\"\n\
         [[method]]\nname = \"broken\"\narchitecture = {{ trunk_channels = 2, trunk_freq_pools = [8, 4, 4], scene_channels = 2, scene_time_pool = 5, gru_units = 2, fc_units = 2, leaky_slope = 0.01 }}\n\
         [[method]]\nname = \"fake_event\"\nfake_labels = \"event\"\n",
        data.to_str().unwrap()
    );
    let grid = AblationGrid::from_toml(&text, None).unwrap();
    let out = dir.path().join("grid");
    let rows = run_grid(&grid, &out, 2).unwrap();
    let csv = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("mtl,ok,1,"));
    assert!(lines[2].starts_with("broken,partial,0,"), "{}", lines[2]);
    assert!(lines[3].starts_with("fake_event,ok,1,"));
    assert!(rows[1].report.as_ref().unwrap().seeds[0].error.is_some());

    let per_event = std::fs::read_to_string(out.join("per_event.csv")).unwrap();
    assert!(per_event.starts_with("method,car,footsteps,dishes,keyboard,bird,talking,macro_f\n"));
    for line in per_event.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        let mean = v[..6].iter().sum::<f64>() / 6.0;
        assert!((mean - v[6]).abs() < 1e-5, "{line}");
    }
    assert!(out.join("confusion_mtl.csv").exists());
    assert!(out.join("confusion_fake_event.csv").exists());
}

#[test]
fn plots_are_deterministic_with_one_bar_per_event() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 8);
    let (run, _) = run_experiment(&quick("p", &data, ""), &dir.path().join("out"), 1).unwrap();
    let first = emit_plots(&run).unwrap();
    assert_eq!(first.len(), 3);
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    emit_plots(&run).unwrap();
    let again: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(bytes, again);

    let bars = std::fs::read_to_string(run.join("per_event.svg")).unwrap();
    assert_eq!(bars.matches("class=\"bar\"").count(), 6);
    let conf = std::fs::read_to_string(run.join("confusion.svg")).unwrap();
    let pos = |s: &str| conf.find(&format!(">{s}<")).unwrap();
    assert!(pos("city_center") < pos("residential_area") && pos("home") < pos("office"));

    let (sed, _) = run_experiment(&quick("sed", &data, "variant = \"sed-only\""), &dir.path().join("out"), 1).unwrap();
    assert_eq!(emit_plots(&sed).unwrap().len(), 2);
    assert!(matches!(emit_plots(dir.path()), Err(Error::Input(_))));
}
