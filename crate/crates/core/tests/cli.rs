use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use enf_cascade::grid::GridLabel;
use enf_cascade::synth::SynthCorpusSpec;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_enf-cascade"));
    c.env_remove("ENF_CASCADE_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_spec(dir: &Path) -> PathBuf {
    let mut spec = SynthCorpusSpec::default_panel();
    spec.duration_s = 200.0;
    spec.files_per_grid = 2;
    spec.profiles.retain(|p| [GridLabel::A, GridLabel::C].contains(&p.label));
    for p in &mut spec.profiles {
        p.audio = false;
    }
    let path = dir.join("spec.toml");
    std::fs::write(&path, spec.to_toml_string()).unwrap();
    path
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

/// A synthesised two-grid corpus with a trained model, shared by the tests.
fn workspace() -> &'static Workspace {
    static CELL: OnceLock<Workspace> = OnceLock::new();
    CELL.get_or_init(|| {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        let spec = small_spec(ws.dir.path());
        let out = run(&["synth", "--spec", spec.to_str().unwrap(), "--out", &ws.path("corpus")]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let out = run(&[
            "train",
            "--manifest",
            &ws.path("corpus/manifest.csv"),
            "--out",
            &ws.path("model.enfc"),
            "--features",
            "table3",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        ws
    })
}

fn corpus_files(ws: &Workspace) -> Vec<String> {
    let mut files: Vec<String> = std::fs::read_dir(ws.path("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .filter(|p| p.ends_with(".wav"))
        .collect();
    files.sort();
    files
}

#[test]
fn classify_prints_one_report_per_input_in_order() {
    let ws = workspace();
    let files = corpus_files(ws);
    assert_eq!(files.len(), 4);
    let mut args = vec!["--jobs", "2", "classify", "--model"];
    let model = ws.path("model.enfc");
    args.push(&model);
    for f in files.iter().rev() {
        args.push(f);
    }
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let results = doc["results"].as_array().unwrap();
    let inputs: Vec<&str> = results.iter().map(|r| r["input"].as_str().unwrap()).collect();
    let expected: Vec<&str> = files.iter().rev().map(String::as_str).collect();
    assert_eq!(inputs, expected);
    for r in results {
        let report = &r["report"];
        let label = report["final_label"].as_str().unwrap();
        assert!(report["svm"]["shortlist"].as_array().unwrap().iter().any(|g| g == label));
    }
}

#[test]
fn classify_is_partial_when_an_input_is_missing() {
    let ws = workspace();
    let files = corpus_files(ws);
    let out = run(&["classify", "--model", &ws.path("model.enfc"), &files[0], &ws.path("nope.wav")]);
    assert_eq!(code(&out), 1);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["results"][0]["report"].is_object());
    assert!(doc["results"][1]["error"].is_string());
}

#[test]
fn model_records_feature_mode() {
    let ws = workspace();
    let model = enf_cascade::CascadeModel::load(ws.path("model.enfc")).unwrap();
    assert_eq!(
        model.config.feature_mode,
        enf_cascade::config::FeatureMode::Selected
    );
}

#[test]
fn evaluate_reports_accuracy() {
    let ws = workspace();
    let json = ws.path("eval.json");
    let out = run(&["evaluate", "--model", &ws.path("model.enfc"), "--manifest", &ws.path("corpus/manifest.csv"), "--json", &json]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let acc = doc["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn evaluate_rejects_empty_manifest() {
    let ws = workspace();
    let empty = ws.path("empty.csv");
    std::fs::write(&empty, "file,grid,type,nominal,seed\n").unwrap();
    let out = run(&["evaluate", "--model", &ws.path("model.enfc"), "--manifest", &empty]);
    assert_eq!(code(&out), 2);
}

#[test]
fn plots_write_svg_and_dump() {
    let ws = workspace();
    let input = corpus_files(ws).remove(0);
    for kind in ["enf", "spectrogram", "poles"] {
        let svg = ws.path(&format!("{kind}.svg"));
        let out = run(&["plot", "--kind", kind, "--input", &input, "--model", &ws.path("model.enfc"), "--out", &svg]);
        assert_eq!(code(&out), 0, "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
        assert!(!std::fs::read_to_string(ws.path(&format!("{kind}.txt"))).unwrap().is_empty());
    }
}

#[test]
fn unknown_plot_kind_is_a_usage_error() {
    let out = run(&["plot", "--kind", "histogram", "--input", "x.wav", "--out", "x.svg"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("spectrogram") && err.contains("poles"), "{err}");
}

#[test]
fn missing_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    assert_eq!(code(&run(&["synth", "--spec", &p("absent.toml"), "--out", &p("c")])), 2);
    assert_eq!(code(&run(&["train", "--manifest", &p("absent.csv"), "--out", &p("m")])), 2);
    assert_eq!(code(&run(&["classify", "--model", &p("absent.enfc"), &p("x.wav")])), 2);
    assert_eq!(code(&run(&["train"])), 2);
}

#[test]
fn bad_override_is_a_usage_error() {
    let ws = workspace();
    let manifest = ws.path("corpus/manifest.csv");
    let model = ws.path("unused.enfc");
    for set in ["no_such_key=1", "type_threshold", "type_threshold=-4"] {
        let out = run(&["--set", set, "train", "--manifest", &manifest, "--out", &model]);
        assert_eq!(code(&out), 2, "{set}");
    }
    assert!(!std::path::Path::new(&model).exists());
}

#[test]
fn synth_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let mut digests = Vec::new();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out_dir = dir.path().join(name);
        let out = run(&["--seed", seed, "synth", "--spec", spec.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--duration-s", "20"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        digests.push(std::fs::read(out_dir.join("A_power_00.wav")).unwrap());
    }
    assert_eq!(digests[0], digests[1]);
    assert_ne!(digests[0], digests[2]);
}
