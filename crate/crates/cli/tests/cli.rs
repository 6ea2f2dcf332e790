use std::path::Path;
use std::process::{Command, Output};

use banditlab_cli::Cli;
use banditlab_core::store::{dataset_to_jsonl, Provenance};
use banditlab_core::{Dataset, EnvSpec};
use clap::CommandFactory;
use serde_json::Value;

fn banditlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_banditlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn banditlab")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_text_matches_golden() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("BANDITLAB_BLESS").is_some();
    let mut root = Cli::command();
    let mut pages = vec![("banditlab".to_string(), root.render_help().to_string())];
    for sub in root.get_subcommands_mut() {
        pages.push((format!("banditlab-{}", sub.get_name()), sub.render_help().to_string()));
    }
    for (name, text) in pages {
        let path = dir.join(format!("{name}.help.txt"));
        if bless {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &text).unwrap();
        } else {
            let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(text, want, "help of {name} changed; rerun with BANDITLAB_BLESS=1 if intended");
        }
    }
}

#[test]
fn fit_on_empty_dataset_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = Dataset::new(EnvSpec::stationary2(), "nobody".to_string(), Vec::new());
    std::fs::write(tmp.path().join("empty.jsonl"), dataset_to_jsonl(&d, &Provenance::default())).unwrap();
    let o = banditlab(tmp.path(), &["fit", "--data", "empty.jsonl"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err: Value = serde_json::from_str(stderr(&o).trim().lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "empty dataset");
    assert_eq!(err["code"], 2);
}

#[test]
fn fit_without_data_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = banditlab(tmp.path(), &["fit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = banditlab(tmp.path(), &["run", "--set", "trails=5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trails"), "{}", stderr(&o));
}

#[test]
fn bad_flag_value_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = banditlab(tmp.path(), &["run", "--env", "three-armed"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flags_override_set_which_overrides_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.toml"), "trials = 7\nseed = 4\nagent = \"ts\"\n").unwrap();
    let o = banditlab(tmp.path(), &["--config", "run.toml", "--set", "seed=9", "--set", "trials=6", "run", "--trials", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = stdout_json(&o);
    assert_eq!(r["config"]["trials"], 5);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["config"]["agent"], "ts");
    assert_eq!(r["result"]["completed"], 5);
}

#[test]
fn run_then_metrics_then_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let o = banditlab(tmp.path(), &["run", "--env", "stationary2", "--agent", "ucb", "--trials", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("out/report-run.json").exists());

    let o = banditlab(tmp.path(), &["metrics", "--data", "out/dataset.jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = stdout_json(&o);
    assert_eq!(r["result"]["regret_kind"], "bayes");
    assert_eq!(r["result"]["regret_non_decreasing"], true);
    assert_eq!(r["result"]["final_regret"]["round"], 10);
    let rate = r["result"]["exploitation"]["overall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    let csv = std::fs::read_to_string(tmp.path().join("out/regret.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);

    let o = banditlab(tmp.path(), &["plot", "--input", "out/regret.csv", "--output", "out/regret.svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(tmp.path().join("out/regret.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.contains("<svg"));
}

#[test]
fn quiet_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = banditlab(tmp.path(), &["-q", "run", "--trials", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l == "completed: 3"), "{text}");
}

#[test]
fn generated_groups_drive_restless_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = banditlab(tmp.path(), &["--out", "groups", "gen-env", "--env", "restless4", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = stdout_json(&o)["result"]["files"].as_array().unwrap().len();
    assert!(files >= 3);

    let run = |out: &str| {
        let o = banditlab(tmp.path(), &["--out", out, "run", "--env", "restless4", "--trials", "3", "--groups-dir", "groups"]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(tmp.path().join(out).join("dataset.jsonl")).unwrap()
    };
    assert_eq!(run("a"), run("b"));

    let o = banditlab(tmp.path(), &["--out", "a", "metrics", "--data", "a/dataset.jsonl", "--groups-dir", "groups"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout_json(&o)["result"]["regret_kind"], "realized");
}

#[test]
fn import_validates_and_converts_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("subject,game,round,choice,reward,mean_1,mean_2\n");
    for round in 1..=10 {
        csv.push_str(&format!("h1,1,{round},{},{},5,-3\n", 1 + round % 2, round as i64 - 4));
    }
    std::fs::write(tmp.path().join("human.csv"), &csv).unwrap();
    let o = banditlab(tmp.path(), &["import", "--csv", "human.csv", "--env", "stationary2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = stdout_json(&o);
    assert_eq!(r["result"]["subjects"], 1);
    assert_eq!(r["result"]["trials"], 1);

    std::fs::write(tmp.path().join("bad.csv"), csv.replace("h1,1,3,", "h1,1,9,")).unwrap();
    let o = banditlab(tmp.path(), &["import", "--csv", "bad.csv", "--env", "stationary2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
