use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lookmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lookmatch"))
        .arg("--log")
        .arg("warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lookmatch(args);
    assert!(
        out.status.success(),
        "lookmatch {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> String {
    let out = lookmatch(args);
    assert!(!out.status.success(), "lookmatch {args:?} should have failed");
    String::from_utf8(out.stderr).unwrap()
}

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "fixture",
            "-o",
            s(&root),
            "--queries",
            "30",
            "--gallery",
            "120",
            "--dim",
            "16",
        ]);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn p(&self, name: &str) -> String {
        s(&self.path(name)).to_string()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let help = ok(&["--help"]);
    for cmd in [
        "embed-check",
        "score",
        "calibrate",
        "standardize",
        "retrieve",
        "fuse",
        "eval",
        "curate",
        "sample",
        "pipeline",
        "fixture",
    ] {
        assert!(help.contains(cmd), "missing {cmd} in help");
    }
    assert!(ok(&["eval", "--help"]).contains("recall"));
}

#[test]
fn embed_check_reports_and_rejects() {
    let fx = Fixture::new();
    let out = ok(&[
        "embed-check",
        &fx.p("gallery_image.emb"),
        "--corpus",
        &fx.p("gallery.tsv"),
    ]);
    assert!(out.contains("120"), "{out}");

    let bad = fx.path("bad.emb");
    let mut bytes = fs::read(fx.path("gallery_image.emb")).unwrap();
    bytes[0] = b'X';
    fs::write(&bad, bytes).unwrap();
    fail(&["embed-check", s(&bad)]);
}

#[test]
fn stage_commands_chain() {
    let fx = Fixture::new();
    let fi2i = fx.p("fi2i.tsv");
    ok(&[
        "score",
        "--channel",
        "fi2i",
        "--queries",
        &fx.p("query_image.emb"),
        "--gallery",
        &fx.p("gallery_image.emb"),
        "-o",
        &fi2i,
    ]);
    let text = fs::read_to_string(&fi2i).unwrap();
    assert!(text.starts_with("#model=fi2i"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 30 * 120);

    let i2i = fx.p("i2i.tsv");
    ok(&[
        "score",
        "--channel",
        "i2i",
        "--queries",
        &fx.p("query_image.emb"),
        "--gallery",
        &fx.p("gallery_image.emb"),
        "--crops",
        &fx.p("gallery_bbox.emb"),
        "--corpus",
        &fx.p("gallery.tsv"),
        "-o",
        &i2i,
    ]);
    fail(&[
        "score",
        "--channel",
        "t2i",
        "--queries",
        &fx.p("query_image.emb"),
        "-o",
        &fx.p("x.tsv"),
    ]);
    fail(&[
        "score",
        "--channel",
        "nope",
        "--queries",
        &fx.p("query_image.emb"),
        "-o",
        &fx.p("x.tsv"),
    ]);

    let cand = fx.path("cand");
    ok(&[
        "retrieve",
        "--queries",
        &fx.p("query_image.emb"),
        "--gallery",
        &fx.p("gallery_text.emb"),
        "-k",
        "5",
        "--brand-threshold",
        "90",
        "--corpus",
        &fx.p("queries.tsv"),
        &fx.p("gallery.tsv"),
        "-o",
        s(&cand),
    ]);
    assert!(cand.join("t2i.tsv").is_file());

    let mut std_tables = Vec::new();
    for (name, input) in [
        ("i2i", i2i.clone()),
        ("t2i", s(&cand.join("t2i.tsv")).to_string()),
        ("proxynca", fx.p("proxynca.tsv")),
    ] {
        let stats = fx.p(&format!("{name}.stats.tsv"));
        ok(&["calibrate", "-i", &input, "-n", "500", "--seed", "3", "-o", &stats]);
        let z = fx.p(&format!("{name}.z.tsv"));
        ok(&["standardize", "-i", &input, "--stats", &stats, "-o", &z]);
        std_tables.push(z);
    }

    let spec = fx.path("spec.toml");
    fs::write(
        &spec,
        "name = \"ens\"\nmode = \"second_highest_truncated\"\nmin_support = 2\nmembers = [\"i2i\", \"t2i\", \"proxynca\"]\n",
    )
    .unwrap();
    let fused = fx.p("fused.tsv");
    let mut fuse_args = vec!["fuse", "--spec", s(&spec), "-o", &fused, "-i"];
    fuse_args.extend(std_tables.iter().map(String::as_str));
    ok(&fuse_args);

    let manifest = fx.p("manifest.tsv");
    ok(&["curate", "--fused", &fused, "--cutoffs", "5,10,20", "-o", &manifest]);
    let rows: Vec<String> = fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert!(rows.len() <= 30 && !rows.is_empty());
    fail(&["curate", "--fused", &fused, "--cutoffs", "10,5,20", "-o", &manifest]);

    let tasks = fx.p("tasks.tsv");
    ok(&[
        "sample",
        "--manifest",
        &manifest,
        "--probes",
        "3,10",
        "--per-probe",
        "4",
        "--seed",
        "1",
        "--queries",
        &fx.p("queries.tsv"),
        "--gallery",
        &fx.p("gallery.tsv"),
        "-o",
        &tasks,
    ]);
    let again = fx.p("tasks2.tsv");
    ok(&[
        "sample",
        "--manifest",
        &manifest,
        "--probes",
        "3,10",
        "--per-probe",
        "4",
        "--seed",
        "1",
        "--queries",
        &fx.p("queries.tsv"),
        "--gallery",
        &fx.p("gallery.tsv"),
        "-o",
        &again,
    ]);
    assert_eq!(fs::read(&tasks).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn eval_commands() {
    let fx = Fixture::new();
    let json = fx.path("recall.json");
    let out = ok(&[
        "eval",
        "recall",
        "-i",
        &fx.p("proxynca.tsv"),
        &fx.p("hypdino.tsv"),
        "--truth",
        &fx.p("truth.tsv"),
        "-k",
        "1,5",
        "--json",
        s(&json),
    ]);
    assert!(out.contains("proxynca") && out.contains("hypdino"), "{out}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert!(report.is_object());

    let out = ok(&[
        "eval",
        "corr",
        "-i",
        &fx.p("proxynca.tsv"),
        &fx.p("hypdino.tsv"),
        "--sample",
        "500",
    ]);
    assert!(out.contains("1.00"), "{out}");
    fail(&["eval", "corr", "-i", &fx.p("proxynca.tsv")]);

    let ann = fx.path("ann.jsonl");
    let rec = |q: &str, g: &str, probe: u64, verdict: &str| {
        format!(
            "{{\"query_id\":\"{q}\",\"gallery_id\":\"{g}\",\"probe_index\":{probe},\"verdict\":\"{verdict}\",\"annotator\":\"a\",\"timestamp\":\"2024-01-01T00:00:00Z\"}}\n"
        )
    };
    let text = rec("q1", "g1", 10, "match") + &rec("q2", "g2", 10, "no_match") + &rec("q3", "g3", 20, "match");
    fs::write(&ann, text).unwrap();
    let out = ok(&["eval", "curve", "--annotations", s(&ann), "--probes", "10,20,30"]);
    assert!(out.contains("50.00") && out.contains("100.00"), "{out}");
    fail(&["eval", "curve", "--annotations", s(&ann), "--probes", "10"]);
}

#[test]
fn pipeline_runs_and_resumes() {
    let fx = Fixture::new();
    let config = fx.p("pipeline.toml");
    let first: serde_json::Value =
        serde_json::from_str(&ok(&["--workers", "2", "pipeline", "--config", &config])).unwrap();
    assert!(first["stages"].as_array().unwrap().iter().all(|s| s["reused"] == false));
    assert!(fx.path("out/manifest.tsv").is_file());
    assert!(fx.path("out/annotation_tasks.tsv").is_file());
    let second: serde_json::Value = serde_json::from_str(&ok(&["pipeline", "--config", &config, "--resume"])).unwrap();
    assert!(second["stages"].as_array().unwrap().iter().all(|s| s["reused"] == true));
    assert_eq!(first["config_hash"], second["config_hash"]);
}

#[test]
fn pipeline_fails_fast_on_missing_block() {
    let fx = Fixture::new();
    fs::remove_file(fx.path("gallery_bbox.emb")).unwrap();
    let err = fail(&["pipeline", "--config", &fx.p("pipeline.toml")]);
    assert!(err.contains("gallery_bbox.emb"), "{err}");
    assert!(!fx.path("out").exists());
}
