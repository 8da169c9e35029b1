//! End-to-end runs of the `hdprisk` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hdprisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdprisk")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small population and a sample of it, built through `synth` and `sample`.
fn pipeline(dir: &Path) -> (PathBuf, PathBuf) {
    let pop = dir.join("pop");
    let o = hdprisk(&[
        "synth",
        "--K",
        "3",
        "--levels",
        "3,4,2,5",
        "--N",
        "2000",
        "--seed",
        "4",
        "--out-dir",
        p(&pop),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let layout = pop.join("layout.txt");
    let sample = dir.join("sample.csv");
    let o = hdprisk(&[
        "sample",
        "--population",
        p(&pop.join("population.csv")),
        "--layout",
        p(&layout),
        "--n",
        "200",
        "--seed",
        "4",
        "--out",
        p(&sample),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (layout, sample)
}

fn fit_args<'a>(layout: &'a Path, sample: &'a Path, out: &'a Path, its: &'a str, burn: &'a str) -> Vec<&'a str> {
    vec![
        "--sample",
        p(sample),
        "--layout",
        p(layout),
        "--iterations",
        its,
        "--burn-in",
        burn,
        "--N",
        "2000",
        "--T",
        "20",
        "--seed",
        "9",
        "--out-dir",
        p(out),
    ]
}

fn run(sub: &str, args: &[&str], extra: &[&str]) -> Output {
    let mut all = vec![sub];
    all.extend_from_slice(args);
    all.extend_from_slice(extra);
    let o = hdprisk(&all);
    assert!(o.status.success(), "{sub}: {}", stderr(&o));
    o
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

#[test]
fn oracle_prints_exact_risk() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dir.path().join("layout.txt");
    fs::write(&layout, "v,3\n").unwrap();
    let sample = dir.path().join("s.csv");
    fs::write(&sample, "v\n1\n2\n").unwrap();
    let pop = dir.path().join("p.csv");
    fs::write(&pop, "v\n1\n2\n2\n3\n3\n3\n").unwrap();
    let o = hdprisk(&[
        "oracle",
        "--sample",
        p(&sample),
        "--population",
        p(&pop),
        "--layout",
        p(&layout),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "tau1=1 tau2=1.5");
}

#[test]
fn fit_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, sample) = pipeline(dir.path());
    let out = dir.path().join("fit");
    let o = run("fit", &fit_args(&layout, &sample, &out, "10", "5"), &["--thin", "1"]);
    assert!(stdout(&o).starts_with("tau1 mean="));
    let trace = out.join("trace.csv");
    assert_eq!(data_rows(&trace), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert!(manifest["timing"]["sampler_seconds"].is_number());

    let rep = dir.path().join("report");
    run(
        "report",
        &["--trace", p(&trace), "--bins", "4", "--out-dir", p(&rep)],
        &[],
    );
    assert!(fs::read_to_string(rep.join("summary.txt")).unwrap().contains("draws=5"));
    assert_eq!(data_rows(&rep.join("histogram.csv")), 4);
}

#[test]
fn disjointify_reports_cardinalities() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dir.path().join("layout.txt");
    fs::write(&layout, "a,2\nb,3\nc,2\n").unwrap();
    let conds = dir.path().join("c.txt");
    fs::write(&conds, "1,*,*\n*,2,*\n").unwrap();
    let out = dir.path().join("d.txt");
    let o = run(
        "disjointify",
        &["--conditions", p(&conds), "--layout", p(&layout), "--out", p(&out)],
        &[],
    );
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert!(
        last.starts_with("conditions_in=2 conditions_out=2 structural_zero_cells=8 total_cells=12"),
        "{last}"
    );
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, sample) = pipeline(dir.path());
    let conds = dir.path().join("c.txt");
    fs::write(&conds, "1,1,*,*\n2,*,2,*\n").unwrap();
    let out = dir.path().join("fit");
    let mut seen: Vec<(String, String)> = Vec::new();
    for threads in ["1", "8", "1"] {
        let args = fit_args(&layout, &sample, &out, "40", "20");
        run("fit-sz", &args, &["--conditions", p(&conds), "--threads", threads]);
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        manifest.as_object_mut().unwrap().remove("timing");
        seen.push((fs::read_to_string(out.join("trace.csv")).unwrap(), manifest.to_string()));
        fs::remove_dir_all(&out).unwrap();
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
}

#[test]
fn empty_conditions_match_plain_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, sample) = pipeline(dir.path());
    let empty = dir.path().join("none.txt");
    fs::write(&empty, "").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run("fit", &fit_args(&layout, &sample, &a, "30", "10"), &[]);
    run(
        "fit-sz",
        &fit_args(&layout, &sample, &b, "30", "10"),
        &["--conditions", p(&empty)],
    );
    assert_eq!(
        fs::read(a.join("trace.csv")).unwrap(),
        fs::read(b.join("trace.csv")).unwrap()
    );
}

#[test]
fn resume_continues_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, sample) = pipeline(dir.path());
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let resumed = dir.path().join("resumed");
    run("fit", &fit_args(&layout, &sample, &full, "30", "10"), &[]);
    // the only checkpoint left behind is the one at iteration 17
    run(
        "fit",
        &fit_args(&layout, &sample, &part, "30", "10"),
        &["--checkpoint-every", "17"],
    );
    let cp = part.join("checkpoint.json");
    run(
        "fit",
        &fit_args(&layout, &sample, &resumed, "30", "10"),
        &["--resume", p(&cp)],
    );
    assert_eq!(
        fs::read(full.join("trace.csv")).unwrap(),
        fs::read(resumed.join("trace.csv")).unwrap()
    );

    // a checkpoint cannot be resumed under different structural zeros
    let conds = dir.path().join("c.txt");
    fs::write(&conds, "1,1,*,*\n").unwrap();
    let other = dir.path().join("other");
    let mut args = vec!["fit-sz"];
    args.extend(fit_args(&layout, &sample, &other, "30", "10"));
    args.extend(["--conditions", p(&conds), "--resume", p(&cp)]);
    let o = hdprisk(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--resume"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, sample) = pipeline(dir.path());
    let out = dir.path().join("fit");

    let missing = dir.path().join("missing.csv");
    let mut args = vec!["fit"];
    args.extend(fit_args(&layout, &missing, &out, "10", "5"));
    let o = hdprisk(&args);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("--sample") && msg.contains("missing.csv"), "{msg}");
    assert_eq!(msg.trim().lines().count(), 1);

    let mut args = vec!["fit"];
    args.extend(fit_args(&layout, &sample, &out, "10", "10"));
    assert_eq!(hdprisk(&args).status.code(), Some(1));

    let mut args = vec!["fit"];
    args.extend(fit_args(&layout, &sample, &out, "10", "5"));
    args.extend(["--hyper", "1,2"]);
    let o = hdprisk(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--hyper"));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,x2,x3,x4\n1,1,9,1\n").unwrap();
    let o = hdprisk(&[
        "oracle",
        "--sample",
        p(&bad),
        "--population",
        p(&bad),
        "--layout",
        p(&layout),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.csv"));

    assert_eq!(hdprisk(&["fit", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        hdprisk(&["--threads", "0", "report", "--trace", "t", "--out-dir", "o"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn overflowing_structural_zero_mass_aborts_with_two() {
    // 60 binary variables; the conditions exclude every cell but all-ones,
    // whose model probability is far below 1e-9
    let dir = tempfile::tempdir().unwrap();
    let j = 60;
    let layout = dir.path().join("layout.txt");
    fs::write(&layout, (1..=j).map(|v| format!("v{v},2\n")).collect::<String>()).unwrap();
    let header: Vec<String> = (1..=j).map(|v| format!("v{v}")).collect();
    let sample = dir.path().join("s.csv");
    fs::write(&sample, format!("{}\n{}\n", header.join(","), vec!["1"; j].join(","))).unwrap();
    let conds = dir.path().join("c.txt");
    let lines: String = (0..j)
        .map(|v| {
            (0..j)
                .map(|w| if w == v { "2" } else { "*" })
                .collect::<Vec<_>>()
                .join(",")
                + "\n"
        })
        .collect();
    fs::write(&conds, lines).unwrap();
    let out = dir.path().join("fit");
    let o = hdprisk(&[
        "fit-sz",
        "--sample",
        p(&sample),
        "--layout",
        p(&layout),
        "--conditions",
        p(&conds),
        "--iterations",
        "10",
        "--burn-in",
        "5",
        "--N",
        "10",
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("sampler aborted"));
}
