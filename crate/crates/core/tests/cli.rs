use std::path::Path;
use std::process::{Command, Output};

fn persona(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persona"))
        .args(args)
        .current_dir(dir)
        .env("PERSONA_THREADS", "1")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn people(dir: &Path) {
    let mut text = String::from("id,final:O,final:C,final:E,final:A,final:N,height,category\n");
    for i in 0..40 {
        let e = 1 + (i % 3);
        let h = 150.0 + 15.0 * e as f64 + (i % 7) as f64;
        let cat = ["actor", "singer"][i % 2];
        text.push_str(&format!("p{i},{},{},{e},{},{},{h:.1},{cat}\n", 1 + i % 2, 1 + (i / 2) % 3, 3 - i % 3, 1 + (i / 5) % 3));
    }
    std::fs::write(dir.join("people.csv"), text).unwrap();
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    people(d.path());
    let o = persona(&["itest", "--input", "people.csv", "--output", "x.json"], d.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("--seed"));
    assert_eq!(code(&persona(&["frobnicate"], d.path())), 1);
    assert_eq!(code(&persona(&["--help"], d.path())), 0);

    let o = persona(&["itest", "--input", "people.csv", "--output", "x.json", "--seed", "1", "--tests", "csq,bogus"], d.path());
    assert_eq!(code(&o), 1);
    let o = persona(&["itest", "--input", "people.csv", "--output", "x.json", "--seed", "1", "--alpha", "1.5"], d.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn bad_thread_count_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_persona"))
        .args(["synth", "--preset", "fig5", "--n", "10", "--seed", "1", "--output", "s"])
        .current_dir(d.path())
        .env("PERSONA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("PERSONA_THREADS"));
}

#[test]
fn missing_input_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let o = persona(&["eval-llm", "--input", "nope.csv", "--output", "r.json"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn divergence_exits_two_and_names_the_epoch() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("train.json"), r#"{"epochs": 3, "lr": 1e300}"#).unwrap();
    let o = persona(&["synth", "--preset", "fig5", "--n", "200", "--seed", "1", "--output", "s"], d.path());
    assert_eq!(code(&o), 0);
    let o = persona(&["train", "--input", "s", "--output", "m", "--config", "train.json", "--seed", "0"], d.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"), "{}", stderr(&o));

    std::fs::write(d.path().join("bad.json"), r#"{"lr": -1.0}"#).unwrap();
    let o = persona(&["train", "--input", "s", "--output", "m2", "--config", "bad.json", "--seed", "0"], d.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn itest_csv_cells_are_counts() {
    let d = tempfile::tempdir().unwrap();
    people(d.path());
    let o = persona(
        &["itest", "--input", "people.csv", "--output", "m.csv", "--seed", "2", "--tests", "csq,gsq,hsic", "--format", "csv"],
        d.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("m.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "trait,height,category");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in &rows {
        for cell in row.split(',').skip(1) {
            let (k, m) = cell.split_once('/').unwrap();
            let (k, m): (usize, usize) = (k.parse().unwrap(), m.parse().unwrap());
            assert!(k <= m && m <= 3, "{cell}");
        }
    }
    // extraversion drives height in the fixture
    let e: Vec<&str> = rows.iter().find(|r| r.starts_with("E,")).unwrap().split(',').collect();
    assert_eq!(e[1], "3/3");
}

#[test]
fn report_projects_itest_json_to_the_same_csv() {
    let d = tempfile::tempdir().unwrap();
    people(d.path());
    let base = ["itest", "--input", "people.csv", "--seed", "4", "--tests", "csq,kci"];
    let mut a: Vec<&str> = base.to_vec();
    a.extend(["--output", "r.json"]);
    assert_eq!(code(&persona(&a, d.path())), 0);
    let mut b: Vec<&str> = base.to_vec();
    b.extend(["--output", "direct.csv", "--format", "csv"]);
    assert_eq!(code(&persona(&b, d.path())), 0);
    assert_eq!(code(&persona(&["report", "--input", "r.json", "--output", "projected.csv"], d.path())), 0);
    let read = |f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read("direct.csv"), read("projected.csv"));

    let rep: serde_json::Value = serde_json::from_slice(&read("r.json")).unwrap();
    assert_eq!(rep["header"]["subcommand"], "itest");
    assert_eq!(rep["header"]["seed"], 4);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = persona(&["synth", "--preset", "fig5", "--n", "300", "--seed", "11", "--output", out], d.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut names: Vec<String> = std::fs::read_dir(d.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.contains(&"manifest.json".to_string()));
    for n in &names {
        let a = std::fs::read(d.path().join("a").join(n)).unwrap();
        let b = std::fs::read(d.path().join("b").join(n)).unwrap();
        assert_eq!(a, b, "{n} differs");
    }
}

#[test]
fn eval_llm_ranks_by_overall_score() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("models.csv"),
        "model_id,dataset,gt,mr,ir,pp,of,cc,fa\nslow,x,9.0,0.5,0.5,0.5,0.5,0.5,0.5\nfast,x,1.0,0.0,0.0,1.0,1.0,1.0,1.0\n",
    )
    .unwrap();
    let o = persona(&["eval-llm", "--input", "models.csv", "--output", "rank.csv", "--format", "csv"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("rank.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("rank,model_id"));
    assert!(lines[1].starts_with("1,fast,"));
    assert!(lines[2].starts_with("2,slow,"));

    std::fs::write(d.path().join("bad.csv"), "model_id,dataset,gt,mr,ir,pp,of,cc,fa\nm,x,1.0,1.5,0,0,0,0,0\n").unwrap();
    let o = persona(&["eval-llm", "--input", "bad.csv", "--output", "r.json"], d.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn ingest_keeps_good_rows_and_reports_bad_ones() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("raw.csv"),
        "id,final:O,final:C,final:E,final:A,final:N,height\na,1,2,3,1,2,170\nb,1,2,9,1,2,180\na,1,1,1,1,1,175\nc,3,3,3,3,3,\n",
    )
    .unwrap();
    let o = persona(&["ingest", "--input", "raw.csv", "--output", "clean.csv", "--report", "rep.json"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["body"]["accepted"], 2);
    assert_eq!(rep["body"]["rejected"].as_array().unwrap().len(), 2);
    let clean = std::fs::read_to_string(d.path().join("clean.csv")).unwrap();
    assert_eq!(clean.lines().count(), 3);
}

#[test]
fn aggregate_fills_final_scores() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("votes.csv"),
        "id,score:m1:O,score:m1:C,score:m1:E,score:m1:A,score:m1:N,score:m2:O,score:m2:C,score:m2:E,score:m2:A,score:m2:N,score:m3:O,score:m3:C,score:m3:E,score:m3:A,score:m3:N\n\
         p,2,1,0,3,1,3,1,0,3,2,0,2,0,1,2\n",
    )
    .unwrap();
    let o = persona(&["aggregate", "--input", "votes.csv", "--output", "agg.csv"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("agg.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let get = |name: &str| row.get(header.iter().position(|h| h == name).unwrap()).unwrap().to_string();
    // O: [2,3] -> 3; C: [1,1,2] -> 1; E: all 0 -> 0; A: [3,3,1] -> 3; N: [1,2,2] -> 2
    assert_eq!(
        ["O", "C", "E", "A", "N"].map(|t| get(&format!("final:{t}"))),
        ["3", "1", "0", "3", "2"].map(String::from)
    );
}
