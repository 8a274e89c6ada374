use std::path::Path;
use std::process::{Command, Output};

fn prescribe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prescribe")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn demo(dir: &Path) -> serde_json::Value {
    let out = prescribe(&["demo", "--out", dir.to_str().unwrap(), "--format", "json"]);
    serde_json::from_str(&stdout(&out)).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(prescribe(&[]).status.code(), Some(2));
    assert_eq!(prescribe(&["setup", "--data", "x.csv", "--out", "o"]).status.code(), Some(2));
    assert_eq!(
        prescribe(&["setup", "--meta", "missing.json", "--data", "x.csv", "--out", "o"]).status.code(),
        Some(2)
    );
    assert_eq!(prescribe(&["eval", "--bundle", "b", "--strategy", "magic"]).status.code(), Some(2));
    assert_eq!(prescribe(&["--help"]).status.code(), Some(0));
}

#[test]
fn demo_writes_transcript_with_follow_ups_and_tree() {
    let dir = tempfile::tempdir().unwrap();
    let report = demo(dir.path());
    let steps = report["steps"].as_array().unwrap();
    assert_eq!(steps[4]["missing"], serde_json::json!(["num_rules", "average_budget"]));
    assert_eq!(steps[5]["missing"], serde_json::json!(["average_budget"]));
    assert_eq!(steps.last().unwrap()["charts"], serde_json::json!(["bar", "tree"]));
    assert_eq!(report["conditions"]["euribor3m"], 4.964);

    let html = std::fs::read_to_string(dir.path().join("transcript.html")).unwrap();
    assert!(html.contains("How many rules") && html.contains("average budget"));
    assert!(html.rfind("tree-leaf").unwrap() > html.find("Use 4 rules").unwrap());
    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 22);
}

#[test]
fn setup_eval_and_ask_on_the_demo_fixture() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path());
    let data = dir.path().join("data");
    let (meta, csv) = (data.join("bank_marketing.json"), data.join("bank_marketing.csv"));
    let bundle = dir.path().join("b");
    let b = bundle.to_str().unwrap();
    let setup = stdout(&prescribe(&[
        "setup", "--meta", meta.to_str().unwrap(), "--data", csv.to_str().unwrap(), "--out", b,
    ]));
    assert!(setup.contains("prompt_db.jsonl") && setup.contains("selected columns: job, euribor3m"));

    let db: serde_json::Value =
        serde_json::from_str(&stdout(&prescribe(&["eval", "--bundle", b, "--n", "0", "--format", "json"]))).unwrap();
    assert_eq!(db[0]["accuracy"], 1.0);
    let perturbed: serde_json::Value =
        serde_json::from_str(&stdout(&prescribe(&["eval", "--bundle", b, "--format", "json"]))).unwrap();
    assert_eq!(perturbed[0]["n"], 238);
    let csv_report = stdout(&prescribe(&["eval", "--bundle", b, "--format", "csv"]));
    assert_eq!(csv_report.lines().count(), 2);

    let script = data.join("demo_script.jsonl");
    let ask = |q: &str| -> serde_json::Value {
        let out = prescribe(&[
            "ask", "--bundle", b, "--data", csv.to_str().unwrap(), "--script", script.to_str().unwrap(), q,
        ]);
        serde_json::from_str(&stdout(&out)).unwrap()
    };
    let opt = ask("Can you optimize my strategy?");
    assert_eq!(opt["missing"], serde_json::json!(["num_rules", "average_budget"]));
    assert_eq!(ask("Tell me a joke")["intent"], "unknown");
    let policy = ask("What is my current policy?");
    assert_eq!(policy["completion"]["charts"][0]["kind"], "bar");

    let missing_data = prescribe(&["ask", "--bundle", b, "--data", "nope.csv", "hi"]);
    assert_eq!(missing_data.status.code(), Some(2));
}
