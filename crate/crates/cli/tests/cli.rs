//! The binary's file contracts and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use espew_core::io::{load_matrix, save_matrix};
use espew_core::verify::ReportFile;
use espew_core::WatermarkKey;

fn espew(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_espew"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = espew(args, dir);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn inject_attack_verify_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["corpus", "--seed", "2", "--out", "c.jsonl"], d);
    ok(&["triggers", "--corpus", "c.jsonl", "--n", "20", "--seed", "1", "--out", "t.json"], d);
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(t["tokens"].as_array().unwrap().len(), 20);

    ok(&["inject", "--method", "espew", "--key", "k.json", "--corpus", "c.jsonl", "--out", "w.emb"], d);
    let key = WatermarkKey::load(&d.join("k.json")).unwrap();
    let w = load_matrix(&d.join("w.emb")).unwrap();
    assert_eq!((w.rows(), w.dim()), (5000, 256));
    // the existing key is reused; a conflicting method is refused
    ok(&["inject", "--method", "espew", "--key", "k.json", "--corpus", "c.jsonl", "--out", "w2.emb"], d);
    assert_eq!(std::fs::read(d.join("w.emb")).unwrap(), std::fs::read(d.join("w2.emb")).unwrap());
    let o = espew(&["inject", "--method", "warden", "--key", "k.json", "--corpus", "c.jsonl", "--out", "w3.emb"], d);
    assert_eq!(code(&o), 2);

    ok(&["attack", "--kind", "permute", "--in", "w.emb", "--out", "p.emb", "--seed", "3"], d);
    ok(&["attack", "--kind", "dropout", "--rate", "0.3", "--in", "w.emb", "--out", "d.emb"], d);
    ok(&["attack", "--kind", "cse", "--k", "5", "--in", "w.emb", "--out", "a.emb"], d);
    assert_eq!(load_matrix(&d.join("a.emb")).unwrap().rows(), 5000);

    ok(&["verify", "--service", "inline", "--key", "k.json", "--corpus", "c.jsonl", "--report", "r.json"], d);
    let text = std::fs::read_to_string(d.join("r.json")).unwrap();
    let report: ReportFile = serde_json::from_str(&text).unwrap();
    assert!(report.report.is_copy);
    // the secret target never reaches a report
    assert!(!text.contains("target"));
    let first = format!("{}", key.targets[0].values()[0]);
    assert!(!text.contains(&first));

    for kind in ["cos_histogram", "pca_scatter"] {
        ok(&["plot", "--kind", kind, "--in", "w.emb", "--corpus", "c.jsonl", "--key", "k.json", "--out", "f.tsv"], d);
        assert_eq!(std::fs::read_to_string(d.join("f.tsv")).unwrap().lines().count(), 5001);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // configuration: unreadable input, missing output directory, bad flag
    assert_eq!(code(&espew(&["verify", "--service", "inline", "--key", "nope.json", "--report", "r.json"], d)), 2);
    assert_eq!(code(&espew(&["corpus", "--out", "missing/c.jsonl"], d)), 2);
    assert_eq!(code(&espew(&["attack", "--kind", "shuffle", "--in", "x", "--out", "y"], d)), 2);
    // data: a matrix file with a wrong magic
    std::fs::write(d.join("bad.emb"), b"NOTAMATRIX-------------------").unwrap();
    assert_eq!(code(&espew(&["attack", "--kind", "permute", "--in", "bad.emb", "--out", "o.emb"], d)), 3);
    save_matrix(&d.join("one.emb"), &espew_core::EmbeddingMatrix::from_rows(2, &[vec![1.0, 0.0]]).unwrap()).unwrap();
    assert_eq!(code(&espew(&["attack", "--kind", "permute", "--in", "one.emb", "--out", "o.emb"], d)), 0);

    // CI guard: a watermarked service on a run expected clean
    ok(&["corpus", "--seed", "4", "--out", "c.jsonl"], d);
    ok(&["inject", "--method", "espew", "--key", "k.json", "--corpus", "c.jsonl", "--out", "w.emb"], d);
    ok(&["inject", "--method", "none", "--key", "none.json", "--corpus", "c.jsonl", "--out", "n.emb"], d);
    let base = ["verify", "--service", "inline", "--key", "k.json", "--corpus", "c.jsonl", "--report", "r.json", "--expect-clean"];
    assert_eq!(code(&espew(&base, d)), 4);
    let clean: Vec<&str> = base.iter().copied().chain(["--service-key", "none.json"]).collect();
    assert_eq!(code(&espew(&clean, d)), 0);
}
