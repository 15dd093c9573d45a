use std::path::Path;
use std::process::{Command, Output};

use dvc_core::config::KEYS;

fn dvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvc")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

const TINY: [&str; 10] = [
    "--set", "n_speakers=2", "--set", "n_styles=2", "--set", "train_per_cell=2", "--set", "utt_len_s=0.4", "--set",
    "seed=3",
];

fn tiny_corpus(dir: &Path) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap()];
    args.extend(TINY);
    args.extend(["--set", "val_per_cell=1", "--set", "test_per_cell=1"]);
    ok(dvc(&args));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn help_lists_every_config_key_with_its_default() {
    let o = ok(dvc(&["--help"]));
    let text = String::from_utf8_lossy(&o.stdout);
    let defaults = dvc_core::Config::default();
    for (k, _) in KEYS {
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(k)).unwrap_or_else(|| panic!("{k} missing"));
        assert!(line.contains(&defaults.get(k).unwrap()), "{line}");
    }
}

#[test]
fn usage_errors_exit_1_with_prefix() {
    let o = dvc(&["train", "--manifest", "m.tsv", "--out", "x.ckpt", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERR:usage:"), "{}", stderr(&o));

    let o = dvc(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERR:usage:"));
}

#[test]
fn batch_size_one_names_the_pairing_requirement() {
    let o = dvc(&["train", "--manifest", "m.tsv", "--out", "x.ckpt", "--set", "batch_size=1"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("ERR:usage:") && e.contains("vCLUB") && e.contains("N >= 2"), "{e}");
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = dvc(&["train", "--manifest", &p(dir.path(), "absent.tsv"), "--out", &p(dir.path(), "x.ckpt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERR:data:"));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_corpus(a.path());
    tiny_corpus(b.path());
    for name in ["manifest.tsv", "truth.csv", "wav/s0_e1_train_01.wav", "features/s1_e0_test_00.dvc"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn features_matches_synth_features() {
    let dir = tempfile::tempdir().unwrap();
    tiny_corpus(dir.path());
    let out = dir.path().join("re");
    ok(dvc(&["features", "--wav-dir", &p(dir.path(), "wav"), "--out", out.to_str().unwrap()]));
    let name = "s1_e1_val_00.dvc";
    assert_eq!(
        std::fs::read(out.join(name)).unwrap(),
        std::fs::read(dir.path().join("features").join(name)).unwrap()
    );
    assert!(out.join("features.config.txt").exists());
}

#[test]
fn full_workflow_runs_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_corpus(d);
    let manifest = p(d, "manifest.tsv");
    let fast = ["--set", "epochs=2", "--set", "batch_size=4", "--set", "mi_warmup_epochs=1", "--set", "gl_iterations=4"];
    let mut train = vec!["train", "--manifest", &manifest, "--out"];
    let ck_a = p(d, "a.ckpt");
    let ck_b = p(d, "b.ckpt");
    let mut ta = train.clone();
    ta.push(&ck_a);
    ta.extend(fast);
    ok(dvc(&ta));
    train.push(&ck_b);
    train.extend(fast);
    ok(dvc(&train));
    assert_eq!(std::fs::read(&ck_a).unwrap(), std::fs::read(&ck_b).unwrap());
    let metrics = std::fs::read_to_string(d.join("a.metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,l_recon,l_vq,mi_sp,mi_sc,mi_sf,mi_pc,mi_pf,mi_cf,lr,code_usage_entropy\n"));
    assert_eq!(metrics.lines().count(), 3);
    assert!(d.join("a.metrics.csv.config.txt").exists());

    let o = ok(dvc(&["stats", "--manifest", &manifest, "--ckpt", &ck_a]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("spk1 split=val"));

    let src = p(d, "wav/s0_e0_test_00.wav");
    let reference = p(d, "wav/s1_e0_test_00.wav");
    let conv = p(d, "conv.wav");
    ok(dvc(&["convert", "--src", &src, "--ref", &reference, "--speaker", "spk1", "--ckpt", &ck_a, "--out", &conv]));
    assert!(d.join("conv.mel.dvc").exists() && d.join("conv.wav.config.txt").exists());
    dvc_dsp::load_wav(&conv).unwrap();

    let o = dvc(&["convert", "--src", &src, "--ref", &reference, "--speaker", "nobody", "--ckpt", &ck_a, "--out", &conv]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(
        d.join("pairs.csv"),
        "converted,reference,source,target_speaker,source_speaker\nconv.wav,wav/s1_e0_test_00.wav,wav/s0_e0_test_00.wav,spk1,spk0\n",
    )
    .unwrap();
    let report = p(d, "report.csv");
    ok(dvc(&["evaluate", "--pairs", &p(d, "pairs.csv"), "--ckpt", &ck_a, "--out", &report]));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("src,ref,mcd_db,f0_rmse_hz,f0_dist_hz,cos_tgt,cos_src,verdict,covoiced_ratio\n"));
    assert_eq!(csv.lines().count(), 2);
    let first = std::fs::read_to_string(d.join("report.jsonl")).unwrap();
    let head: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(head["config"]["epochs"], "2");
    let again = p(d, "report2.csv");
    ok(dvc(&["evaluate", "--pairs", &p(d, "pairs.csv"), "--ckpt", &ck_a, "--out", &again, "--manifest", &manifest]));
    ok(dvc(&["evaluate", "--pairs", &p(d, "pairs.csv"), "--ckpt", &ck_a, "--out", &again]));
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());

    let emb = p(d, "emb.csv");
    ok(dvc(&["embed", "--manifest", &manifest, "--ckpt", &ck_a, "--out", &emb]));
    let text = std::fs::read_to_string(&emb).unwrap();
    assert!(text.starts_with("speaker_id,style_id,utt_path,emb_kind,v1,"));
    assert!(text.lines().next().unwrap().ends_with(",v16,pca1,pca2"));
    assert_eq!(text.lines().count(), 1 + 2 * 16);

    let o = dvc(&["embed", "--manifest", &manifest, "--ckpt", &ck_a, "--out", &emb, "--set", "d_speaker=8"]);
    assert_eq!(o.status.code(), Some(1));
}
