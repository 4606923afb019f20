use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msconv::data::parse_values;

const TINY: &str = "\
identities = 3
samples_per_identity = 4
image_size = 8
stem_channels = 4
stage_channels = 8
min_width = 4
embed_dim = 8
epochs = 2
batch_size = 4
heldout_per_identity = 2
far_target = 0.1
";

fn msconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msconv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = msconv(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value(text: &str, key: &str) -> String {
    parse_values(text).into_iter().find(|(k, _)| k == key).unwrap().1
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_data_lists_images_labels_and_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    let out = ok(&["gen-data", "--config", &cfg, "--out", s(&data), "--max-impostors", "20"]);
    assert!(out.contains("12 images of 3 identities"), "{out}");
    assert_eq!(fs::read_to_string(data.join("labels.txt")).unwrap().lines().count(), 12);
    let pairs = fs::read_to_string(data.join("pairs.txt")).unwrap();
    let genuine = pairs.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(genuine, 3 * 6);
    assert_eq!(pairs.lines().count() - genuine, 20);
    assert!(data.join("img00011.msct").exists());
}

#[test]
fn train_verify_and_visualise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let ckpt = tmp.path().join("ckpt");
    let out = ok(&["train", "--config", &cfg, "--out", s(&ckpt)]);
    assert!(out.contains("epoch=2 loss="), "{out}");
    for f in ["manifest.txt", "config.txt", "metrics.log"] {
        assert!(ckpt.join(f).exists(), "{f}");
    }

    let held = tmp.path().join("held");
    ok(&["gen-data", "--config", &cfg, "--out", s(&held), "--heldout"]);
    let report = ok(&["verify", "--checkpoint", s(&ckpt), "--data", s(&held), "--far", "0.2"]);
    assert_eq!(value(&report, "genuine_pairs"), "3");
    assert_eq!(value(&report, "impostor_pairs"), "12");
    assert_eq!(value(&report, "far_target"), "0.2");
    let acc: f64 = value(&report, "accuracy").parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let maps = tmp.path().join("maps");
    let image = held.join("img00000.msct");
    let out = ok(&["viz", "--checkpoint", s(&ckpt), "--image", s(&image), "--out", s(&maps), "--top-k", "2"]);
    assert!(out.starts_with("wrote 10 maps"), "{out}");
    assert_eq!(fs::read_to_string(maps.join("channels.txt")).unwrap().lines().count(), 2);
    assert!(maps.join("u1.msct").exists() && maps.join("u2.msct").exists());
}

#[test]
fn repeated_training_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let log_a = ok(&["train", "--config", &cfg, "--out", s(&a)]);
    let log_b = ok(&["train", "--config", &cfg, "--out", s(&b)]);
    assert_eq!(log_a.replace(s(&a), ""), log_b.replace(s(&b), ""));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 3);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn overrides_beat_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let ckpt = tmp.path().join("ckpt");
    ok(&["train", "--config", &cfg, "--epochs=1", "--seed", "7", "--out", s(&ckpt)]);
    let echo = fs::read_to_string(ckpt.join("config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "epochs = 1"), "{echo}");
    assert!(echo.lines().any(|l| l == "seed = 7"), "{echo}");
    assert_eq!(fs::read_to_string(ckpt.join("metrics.log")).unwrap().lines().count(), 1);
}

#[test]
fn ablation_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let file = tmp.path().join("ablation.txt");
    let out = ok(&["ablate", "--config", &cfg, "--kinds", "msconv,no_mo", "--out", s(&file)]);
    assert_eq!(fs::read_to_string(&file).unwrap(), out);
    assert_eq!(value(&out, "shared_init_identical"), "true");
    assert!(parse_values(&out).iter().any(|(k, _)| k == "no_mo.tar"));
}

#[test]
fn flops_report_values() {
    let out = ok(&["flops", "--batch", "2"]);
    let params: usize = value(&out, "backbone_params").parse().unwrap();
    let flops: usize = value(&out, "backbone_flops").parse().unwrap();
    assert!(params > 0 && flops > params);
}

#[test]
fn gradcheck_single_scope() {
    let out = ok(&["gradcheck", "sigmoid"]);
    assert_eq!(out.lines().count(), 1);
    assert!(out.contains("PASS"), "{out}");
}

#[test]
fn bad_input_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--out", s(tmp.path()), "--no_such_key", "1"],
        vec!["frobnicate"],
        vec!["train"],
        vec!["gradcheck", "no_such_op"],
        vec!["flops", "--lr_init", "-1"],
    ] {
        let out = msconv(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
}
