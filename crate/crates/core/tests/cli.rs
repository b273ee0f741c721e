//! Drives the `unetsr` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use unetsr::metrics::parse_psnr;
use unetsr::model::{Checkpoint, Model, NetConfig};
use unetsr::pipeline::ImageBuf;
use unetsr::Tensor;

fn unetsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unetsr"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pattern(h: usize, w: usize, phase: usize) -> ImageBuf {
    let pixels = (0..h * w)
        .flat_map(|i| {
            let (y, x) = (i / w, i % w);
            let v = if ((x + phase) / 4 + y / 4).is_multiple_of(2) {
                40
            } else {
                210
            };
            [v, (x * 255 / w) as u8, (y * 255 / h) as u8]
        })
        .collect();
    ImageBuf::new(h, w, pixels).unwrap()
}

/// Writes three source images and generates ×2 pairs at 32×32.
fn pairs(root: &Path) -> std::path::PathBuf {
    let src = root.join("src");
    for (i, (h, w)) in [(40, 48), (36, 36), (50, 40)].iter().enumerate() {
        pattern(*h, *w, i)
            .save_png(&src.join(format!("img{i}.png")))
            .unwrap();
    }
    ok(unetsr(&[
        "pair-gen",
        "--src",
        s(&src),
        "--out",
        s(&root.join("pairs")),
        "--scale",
        "2",
        "--target",
        "32",
    ]));
    root.join("pairs/x2/pairs.json")
}

#[test]
fn param_count_json_and_table_agree() {
    let o = ok(unetsr(&[
        "param-count",
        "--depth",
        "3",
        "--scale",
        "4",
        "--base-width",
        "8",
        "--json",
    ]));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let total = doc["total"].as_u64().unwrap() as usize;
    let layer_sum: u64 = doc["layers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["params"].as_u64().unwrap())
        .sum();
    assert_eq!(layer_sum as usize, total);
    assert_eq!(
        total,
        Model::build(NetConfig::new(3, 4, 8)).unwrap().param_count()
    );

    let o = ok(unetsr(&[
        "param-count",
        "--depth",
        "3",
        "--scale",
        "4",
        "--base-width",
        "8",
    ]));
    let text = stdout(&o);
    let mut rows = 0usize;
    let mut printed_total = 0usize;
    for line in text.lines().skip(1) {
        let n: usize = line.split_whitespace().last().unwrap().parse().unwrap();
        if line.starts_with("total") {
            printed_total = n;
        } else {
            rows += n;
        }
    }
    assert_eq!(rows, total);
    assert_eq!(printed_total, total);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = unetsr(&[
        "pair-gen",
        "--src",
        s(dir.path()),
        "--out",
        s(dir.path()),
        "--scale",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(unetsr(&["no-such-command"]).status.code(), Some(2));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"net": {"depth": 2}, "learning_rate": 0.1}"#).unwrap();
    let o = unetsr(&["train", "--config", s(&cfg), "--pairs", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = unetsr(&[
        "sr",
        "--ckpt",
        s(&dir.path().join("none.usrc")),
        "--in",
        "x.png",
        "--out",
        "y.png",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_and_names_an_injected_bug() {
    let o = ok(unetsr(&["gradcheck", "--module", "loss"]));
    let text = stdout(&o);
    assert!(text.contains("PASS  mixge(lambda=0.1)"), "{text}");
    assert!(!text.contains("FAIL"));

    let o = unetsr(&["gradcheck", "--module", "ops", "--inject-bug"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL  relu[injected bug]"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("relu[injected bug]"));
}

#[test]
fn train_writes_checkpoints_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = pairs(dir.path());
    let out = dir.path().join("run");
    let args = |epochs: &str| {
        vec![
            "train".to_string(),
            "--pairs".into(),
            s(&manifest).into(),
            "--depth".into(),
            "1".into(),
            "--base-width".into(),
            "2".into(),
            "--epochs".into(),
            epochs.into(),
            "--val-holdout".into(),
            "1".into(),
            "--out".into(),
            s(&out).into(),
        ]
    };
    let a: Vec<String> = args("3");
    ok(unetsr(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    for f in [
        "latest.usrc",
        "best.usrc",
        "train_report.csv",
        "train_report.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let latest = Checkpoint::load(&out.join("latest.usrc")).unwrap();
    assert_eq!(latest.epoch, 3);
    assert_eq!(latest.net_config.depth, 1);
    let csv = std::fs::read_to_string(out.join("train_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let mut resume = args("5");
    resume.extend(["--resume".into(), s(&out.join("latest.usrc")).into()]);
    ok(unetsr(
        &resume.iter().map(String::as_str).collect::<Vec<_>>(),
    ));
    assert_eq!(Checkpoint::load(&out.join("latest.usrc")).unwrap().epoch, 5);

    let mut clash = args("6");
    clash[4] = "2".into();
    clash.extend(["--resume".into(), s(&out.join("latest.usrc")).into()]);
    let o = unetsr(&clash.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
}

fn read_rows(csv: &Path) -> Vec<(String, u32, f64, f64)> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("path,scale,psnr_db,ssim"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 4, "{l}");
            (
                f[0].to_string(),
                f[1].parse().unwrap(),
                parse_psnr(f[2]).unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn eval_identity_and_bicubic_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = pairs(dir.path());
    let (csv, json) = (dir.path().join("m/id.csv"), dir.path().join("m/id.json"));
    let o = ok(unetsr(&[
        "eval",
        "--pairs",
        s(&manifest),
        "--method",
        "identity",
        "--out-csv",
        s(&csv),
        "--out-json",
        s(&json),
    ]));
    let rows = read_rows(&csv);
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.2 == f64::INFINITY && r.3 == 1.0 && r.1 == 2));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["mean_psnr_db"], "inf");
    assert_eq!(summary["count"], 3);

    let (csv, json) = (dir.path().join("bic.csv"), dir.path().join("bic.json"));
    ok(unetsr(&[
        "eval",
        "--pairs",
        s(&manifest),
        "--method",
        "bicubic",
        "--out-csv",
        s(&csv),
        "--out-json",
        s(&json),
    ]));
    let rows = read_rows(&csv);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let mean_psnr = rows.iter().map(|r| r.2).sum::<f64>() / 3.0;
    let mean_ssim = rows.iter().map(|r| r.3).sum::<f64>() / 3.0;
    assert!((summary["mean_psnr_db"].as_f64().unwrap() - mean_psnr).abs() <= 1e-12);
    assert!((summary["mean_ssim"].as_f64().unwrap() - mean_ssim).abs() <= 1e-12);
    assert!(rows
        .iter()
        .all(|r| r.2.is_finite() && r.2 > 10.0 && r.3 < 1.0));

    let o = unetsr(&[
        "eval",
        "--pairs",
        s(&manifest),
        "--method",
        "model",
        "--out-csv",
        s(&csv),
        "--out-json",
        s(&json),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sr_output_is_scaled_deterministic_and_pads_by_replication() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::build(NetConfig {
        seed: 2,
        ..NetConfig::new(2, 2, 3)
    })
    .unwrap();
    let ckpt = dir.path().join("m.usrc");
    Checkpoint::from_model(&model, None, 0, 1e-3)
        .save(&ckpt)
        .unwrap();

    // 10x14 is not a multiple of 4; the manual version pads to 12x16
    let odd = pattern(10, 14, 1);
    let padded = {
        let t = odd.to_tensor();
        let p = Tensor::from_fn(&[1, 3, 12, 16], |i| {
            let (c, y, x) = (i / 192, (i % 192) / 16, i % 16);
            t.data()[c * 140 + y.min(9) * 14 + x.min(13)]
        });
        ImageBuf::from_tensor(&p).unwrap()
    };
    odd.save_png(&dir.path().join("odd.png")).unwrap();
    padded.save_png(&dir.path().join("pad.png")).unwrap();

    for (inp, out) in [
        ("odd.png", "a.png"),
        ("odd.png", "b.png"),
        ("pad.png", "p.png"),
    ] {
        ok(unetsr(&[
            "sr",
            "--ckpt",
            s(&ckpt),
            "--in",
            s(&dir.path().join(inp)),
            "--out",
            s(&dir.path().join(out)),
        ]));
    }
    let a = ImageBuf::open(&dir.path().join("a.png")).unwrap();
    let b = std::fs::read(dir.path().join("b.png")).unwrap();
    assert_eq!((a.height, a.width), (20, 28));
    assert_eq!(std::fs::read(dir.path().join("a.png")).unwrap(), b);

    let p = ImageBuf::open(&dir.path().join("p.png")).unwrap();
    assert_eq!((p.height, p.width), (24, 32));
    for y in 0..20 {
        for x in 0..28 {
            let (i, j) = ((y * 28 + x) * 3, (y * 32 + x) * 3);
            assert_eq!(a.pixels[i..i + 3], p.pixels[j..j + 3], "pixel ({y}, {x})");
        }
    }
}

#[test]
fn sweeps_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = pairs(dir.path());
    let common = [
        "--pairs",
        s(&manifest),
        "--epochs",
        "1",
        "--base-width",
        "2",
    ];
    let o = ok(unetsr(
        &[&["sweep-depth", "--depths", "1,2"], &common[..]].concat(),
    ));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "depth,param_count,psnr_db");
    assert_eq!(lines.len(), 3);

    let out = dir.path().join("lambda.csv");
    ok(unetsr(
        &[
            &[
                "sweep-lambda",
                "--depth",
                "1",
                "--lambdas",
                "0,0.1",
                "--out",
                s(&out),
            ],
            &common[..],
        ]
        .concat(),
    ));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("lambda_g,psnr_db,mge"));
    assert_eq!(text.lines().count(), 3);
}
