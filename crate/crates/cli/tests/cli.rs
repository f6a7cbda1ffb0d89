use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raddr_core::deconv::{convolve_spatial, Kernel};
use raddr_core::io::{load_model, read_pfm, write_pfm, write_png, FloatImage};
use raddr_core::synthcam::render_scene;
use raddr_core::synthcam::scenes::{procedural_image, shade, sphere_normals, ten_lights};
use raddr_core::CameraModel;

fn raddr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raddr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = raddr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic camera with its prior hull, written into `dir`.
fn synth(dir: &Path) -> (PathBuf, CameraModel) {
    let model = dir.join("truth.json");
    ok(&["synth", "--seed", "3", "--out-model", s(&model), "--out-data", s(&dir.join("chart.csv"))]);
    let (m, prior) = load_model(&model).unwrap();
    assert!(prior.is_some());
    (model, m)
}

#[test]
fn help_documents_units_and_exit_codes() {
    let out = ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("RAW values are linear in [0,1]"));
    assert!(text.contains("gray levels"));
    assert!(text.contains("3 data error"));
    for cmd in ["calibrate", "derender", "fuse", "pstereo", "deconv", "synth", "bench"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let text = String::from_utf8(ok(&["derender", "--help"]).stdout).unwrap();
    assert!(text.contains("RAW^2 units"));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(raddr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(raddr(&["calibrate", "--data", "x.csv"]).status.code(), Some(2));
    let bad_lambda = raddr(&[
        "deconv", "--model", "m", "--in", "i", "--kernel", "k", "--lambda", "-3", "--out", "o",
    ]);
    assert_eq!(bad_lambda.status.code(), Some(2));
    assert_eq!(raddr(&["bench", "--suite", "nope", "--out", "r.json"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = raddr(&["calibrate", "--data", s(&dir.path().join("none.csv")), "--out", "m.json"]);
    assert_eq!(missing.status.code(), Some(3));

    let (model, _) = synth(dir.path());
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    doc["gamma"][1] = "steep".into();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, doc.to_string()).unwrap();
    let png = dir.path().join("a.png");
    write_png(&png, &render_scene(&CameraModel::identity(), &procedural_image(4, 4, 0), 1.0)).unwrap();
    let out = raddr(&[
        "derender", "--model", s(&broken), "--in", s(&png), "--out-mu", "mu.pfm", "--out-sigma", "s.pfm",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma[1]"));
}

#[test]
fn numerical_failures_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = synth(dir.path());
    let lights = dir.path().join("lights.csv");
    // Coplanar directions cannot resolve a normal.
    std::fs::write(&lights, "1,0,0\n0,1,0\n0.6,0.8,0\n-1,0,0\n0,-1,0\n").unwrap();
    let png = dir.path().join("a.png");
    write_png(&png, &render_scene(&CameraModel::identity(), &procedural_image(4, 4, 0), 1.0)).unwrap();
    let p = s(&png);
    let out = raddr(&[
        "pstereo", "--model", s(&model), "--lights", s(&lights), "--images", p, p, p, p, p,
        "--out-normals", "n.pfm", "--out-depth", "d.pfm",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_and_calibrate_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for tag in ["a", "b"] {
        ok(&[
            "synth", "--seed", "1",
            "--out-model", s(&d.join(format!("{tag}.json"))),
            "--out-data", s(&d.join(format!("{tag}.csv"))),
        ]);
    }
    let read = |n: &str| std::fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_eq!(read("a.csv"), read("b.csv"));

    ok(&["--threads", "1", "calibrate", "--data", s(&d.join("a.csv")), "--out", s(&d.join("fit1.json"))]);
    ok(&["calibrate", "--data", s(&d.join("a.csv")), "--out", s(&d.join("fit2.json"))]);
    assert_eq!(read("fit1.json"), read("fit2.json"));
    let (fit, prior) = load_model(&d.join("fit1.json")).unwrap();
    assert!(prior.is_some());
    let (truth, _) = load_model(&d.join("a.json")).unwrap();
    // The fit agrees with the truth camera to within a few gray levels.
    let x = raddr_core::RawColor([0.3, 0.2, 0.1]);
    let (a, b) = (fit.render(&x).as_f64(), truth.render(&x).as_f64());
    assert!((0..3).all(|c| (a[c] - b[c]).abs() <= 3.0), "{a:?} vs {b:?}");
}

#[test]
fn derender_writes_means_and_packed_covariances() {
    let dir = tempfile::tempdir().unwrap();
    let (model, m) = synth(dir.path());
    let sharp = procedural_image(9, 7, 5);
    let png = dir.path().join("in.png");
    write_png(&png, &render_scene(&m, &sharp, 1.0)).unwrap();
    let (mu, sigma) = (dir.path().join("mu.pfm"), dir.path().join("sigma.pfm"));
    ok(&[
        "derender", "--model", s(&model), "--in", s(&png), "--out-mu", s(&mu), "--out-sigma", s(&sigma),
        "--grid", "32",
    ]);
    let mu = read_pfm(&mu).unwrap();
    let sigma = read_pfm(&sigma).unwrap();
    assert_eq!((mu.width, mu.height, mu.channels), (9, 7, 3));
    assert_eq!((sigma.width, sigma.height, sigma.channels), (9, 7, 6));
    let err = mu
        .data
        .iter()
        .zip(sharp.data.iter().flatten())
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 0.05, "max mean error {err}");
    for px in sigma.data.chunks(6) {
        // Diagonal entries xx, yy, zz are variances.
        assert!(px[0] >= 0.0 && px[3] >= 0.0 && px[5] >= 0.0);
    }
}

#[test]
fn fuse_recovers_a_unit_exposure_image() {
    let dir = tempfile::tempdir().unwrap();
    let (model, m) = synth(dir.path());
    let truth = procedural_image(10, 8, 2).map(|p| p.map(|v| 0.5 * v));
    let mut list = String::from("path,exposure\n");
    for (i, e) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let name = format!("e{i}.png");
        write_png(&dir.path().join(&name), &render_scene(&m, &truth, e)).unwrap();
        list += &format!("{name},{e}\n");
    }
    let stack = dir.path().join("stack.csv");
    std::fs::write(&stack, list).unwrap();
    for method in ["det", "prob"] {
        let out = dir.path().join(format!("{method}.pfm"));
        ok(&[
            "fuse", "--model", s(&model), "--stack", s(&stack), "--out", s(&out), "--method", method, "--grid", "32",
        ]);
        let hdr = read_pfm(&out).unwrap().to_raw().unwrap();
        let n = truth.data.len() as f64 * 3.0;
        let rmse = (hdr
            .data
            .iter()
            .zip(&truth.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).powi(2)))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!(rmse < 0.01, "{method}: rmse {rmse}");
    }
}

#[test]
fn pstereo_recovers_sphere_normals() {
    let dir = tempfile::tempdir().unwrap();
    let (model, m) = synth(dir.path());
    let normals = sphere_normals(16);
    let lights = ten_lights();
    let mut images = Vec::new();
    for (i, l) in lights.iter().enumerate() {
        let p = dir.path().join(format!("l{i}.png"));
        write_png(&p, &render_scene(&m, &shade(&normals, [0.7, 0.6, 0.5], *l, 0.8), 1.0)).unwrap();
        images.push(p);
    }
    let csv: String = lights.iter().map(|l| format!("{},{},{}\n", l[0], l[1], l[2])).collect();
    let lights_path = dir.path().join("lights.csv");
    std::fs::write(&lights_path, csv).unwrap();
    for mode in ["det", "prob"] {
        let (n_out, d_out) = (dir.path().join("n.pfm"), dir.path().join("d.pfm"));
        let mut args = vec![
            "pstereo", "--model", s(&model), "--lights", s(&lights_path), "--mode", mode,
            "--out-normals", s(&n_out), "--out-depth", s(&d_out), "--grid", "32", "--images",
        ];
        args.extend(images.iter().map(|p| s(p)));
        ok(&args);
        let est = read_pfm(&n_out).unwrap().to_raw().unwrap();
        let depth = read_pfm(&d_out).unwrap();
        assert_eq!((depth.width, depth.height, depth.channels), (16, 16, 1));
        let mut errors: Vec<f64> = normals
            .data
            .iter()
            .zip(&est.data)
            .filter_map(|(t, e)| {
                let t = (*t)?;
                let dot = (0..3).map(|c| t[c] * e[c]).sum::<f64>().clamp(-1.0, 1.0);
                Some(dot.acos().to_degrees())
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = errors[errors.len() / 2];
        assert!(median < 3.0, "{mode}: median error {median} deg");
    }
}

#[test]
fn deconv_runs_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (model, m) = synth(dir.path());
    let sharp = procedural_image(16, 12, 4);
    let box3 = Kernel::normalized(3, 3, vec![1.0; 9]).unwrap();
    let png = dir.path().join("blurry.png");
    write_png(&png, &render_scene(&m, &convolve_spatial(&sharp, &box3), 1.0)).unwrap();
    let kernel = dir.path().join("k.pfm");
    // Unnormalized taps are scaled to unit sum on load.
    write_pfm(
        &kernel,
        &FloatImage {
            width: 3,
            height: 3,
            channels: 1,
            data: vec![2.0; 9],
        },
    )
    .unwrap();
    for (mode, lambda) in [("det", "auto"), ("prob", "auto"), ("det", "500")] {
        let out = dir.path().join("sharp.pfm");
        ok(&[
            "deconv", "--model", s(&model), "--in", s(&png), "--kernel", s(&kernel), "--mode", mode,
            "--lambda", lambda, "--out", s(&out), "--grid", "32",
        ]);
        let z = read_pfm(&out).unwrap();
        assert_eq!((z.width, z.height, z.channels), (16, 12, 3));
        assert!(z.data.iter().all(|v| v.is_finite() && *v >= 0.0 && *v < 1.5));
    }
}

#[test]
fn fusion_bench_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&["bench", "--suite", "fusion", "--seed", "0", "--out", s(&a)]);
    ok(&["bench", "--suite", "fusion", "--seed", "0", "--out", s(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let win = v["summary"]["win_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&win));
    assert!(v["trials"].as_array().unwrap().len() > 0);
    assert!(v["trials"][0]["deterministic"].is_number());
}
