use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hagxai::attention::{write_attention_maps, AttentionMap};
use hagxai::bridge::archive::write_bundle;
use hagxai::bridge::client::decode_png_base64;
use hagxai::bridge::npy::read_map;
use hagxai::cam::fullgrad_cam_pp;
use hagxai::hag::HagParams;
use hagxai::synthetic::{hidden_params, random_bundles, recovery_dataset, BundleShape};
use hagxai::tensor::Dense;
use hagxai::{ExplanationBundle, Task};
use serde_json::Value;
use tempfile::TempDir;

fn hagxai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hagxai"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_bundles(dir: &Path, bundles: &[ExplanationBundle]) {
    for b in bundles {
        write_bundle(b, &dir.join(&b.image_id)).unwrap();
    }
}

fn sample_bundles(dir: &Path, n: usize) -> Vec<ExplanationBundle> {
    let shape = BundleShape {
        image: (16, 20),
        branches: vec![(4, 5), (8, 10)],
        channels: 3,
        objects: (1, 3),
    };
    let bundles = random_bundles(n, &shape, 21);
    write_bundles(dir, &bundles);
    bundles
}

const FIXATIONS: &str = "image_id,participant_id,x,y,duration_ms
a,p1,10.5,8.0,200
a,p2,30.0,20.0,150
b,p1,5.0,5.0,
";

#[test]
fn attention_writes_one_map_per_image_deterministically() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("fix.csv");
    std::fs::write(&csv, FIXATIONS).unwrap();
    let run = |out: &Path| {
        hagxai(&["attention", p(&csv), "--height", "24", "--width", "40", "--sigma", "3", "--out", p(out)])
    };
    let (o1, o2) = (tmp.path().join("o1"), tmp.path().join("o2"));
    assert_eq!(code(&run(&o1)), 0);
    assert_eq!(code(&run(&o2)), 0);
    let index = read_json(&o1.join("index.json"));
    assert_eq!(index["a"]["h"], 24);
    assert_eq!(index["b"]["sigma_px"], 3.0);
    for f in ["a.npy", "b.npy", "index.json"] {
        assert_eq!(std::fs::read(o1.join(f)).unwrap(), std::fs::read(o2.join(f)).unwrap());
    }
    let a = read_map(&o1.join("a.npy")).unwrap();
    assert_eq!(a.min_max().1, 1.0);
    let resolved = std::fs::read_to_string(o1.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("sigma = 3.0"), "{resolved}");
}

#[test]
fn attention_usage_and_data_errors() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("fix.csv");
    std::fs::write(&csv, FIXATIONS).unwrap();
    let out = tmp.path().join("o");
    let zero = hagxai(&["attention", p(&csv), "--height", "24", "--width", "40", "--sigma", "0", "--out", p(&out)]);
    assert_eq!(code(&zero), 1, "{}", stderr(&zero));
    let small = hagxai(&["attention", p(&csv), "--height", "10", "--width", "10", "--out", p(&out)]);
    assert_eq!(code(&small), 2, "{}", stderr(&small));
    let missing = hagxai(&["attention", "--height", "10", "--width", "10", "--out", p(&out)]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn explain_fgcpp_matches_library_and_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let bundles = sample_bundles(&tmp.path().join("bundles"), 3);
    let out = tmp.path().join("out");
    let run = hagxai(&["explain", "--method", "fgcpp", "--bundles", p(&tmp.path().join("bundles")), "--out", p(&out)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for b in &bundles {
        let got = read_map(&out.join("fgcpp").join(format!("{}.npy", b.image_id))).unwrap();
        let want = fullgrad_cam_pp(b).unwrap().map;
        assert_eq!(got, want);
        let meta = read_json(&out.join("fgcpp").join(format!("{}.json", b.image_id)));
        assert_eq!(meta["method"], "fgcpp");
        assert_eq!(meta["colormap"], "viridis");
        assert_eq!(meta["objects"].as_array().unwrap().len(), b.objects.len());
        let png = image::open(out.join("fgcpp").join(format!("{}.png", b.image_id))).unwrap();
        assert_eq!((png.height(), png.width()), (16, 20));
    }
}

#[test]
fn explain_rejects_unknown_method_and_missing_params() {
    let tmp = TempDir::new().unwrap();
    sample_bundles(&tmp.path().join("bundles"), 1);
    let bundles = tmp.path().join("bundles");
    let bad = hagxai(&["explain", "--method", "gradcam", "--bundles", p(&bundles)]);
    assert_eq!(code(&bad), 1);
    let msg = stderr(&bad);
    for m in ["gc", "gcpp", "fgc", "fgcpp", "hag"] {
        assert!(msg.contains(m), "{msg}");
    }
    let hag = hagxai(&["explain", "--method", "hag", "--bundles", p(&bundles), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(code(&hag), 1, "{}", stderr(&hag));
}

#[test]
fn degenerate_hag_reproduces_fgcpp() {
    let tmp = TempDir::new().unwrap();
    let bundles_dir = tmp.path().join("bundles");
    sample_bundles(&bundles_dir, 4);
    let params = tmp.path().join("init.json");
    let init = HagParams::initial(Task::Detection).to_file(Task::Detection, None);
    std::fs::write(&params, serde_json::to_string(&init).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let run = hagxai(&[
        "explain", "--method", "hag", "--method", "fgcpp", "--params", p(&params), "--delta-kernels",
        "--maxmin-norm", "--bundles", p(&bundles_dir), "--out", p(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for i in 0..4 {
        let name = format!("syn_{i:04}.npy");
        let hag = read_map(&out.join("hag").join(&name)).unwrap();
        let cam = read_map(&out.join("fgcpp").join(&name)).unwrap();
        for (a, b) in hag.values().iter().zip(cam.values()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

fn recovery_fixture(root: &Path, n: usize) -> (PathBuf, PathBuf) {
    let task = Task::Detection;
    let shape = BundleShape::single((16, 16), (8, 8), 4, 2);
    let data = recovery_dataset(n, &shape, task, &hidden_params(task), 13);
    let bundles: Vec<ExplanationBundle> = data.iter().map(|s| s.bundle.clone()).collect();
    let maps: Vec<AttentionMap> = data
        .iter()
        .map(|s| AttentionMap {
            image_id: s.bundle.image_id.clone(),
            map: s.target.cast(),
            sigma_px: 1.0,
        })
        .collect();
    let (bdir, adir) = (root.join("bundles"), root.join("attention"));
    write_bundles(&bdir, &bundles);
    write_attention_maps(&adir, &maps).unwrap();
    (bdir, adir)
}

#[test]
fn train_recovers_synthetic_generator_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let (bdir, adir) = recovery_fixture(tmp.path(), 40);
    let run = |out: &Path| {
        hagxai(&["train", "--bundles", p(&bdir), "--attention", p(&adir), "--folds", "4", "--seed", "3", "--out", p(out)])
    };
    let (o1, o2) = (tmp.path().join("o1"), tmp.path().join("o2"));
    for o in [&o1, &o2] {
        let r = run(o);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
    let summary = read_json(&o1.join("summary.json"));
    assert!(summary["mean_validation"]["pcc"].as_f64().unwrap() > 0.9, "{summary}");
    assert_eq!(summary["per_fold"].as_array().unwrap().len(), 4);
    for k in 0..4 {
        let name = format!("params_fold{k}.json");
        assert_eq!(std::fs::read(o1.join(&name)).unwrap(), std::fs::read(o2.join(&name)).unwrap());
        let csv = std::fs::read_to_string(o1.join(format!("loss_fold{k}.csv"))).unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
    }
    let params = read_json(&o1.join("params.json"));
    assert_eq!(params["kernel_size"], 21);
    assert_eq!(params["schema_version"], 1);
}

#[test]
fn train_needs_two_folds() {
    let tmp = TempDir::new().unwrap();
    let (bdir, adir) = recovery_fixture(tmp.path(), 4);
    let r = hagxai(&["train", "--bundles", p(&bdir), "--attention", p(&adir), "--folds", "1"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn eval_plausibility_only_and_condition_table() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("fix.csv");
    std::fs::write(&csv, FIXATIONS).unwrap();
    let att = tmp.path().join("att");
    assert_eq!(code(&hagxai(&["attention", p(&csv), "--height", "24", "--width", "40", "--sigma", "4", "--out", p(&att)])), 0);
    let labels = tmp.path().join("labels.csv");
    std::fs::write(&labels, "image_id,occlusion,degradation\na,1,0\nb,0,0\n").unwrap();
    let out = tmp.path().join("eval");
    let r = hagxai(&[
        "eval", "--saliency", p(&att), "--method", "gc", "--attention", p(&att), "--labels", p(&labels),
        "--out", p(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let report = read_json(&out.join("metrics.json"));
    let s = &report["summary"][0];
    assert!((s["pcc"]["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(s["rmse"]["mean"].as_f64().unwrap(), 0.0);
    assert!(s["d_auc"].is_null() && s["i_auc"].is_null());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",,")), "{csv}");
    let table = std::fs::read_to_string(out.join("conditions.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 9);
    assert!(table.contains("gc,occlusion=Y,1,"), "{table}");
}

fn serve_brightness() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            std::thread::spawn(move || reply(stream));
        }
    });
    format!("http://{addr}")
}

fn reply(mut stream: TcpStream) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let mut length = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let body = if line.contains("/health") {
        r#"{"model_id":"m","task":"detection","status":"ok"}"#.to_string()
    } else {
        let req: Value = serde_json::from_slice(&body).unwrap();
        let scores: Vec<f64> = req["images"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| {
                let img = decode_png_base64(s.as_str().unwrap()).unwrap();
                img.pixels().map(|p| p[0] as f64).sum::<f64>() / (255.0 * img.len() as f64 / 3.0)
            })
            .collect();
        serde_json::json!({ "scores": scores }).to_string()
    };
    let _ = write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        body.len(),
        body
    );
}

#[test]
fn eval_with_scorer_writes_curves() {
    let tmp = TempDir::new().unwrap();
    let bdir = tmp.path().join("bundles");
    let bundles = sample_bundles(&bdir, 2);
    let images = tmp.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    for b in &bundles {
        let img = image::RgbImage::from_fn(20, 16, |x, y| image::Rgb([(x * 12) as u8, (y * 15) as u8, 90]));
        img.save(images.join(format!("{}.png", b.image_id))).unwrap();
    }
    let sal = tmp.path().join("sal");
    assert_eq!(code(&hagxai(&["explain", "--method", "gc", "--bundles", p(&bdir), "--out", p(&sal)])), 0);
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "[perturbation]\nsteps = 10\nstep_area_fraction = 0.1\nfill_mode = \"black\"\n").unwrap();
    let out = tmp.path().join("eval");
    let url = serve_brightness();
    let r = hagxai(&[
        "eval", "--config", p(&config), "--saliency", p(&sal.join("gc")), "--scorer", &url, "--images", p(&images),
        "--bundles", p(&bdir), "--out", p(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 2 * 11);
    for b in &bundles {
        assert!(out.join("curves").join(format!("{}.svg", b.image_id)).is_file());
    }
    let report = read_json(&out.join("metrics.json"));
    for img in report["images"].as_array().unwrap() {
        let (d, i) = (img["d_auc"].as_f64().unwrap(), img["i_auc"].as_f64().unwrap());
        assert!(d > 0.0 && i > 0.0);
        assert!(img["pcc"].is_null());
    }
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("steps = 10"), "{resolved}");
}

#[test]
fn unreachable_scorer_exits_with_remote_code() {
    let tmp = TempDir::new().unwrap();
    let bdir = tmp.path().join("bundles");
    let bundles = sample_bundles(&bdir, 1);
    let images = tmp.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    image::RgbImage::new(20, 16).save(images.join(format!("{}.png", bundles[0].image_id))).unwrap();
    let sal = tmp.path().join("sal");
    assert_eq!(code(&hagxai(&["explain", "--method", "gc", "--bundles", p(&bdir), "--out", p(&sal)])), 0);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "[scorer]\nretries = 0\n").unwrap();
    let r = hagxai(&[
        "eval", "--config", p(&config), "--saliency", p(&sal.join("gc")), "--scorer", &format!("http://127.0.0.1:{port}"),
        "--images", p(&images), "--bundles", p(&bdir), "--out", p(&tmp.path().join("eval")),
    ]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
}

#[test]
fn config_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "[train]\nepochs = 3\n").unwrap();
    let r = hagxai(&["bundle", "validate", p(tmp.path()), "--config", p(&config)]);
    assert_eq!(code(&r), 1, "{}", stderr(&r));
    assert!(stderr(&r).contains("epochs"));
}

#[test]
fn bundle_validate_reports_invalid_archives() {
    let tmp = TempDir::new().unwrap();
    let bdir = tmp.path().join("bundles");
    sample_bundles(&bdir, 2);
    let ok = hagxai(&["bundle", "validate", p(&bdir)]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert_eq!(String::from_utf8_lossy(&ok.stdout).lines().filter(|l| l.starts_with("ok ")).count(), 2);
    std::fs::remove_file(bdir.join("syn_0001").join("act_b0.npy")).unwrap();
    let bad = hagxai(&["bundle", "validate", p(&bdir)]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("act_b0.npy"));
}
