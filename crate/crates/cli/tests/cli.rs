use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use satrestore::forward::{measure_mtf, save_forward_model};
use satrestore::io::{read_kernel, read_raster, write_raster};
use satrestore::nn::build::conv2d;
use satrestore::nn::{save_manifest, Network};
use satrestore::uncertainty::{psnr, ssim, CalibrationTable};
use satrestore::{ForwardModel, ImageGrid, Kernel, Rng};
use satrestore_cli::{EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn satrestore(args: &[&str]) -> Out {
    let out = Command::new(env!("CARGO_BIN_EXE_satrestore"))
        .args(args)
        .env("SATRESTORE_THREADS", "1")
        .output()
        .expect("binary runs");
    Out {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(args: &[&str]) -> Out {
    let out = satrestore(args);
    assert_eq!(out.code, EXIT_OK, "{args:?}\n{}", out.stderr);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn identity_model(dir: &Path) -> PathBuf {
    let path = dir.join("identity.json");
    let fm = ForwardModel::new(Kernel::identity(), 1, 0.01, 0.0).unwrap();
    save_forward_model(&path, &fm, "identity.kernel.f32r").unwrap();
    path
}

/// Synthetic pairs through a blurring model; returns the simulate directory.
fn simulated(dir: &Path, count: usize, size: usize, seed: u64) -> PathBuf {
    let sim = dir.join("sim");
    let kernel = dir.join("psf.f32r");
    ok(&["psf", "--mtf", "0.3", "--size", "5", "--output", s(&kernel)]);
    let model = dir.join("fm.json");
    let fm = ForwardModel::new(read_kernel(&kernel).unwrap(), 1, 0.01, 1e-3).unwrap();
    save_forward_model(&model, &fm, "fm.kernel.f32r").unwrap();
    ok(&[
        "simulate",
        "--synthetic",
        &count.to_string(),
        "--size",
        &size.to_string(),
        "--model",
        s(&model),
        "--seed",
        &seed.to_string(),
        "--output",
        s(&sim),
    ]);
    sim
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(satrestore(&["--help"]).code, EXIT_OK);
    assert_eq!(satrestore(&["--version"]).code, EXIT_OK);
    assert_eq!(satrestore(&[]).code, EXIT_CONFIG);
    assert_eq!(satrestore(&["restore", "--bogus"]).code, EXIT_CONFIG);
    assert_eq!(satrestore(&["psf", "--mtf", "1.5", "--output", "/dev/null"]).code, EXIT_CONFIG);
}

#[test]
fn restore_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = identity_model(dir.path());
    let out = dir.path().join("out.f32r");

    let missing = satrestore(&["restore", "--input", "nope.f32r", "--model", s(&model), "--output", s(&out)]);
    assert_eq!(missing.code, EXIT_DATA);
    assert!(missing.stderr.contains("nope.f32r"));

    let input = dir.path().join("y.f32r");
    write_raster(&input, &ImageGrid::filled(16, 16, 0.5)).unwrap();
    let unknown = satrestore(&[
        "restore", "--input", s(&input), "--model", s(&model), "--output", s(&out), "--set", "satdpir.nope=1",
    ]);
    assert_eq!(unknown.code, EXIT_CONFIG);

    let bad_config = dir.path().join("bad.json");
    fs::write(&bad_config, "{ not json").unwrap();
    assert_eq!(satrestore(&["restore", "--config", s(&bad_config)]).code, EXIT_CONFIG);

    let nan = dir.path().join("nan.f32r");
    let mut img = ImageGrid::filled(16, 16, 0.5);
    img.set(3, 3, f64::NAN);
    write_raster(&nan, &img).unwrap();
    let bad_input = satrestore(&["restore", "--input", s(&nan), "--model", s(&model), "--output", s(&out)]);
    assert_eq!(bad_input.code, EXIT_DATA, "{}", bad_input.stderr);

    // every layer multiplies by 1e30, so the denoised estimate overflows
    let mut layers = vec![conv2d("c0", 2, 1, 1, 1, 0, vec![1e30, 0.0])];
    for k in 1..12 {
        layers.push(conv2d(&format!("c{k}"), 1, 1, 1, 1, 0, vec![1e30]));
    }
    let denoiser = dir.path().join("overflow.json");
    save_manifest(&denoiser, "overflow.bin", &[("denoiser", &Network::new(layers))], None).unwrap();
    let numerical = satrestore(&[
        "restore", "--input", s(&input), "--model", s(&model), "--output", s(&out), "--denoiser", s(&denoiser),
    ]);
    assert_eq!(numerical.code, EXIT_NUMERICAL, "{}", numerical.stderr);
}

#[test]
fn noiseless_identity_simulation_copies_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let model = identity_model(dir.path());
    let sim = dir.path().join("sim");
    ok(&["simulate", "--synthetic", "2", "--size", "32", "--model", s(&model), "--no-noise", "--output", s(&sim)]);
    for i in 0..2 {
        let t = fs::read(sim.join(format!("scene_{i:03}.target.f32r"))).unwrap();
        let d = fs::read(sim.join(format!("scene_{i:03}.degraded.f32r"))).unwrap();
        assert_eq!(t, d);
    }
}

#[test]
fn simulation_is_reproducible_and_replayable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = simulated(a.path(), 2, 32, 9);
    let sb = simulated(b.path(), 2, 32, 9);
    let names = files_in(&sa);
    assert_eq!(names, files_in(&sb));
    for n in names.iter().filter(|n| n.ends_with(".f32r")) {
        assert_eq!(fs::read(sa.join(n)).unwrap(), fs::read(sb.join(n)).unwrap(), "{n}");
    }

    let replay = a.path().join("replay");
    ok(&["simulate", "--replay", s(&sa.join("simulate_manifest.json")), "--output", s(&replay)]);
    for n in names.iter().filter(|n| n.starts_with("scene_")) {
        assert_eq!(fs::read(sa.join(n)).unwrap(), fs::read(replay.join(n)).unwrap(), "{n}");
    }

    let c = tempfile::tempdir().unwrap();
    let sc = simulated(c.path(), 1, 32, 10);
    assert_ne!(
        fs::read(sa.join("scene_000.degraded.f32r")).unwrap(),
        fs::read(sc.join("scene_000.degraded.f32r")).unwrap()
    );
}

#[test]
fn restorations_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 1, 32, 3);
    let y = sim.join("scene_000.degraded.f32r");
    let model = sim.join("forward_model.json");
    for method in ["satdpir", "vble_xz"] {
        let outs: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let out = dir.path().join(format!("{method}_{k}.f32r"));
                ok(&[
                    "restore", "--input", s(&y), "--model", s(&model), "--method", method, "--opt-iters", "100",
                    "--samples", "8", "--seed", "4", "--output", s(&out),
                ]);
                fs::read(out).unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1], "{method}");
    }
}

#[test]
fn a_single_tile_matches_the_untiled_run() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 1, 32, 5);
    let y = sim.join("scene_000.degraded.f32r");
    let model = sim.join("forward_model.json");
    for method in ["satdpir", "vble_xz"] {
        let plain = dir.path().join(format!("{method}_plain.f32r"));
        let tiled = dir.path().join(format!("{method}_tiled.f32r"));
        let common = ["--input", s(&y), "--model", s(&model), "--method", method, "--opt-iters", "50", "--samples", "4"];
        let mut a = vec!["restore"];
        a.extend(common);
        a.extend(["--output", s(&plain)]);
        ok(&a);
        let mut b = vec!["restore"];
        b.extend(common);
        b.extend(["--output", s(&tiled), "--tile", "32", "--overlap", "8"]);
        ok(&b);
        assert_eq!(fs::read(&plain).unwrap(), fs::read(&tiled).unwrap(), "{method}");
    }
}

#[test]
fn vble_emits_samples_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 1, 32, 6);
    let out = dir.path().join("r").join("scene.f32r");
    let report = dir.path().join("r").join("report.json");
    let trace = dir.path().join("r").join("trace.csv");
    ok(&[
        "restore", "--input", s(&sim.join("scene_000.degraded.f32r")), "--model", s(&sim.join("forward_model.json")),
        "--method", "vble_xz", "--opt-iters", "60", "--samples", "7", "--output", s(&out),
        "--report", s(&report), "--trace", s(&trace),
    ]);
    let samples = files_in(&dir.path().join("r").join("scene.samples"));
    assert_eq!(samples, (0..7).map(|k| format!("sample_{k:04}.f32r")).collect::<Vec<_>>());
    let r = dir.path().join("r");
    for name in ["scene.f32r", "scene.q.f32r", "scene.std.f32r", "report.json", "trace.csv"] {
        assert!(r.join(name).is_file(), "{name}");
    }
    let q = read_raster(r.join("scene.q.f32r")).unwrap();
    assert!(q.data().iter().all(|v| *v >= 0.0));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["method"], "vble_xz");
    let lines = fs::read_to_string(&trace).unwrap();
    assert_eq!(lines.lines().count(), 61);
    assert_eq!(lines.lines().next().unwrap(), "tile,iteration,elbo");

    let fewer = dir.path().join("r2").join("scene.f32r");
    ok(&[
        "restore", "--input", s(&sim.join("scene_000.degraded.f32r")), "--model", s(&sim.join("forward_model.json")),
        "--method", "vble", "--opt-iters", "20", "--samples", "3", "--output", s(&fewer),
    ]);
    assert_eq!(files_in(&dir.path().join("r2").join("scene.samples")).len(), 3);
}

#[test]
fn calibrate_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 2, 32, 7);
    let restored = dir.path().join("restored");
    for i in 0..2 {
        let name = format!("scene_{i:03}");
        ok(&[
            "restore", "--input", s(&sim.join(format!("{name}.degraded.f32r"))), "--model",
            s(&sim.join("forward_model.json")), "--method", "vble_xz", "--opt-iters", "150", "--samples", "12",
            "--output", s(&restored.join(format!("{name}.f32r"))),
        ]);
    }
    let table_path = dir.path().join("table.json");
    let cal = ok(&[
        "calibrate", "--truth", s(&sim), "--restored", s(&restored), "--bins", "4", "--min-occupancy", "10",
        "--output", s(&table_path),
    ]);
    let table = CalibrationTable::load(&table_path).unwrap();
    assert_eq!(table.n_bins(), 4);
    assert_eq!(table.alpha, 0.9);
    assert!(cal.stdout.lines().count() >= 4);

    let csv = dir.path().join("metrics.csv");
    ok(&["evaluate", "--truth", s(&sim), "--restored", s(&restored), "--calibration", s(&table_path), "--output", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "image,psnr,ssim,icp");
    assert_eq!(rows.len(), 4);
    let icps: Vec<f64> = rows[1..3].iter().map(|r| r.split(',').nth(3).unwrap().parse().unwrap()).collect();
    // in-sample: the pooled coverage meets the target level
    let pooled = (icps[0] + icps[1]) / 2.0;
    assert!(pooled >= 0.9 - 1.0 / (2.0f64 * 1024.0).sqrt(), "{pooled}");
    assert!(dir.path().join("metrics.coverage.csv").is_file());
    assert!(dir.path().join("metrics.coverage.svg").is_file());

    fs::remove_file(restored.join("scene_001.f32r")).unwrap();
    let missing = satrestore(&["calibrate", "--truth", s(&sim), "--restored", s(&restored), "--output", s(&table_path)]);
    assert_eq!(missing.code, EXIT_DATA);
    assert!(missing.stderr.contains("scene_001"));
}

#[test]
fn evaluate_against_itself_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 2, 32, 8);
    let csv = dir.path().join("self.csv");
    ok(&["evaluate", "--truth", s(&sim), "--restored", s(&sim), "--bound", "1e-12", "--output", s(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), 1.0, "{row}");
        assert_eq!(f[3].parse::<f64>().unwrap(), 1.0, "{row}");
    }

    let restored = dir.path().join("partial");
    fs::create_dir_all(&restored).unwrap();
    fs::copy(sim.join("scene_000.target.f32r"), restored.join("scene_000.f32r")).unwrap();
    let out = satrestore(&["evaluate", "--truth", s(&sim), "--restored", s(&restored), "--output", s(&csv)]);
    assert_eq!(out.code, EXIT_DATA);
    assert!(out.stderr.contains("scene_001"), "{}", out.stderr);
    assert!(!out.stderr.contains("scene_000"));
}

fn eval_fixture_images() -> Vec<(String, ImageGrid, ImageGrid)> {
    let mut rng = Rng::new(2024);
    (0..3)
        .map(|i| {
            let t = ImageGrid::from_fn(24, 24, |r, c| 0.5 + 0.3 * ((r * c) as f64 * 0.05).sin());
            let r = t.map(|v| v + 0.02 * (i + 1) as f64 * rng.gaussian());
            (format!("img{i}"), t, r)
        })
        .collect()
}

#[test]
#[ignore = "rewrites the evaluation fixtures"]
fn regenerate_eval_fixture() {
    let root = fixture("eval");
    fs::create_dir_all(root.join("truth")).unwrap();
    fs::create_dir_all(root.join("restored")).unwrap();
    for (name, t, r) in eval_fixture_images() {
        write_raster(root.join("truth").join(format!("{name}.f32r")), &t).unwrap();
        write_raster(root.join("restored").join(format!("{name}.f32r")), &r).unwrap();
    }
    ok(&[
        "evaluate", "--truth", s(&root.join("truth")), "--restored", s(&root.join("restored")), "--bound", "0.03",
        "--output", s(&root.join("golden.csv")),
    ]);
}

fn parse_csv(text: &str) -> Vec<(String, Vec<f64>)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            let name = f.next().unwrap().to_string();
            (name, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn evaluate_matches_golden_metrics() {
    let root = fixture("eval");
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    ok(&[
        "evaluate", "--truth", s(&root.join("truth")), "--restored", s(&root.join("restored")), "--bound", "0.03",
        "--output", s(&csv),
    ]);
    let got = parse_csv(&fs::read_to_string(&csv).unwrap());
    let want = parse_csv(&fs::read_to_string(root.join("golden.csv")).unwrap());
    assert_eq!(got.len(), want.len());
    for ((gn, gv), (wn, wv)) in got.iter().zip(&want) {
        assert_eq!(gn, wn);
        for (g, w) in gv.iter().zip(wv) {
            assert!((g - w).abs() < 1e-6, "{gn}: {g} vs {w}");
        }
    }
    // independent check of the stored rasters
    for (name, vals) in got.iter().filter(|(n, _)| n != "mean") {
        let t = read_raster(root.join("truth").join(format!("{name}.f32r"))).unwrap();
        let r = read_raster(root.join("restored").join(format!("{name}.f32r"))).unwrap();
        let mse = t.data().iter().zip(r.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
        assert!((vals[0] - 10.0 * (1.0 / mse).log10()).abs() < 1e-6);
        assert!((vals[0] - psnr(&t, &r, 1.0).unwrap()).abs() < 1e-6);
        assert!((vals[1] - ssim(&t, &r, 1.0).unwrap()).abs() < 1e-6);
        let covered = t.data().iter().zip(r.data()).filter(|(a, b)| (*a - *b).abs() <= 0.03).count();
        assert!((vals[2] - covered as f64 / t.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn psf_files() {
    let dir = tempfile::tempdir().unwrap();
    for (mtf, size) in [(0.1, 7), (0.3, 9), (0.45, 5)] {
        let path = dir.path().join(format!("k{size}.f32r"));
        let out = ok(&["psf", "--mtf", &mtf.to_string(), "--size", &size.to_string(), "--output", s(&path)]);
        let k = read_kernel(&path).unwrap();
        assert_eq!((k.height(), k.width()), (size, size));
        let (mx, my) = measure_mtf(&k);
        assert!((mx - mtf).abs() < 1e-3 && (my - mtf).abs() < 1e-3);
        assert!(out.stdout.contains(&format!("{mtf:.6}")), "{}", out.stdout);
    }
    assert_eq!(satrestore(&["psf", "--mtf", "0.2", "--size", "4", "--output", s(&dir.path().join("e.f32r"))]).code, EXIT_CONFIG);
}

#[test]
fn cae_inspect_lists_layers() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_cae/manifest.json");
    let out = ok(&["cae", "inspect", "--manifest", s(&manifest)]);
    for role in ["encoder", "decoder", "variance_decoder", "hyper_encoder", "hyper_decoder"] {
        assert!(out.stdout.contains(role), "{role}\n{}", out.stdout);
    }
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("manifest.json");
    fs::write(&broken, "{}").unwrap();
    assert_eq!(satrestore(&["cae", "inspect", "--manifest", s(&broken)]).code, EXIT_DATA);
}
