use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use aosa::saliency::pipeline::SaliencyMap;
use aosa::tensor_io::{load_video, save_video};
use aosa::{VideoDims, VideoTensor};

const BIN: &str = env!("CARGO_BIN_EXE_aosa");

fn aosa(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("AOSA_CONFIG").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small trained model plus exported clips, built once per test binary.
struct Fixture {
    dir: PathBuf,
    model: PathBuf,
    clips: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let model = dir.join("model.json");
        let clips = dir.join("clips");
        let out = aosa(&[
            "train", "--out", s(&model), "--frames", "4", "--height", "16", "--width", "16",
            "--per-class", "2", "--epochs", "2", "--seed", "3", "--export", s(&clips),
            "--export-per-class", "1",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Fixture { dir, model, clips }
    })
}

fn first_clip() -> PathBuf {
    let mut clips: Vec<PathBuf> = fs::read_dir(&fixture().clips)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "aost"))
        .collect();
    clips.sort();
    clips.remove(0)
}

fn explain(out: &Path, extra: &[&str]) -> Output {
    let f = fixture();
    let clip = first_clip();
    let mut args = vec![
        "explain", "--model", s(&f.model), "--video", s(&clip), "--out", s(out), "--s", "4",
        "--occ-h", "6", "--occ-w", "6", "--K", "2",
    ];
    args.extend_from_slice(extra);
    aosa(&args)
}

fn sidecar(path: &Path) -> String {
    fs::read_to_string(SaliencyMap::sidecar_path(path)).unwrap()
}

fn sidecar_value(path: &Path, key: &str) -> String {
    sidecar(path)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in sidecar"))
}

#[test]
fn missing_video_exits_2_without_outputs() {
    let f = fixture();
    let out = f.dir.join("missing.aost");
    let r = aosa(&["explain", "--model", s(&f.model), "--video", "/nonexistent/clip.aost", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    assert!(!SaliencyMap::sidecar_path(&out).exists());
}

#[test]
fn wrong_video_size_exits_3() {
    let f = fixture();
    let video = f.dir.join("small.aost");
    save_video(&VideoTensor::filled(VideoDims::new(4, 8, 8, 3), 0.5).unwrap(), &video).unwrap();
    let out = f.dir.join("small_map.aost");
    let r = aosa(&["explain", "--model", s(&f.model), "--video", s(&video), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.exists());
}

#[test]
fn approx_explain_records_few_calls() {
    let out = fixture().dir.join("approx.aost");
    let r = explain(&out, &["--method", "approx"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(sidecar_value(&out, "method"), "approx");
    assert!(sidecar_value(&out, "forwards").parse::<u64>().unwrap() <= 3);
    assert!(sidecar_value(&out, "backwards").parse::<u64>().unwrap() <= 3);
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.starts_with("method=approx"), "{stdout}");
}

#[test]
fn exact_explain_is_byte_deterministic() {
    let dir = &fixture().dir;
    let (a, b) = (dir.join("det_a.aost"), dir.join("det_b.aost"));
    for p in [&a, &b] {
        let r = explain(p, &["--fill", "cond", "--mc-samples", "2", "--seed", "9"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(sidecar(&a), sidecar(&b));
    let map = SaliencyMap::load(&a).unwrap();
    assert_eq!(map.meta.seed, 9);
    assert!(map.matches(load_video(first_clip()).unwrap().dims()));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = &fixture().dir;
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, "# run settings\nmethod=approx\nseed=4\n").unwrap();

    let from_file = dir.join("cfg_file.aost");
    let r = explain(&from_file, &["--config", s(&cfg)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(sidecar_value(&from_file, "method"), "approx");
    assert_eq!(sidecar_value(&from_file, "seed"), "4");

    let overridden = dir.join("cfg_flag.aost");
    let r = explain(&overridden, &["--config", s(&cfg), "--method", "exact"]);
    assert!(r.status.success());
    assert_eq!(sidecar_value(&overridden, "method"), "exact");
    assert_eq!(sidecar_value(&overridden, "seed"), "4");

    let f = fixture();
    let clip = first_clip();
    let via_env = dir.join("cfg_env.aost");
    let r = Command::new(BIN)
        .args(["explain", "--model", s(&f.model), "--video", s(&clip), "--out", s(&via_env), "--s", "4", "--occ-h", "6", "--occ-w", "6"])
        .env("AOSA_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(r.status.success());
    assert_eq!(sidecar_value(&via_env, "method"), "approx");
}

#[test]
fn eval_writes_grouped_rows_and_means() {
    let f = fixture();
    let csv = f.dir.join("eval.csv");
    let r = aosa(&[
        "eval", "--model", s(&f.model), "--synthetic", "20", "--s", "4", "--occ-h", "6", "--occ-w", "6",
        "--K", "2", "--cuboid-t", "2", "--steps", "8", "--csv", s(&csv),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 20 * 3 + 3);
    let rows: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    for method in ["aosa", "cuboid", "random"] {
        let per_clip: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == method && r[1] != "mean").collect();
        assert_eq!(per_clip.len(), 20);
        let mean_row = rows.iter().find(|r| r[0] == method && r[1] == "mean").unwrap();
        for col in 2..5 {
            let recomputed = per_clip.iter().map(|r| r[col].parse::<f64>().unwrap()).sum::<f64>() / 20.0;
            let reported: f64 = mean_row[col].parse().unwrap();
            assert!((recomputed - reported).abs() < 1e-6, "{method} col {col}: {recomputed} vs {reported}");
        }
    }
    // Per-clip rows come grouped by method.
    let order: Vec<&str> = rows.iter().filter(|r| r[1] != "mean").map(|r| r[0]).collect();
    assert!(order[..20].iter().all(|m| *m == "aosa"));
    assert!(order[40..].iter().all(|m| *m == "random"));
}

#[test]
fn eval_on_empty_dataset_exits_2() {
    let f = fixture();
    let empty = f.dir.join("empty_dataset");
    fs::create_dir_all(&empty).unwrap();
    let r = aosa(&["eval", "--model", s(&f.model), "--dataset", s(&empty)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn render_overlays() {
    let dir = &fixture().dir;
    let map_path = dir.join("render_src.aost");
    assert!(explain(&map_path, &[]).status.success());
    let mut map = SaliencyMap::load(&map_path).unwrap();

    let d = VideoDims::new(map.frames, map.height, map.width, 3);
    let video_path = dir.join("gray.aost");
    save_video(&VideoTensor::filled(d, 0.4).unwrap(), &video_path).unwrap();

    map.values.iter_mut().for_each(|v| *v = 0.0);
    let zero = dir.join("zero_map.aost");
    map.save(&zero).unwrap();
    let out = dir.join("render_zero");
    let r = aosa(&["render", "--map", s(&zero), "--video", s(&video_path), "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let header = format!("P6\n{} {}\n255\n", map.width, map.height);
    for t in 0..map.frames {
        let bytes = fs::read(out.join(format!("frame_{t:03}.ppm"))).unwrap();
        assert!(bytes.starts_with(header.as_bytes()));
        assert!(bytes[header.len()..].iter().all(|&b| b == 102));
    }

    let hot = map.width + 1;
    map.values[hot] = 1.0;
    let one = dir.join("hot_map.aost");
    map.save(&one).unwrap();
    let out = dir.join("render_hot");
    assert!(aosa(&["render", "--map", s(&one), "--video", s(&video_path), "--out", s(&out)]).status.success());
    let px = &fs::read(out.join("frame_000.ppm")).unwrap()[header.len()..];
    let red: Vec<usize> = (0..px.len() / 3).filter(|&p| px[3 * p..3 * p + 3] == [255, 0, 0]).collect();
    assert_eq!(red, vec![hot]);
}

#[test]
fn selftest_passes() {
    let r = aosa(&["selftest", "--seed", "2"]);
    assert!(r.status.success());
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}
