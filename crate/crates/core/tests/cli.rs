use std::path::{Path, PathBuf};
use std::process::Command;

use lmk::cli::{self, RunManifest, EXIT_FAILURE, EXIT_IO, EXIT_OK, EXIT_USAGE};
use lmk::data::{save_image, write_annotations, AnnotatedSample, BBox};
use lmk::model::{init_weights, ModelConfig};
use lmk::profile::{REFERENCE_MACS, REFERENCE_PARAMS};
use lmk::weights::WeightStore;
use lmk::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn lmk(args: &[&str]) -> Out {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(std::iter::once("lmk").chain(args.iter().copied()), &mut out, &mut err);
    Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Student weights whose generator ignores its input: every head tensor is
/// zero except the instance-norm shift, so the refined maps are a positive
/// constant and every landmark decodes to the crop centre (128, 128).
fn uniform_head_weights(dir: &Path) -> PathBuf {
    let mut w = init_weights(&ModelConfig::student(), 3);
    let names: Vec<String> = w.names().filter(|n| n.starts_with("head.")).map(String::from).collect();
    for name in names {
        let shape = w.get(&name).unwrap().shape().to_vec();
        let value = if name == "head.0.heatmap_norm.bias" { 1.0 } else { 0.0 };
        w.replace(&name, Tensor::full(&shape, value).unwrap()).unwrap();
    }
    let path = dir.join("uniform.lmkw");
    w.save(&path).unwrap();
    path
}

fn noise_image(dir: &Path, name: &str, h: usize, w: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = Tensor::new(&[3, h, w], (0..3 * h * w).map(|_| (rng.gen_range(0..256) as f32) / 255.0).collect()).unwrap();
    let path = dir.join(name);
    save_image(&img, &path).unwrap();
    path
}

#[test]
fn infer_uniform_fixture_maps_to_box_centre() {
    let dir = TempDir::new().unwrap();
    let weights = uniform_head_weights(dir.path());
    let image = noise_image(dir.path(), "face.ppm", 120, 160, 1);
    let out = dir.path().join("landmarks.txt");
    let r = lmk(&["infer", "--weights", s(&weights), "--image", s(&image), "--bbox", "10,20,100,80", "--out", s(&out)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let expected: String = (0..51).map(|i| format!("{i} 60 60\n")).collect();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), expected);

    let r = lmk(&["infer", "--weights", s(&weights), "--image", s(&image), "--bbox", "10,20,100,80", "--crop-space"]);
    assert_eq!(r.stdout, (0..51).map(|i| format!("{i} 128 128\n")).collect::<String>());
}

#[test]
fn eval_matches_hand_computed_nme_and_is_thread_invariant() {
    let dir = TempDir::new().unwrap();
    let weights = uniform_head_weights(dir.path());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut samples = Vec::new();
    let mut expected = Vec::new();
    for i in 0..4 {
        noise_image(dir.path(), &format!("img{i}.ppm"), 96, 128, i);
        let bbox = BBox::new(8.0 * i as f32, 4.0, 64.0, 64.0).unwrap();
        let centre = [bbox.x as f64 + 32.0, bbox.y as f64 + 32.0];
        let landmarks: Vec<[f32; 2]> = (0..51).map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..90.0)]).collect();
        let mean_err = landmarks.iter().map(|p| (p[0] as f64 - centre[0]).hypot(p[1] as f64 - centre[1])).sum::<f64>() / 51.0;
        expected.push(100.0 * mean_err / 10.0);
        samples.push(AnnotatedSample { image: PathBuf::from(format!("img{i}.ppm")), bbox, landmarks, teacher: None });
    }
    let ann = dir.path().join("ann.jsonl");
    write_annotations(&ann, &samples).unwrap();
    let args = |threads: &str| -> Out {
        lmk(&["eval", "--weights", s(&weights), "--annotations", s(&ann), "--norm", "const:10", "--threads", threads])
    };
    let one = args("1");
    assert_eq!(one.code, EXIT_OK, "{}", one.stderr);
    assert_eq!(one.stdout, args("3").stdout);
    let values: Vec<f64> =
        one.stdout.lines().filter(|l| l.starts_with("sample")).map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 4);
    for (got, want) in values.iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-5 * want, "{got} vs {want}");
    }
    let over = lmk(&["eval", "--weights", s(&weights), "--annotations", s(&ann), "--norm", "const:10", "--max-nme", "1"]);
    assert_eq!(over.code, EXIT_FAILURE);
}

#[test]
fn verify_all_passes_with_per_suite_counts() {
    let r = lmk(&["verify", "all", "--trials", "4", "--seed", "9"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stdout);
    for suite in ["patch-ops", "gradients", "softargmax", "weights-io"] {
        let line = r.stdout.lines().find(|l| l.starts_with(suite)).unwrap();
        assert!(line.contains("4/4 passed") && line.ends_with("ok"), "{line}");
    }
    assert_eq!(lmk(&["verify", "nonsense"]).code, EXIT_USAGE);
}

#[test]
fn profile_totals_match_reference_band() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("cost.json");
    let r = lmk(&["profile", "--alpha", "0.5", "--json", s(&json)]);
    assert_eq!(r.code, EXIT_OK);
    let total: Vec<u64> =
        r.stdout.lines().find(|l| l.starts_with("total")).unwrap().split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((total[0] as f64 / REFERENCE_PARAMS as f64 - 1.0).abs() < 0.10);
    assert!((total[1] as f64 / REFERENCE_MACS as f64 - 1.0).abs() < 0.10);
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(parsed["params"], total[0]);
    assert_eq!(lmk(&["profile", "--alpha", "-1"]).code, EXIT_USAGE);
}

#[test]
fn manifest_replay_is_bit_exact() {
    let dir = TempDir::new().unwrap();
    let weights = dir.path().join("toy.lmkw");
    let manifest = dir.path().join("run.json");
    let first = lmk(&["distill-toy", "--steps", "6", "--seed", "4", "--out-weights", s(&weights), "--manifest", s(&manifest)]);
    assert_eq!(first.code, EXIT_OK, "{}", first.stderr);
    assert_eq!(first.stdout.lines().count(), 6);
    let bytes = std::fs::read(&weights).unwrap();
    let m = RunManifest::load(&manifest).unwrap();
    assert_eq!(m.seeds["distill"], 4);
    assert_eq!(m.outputs, vec![weights.clone()]);
    assert_eq!(m.exit_code, EXIT_OK);

    std::fs::remove_file(&weights).unwrap();
    let again = lmk(&["replay", s(&manifest)]);
    assert_eq!(again.code, EXIT_OK);
    assert_eq!(again.stdout, first.stdout);
    assert_eq!(std::fs::read(&weights).unwrap(), bytes);
    let line = again.stderr.lines().find(|l| l.starts_with("lmk-manifest ")).unwrap();
    let echoed: RunManifest = serde_json::from_str(line.trim_start_matches("lmk-manifest ")).unwrap();
    assert_eq!(echoed.command, m.command);
}

#[test]
fn augment_preview_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let image = noise_image(dir.path(), "a.ppm", 100, 100, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<AnnotatedSample> = (0..2)
        .map(|_| AnnotatedSample {
            image: image.clone(),
            bbox: BBox::new(10.0, 10.0, 80.0, 80.0).unwrap(),
            landmarks: (0..51).map(|_| [rng.gen_range(20.0..80.0), rng.gen_range(20.0..80.0)]).collect(),
            teacher: None,
        })
        .collect();
    let ann = dir.path().join("ann.jsonl");
    write_annotations(&ann, &samples).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = lmk(&["augment-preview", "--annotations", s(&ann), "--seed", "8", "--out", s(out)]);
        assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
        assert_eq!(r.stdout.lines().count(), 2);
    }
    for f in ["sample_0000.ppm", "sample_0000.txt", "sample_0001.ppm", "sample_0001.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bench_reports_latency() {
    let r = lmk(&["--config", "../../config/default_model.json", "bench", "--iterations", "2"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.starts_with("iterations 2 mean_ms "));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(lmk(&["infer"]).code, EXIT_USAGE);
    assert_eq!(lmk(&["no-such-command"]).code, EXIT_USAGE);
    assert_eq!(lmk(&["--help"]).code, EXIT_OK);
    let missing = dir.path().join("missing.lmkw");
    let image = noise_image(dir.path(), "x.ppm", 32, 32, 0);
    let r = lmk(&["infer", "--weights", s(&missing), "--image", s(&image), "--bbox", "0,0,32,32"]);
    assert_eq!(r.code, EXIT_IO);

    let weights = uniform_head_weights(dir.path());
    let mut bytes = std::fs::read(&weights).unwrap();
    bytes[1000] ^= 0x10;
    let corrupt = dir.path().join("corrupt.lmkw");
    std::fs::write(&corrupt, bytes).unwrap();
    let r = lmk(&["infer", "--weights", s(&corrupt), "--image", s(&image), "--bbox", "0,0,32,32"]);
    assert_eq!(r.code, EXIT_IO);
    assert!(r.stderr.contains("CRC"), "{}", r.stderr);

    let r = lmk(&["infer", "--weights", s(&weights), "--image", s(&image), "--bbox", "0,0,-3,32"]);
    assert_eq!(r.code, EXIT_USAGE);

    let mut partial = WeightStore::load(&weights).unwrap();
    partial.remove("head.0.refine2.bias");
    let partial_path = dir.path().join("partial.lmkw");
    partial.save(&partial_path).unwrap();
    let r = lmk(&["infer", "--weights", s(&partial_path), "--image", s(&image), "--bbox", "0,0,32,32"]);
    assert_eq!(r.code, EXIT_IO);
    assert!(r.stderr.contains("head.0.refine2.bias"));
}

#[test]
fn binary_honours_config_environment_variable() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("mini.json");
    std::fs::write(&cfg, ModelConfig::miniature(5, 3).to_json()).unwrap();
    let run = |env: Option<&Path>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_lmk"));
        c.args(["profile"]).env_remove(cli::CONFIG_ENV);
        if let Some(p) = env {
            c.env(cli::CONFIG_ENV, p);
        }
        c.output().unwrap()
    };
    let default = run(None);
    let mini = run(Some(&cfg));
    assert!(default.status.success() && mini.status.success());
    assert_ne!(default.stdout, mini.stdout);
    assert!(String::from_utf8_lossy(&mini.stderr).contains(&format!("\"config_source\":\"{}\"", cfg.display())));

    let bad = run(Some(&dir.path().join("absent.json")));
    assert_eq!(bad.status.code(), Some(EXIT_IO));
}
