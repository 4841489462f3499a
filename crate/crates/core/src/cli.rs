//! The `lmk` command line. [`run`] takes argv and explicit output streams so
//! it can be driven from tests; the binary only forwards to it.
//!
//! Every run emits a [`RunManifest`]: to `--manifest PATH` when given,
//! otherwise as one `lmk-manifest {json}` line on stderr. `lmk replay PATH`
//! re-executes a manifest with its recorded config.
//!
//! Exit codes: 0 success, 1 verification or evaluation failure, 2 usage
//! error, 3 I/O or format error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, augment, AugmentPolicy, BBox, CropSample, CROP_SIZE};
use crate::distill::{self, ToyConfig};
use crate::error::{Error, Result};
use crate::loss::{nme, NmeNorm};
use crate::model::{LandmarkSet, ModelConfig, Student};
use crate::profile;
use crate::tensor::Tensor;
use crate::verify::{self, Suite};
use crate::weights::WeightStore;

/// Environment variable naming the default model config file.
pub const CONFIG_ENV: &str = "LMK_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lmk", version, about = "Facial landmark student toolkit")]
pub struct Cli {
    /// Model config JSON. Defaults to $LMK_CONFIG, then the built-in student.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the run manifest to this file instead of stderr.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Landmarks for one face.
    Infer(InferArgs),
    /// NME over an annotation file.
    Eval(EvalArgs),
    /// Randomized self-checks against reference implementations.
    Verify(VerifyArgs),
    /// Parameter and MAC counts.
    Profile(ProfileArgs),
    /// Head-only distillation on synthetic data.
    DistillToy(DistillToyArgs),
    /// Write augmented crops for visual inspection.
    AugmentPreview(AugmentPreviewArgs),
    /// Inference latency.
    Bench(BenchArgs),
    /// Re-run a recorded manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Binary PPM (P6) image.
    #[arg(long)]
    pub image: PathBuf,
    /// Face box `x,y,w,h` in image pixels.
    #[arg(long)]
    pub bbox: String,
    /// Landmark file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report crop pixels instead of source-image pixels.
    #[arg(long)]
    pub crop_space: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// `bbox_diag`, `interocular:i,j` or `const:c`.
    #[arg(long, default_value = "bbox_diag")]
    pub norm: String,
    /// Fail (exit 1) when the mean NME in percent exceeds this.
    #[arg(long)]
    pub max_nme: Option<f32>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// `patch-ops`, `gradients`, `softargmax`, `weights-io` or `all`.
    #[arg(default_value = "all")]
    pub suite: String,
    /// Trials per suite; each suite has its own default.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProfileArgs {
    /// Width multiplier; the config's own when omitted.
    #[arg(long)]
    pub alpha: Option<f32>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the per-layer reconciliation document here.
    #[arg(long)]
    pub reconcile: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DistillToyArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Trained weights (frozen backbone plus head).
    #[arg(long)]
    pub out_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AugmentPreviewArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Random-initialized weights when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub path: PathBuf,
}

/// Everything needed to re-run a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: ModelConfig,
    /// Where the config came from: a path, or `built-in`.
    pub config_source: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub toolkit_version: String,
    pub wall_time_s: f64,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Exit code for an error: usage errors are bad arguments, I/O and format
/// errors cover files, everything else is a failed check.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument { .. } => EXIT_USAGE,
        Error::Io { .. }
        | Error::BadMagic(_)
        | Error::UnsupportedVersion(_)
        | Error::Truncated(_)
        | Error::CrcMismatch { .. }
        | Error::Malformed(_)
        | Error::MissingTensor(_)
        | Error::MissingWeight(_)
        | Error::WeightShape { .. }
        | Error::Image(_)
        | Error::Annotation { .. }
        | Error::Json(_) => EXIT_IO,
        Error::Shape { .. } | Error::NonFinite(_) | Error::Diverged { .. } => EXIT_FAILURE,
    }
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed.
pub fn format_sig6(v: f32) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{v:.*}", (5 - exp) as usize))
    }
}

/// `index x y` per line.
pub fn format_landmarks(points: &LandmarkSet) -> String {
    points.points.iter().enumerate().map(|(i, p)| format!("{i} {} {}\n", format_sig6(p[0]), format_sig6(p[1]))).collect()
}

pub fn parse_norm(s: &str) -> Result<NmeNorm> {
    let bad = || Error::invalid("norm", format!("`{s}` is not bbox_diag, interocular:i,j or const:c"));
    if s == "bbox_diag" {
        return Ok(NmeNorm::BboxDiag);
    }
    if let Some(rest) = s.strip_prefix("interocular:") {
        let (i, j) = rest.split_once(',').ok_or_else(bad)?;
        return Ok(NmeNorm::Interocular(i.trim().parse().map_err(|_| bad())?, j.trim().parse().map_err(|_| bad())?));
    }
    if let Some(c) = s.strip_prefix("const:") {
        let c: f32 = c.parse().map_err(|_| bad())?;
        if !(c > 0.0) || !c.is_finite() {
            return Err(bad());
        }
        return Ok(NmeNorm::Constant(c));
    }
    Err(bad())
}

/// Resolves the model config: explicit path, then `$LMK_CONFIG`, then the
/// built-in student.
pub fn resolve_config(explicit: Option<&Path>) -> Result<(ModelConfig, String)> {
    let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match explicit.map(Path::to_path_buf).or(from_env) {
        Some(p) => Ok((ModelConfig::from_json_file(&p)?, p.display().to_string())),
        None => Ok((ModelConfig::student(), "built-in".into())),
    }
}

struct Ctx<'a> {
    config: ModelConfig,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn say(&mut self, text: impl AsRef<str>) -> Result<()> {
        self.out.write_all(text.as_ref().as_bytes()).map_err(|e| Error::io("<stdout>", e))
    }

    fn note(&mut self, text: impl AsRef<str>) -> Result<()> {
        writeln!(self.err, "{}", text.as_ref()).map_err(|e| Error::io("<stderr>", e))
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    let resolved = match &cli.command {
        Command::Replay(r) => RunManifest::load(&r.path).map(|m| (m.command, m.config, format!("replay of {}", r.path.display()))),
        cmd => resolve_config(cli.config.as_deref()).map(|(c, src)| (cmd.clone(), c, src)),
    };
    let (command, config, config_source) = match resolved {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return exit_code(&e);
        }
    };
    run_command(command, config, config_source, cli.manifest.as_deref(), out, err)
}

/// Runs an already-parsed command with a resolved config.
pub fn run_command(
    command: Command,
    config: ModelConfig,
    config_source: String,
    manifest: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let start = Instant::now();
    let mut ctx = Ctx { config, out, err, seeds: BTreeMap::new(), inputs: Vec::new(), outputs: Vec::new() };
    let result = match &command {
        Command::Infer(a) => infer(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Verify(a) => verify_cmd(&mut ctx, a),
        Command::Profile(a) => profile_cmd(&mut ctx, a),
        Command::DistillToy(a) => distill_toy(&mut ctx, a),
        Command::AugmentPreview(a) => augment_preview(&mut ctx, a),
        Command::Bench(a) => bench(&mut ctx, a),
        Command::Replay(_) => Err(Error::invalid("replay", "a manifest cannot record another replay")),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(ctx.err, "error: {e}");
            exit_code(&e)
        }
    };
    let manifest_record = RunManifest {
        command,
        config: ctx.config,
        config_source,
        seeds: ctx.seeds,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        exit_code: code,
    };
    let written = match manifest {
        Some(p) => serde_json::to_string_pretty(&manifest_record)
            .map_err(Error::from)
            .and_then(|s| std::fs::write(p, s).map_err(|e| Error::io(p, e))),
        None => serde_json::to_string(&manifest_record)
            .map_err(Error::from)
            .and_then(|s| writeln!(ctx.err, "lmk-manifest {s}").map_err(|e| Error::io("<stderr>", e))),
    };
    match written {
        Err(e) if code == EXIT_OK => {
            let _ = writeln!(ctx.err, "error: {e}");
            EXIT_IO
        }
        _ => code,
    }
}

fn load_student(ctx: &mut Ctx, weights: &Path) -> Result<Student> {
    ctx.inputs.push(weights.to_path_buf());
    Student::new(ctx.config.clone(), WeightStore::load(weights)?)
}

fn input_side(cfg: &ModelConfig) -> Result<usize> {
    match cfg.input_size {
        (h, w) if h == w => Ok(h),
        (h, w) => Err(Error::invalid("config", format!("crop input must be square, got {h}x{w}"))),
    }
}

/// Crop, predict and map back to source pixels (or keep crop pixels).
fn locate(student: &Student, image: &Tensor, bbox: BBox, crop_space: bool) -> Result<LandmarkSet> {
    let crop = data::crop_resize(image, bbox, input_side(student.config())?)?;
    let pred = student.predict(&crop.image)?;
    if crop_space {
        Ok(pred)
    } else {
        crop.to_source(&pred)
    }
}

fn infer(ctx: &mut Ctx, a: &InferArgs) -> Result<i32> {
    let student = load_student(ctx, &a.weights)?;
    ctx.inputs.push(a.image.clone());
    let image = data::load_image(&a.image)?;
    let landmarks = locate(&student, &image, BBox::parse(&a.bbox)?, a.crop_space)?;
    let text = format_landmarks(&landmarks);
    match &a.out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
            ctx.outputs.push(p.clone());
        }
        None => ctx.say(text)?,
    }
    Ok(EXIT_OK)
}

fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<i32> {
    let norm = parse_norm(&a.norm)?;
    if a.threads == 0 {
        return Err(Error::invalid("eval", "--threads must be at least 1"));
    }
    let student = load_student(ctx, &a.weights)?;
    ctx.inputs.push(a.annotations.clone());
    let samples = data::read_annotations(&a.annotations, Some(student.config().num_landmarks()))?;
    let score = |s: &data::AnnotatedSample| -> Result<f32> {
        let image = data::load_image(&s.image)?;
        let pred = locate(&student, &image, s.bbox, false)?;
        nme(&pred, &s.landmark_set()?, norm)
    };
    let mut results: Vec<Option<Result<f32>>> = (0..samples.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = samples.len().div_ceil(a.threads).max(1);
        let handles: Vec<_> = samples.chunks(chunk).map(|part| scope.spawn(|| part.iter().map(&score).collect::<Vec<_>>())).collect();
        let mut i = 0;
        for h in handles {
            for r in h.join().expect("eval worker panicked") {
                results[i] = Some(r);
                i += 1;
            }
        }
    });
    let (mut sum, mut ok, mut failed) = (0f64, 0usize, 0usize);
    for (i, r) in results.into_iter().enumerate() {
        match r.expect("every sample scored") {
            Ok(v) => {
                ctx.say(format!("sample {i} nme {}\n", format_sig6(v)))?;
                sum += v as f64;
                ok += 1;
            }
            Err(e) => {
                ctx.note(format!("sample {i} ({}): {e}", samples[i].image.display()))?;
                failed += 1;
            }
        }
    }
    let mean = if ok > 0 { (sum / ok as f64) as f32 } else { f32::NAN };
    ctx.say(format!("mean_nme {} samples {ok} failed {failed}\n", format_sig6(mean)))?;
    let over = a.max_nme.is_some_and(|m| !(mean <= m));
    Ok(if failed > 0 || over { EXIT_FAILURE } else { EXIT_OK })
}

fn verify_cmd(ctx: &mut Ctx, a: &VerifyArgs) -> Result<i32> {
    let suites: Vec<Suite> = if a.suite == "all" { Suite::ALL.to_vec() } else { vec![a.suite.parse()?] };
    ctx.seeds.insert("verify".into(), a.seed);
    let mut all_ok = true;
    for suite in suites {
        let report = verify::run_suite(suite, a.trials, a.seed)?;
        ctx.say(format!("{}\n", report.summary_line()))?;
        for line in report.notes.iter().chain(&report.failures) {
            ctx.say(format!("  {line}\n"))?;
        }
        all_ok &= report.ok();
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_FAILURE })
}

fn profile_cmd(ctx: &mut Ctx, a: &ProfileArgs) -> Result<i32> {
    if let Some(alpha) = a.alpha {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("profile", format!("alpha {alpha} must be positive")));
        }
        ctx.config.alpha = alpha;
    }
    ctx.config.validate()?;
    let report = profile::profile(&ctx.config);
    ctx.say(report.to_table())?;
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json()).map_err(|e| Error::io(p, e))?;
        ctx.outputs.push(p.clone());
    }
    if let Some(p) = &a.reconcile {
        std::fs::write(p, profile::reconciliation_markdown(&ctx.config)).map_err(|e| Error::io(p, e))?;
        ctx.outputs.push(p.clone());
    }
    Ok(EXIT_OK)
}

fn distill_toy(ctx: &mut Ctx, a: &DistillToyArgs) -> Result<i32> {
    let cfg = ToyConfig { steps: a.steps, seed: a.seed, batch: a.batch, ..Default::default() };
    ctx.seeds.insert("distill".into(), a.seed);
    let mut lines = String::new();
    let run = distill::toy_distill_run_with(&cfg, |r| {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    });
    ctx.say(lines)?;
    let run = run?;
    if let (Some(first), Some(last)) = (run.trajectory.first(), run.trajectory.last()) {
        ctx.note(format!(
            "loss {} -> {} (ratio {})",
            format_sig6(first.loss.total),
            format_sig6(last.loss.total),
            format_sig6(last.loss.total / first.loss.total)
        ))?;
    }
    if let Some(p) = &a.out_weights {
        run.weights()?.save(p)?;
        ctx.outputs.push(p.clone());
    }
    Ok(EXIT_OK)
}

/// Paints a small square at each landmark, red for the first half of the
/// indices and green for the rest.
fn mark_landmarks(image: &Tensor, points: &LandmarkSet) -> Result<Tensor> {
    let [_, h, w] = image.dims3("mark_landmarks")?;
    let mut v = image.values().into_owned();
    let n = points.len();
    for (i, p) in points.points.iter().enumerate() {
        let colour = if i < n / 2 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let (cx, cy) = (p[0].floor() as i64, p[1].floor() as i64);
        for y in cy - 1..=cy + 1 {
            for x in cx - 1..=cx + 1 {
                if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                    for (c, &value) in colour.iter().enumerate() {
                        v[(c * h + y as usize) * w + x as usize] = value;
                    }
                }
            }
        }
    }
    Tensor::new(image.shape(), v)
}

fn augment_preview(ctx: &mut Ctx, a: &AugmentPreviewArgs) -> Result<i32> {
    ctx.inputs.push(a.annotations.clone());
    ctx.seeds.insert("augment".into(), a.seed);
    let samples = data::read_annotations(&a.annotations, None)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (i, s) in samples.iter().take(a.limit.unwrap_or(usize::MAX)).enumerate() {
        let image = data::load_image(&s.image)?;
        let crop = data::crop_resize(&image, s.bbox, CROP_SIZE)?;
        let landmarks = crop.to_crop(&s.landmark_set()?)?;
        let mut policy = AugmentPolicy::default();
        match &ctx.config.scheme.flip_permutation {
            Some(perm) if perm.len() == landmarks.len() => policy.flip_permutation = Some(perm.clone()),
            _ => policy.hflip_prob = 0.0,
        }
        let sample = CropSample { image: crop.image, landmarks };
        let aug = augment(&sample, &policy, &mut data::sample_rng(a.seed, i as u64))?;
        let stem = a.out.join(format!("sample_{i:04}"));
        let (img_path, txt_path) = (stem.with_extension("ppm"), stem.with_extension("txt"));
        data::save_image(&mark_landmarks(&aug.image, &aug.landmarks)?, &img_path)?;
        std::fs::write(&txt_path, format_landmarks(&aug.landmarks)).map_err(|e| Error::io(&txt_path, e))?;
        ctx.say(format!(
            "{} flip={} blur={} gray={} occlusion={}\n",
            img_path.display(),
            aug.flipped,
            aug.blurred.map_or("-".into(), |s| format_sig6(s as f32)),
            aug.gray,
            aug.occlusion.map_or("-".into(), |[x, y, w, h]| format!("{x},{y},{w},{h}")),
        ))?;
        ctx.outputs.extend([img_path, txt_path]);
    }
    Ok(EXIT_OK)
}

fn bench(ctx: &mut Ctx, a: &BenchArgs) -> Result<i32> {
    if a.iterations == 0 {
        return Err(Error::invalid("bench", "--iterations must be at least 1"));
    }
    let student = match &a.weights {
        Some(p) => load_student(ctx, p)?,
        None => Student::random(ctx.config.clone(), a.seed)?,
    };
    ctx.seeds.insert("bench".into(), a.seed);
    let (h, w) = student.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let image = Tensor::new(&[3, h, w], (0..3 * h * w).map(|_| rng.gen::<f32>()).collect())?;
    student.predict(&image)?;
    let mut ms: Vec<f64> = (0..a.iterations)
        .map(|_| {
            let t = Instant::now();
            student.predict(&image).map(|_| t.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<_>>()?;
    ms.sort_by(f64::total_cmp);
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    ctx.say(format!(
        "iterations {} mean_ms {:.3} median_ms {:.3} min_ms {:.3} max_ms {:.3}\n",
        ms.len(),
        mean,
        ms[ms.len() / 2],
        ms[0],
        ms[ms.len() - 1]
    ))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_matches_printf_g() {
        for (v, s) in [
            (0.0, "0"),
            (1.0, "1"),
            (128.0, "128"),
            (-2.5, "-2.5"),
            (1.2345678, "1.23457"),
            (123456.7, "123457"),
            (999999.5, "1e+06"),
            (1234567.0, "1.23457e+06"),
            (0.0001234567, "0.000123457"),
            (0.00001234567, "1.23457e-05"),
            (100.0, "100"),
            (0.1, "0.1"),
        ] {
            assert_eq!(format_sig6(v), s, "{v}");
        }
    }

    #[test]
    fn norm_specs() {
        assert_eq!(parse_norm("bbox_diag").unwrap(), NmeNorm::BboxDiag);
        assert_eq!(parse_norm("interocular:36,45").unwrap(), NmeNorm::Interocular(36, 45));
        assert_eq!(parse_norm("const:2.5").unwrap(), NmeNorm::Constant(2.5));
        for bad in ["", "interocular:1", "const:-1", "const:x", "iod"] {
            assert!(matches!(parse_norm(bad), Err(Error::InvalidArgument { .. })), "{bad}");
        }
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::invalid("x", "y")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::CrcMismatch { stored: 0, computed: 1 }), EXIT_IO);
        assert_eq!(exit_code(&Error::Diverged { step: 3, loss: f64::NAN }), EXIT_FAILURE);
    }

    #[test]
    fn landmark_lines() {
        let s = LandmarkSet::new(vec![[1.5, 2.0], [100.25, 0.125]]).unwrap();
        assert_eq!(format_landmarks(&s), "0 1.5 2\n1 100.25 0.125\n");
    }
}
