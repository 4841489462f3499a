//! Self-check suites behind `lmk verify`. Each trial draws a random case
//! from a seeded stream and compares the toolkit against an independent
//! oracle.

use std::fmt;
use std::str::FromStr;

use half::f16;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::MiniatureProblem;
use crate::error::{Error, Result};
use crate::model::{soft_argmax, DecodeGrid, DecodeMode};
use crate::patch::{fold_foldfree, fold_naive, permute6_via_5d, unfold_foldfree, unfold_naive, PatchSpec};
use crate::tensor::{self, Tensor};
use crate::weights::WeightStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    PatchOps,
    Gradients,
    Softargmax,
    WeightsIo,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::PatchOps, Suite::Gradients, Suite::Softargmax, Suite::WeightsIo];

    pub fn name(self) -> &'static str {
        match self {
            Suite::PatchOps => "patch-ops",
            Suite::Gradients => "gradients",
            Suite::Softargmax => "softargmax",
            Suite::WeightsIo => "weights-io",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::PatchOps | Suite::WeightsIo => 1000,
            Suite::Softargmax => 100,
            Suite::Gradients => 5,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::invalid("verify", format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub trials: usize,
    pub passed: usize,
    /// Worst measured error, where the suite has a tolerance.
    pub max_error: Option<f64>,
    /// Suite-specific remarks, e.g. trials that needed a second look.
    pub notes: Vec<String>,
    /// Up to ten failing trials.
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, trials: usize) -> Self {
        SuiteReport { suite, seed, trials, passed: 0, max_error: None, notes: Vec::new(), failures: Vec::new() }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }

    fn record(&mut self, trial: usize, outcome: std::result::Result<(), String>) {
        match outcome {
            Ok(()) => self.passed += 1,
            Err(msg) if self.failures.len() < 10 => self.failures.push(format!("trial {trial}: {msg}")),
            Err(_) => {}
        }
    }

    fn observe(&mut self, err: f64) {
        self.max_error = Some(self.max_error.map_or(err, |m| m.max(err)));
    }

    pub fn summary_line(&self) -> String {
        let verdict = if self.ok() { "ok" } else { "FAILED" };
        let err = self.max_error.map(|e| format!(", max error {e:.3e}")).unwrap_or_default();
        format!("{:<11} {}/{} passed{err}  {verdict}", self.suite.name(), self.passed, self.trials)
    }
}

/// Runs one suite; `trials = None` uses the suite default.
pub fn run_suite(suite: Suite, trials: Option<usize>, seed: u64) -> Result<SuiteReport> {
    let trials = trials.unwrap_or(suite.default_trials());
    match suite {
        Suite::PatchOps => patch_ops(trials, seed),
        Suite::Gradients => gradients(trials, seed),
        Suite::Softargmax => softargmax(trials, seed),
        Suite::WeightsIo => weights_io(trials, seed),
    }
}

fn rng_for(suite: Suite, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite as u64);
    rng
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("nonzero extents")
}

fn check(cond: bool, what: &str) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn patch_ops(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = rng_for(Suite::PatchOps, seed);
    let mut report = SuiteReport::new(Suite::PatchOps, seed, trials);
    for t in 0..trials {
        let (b, c, ph, pw, gh, gw) = if t % 50 == 0 {
            // attention-stage feature maps of the default student
            let (c, side) = [(64, 32), (96, 16), (128, 8)][(t / 50) % 3];
            (1, c, 2, 2, side / 2, side / 2)
        } else {
            (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6))
        };
        let x = uniform(&[b, c, gh * ph, gw * pw], &mut rng);
        let shape6: Vec<usize> = (0..6).map(|_| rng.gen_range(1..4)).collect();
        let y = uniform(&shape6, &mut rng);
        let mut order: Vec<usize> = (0..6).collect();
        order.shuffle(&mut rng);

        let spec = PatchSpec::for_tensor(&x, (ph, pw))?;
        let u = unfold_foldfree(&x, &spec)?;
        let outcome = check(u.bit_eq(&unfold_naive(&x, &spec)?), "unfold differs from oracle")
            .and(check(fold_foldfree(&u, &spec)?.bit_eq(&fold_naive(&u, &spec)?), "fold differs from oracle"))
            .and(check(fold_foldfree(&u, &spec)?.bit_eq(&x), "fold does not invert unfold"))
            .and(check(
                permute6_via_5d(&y, &order)?.bit_eq(&tensor::permute(&y, &order)?),
                &format!("permute {order:?} of {shape6:?} differs"),
            ));
        report.record(t, outcome.map_err(|e| format!("{e} (x {:?}, patch {ph}x{pw})", x.shape())));
    }
    Ok(report)
}

/// Mean of grid-cell centres under the clamped map, by a flat index loop.
fn flat_loop_expectation(plane: &[f32], w: usize, stride: f64) -> [f64; 2] {
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (k, &v) in plane.iter().enumerate() {
        let v = (v as f64).max(0.0);
        sx += v * ((k % w) as f64 + 0.5) * stride;
        sy += v * ((k / w) as f64 + 0.5) * stride;
        total += v;
    }
    [sx / total, sy / total]
}

fn softargmax(trials: usize, seed: u64) -> Result<SuiteReport> {
    const TOL: f64 = 1e-5;
    let mut rng = rng_for(Suite::Softargmax, seed);
    let mut report = SuiteReport::new(Suite::Softargmax, seed, trials);
    let mode = DecodeMode::Sum { eps: 1e-6 };
    let grid = DecodeGrid::new(4.0, 4.0);
    let dev = |p: [f32; 2], q: [f64; 2]| (p[0] as f64 - q[0]).abs().max((p[1] as f64 - q[1]).abs());
    for t in 0..trials {
        let (h, w) = if t == 0 { (64, 64) } else { (rng.gen_range(1..65), rng.gen_range(1..65)) };
        let (r, c) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let one_hot = Tensor::from_fn(&[1, h, w], |i| if i[1] == r && i[2] == c { 1.0 } else { 0.0 })?;
        let hot = soft_argmax(&one_hot, grid, mode)?.landmarks.points[0];
        let expect = [((c as f64 + 0.5) * 4.0) as f32, ((r as f64 + 0.5) * 4.0) as f32];

        let level = rng.gen_range(1e-3..10.0);
        let flat = soft_argmax(&Tensor::full(&[1, h, w], level)?, grid, mode)?.landmarks.points[0];
        let centre = [w as f64 * 2.0, h as f64 * 2.0];

        let map = Tensor::new(&[1, h, w], (0..h * w).map(|_| rng.gen_range(-0.2..1.0f32)).collect())?;
        let got = soft_argmax(&map, grid, mode)?.landmarks.points[0];
        let want = flat_loop_expectation(&map.values(), w, 4.0);
        let scale = rng.gen_range(1e-3..1e3f32);
        let scaled = soft_argmax(&map.scale(scale), grid, mode)?.landmarks.points[0];

        let (e_flat, e_rand, e_scale) = (dev(flat, centre), dev(got, want), dev(scaled, want));
        report.observe(e_flat.max(e_rand).max(e_scale));
        let outcome = check(hot == expect, &format!("one-hot at ({r},{c}) decoded to {hot:?}"))
            .and(check(e_flat <= 1e-4, &format!("uniform {h}x{w} off centroid by {e_flat:e}")))
            .and(check(e_rand <= TOL, &format!("random map off flat loop by {e_rand:e}")))
            .and(check(e_scale <= TOL, &format!("rescale by {scale} moved point by {e_scale:e}")));
        report.record(t, outcome);
    }
    Ok(report)
}

fn random_store(rng: &mut ChaCha8Rng) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    for i in 0..rng.gen_range(0..6) {
        let rank = rng.gen_range(1..=tensor::MAX_RANK);
        let mut shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..4)).collect();
        if rng.gen_bool(0.1) {
            shape[0] = rng.gen_range(1..5000);
        }
        let n: usize = shape.iter().product();
        let t = if rng.gen_bool(0.5) {
            Tensor::new(&shape, (0..n).map(|_| f32::from_bits(rng.gen())).collect())?
        } else {
            Tensor::from_f16(&shape, (0..n).map(|_| f16::from_bits(rng.gen())).collect())?
        };
        let name_len = rng.gen_range(1..20);
        let name: String = (0..name_len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        store.insert(format!("t{i}.{name}"), t)?;
    }
    Ok(store)
}

fn weights_io(trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = rng_for(Suite::WeightsIo, seed);
    let mut report = SuiteReport::new(Suite::WeightsIo, seed, trials);
    for t in 0..trials {
        let store = random_store(&mut rng)?;
        let bytes = store.to_bytes();
        let outcome = match WeightStore::from_bytes(&bytes) {
            Ok(back) => check(back.bit_eq(&store) && back.to_bytes() == bytes, "round trip not bit-exact"),
            Err(e) => Err(format!("round trip failed: {e}")),
        };
        let mut corrupt = bytes.clone();
        let bit = rng.gen_range(0..corrupt.len() * 8);
        corrupt[bit / 8] ^= 1 << (bit % 8);
        let body = corrupt.len() - 4;
        let crc_disagrees = crc32fast::hash(&corrupt[..body]) != u32::from_le_bytes(corrupt[body..].try_into().expect("4 bytes"));
        let outcome = outcome
            .and(check(WeightStore::from_bytes(&corrupt).is_err(), &format!("flip of bit {bit} accepted")))
            .and(check(crc_disagrees, &format!("flip of bit {bit} invisible to CRC")));
        report.record(t, outcome);
    }
    Ok(report)
}

fn gradients(trials: usize, seed: u64) -> Result<SuiteReport> {
    const TOL: f64 = 1e-4;
    let mut report = SuiteReport::new(Suite::Gradients, seed, trials);
    let mut confirmed = 0;
    for t in 0..trials {
        let problem = MiniatureProblem::new(seed.wrapping_add(t as u64));
        let coarse = problem.gradcheck(1e-3, 1e-4)?;
        report.observe(coarse.max_rel_err);
        let mut outcome = Ok(());
        if coarse.max_rel_err >= TOL {
            // Central-difference truncation falls as h^2; a real gradient
            // error would not.
            let fine = problem.gradcheck(1e-4, 1e-4)?;
            if fine.max_rel_err < TOL && fine.max_rel_err * 50.0 < coarse.max_rel_err {
                confirmed += 1;
            } else {
                outcome = Err(format!("f64 {} at h=1e-3, {} at h=1e-4 ({})", coarse.max_rel_err, fine.max_rel_err, fine.worst));
            }
        }
        let single = problem.to_f32().gradcheck_against_f64(1e-3, 1e-3)?;
        report.record(t, outcome.and(check(single.max_rel_err < 1e-2, &format!("f32 {} ({})", single.max_rel_err, single.worst))));
    }
    if confirmed > 0 {
        report.notes.push(format!("{confirmed} trial(s) above {TOL:e} at h=1e-3 passed at h=1e-4 with O(h^2) error decay"));
    }
    Ok(report)
}
