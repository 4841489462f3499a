use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{batch_loss, sample_loss, HeadParams, HeadSample, LossSpec};
use super::tape::{lit, Real};
use super::toy::render_gaussians;
use crate::error::Result;
use crate::loss::{KdMode, LossWeights};
use crate::model::Incidence;
use crate::tensor::Tensor;

/// Small fixed-shape head problem: 8-channel 8x8 features, 3 landmarks on
/// a 2-edge chain, stride 4, two samples.
#[derive(Debug, Clone)]
pub struct MiniatureProblem<F> {
    pub params: HeadParams<F>,
    pub samples: Vec<HeadSample<F>>,
    pub incidence: Incidence,
    pub spec: LossSpec,
}

impl MiniatureProblem<f64> {
    /// The instance-norm gain is drawn from [1.5, 2.5] so refined maps carry
    /// roughly teacher-scale mass. With much less mass the sum-normalized
    /// decode is sharply curved along the refine output bias, and central
    /// differences at h = 1e-3 are dominated by their O(h^2) error.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = HeadParams::<f64>::random(8, 3, 2, 1, rng.gen());
        let gi = params.index_of("head.0.heatmap_norm.weight").expect("head layout");
        for g in params.values[gi].iter_mut() {
            *g = rng.gen_range(1.5..2.5);
        }
        let samples = (0..2)
            .map(|_| {
                let features = Tensor::new(&[8, 8, 8], (0..512).map(|_| rng.gen_range(-2.0..2.0)).collect()).expect("sized");
                let pts: Vec<[f32; 2]> = (0..3).map(|_| [rng.gen_range(6.0..26.0), rng.gen_range(6.0..26.0)]).collect();
                let teacher = render_gaussians(&pts, (8, 8), (4.0, 4.0), 1.5);
                let landmarks =
                    pts.iter().map(|p| [p[0] as f64 + rng.gen_range(-3.0..3.0), p[1] as f64 + rng.gen_range(-3.0..3.0)]).collect();
                HeadSample { features, teacher, landmarks }
            })
            .collect();
        MiniatureProblem {
            params,
            samples,
            incidence: Incidence::from_matrix(&[vec![1, 0], vec![1, 1], vec![0, 1]]).expect("valid"),
            spec: LossSpec {
                weights: LossWeights::default(),
                kd_mode: KdMode::PerLandmarkL2,
                stride: (4.0, 4.0),
                decode_eps: 1e-6,
                norm_eps: 1e-5,
            },
        }
    }

    pub fn to_f32(&self) -> MiniatureProblem<f32> {
        MiniatureProblem {
            params: self.params.cast(),
            samples: self.samples.iter().map(HeadSample::cast).collect(),
            incidence: self.incidence.clone(),
            spec: self.spec,
        }
    }
}

impl<F: Real> MiniatureProblem<F> {
    pub fn gradcheck(&self, h: f64, floor: f64) -> Result<GradcheckReport> {
        gradcheck(&self.params, &self.samples, &self.incidence, &self.spec, h, floor)
    }

    /// Tape gradients in `F` against f64 differences.
    pub fn gradcheck_against_f64(&self, h: f64, floor: f64) -> Result<GradcheckReport> {
        gradcheck_mixed::<F, f64>(&self.params, &self.samples, &self.incidence, &self.spec, h, floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    /// Elements whose ±h probes crossed a relu/clamp kink.
    pub skipped: usize,
    /// Worst per-tensor error `|a - n|_2 / max(|a|_2, |n|_2, floor)` over
    /// the checked elements of each named parameter.
    pub max_rel_err: f64,
    pub worst: String,
    /// Roundoff level of the differences, `eps * |loss| / h` in the working
    /// precision. Tensors with gradients under 100 times this are compared
    /// against that level instead of their own size.
    pub noise_floor: f64,
    /// `eps * |grad|_2` in the tape's precision. A structurally zero gradient
    /// computes to about one such unit, so tensors are compared against at
    /// least 1000 of them.
    pub tape_floor: f64,
    /// Worst single-element relative error, for diagnosis.
    pub max_element_rel_err: f64,
    pub worst_element: String,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of the batch loss against the tape gradient for every
/// parameter element, compared per named parameter tensor.
pub fn gradcheck<F: Real>(
    params: &HeadParams<F>,
    samples: &[HeadSample<F>],
    incidence: &Incidence,
    spec: &LossSpec,
    h: f64,
    floor: f64,
) -> Result<GradcheckReport> {
    gradcheck_mixed::<F, F>(params, samples, incidence, spec, h, floor)
}

/// As [`gradcheck`], with the tape gradient taken in precision `A` and the
/// differences in `F`. Low-precision gradients can then be checked against a
/// difference oracle free of the low precision's roundoff.
pub fn gradcheck_mixed<A: Real, F: Real>(
    params: &HeadParams<A>,
    samples: &[HeadSample<A>],
    incidence: &Incidence,
    spec: &LossSpec,
    h: f64,
    floor: f64,
) -> Result<GradcheckReport> {
    let batch: Vec<&HeadSample<A>> = samples.iter().collect();
    let (_, grads) = batch_loss(params, &batch, incidence, spec, true)?;
    let grads = grads.expect("requested");

    let params: HeadParams<F> = params.cast();
    let samples: Vec<HeadSample<F>> = samples.iter().map(HeadSample::cast).collect();
    let batch: Vec<&HeadSample<F>> = samples.iter().collect();
    let noise_floor = F::epsilon().to_f64().expect("finite") * batch_total(&params, &batch, incidence, spec)?.abs() / h;
    // the tape's own roundoff, which dominates on structurally zero gradients
    let grad_norm = grads.iter().flatten().map(|g| g.to_f64().expect("finite").powi(2)).sum::<f64>().sqrt();
    let tape_floor = A::epsilon().to_f64().expect("finite") * grad_norm;
    let floor = floor.max(100.0 * noise_floor).max(1000.0 * tape_floor);
    let signature = |p: &HeadParams<F>| -> Result<Vec<Vec<bool>>> {
        samples.iter().map(|s| Ok(sample_loss(p, s, incidence, spec)?.tape.kink_signature())).collect()
    };
    let base_sig = signature(&params)?;
    let mut report = GradcheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        noise_floor,
        tape_floor,
        max_element_rel_err: 0.0,
        worst_element: String::new(),
    };
    let mut probe = params.clone();
    for t in 0..params.values.len() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..params.values[t].len() {
            let x0 = params.values[t][k];
            // realized probe points, which differ from x0 ± h after rounding in f32
            let mut eval = |d: f64| -> Result<(f64, f64, bool)> {
                let x = x0 + lit(d);
                probe.values[t][k] = x;
                let same = signature(&probe)? == base_sig;
                Ok((x.to_f64().expect("finite"), batch_total(&probe, &batch, incidence, spec)?, same))
            };
            let (xu, up, s1) = eval(h)?;
            let (xd, down, s2) = eval(-h)?;
            probe.values[t][k] = x0;
            if !(s1 && s2) {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (xu - xd);
            let analytic = grads[t][k].to_f64().expect("finite");
            let err = relative_error(analytic, numeric, floor);
            report.checked += 1;
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            if err >= report.max_element_rel_err {
                report.max_element_rel_err = err;
                report.worst_element = format!("{}[{k}] analytic {analytic:.6e} numeric {numeric:.6e}", params.names[t]);
            }
        }
        let err = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(floor);
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!("{} |a| {:.6e} |n| {:.6e}", params.names[t], a2.sqrt(), n2.sqrt());
        }
    }
    Ok(report)
}

/// Batch-mean total loss computed in `F` (the f32 loss report would round
/// away the differences being measured).
fn batch_total<F: Real>(params: &HeadParams<F>, batch: &[&HeadSample<F>], incidence: &Incidence, spec: &LossSpec) -> Result<f64> {
    let mut acc = F::zero();
    for s in batch {
        let l = sample_loss(params, s, incidence, spec)?;
        acc = acc + l.tape.scalar(l.total);
    }
    Ok((acc / lit(batch.len() as f64)).to_f64().expect("finite"))
}
