use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{lit, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{KdMode, LossReport, LossWeights};
use crate::model::Incidence;
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Trainable generator-head tensors, in canonical store order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<F> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<F>>,
}

const LAYERS: [&str; 7] = ["point", "edge", "heatmap", "heatmap_norm", "refine0", "refine1", "refine2"];

impl<F: Real> HeadParams<F> {
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let mut p = HeadParams { names: Vec::new(), shapes: Vec::new(), values: Vec::new() };
        for layer in LAYERS {
            for suffix in ["weight", "bias"] {
                let name = format!("head.0.{layer}.{suffix}");
                let t = store.get(&name)?;
                p.names.push(name);
                p.shapes.push(t.shape().to_vec());
                p.values.push(t.values().iter().map(|&v| lit(v as f64)).collect());
            }
        }
        Ok(p)
    }

    /// Random head for `channels`-wide features with `k x k` convolutions.
    pub fn random(channels: usize, landmarks: usize, edges: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = HeadParams { names: Vec::new(), shapes: Vec::new(), values: Vec::new() };
        for layer in LAYERS {
            let (cout, cin) = match layer {
                "point" => (landmarks, channels),
                "edge" => (edges, channels),
                "heatmap" => (landmarks, channels),
                _ => (landmarks, landmarks),
            };
            let (wshape, wscale) =
                if layer == "heatmap_norm" { (vec![landmarks], 0.0) } else { (vec![cout, cin, k, k], (3.0 / (cin * k * k) as f64).sqrt()) };
            let w: Vec<F> = (0..wshape.iter().product::<usize>())
                .map(|_| lit(if wscale == 0.0 { rng.gen_range(0.5..1.5) } else { rng.gen_range(-wscale..wscale) }))
                .collect();
            let b: Vec<F> = (0..cout).map(|_| lit(rng.gen_range(-0.2..0.2))).collect();
            p.names.push(format!("head.0.{layer}.weight"));
            p.shapes.push(wshape);
            p.values.push(w);
            p.names.push(format!("head.0.{layer}.bias"));
            p.shapes.push(vec![cout]);
            p.values.push(b);
        }
        p
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Writes the parameters back as f32 tensors.
    pub fn write_into(&self, store: &mut WeightStore) -> Result<()> {
        for ((name, shape), v) in self.names.iter().zip(&self.shapes).zip(&self.values) {
            let t = Tensor::new(shape, v.iter().map(|x| x.to_f32().expect("finite")).collect())?;
            if store.contains(name) {
                store.replace(name, t)?;
            } else {
                store.insert(name.clone(), t)?;
            }
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> HeadParams<G> {
        HeadParams {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| v.iter().map(|x| lit(x.to_f64().expect("finite"))).collect()).collect(),
        }
    }
}

/// Head output nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub point: Var,
    pub edge: Var,
    pub mask: Var,
    pub raw: Var,
    pub attended: Var,
    pub refined: Var,
}

/// Records the generator head on `tape`; returns the parameter leaves
/// (aligned with `params.names`) and the output nodes.
pub fn head_forward<F: Real>(
    tape: &mut Tape<F>,
    features: Var,
    params: &HeadParams<F>,
    incidence: &Incidence,
    norm_eps: F,
) -> Result<(Vec<Var>, HeadNodes)> {
    let leaves: Vec<Var> = params.shapes.iter().zip(&params.values).map(|(s, v)| tape.leaf(s, v.clone())).collect::<Result<_>>()?;
    let p = |layer: &str| -> Result<(Var, Var)> {
        let i = params.index_of(&format!("head.0.{layer}.weight")).ok_or_else(|| Error::MissingWeight(format!("head.0.{layer}.weight")))?;
        Ok((leaves[i], leaves[i + 1]))
    };
    let (pw, pb) = p("point")?;
    let (ew, eb) = p("edge")?;
    let (hw, hb) = p("heatmap")?;
    let (ng, nb) = p("heatmap_norm")?;
    let c = tape.conv2d(features, pw, Some(pb))?;
    let point = tape.sigmoid(c);
    let c = tape.conv2d(features, ew, Some(eb))?;
    let edge = tape.sigmoid(c);
    let rows: Vec<Vec<usize>> = (0..incidence.num_landmarks()).map(|i| incidence.edges_of(i).to_vec()).collect();
    let e2p = tape.e2p(edge, &rows)?;
    let mask = tape.mul(point, e2p)?;
    let c = tape.conv2d(features, hw, Some(hb))?;
    let n = tape.instance_norm(c, ng, nb, norm_eps)?;
    let raw = tape.relu(n);
    let attended = tape.mul(raw, mask)?;
    let mut r = attended;
    for k in 0..3 {
        let (w, b) = p(&format!("refine{k}"))?;
        r = tape.conv2d(r, w, Some(b))?;
        if k < 2 {
            r = tape.relu(r);
        }
    }
    let refined = tape.add(attended, r)?;
    Ok((leaves, HeadNodes { point, edge, mask, raw, attended, refined }))
}

/// One training example at heatmap resolution.
#[derive(Debug, Clone)]
pub struct HeadSample<F> {
    /// `[C, H, W]` head input.
    pub features: Tensor,
    /// Teacher point maps `[N, H, W]`.
    pub teacher: Tensor,
    /// Ground-truth landmarks in input pixels, `N x 2`.
    pub landmarks: Vec<[F; 2]>,
}

impl<F: Real> HeadSample<F> {
    pub fn cast<G: Real>(&self) -> HeadSample<G> {
        HeadSample {
            features: self.features.clone(),
            teacher: self.teacher.clone(),
            landmarks: self.landmarks.iter().map(|p| p.map(|v| lit(v.to_f64().expect("finite")))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub weights: LossWeights,
    pub kd_mode: KdMode,
    /// Heatmap cell size in input pixels.
    pub stride: (f64, f64),
    pub decode_eps: f64,
    pub norm_eps: f64,
}

/// A recorded per-sample loss.
pub struct SampleLoss<F> {
    pub tape: Tape<F>,
    pub params: Vec<Var>,
    pub nodes: HeadNodes,
    pub kd: Var,
    pub reg: Var,
    pub total: Var,
}

pub fn sample_loss<F: Real>(
    params: &HeadParams<F>,
    sample: &HeadSample<F>,
    incidence: &Incidence,
    spec: &LossSpec,
) -> Result<SampleLoss<F>> {
    let mut tape = Tape::new();
    let to_f = |t: &Tensor| -> Vec<F> { t.values().iter().map(|&v| lit(v as f64)).collect() };
    let feat = tape.leaf(sample.features.shape(), to_f(&sample.features))?;
    let (leaves, nodes) = head_forward(&mut tape, feat, params, incidence, lit(spec.norm_eps))?;
    let teacher = tape.leaf(sample.teacher.shape(), to_f(&sample.teacher))?;
    let kd = tape.kd_loss(teacher, nodes.refined, spec.kd_mode)?;
    let pts = tape.soft_argmax(nodes.refined, spec.stride, spec.decode_eps)?;
    let gt = tape.leaf(&[sample.landmarks.len(), 2], sample.landmarks.iter().flatten().copied().collect())?;
    let reg = tape.l2_loss(pts, gt)?;
    let total = tape.weighted_sum(&[(kd, lit(spec.weights.kd as f64)), (reg, lit(spec.weights.reg as f64))])?;
    Ok(SampleLoss { tape, params: leaves, nodes, kd, reg, total })
}

/// Batch-mean loss and, when `with_grad`, its gradient per parameter tensor.
/// Samples are reduced in order, so results are deterministic.
pub fn batch_loss<F: Real>(
    params: &HeadParams<F>,
    batch: &[&HeadSample<F>],
    incidence: &Incidence,
    spec: &LossSpec,
    with_grad: bool,
) -> Result<(LossReport, Option<Vec<Vec<F>>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("batch_loss", "empty batch"));
    }
    let (mut kd, mut reg) = (F::zero(), F::zero());
    let mut grads: Option<Vec<Vec<F>>> = with_grad.then(|| params.values.iter().map(|v| vec![F::zero(); v.len()]).collect());
    for s in batch {
        let l = sample_loss(params, s, incidence, spec)?;
        kd = kd + l.tape.scalar(l.kd);
        reg = reg + l.tape.scalar(l.reg);
        if let Some(acc) = grads.as_mut() {
            let g = l.tape.backward(l.total)?;
            for (a, &v) in acc.iter_mut().zip(&l.params) {
                for (x, y) in a.iter_mut().zip(g.get(v)) {
                    *x = *x + y;
                }
            }
        }
    }
    let n: F = lit(batch.len() as f64);
    if let Some(acc) = grads.as_mut() {
        acc.iter_mut().flatten().for_each(|x| *x = *x / n);
    }
    let to32 = |v: F| v.to_f32().unwrap_or(f32::NAN);
    let report = LossReport::new(to32(kd / n), to32(reg / n), spec.weights)?;
    Ok((report, grads))
}
