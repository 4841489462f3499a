//! Reverse-mode tape over the generator-head op set, generic over `f32`/`f64`.
//!
//! Forward arithmetic follows the inference kernels operation for operation,
//! so an `f32` tape reproduces [`crate::model::heatmap_generator_forward`]
//! bit-exactly.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::loss::KdMode;

pub trait Real: Float + Sum + Debug + Send + Sync + 'static {}
impl<T: Float + Sum + Debug + Send + Sync + 'static> Real for T {}

pub(crate) fn lit<F: Real>(v: f64) -> F {
    F::from(v).expect("finite literal")
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, pad: usize },
    InstanceNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F> },
    Sigmoid(Var),
    Relu(Var),
    Mul(Var, Var),
    Add(Var, Var),
    E2p { edge: Var, rows: Vec<Vec<usize>> },
    SumNormalize { x: Var, totals: Vec<F> },
    SoftArgmax { x: Var, stride: (F, F), totals: Vec<F>, fallback: Vec<bool> },
    KdLoss { teacher: Var, student: Var, mode: KdMode, norms: Vec<F> },
    L2Loss { pred: Var, target: Var },
    Weighted(Vec<(Var, F)>),
}

#[derive(Debug, Clone)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one scalar with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    sizes: Vec<usize>,
}

impl<F: Real> Gradients<F> {
    /// Zeros when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Vec<F> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![F::zero(); self.sizes[v.0]])
    }
}

fn dims3(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize)> {
    match *s {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: &[usize], value: Vec<F>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(Error::shape("tape_leaf", format!("shape {shape:?} needs {n} values, got {}", value.len())));
        }
        Ok(self.push(shape.to_vec(), value, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    /// Stride-1 convolution with `k / 2` zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (c, h, wd) = dims3("tape_conv2d", self.shape(x))?;
        let (o, ci, kh, kw) = match *self.shape(w) {
            [o, ci, kh, kw] => (o, ci, kh, kw),
            ref s => return Err(Error::shape("tape_conv2d", format!("weight must be rank 4, got {s:?}"))),
        };
        if ci != c || kh != kw || kh % 2 == 0 {
            return Err(Error::shape("tape_conv2d", format!("weight {:?} for input {:?}", self.shape(w), self.shape(x))));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape("tape_conv2d", format!("bias {:?}, expected [{o}]", self.shape(b))));
            }
        }
        let pad = kh / 2;
        let (xv, wv) = (self.value(x), self.value(w));
        let mut out = vec![F::zero(); o * h * wd];
        for oc in 0..o {
            let plane = &mut out[oc * h * wd..(oc + 1) * h * wd];
            for ic in 0..c {
                let src = &xv[ic * h * wd..(ic + 1) * h * wd];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let k = wv[((oc * c + ic) * kh + ky) * kw + kx];
                        for oy in 0..h {
                            let iy = (oy + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..wd {
                                let ix = (ox + kx) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    plane[oy * wd + ox] = plane[oy * wd + ox] + k * src[iy as usize * wd + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = b {
                let bv = self.value(b)[oc];
                plane.iter_mut().for_each(|p| *p = *p + bv);
            }
        }
        Ok(self.push(vec![o, h, wd], out, Op::Conv2d { x, w, b, pad }))
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (c, h, w) = dims3("tape_instance_norm", self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("tape_instance_norm", format!("affine params for {c} channels")));
        }
        let n: F = lit((h * w) as f64);
        let (v, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = Vec::with_capacity(v.len());
        let mut xhat = Vec::with_capacity(v.len());
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = &v[ch * h * w..(ch + 1) * h * w];
            let mean = plane.iter().copied().sum::<F>() / n;
            let var = plane.iter().map(|&p| (p - mean) * (p - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            for &p in plane {
                let xh = (p - mean) * inv;
                xhat.push(xh);
                out.push(xh * g[ch] + b[ch]);
            }
            inv_std.push(inv);
        }
        Ok(self.push(vec![c, h, w], out, Op::InstanceNorm { x, gamma, beta, xhat, inv_std }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| {
                if v >= F::zero() {
                    F::one() / (F::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (F::one() + e)
                }
            })
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(F::zero())).collect();
        self.push(self.shape(x).to_vec(), out, Op::Relu(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("tape_mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("tape_add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    /// Per-landmark product of incident edge maps; `rows[i]` lists landmark `i`'s edges.
    pub fn e2p(&mut self, edge: Var, rows: &[Vec<usize>]) -> Result<Var> {
        let (e, h, w) = dims3("tape_e2p", self.shape(edge))?;
        if rows.iter().any(|r| r.is_empty() || r.iter().any(|&j| j >= e)) {
            return Err(Error::invalid("tape_e2p", "incidence rows must be non-empty and in range"));
        }
        let hw = h * w;
        let v = self.value(edge);
        let mut out = Vec::with_capacity(rows.len() * hw);
        for r in rows {
            let mut plane = v[r[0] * hw..(r[0] + 1) * hw].to_vec();
            for &j in &r[1..] {
                for (o, &s) in plane.iter_mut().zip(&v[j * hw..(j + 1) * hw]) {
                    *o = *o * s;
                }
            }
            out.extend(plane);
        }
        Ok(self.push(vec![rows.len(), h, w], out, Op::E2p { edge, rows: rows.to_vec() }))
    }

    /// Each channel divided by its sum. Channels must have a non-zero sum.
    pub fn sum_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let plane: usize = s[1..].iter().product();
        let v = self.value(x);
        let mut totals = Vec::with_capacity(s[0]);
        let mut out = Vec::with_capacity(v.len());
        for ch in v.chunks(plane) {
            let t = ch.iter().copied().sum::<F>();
            if t == F::zero() {
                return Err(Error::invalid("tape_sum_normalize", "channel sums to zero"));
            }
            totals.push(t);
            out.extend(ch.iter().map(|&p| p / t));
        }
        Ok(self.push(s, out, Op::SumNormalize { x, totals }))
    }

    /// Sum-mode soft-argmax (negatives clamped) to `[N, 2]` points. Channels
    /// whose mass is at most `eps` decode to the grid centroid with zero gradient.
    pub fn soft_argmax(&mut self, x: Var, stride: (f64, f64), eps: f64) -> Result<Var> {
        let (n, h, w) = dims3("tape_soft_argmax", self.shape(x))?;
        let (sx, sy): (F, F) = (lit(stride.0), lit(stride.1));
        let half: F = lit(0.5);
        let v = self.value(x);
        let mut out = Vec::with_capacity(2 * n);
        let mut totals = Vec::with_capacity(n);
        let mut fallback = Vec::with_capacity(n);
        for ch in 0..n {
            let plane = &v[ch * h * w..(ch + 1) * h * w];
            let total = plane.iter().map(|&p| p.max(F::zero())).sum::<F>();
            totals.push(total);
            if total <= lit(eps) {
                fallback.push(true);
                out.push(lit::<F>(w as f64) * sx * half);
                out.push(lit::<F>(h as f64) * sy * half);
                continue;
            }
            fallback.push(false);
            let (mut ax, mut ay) = (F::zero(), F::zero());
            for row in 0..h {
                for col in 0..w {
                    let p = plane[row * w + col].max(F::zero());
                    ax = ax + p * (lit::<F>(col as f64) + half) * sx;
                    ay = ay + p * (lit::<F>(row as f64) + half) * sy;
                }
            }
            out.push(ax / total);
            out.push(ay / total);
        }
        Ok(self.push(vec![n, 2], out, Op::SoftArgmax { x, stride: (sx, sy), totals, fallback }))
    }

    pub fn kd_loss(&mut self, teacher: Var, student: Var, mode: KdMode) -> Result<Var> {
        self.same_shape("tape_kd_loss", teacher, student)?;
        let s = self.shape(student).to_vec();
        let plane: usize = s[1..].iter().product();
        let (t, sv) = (self.value(teacher), self.value(student));
        let mut norms = Vec::with_capacity(s[0]);
        let mut total = F::zero();
        for (tc, sc) in t.chunks(plane).zip(sv.chunks(plane)) {
            let d = tc.iter().zip(sc).map(|(&a, &b)| a - b);
            let term = match mode {
                KdMode::PerLandmarkL2 => d.map(|x| x * x).sum::<F>().sqrt(),
                KdMode::CellAbs => d.map(|x| x.abs()).sum::<F>(),
            };
            norms.push(term);
            total = total + term;
        }
        Ok(self.push(vec![1], vec![total], Op::KdLoss { teacher, student, mode, norms }))
    }

    /// Mean squared distance between `[N, 2]` point sets.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("tape_l2_loss", pred, target)?;
        let n = self.shape(pred)[0];
        let sum = self.value(pred).iter().zip(self.value(target)).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>();
        Ok(self.push(vec![1], vec![sum / lit(n as f64)], Op::L2Loss { pred, target }))
    }

    /// `Σ c_i · v_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Result<Var> {
        if terms.iter().any(|(v, _)| self.nodes[v.0].value.len() != 1) {
            return Err(Error::shape("tape_weighted_sum", "terms must be scalars"));
        }
        let total = terms.iter().fold(F::zero(), |acc, &(v, c)| acc + c * self.scalar(v));
        Ok(self.push(vec![1], vec![total], Op::Weighted(terms.to_vec())))
    }

    /// Which side of every non-smooth point each relu/clamp input is on, plus
    /// decode fallbacks and zero-distance KD terms. Finite differences are only
    /// meaningful between evaluations with the same signature.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => sig.extend(self.value(*x).iter().map(|&v| v > F::zero())),
                Op::SoftArgmax { x, fallback, .. } => {
                    sig.extend(self.value(*x).iter().map(|&v| v > F::zero()));
                    sig.extend(fallback);
                }
                Op::KdLoss { norms, .. } => sig.extend(norms.iter().map(|&n| n > F::zero())),
                _ => {}
            }
        }
        sig
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be a scalar, got {:?}", self.shape(loss))));
        }
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);

        fn slot<'a, F: Real>(grads: &'a mut [Option<Vec<F>>], sizes: &[usize], v: Var) -> &'a mut Vec<F> {
            grads[v.0].get_or_insert_with(|| vec![F::zero(); sizes[v.0]])
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, pad } => {
                    let (c, h, wd) = dims3("backward", self.shape(*x))?;
                    let (o, k) = (node.shape[0], self.shape(*w)[2]);
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut dx = vec![F::zero(); xv.len()];
                    let mut dw = vec![F::zero(); wv.len()];
                    for oc in 0..o {
                        let g = &dy[oc * h * wd..(oc + 1) * h * wd];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let widx = ((oc * c + ic) * k + ky) * k + kx;
                                    let mut acc = F::zero();
                                    for oy in 0..h {
                                        let iy = (oy + ky) as isize - *pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for ox in 0..wd {
                                            let ix = (ox + kx) as isize - *pad as isize;
                                            if ix >= 0 && ix < wd as isize {
                                                let xi = (ic * h + iy as usize) * wd + ix as usize;
                                                acc = acc + g[oy * wd + ox] * xv[xi];
                                                dx[xi] = dx[xi] + g[oy * wd + ox] * wv[widx];
                                            }
                                        }
                                    }
                                    dw[widx] = acc;
                                }
                            }
                        }
                    }
                    accumulate(slot(&mut grads, &sizes, *x), &dx);
                    accumulate(slot(&mut grads, &sizes, *w), &dw);
                    if let Some(b) = b {
                        let db: Vec<F> = dy.chunks(h * wd).map(|g| g.iter().copied().sum()).collect();
                        accumulate(slot(&mut grads, &sizes, *b), &db);
                    }
                }
                Op::InstanceNorm { x, gamma, beta, xhat, inv_std } => {
                    let (c, h, w) = dims3("backward", &node.shape)?;
                    let hw = h * w;
                    let n: F = lit(hw as f64);
                    let g = self.value(*gamma);
                    let mut dx = vec![F::zero(); c * hw];
                    let mut dg = vec![F::zero(); c];
                    let mut db = vec![F::zero(); c];
                    for ch in 0..c {
                        let r = ch * hw..(ch + 1) * hw;
                        let (dyc, xh) = (&dy[r.clone()], &xhat[r.clone()]);
                        dg[ch] = dyc.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        db[ch] = dyc.iter().copied().sum();
                        let m1 = db[ch] * g[ch] / n;
                        let m2 = dg[ch] * g[ch] / n;
                        for (k, d) in dx[r].iter_mut().enumerate() {
                            *d = inv_std[ch] * (dyc[k] * g[ch] - m1 - xh[k] * m2);
                        }
                    }
                    accumulate(slot(&mut grads, &sizes, *x), &dx);
                    accumulate(slot(&mut grads, &sizes, *gamma), &dg);
                    accumulate(slot(&mut grads, &sizes, *beta), &db);
                }
                Op::Sigmoid(x) => {
                    let d: Vec<F> = node.value.iter().zip(&dy).map(|(&s, &g)| g * s * (F::one() - s)).collect();
                    accumulate(slot(&mut grads, &sizes, *x), &d);
                }
                Op::Relu(x) => {
                    let d: Vec<F> = self.value(*x).iter().zip(&dy).map(|(&v, &g)| if v > F::zero() { g } else { F::zero() }).collect();
                    accumulate(slot(&mut grads, &sizes, *x), &d);
                }
                Op::Mul(a, b) => {
                    let da: Vec<F> = self.value(*b).iter().zip(&dy).map(|(&v, &g)| g * v).collect();
                    let db: Vec<F> = self.value(*a).iter().zip(&dy).map(|(&v, &g)| g * v).collect();
                    accumulate(slot(&mut grads, &sizes, *a), &da);
                    accumulate(slot(&mut grads, &sizes, *b), &db);
                }
                Op::Add(a, b) => {
                    accumulate(slot(&mut grads, &sizes, *a), &dy);
                    accumulate(slot(&mut grads, &sizes, *b), &dy);
                }
                Op::E2p { edge, rows } => {
                    let (_, h, w) = dims3("backward", self.shape(*edge))?;
                    let hw = h * w;
                    let ev = self.value(*edge);
                    let mut de = vec![F::zero(); ev.len()];
                    for (i, r) in rows.iter().enumerate() {
                        for (pos, &j) in r.iter().enumerate() {
                            for k in 0..hw {
                                let others =
                                    r.iter().enumerate().filter(|&(q, _)| q != pos).fold(F::one(), |acc, (_, &m)| acc * ev[m * hw + k]);
                                de[j * hw + k] = de[j * hw + k] + dy[i * hw + k] * others;
                            }
                        }
                    }
                    accumulate(slot(&mut grads, &sizes, *edge), &de);
                }
                Op::SumNormalize { x, totals } => {
                    let plane = sizes[i] / totals.len();
                    let mut dx = vec![F::zero(); sizes[i]];
                    for (ch, &t) in totals.iter().enumerate() {
                        let r = ch * plane..(ch + 1) * plane;
                        let dot = dy[r.clone()].iter().zip(&node.value[r.clone()]).map(|(&g, &y)| g * y).sum::<F>();
                        for k in r {
                            dx[k] = (dy[k] - dot) / t;
                        }
                    }
                    accumulate(slot(&mut grads, &sizes, *x), &dx);
                }
                Op::SoftArgmax { x, stride, totals, fallback } => {
                    let (n, h, w) = dims3("backward", self.shape(*x))?;
                    let xv = self.value(*x);
                    let half: F = lit(0.5);
                    let mut dx = vec![F::zero(); xv.len()];
                    for ch in 0..n {
                        if fallback[ch] {
                            continue;
                        }
                        let (px, py) = (node.value[2 * ch], node.value[2 * ch + 1]);
                        let (gx, gy) = (dy[2 * ch], dy[2 * ch + 1]);
                        for row in 0..h {
                            for col in 0..w {
                                let k = (ch * h + row) * w + col;
                                if xv[k] > F::zero() {
                                    let ox = (lit::<F>(col as f64) + half) * stride.0;
                                    let oy = (lit::<F>(row as f64) + half) * stride.1;
                                    dx[k] = (gx * (ox - px) + gy * (oy - py)) / totals[ch];
                                }
                            }
                        }
                    }
                    accumulate(slot(&mut grads, &sizes, *x), &dx);
                }
                Op::KdLoss { teacher, student, mode, norms } => {
                    let plane = sizes[student.0] / norms.len();
                    let (t, s) = (self.value(*teacher), self.value(*student));
                    let g = dy[0];
                    let ds: Vec<F> = (0..s.len())
                        .map(|k| {
                            let d = s[k] - t[k];
                            match mode {
                                KdMode::PerLandmarkL2 => {
                                    let nrm = norms[k / plane];
                                    if nrm > F::zero() {
                                        g * d / nrm
                                    } else {
                                        F::zero()
                                    }
                                }
                                KdMode::CellAbs => {
                                    if d > F::zero() {
                                        g
                                    } else if d < F::zero() {
                                        -g
                                    } else {
                                        F::zero()
                                    }
                                }
                            }
                        })
                        .collect();
                    let dt: Vec<F> = ds.iter().map(|&v| -v).collect();
                    accumulate(slot(&mut grads, &sizes, *student), &ds);
                    accumulate(slot(&mut grads, &sizes, *teacher), &dt);
                }
                Op::L2Loss { pred, target } => {
                    let n: F = lit(self.shape(*pred)[0] as f64);
                    let two: F = lit(2.0);
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let dp: Vec<F> = p.iter().zip(t).map(|(&a, &b)| dy[0] * two * (a - b) / n).collect();
                    let dt: Vec<F> = dp.iter().map(|&v| -v).collect();
                    accumulate(slot(&mut grads, &sizes, *pred), &dp);
                    accumulate(slot(&mut grads, &sizes, *target), &dt);
                }
                Op::Weighted(terms) => {
                    for &(v, c) in terms {
                        accumulate(slot(&mut grads, &sizes, v), &[dy[0] * c]);
                    }
                }
            }
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads, sizes })
    }
}

fn accumulate<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
