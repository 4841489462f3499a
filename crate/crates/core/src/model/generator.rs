//! Heatmap generator with anisotropic point/edge attention.
//!
//! ```text
//! feat ─┬─ conv ─ sigmoid ─────────── point [N] ─┐
//!       ├─ conv ─ sigmoid ─ edge [E] ─ E2P [N] ──┴─ ⊙ ─ mask
//!       └─ conv ─ instance norm ─ relu ─ raw [N] ──── ⊙ mask ─ attended
//! attended + conv(relu(conv(relu(conv(attended))))) = refined
//! ```

use super::backbone::{ConvLayer, NormLayer};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::weights::WeightStore;

/// Point and edge attention maps, each in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct HeatmapSet {
    pub point: Tensor,
    pub edge: Tensor,
}

impl HeatmapSet {
    pub fn new(point: Tensor, edge: Tensor) -> Result<Self> {
        let [_, ph, pw] = point.dims3("heatmap_set")?;
        let [_, eh, ew] = edge.dims3("heatmap_set")?;
        if (ph, pw) != (eh, ew) {
            return Err(Error::shape("heatmap_set", format!("point {:?} and edge {:?} grids differ", point.shape(), edge.shape())));
        }
        Ok(HeatmapSet { point, edge })
    }

    pub fn num_landmarks(&self) -> usize {
        self.point.shape()[0]
    }

    pub fn num_edges(&self) -> usize {
        self.edge.shape()[0]
    }

    /// Point maps scaled so each channel sums to one (zero channels stay zero).
    pub fn normalized_points(&self) -> Tensor {
        normalize_channels(&self.point)
    }
}

pub(crate) fn normalize_channels(x: &Tensor) -> Tensor {
    let shape = x.shape().to_vec();
    let plane: usize = shape[1..].iter().product();
    let v = x.values();
    let mut out = Vec::with_capacity(v.len());
    for ch in v.chunks(plane) {
        let total: f64 = ch.iter().map(|&p| p as f64).sum();
        if total > 0.0 {
            out.extend(ch.iter().map(|&p| (p as f64 / total) as f32));
        } else {
            out.extend_from_slice(ch);
        }
    }
    Tensor::new(&shape, out).expect("same shape")
}

/// Landmark-to-edge incidence, validated to have no empty rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    rows: Vec<Vec<usize>>,
    num_edges: usize,
}

impl Incidence {
    pub fn from_matrix(matrix: &[Vec<u8>]) -> Result<Self> {
        let num_edges = matrix.first().map(|r| r.len()).unwrap_or(0);
        let mut rows = Vec::with_capacity(matrix.len());
        for (i, r) in matrix.iter().enumerate() {
            if r.len() != num_edges {
                return Err(Error::shape("e2p_transform", format!("incidence row {i} has {} columns, expected {num_edges}", r.len())));
            }
            let edges: Vec<usize> = r.iter().enumerate().filter(|(_, &v)| v != 0).map(|(e, _)| e).collect();
            if edges.is_empty() {
                return Err(Error::invalid("e2p_transform", format!("landmark {i} has an all-zero incidence row")));
            }
            rows.push(edges);
        }
        Ok(Incidence { rows, num_edges })
    }

    pub fn num_landmarks(&self) -> usize {
        self.rows.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn edges_of(&self, landmark: usize) -> &[usize] {
        &self.rows[landmark]
    }
}

/// Point mask `i` is the pixelwise product of the edge maps incident to
/// landmark `i`.
pub fn e2p_transform(edge: &Tensor, incidence: &Incidence) -> Result<Tensor> {
    let [e, h, w] = edge.dims3("e2p_transform")?;
    if e != incidence.num_edges() {
        return Err(Error::shape("e2p_transform", format!("{e} edge maps for an incidence with {} edges", incidence.num_edges())));
    }
    let v = edge.values();
    let hw = h * w;
    let mut out = Vec::with_capacity(incidence.num_landmarks() * hw);
    for edges in &incidence.rows {
        let mut plane = v[edges[0] * hw..(edges[0] + 1) * hw].to_vec();
        for &ed in &edges[1..] {
            for (o, &s) in plane.iter_mut().zip(&v[ed * hw..(ed + 1) * hw]) {
                *o *= s;
            }
        }
        out.extend(plane);
    }
    Tensor::new(&[incidence.num_landmarks(), h, w], out)
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorParams<'a> {
    pub point: ConvLayer<'a>,
    pub edge: ConvLayer<'a>,
    pub heatmap: ConvLayer<'a>,
    pub heatmap_norm: NormLayer<'a>,
    pub refine: [ConvLayer<'a>; 3],
}

impl<'a> GeneratorParams<'a> {
    pub fn from_store(store: &'a WeightStore) -> Result<Self> {
        let c = |l: &str| ConvLayer::from_store(store, &format!("head.0.{l}"));
        Ok(GeneratorParams {
            point: c("point")?,
            edge: c("edge")?,
            heatmap: c("heatmap")?,
            heatmap_norm: NormLayer::from_store(store, "head.0.heatmap_norm")?,
            refine: [c("refine0")?, c("refine1")?, c("refine2")?],
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub heatmaps: HeatmapSet,
    /// `point ⊙ E2P(edge)`.
    pub mask: Tensor,
    /// Heatmap branch before masking.
    pub raw: Tensor,
    pub attended: Tensor,
    /// Final landmark heatmaps, `attended + refine(attended)`.
    pub refined: Tensor,
}

pub fn heatmap_generator_forward(feat: &Tensor, p: &GeneratorParams, incidence: &Incidence, eps: f32) -> Result<GeneratorOutput> {
    feat.dims3("heatmap_generator_forward")?;
    let point = tensor::sigmoid(&p.point.apply(feat, 1, 1)?);
    let edge = tensor::sigmoid(&p.edge.apply(feat, 1, 1)?);
    if point.shape()[0] != incidence.num_landmarks() {
        return Err(Error::shape(
            "heatmap_generator_forward",
            format!("point head has {} channels, incidence has {} landmarks", point.shape()[0], incidence.num_landmarks()),
        ));
    }
    let mask = tensor::mul(&point, &e2p_transform(&edge, incidence)?)?;
    let raw = tensor::relu(&tensor::instance_norm(&p.heatmap.apply(feat, 1, 1)?, p.heatmap_norm.weight, p.heatmap_norm.bias, eps)?);
    let attended = tensor::mul(&raw, &mask)?;
    let r = tensor::relu(&p.refine[0].apply(&attended, 1, 1)?);
    let r = tensor::relu(&p.refine[1].apply(&r, 1, 1)?);
    let r = p.refine[2].apply(&r, 1, 1)?;
    let refined = tensor::add(&attended, &r)?;
    Ok(GeneratorOutput { heatmaps: HeatmapSet::new(point, edge)?, mask, raw, attended, refined })
}

/// Generator forward using parameters and incidence from `cfg`.
pub fn generator_forward(feat: &Tensor, store: &WeightStore, cfg: &ModelConfig) -> Result<GeneratorOutput> {
    let incidence = Incidence::from_matrix(&cfg.scheme.incidence)?;
    heatmap_generator_forward(feat, &GeneratorParams::from_store(store)?, &incidence, cfg.norm_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_edge_broadcasts() {
        let edge = Tensor::from_fn(&[1, 3, 3], |i| (i[1] * 3 + i[2]) as f32 / 9.0).unwrap();
        let inc = Incidence::from_matrix(&vec![vec![1]; 4]).unwrap();
        let pm = e2p_transform(&edge, &inc).unwrap();
        for i in 0..4 {
            assert_eq!(pm.channel(i).unwrap().values(), edge.channel(0).unwrap().values());
        }
    }

    #[test]
    fn ones_in_ones_out() {
        let edge = Tensor::full(&[3, 4, 4], 1.0).unwrap();
        let inc = Incidence::from_matrix(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 1, 1]]).unwrap();
        assert!(e2p_transform(&edge, &inc).unwrap().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_matches_per_pixel_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (e, n) = (4, 7);
        let edge = Tensor::new(&[e, 5, 5], (0..e * 25).map(|_| rng.gen()).collect()).unwrap();
        let matrix: Vec<Vec<u8>> = (0..n)
            .map(|i| {
                let mut r: Vec<u8> = (0..e).map(|_| rng.gen_range(0..2)).collect();
                r[i % e] = 1;
                r
            })
            .collect();
        let pm = e2p_transform(&edge, &Incidence::from_matrix(&matrix).unwrap()).unwrap();
        for i in 0..n {
            for y in 0..5 {
                for x in 0..5 {
                    let mut prod = 1.0f32;
                    for ed in 0..e {
                        if matrix[i][ed] == 1 {
                            prod *= edge.get(&[ed, y, x]).unwrap();
                        }
                    }
                    assert_eq!(pm.get(&[i, y, x]).unwrap(), prod);
                }
            }
        }
    }

    #[test]
    fn zero_row_rejected() {
        assert!(Incidence::from_matrix(&[vec![1, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn monotone_in_edge_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let edge = Tensor::new(&[3, 4, 4], (0..48).map(|_| rng.gen()).collect()).unwrap();
        let inc = Incidence::from_matrix(&[vec![1, 1, 0], vec![0, 1, 1], vec![1, 0, 0]]).unwrap();
        let base = e2p_transform(&edge, &inc).unwrap();
        for _ in 0..20 {
            let k = rng.gen_range(0..48);
            let mut v = edge.values().into_owned();
            v[k] = (v[k] + rng.gen::<f32>()).min(1.0);
            let bumped = e2p_transform(&Tensor::new(&[3, 4, 4], v).unwrap(), &inc).unwrap();
            assert!(bumped.values().iter().zip(base.values().iter()).all(|(b, a)| b >= a));
        }
    }
}
