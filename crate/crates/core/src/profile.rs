//! Static parameter and MAC counting over the layer plan.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::plan::layer_plan;
use crate::model::ModelConfig;

/// Published size of the reference half-width student.
pub const REFERENCE_PARAMS: u64 = 1_141_900;
/// Published multiply-accumulate count of the reference student at 256x256.
pub const REFERENCE_MACS: u64 = 581_354_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Layers with parameters or MACs, in execution order.
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub macs: u64,
    /// `2 * macs`.
    pub flops: u64,
    /// Activations, norms, gating and resampling; not included in `flops`.
    pub elementwise_flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub params: u64,
    pub macs: u64,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    /// Totals grouped by the leading name component (`stage0`, ..., `head`).
    pub fn stages(&self) -> Vec<StageCost> {
        let mut out: Vec<StageCost> = Vec::new();
        for l in &self.layers {
            let stage = l.name.split('.').next().unwrap_or_default();
            match out.last_mut() {
                Some(s) if s.stage == stage => {
                    s.params += l.params;
                    s.macs += l.macs;
                }
                _ => out.push(StageCost { stage: stage.to_string(), params: l.params, macs: l.macs }),
            }
        }
        out
    }

    /// Fixed-width table, one row per layer, totals last.
    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(4).max(5);
        let mut s = String::new();
        writeln!(s, "{:<width$}  {:>12}  {:>14}", "layer", "params", "macs").unwrap();
        for l in &self.layers {
            writeln!(s, "{:<width$}  {:>12}  {:>14}", l.name, l.params, l.macs).unwrap();
        }
        writeln!(s, "{:<width$}  {:>12}  {:>14}", "total", self.params, self.macs).unwrap();
        writeln!(s, "flops {} ({:.4} G), elementwise flops {}", self.flops, self.gflops(), self.elementwise_flops).unwrap();
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Full cost report for `cfg`, at its configured input size.
pub fn profile(cfg: &ModelConfig) -> CostReport {
    let plan = layer_plan(cfg);
    let layers: Vec<LayerCost> = plan
        .iter()
        .map(|l| LayerCost { name: l.name.clone(), params: l.param_count(), macs: l.macs() })
        .filter(|l| l.params > 0 || l.macs > 0)
        .collect();
    let params = layers.iter().map(|l| l.params).sum();
    let macs: u64 = layers.iter().map(|l| l.macs).sum();
    CostReport { layers, params, macs, flops: 2 * macs, elementwise_flops: plan.iter().map(|l| l.elementwise_flops()).sum() }
}

pub fn count_params(cfg: &ModelConfig) -> CostReport {
    profile(cfg)
}

pub fn count_macs(cfg: &ModelConfig) -> CostReport {
    profile(cfg)
}

fn rel(found: u64, reference: u64) -> f64 {
    100.0 * (found as f64 - reference as f64) / reference as f64
}

/// Markdown reconciliation of `cfg` against the published student figures.
pub fn reconciliation_markdown(cfg: &ModelConfig) -> String {
    let r = profile(cfg);
    let mut s = String::new();
    s.push_str("# Cost reconciliation\n\n");
    s.push_str("Generated by `lmk profile --reconcile` for `config/default_model.json`.\n");
    s.push_str("A test regenerates it and fails on any drift.\n\n");
    s.push_str("| | counted | reference | delta |\n|---|---:|---:|---:|\n");
    writeln!(s, "| params | {} | {} | {:+.2}% |", r.params, REFERENCE_PARAMS, rel(r.params, REFERENCE_PARAMS)).unwrap();
    writeln!(s, "| MACs | {} | {} | {:+.2}% |", r.macs, REFERENCE_MACS, rel(r.macs, REFERENCE_MACS)).unwrap();
    writeln!(s, "| GFLOPs (2 x MACs) | {:.4} | 1.1865 | |", r.gflops()).unwrap();
    s.push_str("\n## Per stage\n\n| stage | params | MACs | share of MACs |\n|---|---:|---:|---:|\n");
    for st in r.stages() {
        writeln!(s, "| {} | {} | {} | {:.1}% |", st.stage, st.params, st.macs, 100.0 * st.macs as f64 / r.macs as f64).unwrap();
    }
    let mut deeper = cfg.clone();
    deeper.stages[1].mv2_blocks += 1;
    let mut wide_head = cfg.clone();
    wide_head.head_kernel = 3;
    s.push_str("\n## Alternatives considered\n\n| variant | params | MACs | MAC delta |\n|---|---:|---:|---:|\n");
    for (label, c) in [("one more MV2 block in stage 2", &deeper), ("3x3 generator convolutions", &wide_head)] {
        let v = profile(c);
        writeln!(s, "| {label} | {} | {} | {:+.2}% |", v.params, v.macs, rel(v.macs, REFERENCE_MACS)).unwrap();
    }
    s.push_str(
        "\nNorms count as a per-channel weight and bias (2C), as stored. Attention MACs cover the qkv and output \
projections plus the score-weighted key sum. Softmax, gating, activations and resampling are elementwise \
FLOPs, reported separately and excluded from GFLOPs.\n",
    );
    s.push_str("\n## Per layer\n\n```text\n");
    s.push_str(&r.to_table());
    s.push_str("```\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::plan::{LayerKind, LayerSpec};

    fn conv(cin: usize, cout: usize, kernel: usize, stride: usize, groups: usize, bias: bool, hw: usize) -> LayerSpec {
        LayerSpec { name: "t.0.c".into(), kind: LayerKind::Conv { cin, cout, kernel, stride, groups, bias }, out_hw: (hw, hw) }
    }

    #[test]
    fn formula_examples() {
        assert_eq!(conv(3, 16, 3, 1, 1, true, 1).param_count(), 448);
        assert_eq!(conv(32, 32, 3, 1, 32, true, 1).param_count(), 320);
        assert_eq!(conv(16, 32, 1, 1, 1, false, 64).macs(), 2_097_152);
        assert_eq!(conv(3, 16, 3, 2, 1, false, 128).macs(), 7_077_888);
    }

    #[test]
    fn default_config_within_ten_percent() {
        let r = profile(&ModelConfig::student());
        assert!(rel(r.params, REFERENCE_PARAMS).abs() < 10.0, "{}", r.params);
        assert!(rel(r.macs, REFERENCE_MACS).abs() < 10.0, "{}", r.macs);
        assert_eq!(r.params, r.layers.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(r.macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.flops, 2 * r.macs);
        assert_eq!(r.stages().iter().map(|s| s.macs).sum::<u64>(), r.macs);
    }

    #[test]
    fn params_match_initialized_store() {
        for cfg in [ModelConfig::student(), ModelConfig::student_with_alpha(0.25), ModelConfig::miniature(5, 3)] {
            assert_eq!(count_params(&cfg).params, crate::model::init_weights(&cfg, 0).total_elements() as u64);
        }
    }

    #[test]
    fn pointwise_stages_scale_quadratically() {
        let at = |a: f32| profile(&ModelConfig::student_with_alpha(a)).stages();
        let (q, h, f) = (at(0.25), at(0.5), at(1.0));
        for stage in ["stage3", "stage4", "stage5"] {
            let m = |v: &[StageCost]| v.iter().find(|s| s.stage == stage).unwrap().macs as f64;
            for (lo, hi) in [(m(&q), m(&h)), (m(&h), m(&f))] {
                let ratio = hi / lo;
                assert!((3.6..=4.1).contains(&ratio), "{stage}: {ratio}");
            }
        }
    }

    #[test]
    fn table_and_json_are_stable() {
        let r = profile(&ModelConfig::miniature(3, 2));
        assert_eq!(r.to_table(), profile(&ModelConfig::miniature(3, 2)).to_table());
        let back: CostReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_table().lines().last().unwrap().starts_with("flops"));
    }
}
