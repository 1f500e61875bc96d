//! Analytic FLOP and parameter counting.
//!
//! FLOPs are counted as multiply-accumulates (one MAC = one FLOP), the usual
//! convention for mobile architecture papers. Conventions:
//!
//! - same padding, output size `ceil(input / stride)`;
//! - convolutions carry no bias (folded into batch norm), the final FC does;
//! - batch norm, activations and residual adds are free;
//! - MBConv is 1x1 expansion (skipped when the ratio is exactly 1), k x k
//!   depthwise, optional squeeze-excite, 1x1 projection;
//! - squeeze-excite width is a quarter of the block input channels rounded to
//!   the nearest multiple of 8 (at least 8); its global pool and channel-wise
//!   rescale each cost one MAC per element;
//! - MBPool is 1x1 expansion, global average pool, 1x1 conv to the head
//!   width; its kernel choice does not change cost.
//! - Skip is free when channels match, otherwise a 1x1 conv.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::space::{ArchConfig, BlockKind, Expansion};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub label: String,
    pub output_resolution: u64,
    pub flops: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_layer: Vec<LayerCost>,
    pub total_flops: u64,
    pub total_params: u64,
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,output_resolution,flops,params\n");
        for l in &self.per_layer {
            out.push_str(&format!(
                "{},{},{},{}\n",
                l.label, l.output_resolution, l.flops, l.params
            ));
        }
        out.push_str(&format!(
            "total,,{},{}\n",
            self.total_flops, self.total_params
        ));
        out
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>6} {:>14} {:>12}",
            "layer", "res", "flops", "params"
        )?;
        for l in &self.per_layer {
            writeln!(
                f,
                "{:<24} {:>6} {:>14} {:>12}",
                l.label, l.output_resolution, l.flops, l.params
            )?;
        }
        write!(
            f,
            "{:<24} {:>6} {:>14} {:>12}",
            "total", "", self.total_flops, self.total_params
        )
    }
}

pub fn se_width(block_input_channels: u64) -> u64 {
    ((block_input_channels + 16) / 32 * 8).max(8)
}

struct Builder {
    layers: Vec<LayerCost>,
    res: u64,
    channels: u64,
}

impl Builder {
    fn push(&mut self, label: String, flops: u64, params: u64) {
        self.layers.push(LayerCost {
            label,
            output_resolution: self.res,
            flops,
            params,
        });
    }
}

fn down(res: u64, stride: u64) -> u64 {
    res.div_ceil(stride)
}

pub fn cost(arch: &ArchConfig) -> CostReport {
    let mut b = Builder {
        layers: Vec::new(),
        res: u64::from(arch.resolution),
        channels: u64::from(arch.input_channels),
    };
    for (i, st) in arch.stages.iter().enumerate() {
        let k = u64::from(st.kernel);
        let c_out = u64::from(st.channels);
        match st.block {
            BlockKind::Conv => {
                for blk in 0..st.depth {
                    let s = if blk == 0 { u64::from(st.stride) } else { 1 };
                    b.res = down(b.res, s);
                    let p = b.channels * c_out * k * k;
                    b.push(format!("s{i}.b{blk}.conv"), b.res * b.res * p, p);
                    b.channels = c_out;
                }
            }
            BlockKind::MBConv => {
                for blk in 0..st.depth {
                    let s = if blk == 0 { u64::from(st.stride) } else { 1 };
                    let e = if blk == 0 {
                        st.expansion_first
                    } else {
                        st.expansion_rest
                    };
                    let c_in = b.channels;
                    let mid = e.apply(c_in);
                    if e != Expansion::ONE {
                        let area = b.res * b.res;
                        b.push(format!("s{i}.b{blk}.expand"), area * c_in * mid, c_in * mid);
                    }
                    b.res = down(b.res, s);
                    let area = b.res * b.res;
                    b.push(format!("s{i}.b{blk}.dw"), area * mid * k * k, mid * k * k);
                    if st.se {
                        let r = se_width(c_in);
                        b.push(
                            format!("s{i}.b{blk}.se"),
                            2 * area * mid + 2 * mid * r,
                            2 * mid * r,
                        );
                    }
                    b.push(
                        format!("s{i}.b{blk}.project"),
                        area * mid * c_out,
                        mid * c_out,
                    );
                    b.channels = c_out;
                }
            }
            BlockKind::MBPool => {
                let mid = st.expansion_first.apply(b.channels);
                let area = b.res * b.res;
                b.push(
                    format!("s{i}.expand"),
                    area * b.channels * mid,
                    b.channels * mid,
                );
                b.push(format!("s{i}.pool"), area * mid, 0);
                b.res = 1;
                b.push(format!("s{i}.head"), mid * c_out, mid * c_out);
                b.channels = c_out;
            }
            BlockKind::FC => {
                let area = b.res * b.res;
                b.push(
                    format!("s{i}.fc"),
                    area * b.channels * c_out,
                    b.channels * c_out + c_out,
                );
                b.channels = c_out;
            }
            BlockKind::Skip => {
                if b.channels != c_out {
                    let area = b.res * b.res;
                    b.push(
                        format!("s{i}.skip"),
                        area * b.channels * c_out,
                        b.channels * c_out,
                    );
                } else {
                    b.push(format!("s{i}.skip"), 0, 0);
                }
                b.channels = c_out;
            }
        }
    }
    let total_flops = b.layers.iter().map(|l| l.flops).sum();
    let total_params = b.layers.iter().map(|l| l.params).sum();
    CostReport {
        per_layer: b.layers,
        total_flops,
        total_params,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Flops,
    Params,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Flops => "flops",
            Metric::Params => "params",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub metric: Metric,
    pub bound: u64,
}

/// Upper bounds `g_i(arch) <= C_i`. Serialized as `{ flops = .., params = .. }`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintTable", into = "ConstraintTable")]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintTable {
    #[serde(skip_serializing_if = "Option::is_none")]
    flops: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<u64>,
}

impl TryFrom<ConstraintTable> for ConstraintSet {
    type Error = String;

    fn try_from(t: ConstraintTable) -> Result<Self, String> {
        let mut set = ConstraintSet::default();
        if let Some(b) = t.flops {
            set = set.with(Metric::Flops, b)?;
        }
        if let Some(b) = t.params {
            set = set.with(Metric::Params, b)?;
        }
        Ok(set)
    }
}

impl From<ConstraintSet> for ConstraintTable {
    fn from(s: ConstraintSet) -> Self {
        ConstraintTable {
            flops: s.bound(Metric::Flops),
            params: s.bound(Metric::Params),
        }
    }
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flops(bound: u64) -> Self {
        Self::new()
            .with(Metric::Flops, bound)
            .expect("positive bound")
    }

    /// Adds or replaces the bound for `metric`.
    pub fn with(mut self, metric: Metric, bound: u64) -> Result<Self, String> {
        if bound == 0 {
            return Err(format!("{metric} bound must be positive"));
        }
        self.constraints.retain(|c| c.metric != metric);
        self.constraints.push(Constraint { metric, bound });
        self.constraints.sort_by_key(|c| c.metric as u8);
        Ok(self)
    }

    pub fn bound(&self, metric: Metric) -> Option<u64> {
        self.constraints
            .iter()
            .find(|c| c.metric == metric)
            .map(|c| c.bound)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Cheap check against precomputed totals.
    pub fn admits(&self, flops: u64, params: u64) -> bool {
        self.constraints.iter().all(|c| match c.metric {
            Metric::Flops => flops <= c.bound,
            Metric::Params => params <= c.bound,
        })
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.constraints.is_empty() {
            return f.write_str("unconstrained");
        }
        let parts: Vec<String> = self
            .constraints
            .iter()
            .map(|c| format!("{}<={}", c.metric, c.bound))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub metric: Metric,
    pub value: u64,
    pub bound: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub satisfied: bool,
    pub violations: Vec<Violation>,
}

pub fn check_constraints(arch: &ArchConfig, constraints: &ConstraintSet) -> ConstraintCheck {
    let report = cost(arch);
    check_report(&report, constraints)
}

pub fn check_report(report: &CostReport, constraints: &ConstraintSet) -> ConstraintCheck {
    let violations: Vec<Violation> = constraints
        .iter()
        .filter_map(|c| {
            let value = match c.metric {
                Metric::Flops => report.total_flops,
                Metric::Params => report.total_params,
            };
            (value > c.bound).then_some(Violation {
                metric: c.metric,
                value,
                bound: c.bound,
            })
        })
        .collect();
    ConstraintCheck {
        satisfied: violations.is_empty(),
        violations,
    }
}
