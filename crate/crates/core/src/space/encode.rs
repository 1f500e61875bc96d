use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gene, GeneKind, Genome, Slot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SlotEncoding {
    /// Set to 1 when the gene takes `value`.
    OneHot { index: usize, value: i64 },
    /// `(v - low) / (high - low)`.
    MinMax { low: i64, high: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSlot {
    pub gene: usize,
    pub name: String,
    pub slot: Slot,
    pub encoding: SlotEncoding,
}

/// Describes what each position of an [`EncodedVector`] holds. Architecture
/// slots come first; `arch_dim` marks where the recipe slots start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub slots: Vec<EncodedSlot>,
    pub arch_dim: usize,
}

impl EncodingLayout {
    pub(super) fn build(genes: &[Gene]) -> Self {
        let mut slots = Vec::new();
        let mut arch_dim = 0;
        for (gi, g) in genes.iter().enumerate() {
            match g.kind {
                GeneKind::Categorical => {
                    for (index, &value) in g.values.iter().enumerate() {
                        slots.push(EncodedSlot {
                            gene: gi,
                            name: format!("{}={value}", g.name),
                            slot: g.slot(),
                            encoding: SlotEncoding::OneHot { index, value },
                        });
                    }
                }
                GeneKind::Continuous => slots.push(EncodedSlot {
                    gene: gi,
                    name: g.name.clone(),
                    slot: g.slot(),
                    encoding: SlotEncoding::MinMax {
                        low: g.values[0],
                        high: *g.values.last().unwrap(),
                    },
                }),
            }
            if !g.is_recipe() {
                arch_dim = slots.len();
            }
        }
        EncodingLayout { slots, arch_dim }
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn recipe_dim(&self) -> usize {
        self.slots.len() - self.arch_dim
    }

    pub(super) fn encode(&self, genes: &[Gene], genome: &Genome) -> EncodedVector {
        let values = self
            .slots
            .iter()
            .map(|s| {
                let idx = genome.0[s.gene];
                match s.encoding {
                    SlotEncoding::OneHot { index, .. } => {
                        if idx == index {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    SlotEncoding::MinMax { low, high } => {
                        let v = genes[s.gene].values[idx];
                        (v - low) as f64 / (high - low) as f64
                    }
                }
            })
            .collect();
        EncodedVector {
            values,
            arch_dim: self.arch_dim,
        }
    }

    /// Stable hash of the layout, stored in predictor checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.slots {
            let enc = match s.encoding {
                SlotEncoding::OneHot { index, value } => format!("onehot:{index}:{value}"),
                SlotEncoding::MinMax { low, high } => format!("minmax:{low}:{high}"),
            };
            h.update(format!("{}|{}\n", s.name, enc).as_bytes());
        }
        h.update(format!("arch_dim={}", self.arch_dim).as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedVector {
    pub values: Vec<f64>,
    pub arch_dim: usize,
}

impl EncodedVector {
    pub fn arch(&self) -> &[f64] {
        &self.values[..self.arch_dim]
    }

    pub fn recipe(&self) -> &[f64] {
        &self.values[self.arch_dim..]
    }

    /// Lexicographic order used for deterministic tie-breaking.
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        for (a, b) in self.values.iter().zip(&other.values) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        self.values.len().cmp(&other.values.len())
    }
}
