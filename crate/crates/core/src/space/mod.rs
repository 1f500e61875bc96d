//! The joint architecture + training-recipe search space.
//!
//! A [`SearchSpaceDef`] is loaded from a space file (see [`parse`]) and
//! flattened into a list of [`Gene`]s: one per free parameter, where a
//! shared group (parameters that must take the same value) is a single
//! gene. Everything that samples, mutates, enumerates or encodes candidates
//! works on the [`Genome`] view, a vector of per-gene choice indices, and
//! converts to a typed [`Candidate`] at the edges.

mod encode;
mod parse;
mod sample;
mod scale;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use encode::{EncodedSlot, EncodedVector, EncodingLayout, SlotEncoding};
pub use sample::{genome_from_point, sample_genome, sample_qmc_pool, sample_uniform, sobol_points};
pub use scale::compound_scale;

/// Units of the integer grid values stored in a [`RecipeConfig`].
pub mod units {
    pub const LR: f64 = 1e-3;
    pub const DROPOUT: f64 = 1e-2;
    pub const STOCHASTIC_DEPTH: f64 = 1e-1;
    pub const MIXUP: f64 = 1e-1;
    pub const WEIGHT_DECAY: f64 = 1e-6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Conv,
    MBConv,
    MBPool,
    FC,
    Skip,
}

impl BlockKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Conv" => Some(BlockKind::Conv),
            "MBConv" => Some(BlockKind::MBConv),
            "MBPool" => Some(BlockKind::MBPool),
            "FC" => Some(BlockKind::FC),
            "Skip" => Some(BlockKind::Skip),
            _ => None,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    HSwish,
    Swish,
    ReLU,
    /// No activation (`-` in a space file).
    Identity,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hswish" => Some(Activation::HSwish),
            "swish" => Some(Activation::Swish),
            "relu" => Some(Activation::ReLU),
            "-" | "none" | "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Optimizer {
    RMSProp,
    SGD,
}

impl Optimizer {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmsprop" => Some(Optimizer::RMSProp),
            "sgd" => Some(Optimizer::SGD),
            _ => None,
        }
    }

    fn code(self) -> i64 {
        match self {
            Optimizer::RMSProp => 0,
            Optimizer::SGD => 1,
        }
    }

    fn from_code(code: i64) -> Self {
        if code == 1 {
            Optimizer::SGD
        } else {
            Optimizer::RMSProp
        }
    }
}

/// Inclusive integer grid `low, low + step, ..., <= high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub low: i64,
    pub high: i64,
    pub step: i64,
}

impl IntRange {
    pub fn values(&self) -> Vec<i64> {
        (self.low..=self.high).step_by(self.step as usize).collect()
    }

    pub fn len(&self) -> usize {
        ((self.high - self.low) / self.step + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The set of values one parameter may take.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Fixed(i64),
    Range(IntRange),
    Choice(Vec<i64>),
}

impl Domain {
    pub fn values(&self) -> Vec<i64> {
        match self {
            Domain::Fixed(v) => vec![*v],
            Domain::Range(r) => r.values(),
            Domain::Choice(c) => c.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Domain::Fixed(_) => 1,
            Domain::Range(r) => r.len(),
            Domain::Choice(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_free(&self) -> bool {
        self.len() > 1
    }

    pub fn first(&self) -> i64 {
        match self {
            Domain::Fixed(v) => *v,
            Domain::Range(r) => r.low,
            Domain::Choice(c) => c[0],
        }
    }

    fn is_categorical(&self) -> bool {
        matches!(self, Domain::Choice(_))
    }
}

/// Expansion ratios are stored in hundredths so that fractional baseline
/// values such as 5.46 stay exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionSpec {
    pub first: Domain,
    pub rest: Domain,
    pub first_group: Option<u32>,
    pub rest_group: Option<u32>,
    /// No slash in the space file: first and rest blocks use one value.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub block: BlockKind,
    pub kernel: Domain,
    pub expansion: ExpansionSpec,
    pub channels: Domain,
    pub depth: Domain,
    pub stride: u32,
    pub se: bool,
    pub activation: Activation,
    /// Line of the stage header in the source file, for diagnostics.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRanges {
    pub lr: Domain,
    pub optimizer: Vec<Optimizer>,
    pub ema: Vec<bool>,
    pub dropout: Domain,
    pub stochastic_depth: Domain,
    pub mixup: Domain,
    pub weight_decay: Domain,
    /// Learning-rate multiplier applied when SGD is chosen. Never folded
    /// into the stored `lr`.
    pub sgd_lr_multiplier: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecipeField {
    Lr,
    Optimizer,
    Ema,
    Dropout,
    StochasticDepth,
    Mixup,
    WeightDecay,
}

impl RecipeField {
    pub const ALL: [RecipeField; 7] = [
        RecipeField::Lr,
        RecipeField::Optimizer,
        RecipeField::Ema,
        RecipeField::Dropout,
        RecipeField::StochasticDepth,
        RecipeField::Mixup,
        RecipeField::WeightDecay,
    ];

    pub fn key(self) -> &'static str {
        match self {
            RecipeField::Lr => "lr",
            RecipeField::Optimizer => "optim",
            RecipeField::Ema => "ema",
            RecipeField::Dropout => "p",
            RecipeField::StochasticDepth => "d",
            RecipeField::Mixup => "m",
            RecipeField::WeightDecay => "wd",
        }
    }
}

/// A location inside a [`Candidate`] that a gene writes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Resolution,
    Kernel(usize),
    ExpansionFirst(usize),
    ExpansionRest(usize),
    Channels(usize),
    Depth(usize),
    Recipe(RecipeField),
}

impl Slot {
    pub fn name(&self) -> String {
        match self {
            Slot::Resolution => "res".into(),
            Slot::Kernel(s) => format!("stage{s}.k"),
            Slot::ExpansionFirst(s) => format!("stage{s}.e_first"),
            Slot::ExpansionRest(s) => format!("stage{s}.e_rest"),
            Slot::Channels(s) => format!("stage{s}.c"),
            Slot::Depth(s) => format!("stage{s}.n"),
            Slot::Recipe(f) => f.key().into(),
        }
    }

    pub fn stage(&self) -> Option<usize> {
        match *self {
            Slot::Kernel(s)
            | Slot::ExpansionFirst(s)
            | Slot::ExpansionRest(s)
            | Slot::Channels(s)
            | Slot::Depth(s) => Some(s),
            Slot::Resolution | Slot::Recipe(_) => None,
        }
    }

    pub fn is_recipe(&self) -> bool {
        matches!(self, Slot::Recipe(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneKind {
    Continuous,
    Categorical,
}

/// One free, independently sampled parameter of the space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gene {
    pub name: String,
    pub kind: GeneKind,
    pub values: Vec<i64>,
    /// All candidate locations written by this gene; more than one for
    /// shared groups and tied expansions.
    pub targets: Vec<Slot>,
}

impl Gene {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_recipe(&self) -> bool {
        self.targets[0].is_recipe()
    }

    pub fn slot(&self) -> Slot {
        self.targets[0]
    }
}

/// Per-gene choice indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome(pub Vec<usize>);

/// Expansion ratio in hundredths (`546` is 5.46). Serialized as a decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expansion(pub u32);

impl Expansion {
    pub const ONE: Expansion = Expansion(100);

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    /// `round_half_up(channels * ratio)` in exact integer arithmetic.
    pub fn apply(self, channels: u64) -> u64 {
        (channels * u64::from(self.0) + 50) / 100
    }
}

impl Serialize for Expansion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Expansion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !(0.0..=1000.0).contains(&v) {
            return Err(serde::de::Error::custom(format!(
                "expansion {v} out of range"
            )));
        }
        Ok(Expansion((v * 100.0).round() as u32))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageConfig {
    pub block: BlockKind,
    pub kernel: u32,
    pub expansion_first: Expansion,
    pub expansion_rest: Expansion,
    pub channels: u32,
    pub depth: u32,
    pub stride: u32,
    pub se: bool,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    pub resolution: u32,
    pub input_channels: u32,
    pub stages: Vec<StageConfig>,
}

/// Training recipe in grid units (see [`units`]).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub lr: u32,
    pub optimizer: Optimizer,
    pub ema: bool,
    pub dropout: u32,
    pub stochastic_depth: u32,
    pub mixup: u32,
    pub weight_decay: u32,
}

impl RecipeConfig {
    pub fn learning_rate(&self) -> f64 {
        f64::from(self.lr) * units::LR
    }

    /// The learning rate a trainer should use, with the SGD multiplier applied.
    pub fn effective_learning_rate(&self, ranges: &RecipeRanges) -> f64 {
        match self.optimizer {
            Optimizer::SGD => self.learning_rate() * f64::from(ranges.sgd_lr_multiplier),
            Optimizer::RMSProp => self.learning_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: ArchConfig,
    pub recipe: RecipeConfig,
}

impl Candidate {
    fn slot_value(&self, slot: Slot) -> i64 {
        let r = &self.recipe;
        match slot {
            Slot::Resolution => i64::from(self.arch.resolution),
            Slot::Kernel(s) => i64::from(self.arch.stages[s].kernel),
            Slot::ExpansionFirst(s) => i64::from(self.arch.stages[s].expansion_first.0),
            Slot::ExpansionRest(s) => i64::from(self.arch.stages[s].expansion_rest.0),
            Slot::Channels(s) => i64::from(self.arch.stages[s].channels),
            Slot::Depth(s) => i64::from(self.arch.stages[s].depth),
            Slot::Recipe(f) => match f {
                RecipeField::Lr => i64::from(r.lr),
                RecipeField::Optimizer => r.optimizer.code(),
                RecipeField::Ema => i64::from(r.ema),
                RecipeField::Dropout => i64::from(r.dropout),
                RecipeField::StochasticDepth => i64::from(r.stochastic_depth),
                RecipeField::Mixup => i64::from(r.mixup),
                RecipeField::WeightDecay => i64::from(r.weight_decay),
            },
        }
    }

    fn set_slot_value(&mut self, slot: Slot, v: i64) {
        let u = v as u32;
        let r = &mut self.recipe;
        match slot {
            Slot::Resolution => self.arch.resolution = u,
            Slot::Kernel(s) => self.arch.stages[s].kernel = u,
            Slot::ExpansionFirst(s) => self.arch.stages[s].expansion_first = Expansion(u),
            Slot::ExpansionRest(s) => self.arch.stages[s].expansion_rest = Expansion(u),
            Slot::Channels(s) => self.arch.stages[s].channels = u,
            Slot::Depth(s) => self.arch.stages[s].depth = u,
            Slot::Recipe(f) => match f {
                RecipeField::Lr => r.lr = u,
                RecipeField::Optimizer => r.optimizer = Optimizer::from_code(v),
                RecipeField::Ema => r.ema = v != 0,
                RecipeField::Dropout => r.dropout = u,
                RecipeField::StochasticDepth => r.stochastic_depth = u,
                RecipeField::Mixup => r.mixup = u,
                RecipeField::WeightDecay => r.weight_decay = u,
            },
        }
    }
}

/// log10 of the number of distinct architectures and recipes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cardinality {
    pub arch_log10: f64,
    pub recipe_log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceDef {
    pub name: String,
    pub resolution: Domain,
    pub input_channels: u32,
    pub stages: Vec<StageSpec>,
    pub recipe: RecipeRanges,
    genes: Vec<Gene>,
    layout: EncodingLayout,
}

impl SearchSpaceDef {
    /// Parses a space file. See the crate README for the format.
    pub fn load(text: &str) -> Result<Self> {
        parse::parse_space(text)
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::load(&text)
    }

    pub(crate) fn from_parts(
        name: String,
        resolution: Domain,
        input_channels: u32,
        stages: Vec<StageSpec>,
        recipe: RecipeRanges,
    ) -> Result<Self> {
        let genes = build_genes(&resolution, &stages, &recipe)?;
        let layout = EncodingLayout::build(&genes);
        Ok(SearchSpaceDef {
            name,
            resolution,
            input_channels,
            stages,
            recipe,
            genes,
            layout,
        })
    }

    pub fn genes(&self) -> &[Gene] {
        &self.genes
    }

    pub fn layout(&self) -> &EncodingLayout {
        &self.layout
    }

    pub fn arch_gene_count(&self) -> usize {
        self.genes.iter().filter(|g| !g.is_recipe()).count()
    }

    /// Exact counts with per-stage kernel and expansion choices and shared
    /// groups counted once.
    pub fn cardinality(&self) -> Cardinality {
        let mut c = Cardinality {
            arch_log10: 0.0,
            recipe_log10: 0.0,
        };
        for g in &self.genes {
            let l = (g.len() as f64).log10();
            if g.is_recipe() {
                c.recipe_log10 += l;
            } else {
                c.arch_log10 += l;
            }
        }
        c
    }

    /// Alternative architecture count where every block inside a stage picks
    /// its own kernel and rest-block expansion. Expansions shared across
    /// stages are still counted once.
    pub fn arch_log10_per_block(&self) -> f64 {
        let own_len = |slot: Slot| -> f64 {
            self.genes
                .iter()
                .find(|g| g.targets.contains(&slot))
                .filter(|g| g.targets.iter().all(|t| t.stage() == slot.stage()))
                .map_or(1.0, |g| g.len() as f64)
        };
        let mut total = self.cardinality().arch_log10;
        for (i, st) in self.stages.iter().enumerate() {
            let k = own_len(Slot::Kernel(i));
            let tied = st.expansion.tied;
            let r = if tied {
                own_len(Slot::ExpansionFirst(i))
            } else {
                own_len(Slot::ExpansionRest(i))
            };
            let depths = st.depth.values();
            let per_stage = k * r * depths.len() as f64;
            let per_block: f64 = depths
                .iter()
                .map(|&n| {
                    let n = n as i32;
                    k.powi(n) * r.powi(if tied { n } else { n - 1 })
                })
                .sum();
            total += per_block.log10() - per_stage.log10();
        }
        total
    }

    fn template(&self) -> Candidate {
        let stages = self
            .stages
            .iter()
            .map(|s| StageConfig {
                block: s.block,
                kernel: s.kernel.first() as u32,
                expansion_first: Expansion(s.expansion.first.first() as u32),
                expansion_rest: Expansion(s.expansion.rest.first() as u32),
                channels: s.channels.first() as u32,
                depth: s.depth.first() as u32,
                stride: s.stride,
                se: s.se,
                activation: s.activation,
            })
            .collect();
        let r = &self.recipe;
        Candidate {
            arch: ArchConfig {
                resolution: self.resolution.first() as u32,
                input_channels: self.input_channels,
                stages,
            },
            recipe: RecipeConfig {
                lr: r.lr.first() as u32,
                optimizer: r.optimizer[0],
                ema: r.ema[0],
                dropout: r.dropout.first() as u32,
                stochastic_depth: r.stochastic_depth.first() as u32,
                mixup: r.mixup.first() as u32,
                weight_decay: r.weight_decay.first() as u32,
            },
        }
    }

    /// Builds the candidate selected by `genome`.
    pub fn decode(&self, genome: &Genome) -> Candidate {
        assert_eq!(genome.0.len(), self.genes.len(), "genome length");
        let mut c = self.template();
        for (g, &i) in self.genes.iter().zip(&genome.0) {
            for &t in &g.targets {
                c.set_slot_value(t, g.values[i]);
            }
        }
        c
    }

    /// Checks that `c` lies on the space grid and returns its genome.
    pub fn genome(&self, c: &Candidate) -> Result<Genome> {
        self.check_fixed(c)?;
        let mut out = Vec::with_capacity(self.genes.len());
        for g in &self.genes {
            let v = c.slot_value(g.targets[0]);
            let idx = g.values.iter().position(|&x| x == v).ok_or_else(|| {
                Error::validation(
                    &g.name,
                    format!("value {v} is not on the grid {:?}", g.values),
                )
            })?;
            for &t in &g.targets[1..] {
                if c.slot_value(t) != v {
                    return Err(Error::validation(
                        t.name(),
                        format!(
                            "shared with `{}` but differs ({} != {v})",
                            g.name,
                            c.slot_value(t)
                        ),
                    ));
                }
            }
            out.push(idx);
        }
        Ok(Genome(out))
    }

    pub fn validate(&self, c: &Candidate) -> Result<()> {
        self.genome(c).map(|_| ())
    }

    fn check_fixed(&self, c: &Candidate) -> Result<()> {
        if c.arch.stages.len() != self.stages.len() {
            return Err(Error::validation(
                "stages",
                format!(
                    "expected {} stages, got {}",
                    self.stages.len(),
                    c.arch.stages.len()
                ),
            ));
        }
        if c.arch.input_channels != self.input_channels {
            return Err(Error::validation(
                "input_channels",
                "differs from the space",
            ));
        }
        for (i, (spec, st)) in self.stages.iter().zip(&c.arch.stages).enumerate() {
            let fixed = [
                ("block", spec.block == st.block),
                ("s", spec.stride == st.stride),
                ("se", spec.se == st.se),
                ("act", spec.activation == st.activation),
            ];
            for (field, ok) in fixed {
                if !ok {
                    return Err(Error::validation(
                        format!("stage{i}.{field}"),
                        "differs from the space constant",
                    ));
                }
            }
        }
        let gene_slots: std::collections::HashSet<Slot> = self
            .genes
            .iter()
            .flat_map(|g| g.targets.iter().copied())
            .collect();
        let template = self.template();
        for slot in all_slots(self.stages.len()) {
            if !gene_slots.contains(&slot) && c.slot_value(slot) != template.slot_value(slot) {
                return Err(Error::validation(
                    slot.name(),
                    format!(
                        "fixed at {} but got {}",
                        template.slot_value(slot),
                        c.slot_value(slot)
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn encode(&self, c: &Candidate) -> Result<EncodedVector> {
        let g = self.genome(c)?;
        Ok(self.layout.encode(&self.genes, &g))
    }

    pub fn encode_genome(&self, g: &Genome) -> EncodedVector {
        self.layout.encode(&self.genes, g)
    }

    /// Number of candidates, or `None` when it exceeds `u64`.
    pub fn size(&self) -> Option<u64> {
        self.genes
            .iter()
            .try_fold(1u64, |acc, g| acc.checked_mul(g.len() as u64))
    }

    /// Genome at position `index` of the mixed-radix enumeration.
    pub fn genome_at(&self, mut index: u64) -> Genome {
        let mut out = vec![0; self.genes.len()];
        for (slot, g) in out.iter_mut().zip(&self.genes).rev() {
            let n = g.len() as u64;
            *slot = (index % n) as usize;
            index /= n;
        }
        Genome(out)
    }
}

fn all_slots(stages: usize) -> Vec<Slot> {
    let mut v = vec![Slot::Resolution];
    for s in 0..stages {
        v.extend([
            Slot::Kernel(s),
            Slot::ExpansionFirst(s),
            Slot::ExpansionRest(s),
            Slot::Channels(s),
            Slot::Depth(s),
        ]);
    }
    v.extend(RecipeField::ALL.iter().map(|&f| Slot::Recipe(f)));
    v
}

fn build_genes(
    resolution: &Domain,
    stages: &[StageSpec],
    recipe: &RecipeRanges,
) -> Result<Vec<Gene>> {
    let mut genes: Vec<Gene> = Vec::new();
    let mut groups: Vec<(u32, usize, Domain)> = Vec::new();

    let push = |genes: &mut Vec<Gene>, slots: Vec<Slot>, domain: &Domain, name: String| {
        if domain.is_free() {
            genes.push(Gene {
                name,
                kind: if domain.is_categorical() {
                    GeneKind::Categorical
                } else {
                    GeneKind::Continuous
                },
                values: domain.values(),
                targets: slots,
            });
        }
    };

    push(&mut genes, vec![Slot::Resolution], resolution, "res".into());

    for (i, st) in stages.iter().enumerate() {
        push(
            &mut genes,
            vec![Slot::Kernel(i)],
            &st.kernel,
            Slot::Kernel(i).name(),
        );
        let e = &st.expansion;
        let parts: Vec<(Vec<Slot>, &Domain, Option<u32>)> = if e.tied {
            vec![(
                vec![Slot::ExpansionFirst(i), Slot::ExpansionRest(i)],
                &e.first,
                e.first_group,
            )]
        } else {
            vec![
                (vec![Slot::ExpansionFirst(i)], &e.first, e.first_group),
                (vec![Slot::ExpansionRest(i)], &e.rest, e.rest_group),
            ]
        };
        for (slots, domain, group) in parts {
            match group {
                Some(id) => {
                    if let Some((_, gi, d)) = groups.iter().find(|(gid, _, _)| *gid == id) {
                        if d != domain {
                            return Err(Error::Parse {
                                line: st.line,
                                field: "e".into(),
                                message: format!("shared group {id} has differing ranges"),
                            });
                        }
                        if domain.is_free() {
                            genes[*gi].targets.extend(slots);
                        }
                    } else {
                        let name = format!("group{id}.e");
                        if domain.is_free() {
                            groups.push((id, genes.len(), domain.clone()));
                        } else {
                            groups.push((id, usize::MAX, domain.clone()));
                        }
                        push(&mut genes, slots, domain, name);
                    }
                }
                None => {
                    let name = slots[0].name();
                    push(&mut genes, slots, domain, name);
                }
            }
        }
        push(
            &mut genes,
            vec![Slot::Channels(i)],
            &st.channels,
            Slot::Channels(i).name(),
        );
        push(
            &mut genes,
            vec![Slot::Depth(i)],
            &st.depth,
            Slot::Depth(i).name(),
        );
    }

    let r = recipe;
    let opt = Domain::Choice(r.optimizer.iter().map(|o| o.code()).collect());
    let ema = Domain::Choice(r.ema.iter().map(|&b| i64::from(b)).collect());
    for (field, domain) in [
        (RecipeField::Lr, &r.lr),
        (RecipeField::Optimizer, &opt),
        (RecipeField::Ema, &ema),
        (RecipeField::Dropout, &r.dropout),
        (RecipeField::StochasticDepth, &r.stochastic_depth),
        (RecipeField::Mixup, &r.mixup),
        (RecipeField::WeightDecay, &r.weight_decay),
    ] {
        push(
            &mut genes,
            vec![Slot::Recipe(field)],
            domain,
            field.key().into(),
        );
    }
    Ok(genes)
}
