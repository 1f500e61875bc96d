//! Space-file parsing.
//!
//! The file is TOML. Parameter values use the tabular notation of the
//! search-space table: `(low, high, step)` ranges, `(low, high)` ranges with
//! step 1, `[a, b]` choice lists, plain scalars, and `-` for not applicable.
//! Expansion accepts `first / rest`, and a `^N` suffix marks membership of
//! shared group `N`.

use serde::Deserialize;
use toml::Spanned;

use super::{
    Activation, BlockKind, Domain, ExpansionSpec, IntRange, Optimizer, RecipeRanges,
    SearchSpaceDef, StageSpec,
};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    name: Option<String>,
    resolution: Spanned<toml::Value>,
    input_channels: Option<u32>,
    stage: Vec<RawStage>,
    recipe: Option<RawRecipe>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    block: Spanned<String>,
    k: Option<Spanned<toml::Value>>,
    e: Option<Spanned<toml::Value>>,
    c: Spanned<toml::Value>,
    n: Option<Spanned<toml::Value>>,
    s: Option<Spanned<toml::Value>>,
    se: Option<Spanned<toml::Value>>,
    act: Option<Spanned<toml::Value>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecipe {
    lr: Spanned<toml::Value>,
    optim: Spanned<toml::Value>,
    ema: Spanned<toml::Value>,
    p: Spanned<toml::Value>,
    d: Spanned<toml::Value>,
    m: Spanned<toml::Value>,
    wd: Spanned<toml::Value>,
    sgd_lr_multiplier: Option<u32>,
}

/// One parsed cell of the table notation.
#[derive(Debug, Clone, PartialEq)]
enum Cell {
    NotApplicable,
    Scalar(String),
    Range(String, String, Option<String>),
    Choice(Vec<String>),
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())]
            .bytes()
            .filter(|&b| b == b'\n')
            .count()
            + 1
    }

    fn err(&self, offset: usize, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_of(offset),
            field: field.to_string(),
            message: message.into(),
        }
    }
}

fn value_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.trim().to_string()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Splits a trailing `^N` group marker.
fn split_group(s: &str) -> std::result::Result<(&str, Option<u32>), String> {
    match s.rsplit_once('^') {
        Some((body, g)) => g
            .trim()
            .parse::<u32>()
            .map(|g| (body.trim(), Some(g)))
            .map_err(|_| format!("bad group marker `^{g}`")),
        None => Ok((s.trim(), None)),
    }
}

fn parse_cell(s: &str) -> std::result::Result<Cell, String> {
    let s = s.trim();
    if s == "-" {
        return Ok(Cell::NotApplicable);
    }
    let inner = |open: char, close: char| -> std::result::Result<Vec<String>, String> {
        let body = s
            .strip_prefix(open)
            .and_then(|r| r.strip_suffix(close))
            .ok_or_else(|| format!("unbalanced `{open}{close}` in `{s}`"))?;
        let parts: Vec<String> = body.split(',').map(|p| p.trim().to_string()).collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(format!("empty element in `{s}`"));
        }
        Ok(parts)
    };
    if s.starts_with('(') {
        let mut parts = inner('(', ')')?;
        match parts.len() {
            2 => {
                let hi = parts.pop().unwrap();
                let lo = parts.pop().unwrap();
                Ok(Cell::Range(lo, hi, None))
            }
            3 => {
                let st = parts.pop().unwrap();
                let hi = parts.pop().unwrap();
                let lo = parts.pop().unwrap();
                Ok(Cell::Range(lo, hi, Some(st)))
            }
            n => Err(format!("range tuple needs 2 or 3 values, got {n}")),
        }
    } else if s.starts_with('[') {
        Ok(Cell::Choice(inner('[', ']')?))
    } else if s.is_empty() {
        Err("empty value".into())
    } else {
        Ok(Cell::Scalar(s.to_string()))
    }
}

/// Numeric interpretation of a cell; `scale` converts decimal text into
/// integer units (100 for expansions, 1 otherwise).
fn numeric_domain(
    ctx: &Ctx<'_>,
    offset: usize,
    field: &str,
    cell: &Cell,
    scale: i64,
    not_applicable: Option<i64>,
) -> Result<Domain> {
    let num = |t: &str| -> Result<i64> {
        if scale == 1 {
            t.parse::<i64>()
                .map_err(|_| ctx.err(offset, field, format!("`{t}` is not an integer")))
        } else {
            let f: f64 = t
                .parse()
                .map_err(|_| ctx.err(offset, field, format!("`{t}` is not a number")))?;
            let scaled = f * scale as f64;
            if (scaled - scaled.round()).abs() > 1e-6 {
                return Err(ctx.err(offset, field, format!("`{t}` has too many decimals")));
            }
            Ok(scaled.round() as i64)
        }
    };
    match cell {
        Cell::NotApplicable => not_applicable
            .map(Domain::Fixed)
            .ok_or_else(|| ctx.err(offset, field, "`-` is not allowed here")),
        Cell::Scalar(t) => Ok(Domain::Fixed(num(t)?)),
        Cell::Range(lo, hi, st) => {
            let low = num(lo)?;
            let high = num(hi)?;
            let step = match st {
                Some(st) => {
                    st.parse::<i64>().map_err(|_| {
                        ctx.err(offset, field, format!("step `{st}` is not an integer"))
                    })? * scale
                }
                None => scale,
            };
            if low > high {
                return Err(Error::RangeInversion {
                    line: ctx.line_of(offset),
                    field: field.to_string(),
                    low,
                    high,
                });
            }
            if step <= 0 {
                return Err(ctx.err(offset, field, "step must be positive"));
            }
            if low == high {
                return Ok(Domain::Fixed(low));
            }
            Ok(Domain::Range(IntRange { low, high, step }))
        }
        Cell::Choice(items) => {
            let vals = items.iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?;
            check_distinct(ctx, offset, field, &vals)?;
            Ok(if vals.len() == 1 {
                Domain::Fixed(vals[0])
            } else {
                Domain::Choice(vals)
            })
        }
    }
}

fn check_distinct<T: PartialEq + std::fmt::Debug>(
    ctx: &Ctx<'_>,
    offset: usize,
    field: &str,
    vals: &[T],
) -> Result<()> {
    if vals.is_empty() {
        return Err(ctx.err(offset, field, "choice list is empty"));
    }
    for (i, v) in vals.iter().enumerate() {
        if vals[..i].contains(v) {
            return Err(ctx.err(offset, field, format!("duplicate choice {v:?}")));
        }
    }
    Ok(())
}

fn cell_of(ctx: &Ctx<'_>, field: &str, v: &Spanned<toml::Value>) -> Result<(usize, String)> {
    let offset = v.span().start;
    let text = value_text(v.get_ref())
        .ok_or_else(|| ctx.err(offset, field, "expected a string or number"))?;
    Ok((offset, text))
}

fn domain_field(
    ctx: &Ctx<'_>,
    field: &str,
    v: &Spanned<toml::Value>,
    not_applicable: Option<i64>,
) -> Result<Domain> {
    let (offset, text) = cell_of(ctx, field, v)?;
    let cell = parse_cell(&text).map_err(|m| ctx.err(offset, field, m))?;
    numeric_domain(ctx, offset, field, &cell, 1, not_applicable)
}

fn expansion_field(ctx: &Ctx<'_>, v: Option<&Spanned<toml::Value>>) -> Result<ExpansionSpec> {
    let Some(v) = v else {
        return Ok(fixed_expansion(100));
    };
    let (offset, text) = cell_of(ctx, "e", v)?;
    let one = |part: &str| -> Result<(Domain, Option<u32>)> {
        let (body, group) = split_group(part).map_err(|m| ctx.err(offset, "e", m))?;
        let cell = parse_cell(body).map_err(|m| ctx.err(offset, "e", m))?;
        Ok((
            numeric_domain(ctx, offset, "e", &cell, 100, Some(100))?,
            group,
        ))
    };
    match text.split_once('/') {
        Some((first, rest)) => {
            let (first, first_group) = one(first)?;
            let (rest, rest_group) = one(rest)?;
            Ok(ExpansionSpec {
                first,
                rest,
                first_group,
                rest_group,
                tied: false,
            })
        }
        None => {
            let (d, group) = one(&text)?;
            Ok(ExpansionSpec {
                first: d.clone(),
                rest: d,
                first_group: group,
                rest_group: group,
                tied: true,
            })
        }
    }
}

fn fixed_expansion(v: i64) -> ExpansionSpec {
    ExpansionSpec {
        first: Domain::Fixed(v),
        rest: Domain::Fixed(v),
        first_group: None,
        rest_group: None,
        tied: true,
    }
}

fn stage(ctx: &Ctx<'_>, raw: &RawStage) -> Result<StageSpec> {
    let line = ctx.line_of(raw.block.span().start);
    let block =
        BlockKind::parse(raw.block.get_ref().trim()).ok_or_else(|| Error::UnknownBlock {
            line,
            kind: raw.block.get_ref().clone(),
        })?;
    let convolutional = matches!(block, BlockKind::Conv | BlockKind::MBConv);

    let kernel = match &raw.k {
        Some(k) => domain_field(ctx, "k", k, Some(0))?,
        None => Domain::Fixed(0),
    };
    if convolutional {
        let bad = kernel.values().into_iter().find(|&k| k < 1 || k % 2 == 0);
        if let Some(k) = bad {
            let off = raw
                .k
                .as_ref()
                .map_or(raw.block.span().start, |k| k.span().start);
            return Err(ctx.err(
                off,
                "k",
                format!("kernel {k} must be a positive odd integer"),
            ));
        }
    }

    let expansion =
        if block == BlockKind::Conv || block == BlockKind::FC || block == BlockKind::Skip {
            // plain layers have no expansion; any value in the file is ignored
            fixed_expansion(100)
        } else {
            expansion_field(ctx, raw.e.as_ref())?
        };

    let channels = domain_field(ctx, "c", &raw.c, None)?;
    if channels.values().iter().any(|&c| c < 1) {
        return Err(ctx.err(raw.c.span().start, "c", "channels must be positive"));
    }

    let depth = match &raw.n {
        Some(n) => domain_field(ctx, "n", n, Some(1))?,
        None => Domain::Fixed(1),
    };
    if depth.values().iter().any(|&d| d < 1) {
        let off = raw.n.as_ref().map_or(0, |n| n.span().start);
        return Err(ctx.err(off, "n", "depth must be at least 1"));
    }

    let stride = match &raw.s {
        Some(s) => match domain_field(ctx, "s", s, Some(1))? {
            Domain::Fixed(v @ (1 | 2)) => v as u32,
            _ => return Err(ctx.err(s.span().start, "s", "stride must be 1 or 2")),
        },
        None => 1,
    };

    let se = match &raw.se {
        Some(v) => {
            let (off, t) = cell_of(ctx, "se", v)?;
            match t.as_str() {
                "Y" | "y" | "true" => true,
                "N" | "n" | "-" | "false" => false,
                other => {
                    return Err(ctx.err(off, "se", format!("expected Y, N or -, got `{other}`")))
                }
            }
        }
        None => false,
    };

    let activation = match &raw.act {
        Some(v) => {
            let (off, t) = cell_of(ctx, "act", v)?;
            Activation::parse(&t)
                .ok_or_else(|| ctx.err(off, "act", format!("unknown activation `{t}`")))?
        }
        None => Activation::Identity,
    };

    Ok(StageSpec {
        block,
        kernel,
        expansion,
        channels,
        depth,
        stride,
        se,
        activation,
        line,
    })
}

fn labels(ctx: &Ctx<'_>, field: &str, v: &Spanned<toml::Value>) -> Result<(usize, Vec<String>)> {
    let (offset, text) = cell_of(ctx, field, v)?;
    match parse_cell(&text).map_err(|m| ctx.err(offset, field, m))? {
        Cell::Choice(items) => Ok((offset, items)),
        Cell::Scalar(s) => Ok((offset, vec![s])),
        _ => Err(ctx.err(offset, field, "expected a choice list `[a, b]`")),
    }
}

fn recipe(ctx: &Ctx<'_>, raw: &RawRecipe) -> Result<RecipeRanges> {
    let (off, opt_labels) = labels(ctx, "optim", &raw.optim)?;
    let optimizer = opt_labels
        .iter()
        .map(|l| {
            Optimizer::parse(l)
                .ok_or_else(|| ctx.err(off, "optim", format!("unknown optimizer `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_distinct(ctx, off, "optim", &optimizer)?;

    let (off, ema_labels) = labels(ctx, "ema", &raw.ema)?;
    let ema = ema_labels
        .iter()
        .map(|l| match l.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(ctx.err(off, "ema", format!("expected true/false, got `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    check_distinct(ctx, off, "ema", &ema)?;

    let nonneg = |field: &str, v: &Spanned<toml::Value>| -> Result<Domain> {
        let d = domain_field(ctx, field, v, None)?;
        if d.values().iter().any(|&x| x < 0) {
            return Err(ctx.err(v.span().start, field, "values must be non-negative"));
        }
        Ok(d)
    };

    Ok(RecipeRanges {
        lr: nonneg("lr", &raw.lr)?,
        optimizer,
        ema,
        dropout: nonneg("p", &raw.p)?,
        stochastic_depth: nonneg("d", &raw.d)?,
        mixup: nonneg("m", &raw.m)?,
        weight_decay: nonneg("wd", &raw.wd)?,
        sgd_lr_multiplier: raw.sgd_lr_multiplier.unwrap_or(4),
    })
}

/// Recipe used when a file has no `[recipe]` table: every field fixed.
fn fixed_recipe() -> RecipeRanges {
    RecipeRanges {
        lr: Domain::Fixed(25),
        optimizer: vec![Optimizer::RMSProp],
        ema: vec![true],
        dropout: Domain::Fixed(0),
        stochastic_depth: Domain::Fixed(0),
        mixup: Domain::Fixed(0),
        weight_decay: Domain::Fixed(10),
        sgd_lr_multiplier: 4,
    }
}

pub(super) fn parse_space(text: &str) -> Result<SearchSpaceDef> {
    let raw: RawSpace = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| Ctx { text }.line_of(s.start));
        Error::Parse {
            line,
            field: "<file>".into(),
            message: e.message().to_string(),
        }
    })?;
    let ctx = Ctx { text };

    let resolution = domain_field(&ctx, "resolution", &raw.resolution, None)?;
    if resolution.values().iter().any(|&r| r < 1) {
        return Err(ctx.err(
            raw.resolution.span().start,
            "resolution",
            "must be positive",
        ));
    }
    if raw.stage.is_empty() {
        return Err(Error::Parse {
            line: 0,
            field: "stage".into(),
            message: "at least one stage is required".into(),
        });
    }
    let stages = raw
        .stage
        .iter()
        .map(|s| stage(&ctx, s))
        .collect::<Result<Vec<_>>>()?;
    let recipe = match &raw.recipe {
        Some(r) => recipe(&ctx, r)?,
        None => fixed_recipe(),
    };
    SearchSpaceDef::from_parts(
        raw.name.unwrap_or_else(|| "unnamed".into()),
        resolution,
        raw.input_channels.unwrap_or(3),
        stages,
        recipe,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells() {
        assert_eq!(parse_cell("-").unwrap(), Cell::NotApplicable);
        assert_eq!(
            parse_cell("(16, 24, 2)").unwrap(),
            Cell::Range("16".into(), "24".into(), Some("2".into()))
        );
        assert_eq!(
            parse_cell("[3, 5]").unwrap(),
            Cell::Choice(vec!["3".into(), "5".into()])
        );
        assert!(parse_cell("(1, 2, 3, 4)").is_err());
        assert!(parse_cell("(1, 2").is_err());
        assert_eq!(split_group("(4, 7)^1").unwrap(), ("(4, 7)", Some(1)));
    }
}
