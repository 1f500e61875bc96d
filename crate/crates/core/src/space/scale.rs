use super::{ArchConfig, Domain, SearchSpaceDef};
use crate::error::{Error, Result};

/// Nearest grid value; ties go to the larger value.
fn snap(domain: &Domain, target: f64) -> i64 {
    let mut best = domain.first();
    let mut best_d = f64::INFINITY;
    for v in domain.values() {
        let d = (v as f64 - target).abs();
        if d < best_d || (d == best_d && v > best) {
            best = v;
            best_d = d;
        }
    }
    best
}

/// Scales depth, width and resolution of `arch` and snaps the result back
/// onto the space grid.
pub fn compound_scale(
    space: &SearchSpaceDef,
    arch: &ArchConfig,
    depth_mult: f64,
    width_mult: f64,
    res_mult: f64,
) -> Result<ArchConfig> {
    for (name, m) in [
        ("depth", depth_mult),
        ("width", width_mult),
        ("resolution", res_mult),
    ] {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} multiplier must be positive, got {m}"
            )));
        }
    }
    if arch.stages.len() != space.stages.len() {
        return Err(Error::validation(
            "stages",
            "stage count differs from the space",
        ));
    }
    let mut out = arch.clone();
    out.resolution = snap(&space.resolution, f64::from(arch.resolution) * res_mult) as u32;
    for (i, (st, spec)) in out.stages.iter_mut().zip(&space.stages).enumerate() {
        let depth = (f64::from(st.depth) * depth_mult).round();
        if depth < 1.0 {
            return Err(Error::validation(
                format!("stage{i}.n"),
                format!("scaled depth {depth} is below 1"),
            ));
        }
        st.depth = snap(&spec.depth, depth) as u32;
        st.channels = snap(&spec.channels, f64::from(st.channels) * width_mult) as u32;
    }
    Ok(out)
}
