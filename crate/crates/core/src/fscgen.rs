//! Gluing forbidden sub-configurations into larger ones.
//!
//! Two forbidden sub-configurations on irreducible regions that agree where
//! the regions overlap combine into a forbidden sub-configuration on the
//! union, once one extra particle is placed on a shared site whose rules do
//! not feed other shared sites. Chaining 2×2 zero blocks of Manna's model
//! corner to corner gives FSCs of any size.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::builders::{grid_ns_ew, parse_site_name, site_name, BuildError};
use crate::model::{SandpileSpec, SubConfiguration};
use crate::reduce::{is_irreducible, restrict, ReduceError, SiteSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FscGenError {
    #[error("restriction to {region:?} is not irreducible")]
    NotIrreducibleInput { region: Vec<String> },

    #[error("regions disagree at {site}: {left} vs {right}")]
    RegionsDisagreeOnIntersection { site: String, left: u32, right: u32 },

    #[error("glue site {0} is not in both regions")]
    GlueSiteNotShared(String),

    #[error("glue site {site} has a rule delivering to shared site {target}")]
    GlueSiteNotIsolated { site: String, target: String },

    #[error("block count must be at least 1, got {0}")]
    InvalidCount(usize),

    #[error("site {0} is not a grid site name")]
    NotGridSite(String),

    #[error(transparent)]
    Reduce(#[from] ReduceError),

    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Two irreducible regions and an isolated shared site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlueSpec {
    pub region_a: SiteSet,
    pub region_b: SiteSet,
    pub glue_site: String,
}

impl GlueSpec {
    /// Checks that both restrictions are irreducible, that the glue site is
    /// shared and that none of its rules (restricted to the union) delivers
    /// to another shared site.
    pub fn new(
        spec: &SandpileSpec,
        region_a: SiteSet,
        region_b: SiteSet,
        glue_site: &str,
    ) -> Result<GlueSpec, FscGenError> {
        for region in [&region_a, &region_b] {
            if !is_irreducible(&restrict(spec, region)?) {
                return Err(FscGenError::NotIrreducibleInput { region: region.iter().cloned().collect() });
            }
        }
        if !region_a.contains(glue_site) || !region_b.contains(glue_site) {
            return Err(FscGenError::GlueSiteNotShared(glue_site.to_string()));
        }
        let union: SiteSet = region_a.union(&region_b).cloned().collect();
        let restricted = restrict(spec, &union)?;
        let v = restricted
            .site_index(glue_site)
            .ok_or_else(|| ReduceError::UnknownSite(glue_site.to_string()))?;
        for t in restricted.rules(v) {
            for u in t.support() {
                let target = restricted.site_name(u);
                if target != glue_site && region_a.contains(target) && region_b.contains(target) {
                    return Err(FscGenError::GlueSiteNotIsolated {
                        site: glue_site.to_string(),
                        target: target.to_string(),
                    });
                }
            }
        }
        Ok(GlueSpec { region_a, region_b, glue_site: glue_site.to_string() })
    }
}

/// Restriction to the union of two irreducible regions, itself irreducible.
pub fn union_subsandpiles(
    spec: &SandpileSpec,
    region_a: &SiteSet,
    region_b: &SiteSet,
) -> Result<SandpileSpec, FscGenError> {
    for region in [region_a, region_b] {
        if !is_irreducible(&restrict(spec, region)?) {
            return Err(FscGenError::NotIrreducibleInput { region: region.iter().cloned().collect() });
        }
    }
    let union: SiteSet = region_a.union(region_b).cloned().collect();
    let out = restrict(spec, &union)?;
    assert!(is_irreducible(&out), "union of irreducible restrictions must be irreducible");
    Ok(out)
}

/// `c1 ∨ c2` plus one particle at `glue_site`.
///
/// Forbiddenness of the inputs is the caller's claim; only agreement on the
/// overlap and the structural conditions of [`GlueSpec`] are checked.
pub fn glue(
    spec: &SandpileSpec,
    c1: &SubConfiguration,
    c2: &SubConfiguration,
    glue_site: &str,
) -> Result<SubConfiguration, FscGenError> {
    for (site, &left) in c1.heights() {
        if let Some(right) = c2.get(site) {
            if left != right {
                return Err(FscGenError::RegionsDisagreeOnIntersection { site: site.clone(), left, right });
            }
        }
    }
    let region = |c: &SubConfiguration| -> SiteSet { c.region().map(str::to_string).collect() };
    GlueSpec::new(spec, region(c1), region(c2), glue_site)?;
    let mut out = c1.clone();
    out.heights_mut().extend(c2.heights().iter().map(|(s, &h)| (s.clone(), h)));
    *out.heights_mut().get_mut(glue_site).expect("glue site is shared") += 1;
    Ok(out)
}

fn zero_block(row: usize, col: usize) -> SubConfiguration {
    SubConfiguration::uniform(
        [(row, col), (row, col + 1), (row + 1, col), (row + 1, col + 1)].map(|(r, c)| site_name(r, c)),
        0,
    )
    .expect("block is nonempty")
}

/// Diagonal chain of `blocks` zero 2×2 blocks of Manna's model, glued at
/// shared corners, with its top-left site at `offset` (1-indexed row, col).
/// Region size is `3 * blocks + 1`; shared corners hold one particle.
pub fn manna_fsc_chain(blocks: usize, offset: (usize, usize)) -> Result<SubConfiguration, FscGenError> {
    if blocks == 0 {
        return Err(FscGenError::InvalidCount(blocks));
    }
    let (r0, c0) = offset;
    if r0 == 0 || c0 == 0 {
        return Err(BuildError::InvalidParameter(format!("offset {r0},{c0} must be 1-indexed")).into());
    }
    let host = grid_ns_ew(r0 + blocks, c0 + blocks)?;
    let mut chain = zero_block(r0, c0);
    for i in 1..blocks {
        let corner = site_name(r0 + i, c0 + i);
        chain = glue(&host, &chain, &zero_block(r0 + i, c0 + i), &corner)?;
    }
    Ok(chain)
}

/// Text grid of `rows × cols` with region heights as digits and `.` for
/// sites outside the region. Sites beyond the grid are an error.
pub fn render_grid(sub: &SubConfiguration, rows: usize, cols: usize) -> Result<String, FscGenError> {
    let mut cells: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for (site, &h) in sub.heights() {
        match parse_site_name(site) {
            Some((r, c)) if (1..=rows).contains(&r) && (1..=cols).contains(&c) => {
                cells.insert((r, c), h);
            }
            _ => return Err(FscGenError::NotGridSite(site.clone())),
        }
    }
    let mut out = String::new();
    for r in 1..=rows {
        let line: Vec<String> = (1..=cols)
            .map(|c| cells.get(&(r, c)).map_or(".".to_string(), u32::to_string))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Renders on the smallest grid anchored at `r1c1` that holds the region.
pub fn render(sub: &SubConfiguration) -> Result<String, FscGenError> {
    let mut rows = 0;
    let mut cols = 0;
    for site in sub.region() {
        let (r, c) = parse_site_name(site).ok_or_else(|| FscGenError::NotGridSite(site.to_string()))?;
        rows = rows.max(r);
        cols = cols.max(c);
    }
    render_grid(sub, rows, cols)
}
