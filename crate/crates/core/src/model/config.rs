use std::collections::BTreeMap;

use super::{ModelError, SandpileSpec, SiteIdx};

/// Particle counts for every site of a spec, indexed by [`SiteIdx`].
///
/// A configuration does not carry its spec; it is only meaningful next to the
/// spec it was built for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    heights: Vec<u32>,
}

impl Configuration {
    pub fn from_heights(spec: &SandpileSpec, heights: Vec<u32>) -> Result<Configuration, ModelError> {
        if heights.len() != spec.len() {
            return Err(ModelError::ConfigurationMismatch {
                expected: spec.len(),
                found: heights.len(),
            });
        }
        Ok(Configuration { heights })
    }

    /// Empty configuration.
    pub fn zeros(spec: &SandpileSpec) -> Configuration {
        Configuration { heights: vec![0; spec.len()] }
    }

    /// `c_max`: every site one particle short of toppling.
    pub fn max_stable(spec: &SandpileSpec) -> Configuration {
        Configuration {
            heights: spec.capacities().iter().map(|c| c - 1).collect(),
        }
    }

    /// Builds a configuration from a total map keyed by site name.
    pub fn from_map(spec: &SandpileSpec, map: &BTreeMap<String, u32>) -> Result<Configuration, ModelError> {
        let mut heights = vec![None; spec.len()];
        for (site, &h) in map {
            heights[spec.require_site(site)?] = Some(h);
        }
        let heights = heights
            .into_iter()
            .enumerate()
            .map(|(v, h)| {
                h.ok_or_else(|| ModelError::Schema {
                    field: "heights".into(),
                    message: format!("missing height for site {}", spec.site_name(v)),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Configuration { heights })
    }

    pub fn to_map(&self, spec: &SandpileSpec) -> BTreeMap<String, u32> {
        spec.sites().iter().cloned().zip(self.heights.iter().copied()).collect()
    }

    pub fn heights(&self) -> &[u32] {
        &self.heights
    }

    pub fn get(&self, site: SiteIdx) -> u32 {
        self.heights[site]
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.heights.iter().map(|&h| h as u64).sum()
    }

    pub fn with_added(&self, site: SiteIdx, particles: u32) -> Configuration {
        let mut next = self.clone();
        next.heights[site] += particles;
        next
    }

    pub(crate) fn heights_mut(&mut self) -> &mut [u32] {
        &mut self.heights
    }

    /// Pointwise `self <= other`.
    pub fn is_dominated_by(&self, other: &Configuration) -> bool {
        self.heights.iter().zip(&other.heights).all(|(a, b)| a <= b)
    }
}

/// Heights on a region of sites, keyed by site name. Used for forbidden
/// sub-configurations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubConfiguration {
    heights: BTreeMap<String, u32>,
}

impl SubConfiguration {
    pub fn new(heights: BTreeMap<String, u32>) -> Result<SubConfiguration, ModelError> {
        if heights.is_empty() {
            return Err(ModelError::Schema {
                field: "region_heights".into(),
                message: "region must be nonempty".into(),
            });
        }
        Ok(SubConfiguration { heights })
    }

    /// Same height on every site of `region`.
    pub fn uniform<I, S>(region: I, height: u32) -> Result<SubConfiguration, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SubConfiguration::new(region.into_iter().map(|s| (s.into(), height)).collect())
    }

    pub fn heights(&self) -> &BTreeMap<String, u32> {
        &self.heights
    }

    pub fn region(&self) -> impl Iterator<Item = &str> {
        self.heights.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn get(&self, site: &str) -> Option<u32> {
        self.heights.get(site).copied()
    }

    /// Resolves the region against `spec`, failing on unknown sites.
    pub fn resolve(&self, spec: &SandpileSpec) -> Result<Vec<(SiteIdx, u32)>, ModelError> {
        self.heights
            .iter()
            .map(|(s, &h)| Ok((spec.require_site(s)?, h)))
            .collect()
    }

    /// Exact agreement of `config` with every height of the region.
    pub fn matches(&self, spec: &SandpileSpec, config: &Configuration) -> Result<bool, ModelError> {
        Ok(self.resolve(spec)?.into_iter().all(|(v, h)| config.get(v) == h))
    }

    /// Restriction to the given sites; `None` if nothing is left.
    pub fn restrict_to<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> Option<SubConfiguration> {
        let heights: BTreeMap<String, u32> = keep
            .into_iter()
            .filter_map(|s| self.heights.get(s).map(|h| (s.to_string(), *h)))
            .collect();
        SubConfiguration::new(heights).ok()
    }

    pub(crate) fn heights_mut(&mut self) -> &mut BTreeMap<String, u32> {
        &mut self.heights
    }
}
