//! Toppling and deterministic stabilization.

use std::collections::VecDeque;

use serde::Serialize;

use super::{Configuration, ModelError, SandpileSpec, SiteIdx};

/// One toppling: which site fired, which of its rules was used and how many
/// particles left the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ToppleEvent {
    pub site: SiteIdx,
    pub rule_index: usize,
    pub sink_loss: u32,
}

pub fn is_stable(spec: &SandpileSpec, config: &Configuration) -> bool {
    (0..spec.len()).all(|v| config.get(v) < spec.capacity(v))
}

/// Sites with `c(v) >= C(v)`, in canonical order.
pub fn unstable_sites(spec: &SandpileSpec, config: &Configuration) -> Vec<SiteIdx> {
    (0..spec.len())
        .filter(|&v| config.get(v) >= spec.capacity(v))
        .collect()
}

pub fn topple(
    spec: &SandpileSpec,
    config: &Configuration,
    site: SiteIdx,
    rule_index: usize,
) -> Result<(Configuration, ToppleEvent), ModelError> {
    let mut next = config.clone();
    let event = topple_in_place(spec, &mut next, site, rule_index)?;
    Ok((next, event))
}

pub(crate) fn topple_in_place(
    spec: &SandpileSpec,
    config: &mut Configuration,
    site: SiteIdx,
    rule_index: usize,
) -> Result<ToppleEvent, ModelError> {
    if site >= spec.len() {
        return Err(ModelError::UnknownSite(format!("#{site}")));
    }
    let capacity = spec.capacity(site);
    if config.get(site) < capacity {
        return Err(ModelError::ToppleAtStableSite {
            site: spec.site_name(site).to_string(),
            height: config.get(site),
            capacity,
        });
    }
    let rule = spec
        .rules(site)
        .get(rule_index)
        .ok_or_else(|| ModelError::InvalidRuleIndex {
            site: spec.site_name(site).to_string(),
            index: rule_index,
            count: spec.rules(site).len(),
        })?;
    let heights = config.heights_mut();
    heights[site] -= capacity;
    for &u in rule.targets() {
        heights[u] += 1;
    }
    Ok(ToppleEvent {
        site,
        rule_index,
        sink_loss: capacity - rule.len() as u32,
    })
}

/// Picks the next toppling from the current configuration and its unstable
/// sites (never empty when called).
pub trait TopplePolicy {
    fn choose(&mut self, config: &Configuration, unstable: &[SiteIdx]) -> (SiteIdx, usize);
}

impl<F> TopplePolicy for F
where
    F: FnMut(&Configuration, &[SiteIdx]) -> (SiteIdx, usize),
{
    fn choose(&mut self, config: &Configuration, unstable: &[SiteIdx]) -> (SiteIdx, usize) {
        self(config, unstable)
    }
}

/// Topples the lowest unstable site with a fixed rule index.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstUnstable {
    pub rule_index: usize,
}

impl TopplePolicy for FirstUnstable {
    fn choose(&mut self, _config: &Configuration, unstable: &[SiteIdx]) -> (SiteIdx, usize) {
        (unstable[0], self.rule_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stabilization {
    pub config: Configuration,
    pub events: Vec<ToppleEvent>,
}

/// Default toppling budget: 10,000 per site.
pub fn default_step_budget(spec: &SandpileSpec) -> usize {
    10_000 * spec.len().max(1)
}

const TRAILING: usize = 8;

/// Topples according to `policy` until stable. Fails with
/// [`ModelError::StepBudgetExhausted`] after `budget` topplings, carrying the
/// last few configurations visited.
pub fn stabilize(
    spec: &SandpileSpec,
    config: &Configuration,
    policy: &mut impl TopplePolicy,
    budget: usize,
) -> Result<Stabilization, ModelError> {
    let mut current = config.clone();
    let mut events = Vec::new();
    let mut trailing = VecDeque::with_capacity(TRAILING);
    loop {
        let unstable = unstable_sites(spec, &current);
        if unstable.is_empty() {
            return Ok(Stabilization { config: current, events });
        }
        if events.len() >= budget {
            trailing.push_back(current);
            return Err(ModelError::StepBudgetExhausted {
                budget,
                trailing: trailing.into_iter().collect(),
            });
        }
        if trailing.len() == TRAILING - 1 {
            trailing.pop_front();
        }
        trailing.push_back(current.clone());
        let (site, rule_index) = policy.choose(&current, &unstable);
        events.push(topple_in_place(spec, &mut current, site, rule_index)?);
    }
}
