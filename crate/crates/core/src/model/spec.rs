//! Sandpile specifications: sites, capacities and toppling rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use super::ModelError;

/// Position of a site in the canonical (lexicographic) site order of a spec.
pub type SiteIdx = usize;

/// A toppling rule: the multiset of sites that each receive one particle per
/// occurrence. Stored sorted, so equal multisets compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Rule(Vec<SiteIdx>);

impl Rule {
    pub fn new(mut targets: Vec<SiteIdx>) -> Rule {
        targets.sort_unstable();
        Rule(targets)
    }

    /// All targets with multiplicity, sorted.
    pub fn targets(&self) -> &[SiteIdx] {
        &self.0
    }

    /// Number of particles delivered to ordinary sites.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct targets, sorted.
    pub fn support(&self) -> impl Iterator<Item = SiteIdx> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(i, s)| *i == 0 || self.0[i - 1] != **s)
            .map(|(_, s)| *s)
    }

    pub fn multiplicity(&self, site: SiteIdx) -> usize {
        self.0.iter().filter(|s| **s == site).count()
    }
}

/// Name-based, unvalidated description of a sandpile. This is what the JSON
/// layer produces and what [`validate`] inspects.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpecDocument {
    pub name: String,
    pub sites: Vec<String>,
    pub capacity: BTreeMap<String, u32>,
    pub rules: BTreeMap<String, Vec<Vec<String>>>,
    pub metadata: Option<serde_json::Value>,
}

/// A validated sandpile. Sites are kept in lexicographic order and every
/// per-site vector is indexed by [`SiteIdx`]. Rule lists are sorted and free
/// of duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandpileSpec {
    name: String,
    sites: Vec<String>,
    index: HashMap<String, SiteIdx>,
    capacity: Vec<u32>,
    rules: Vec<Vec<Rule>>,
    metadata: Option<serde_json::Value>,
}

impl SandpileSpec {
    /// Builds a spec from a document, rejecting it when [`validate`] reports
    /// any violation. Duplicate rules are merged.
    pub fn from_document(doc: SpecDocument) -> Result<SandpileSpec, ModelError> {
        let report = validate(&doc);
        if !report.is_clean() {
            return Err(ModelError::Invalid(report));
        }
        let mut sites = doc.sites;
        sites.sort();
        let index: HashMap<String, SiteIdx> =
            sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let capacity = sites.iter().map(|s| doc.capacity[s]).collect();
        let rules = sites
            .iter()
            .map(|s| {
                let set: BTreeSet<Rule> = doc.rules[s]
                    .iter()
                    .map(|t| Rule::new(t.iter().map(|u| index[u]).collect()))
                    .collect();
                set.into_iter().collect()
            })
            .collect();
        Ok(SandpileSpec {
            name: doc.name,
            sites,
            index,
            capacity,
            rules,
            metadata: doc.metadata,
        })
    }

    /// Convenience constructor used by builders and tests.
    pub fn new<S: Into<String>>(
        name: S,
        capacity: impl IntoIterator<Item = (String, u32)>,
        rules: impl IntoIterator<Item = (String, Vec<Vec<String>>)>,
    ) -> Result<SandpileSpec, ModelError> {
        let capacity: BTreeMap<String, u32> = capacity.into_iter().collect();
        let doc = SpecDocument {
            name: name.into(),
            sites: capacity.keys().cloned().collect(),
            capacity,
            rules: rules.into_iter().collect(),
            metadata: None,
        };
        SandpileSpec::from_document(doc)
    }

    /// Index-based constructor. `rules[v]` lists the rules of site `v` by
    /// target index. Used where a spec is derived from another one.
    pub(crate) fn from_parts(
        name: String,
        sites: Vec<String>,
        capacity: Vec<u32>,
        rules: Vec<Vec<Rule>>,
        metadata: Option<serde_json::Value>,
    ) -> SandpileSpec {
        debug_assert!(sites.windows(2).all(|w| w[0] < w[1]));
        let index = sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let rules = rules
            .into_iter()
            .map(|list| {
                let set: BTreeSet<Rule> = list.into_iter().collect();
                set.into_iter().collect()
            })
            .collect();
        SandpileSpec {
            name,
            sites,
            index,
            capacity,
            rules,
            metadata,
        }
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> SandpileSpec {
        self.metadata = Some(metadata);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn site_name(&self, site: SiteIdx) -> &str {
        &self.sites[site]
    }

    pub fn site_index(&self, name: &str) -> Option<SiteIdx> {
        self.index.get(name).copied()
    }

    pub fn require_site(&self, name: &str) -> Result<SiteIdx, ModelError> {
        self.site_index(name)
            .ok_or_else(|| ModelError::UnknownSite(name.to_string()))
    }

    pub fn capacity(&self, site: SiteIdx) -> u32 {
        self.capacity[site]
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacity
    }

    pub fn rules(&self, site: SiteIdx) -> &[Rule] {
        &self.rules[site]
    }

    /// Particles lost to the sink when `site` topples with rule `rule_index`.
    pub fn sink_loss(&self, site: SiteIdx, rule_index: usize) -> u32 {
        self.capacity[site] - self.rules[site][rule_index].len() as u32
    }

    /// Number of stable configurations, the product of all capacities.
    pub fn stable_count(&self) -> u128 {
        self.capacity
            .iter()
            .try_fold(1u128, |acc, &c| acc.checked_mul(c as u128))
            .unwrap_or(u128::MAX)
    }

    /// Rule targets rendered as site names.
    pub fn rule_names(&self, rule: &Rule) -> Vec<String> {
        rule.targets().iter().map(|&u| self.sites[u].clone()).collect()
    }

    pub fn to_document(&self) -> SpecDocument {
        SpecDocument {
            name: self.name.clone(),
            sites: self.sites.clone(),
            capacity: self
                .sites
                .iter()
                .cloned()
                .zip(self.capacity.iter().copied())
                .collect(),
            rules: self
                .sites
                .iter()
                .enumerate()
                .map(|(v, s)| {
                    let list = self.rules[v].iter().map(|t| self.rule_names(t)).collect();
                    (s.clone(), list)
                })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Same as [`validate`] on the document form; a constructed spec only
    /// ever carries warnings.
    pub fn report(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        termination_warnings(self, &mut report);
        report
    }
}

/// A breach of a structural invariant. Any violation makes a document unusable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateSite { site: String },
    MissingCapacity { site: String },
    MissingRules { site: String },
    UnknownSiteInCapacity { site: String },
    UnknownSiteInRules { site: String },
    ZeroCapacity { site: String },
    NoRules { site: String },
    UnknownSiteInRule { site: String, target: String },
    RuleExceedsCapacity { site: String, rule: Vec<String>, size: usize, capacity: u32 },
    SelfDelivery { site: String, rule: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSite { site } => write!(f, "duplicate site {site}"),
            Violation::MissingCapacity { site } => write!(f, "no capacity for site {site}"),
            Violation::MissingRules { site } => write!(f, "no rule list for site {site}"),
            Violation::UnknownSiteInCapacity { site } => {
                write!(f, "capacity given for unknown site {site}")
            }
            Violation::UnknownSiteInRules { site } => {
                write!(f, "rules given for unknown site {site}")
            }
            Violation::ZeroCapacity { site } => write!(f, "capacity of {site} must be positive"),
            Violation::NoRules { site } => write!(f, "site {site} has an empty rule list"),
            Violation::UnknownSiteInRule { site, target } => {
                write!(f, "unknown site in rule: {site} delivers to {target}")
            }
            Violation::RuleExceedsCapacity { site, rule, size, capacity } => write!(
                f,
                "rule exceeds capacity: {site} rule {rule:?} has {size} targets, capacity {capacity}"
            ),
            Violation::SelfDelivery { site, rule } => {
                write!(f, "self-delivery: rule {rule:?} of {site} names the site itself")
            }
        }
    }
}

/// Conditions that do not invalidate a spec but deserve attention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Warning {
    /// Two rules of `site` are equal as multisets; they were merged.
    DuplicateRule { site: String, rule: Vec<String> },
    /// Every site here owns a sink-free rule that stays inside the set, so
    /// an adversarial choice of rules can topple forever.
    PotentialNonTermination { sites: Vec<String> },
    /// No choice of rules moves particles from these sites to the sink.
    SinkUnreachable { sites: Vec<String> },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::DuplicateRule { site, rule } => {
                write!(f, "duplicate rule {rule:?} at {site}")
            }
            Warning::PotentialNonTermination { sites } => {
                write!(f, "potential non-terminating stabilization branch on {sites:?}")
            }
            Warning::SinkUnreachable { sites } => {
                write!(f, "sink unreachable from {sites:?}; stabilization may never terminate")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    /// True when there are no violations. Warnings do not count.
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a sandpile document.
pub fn validate(doc: &SpecDocument) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut known = BTreeSet::new();
    for s in &doc.sites {
        if !known.insert(s.as_str()) {
            report.violations.push(Violation::DuplicateSite { site: s.clone() });
        }
    }
    for s in doc.capacity.keys() {
        if !known.contains(s.as_str()) {
            report.violations.push(Violation::UnknownSiteInCapacity { site: s.clone() });
        }
    }
    for s in doc.rules.keys() {
        if !known.contains(s.as_str()) {
            report.violations.push(Violation::UnknownSiteInRules { site: s.clone() });
        }
    }
    for s in &known {
        let site = s.to_string();
        let capacity = match doc.capacity.get(*s) {
            None => {
                report.violations.push(Violation::MissingCapacity { site: site.clone() });
                None
            }
            Some(0) => {
                report.violations.push(Violation::ZeroCapacity { site: site.clone() });
                None
            }
            Some(&c) => Some(c),
        };
        let Some(rules) = doc.rules.get(*s) else {
            report.violations.push(Violation::MissingRules { site });
            continue;
        };
        if rules.is_empty() {
            report.violations.push(Violation::NoRules { site: site.clone() });
        }
        let mut seen = BTreeSet::new();
        for rule in rules {
            for target in rule {
                if !known.contains(target.as_str()) {
                    report.violations.push(Violation::UnknownSiteInRule {
                        site: site.clone(),
                        target: target.clone(),
                    });
                }
            }
            if rule.iter().any(|t| t == *s) {
                report.violations.push(Violation::SelfDelivery {
                    site: site.clone(),
                    rule: rule.clone(),
                });
            }
            if let Some(c) = capacity {
                if rule.len() > c as usize {
                    report.violations.push(Violation::RuleExceedsCapacity {
                        site: site.clone(),
                        rule: rule.clone(),
                        size: rule.len(),
                        capacity: c,
                    });
                }
            }
            let mut sorted = rule.clone();
            sorted.sort();
            if !seen.insert(sorted.clone()) {
                report.warnings.push(Warning::DuplicateRule {
                    site: site.clone(),
                    rule: sorted,
                });
            }
        }
    }
    if report.is_clean() {
        let mut doc = doc.clone();
        // Duplicates were already reported; build without re-validating.
        doc.sites.sort();
        let index: HashMap<String, SiteIdx> =
            doc.sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let spec = SandpileSpec::from_parts(
            doc.name,
            doc.sites.clone(),
            doc.sites.iter().map(|s| doc.capacity[s]).collect(),
            doc.sites
                .iter()
                .map(|s| {
                    doc.rules[s]
                        .iter()
                        .map(|t| Rule::new(t.iter().map(|u| index[u]).collect()))
                        .collect()
                })
                .collect(),
            None,
        );
        termination_warnings(&spec, &mut report);
    }
    report
}

/// Greatest set `W` in which every site satisfies `keep(site, W)`.
fn greatest_fixed_point(
    spec: &SandpileSpec,
    keep: impl Fn(SiteIdx, &[bool]) -> bool,
) -> Vec<SiteIdx> {
    let mut inside = vec![true; spec.len()];
    loop {
        let mut changed = false;
        for v in 0..spec.len() {
            if inside[v] && !keep(v, &inside) {
                inside[v] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..spec.len()).filter(|&v| inside[v]).collect()
}

fn termination_warnings(spec: &SandpileSpec, report: &mut ValidationReport) {
    let closed = |v: SiteIdx, t: &Rule, inside: &[bool]| {
        t.len() as u32 == spec.capacity(v) && t.support().all(|u| inside[u])
    };
    let trapped = greatest_fixed_point(spec, |v, inside| {
        spec.rules(v).iter().all(|t| closed(v, t, inside))
    });
    let looping = greatest_fixed_point(spec, |v, inside| {
        spec.rules(v).iter().any(|t| closed(v, t, inside))
    });
    let names = |set: &[SiteIdx]| set.iter().map(|&v| spec.site_name(v).to_string()).collect();
    if !trapped.is_empty() {
        report.warnings.push(Warning::SinkUnreachable { sites: names(&trapped) });
    }
    if looping.len() > trapped.len() {
        report.warnings.push(Warning::PotentialNonTermination { sites: names(&looping) });
    }
}
