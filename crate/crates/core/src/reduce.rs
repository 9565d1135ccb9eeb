//! Fixed-point pruning of sandpiles.
//!
//! A site is *flushable* once it owns a rule whose targets have all been
//! flushed already (in the first round: a rule sending everything to the
//! sink). Flushing rounds repeat until nothing changes. Whatever survives is
//! irreducible: every rule of every surviving site hits a surviving site, and
//! the empty configuration there can never be produced.

use std::collections::{BTreeSet, VecDeque};

use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{Rule, SandpileSpec, SiteIdx, SubConfiguration};

pub type SiteSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReduceError {
    #[error("unknown site {0}")]
    UnknownSite(String),

    #[error("deleting {site} leaves the irreducible residual {residual:?}")]
    NotMinimalIrreducible { site: String, residual: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReduceTrace {
    /// Sites flushed in each round, in order.
    pub layers: Vec<SiteSet>,
    pub flushed: SiteSet,
    pub residual: SiteSet,
    /// The input restricted to `residual`.
    pub reduced_spec: SandpileSpec,
}

impl ReduceTrace {
    pub fn to_value(&self, with_layers: bool) -> Value {
        let mut v = json!({
            "flushed": self.flushed,
            "residual": self.residual,
        });
        if with_layers {
            v["layers"] = json!(self.layers);
        }
        v
    }
}

/// Zero heights on a nonempty irreducible region: a forbidden
/// sub-configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FscWitness {
    pub sub_configuration: SubConfiguration,
}

impl FscWitness {
    pub fn region(&self) -> SiteSet {
        self.sub_configuration.region().map(str::to_string).collect()
    }
}

fn resolve(spec: &SandpileSpec, sites: &SiteSet) -> Result<Vec<SiteIdx>, ReduceError> {
    sites
        .iter()
        .map(|s| spec.site_index(s).ok_or_else(|| ReduceError::UnknownSite(s.clone())))
        .collect()
}

fn names(spec: &SandpileSpec, sites: impl IntoIterator<Item = SiteIdx>) -> SiteSet {
    sites.into_iter().map(|v| spec.site_name(v).to_string()).collect()
}

/// Sub-sandpile on `keep`: capacities restricted, every rule intersected
/// (as a multiset) with `keep`, equal rules merged.
pub fn restrict(spec: &SandpileSpec, keep: &SiteSet) -> Result<SandpileSpec, ReduceError> {
    let kept = resolve(spec, keep)?;
    Ok(restrict_indices(spec, &kept))
}

/// `kept` must be sorted and duplicate-free.
pub(crate) fn restrict_indices(spec: &SandpileSpec, kept: &[SiteIdx]) -> SandpileSpec {
    let mut new_index = vec![None; spec.len()];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v] = Some(i);
    }
    let rules = kept
        .iter()
        .map(|&v| {
            spec.rules(v)
                .iter()
                .map(|t| Rule::new(t.targets().iter().filter_map(|&u| new_index[u]).collect()))
                .collect()
        })
        .collect();
    SandpileSpec::from_parts(
        spec.name().to_string(),
        kept.iter().map(|&v| spec.site_name(v).to_string()).collect(),
        kept.iter().map(|&v| spec.capacity(v)).collect(),
        rules,
        spec.metadata().cloned(),
    )
}

/// Flushing rounds as index sets. Each rule keeps a count of distinct
/// targets still present; a rule reaching zero makes its owner flushable in
/// the next round.
#[allow(clippy::needless_range_loop)]
pub(crate) fn flush_layers(spec: &SandpileSpec) -> Vec<Vec<SiteIdx>> {
    let n = spec.len();
    let mut remaining: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut watchers: Vec<Vec<(SiteIdx, usize)>> = vec![Vec::new(); n];
    let mut present = vec![true; n];
    let mut queued = vec![false; n];
    let mut round = Vec::new();
    for v in 0..n {
        let counts: Vec<usize> = spec
            .rules(v)
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let mut k = 0;
                for u in t.support() {
                    watchers[u].push((v, r));
                    k += 1;
                }
                k
            })
            .collect();
        if counts.contains(&0) {
            queued[v] = true;
            round.push(v);
        }
        remaining.push(counts);
    }
    let mut layers = Vec::new();
    while !round.is_empty() {
        for &u in &round {
            present[u] = false;
        }
        let mut next = Vec::new();
        for &u in &round {
            for &(v, r) in &watchers[u] {
                remaining[v][r] -= 1;
                if remaining[v][r] == 0 && present[v] && !queued[v] {
                    queued[v] = true;
                    next.push(v);
                }
            }
        }
        round.sort_unstable();
        layers.push(std::mem::replace(&mut round, next));
    }
    layers
}

pub fn reduce(spec: &SandpileSpec) -> ReduceTrace {
    let layers = flush_layers(spec);
    let mut flushed_mask = vec![false; spec.len()];
    for &v in layers.iter().flatten() {
        flushed_mask[v] = true;
    }
    let residual: Vec<SiteIdx> = (0..spec.len()).filter(|&v| !flushed_mask[v]).collect();
    ReduceTrace {
        layers: layers.iter().map(|l| names(spec, l.iter().copied())).collect(),
        flushed: names(spec, layers.iter().flatten().copied()),
        residual: names(spec, residual.iter().copied()),
        reduced_spec: restrict_indices(spec, &residual),
    }
}

/// Flushes one site at a time, sweeping sites in `order` until a full sweep
/// removes nothing. Sites flushed early in a sweep count as flushed for the
/// rest of it, so rounds are split arbitrarily. Returns the flushed set.
pub fn flush_sequential(spec: &SandpileSpec, order: &[SiteIdx]) -> SiteSet {
    let mut present = vec![true; spec.len()];
    loop {
        let mut changed = false;
        for &v in order {
            if present[v] && spec.rules(v).iter().any(|t| t.support().all(|u| !present[u])) {
                present[v] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    names(spec, (0..spec.len()).filter(|&v| !present[v]))
}

pub fn is_irreducible(spec: &SandpileSpec) -> bool {
    flush_layers(spec).is_empty()
}

/// Irreducible, and deleting any single site lets everything flush.
pub fn is_minimal_irreducible(spec: &SandpileSpec) -> bool {
    if spec.is_empty() || !is_irreducible(spec) {
        return false;
    }
    (0..spec.len()).all(|v| {
        let rest: Vec<SiteIdx> = (0..spec.len()).filter(|&u| u != v).collect();
        let sub = restrict_indices(spec, &rest);
        flush_layers(&sub).iter().map(Vec::len).sum::<usize>() == sub.len()
    })
}

/// Zeros on the residual, if the residual is nonempty. `None` means every
/// stable configuration is recurrent.
pub fn decide_fsc_exists(spec: &SandpileSpec) -> Option<FscWitness> {
    let trace = reduce(spec);
    if trace.residual.is_empty() {
        return None;
    }
    let sub = SubConfiguration::uniform(trace.residual, 0).expect("residual is nonempty");
    Some(FscWitness { sub_configuration: sub })
}

/// Flushing layers of the sandpile with `site` deleted; these cover every
/// other site when the sandpile is minimal irreducible.
pub fn layered_decomposition(spec: &SandpileSpec, site: &str) -> Result<Vec<SiteSet>, ReduceError> {
    let v = spec
        .site_index(site)
        .ok_or_else(|| ReduceError::UnknownSite(site.to_string()))?;
    let rest: Vec<SiteIdx> = (0..spec.len()).filter(|&u| u != v).collect();
    let trace = reduce(&restrict_indices(spec, &rest));
    if !trace.residual.is_empty() {
        return Err(ReduceError::NotMinimalIrreducible {
            site: site.to_string(),
            residual: trace.residual.into_iter().collect(),
        });
    }
    Ok(trace.layers)
}

/// Repeated REDUCE over single-site deletions, breadth first. Starting from
/// the full sandpile, every nonempty residual yields a witness and spawns one
/// restriction per residual site with that site removed. Stops after
/// `budget` REDUCE runs. Witnesses are sorted by region size, then
/// lexicographically.
pub fn enumerate_fsc_supports(spec: &SandpileSpec, budget: usize) -> Vec<FscWitness> {
    let mut queue: VecDeque<SiteSet> = VecDeque::from([SiteSet::new()]);
    let mut seen_deletions: BTreeSet<SiteSet> = BTreeSet::from([SiteSet::new()]);
    let mut regions: BTreeSet<SiteSet> = BTreeSet::new();
    let mut runs = 0;
    while let Some(deleted) = queue.pop_front() {
        if runs >= budget {
            break;
        }
        runs += 1;
        let keep: Vec<SiteIdx> = (0..spec.len())
            .filter(|&v| !deleted.contains(spec.site_name(v)))
            .collect();
        let residual = reduce(&restrict_indices(spec, &keep)).residual;
        if residual.is_empty() {
            continue;
        }
        for site in &residual {
            let mut next = deleted.clone();
            next.insert(site.clone());
            if seen_deletions.insert(next.clone()) {
                queue.push_back(next);
            }
        }
        regions.insert(residual);
    }
    let mut regions: Vec<SiteSet> = regions.into_iter().collect();
    regions.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    regions
        .into_iter()
        .map(|r| FscWitness {
            sub_configuration: SubConfiguration::uniform(r, 0).expect("nonempty"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{grid_ne_sw, grid_ns_ew};

    fn set(items: &[&str]) -> SiteSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ne_sw_2x2_layers() {
        let trace = reduce(&grid_ne_sw(2, 2).unwrap());
        assert_eq!(trace.layers, vec![set(&["r1c2", "r2c1"]), set(&["r1c1", "r2c2"])]);
        assert!(trace.residual.is_empty());
        assert!(trace.reduced_spec.is_empty());
    }

    #[test]
    fn ns_ew_grids_are_irreducible() {
        let trace = reduce(&grid_ns_ew(2, 2).unwrap());
        assert!(trace.layers.is_empty());
        assert_eq!(trace.residual.len(), 4);
        for n in 2..=4 {
            assert!(is_irreducible(&grid_ns_ew(n, n).unwrap()));
        }
        let single = reduce(&grid_ns_ew(1, 1).unwrap());
        assert_eq!(single.layers, vec![set(&["r1c1"])]);
    }

    #[test]
    fn restriction_of_block() {
        let g = grid_ns_ew(3, 3).unwrap();
        let block = restrict(&g, &set(&["r1c1", "r1c2", "r2c1", "r2c2"])).unwrap();
        let v = block.site_index("r1c1").unwrap();
        let rules: Vec<Vec<String>> = block.rules(v).iter().map(|t| block.rule_names(t)).collect();
        assert_eq!(rules, vec![vec!["r1c2".to_string()], vec!["r2c1".to_string()]]);
        let all: SiteSet = g.sites().iter().cloned().collect();
        assert_eq!(restrict(&g, &all).unwrap(), g);
        assert_eq!(
            restrict(&g, &set(&["nope"])),
            Err(ReduceError::UnknownSite("nope".into()))
        );
    }

    #[test]
    fn restriction_keeps_duplicate_targets_and_merges_equal_rules() {
        let spec = SandpileSpec::new(
            "m",
            [("a".to_string(), 3), ("b".to_string(), 1), ("c".to_string(), 1)],
            [
                ("a".to_string(), vec![vec!["b".into(), "b".into(), "c".into()], vec!["c".into()]]),
                ("b".to_string(), vec![vec![]]),
                ("c".to_string(), vec![vec![]]),
            ],
        )
        .unwrap();
        let r = restrict(&spec, &set(&["a", "b"])).unwrap();
        let rules: Vec<Vec<String>> = r.rules(0).iter().map(|t| r.rule_names(t)).collect();
        assert_eq!(rules, vec![vec![], vec!["b".to_string(), "b".to_string()]]);
        let r = restrict(&spec, &set(&["a"])).unwrap();
        assert_eq!(r.rules(0).len(), 1);
    }

    #[test]
    fn minimal_irreducibility() {
        assert!(is_minimal_irreducible(&grid_ns_ew(2, 2).unwrap()));
        assert!(!is_minimal_irreducible(&grid_ns_ew(3, 3).unwrap()));
        assert!(!is_minimal_irreducible(&grid_ne_sw(2, 2).unwrap()));
        let g = grid_ns_ew(3, 3).unwrap();
        let rest: SiteSet = g.sites().iter().filter(|s| *s != "r1c1").cloned().collect();
        assert_eq!(reduce(&restrict(&g, &rest).unwrap()).residual.len(), 8);
    }

    #[test]
    fn decomposition_of_2x2() {
        let g = grid_ns_ew(2, 2).unwrap();
        assert_eq!(
            layered_decomposition(&g, "r1c1").unwrap(),
            vec![set(&["r1c2", "r2c1"]), set(&["r2c2"])]
        );
        assert!(matches!(
            layered_decomposition(&grid_ns_ew(3, 3).unwrap(), "r1c1"),
            Err(ReduceError::NotMinimalIrreducible { .. })
        ));
    }

    #[test]
    fn witnesses() {
        let w = decide_fsc_exists(&grid_ns_ew(3, 3).unwrap()).unwrap();
        assert_eq!(w.region().len(), 9);
        assert!(w.sub_configuration.heights().values().all(|&h| h == 0));
        assert!(decide_fsc_exists(&grid_ne_sw(5, 5).unwrap()).is_none());
        assert!(decide_fsc_exists(&grid_ns_ew(1, 1).unwrap()).is_none());
    }

    #[test]
    fn support_enumeration() {
        let g = grid_ns_ew(3, 3).unwrap();
        let found = enumerate_fsc_supports(&g, 10);
        assert!(found.iter().any(|w| w.region().len() == 9));
        assert!(found.iter().any(|w| w.region().len() < 9));
        assert!(found.windows(2).all(|p| p[0].region().len() <= p[1].region().len()));
        let one = enumerate_fsc_supports(&g, 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].region().len(), 9);
        assert!(enumerate_fsc_supports(&grid_ne_sw(3, 3).unwrap(), 10).is_empty());
    }

    #[test]
    fn sequential_flush_agrees_on_example() {
        let g = grid_ne_sw(3, 3).unwrap();
        let order: Vec<SiteIdx> = (0..g.len()).rev().collect();
        assert_eq!(flush_sequential(&g, &order), reduce(&g).flushed);
    }
}
