//! Exhaustive recurrence oracle.
//!
//! The recurrent stable set is the closure of `c_max` under "add one particle
//! anywhere, then stabilize with any choice of unstable site and rule". Every
//! stabilization is explored in full: all unstable sites, all rules, with a
//! visited set so each intermediate configuration is expanded once. No
//! confluence between site orders is assumed.
//!
//! The closure is computed level by level. Within a level, tasks (member,
//! site) run independently (optionally on a thread pool) and are merged in a
//! fixed order, so members, witnesses and statistics do not depend on the
//! number of threads.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, info};

mod explore;

use explore::{Codec, Packed, Search, Wide};

use crate::model::{is_stable, topple, Configuration, ModelError, SandpileSpec, SiteIdx, SubConfiguration};
use crate::reduce::{SiteSet, ReduceError};

pub const DEFAULT_STATE_CAP: u128 = 1 << 20;
pub const DEFAULT_SUBSET_BUDGET: usize = 20;
pub const DEFAULT_FSC_BUDGET: u64 = 50_000_000;
pub const DEFAULT_MEMO_CAP: usize = 1 << 25;
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error("{states} stable configurations exceed the state cap of {cap}")]
    StateCapExceeded { states: u128, cap: u128 },

    #[error("{particles} particles exceed the particle cap of {cap}")]
    ParticleCapExceeded { particles: u64, cap: u64 },

    #[error("stabilization from {start:?} can topple forever")]
    PotentialNonTermination { start: Vec<u32> },

    #[error("configuration is not stable")]
    NotStable,

    #[error("{what} exceeds budget {budget}")]
    BudgetExceeded { what: String, budget: u64 },

    #[error("invalid witness: {0}")]
    InvalidWitness(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Reduce(#[from] ReduceError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleConfig {
    /// Upper bound on the number of stable configurations.
    pub max_states: u128,
    /// Upper bound on particles in a configuration handed to stabilization.
    /// `None` means `sum C(v) + max C(v)`.
    pub max_particles: Option<u64>,
    /// Worker threads; 1 runs on the calling thread.
    pub jobs: usize,
    /// Upper bound on remembered expanded configurations shared between
    /// stabilizations. Past it, configurations may be expanded again.
    pub max_memo: usize,
    /// Fail with [`OracleError::PotentialNonTermination`] when a toppling cycle
    /// is found instead of just recording it.
    pub strict_termination: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_states: DEFAULT_STATE_CAP,
            max_particles: None,
            jobs: 1,
            max_memo: DEFAULT_MEMO_CAP,
            strict_termination: false,
        }
    }
}

impl OracleConfig {
    pub fn particle_cap(&self, spec: &SandpileSpec) -> u64 {
        self.max_particles.unwrap_or_else(|| {
            let sum: u64 = spec.capacities().iter().map(|&c| c as u64).sum();
            sum + spec.capacities().iter().copied().max().unwrap_or(0) as u64
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ToppleStep {
    pub site: SiteIdx,
    pub rule_index: usize,
}

/// One link of a witness chain: add a particle, then topple as listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessStep {
    pub add_at: SiteIdx,
    pub topplings: Vec<ToppleStep>,
}

pub fn witness_to_value(spec: &SandpileSpec, chain: &[WitnessStep]) -> Value {
    Value::Array(
        chain
            .iter()
            .map(|step| {
                json!({
                    "add_at": spec.site_name(step.add_at),
                    "topplings": step.topplings.iter().map(|t| json!({
                        "site": spec.site_name(t.site),
                        "rule_index": t.rule_index,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

/// Replays a witness chain from `c_max` with [`topple`], checking that every
/// link ends stable. Returns the final configuration.
pub fn replay_witness(spec: &SandpileSpec, chain: &[WitnessStep]) -> Result<Configuration, OracleError> {
    let mut current = Configuration::max_stable(spec);
    for (i, step) in chain.iter().enumerate() {
        current = current.with_added(step.add_at, 1);
        for t in &step.topplings {
            current = topple(spec, &current, t.site, t.rule_index)?.0;
        }
        if !is_stable(spec, &current) {
            return Err(OracleError::InvalidWitness(format!("link {i} ends unstable")));
        }
    }
    Ok(current)
}

/// All stable results of stabilizing one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilizationOutcomes {
    /// Sorted, duplicate-free.
    pub outcomes: Vec<Configuration>,
    /// Some choice of sites and rules returns to an earlier configuration,
    /// i.e. stabilization can be postponed forever.
    pub cycle_flag: bool,
    /// Distinct configurations visited.
    pub explored: usize,
}

fn check_particles(spec: &SandpileSpec, config: &Configuration, cfg: &OracleConfig) -> Result<(), OracleError> {
    let cap = cfg.particle_cap(spec);
    let particles = config.total();
    if particles > cap {
        return Err(OracleError::ParticleCapExceeded { particles, cap });
    }
    Ok(())
}

pub fn stabilize_outcomes(
    spec: &SandpileSpec,
    config: &Configuration,
    cfg: &OracleConfig,
) -> Result<StabilizationOutcomes, OracleError> {
    if config.len() != spec.len() {
        return Err(ModelError::ConfigurationMismatch { expected: spec.len(), found: config.len() }.into());
    }
    check_particles(spec, config, cfg)?;
    let result = match Packed::new(spec, cfg.particle_cap(spec)) {
        Some(codec) => outcomes_with(spec, &codec, config),
        None => outcomes_with(spec, &Wide { spec }, config),
    };
    if cfg.strict_termination && result.cycle_flag {
        return Err(OracleError::PotentialNonTermination { start: config.heights().to_vec() });
    }
    Ok(result)
}

fn outcomes_with<C: Codec>(spec: &SandpileSpec, codec: &C, config: &Configuration) -> StabilizationOutcomes {
    let search = Search::run(spec, codec, codec.encode(config), |_| false);
    let mut outcomes: Vec<Configuration> = search
        .stable
        .iter()
        .map(|&i| codec.decode(&search.nodes[i as usize]))
        .collect();
    outcomes.sort();
    StabilizationOutcomes {
        outcomes,
        cycle_flag: search.cycle,
        explored: search.nodes.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OracleStats {
    pub members: usize,
    pub stable: u128,
    /// Stabilizations run (one per member and site).
    pub stabilizations: u64,
    pub transitions: u64,
    /// Configurations visited, summed over stabilizations.
    pub explored: u64,
    pub cycle_detected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Predecessor {
    prior: usize,
    step: WitnessStep,
}

/// Stable configurations reachable from `c_max`, with one witness chain each.
#[derive(Debug, Clone)]
pub struct RecurrentSet {
    spec: SandpileSpec,
    members: Vec<Configuration>,
    index: FxHashMap<Configuration, usize>,
    predecessors: Vec<Option<Predecessor>>,
    stats: OracleStats,
}

struct TaskResult<K> {
    found: Vec<(K, Vec<ToppleStep>)>,
    expanded: Vec<K>,
    cycle: bool,
    transitions: u64,
    explored: u64,
}

/// Stabilizes `member + 1 particle at site`, skipping configurations whose
/// outcomes are already known. Reports new stable outcomes with the topplings
/// leading to them.
fn run_task<C: Codec>(
    spec: &SandpileSpec,
    codec: &C,
    members: &FxHashMap<C::Key, usize>,
    expanded: &FxHashSet<C::Key>,
    member: &C::Key,
    site: SiteIdx,
) -> TaskResult<C::Key> {
    let start = codec.add(member, site);
    let search = Search::run(spec, codec, start, |k| expanded.contains(k));
    let found = search
        .stable
        .iter()
        .filter(|&&i| !members.contains_key(&search.nodes[i as usize]))
        .map(|&i| (search.nodes[i as usize].clone(), search.path_to(i)))
        .collect();
    TaskResult {
        found,
        expanded: search.expanded.iter().map(|&i| search.nodes[i as usize].clone()).collect(),
        cycle: search.cycle,
        transitions: search.transitions,
        explored: search.nodes.len() as u64,
    }
}

pub fn recurrent_stable_set(spec: &SandpileSpec, cfg: &OracleConfig) -> Result<RecurrentSet, OracleError> {
    let states = spec.stable_count();
    if states > cfg.max_states {
        return Err(OracleError::StateCapExceeded { states, cap: cfg.max_states });
    }
    let cap = cfg.particle_cap(spec);
    let needed = Configuration::max_stable(spec).total() + 1;
    if !spec.is_empty() && needed > cap {
        return Err(OracleError::ParticleCapExceeded { particles: needed, cap });
    }
    match Packed::new(spec, cap) {
        Some(codec) => closure(spec, &codec, cfg),
        None => closure(spec, &Wide { spec }, cfg),
    }
}

fn closure<C: Codec>(spec: &SandpileSpec, codec: &C, cfg: &OracleConfig) -> Result<RecurrentSet, OracleError>
where
    C::Key: Ord,
{
    let pool = if cfg.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| OracleError::InvalidArgument(e.to_string()))?,
        )
    } else {
        None
    };

    let cmax = codec.encode(&Configuration::max_stable(spec));
    let mut members: Vec<C::Key> = vec![cmax.clone()];
    let mut index: FxHashMap<C::Key, usize> = FxHashMap::default();
    index.insert(cmax, 0);
    let mut expanded: FxHashSet<C::Key> = FxHashSet::default();
    let mut predecessors: Vec<Option<Predecessor>> = vec![None];
    let mut stats = OracleStats::default();
    let mut level: Vec<usize> = vec![0];

    while !level.is_empty() {
        debug!(frontier = level.len(), members = members.len(), memo = expanded.len(), "oracle level");
        level.sort_by(|&a, &b| members[a].cmp(&members[b]));
        let tasks: Vec<(usize, SiteIdx)> = level
            .iter()
            .flat_map(|&m| (0..spec.len()).map(move |v| (m, v)))
            .collect();
        let mut next = Vec::new();
        for chunk in tasks.chunks(CHUNK) {
            let work = |&(m, v): &(usize, SiteIdx)| run_task(spec, codec, &index, &expanded, &members[m], v);
            let results: Vec<TaskResult<C::Key>> = match &pool {
                Some(pool) => pool.install(|| chunk.par_iter().map(work).collect()),
                None => chunk.iter().map(work).collect(),
            };
            for (&(m, v), result) in chunk.iter().zip(results) {
                stats.stabilizations += 1;
                stats.transitions += result.transitions;
                stats.explored += result.explored;
                if result.cycle {
                    if cfg.strict_termination {
                        let start = codec.decode(&codec.add(&members[m], v));
                        return Err(OracleError::PotentialNonTermination {
                            start: start.heights().to_vec(),
                        });
                    }
                    stats.cycle_detected = true;
                }
                if expanded.len() < cfg.max_memo {
                    expanded.extend(result.expanded);
                }
                for (key, topplings) in result.found {
                    if index.contains_key(&key) {
                        continue;
                    }
                    let id = members.len();
                    index.insert(key.clone(), id);
                    members.push(key);
                    predecessors.push(Some(Predecessor {
                        prior: m,
                        step: WitnessStep { add_at: v, topplings },
                    }));
                    next.push(id);
                }
            }
        }
        level = next;
    }
    drop(expanded);

    let members: Vec<Configuration> = members.iter().map(|k| codec.decode(k)).collect();
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| members[a].cmp(&members[b]));
    let mut rank = vec![0; members.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut sorted_preds: Vec<Option<Predecessor>> = vec![None; members.len()];
    for (old, pred) in predecessors.into_iter().enumerate() {
        sorted_preds[rank[old]] = pred.map(|p| Predecessor { prior: rank[p.prior], step: p.step });
    }
    let members: Vec<Configuration> = order.iter().map(|&i| members[i].clone()).collect();
    let index = members.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
    stats.members = members.len();
    stats.stable = spec.stable_count();
    info!(spec = spec.name(), members = stats.members, stable = %stats.stable, "recurrent set complete");
    Ok(RecurrentSet {
        spec: spec.clone(),
        members,
        index,
        predecessors: sorted_preds,
        stats,
    })
}

impl RecurrentSet {
    pub fn spec(&self) -> &SandpileSpec {
        &self.spec
    }

    /// Members in canonical (lexicographic height) order.
    pub fn members(&self) -> &[Configuration] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn stats(&self) -> OracleStats {
        self.stats
    }

    pub fn contains(&self, config: &Configuration) -> bool {
        self.index.contains_key(config)
    }

    /// True when every stable configuration is recurrent.
    pub fn is_everything(&self) -> bool {
        self.members.len() as u128 == self.stats.stable
    }

    /// Chain of additions and topplings from `c_max` to `config`; `None` if
    /// `config` is not a member.
    pub fn witness(&self, config: &Configuration) -> Option<Vec<WitnessStep>> {
        let mut at = *self.index.get(config)?;
        let mut chain = Vec::new();
        while let Some(pred) = &self.predecessors[at] {
            chain.push(pred.step.clone());
            at = pred.prior;
        }
        chain.reverse();
        Some(chain)
    }

    /// Recurrence of a stable configuration, with its witness chain.
    pub fn query(&self, config: &Configuration) -> Result<Option<Vec<WitnessStep>>, OracleError> {
        if config.len() != self.spec.len() {
            return Err(ModelError::ConfigurationMismatch {
                expected: self.spec.len(),
                found: config.len(),
            }
            .into());
        }
        if !is_stable(&self.spec, config) {
            return Err(OracleError::NotStable);
        }
        Ok(self.witness(config))
    }

    /// True iff no member agrees exactly with `sub` on its region.
    pub fn is_forbidden(&self, sub: &SubConfiguration) -> Result<bool, OracleError> {
        let region = sub.resolve(&self.spec)?;
        Ok(!self
            .members
            .iter()
            .any(|m| region.iter().all(|&(v, h)| m.get(v) == h)))
    }

    /// Forbidden sub-configurations on regions of at most `max_region` sites
    /// whose every proper restriction is allowed. `budget` bounds the number
    /// of (region, assignment) pairs examined.
    pub fn minimal_fscs(&self, max_region: usize, budget: u64) -> Result<Vec<SubConfiguration>, OracleError> {
        let spec = &self.spec;
        let n = spec.len();
        if max_region > n {
            return Err(OracleError::InvalidArgument(format!(
                "max_region {max_region} exceeds the {n} sites"
            )));
        }
        let mut examined: u64 = 0;
        let mut found = Vec::new();
        let mut previous: FxHashMap<Vec<SiteIdx>, FxHashSet<Vec<u32>>> = FxHashMap::default();
        for size in 1..=max_region {
            let mut current = FxHashMap::default();
            for region in combinations(n, size) {
                let seen: FxHashSet<Vec<u32>> = self
                    .members
                    .iter()
                    .map(|m| region.iter().map(|&v| m.get(v)).collect())
                    .collect();
                let radices: Vec<u32> = region.iter().map(|&v| spec.capacity(v)).collect();
                let count: u64 = radices.iter().map(|&r| r as u64).product();
                examined += count;
                if examined > budget {
                    return Err(OracleError::BudgetExceeded {
                        what: "sub-configuration search".into(),
                        budget,
                    });
                }
                for values in mixed_radix(&radices) {
                    if seen.contains(&values) {
                        continue;
                    }
                    let minimal = size == 1
                        || (0..size).all(|drop| {
                            let sub_region: Vec<SiteIdx> =
                                region.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, &v)| v).collect();
                            let sub_values: Vec<u32> =
                                values.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, &h)| h).collect();
                            previous[&sub_region].contains(&sub_values)
                        });
                    if minimal {
                        let map: BTreeMap<String, u32> = region
                            .iter()
                            .zip(&values)
                            .map(|(&v, &h)| (spec.site_name(v).to_string(), h))
                            .collect();
                        found.push(SubConfiguration::new(map)?);
                    }
                }
                current.insert(region, seen);
            }
            previous = current;
        }
        found.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        Ok(found)
    }

    /// JSON lines: a `members=.. stable=..` header, then one canonical
    /// configuration document per member.
    pub fn write_jsonl(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "{}", self.header())?;
        for m in &self.members {
            writeln!(out, "{}", m.to_json(&self.spec))?;
        }
        Ok(())
    }

    pub fn header(&self) -> String {
        let s = self.stats;
        format!(
            "members={} stable={} stabilizations={} transitions={} explored={} cycle={}",
            s.members, s.stable, s.stabilizations, s.transitions, s.explored, s.cycle_detected
        )
    }

    /// JSON lines of `{"config": .., "witness": [..]}`, one per member.
    pub fn write_witnesses(&self, out: &mut impl Write) -> io::Result<()> {
        for m in &self.members {
            let chain = self.witness(m).expect("members have witnesses");
            let line = json!({
                "config": m.to_value(&self.spec),
                "witness": witness_to_value(&self.spec, &chain),
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

impl fmt::Display for RecurrentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.header())
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut current: Option<Vec<usize>> = if k <= n { Some((0..k).collect()) } else { None };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                current = None;
                break;
            }
            i -= 1;
            if next[i] < n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                current = Some(next);
                break;
            }
        }
        Some(out)
    })
}

/// Every vector `x` with `0 <= x[i] < radices[i]`, last position fastest.
fn mixed_radix(radices: &[u32]) -> impl Iterator<Item = Vec<u32>> + '_ {
    let mut current: Option<Vec<u32>> = if radices.iter().all(|&r| r > 0) {
        Some(vec![0; radices.len()])
    } else {
        None
    };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let mut next = out.clone();
        let mut i = radices.len();
        loop {
            if i == 0 {
                current = None;
                break;
            }
            i -= 1;
            next[i] += 1;
            if next[i] < radices[i] {
                current = Some(next);
                break;
            }
            next[i] = 0;
        }
        Some(out)
    })
}

pub fn is_recurrent(
    spec: &SandpileSpec,
    config: &Configuration,
    cfg: &OracleConfig,
) -> Result<Option<Vec<WitnessStep>>, OracleError> {
    if !is_stable(spec, config) {
        return Err(OracleError::NotStable);
    }
    recurrent_stable_set(spec, cfg)?.query(config)
}

pub fn is_forbidden(spec: &SandpileSpec, sub: &SubConfiguration, cfg: &OracleConfig) -> Result<bool, OracleError> {
    sub.resolve(spec)?;
    recurrent_stable_set(spec, cfg)?.is_forbidden(sub)
}

pub fn enumerate_minimal_fscs(
    spec: &SandpileSpec,
    max_region: usize,
    cfg: &OracleConfig,
) -> Result<Vec<SubConfiguration>, OracleError> {
    recurrent_stable_set(spec, cfg)?.minimal_fscs(max_region, DEFAULT_FSC_BUDGET)
}

/// Site sets whose restriction is minimal irreducible, optionally only those
/// containing `containing`. Sorted by size, then lexicographically.
///
/// A set is minimal irreducible exactly when it is irreducible and contains
/// no smaller irreducible set, so subsets are visited by increasing size and
/// supersets of earlier finds are skipped.
pub fn minimal_irreducible_subsandpiles(
    spec: &SandpileSpec,
    containing: Option<&str>,
    budget: usize,
) -> Result<Vec<SiteSet>, OracleError> {
    let n = spec.len();
    if n > budget || n > 63 {
        return Err(OracleError::BudgetExceeded {
            what: format!("subset search over {n} sites"),
            budget: budget.min(63) as u64,
        });
    }
    let must = match containing {
        Some(site) => Some(spec.require_site(site)?),
        None => None,
    };
    let rule_masks: Vec<Vec<u64>> = (0..n)
        .map(|v| {
            spec.rules(v)
                .iter()
                .map(|t| t.support().fold(0u64, |m, u| m | (1 << u)))
                .collect()
        })
        .collect();
    let irreducible = |mask: u64| {
        (0..n)
            .filter(|v| mask & (1 << v) != 0)
            .all(|v| rule_masks[v].iter().all(|&r| r & mask != 0))
    };
    let mut minimal: Vec<u64> = Vec::new();
    for size in 1..=n {
        let mut this_size = Vec::new();
        for combo in combinations(n, size) {
            let mask = combo.iter().fold(0u64, |m, &v| m | (1 << v));
            if minimal.iter().any(|&m| m & !mask == 0) {
                continue;
            }
            if irreducible(mask) {
                this_size.push(mask);
            }
        }
        minimal.extend(this_size);
    }
    let to_set = |mask: u64| -> SiteSet {
        (0..n)
            .filter(|v| mask & (1 << v) != 0)
            .map(|v| spec.site_name(v).to_string())
            .collect()
    };
    let mut out: Vec<SiteSet> = minimal
        .into_iter()
        .filter(|&m| must.is_none_or(|v| m & (1 << v) != 0))
        .map(to_set)
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}
