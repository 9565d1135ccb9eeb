//! State encodings and the exhaustive toppling search.

use std::hash::Hash;

use rustc_hash::FxHashMap;

use super::ToppleStep;
use crate::model::{Configuration, SandpileSpec, SiteIdx};

/// Compact, hashable encoding of configurations with toppling on the
/// encoded form.
pub(crate) trait Codec: Sync {
    type Key: Clone + Eq + Hash + Send + Sync;

    fn encode(&self, config: &Configuration) -> Self::Key;
    fn decode(&self, key: &Self::Key) -> Configuration;
    fn height(&self, key: &Self::Key, site: SiteIdx) -> u32;
    fn topple(&self, key: &Self::Key, site: SiteIdx, rule_index: usize) -> Self::Key;
    fn add(&self, key: &Self::Key, site: SiteIdx) -> Self::Key;
}

/// Heights packed into one `u128`, a fixed number of bits per site. Every
/// height fits because no configuration exceeds the particle cap.
pub(crate) struct Packed<'a> {
    spec: &'a SandpileSpec,
    shift: Vec<u32>,
    mask: u128,
    unit: Vec<u128>,
    remove: Vec<u128>,
    deliver: Vec<Vec<u128>>,
}

impl<'a> Packed<'a> {
    pub(crate) fn new(spec: &'a SandpileSpec, max_height: u64) -> Option<Packed<'a>> {
        let bits = (64 - max_height.leading_zeros()).max(1);
        if bits as usize * spec.len() > 128 {
            return None;
        }
        let shift: Vec<u32> = (0..spec.len() as u32).map(|v| v * bits).collect();
        let unit: Vec<u128> = shift.iter().map(|&s| 1u128 << s).collect();
        let remove = (0..spec.len()).map(|v| unit[v] * spec.capacity(v) as u128).collect();
        let deliver = (0..spec.len())
            .map(|v| {
                spec.rules(v)
                    .iter()
                    .map(|t| t.targets().iter().map(|&u| unit[u]).sum())
                    .collect()
            })
            .collect();
        Some(Packed {
            spec,
            shift,
            mask: (1u128 << bits) - 1,
            unit,
            remove,
            deliver,
        })
    }
}

impl Codec for Packed<'_> {
    type Key = u128;

    fn encode(&self, config: &Configuration) -> u128 {
        config
            .heights()
            .iter()
            .zip(&self.shift)
            .map(|(&h, &s)| (h as u128) << s)
            .sum()
    }

    fn decode(&self, key: &u128) -> Configuration {
        let heights = (0..self.shift.len()).map(|v| self.height(key, v)).collect();
        Configuration::from_heights(self.spec, heights).expect("length matches spec")
    }

    fn height(&self, key: &u128, site: SiteIdx) -> u32 {
        ((key >> self.shift[site]) & self.mask) as u32
    }

    fn topple(&self, key: &u128, site: SiteIdx, rule_index: usize) -> u128 {
        key - self.remove[site] + self.deliver[site][rule_index]
    }

    fn add(&self, key: &u128, site: SiteIdx) -> u128 {
        key + self.unit[site]
    }
}

/// Fallback for sandpiles too large to pack.
pub(crate) struct Wide<'a> {
    pub(crate) spec: &'a SandpileSpec,
}

impl Codec for Wide<'_> {
    type Key = Box<[u32]>;

    fn encode(&self, config: &Configuration) -> Box<[u32]> {
        config.heights().into()
    }

    fn decode(&self, key: &Box<[u32]>) -> Configuration {
        Configuration::from_heights(self.spec, key.to_vec()).expect("length matches spec")
    }

    fn height(&self, key: &Box<[u32]>, site: SiteIdx) -> u32 {
        key[site]
    }

    fn topple(&self, key: &Box<[u32]>, site: SiteIdx, rule_index: usize) -> Box<[u32]> {
        let mut next = key.clone();
        next[site] -= self.spec.capacity(site);
        for &u in self.spec.rules(site)[rule_index].targets() {
            next[u] += 1;
        }
        next
    }

    fn add(&self, key: &Box<[u32]>, site: SiteIdx) -> Box<[u32]> {
        let mut next = key.clone();
        next[site] += 1;
        next
    }
}

/// Depth-first enumeration of every toppling sequence from a start
/// configuration. Each configuration is expanded once; revisiting one that is
/// still on the current path marks a cycle.
pub(crate) struct Search<K> {
    pub(crate) nodes: Vec<K>,
    parent: Vec<Option<(u32, ToppleStep)>>,
    /// Stable nodes, in discovery order.
    pub(crate) stable: Vec<u32>,
    /// Unstable nodes that were expanded.
    pub(crate) expanded: Vec<u32>,
    pub(crate) cycle: bool,
    pub(crate) transitions: u64,
}

impl<K: Clone + Eq + Hash> Search<K> {
    /// `skip` marks unstable configurations already expanded elsewhere; they
    /// are neither entered nor reported.
    pub(crate) fn run<C>(spec: &SandpileSpec, codec: &C, start: K, skip: impl Fn(&K) -> bool) -> Search<K>
    where
        C: Codec<Key = K>,
    {
        let mut search = Search {
            nodes: Vec::new(),
            parent: Vec::new(),
            stable: Vec::new(),
            expanded: Vec::new(),
            cycle: false,
            transitions: 0,
        };
        let n = spec.len();
        let unstable_from = |key: &K, from: SiteIdx| {
            (from..n).find(|&v| codec.height(key, v) >= spec.capacity(v))
        };
        let mut index: FxHashMap<K, u32> = FxHashMap::default();
        let mut on_path: Vec<bool> = Vec::new();
        // (node, site cursor, rule cursor)
        let mut stack: Vec<(u32, SiteIdx, usize)> = Vec::new();

        let visit = |search: &mut Search<K>,
                         index: &mut FxHashMap<K, u32>,
                         on_path: &mut Vec<bool>,
                         stack: &mut Vec<(u32, SiteIdx, usize)>,
                         key: K,
                         parent: Option<(u32, ToppleStep)>| {
            let first = unstable_from(&key, 0);
            if first.is_some() && skip(&key) {
                return;
            }
            let id = search.nodes.len() as u32;
            index.insert(key.clone(), id);
            search.nodes.push(key);
            search.parent.push(parent);
            on_path.push(true);
            match first {
                None => {
                    search.stable.push(id);
                    on_path[id as usize] = false;
                }
                Some(site) => {
                    search.expanded.push(id);
                    stack.push((id, site, 0));
                }
            }
        };

        visit(&mut search, &mut index, &mut on_path, &mut stack, start, None);
        while let Some(frame) = stack.last_mut() {
            let (id, site, rule_index) = *frame;
            if site == n {
                on_path[id as usize] = false;
                stack.pop();
                continue;
            }
            let key = &search.nodes[id as usize];
            if rule_index + 1 < spec.rules(site).len() {
                frame.2 += 1;
            } else {
                frame.1 = unstable_from(key, site + 1).unwrap_or(n);
                frame.2 = 0;
            }
            search.transitions += 1;
            let next = codec.topple(key, site, rule_index);
            match index.get(&next) {
                Some(&seen) => {
                    if on_path[seen as usize] {
                        search.cycle = true;
                    }
                }
                None => visit(
                    &mut search,
                    &mut index,
                    &mut on_path,
                    &mut stack,
                    next,
                    Some((id, ToppleStep { site, rule_index })),
                ),
            }
        }
        search
    }

    pub(crate) fn path_to(&self, node: u32) -> Vec<ToppleStep> {
        let mut path = Vec::new();
        let mut at = node;
        while let Some((prev, step)) = self.parent[at as usize] {
            path.push(step);
            at = prev;
        }
        path.reverse();
        path
    }
}
