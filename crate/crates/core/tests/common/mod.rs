//! Independent reference implementations shared by the integration tests.
//!
//! These deliberately avoid the library's search engine and flushing code:
//! toppling is done on plain height vectors straight from the rule lists.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};

use sasm::builders::random_spec;
use sasm::model::{SandpileSpec, SubConfiguration};

/// Seeded corpus of small random specs: up to 5 sites, capacity ≤ 2, ≤ 2
/// rules per site.
pub fn corpus(count: u64) -> Vec<SandpileSpec> {
    (0..count)
        .map(|seed| random_spec(1 + (seed % 5) as usize, 2, 2, seed).unwrap())
        .collect()
}

pub fn stable_count(spec: &SandpileSpec) -> usize {
    spec.capacities().iter().map(|&c| c as usize).product()
}

pub fn all_stable(spec: &SandpileSpec) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for &c in spec.capacities() {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..c).map(move |h| {
                    let mut p = prefix.clone();
                    p.push(h);
                    p
                })
            })
            .collect();
    }
    out
}

pub fn is_stable(spec: &SandpileSpec, h: &[u32]) -> bool {
    h.iter().zip(spec.capacities()).all(|(x, c)| x < c)
}

pub fn topple_raw(spec: &SandpileSpec, h: &[u32], v: usize, r: usize) -> Vec<u32> {
    let mut out = h.to_vec();
    out[v] -= spec.capacity(v);
    for &u in spec.rules(v)[r].targets() {
        out[u] += 1;
    }
    out
}

/// Every stable configuration reachable from `start` by any sequence of
/// site and rule choices.
pub fn outcomes(spec: &SandpileSpec, start: Vec<u32>) -> BTreeSet<Vec<u32>> {
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    let mut out = BTreeSet::new();
    while let Some(h) = stack.pop() {
        if !seen.insert(h.clone()) {
            continue;
        }
        let mut any = false;
        for v in 0..spec.len() {
            if h[v] >= spec.capacity(v) {
                any = true;
                for r in 0..spec.rules(v).len() {
                    stack.push(topple_raw(spec, &h, v, r));
                }
            }
        }
        if !any {
            out.insert(h);
        }
    }
    out
}

/// Closure of `c_max` under "add `batch` particles in any placement, then
/// stabilize in every possible way".
pub fn recurrent_with_batches(spec: &SandpileSpec, batch: usize) -> BTreeSet<Vec<u32>> {
    let cmax: Vec<u32> = spec.capacities().iter().map(|c| c - 1).collect();
    let mut members = BTreeSet::from([cmax.clone()]);
    let mut queue = VecDeque::from([cmax]);
    while let Some(m) = queue.pop_front() {
        for placement in placements(spec.len(), batch) {
            let mut start = m.clone();
            for v in placement {
                start[v] += 1;
            }
            for o in outcomes(spec, start) {
                if members.insert(o.clone()) {
                    queue.push_back(o);
                }
            }
        }
    }
    members
}

pub fn naive_recurrent(spec: &SandpileSpec) -> BTreeSet<Vec<u32>> {
    recurrent_with_batches(spec, 1)
}

/// Multisets of `1..=max` sites, as sorted index lists.
fn placements(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for p in &frontier {
            let lo = p.last().copied().unwrap_or(0);
            for v in lo..n {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// The flushing fixed point written straight from its definition.
pub fn naive_residual(spec: &SandpileSpec) -> BTreeSet<String> {
    let mut alive: BTreeSet<usize> = (0..spec.len()).collect();
    loop {
        let flush: Vec<usize> = alive
            .iter()
            .copied()
            .filter(|&v| {
                spec.rules(v)
                    .iter()
                    .any(|t| t.targets().iter().all(|u| !alive.contains(u)))
            })
            .collect();
        if flush.is_empty() {
            return alive.into_iter().map(|v| spec.site_name(v).to_string()).collect();
        }
        for v in flush {
            alive.remove(&v);
        }
    }
}

pub fn zeros_on<'a>(sites: impl IntoIterator<Item = &'a str>) -> SubConfiguration {
    SubConfiguration::uniform(sites, 0).unwrap()
}

pub fn block(row: usize, col: usize) -> Vec<String> {
    [(row, col), (row, col + 1), (row + 1, col), (row + 1, col + 1)]
        .iter()
        .map(|&(r, c)| format!("r{r}c{c}"))
        .collect()
}
