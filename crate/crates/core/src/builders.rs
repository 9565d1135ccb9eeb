//! Grid sandpiles and seeded random specs.
//!
//! Grid sites are named `r{row}c{col}`, 1-indexed, with row 1 to the north.
//! Boundary sites lose particles to the sink because rule templates are
//! clipped to the grid.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::model::{Rule, SandpileSpec, SiteIdx};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("invalid grid dimensions {rows}x{cols}")]
    InvalidDimensions { rows: usize, cols: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub fn site_name(row: usize, col: usize) -> String {
    format!("r{row}c{col}")
}

/// Inverse of [`site_name`].
pub fn parse_site_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix('r')?;
    let (r, c) = rest.split_once('c')?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    N,
    S,
    E,
    W,
}

impl Dir {
    fn step(self, row: usize, col: usize) -> (isize, isize) {
        let (r, c) = (row as isize, col as isize);
        match self {
            Dir::N => (r - 1, c),
            Dir::S => (r + 1, c),
            Dir::E => (r, c + 1),
            Dir::W => (r, c - 1),
        }
    }
}

fn grid(name: String, rows: usize, cols: usize, templates: [[Dir; 2]; 2]) -> Result<SandpileSpec, BuildError> {
    if rows == 0 || cols == 0 {
        return Err(BuildError::InvalidDimensions { rows, cols });
    }
    let mut cells: Vec<(usize, usize)> = (1..=rows)
        .flat_map(|r| (1..=cols).map(move |c| (r, c)))
        .collect();
    cells.sort_by_key(|&(r, c)| site_name(r, c));
    let sites: Vec<String> = cells.iter().map(|&(r, c)| site_name(r, c)).collect();
    let index_of = |r: isize, c: isize| -> Option<SiteIdx> {
        if r < 1 || c < 1 || r > rows as isize || c > cols as isize {
            return None;
        }
        sites.binary_search(&site_name(r as usize, c as usize)).ok()
    };
    let rules = cells
        .iter()
        .map(|&(r, c)| {
            templates
                .iter()
                .map(|template| {
                    Rule::new(
                        template
                            .iter()
                            .filter_map(|d| {
                                let (nr, nc) = d.step(r, c);
                                index_of(nr, nc)
                            })
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();
    let capacity = vec![2; sites.len()];
    Ok(SandpileSpec::from_parts(name, sites, capacity, rules, None))
}

/// Manna's model: capacity 2, topple to both vertical or both horizontal
/// neighbours.
pub fn grid_ns_ew(rows: usize, cols: usize) -> Result<SandpileSpec, BuildError> {
    grid(format!("ns-ew-{rows}x{cols}"), rows, cols, [[Dir::N, Dir::S], [Dir::E, Dir::W]])
}

/// Capacity 2, topple to north+east or to south+west.
pub fn grid_ne_sw(rows: usize, cols: usize) -> Result<SandpileSpec, BuildError> {
    grid(format!("ne-sw-{rows}x{cols}"), rows, cols, [[Dir::N, Dir::E], [Dir::S, Dir::W]])
}

pub const RANDOM_SCHEME: &str = "chacha8-v1: capacity uniform in 1..=max_capacity; rule count uniform in \
1..=max_rules; each rule empty with probability 1/4, otherwise of size uniform in 1..=capacity with \
targets drawn uniformly with replacement from the other sites; redrawn until every site can reach the sink";

/// Seeded random spec with sites `s1..sN`. Every output is valid and has the
/// sink reachable from every site under some choice of rules; the sampling
/// scheme and seed are recorded under `metadata.generator`.
pub fn random_spec(
    site_count: usize,
    max_capacity: u32,
    max_rules: usize,
    seed: u64,
) -> Result<SandpileSpec, BuildError> {
    if site_count == 0 || max_capacity == 0 || max_rules == 0 {
        return Err(BuildError::InvalidParameter(format!(
            "site_count={site_count} max_capacity={max_capacity} max_rules={max_rules}: all must be at least 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites: Vec<String> = (1..=site_count).map(|i| format!("s{i}")).collect();
    sites.sort();
    let metadata = json!({
        "generator": {
            "seed": seed,
            "scheme": RANDOM_SCHEME,
            "sites": site_count,
            "max_capacity": max_capacity,
            "max_rules": max_rules,
        }
    });
    loop {
        let capacity: Vec<u32> = (0..site_count).map(|_| rng.gen_range(1..=max_capacity)).collect();
        let rules: Vec<Vec<Rule>> = (0..site_count)
            .map(|v| {
                let others: Vec<SiteIdx> = (0..site_count).filter(|&u| u != v).collect();
                let count = rng.gen_range(1..=max_rules);
                let set: BTreeSet<Rule> = (0..count)
                    .map(|_| {
                        if others.is_empty() || rng.gen_ratio(1, 4) {
                            return Rule::default();
                        }
                        let size = rng.gen_range(1..=capacity[v]) as usize;
                        Rule::new((0..size).map(|_| *others.choose(&mut rng).unwrap()).collect())
                    })
                    .collect();
                set.into_iter().collect()
            })
            .collect();
        let spec = SandpileSpec::from_parts(
            format!("random-{site_count}-{seed}"),
            sites.clone(),
            capacity,
            rules,
            Some(metadata.clone()),
        );
        if sink_reachable_everywhere(&spec) {
            return Ok(spec);
        }
    }
}

/// True when every site has a chain of rule choices leading particles to the
/// sink.
pub fn sink_reachable_everywhere(spec: &SandpileSpec) -> bool {
    let mut reaches = vec![false; spec.len()];
    loop {
        let mut changed = false;
        for v in 0..spec.len() {
            if reaches[v] {
                continue;
            }
            let escapes = spec.rules(v).iter().any(|t| {
                (t.len() as u32) < spec.capacity(v) || t.support().any(|u| reaches[u])
            });
            if escapes {
                reaches[v] = true;
                changed = true;
            }
        }
        if !changed {
            return reaches.into_iter().all(|r| r);
        }
    }
}
