//! Memory-domain layout discovery.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Environment variable that overrides the worker thread count.
pub const THREADS_ENV_VAR: &str = "ABM_NUM_THREADS";
/// Environment variable that overrides the number of memory domains.
pub const DOMAINS_ENV_VAR: &str = "ABM_NUM_DOMAINS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySource {
    OsIntrospection,
    Override,
    SingleDomainFallback,
}

/// Domain count and the workers bound to each domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    threads_per_domain: Vec<usize>,
    /// CPU ids per domain as reported by the OS; empty when unknown.
    cpus_per_domain: Vec<Vec<usize>>,
    source: TopologySource,
}

impl Topology {
    /// Explicit layout. Domains with zero threads are allowed; their agents
    /// are processed by stealing.
    pub fn with_layout(threads_per_domain: Vec<usize>) -> Self {
        assert!(
            !threads_per_domain.is_empty(),
            "topology needs at least one domain"
        );
        assert!(
            threads_per_domain.iter().sum::<usize>() > 0,
            "topology needs at least one worker"
        );
        let domains = threads_per_domain.len();
        Topology {
            threads_per_domain,
            cpus_per_domain: vec![Vec::new(); domains],
            source: TopologySource::Override,
        }
    }

    pub fn single_domain(threads: usize) -> Self {
        Topology {
            threads_per_domain: vec![threads.max(1)],
            cpus_per_domain: vec![Vec::new()],
            source: TopologySource::SingleDomainFallback,
        }
    }

    pub fn domain_count(&self) -> usize {
        self.threads_per_domain.len()
    }

    pub fn threads_per_domain(&self) -> &[usize] {
        &self.threads_per_domain
    }

    pub fn thread_count(&self) -> usize {
        self.threads_per_domain.iter().sum()
    }

    pub fn source(&self) -> TopologySource {
        self.source
    }

    pub fn cpus_of_domain(&self, domain: usize) -> &[usize] {
        &self.cpus_per_domain[domain]
    }

    /// Workers are numbered domain by domain: the first
    /// `threads_per_domain[0]` belong to domain 0 and so on.
    pub fn domain_of_worker(&self, worker: usize) -> usize {
        let mut acc = 0;
        for (d, &t) in self.threads_per_domain.iter().enumerate() {
            acc += t;
            if worker < acc {
                return d;
            }
        }
        panic!("worker {worker} out of range");
    }

    pub fn workers_of_domain(&self, domain: usize) -> std::ops::Range<usize> {
        let start: usize = self.threads_per_domain[..domain].iter().sum();
        start..start + self.threads_per_domain[domain]
    }
}

/// Builds the topology from the requested thread/domain counts, the
/// environment overrides and the OS layout, in that order of precedence.
pub fn detect_topology(threads: Option<usize>, domains: Option<usize>) -> Topology {
    let threads = threads.or_else(|| env_usize(THREADS_ENV_VAR));
    let domains = domains.or_else(|| env_usize(DOMAINS_ENV_VAR));
    let hw_threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);

    if let Some(d) = domains {
        let d = d.max(1);
        let t = threads.unwrap_or(hw_threads).max(1);
        return Topology {
            threads_per_domain: spread(t, d),
            cpus_per_domain: vec![Vec::new(); d],
            source: TopologySource::Override,
        };
    }

    match read_sysfs_nodes(Path::new("/sys/devices/system/node")) {
        Some(cpus) if !cpus.is_empty() => {
            let t = threads.unwrap_or(hw_threads).max(1);
            let weights: Vec<usize> = cpus.iter().map(|c| c.len().max(1)).collect();
            Topology {
                threads_per_domain: spread_weighted(t, &weights),
                cpus_per_domain: cpus,
                source: if threads.is_some() {
                    TopologySource::Override
                } else {
                    TopologySource::OsIntrospection
                },
            }
        }
        _ => Topology::single_domain(threads.unwrap_or(hw_threads)),
    }
}

fn env_usize(name: &str) -> Option<usize> {
    std::env::var(name).ok()?.trim().parse().ok()
}

fn spread(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|p| total * (p + 1) / parts - total * p / parts)
        .collect()
}

fn spread_weighted(total: usize, weights: &[usize]) -> Vec<usize> {
    let wsum: usize = weights.iter().sum();
    let mut out = Vec::with_capacity(weights.len());
    let mut acc = 0;
    let mut assigned = 0;
    for w in weights {
        acc += w;
        let upto = total * acc / wsum;
        out.push(upto - assigned);
        assigned = upto;
    }
    out
}

/// Reads `nodeN/cpulist` entries; `None` when the directory is missing.
pub(crate) fn read_sysfs_nodes(root: &Path) -> Option<Vec<Vec<usize>>> {
    let mut nodes: Vec<(usize, Vec<usize>)> = Vec::new();
    for entry in fs::read_dir(root).ok()? {
        let entry = entry.ok()?;
        let name = entry.file_name().into_string().ok()?;
        let Some(id) = name.strip_prefix("node").and_then(|s| s.parse().ok()) else {
            continue;
        };
        let list = fs::read_to_string(entry.path().join("cpulist")).ok()?;
        let cpus = parse_cpulist(&list)?;
        if !cpus.is_empty() {
            nodes.push((id, cpus));
        }
    }
    nodes.sort_by_key(|(id, _)| *id);
    Some(nodes.into_iter().map(|(_, c)| c).collect())
}

/// Parses the kernel's `0-3,8,10-11` notation.
pub(crate) fn parse_cpulist(s: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().ok()?, b.parse().ok()?);
                out.extend(a..=b);
            }
            None => out.push(part.parse().ok()?),
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_single_domain() {
        let t = detect_topology(Some(4), Some(1));
        assert_eq!(t.domain_count(), 1);
        assert_eq!(t.threads_per_domain(), &[4]);
        assert_eq!(t.source(), TopologySource::Override);
    }

    #[test]
    fn override_two_domains_binds_workers_in_order() {
        let t = Topology::with_layout(vec![2, 2]);
        let domains: Vec<usize> = (0..4).map(|w| t.domain_of_worker(w)).collect();
        assert_eq!(domains, vec![0, 0, 1, 1]);
        assert_eq!(t.workers_of_domain(1), 2..4);
    }

    #[test]
    fn missing_sysfs_falls_back() {
        assert!(read_sysfs_nodes(Path::new("/nonexistent/abm")).is_none());
        let t = Topology::single_domain(3);
        assert_eq!(t.source(), TopologySource::SingleDomainFallback);
        assert_eq!(t.threads_per_domain(), &[3]);
    }

    #[test]
    fn cpulist_parsing() {
        assert_eq!(parse_cpulist("0-3,8,10-11\n"), Some(vec![0, 1, 2, 3, 8, 10, 11]));
        assert_eq!(parse_cpulist(""), Some(vec![]));
        assert_eq!(parse_cpulist("x"), None);
    }

    #[test]
    fn weighted_spread_sums_to_total() {
        assert_eq!(spread_weighted(8, &[4, 4]), vec![4, 4]);
        assert_eq!(spread_weighted(3, &[1, 1]), vec![1, 2]);
        assert_eq!(spread(5, 2), vec![2, 3]);
    }
}
