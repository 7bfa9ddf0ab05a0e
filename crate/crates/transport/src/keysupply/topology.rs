use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{KeySupplyError, NodeId};

/// One point-to-point QKD link between two trusted nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    pub a: NodeId,
    pub b: NodeId,
    /// Nominal secret key rate in octets per second.
    pub rate: u64,
    /// Quantum bit error rate reported to the routing table.
    pub error_rate: f64,
    pub length_km: f64,
    pub loss_db: f64,
    /// Shared seed of the simulated key stream; both ends derive it.
    pub seed: u64,
}

impl LinkSpec {
    pub fn connects(&self, x: NodeId, y: NodeId) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }

    pub fn other_end(&self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Catalog of the testbed links: (name, length km, loss dB, default rate
/// in octets per second, error rate). Rates are not published; these are
/// plausible per-technology constants.
pub const LINK_CATALOG: [(&str, f64, f64, u64, f64); 6] = [
    ("NEC-0", 50.0, 10.0, 25_000, 0.03),
    ("NEC-1", 22.0, 13.0, 12_500, 0.04),
    ("Toshiba", 45.0, 14.5, 37_500, 0.03),
    ("NTT-NICT", 90.0, 28.6, 1_250, 0.05),
    ("Gakushuin", 2.0, 2.0, 6_250, 0.06),
    ("SeQureNet", 2.0, 2.0, 6_250, 0.06),
];

/// A catalog link placed between two nodes.
pub fn catalog_link(name: &str, a: NodeId, b: NodeId, seed: u64) -> Result<LinkSpec, KeySupplyError> {
    let &(name, length_km, loss_db, rate, error_rate) = LINK_CATALOG
        .iter()
        .find(|l| l.0.eq_ignore_ascii_case(name))
        .ok_or_else(|| KeySupplyError::Config(format!("unknown catalog link {name}")))?;
    Ok(LinkSpec {
        name: name.to_string(),
        a,
        b,
        rate,
        error_rate,
        length_km,
        loss_db,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkSpec>,
    /// Node hosting the key management server.
    pub kms_node: NodeId,
}

impl Topology {
    /// Four nodes in a ring 1-2-3-4-1 with a 1-3 chord; node 1 hosts the
    /// KMS. Seeds are derived from `seed`.
    pub fn testbed(seed: u64) -> Self {
        let layout = [
            ("NEC-1", 1, 2),
            ("Toshiba", 2, 3),
            ("NTT-NICT", 3, 4),
            ("Gakushuin", 4, 1),
            ("NEC-0", 1, 3),
        ];
        let links = layout
            .iter()
            .enumerate()
            .map(|(i, &(name, a, b))| catalog_link(name, a, b, seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1))))
            .collect::<Result<Vec<_>, _>>()
            .expect("catalog names are valid");
        Self {
            nodes: vec![1, 2, 3, 4],
            links,
            kms_node: 1,
        }
    }

    /// A chain 1 - 2 - ... - n, useful for multi-hop relay tests.
    pub fn chain(n: NodeId, rate: u64, seed: u64) -> Self {
        let links = (1..n)
            .map(|i| LinkSpec {
                name: format!("L{i}-{}", i + 1),
                a: i,
                b: i + 1,
                rate,
                error_rate: 0.0,
                length_km: 0.0,
                loss_db: 0.0,
                seed: seed.wrapping_add(i as u64),
            })
            .collect();
        Self {
            nodes: (1..=n).collect(),
            links,
            kms_node: 1,
        }
    }

    pub fn validate(&self) -> Result<(), KeySupplyError> {
        let nodes: BTreeSet<NodeId> = self.nodes.iter().copied().collect();
        if nodes.len() != self.nodes.len() {
            return Err(KeySupplyError::Config("duplicate node id".into()));
        }
        if !nodes.contains(&self.kms_node) {
            return Err(KeySupplyError::Config(format!("KMS node {} does not exist", self.kms_node)));
        }
        let mut names = BTreeSet::new();
        for l in &self.links {
            if !nodes.contains(&l.a) || !nodes.contains(&l.b) || l.a == l.b {
                return Err(KeySupplyError::Config(format!("link {} has bad endpoints", l.name)));
            }
            if l.rate == 0 {
                return Err(KeySupplyError::Config(format!("link {} has zero key rate", l.name)));
            }
            if !names.insert(l.name.as_str()) {
                return Err(KeySupplyError::Config(format!("duplicate link name {}", l.name)));
            }
        }
        Ok(())
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// Index of the fastest link joining x and y.
    pub fn link_between(&self, x: NodeId, y: NodeId) -> Option<usize> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.connects(x, y))
            .max_by_key(|(i, l)| (l.rate, std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
    }

    /// Fewest-hop path, preferring faster links among equal hop counts.
    pub fn shortest_path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        if from == to {
            return Some(vec![from]);
        }
        let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(node) = queue.pop_front() {
            let mut next: Vec<(u64, NodeId)> = self
                .links
                .iter()
                .filter_map(|l| l.other_end(node).map(|o| (l.rate, o)))
                .collect();
            next.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, o) in next {
                if seen.insert(o) {
                    prev.insert(o, node);
                    if o == to {
                        let mut path = vec![to];
                        let mut cur = to;
                        while let Some(&p) = prev.get(&cur) {
                            path.push(p);
                            cur = p;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(o);
                }
            }
        }
        None
    }
}

/// Routing state kept by the key management server.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTable {
    pub paths: BTreeMap<(NodeId, NodeId), Vec<NodeId>>,
    pub links: Vec<LinkStatus>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkStatus {
    pub name: String,
    pub key_rate: u64,
    pub error_rate: f64,
    /// Octets currently pooled on the link.
    pub accumulated: u64,
}

impl RoutingTable {
    pub fn build(topology: &Topology, accumulated: impl Fn(usize) -> u64) -> Self {
        let mut paths = BTreeMap::new();
        for &a in &topology.nodes {
            for &b in &topology.nodes {
                if let Some(p) = topology.shortest_path(a, b) {
                    paths.insert((a, b), p);
                }
            }
        }
        let links = topology
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| LinkStatus {
                name: l.name.clone(),
                key_rate: l.rate,
                error_rate: l.error_rate,
                accumulated: accumulated(i),
            })
            .collect();
        Self { paths, links }
    }

    pub fn path(&self, a: NodeId, b: NodeId) -> Option<&[NodeId]> {
        self.paths.get(&(a, b)).map(Vec::as_slice)
    }
}
