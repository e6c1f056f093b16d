use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DESK_SIZES: [usize; 4] = [8, 16, 32, 64];
pub const FULL_SIZES: [usize; 5] = [128, 256, 512, 1024, 2048];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub max_shared_layers: usize,
    pub max_private_layers: usize,
    /// Candidate neuron counts, strictly increasing.
    pub layer_sizes: Vec<usize>,
    /// Value columns; each gets its own private tree.
    pub heads: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            max_shared_layers: 2,
            max_private_layers: 2,
            layer_sizes: DESK_SIZES.to_vec(),
            heads: 1,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() || self.layer_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "layer sizes must be nonempty and strictly increasing".into(),
            ));
        }
        if self.layer_sizes[0] == 0 {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.max_shared_layers == 0 || self.max_private_layers == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig("search space needs layers and heads".into()));
        }
        Ok(())
    }

    /// Candidate predecessors of shared slot `i` (0-based): the input and
    /// every earlier shared slot.
    pub fn shared_candidates(&self, i: usize) -> Vec<Node> {
        std::iter::once(Node::Input).chain((0..i).map(Node::Shared)).collect()
    }

    /// Candidate predecessors of private slot `j` (0-based): the private
    /// input (last shared slot), earlier private slots, and the first `j`
    /// shared slots. That is `2j + 1` choices.
    pub fn private_candidates(&self, j: usize) -> Vec<Node> {
        std::iter::once(Node::PrivateInput)
            .chain((0..j).map(Node::Private))
            .chain((0..j).map(Node::Shared))
            .collect()
    }

    /// Number of decisions a controller makes for one architecture.
    pub fn decision_count(&self) -> usize {
        2 * (self.max_shared_layers + self.heads * self.max_private_layers)
    }

    /// Largest predecessor menu across all slots.
    pub fn max_candidates(&self) -> usize {
        self.max_shared_layers.max(2 * self.max_private_layers - 1)
    }
}

/// `N^{2M} * M! * (2M-1)!!`: architectures of one head with `M` shared and
/// `M` private slots, `N` sizes each. `None` on overflow.
pub fn search_space_size(n: u64, m: u64) -> Option<u128> {
    let n = n as u128;
    let mut total: u128 = 1;
    for i in 1..=m as u128 {
        total = total.checked_mul(n.checked_mul(n)?)?;
        total = total.checked_mul(i)?;
        total = total.checked_mul(2 * i - 1)?;
    }
    Some(total)
}

/// A DAG node inside one tree of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    Input,
    Shared(usize),
    /// Entry of a private tree; carries the last shared slot's output.
    PrivateInput,
    Private(usize),
    Output,
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Input => f.write_str("in"),
            Node::Shared(i) => write!(f, "s{i}"),
            Node::PrivateInput => f.write_str("pi"),
            Node::Private(i) => write!(f, "p{i}"),
            Node::Output => f.write_str("out"),
        }
    }
}

impl FromStr for Node {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad node `{s}`"));
        Ok(match s {
            "in" => Node::Input,
            "pi" => Node::PrivateInput,
            "out" => Node::Output,
            _ if s.starts_with('s') => Node::Shared(s[1..].parse().map_err(|_| bad())?),
            _ if s.starts_with('p') => Node::Private(s[1..].parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub pred: Node,
    pub size: usize,
}

/// One sampled sub-graph: every slot names its predecessor and size. Slots
/// off every head's path are inactive and not materialized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub shared: Vec<Slot>,
    pub private: Vec<Vec<Slot>>,
}

/// Active structure of one head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadPath {
    /// Shared slot feeding the first active private slot.
    pub tap: usize,
    /// Node the first active private slot reads (`PrivateInput` or `Shared`).
    pub entry: Node,
    /// Active private slots, input to output.
    pub private: Vec<usize>,
}

impl ArchSpec {
    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("invalid architecture: {m}")));
        if self.shared.len() != space.max_shared_layers {
            return bad(format!("{} shared slots", self.shared.len()));
        }
        if self.private.len() != space.heads {
            return bad(format!(
                "{} private trees for {} heads",
                self.private.len(),
                space.heads
            ));
        }
        for (i, s) in self.shared.iter().enumerate() {
            if !space.shared_candidates(i).contains(&s.pred) {
                return bad(format!("shared slot {i} reads {}", s.pred));
            }
            if !space.layer_sizes.contains(&s.size) {
                return bad(format!("size {} not in grid", s.size));
            }
        }
        for (h, slots) in self.private.iter().enumerate() {
            if slots.len() != space.max_private_layers {
                return bad(format!("head {h} has {} private slots", slots.len()));
            }
            for (j, s) in slots.iter().enumerate() {
                if !space.private_candidates(j).contains(&s.pred) {
                    return bad(format!("head {h} private slot {j} reads {}", s.pred));
                }
                if !space.layer_sizes.contains(&s.size) {
                    return bad(format!("size {} not in grid", s.size));
                }
            }
        }
        Ok(())
    }

    pub fn head_path(&self, h: usize) -> HeadPath {
        let slots = &self.private[h];
        let mut chain = Vec::new();
        let mut cur = slots.len() - 1;
        let entry = loop {
            chain.push(cur);
            match slots[cur].pred {
                Node::Private(p) => cur = p,
                other => break other,
            }
        };
        chain.reverse();
        let tap = match entry {
            Node::Shared(s) => s,
            _ => self.shared.len() - 1,
        };
        HeadPath {
            tap,
            entry,
            private: chain,
        }
    }

    /// Shared slots on the path from the input to `slot`, input side first.
    pub fn shared_path(&self, slot: usize) -> Vec<usize> {
        let mut path = vec![slot];
        let mut cur = slot;
        while let Node::Shared(p) = self.shared[cur].pred {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Shared slots used by any head, ascending.
    pub fn active_shared(&self) -> Vec<usize> {
        let mut used: Vec<usize> = (0..self.private.len())
            .flat_map(|h| self.shared_path(self.head_path(h).tap))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Activated edges as (tree, from, to); tree 0 is shared, `h + 1` is head `h`.
    pub fn edges(&self) -> Vec<(usize, Node, Node)> {
        let mut out: Vec<(usize, Node, Node)> = self
            .active_shared()
            .into_iter()
            .map(|s| (0, self.shared[s].pred, Node::Shared(s)))
            .collect();
        for h in 0..self.private.len() {
            let path = self.head_path(h);
            for &p in &path.private {
                out.push((h + 1, self.private[h][p].pred, Node::Private(p)));
            }
            out.push((h + 1, Node::Private(self.private[h].len() - 1), Node::Output));
        }
        out
    }

    /// Short stable identifier.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `in/16,s0/32|pi/8,p0/16|...`: shared slots, then one group per head.
impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group = |slots: &[Slot]| {
            slots
                .iter()
                .map(|s| format!("{}/{}", s.pred, s.size))
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{}", group(&self.shared))?;
        for p in &self.private {
            write!(f, "|{}", group(p))?;
        }
        Ok(())
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let group = |g: &str| -> Result<Vec<Slot>> {
            g.split(',')
                .map(|slot| {
                    let (node, size) = slot
                        .split_once('/')
                        .ok_or_else(|| Error::Parse(format!("bad slot `{slot}`")))?;
                    Ok(Slot {
                        pred: node.parse()?,
                        size: size
                            .parse()
                            .map_err(|_| Error::Parse(format!("bad size in `{slot}`")))?,
                    })
                })
                .collect()
        };
        let mut groups = s.split('|');
        let shared = group(groups.next().unwrap_or_default())?;
        let private = groups.map(group).collect::<Result<Vec<_>>>()?;
        Ok(Self { shared, private })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn all_nodes(m: usize) -> Vec<Node> {
        let mut v = vec![Node::Input, Node::PrivateInput, Node::Output];
        for i in 0..m + 1 {
            v.push(Node::Shared(i));
            v.push(Node::Private(i));
        }
        v
    }

    /// Every raw assignment of (node, size) to each slot, keeping the valid ones.
    fn enumerate(space: &SearchSpace) -> Vec<ArchSpec> {
        let nodes = all_nodes(space.max_shared_layers.max(space.max_private_layers));
        let sizes = &space.layer_sizes;
        let slot_choices: Vec<Slot> = nodes
            .iter()
            .flat_map(|&pred| sizes.iter().map(move |&size| Slot { pred, size }))
            .collect();
        let total = space.max_shared_layers + space.max_private_layers;
        let mut out = Vec::new();
        let mut idx = vec![0usize; total];
        loop {
            let slots: Vec<Slot> = idx.iter().map(|&i| slot_choices[i]).collect();
            let arch = ArchSpec {
                shared: slots[..space.max_shared_layers].to_vec(),
                private: vec![slots[space.max_shared_layers..].to_vec()],
            };
            if arch.validate(space).is_ok() {
                out.push(arch);
            }
            let mut d = 0;
            loop {
                if d == total {
                    return out;
                }
                idx[d] += 1;
                if idx[d] < slot_choices.len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    #[test]
    fn formula_examples() {
        assert_eq!(search_space_size(1, 1), Some(1));
        assert_eq!(search_space_size(2, 2), Some(96));
        assert_eq!(search_space_size(3, 1), Some(9));
        assert_eq!(search_space_size(u64::MAX, 3), None);
    }

    #[test]
    fn formula_matches_enumeration() {
        for n in 1..=3usize {
            for m in 1..=2usize {
                let space = SearchSpace {
                    max_shared_layers: m,
                    max_private_layers: m,
                    layer_sizes: (1..=n).map(|s| s * 4).collect(),
                    heads: 1,
                };
                let archs = enumerate(&space);
                let distinct: HashSet<&ArchSpec> = archs.iter().collect();
                assert_eq!(distinct.len(), archs.len());
                assert_eq!(
                    Some(archs.len() as u128),
                    search_space_size(n as u64, m as u64),
                    "N={n} M={m}"
                );
            }
        }
    }

    #[test]
    fn paths_follow_predecessors() {
        let arch: ArchSpec = "in/8,in/16|pi/4,s0/32".parse().unwrap();
        let space = SearchSpace {
            layer_sizes: vec![4, 8, 16, 32],
            ..Default::default()
        };
        arch.validate(&space).unwrap();
        let path = arch.head_path(0);
        assert_eq!(path.private, vec![1]);
        assert_eq!((path.tap, path.entry), (0, Node::Shared(0)));
        assert_eq!(arch.active_shared(), vec![0]);
        assert_eq!(
            arch.edges(),
            vec![
                (0, Node::Input, Node::Shared(0)),
                (1, Node::Shared(0), Node::Private(1)),
                (1, Node::Private(1), Node::Output)
            ]
        );
        assert_eq!(arch.to_string().parse::<ArchSpec>().unwrap(), arch);
        assert_eq!(arch.id().len(), 16);
    }

    #[test]
    fn chain_uses_every_slot() {
        let arch: ArchSpec = "in/8,s0/16|pi/4,p0/8|pi/4,p0/4".parse().unwrap();
        assert_eq!(arch.active_shared(), vec![0, 1]);
        assert_eq!(arch.head_path(1).private, vec![0, 1]);
        assert_eq!(arch.head_path(1).tap, 1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let space = SearchSpace::default();
        for bad in [
            "s0/8,in/16|pi/8,p0/8",
            "in/8,in/16|p1/8,p0/8",
            "in/9,in/16|pi/8,p0/8",
            "in/8|pi/8,p0/8",
        ] {
            let arch: ArchSpec = bad.parse().unwrap();
            assert!(arch.validate(&space).is_err(), "{bad}");
        }
        assert!(SearchSpace {
            layer_sizes: vec![8, 8],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
