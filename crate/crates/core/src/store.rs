//! Chunk nodes, weight classes and the hash-consing store.
//!
//! Structure nodes (how a chunk was merged, and when) and content records
//! (what bits it holds) are kept apart. Two structure nodes are equal iff
//! kind, child handles and provenance agree; two content records are equal
//! iff the raw bits agree, which is verified on every (weight, hash) match.

use std::collections::HashMap;
use std::hash::{BuildHasher, Hash, Hasher};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use hashbrown::{DefaultHashBuilder, HashTable};

use crate::bits::{BitContent, HashRing};
use crate::error::{ChonkError, Result};

/// Handle of a structure node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

/// Handle of a content record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ContentId {
    const PENDING: ContentId = ContentId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Balancing,
    Caterpillar,
    Diffbit,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Balancing, Phase::Caterpillar, Phase::Diffbit];

    fn ordinal(self) -> u32 {
        match self {
            Phase::Balancing => 1,
            Phase::Caterpillar => 2,
            Phase::Diffbit => 3,
        }
    }
}

/// Which phase produced a node, and at which merge priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhaseTag {
    Proto,
    Balancing(u8),
    Caterpillar,
    Diffbit(u8),
}

impl PhaseTag {
    pub fn phase(self) -> Option<Phase> {
        match self {
            PhaseTag::Proto => None,
            PhaseTag::Balancing(_) => Some(Phase::Balancing),
            PhaseTag::Caterpillar => Some(Phase::Caterpillar),
            PhaseTag::Diffbit(_) => Some(Phase::Diffbit),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub layer: u32,
    pub tag: PhaseTag,
}

impl Provenance {
    pub const PROTO: Provenance = Provenance {
        layer: 0,
        tag: PhaseTag::Proto,
    };

    pub fn new(layer: u32, tag: PhaseTag) -> Self {
        Self { layer, tag }
    }

    /// Position of the producing phase in the global bottom-up order.
    pub fn level(&self) -> u32 {
        match self.tag.phase() {
            None => 0,
            Some(p) => level_of(self.layer, p),
        }
    }
}

/// Level index of the list produced by `phase` at `layer` (layer ≥ 1).
/// Level 0 is the proto-chunk list.
pub fn level_of(layer: u32, phase: Phase) -> u32 {
    3 * (layer - 1) + phase.ordinal()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightClass {
    Megachonker,
    Heftychonk,
    FineBoi,
    Kitten,
}

pub fn classify(weight: u64, unit: u64) -> WeightClass {
    let (w, u) = (weight as u128, unit as u128);
    if w >= u {
        WeightClass::Megachonker
    } else if 2 * w >= u {
        WeightClass::Heftychonk
    } else if 4 * w >= u {
        WeightClass::FineBoi
    } else {
        WeightClass::Kitten
    }
}

#[inline]
pub fn is_heckin(left_weight: u64, right_weight: u64, unit: u64) -> bool {
    (left_weight as u128) + (right_weight as u128) < unit as u128
}

#[inline]
pub fn is_kitten(weight: u64, unit: u64) -> bool {
    4 * (weight as u128) < unit as u128
}

/// `count` consecutive copies of one structure node inside a caterpillar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Run {
    pub node: NodeId,
    pub count: u64,
}

/// Node shape as seen by callers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeView<'a> {
    Leaf { bits: u64, len: u32 },
    Merge { left: NodeId, right: NodeId },
    Caterpillar(&'a [Run]),
}

/// Node shape handed to [`Store::intern`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NewNode {
    Leaf { bits: u64, len: u32 },
    Merge { left: NodeId, right: NodeId },
    Caterpillar(Vec<Run>),
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Leaf { bits: u64, len: u8 },
    Merge { left: NodeId, right: NodeId },
    Caterpillar { start: u32, len: u32 },
}

#[derive(Clone, Copy, Debug)]
struct NodeData {
    kind: Kind,
    prov: Provenance,
    weight: u64,
    content: ContentId,
}

/// The content-only view shared by all structure nodes with equal bits.
#[derive(Debug)]
pub struct ContentRecord {
    weight: u64,
    hash: u32,
    /// `base^weight`, so concatenation hashes combine in O(1).
    shift: u32,
    prototype: AtomicU32,
    /// Next record with the same (weight, hash) key.
    next: u32,
}

impl ContentRecord {
    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn hash(&self) -> u32 {
        self.hash
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub nodes: usize,
    pub contents: usize,
    pub hash_collisions: u64,
}

/// Arena of structure nodes and content records with hash-consing indexes.
///
/// Interning takes `&mut self`; share a store between threads behind a lock.
/// Everything reachable through `&self` is safe to read concurrently.
pub struct Store {
    ring: HashRing,
    nodes: Vec<NodeData>,
    runs: Vec<Run>,
    contents: Vec<ContentRecord>,
    node_index: HashTable<NodeId>,
    content_index: HashTable<ContentId>,
    hasher: DefaultHashBuilder,
    monoids: HashMap<(ContentId, u64), NodeId>,
    collisions: u64,
    pub(crate) visits: AtomicU64,
}

impl Default for Store {
    fn default() -> Self {
        Self::new(HashRing::default())
    }
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("ring", &self.ring)
            .field("stats", &self.stats())
            .finish()
    }
}

impl Store {
    pub fn new(ring: HashRing) -> Self {
        Self {
            ring,
            nodes: Vec::new(),
            runs: Vec::new(),
            contents: Vec::new(),
            node_index: HashTable::new(),
            content_index: HashTable::new(),
            hasher: DefaultHashBuilder::default(),
            monoids: HashMap::new(),
            collisions: 0,
            visits: AtomicU64::new(0),
        }
    }

    pub fn ring(&self) -> &HashRing {
        &self.ring
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            nodes: self.nodes.len(),
            contents: self.contents.len(),
            hash_collisions: self.collisions,
        }
    }

    /// Structure nodes visited by tree comparisons so far.
    pub fn visit_count(&self) -> u64 {
        self.visits.load(Ordering::Relaxed)
    }

    pub fn reset_visit_count(&self) {
        self.visits.store(0, Ordering::Relaxed);
    }

    #[inline]
    fn node(&self, id: NodeId) -> &NodeData {
        &self.nodes[id.index()]
    }

    #[inline]
    pub fn weight(&self, id: NodeId) -> u64 {
        self.node(id).weight
    }

    #[inline]
    pub fn content(&self, id: NodeId) -> ContentId {
        self.node(id).content
    }

    #[inline]
    pub fn provenance(&self, id: NodeId) -> Provenance {
        self.node(id).prov
    }

    pub fn record(&self, c: ContentId) -> &ContentRecord {
        &self.contents[c.index()]
    }

    /// The 32-bit fingerprint of the node's raw content.
    #[inline]
    pub fn hash(&self, id: NodeId) -> u32 {
        self.contents[self.node(id).content.index()].hash
    }

    pub fn view(&self, id: NodeId) -> NodeView<'_> {
        match self.node(id).kind {
            Kind::Leaf { bits, len } => NodeView::Leaf {
                bits,
                len: len as u32,
            },
            Kind::Merge { left, right } => NodeView::Merge { left, right },
            Kind::Caterpillar { start, len } => {
                NodeView::Caterpillar(&self.runs[start as usize..(start + len) as usize])
            }
        }
    }

    pub fn is_caterpillar(&self, id: NodeId) -> bool {
        matches!(self.node(id).kind, Kind::Caterpillar { .. })
    }

    /// Period of a caterpillar's content: the innermost repeated segment.
    /// For any other node, its own weight.
    pub fn segment_weight(&self, id: NodeId) -> u64 {
        match self.view(id) {
            NodeView::Caterpillar(runs) => self.segment_weight(runs[0].node),
            _ => self.weight(id),
        }
    }

    /// A structure node holding this content. Read it once per computation:
    /// concurrent lookups may move it to another node of equal content.
    pub fn content_prototype(&self, c: ContentId) -> NodeId {
        NodeId(self.contents[c.index()].prototype.load(Ordering::Relaxed))
    }

    /// Point the node's content record at the node, marking it as in use.
    pub fn touch(&self, id: NodeId) {
        let c = self.node(id).content;
        self.contents[c.index()]
            .prototype
            .store(id.0, Ordering::Relaxed);
    }

    pub fn monoid_get(&self, c: ContentId, tag: u64) -> Option<NodeId> {
        self.monoids.get(&(c, tag)).copied()
    }

    pub fn monoid_set(&mut self, c: ContentId, tag: u64, value: NodeId) {
        self.monoids.insert((c, tag), value);
    }

    pub fn leaf(&mut self, bits: u64, len: u32) -> Result<NodeId> {
        self.intern(NewNode::Leaf { bits, len }, Provenance::PROTO)
    }

    pub fn merge(&mut self, left: NodeId, right: NodeId, prov: Provenance) -> Result<NodeId> {
        self.intern(NewNode::Merge { left, right }, prov)
    }

    pub fn caterpillar(&mut self, runs: Vec<Run>, prov: Provenance) -> Result<NodeId> {
        self.intern(NewNode::Caterpillar(runs), prov)
    }

    /// Return the existing handle for an equal node, or add the node.
    /// Children must already be interned.
    pub fn intern(&mut self, node: NewNode, prov: Provenance) -> Result<NodeId> {
        let node = self.normalize(node)?;
        let key = self.key_hash(&node, &prov);
        let existing = {
            let (nodes, runs) = (&self.nodes, &self.runs);
            self.node_index
                .find(key, |&id| same_node(nodes, runs, id, &node, &prov))
                .copied()
        };
        if let Some(id) = existing {
            return Ok(id);
        }

        let (weight, hash, shift) = self.measure(&node)?;
        let kind = match node {
            NewNode::Leaf { bits, len } => Kind::Leaf {
                bits,
                len: len as u8,
            },
            NewNode::Merge { left, right } => Kind::Merge { left, right },
            NewNode::Caterpillar(runs) => {
                let start = self.runs.len() as u32;
                let len = runs.len() as u32;
                self.runs.extend(runs);
                Kind::Caterpillar { start, len }
            }
        };
        let id = NodeId(
            u32::try_from(self.nodes.len())
                .map_err(|_| ChonkError::Invariant("node arena full".into()))?,
        );
        self.nodes.push(NodeData {
            kind,
            prov,
            weight,
            content: ContentId::PENDING,
        });
        let content = self.resolve_content(id, weight, hash, shift);
        self.nodes[id.index()].content = content;

        let (nodes, runs, hasher) = (&self.nodes, &self.runs, &self.hasher);
        self.node_index
            .insert_unique(key, id, |&other| node_key_hash(hasher, nodes, runs, other));
        Ok(id)
    }

    fn normalize(&self, node: NewNode) -> Result<NewNode> {
        match node {
            NewNode::Leaf { bits, len } => {
                if !(1..=64).contains(&len) {
                    return Err(ChonkError::Config(format!(
                        "leaf length {len} outside 1..=64"
                    )));
                }
                let masked = if len == 64 {
                    bits
                } else {
                    bits & ((1u64 << len) - 1)
                };
                Ok(NewNode::Leaf { bits: masked, len })
            }
            NewNode::Merge { .. } => Ok(node),
            NewNode::Caterpillar(runs) => {
                let mut out: Vec<Run> = Vec::with_capacity(runs.len());
                for r in runs.into_iter().filter(|r| r.count > 0) {
                    match out.last_mut() {
                        Some(last) if last.node == r.node => last.count += r.count,
                        _ => out.push(r),
                    }
                }
                let total: u64 = out.iter().map(|r| r.count).sum();
                if total < 2 {
                    return Err(ChonkError::Invariant(
                        "caterpillar needs two or more copies".into(),
                    ));
                }
                let c = self.content(out[0].node);
                if out.iter().any(|r| self.content(r.node) != c) {
                    return Err(ChonkError::Invariant(
                        "caterpillar runs differ in content".into(),
                    ));
                }
                Ok(NewNode::Caterpillar(out))
            }
        }
    }

    fn measure(&self, node: &NewNode) -> Result<(u64, u64, u64)> {
        let ring = &self.ring;
        Ok(match node {
            NewNode::Leaf { bits, len } => (
                *len as u64,
                ring.hash_word(*bits, *len),
                ring.pow_base(*len as u64),
            ),
            NewNode::Merge { left, right } => {
                let (l, r) = (
                    self.record(self.content(*left)),
                    self.record(self.content(*right)),
                );
                let weight = l
                    .weight
                    .checked_add(r.weight)
                    .ok_or(ChonkError::UnsupportedSize(
                        l.weight as u128 + r.weight as u128,
                    ))?;
                let (h, s) = ring.combine(
                    (l.hash as u64, l.shift as u64),
                    (r.hash as u64, r.shift as u64),
                );
                (weight, h, s)
            }
            NewNode::Caterpillar(runs) => {
                let seg = self.record(self.content(runs[0].node));
                let total: u64 = runs.iter().map(|r| r.count).sum();
                let weight = seg
                    .weight
                    .checked_mul(total)
                    .ok_or(ChonkError::UnsupportedSize(
                        seg.weight as u128 * total as u128,
                    ))?;
                let (h, s) = ring.repeat((seg.hash as u64, seg.shift as u64), total);
                (weight, h, s)
            }
        })
    }

    /// Find or create the content record for freshly pushed node `id`.
    fn resolve_content(&mut self, id: NodeId, weight: u64, hash: u64, shift: u64) -> ContentId {
        let key = self.hasher.hash_one((weight, hash as u32));
        let head = {
            let contents = &self.contents;
            self.content_index
                .find(key, |&c| {
                    contents[c.index()].weight == weight && contents[c.index()].hash == hash as u32
                })
                .copied()
        };
        let mut cursor = head;
        while let Some(c) = cursor {
            let proto = self.content_prototype(c);
            if self.first_difference(id, proto).is_none() {
                self.contents[c.index()]
                    .prototype
                    .store(id.0, Ordering::Relaxed);
                return c;
            }
            self.collisions += 1;
            let next = self.contents[c.index()].next;
            cursor = (next != u32::MAX).then_some(ContentId(next));
        }
        let c = ContentId(self.contents.len() as u32);
        let next = match head {
            Some(h) => std::mem::replace(&mut self.contents[h.index()].next, c.0),
            None => u32::MAX,
        };
        self.contents.push(ContentRecord {
            weight,
            hash: hash as u32,
            shift: shift as u32,
            prototype: AtomicU32::new(id.0),
            next,
        });
        if head.is_none() {
            let (contents, hasher) = (&self.contents, &self.hasher);
            self.content_index.insert_unique(key, c, |&o| {
                let r = &contents[o.index()];
                hasher.hash_one((r.weight, r.hash))
            });
        }
        c
    }

    fn key_hash(&self, node: &NewNode, prov: &Provenance) -> u64 {
        let mut h = self.hasher.build_hasher();
        match node {
            NewNode::Leaf { bits, len } => (0u8, bits, *len as u8).hash(&mut h),
            NewNode::Merge { left, right } => (1u8, left, right).hash(&mut h),
            NewNode::Caterpillar(runs) => (2u8, &runs[..]).hash(&mut h),
        }
        prov.hash(&mut h);
        h.finish()
    }

    /// All proto-chunk leaves under `id`, left to right.
    pub fn leaves(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.push_leaves(id, &mut out);
        out
    }

    fn push_leaves(&self, id: NodeId, out: &mut Vec<NodeId>) {
        match self.view(id) {
            NodeView::Leaf { .. } => out.push(id),
            NodeView::Merge { left, right } => {
                self.push_leaves(left, out);
                self.push_leaves(right, out);
            }
            NodeView::Caterpillar(runs) => {
                for r in runs {
                    let start = out.len();
                    self.push_leaves(r.node, out);
                    let seg = out[start..].to_vec();
                    for _ in 1..r.count {
                        out.extend_from_slice(&seg);
                    }
                }
            }
        }
    }

    /// The raw bits of a node. Linear in its weight; meant for tests and I/O.
    pub fn bits(&self, id: NodeId) -> BitContent {
        let mut out = BitContent::new();
        for leaf in self.leaves(id) {
            if let NodeView::Leaf { bits, len } = self.view(leaf) {
                out.extend(&BitContent::from_word(bits, len));
            }
        }
        out
    }

    /// Children as a list (caterpillars expanded run by run).
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        match self.view(id) {
            NodeView::Leaf { .. } => Vec::new(),
            NodeView::Merge { left, right } => vec![left, right],
            NodeView::Caterpillar(runs) => runs
                .iter()
                .flat_map(|r| std::iter::repeat_n(r.node, r.count as usize))
                .collect(),
        }
    }
}

fn node_key_hash(hasher: &DefaultHashBuilder, nodes: &[NodeData], runs: &[Run], id: NodeId) -> u64 {
    let d = &nodes[id.index()];
    let mut h = hasher.build_hasher();
    match d.kind {
        Kind::Leaf { bits, len } => (0u8, bits, len).hash(&mut h),
        Kind::Merge { left, right } => (1u8, left, right).hash(&mut h),
        Kind::Caterpillar { start, len } => {
            (2u8, &runs[start as usize..(start + len) as usize]).hash(&mut h)
        }
    }
    d.prov.hash(&mut h);
    h.finish()
}

fn same_node(
    nodes: &[NodeData],
    runs: &[Run],
    id: NodeId,
    node: &NewNode,
    prov: &Provenance,
) -> bool {
    let d = &nodes[id.index()];
    if d.prov != *prov {
        return false;
    }
    match (d.kind, node) {
        (Kind::Leaf { bits, len }, NewNode::Leaf { bits: b, len: l }) => {
            bits == *b && len as u32 == *l
        }
        (Kind::Merge { left, right }, NewNode::Merge { left: l, right: r }) => {
            left == *l && right == *r
        }
        (Kind::Caterpillar { start, len }, NewNode::Caterpillar(rs)) => {
            runs[start as usize..(start + len) as usize] == rs[..]
        }
        _ => false,
    }
}
