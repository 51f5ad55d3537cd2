//! Diffbits: first differences between bit sequences, numbers, augmented
//! chunk contents, and whole trees.

use std::cmp::Ordering;
use std::sync::atomic::Ordering as AtomicOrdering;

use crate::bits::{encode_number, BitContent};
use crate::error::{ChonkError, Result};
use crate::store::{is_heckin, NodeId, NodeView, Store};

/// Width of the weight prefix of augmented content.
pub const WEIGHT_FIELD_BITS: u64 = 64;
/// Width of the optional hash field.
pub const HASH_FIELD_BITS: u64 = 32;

/// Position and direction of the first differing bit.
/// `direction` is true when the left bit is 0 and the right bit is 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitDiff {
    pub index: u64,
    pub direction: bool,
}

impl BitDiff {
    pub fn value(self) -> u128 {
        2 * self.index as u128 + self.direction as u128
    }
}

pub fn diffbit_bits(left: &BitContent, right: &BitContent) -> Result<u128> {
    left.iter()
        .zip(right.iter())
        .position(|(l, r)| l != r)
        .map(|i| 2 * i as u128 + right.get(i).unwrap() as u128)
        .ok_or(ChonkError::UndefinedDiffbit)
}

pub fn diffbit_numbers(left: u128, right: u128) -> Result<u128> {
    let x = left ^ right;
    if x == 0 {
        return Err(ChonkError::UndefinedDiffbit);
    }
    let i = x.trailing_zeros();
    Ok(2 * i as u128 + (right >> i & 1))
}

/// Diffbit against an imagined right neighbour that differs at bit 0.
#[inline]
pub fn fictitious(value: u128) -> u128 {
    if value & 1 == 1 {
        0
    } else {
        1
    }
}

/// Whether chunks at `layer` carry the hash field.
#[inline]
pub fn hashed_at(layer: u32, hash_start_layer: u32) -> bool {
    layer >= hash_start_layer
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedContent {
    pub weight_field: BitContent,
    pub hash_field: Option<BitContent>,
    pub raw: BitContent,
}

impl AugmentedContent {
    pub fn to_bits(&self) -> BitContent {
        let mut out = self.weight_field.clone();
        if let Some(h) = &self.hash_field {
            out.extend(h);
        }
        out.extend(&self.raw);
        out
    }
}

/// Materialized augmented content. Comparisons never build this; it exists
/// to pin down the layout.
pub fn augmented(
    store: &Store,
    node: NodeId,
    layer: u32,
    hash_start_layer: u32,
) -> Result<AugmentedContent> {
    Ok(AugmentedContent {
        weight_field: encode_number(store.weight(node) as u128, WEIGHT_FIELD_BITS as u32)?,
        hash_field: if hashed_at(layer, hash_start_layer) {
            Some(encode_number(
                store.hash(node) as u128,
                HASH_FIELD_BITS as u32,
            )?)
        } else {
            None
        },
        raw: store.bits(node),
    })
}

/// First differing bit of two augmented contents, without materializing them.
/// `None` iff the contents are identical.
pub fn augmented_difference(
    store: &Store,
    a: NodeId,
    b: NodeId,
    with_hash: bool,
) -> Option<BitDiff> {
    let (wa, wb) = (store.weight(a), store.weight(b));
    if wa != wb {
        let i = (wa ^ wb).trailing_zeros() as u64;
        return Some(BitDiff {
            index: i,
            direction: wb >> i & 1 == 1,
        });
    }
    let mut offset = WEIGHT_FIELD_BITS;
    if with_hash {
        let (ha, hb) = (store.hash(a), store.hash(b));
        if ha != hb {
            let i = (ha ^ hb).trailing_zeros() as u64;
            return Some(BitDiff {
                index: offset + i,
                direction: hb >> i & 1 == 1,
            });
        }
        offset += HASH_FIELD_BITS;
    }
    store.first_difference(a, b).map(|d| BitDiff {
        index: offset + d.index,
        ..d
    })
}

/// Diffbit of two augmented contents; equal contents are a caterpillar-phase bug.
pub fn augmented_diffbit(store: &Store, a: NodeId, b: NodeId, with_hash: bool) -> Result<u128> {
    augmented_difference(store, a, b, with_hash)
        .map(BitDiff::value)
        .ok_or(ChonkError::CaterpillarViolation)
}

/// Order used by the balancing phase: weight, then augmented content, where
/// the side holding the 0 bit at the first difference is smaller.
pub fn compare_chunks(store: &Store, a: NodeId, b: NodeId, with_hash: bool) -> Ordering {
    let (wa, wb) = (store.weight(a), store.weight(b));
    if wa != wb {
        return wa.cmp(&wb);
    }
    match augmented_difference(store, a, b, with_hash) {
        None => Ordering::Equal,
        Some(d) if d.direction => Ordering::Less,
        Some(_) => Ordering::Greater,
    }
}

pub fn first_order_diffbit(
    store: &Store,
    chunk: NodeId,
    right: Option<NodeId>,
    layer: u32,
    unit: u64,
    hash_start_layer: u32,
) -> Result<u128> {
    match right {
        Some(r) if is_heckin(store.weight(chunk), store.weight(r), unit) => {
            augmented_diffbit(store, chunk, r, hashed_at(layer, hash_start_layer))
        }
        _ => Ok(fictitious(store.weight(chunk) as u128)),
    }
}

/// Iterate numeric diffbits `orders - 1` times over a window of first-order
/// values. `heckd[i]` says whether the boundary right of item `i` is heck'd.
/// With `open_right`, the last item's right neighbour exists but lies outside
/// the window; values depending on it come back as not certain.
///
/// Returns the order-`orders` value and its certainty for every item.
pub fn higher_orders(
    first: &[u128],
    heckd: &[bool],
    orders: u32,
    open_right: bool,
) -> Result<Vec<(u128, bool)>> {
    let n = first.len();
    debug_assert!(heckd.len() + 1 >= n);
    let mut cur: Vec<(u128, bool)> = first
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, !(open_right && i + 1 == n)))
        .collect();
    for _ in 1..orders {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let (d, sure) = cur[i];
            let value = if i + 1 < n && heckd[i] {
                let (r, rsure) = cur[i + 1];
                let v = diffbit_numbers(d, r);
                if sure && rsure {
                    (v?, true)
                } else {
                    (v.unwrap_or_else(|_| fictitious(d)), false)
                }
            } else if i + 1 == n && open_right {
                (fictitious(d), false)
            } else {
                (fictitious(d), sure)
            };
            next.push(value);
        }
        cur = next;
    }
    Ok(cur)
}

/// The order-`orders` diffbit of the first item of a window that ends with
/// real data (missing neighbours take the fictitious rule).
pub fn highest_order_diffbit(first: &[u128], heckd: &[bool], orders: u32) -> Result<u128> {
    if first.is_empty() {
        return Err(ChonkError::EmptyInput);
    }
    Ok(higher_orders(first, heckd, orders, false)?[0].0)
}

impl Store {
    /// First differing bit of the raw contents of two nodes, or `None` when
    /// the contents are identical. For contents of different lengths sharing
    /// a common prefix, the difference sits at the shorter length and the
    /// missing bit counts as the complement of the present one.
    pub fn first_difference(&self, a: NodeId, b: NodeId) -> Option<BitDiff> {
        let (wa, wb) = (self.weight(a), self.weight(b));
        let common = wa.min(wb);
        if let Some((index, right_bit)) = self.diff_range(a, 0, b, 0, common) {
            return Some(BitDiff {
                index,
                direction: right_bit,
            });
        }
        match wa.cmp(&wb) {
            Ordering::Equal => None,
            Ordering::Less => Some(BitDiff {
                index: common,
                direction: self.bit_at(b, common),
            }),
            Ordering::Greater => Some(BitDiff {
                index: common,
                direction: !self.bit_at(a, common),
            }),
        }
    }

    /// Bit at position `pos` of the node's raw content.
    pub fn bit_at(&self, id: NodeId, pos: u64) -> bool {
        let mut id = id;
        let mut pos = pos;
        loop {
            match self.view(id) {
                NodeView::Leaf { bits, .. } => return bits >> pos & 1 == 1,
                NodeView::Merge { left, right } => {
                    let lw = self.weight(left);
                    if pos < lw {
                        id = left;
                    } else {
                        id = right;
                        pos -= lw;
                    }
                }
                NodeView::Caterpillar(runs) => {
                    let sw = self.weight(runs[0].node);
                    let mut k = pos / sw;
                    pos %= sw;
                    for r in runs {
                        if k < r.count {
                            id = r.node;
                            break;
                        }
                        k -= r.count;
                    }
                }
            }
        }
    }

    /// Compare `len` bits of `a` from `ao` with `len` bits of `b` from `bo`.
    /// Returns the offset of the first difference (relative to the range) and
    /// the bit of `b` there.
    fn diff_range(&self, a: NodeId, ao: u64, b: NodeId, bo: u64, len: u64) -> Option<(u64, bool)> {
        if len == 0 {
            return None;
        }
        self.visits.fetch_add(1, AtomicOrdering::Relaxed);
        if ao == bo && (a == b || self.same_content(a, b)) {
            return None;
        }
        if self.same_period(a, ao, b, bo) {
            return None;
        }
        let (va, vb) = (self.view(a), self.view(b));
        if let (NodeView::Leaf { bits: x, .. }, NodeView::Leaf { bits: y, .. }) = (va, vb) {
            let mask = if len >= 64 {
                u64::MAX
            } else {
                (1u64 << len) - 1
            };
            let diff = ((x >> ao) ^ (y >> bo)) & mask;
            if diff == 0 {
                return None;
            }
            let i = diff.trailing_zeros() as u64;
            return Some((i, y >> (bo + i) & 1 == 1));
        }
        let a_leaf = matches!(va, NodeView::Leaf { .. });
        let b_leaf = matches!(vb, NodeView::Leaf { .. });
        let split_a = !a_leaf && (b_leaf || self.weight(a) >= self.weight(b));
        if split_a {
            self.scan_children(a, ao, len, &mut |child, co, rel, sub| {
                self.diff_range(child, co, b, bo + rel, sub)
            })
        } else {
            self.scan_children(b, bo, len, &mut |child, co, rel, sub| {
                self.diff_range(a, ao + rel, child, co, sub)
            })
        }
    }

    fn same_content(&self, a: NodeId, b: NodeId) -> bool {
        let (ca, cb) = (self.content(a), self.content(b));
        ca == cb && ca.0 != u32::MAX
    }

    /// Both nodes are repetitions of the same innermost segment and the two
    /// offsets sit at the same phase of it, so every compared bit agrees.
    fn same_period(&self, a: NodeId, ao: u64, b: NodeId, bo: u64) -> bool {
        if !(self.is_caterpillar(a) && self.is_caterpillar(b)) {
            return false;
        }
        let (sa, sb) = (self.innermost_segment(a), self.innermost_segment(b));
        if !self.same_content(sa, sb) {
            return false;
        }
        let p = self.weight(sa);
        ao % p == bo % p
    }

    fn innermost_segment(&self, id: NodeId) -> NodeId {
        match self.view(id) {
            NodeView::Caterpillar(runs) => self.innermost_segment(runs[0].node),
            _ => id,
        }
    }

    /// Call `f(child, offset_in_child, offset_in_range, length)` for each
    /// child overlapping `[off, off + len)`, stopping at the first `Some`.
    fn scan_children(
        &self,
        id: NodeId,
        off: u64,
        len: u64,
        f: &mut dyn FnMut(NodeId, u64, u64, u64) -> Option<(u64, bool)>,
    ) -> Option<(u64, bool)> {
        let end = off + len;
        let mut visit = |child: NodeId, start: u64, w: u64| -> Option<Option<(u64, bool)>> {
            let (lo, hi) = (off.max(start), end.min(start + w));
            if lo >= hi {
                return None;
            }
            f(child, lo - start, lo - off, hi - lo).map(|(i, bit)| Some((i + lo - off, bit)))
        };
        match self.view(id) {
            NodeView::Leaf { .. } => unreachable!("leaves are compared directly"),
            NodeView::Merge { left, right } => {
                let lw = self.weight(left);
                if let Some(hit) = visit(left, 0, lw) {
                    return hit;
                }
                visit(right, lw, self.weight(right)).flatten()
            }
            NodeView::Caterpillar(runs) => {
                let sw = self.weight(runs[0].node);
                let mut run_start = 0u64;
                for r in runs {
                    let run_end = run_start + sw * r.count;
                    if run_end > off && run_start < end {
                        let first = (off.max(run_start) - run_start) / sw;
                        let last = (end.min(run_end) - 1 - run_start) / sw;
                        for k in first..=last {
                            if let Some(hit) = visit(r.node, run_start + k * sw, sw) {
                                return hit;
                            }
                        }
                    }
                    if run_start >= end {
                        break;
                    }
                    run_start = run_end;
                }
                None
            }
        }
    }
}
