//! Incremental rebuild: splice a run of proto-chunks between a prefix of one
//! tree and a suffix of another, reusing everything the edit cannot reach.
//!
//! Work proceeds bottom-up, one phase at a time. Before each phase the cut
//! positions move outward through that phase's input list, far enough that
//! the locality bound keeps the rest of the old lists valid. The phase then
//! runs on the window with open ends; items that may depend on data beyond
//! an open end come back tainted and are handed back to the old tree, whose
//! list must have a boundary exactly there. A failed check retries with a
//! wider window, and after that falls back to a build from scratch.

use crate::error::{ChonkError, Result};
use crate::phases::{caterpillar_phase, run_balancing, run_diffbit, Ends, Item};
use crate::pipeline::{build_from_protos, proto_chunks, ChunkerConfig};
use crate::store::{level_of, NodeId, NodeView, Phase, Run, Store};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Frame {
    node: NodeId,
    run: usize,
    rep: u64,
    /// Start of the child the path continues into.
    child_start: u64,
}

/// A focus on one element of the list a tree holds at some level, with the
/// path from the root, so the focus can step left and right.
#[derive(Clone, Debug)]
pub struct TreeZipper {
    root: NodeId,
    level: u32,
    path: Vec<Frame>,
    focus: NodeId,
    start: u64,
}

fn run_count(store: &Store, node: NodeId) -> usize {
    match store.view(node) {
        NodeView::Leaf { .. } => 0,
        NodeView::Merge { .. } => 2,
        NodeView::Caterpillar(runs) => runs.len(),
    }
}

fn run_at(store: &Store, node: NodeId, run: usize) -> (NodeId, u64) {
    match store.view(node) {
        NodeView::Leaf { .. } => unreachable!("leaves have no children"),
        NodeView::Merge { left, right } => (if run == 0 { left } else { right }, 1),
        NodeView::Caterpillar(runs) => (runs[run].node, runs[run].count),
    }
}

impl TreeZipper {
    /// Focus on the element of the `level` list of `root` containing bit `pos`.
    pub fn seek(store: &Store, root: NodeId, level: u32, pos: u64) -> Self {
        debug_assert!(pos < store.weight(root));
        let mut z = Self {
            root,
            level,
            path: Vec::new(),
            focus: root,
            start: 0,
        };
        while z.descends(store, z.focus) {
            let node = z.focus;
            let mut off = z.start;
            let mut chosen = None;
            for run in 0..run_count(store, node) {
                let (child, count) = run_at(store, node, run);
                let w = store.weight(child);
                if pos < off + w * count {
                    let rep = (pos - off) / w;
                    chosen = Some(Frame {
                        node,
                        run,
                        rep,
                        child_start: off + rep * w,
                    });
                    z.focus = child;
                    break;
                }
                off += w * count;
            }
            let frame = chosen.expect("position inside node");
            z.start = frame.child_start;
            z.path.push(frame);
        }
        z
    }

    /// Undo the pops of a failed step: the focus has not moved, so seeking it
    /// again rebuilds the same path.
    fn reseek(&mut self, store: &Store, depth: usize) {
        if depth > 0 {
            *self = Self::seek(store, self.root, self.level, self.start);
        }
    }

    fn descends(&self, store: &Store, node: NodeId) -> bool {
        store.provenance(node).level() > self.level && run_count(store, node) > 0
    }

    pub fn focus(&self) -> NodeId {
        self.focus
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self, store: &Store) -> u64 {
        self.start + store.weight(self.focus)
    }

    /// Move to the previous element of the list; false at the left end.
    pub fn step_left(&mut self, store: &Store) -> bool {
        let depth = self.path.len();
        loop {
            let Some(top) = self.path.last_mut() else {
                self.reseek(store, depth);
                return false;
            };
            if top.rep > 0 {
                top.rep -= 1;
            } else if top.run > 0 {
                top.run -= 1;
                top.rep = run_at(store, top.node, top.run).1 - 1;
            } else {
                self.path.pop();
                continue;
            }
            let child = run_at(store, top.node, top.run).0;
            top.child_start -= store.weight(child);
            self.focus = child;
            self.start = top.child_start;
            break;
        }
        while self.descends(store, self.focus) {
            let node = self.focus;
            let run = run_count(store, node) - 1;
            let (child, count) = run_at(store, node, run);
            let child_start = self.start + store.weight(node) - store.weight(child);
            self.path.push(Frame {
                node,
                run,
                rep: count - 1,
                child_start,
            });
            self.focus = child;
            self.start = child_start;
        }
        true
    }

    /// Move to the next element of the list; false at the right end.
    pub fn step_right(&mut self, store: &Store) -> bool {
        let depth = self.path.len();
        loop {
            let Some(top) = self.path.last_mut() else {
                self.reseek(store, depth);
                return false;
            };
            let (child, count) = run_at(store, top.node, top.run);
            let next_start = top.child_start + store.weight(child);
            if top.rep + 1 < count {
                top.rep += 1;
            } else if top.run + 1 < run_count(store, top.node) {
                top.run += 1;
                top.rep = 0;
            } else {
                self.path.pop();
                continue;
            }
            top.child_start = next_start;
            self.focus = run_at(store, top.node, top.run).0;
            self.start = next_start;
            break;
        }
        while self.descends(store, self.focus) {
            let node = self.focus;
            let child = run_at(store, node, 0).0;
            self.path.push(Frame {
                node,
                run: 0,
                rep: 0,
                child_start: self.start,
            });
            self.focus = child;
        }
        true
    }
}

/// A tree cut at a bit position. As a prefix it stands for the bits before
/// the cut, as a suffix for the bits from the cut on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cut {
    pub tree: Option<NodeId>,
    pub pos: u64,
}

impl Cut {
    pub const EMPTY: Cut = Cut { tree: None, pos: 0 };

    pub fn new(tree: NodeId, pos: u64) -> Self {
        Self {
            tree: Some(tree),
            pos,
        }
    }

    /// The whole tree as a prefix.
    pub fn whole_prefix(store: &Store, tree: NodeId) -> Self {
        Self::new(tree, store.weight(tree))
    }

    /// The whole tree as a suffix.
    pub fn whole_suffix(tree: NodeId) -> Self {
        Self::new(tree, 0)
    }

    fn end(&self, store: &Store) -> u64 {
        self.tree.map_or(0, |t| store.weight(t))
    }
}

/// Diagnostics of one splice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpliceStats {
    /// Attempts beyond the first that widened the window.
    pub retries: u32,
    /// Times the splice gave up and built from scratch.
    pub fallbacks: u32,
}

/// Radius multipliers for the successive attempts.
const ATTEMPTS: [u64; 3] = [1, 2, 4];
/// Shedding targets, in units of the layer, on either side.
const SHED_LEFT: u64 = 32;
const SHED_RIGHT: u64 = 26;
const SHED_ITEMS: usize = 16;
/// Minimum distance between a returned cut and the edit.
const KEEP_LEFT: u64 = 24;
const KEEP_RIGHT: u64 = 18;
const KEEP_ITEMS: usize = 8;

/// Why an attempt gave up; only ever triggers a retry.
#[derive(Debug)]
struct Widen;

enum Fail {
    Widen,
    Error(ChonkError),
}

impl From<ChonkError> for Fail {
    fn from(e: ChonkError) -> Self {
        Fail::Error(e)
    }
}

impl From<Widen> for Fail {
    fn from(_: Widen) -> Self {
        Fail::Widen
    }
}

/// Root of the tree for `prefix ‖ middle ‖ suffix`, identical to what a
/// build from scratch of that content returns. `None` for empty content.
pub fn splice(
    store: &mut Store,
    prefix: Cut,
    middle: &[NodeId],
    suffix: Cut,
    config: &ChunkerConfig,
) -> Result<Option<NodeId>> {
    splice_with_stats(store, prefix, middle, suffix, config).map(|(root, _)| root)
}

pub fn splice_with_stats(
    store: &mut Store,
    prefix: Cut,
    middle: &[NodeId],
    suffix: Cut,
    config: &ChunkerConfig,
) -> Result<(Option<NodeId>, SpliceStats)> {
    config.check_store(store)?;
    for cut in [prefix, suffix] {
        if let Some(t) = cut.tree {
            if cut.pos > store.weight(t) {
                return Err(ChonkError::OutOfRange(format!(
                    "cut {} beyond tree weight {}",
                    cut.pos,
                    store.weight(t)
                )));
            }
        }
    }
    let mut stats = SpliceStats::default();
    for (i, &factor) in ATTEMPTS.iter().enumerate() {
        stats.retries = i as u32;
        match attempt(store, prefix, middle, suffix, config, factor) {
            Ok(root) => return Ok((root, stats)),
            Err(Fail::Error(e)) => return Err(e),
            Err(Fail::Widen) => {}
        }
    }
    stats.fallbacks = 1;
    let mut protos = cut_leaves(store, prefix, true);
    protos.extend_from_slice(middle);
    protos.extend(cut_leaves(store, suffix, false));
    if protos.is_empty() {
        return Ok((None, stats));
    }
    Ok((Some(build_from_protos(store, protos, config)?), stats))
}

fn cut_leaves(store: &Store, cut: Cut, prefix: bool) -> Vec<NodeId> {
    let Some(t) = cut.tree else { return Vec::new() };
    let leaves = store.leaves(t);
    let mut pos = 0;
    let mut split = 0;
    while split < leaves.len() && pos < cut.pos {
        pos += store.weight(leaves[split]);
        split += 1;
    }
    if prefix {
        leaves[..split].to_vec()
    } else {
        leaves[split..].to_vec()
    }
}

struct State {
    left: Cut,
    right: Cut,
    right_end: u64,
    work: Vec<NodeId>,
}

fn attempt(
    store: &mut Store,
    prefix: Cut,
    middle: &[NodeId],
    suffix: Cut,
    config: &ChunkerConfig,
    factor: u64,
) -> std::result::Result<Option<NodeId>, Fail> {
    let mut st = State {
        left: if prefix.pos == 0 { Cut::EMPTY } else { prefix },
        right: suffix,
        right_end: suffix.end(store),
        work: middle.to_vec(),
    };
    let mut layer = 0;
    loop {
        let done = st.left.pos == 0 && st.right.pos == st.right_end;
        if done && st.work.len() <= 1 {
            return Ok(st.work.first().copied());
        }
        layer += 1;
        let level_in = if layer == 1 {
            0
        } else {
            level_of(layer - 1, Phase::Diffbit)
        };
        tainted_phase(
            store,
            &mut st,
            config,
            layer,
            Phase::Balancing,
            level_in,
            factor,
        )?;
        caterpillar_step(store, &mut st, layer)?;
        tainted_phase(
            store,
            &mut st,
            config,
            layer,
            Phase::Diffbit,
            level_of(layer, Phase::Caterpillar),
            factor,
        )?;
    }
}

/// Move the left cut leftwards through the `level` list, shedding elements
/// until both targets are met or the tree is used up. Returns them in order.
fn shed_left(
    store: &Store,
    cut: &mut Cut,
    level: u32,
    min_weight: u64,
    min_items: usize,
) -> std::result::Result<Vec<NodeId>, Widen> {
    let mut out = Vec::new();
    let Some(tree) = cut.tree else { return Ok(out) };
    if cut.pos == 0 {
        return Ok(out);
    }
    let mut z = TreeZipper::seek(store, tree, level, cut.pos - 1);
    if z.end(store) != cut.pos {
        return Err(Widen);
    }
    let mut weight = 0u64;
    loop {
        out.push(z.focus());
        weight = weight.saturating_add(store.weight(z.focus()));
        cut.pos = z.start();
        if cut.pos == 0 || (weight >= min_weight && out.len() >= min_items) {
            break;
        }
        z.step_left(store);
    }
    out.reverse();
    Ok(out)
}

fn shed_right(
    store: &Store,
    cut: &mut Cut,
    end: u64,
    level: u32,
    min_weight: u64,
    min_items: usize,
) -> std::result::Result<Vec<NodeId>, Widen> {
    let mut out = Vec::new();
    let Some(tree) = cut.tree else { return Ok(out) };
    if cut.pos == end {
        return Ok(out);
    }
    let mut z = TreeZipper::seek(store, tree, level, cut.pos);
    if z.start() != cut.pos {
        return Err(Widen);
    }
    let mut weight = 0u64;
    loop {
        out.push(z.focus());
        weight = weight.saturating_add(store.weight(z.focus()));
        cut.pos = z.end(store);
        if cut.pos == end || (weight >= min_weight && out.len() >= min_items) {
            break;
        }
        z.step_right(store);
    }
    Ok(out)
}

/// Whether the `level` list of the cut's tree has a boundary at `pos`.
fn aligned(store: &Store, cut: &Cut, level: u32, pos: u64, end: u64) -> bool {
    match cut.tree {
        None => true,
        Some(_) if pos == 0 || pos == end => true,
        Some(t) => TreeZipper::seek(store, t, level, pos).start() == pos,
    }
}

fn tainted_phase(
    store: &mut Store,
    st: &mut State,
    config: &ChunkerConfig,
    layer: u32,
    phase: Phase,
    level_in: u32,
    factor: u64,
) -> std::result::Result<(), Fail> {
    let params = config.params(layer);
    let unit = params.unit;
    let level_out = level_of(layer, phase);
    let (left_orig, right_orig) = (st.left.pos, st.right.pos);

    let shed_l = shed_left(
        store,
        &mut st.left,
        level_in,
        unit.saturating_mul(SHED_LEFT * factor),
        SHED_ITEMS * factor as usize,
    )?;
    let shed_r = shed_right(
        store,
        &mut st.right,
        st.right_end,
        level_in,
        unit.saturating_mul(SHED_RIGHT * factor),
        SHED_ITEMS * factor as usize,
    )?;
    let mut window = shed_l.clone();
    window.extend_from_slice(&st.work);
    window.extend_from_slice(&shed_r);
    if window.is_empty() {
        return Ok(());
    }
    let ends = Ends {
        open_left: st.left.pos > 0,
        open_right: st.right.pos < st.right_end,
    };
    let items: Vec<Item> = match phase {
        Phase::Balancing => run_balancing(store, &window, params, ends)?,
        Phase::Diffbit => run_diffbit(store, &window, params, ends)?,
        Phase::Caterpillar => unreachable!("caterpillars need no taint"),
    };

    let a = items.iter().take_while(|i| i.tainted).count();
    let b = items.len() - items.iter().rev().take_while(|i| i.tainted).count();
    if a >= b || items[a..b].iter().any(|i| i.tainted) {
        return Err(Fail::Widen);
    }
    let weight = |s: &[Item]| s.iter().map(|i| store.weight(i.node)).sum::<u64>();
    if a > 0 {
        let cut = st.left.pos + weight(&items[..a]);
        let kept_items = shed_l.len().saturating_sub(items[a].lo);
        if cut > left_orig
            || left_orig - cut < unit.saturating_mul(KEEP_LEFT)
            || kept_items < KEEP_ITEMS
            || !aligned(store, &st.left, level_out, cut, u64::MAX)
        {
            return Err(Fail::Widen);
        }
        st.left.pos = cut;
    }
    if b < items.len() {
        let cut = st.right.pos - weight(&items[b..]);
        let first_shed = window.len() - shed_r.len();
        let kept_items = (items[b - 1].hi + 1).saturating_sub(first_shed);
        if cut < right_orig
            || cut - right_orig < unit.saturating_mul(KEEP_RIGHT)
            || kept_items < KEEP_ITEMS
            || !aligned(store, &st.right, level_out, cut, st.right_end)
        {
            return Err(Fail::Widen);
        }
        st.right.pos = cut;
    }
    st.work = items[a..b].iter().map(|i| i.node).collect();
    Ok(())
}

/// The caterpillar phase only looks at runs of equal neighbours, so it is
/// enough to shed the run touching each cut.
fn caterpillar_step(
    store: &mut Store,
    st: &mut State,
    layer: u32,
) -> std::result::Result<(), Fail> {
    let level_out = level_of(layer, Phase::Caterpillar);
    let mut runs: Vec<Run> = Vec::new();
    if let (Some(t), true) = (st.left.tree, st.left.pos > 0) {
        let z = TreeZipper::seek(store, t, level_out, st.left.pos - 1);
        let e = z.focus();
        if store.provenance(e).level() == level_out && store.is_caterpillar(e) {
            runs.extend(clip_runs(store, e, z.start(), z.start(), st.left.pos));
        } else if z.end(store) == st.left.pos {
            runs.push(Run { node: e, count: 1 });
        } else {
            return Err(Fail::Widen);
        }
        st.left.pos = z.start();
    }
    runs.extend(st.work.iter().map(|&node| Run { node, count: 1 }));
    if let (Some(t), true) = (st.right.tree, st.right.pos < st.right_end) {
        let z = TreeZipper::seek(store, t, level_out, st.right.pos);
        let e = z.focus();
        let end = z.end(store);
        if store.provenance(e).level() == level_out && store.is_caterpillar(e) {
            runs.extend(clip_runs(store, e, z.start(), st.right.pos, end));
        } else if z.start() == st.right.pos {
            runs.push(Run { node: e, count: 1 });
        } else {
            return Err(Fail::Widen);
        }
        st.right.pos = end;
    }
    if st.left.pos == 0 {
        st.left = Cut::EMPTY;
    }
    st.work = caterpillar_phase(store, &runs, layer)?;
    Ok(())
}

/// The runs of caterpillar `cat` (starting at `start`) covering `[from, to)`.
/// Both ends fall on segment boundaries.
fn clip_runs(store: &Store, cat: NodeId, start: u64, from: u64, to: u64) -> Vec<Run> {
    let NodeView::Caterpillar(runs) = store.view(cat) else {
        unreachable!()
    };
    let sw = store.weight(runs[0].node);
    let mut out = Vec::new();
    let mut pos = start;
    for r in runs {
        let (lo, hi) = (pos.max(from), (pos + sw * r.count).min(to));
        if lo < hi {
            out.push(Run {
                node: r.node,
                count: (hi - lo) / sw,
            });
        }
        pos += sw * r.count;
    }
    out
}

/// Replace `deleted` proto-chunks at proto-chunk index `position` with the
/// proto-chunks of `inserted`. `None` if the result is empty.
pub fn edit_ops(
    store: &mut Store,
    root: Option<NodeId>,
    position: u64,
    deleted: u64,
    inserted: &[u8],
    config: &ChunkerConfig,
) -> Result<Option<NodeId>> {
    let bits = config.granularity.proto_bits() as u64;
    let len = root.map_or(0, |r| store.weight(r) / bits);
    if position.checked_add(deleted).is_none_or(|end| end > len) {
        return Err(ChonkError::OutOfRange(format!(
            "edit {position}+{deleted} beyond length {len}"
        )));
    }
    let middle = proto_chunks(store, inserted, config.granularity)?;
    let (prefix, suffix) = match root {
        Some(r) => (
            Cut::new(r, position * bits),
            Cut::new(r, (position + deleted) * bits),
        ),
        None => (Cut::EMPTY, Cut::EMPTY),
    };
    splice(store, prefix, &middle, suffix, config)
}
