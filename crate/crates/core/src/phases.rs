//! The three per-layer phases and priority-based merging.
//!
//! Every phase runs over a window of chunks. A closed end is the real end of
//! the data. An open end has unknown neighbours beyond it; items whose fate
//! may depend on those neighbours come back tainted (rebuild uses this to
//! decide what it can keep). Full builds use closed ends only.

use crate::diffbit::{augmented_diffbit, compare_chunks, fictitious, hashed_at, higher_orders};
use crate::error::{ChonkError, Result};
use crate::store::{is_heckin, is_kitten, NodeId, Phase, PhaseTag, Provenance, Run, Store};
use std::cmp::Ordering;

/// Layer parameters shared by all phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseParams {
    pub layer: u32,
    pub unit: u64,
    pub hash_start_layer: u32,
    /// Diffbit orders; 5 keeps priorities in 0..=5.
    pub orders: u32,
}

impl PhaseParams {
    pub fn new(layer: u32, unit: u64) -> Self {
        Self {
            layer,
            unit,
            hash_start_layer: 3,
            orders: 5,
        }
    }

    fn hashed(&self) -> bool {
        hashed_at(self.layer, self.hash_start_layer)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BoundaryAnnotation {
    pub priority: Option<u8>,
    pub heckd: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct Ends {
    pub open_left: bool,
    pub open_right: bool,
}

impl Ends {
    pub const CLOSED: Ends = Ends {
        open_left: false,
        open_right: false,
    };
}

/// A phase output chunk with the span of input positions it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Item {
    pub node: NodeId,
    pub tainted: bool,
    pub lo: usize,
    pub hi: usize,
}

fn fresh_items(chunks: &[NodeId], taint: &[bool]) -> Vec<Item> {
    chunks
        .iter()
        .zip(taint)
        .enumerate()
        .map(|(i, (&node, &tainted))| Item {
            node,
            tainted,
            lo: i,
            hi: i,
        })
        .collect()
}

/// Merge along annotated boundaries, lowest priority first.
pub fn priority_merge(
    store: &mut Store,
    chunks: &[NodeId],
    boundaries: &[BoundaryAnnotation],
    unit: u64,
    layer: u32,
    family: Phase,
) -> Result<Vec<NodeId>> {
    if boundaries.len() + 1 != chunks.len() && !chunks.is_empty() {
        return Err(ChonkError::Invariant(
            "one annotation per boundary expected".into(),
        ));
    }
    let prios: Vec<Option<u8>> = boundaries.iter().map(|b| b.priority).collect();
    let items = merge_items(
        store,
        chunks,
        &prios,
        vec![false; chunks.len()],
        unit,
        layer,
        family,
    )?;
    Ok(items.into_iter().map(|i| i.node).collect())
}

/// Priority merging with taint. `taint` marks the initially tainted inputs;
/// the caller must taint both sides of every boundary whose priority is not
/// known for sure.
pub(crate) fn merge_items(
    store: &mut Store,
    chunks: &[NodeId],
    prios: &[Option<u8>],
    taint: Vec<bool>,
    unit: u64,
    layer: u32,
    family: Phase,
) -> Result<Vec<Item>> {
    let mut items = fresh_items(chunks, &taint);
    let mut bprio = prios.to_vec();
    let mut levels: Vec<u8> = bprio.iter().flatten().copied().collect();
    levels.sort_unstable();
    levels.dedup();

    for p in levels {
        if items.len() < 2 {
            break;
        }
        let tag = match family {
            Phase::Balancing => PhaseTag::Balancing(p),
            Phase::Diffbit => PhaseTag::Diffbit(p),
            Phase::Caterpillar => {
                return Err(ChonkError::Invariant(
                    "caterpillars do not use priorities".into(),
                ))
            }
        };
        let prov = Provenance::new(layer, tag);
        let mut next_items = Vec::with_capacity(items.len());
        let mut next_prio = Vec::with_capacity(bprio.len());
        let mut cur = items[0];
        for j in 0..bprio.len() {
            let mut right = items[j + 1];
            if bprio[j] == Some(p) {
                let heck = is_heckin(store.weight(cur.node), store.weight(right.node), unit);
                let blocked = bprio.get(j + 1).copied().flatten() == Some(p);
                if heck && !blocked {
                    let node = store.merge(cur.node, right.node, prov)?;
                    cur = Item {
                        node,
                        tainted: cur.tainted || right.tainted,
                        lo: cur.lo,
                        hi: right.hi,
                    };
                    continue;
                }
                if cur.tainted || right.tainted {
                    // Inputs only grow by merging, so a pair whose adjacent
                    // inputs already fill a unit can never be heckin'.
                    let too_heavy = !is_heckin(
                        store.weight(chunks[cur.hi]),
                        store.weight(chunks[right.lo]),
                        unit,
                    );
                    let surely_blocked = blocked && !right.tainted;
                    if !(too_heavy || surely_blocked) {
                        cur.tainted = true;
                        right.tainted = true;
                    }
                }
            }
            next_items.push(cur);
            next_prio.push(bprio[j]);
            cur = right;
        }
        next_items.push(cur);
        items = next_items;
        bprio = next_prio;
    }
    Ok(items)
}

/// Taint items next to boundaries whose priority is uncertain, and the ends.
fn initial_taint(n: usize, uncertain: &[bool], ends: Ends) -> Vec<bool> {
    let mut taint = vec![false; n];
    if n == 0 {
        return taint;
    }
    taint[0] |= ends.open_left;
    taint[n - 1] |= ends.open_right;
    for (j, &u) in uncertain.iter().enumerate() {
        if u {
            taint[j] = true;
            taint[j + 1] = true;
        }
    }
    taint
}

pub fn balancing_phase(
    store: &mut Store,
    chunks: &[NodeId],
    params: PhaseParams,
) -> Result<Vec<NodeId>> {
    let unit = params.unit;
    if let Some(w) = chunks
        .windows(2)
        .find(|w| is_kitten(store.weight(w[0]), unit) && is_kitten(store.weight(w[1]), unit))
    {
        return Err(ChonkError::Invariant(format!(
            "consecutive kittens of weights {} and {} at unit {unit}",
            store.weight(w[0]),
            store.weight(w[1])
        )));
    }
    let out: Vec<NodeId> = run_balancing(store, chunks, params, Ends::CLOSED)?
        .into_iter()
        .map(|i| i.node)
        .collect();
    check_balancing(store, &out, unit)?;
    Ok(out)
}

/// No kitten is heckin' with a neighbour.
pub fn check_balancing(store: &Store, chunks: &[NodeId], unit: u64) -> Result<()> {
    for w in chunks.windows(2) {
        let (a, b) = (store.weight(w[0]), store.weight(w[1]));
        if (is_kitten(a, unit) || is_kitten(b, unit)) && is_heckin(a, b, unit) {
            return Err(ChonkError::Invariant(format!(
                "kitten left heckin' after balancing: {a} + {b} < {unit}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn run_balancing(
    store: &mut Store,
    chunks: &[NodeId],
    params: PhaseParams,
    ends: Ends,
) -> Result<Vec<Item>> {
    let n = chunks.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let hashed = params.hashed();
    // (is a local minimum, and that is certain)
    let order: Vec<Ordering> = chunks
        .windows(2)
        .map(|w| compare_chunks(store, w[0], w[1], hashed))
        .collect();
    let minima: Vec<(bool, bool)> = (0..n)
        .map(|i| {
            let smaller = |j: usize| {
                if j < i {
                    order[j] == Ordering::Greater
                } else {
                    order[i] == Ordering::Less
                }
            };
            let is_min = (i == 0 || smaller(i - 1)) && (i + 1 == n || smaller(i + 1));
            let unsure = (i == 0 && ends.open_left) || (i + 1 == n && ends.open_right);
            // a chunk beaten by a present neighbour is surely no minimum
            let beaten = (i > 0 && !smaller(i - 1)) || (i + 1 < n && !smaller(i + 1));
            (is_min, !unsure || beaten)
        })
        .collect();
    let mut prios = Vec::with_capacity(n.saturating_sub(1));
    let mut uncertain = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n - 1 {
        let (l, r) = (minima[j], minima[j + 1]);
        if l.0 && r.0 {
            return Err(ChonkError::Invariant("two adjacent local minima".into()));
        }
        prios.push(if l.0 {
            Some(0)
        } else if r.0 {
            Some(1)
        } else {
            None
        });
        uncertain.push(!(l.1 && (l.0 || r.1)));
    }
    let taint = initial_taint(n, &uncertain, ends);
    merge_items(
        store,
        chunks,
        &prios,
        taint,
        params.unit,
        params.layer,
        Phase::Balancing,
    )
}

/// Maximal runs of equal content become caterpillars. Input items may carry
/// repeat counts; every run boundary in the input must be a real one.
pub fn caterpillar_phase(store: &mut Store, items: &[Run], layer: u32) -> Result<Vec<NodeId>> {
    let prov = Provenance::new(layer, PhaseTag::Caterpillar);
    let mut out = Vec::with_capacity(items.len());
    let mut i = 0;
    while i < items.len() {
        let content = store.content(items[i].node);
        let mut j = i + 1;
        while j < items.len() && store.content(items[j].node) == content {
            j += 1;
        }
        let total: u64 = items[i..j].iter().map(|r| r.count).sum();
        if total >= 2 {
            out.push(store.caterpillar(items[i..j].to_vec(), prov)?);
        } else {
            out.push(items[i].node);
        }
        i = j;
    }
    Ok(out)
}

pub fn caterpillar_list(store: &mut Store, chunks: &[NodeId], layer: u32) -> Result<Vec<NodeId>> {
    let runs: Vec<Run> = chunks.iter().map(|&node| Run { node, count: 1 }).collect();
    caterpillar_phase(store, &runs, layer)
}

pub fn diffbit_phase(
    store: &mut Store,
    chunks: &[NodeId],
    params: PhaseParams,
) -> Result<Vec<NodeId>> {
    if let Some(w) = chunks
        .windows(2)
        .find(|w| store.content(w[0]) == store.content(w[1]))
    {
        return Err(ChonkError::Invariant(format!(
            "equal neighbours {:?} reached the diffbit phase",
            w
        )));
    }
    let out: Vec<NodeId> = run_diffbit(store, chunks, params, Ends::CLOSED)?
        .into_iter()
        .map(|i| i.node)
        .collect();
    check_diffbit(store, &out, params.unit)?;
    Ok(out)
}

/// No two consecutive chunks both weigh less than half a unit.
pub fn check_diffbit(store: &Store, chunks: &[NodeId], unit: u64) -> Result<()> {
    let light = |id: NodeId| 2 * (store.weight(id) as u128) < unit as u128;
    match chunks.windows(2).find(|w| light(w[0]) && light(w[1])) {
        Some(w) => Err(ChonkError::Invariant(format!(
            "adjacent light chunks {} and {} at unit {unit}",
            store.weight(w[0]),
            store.weight(w[1])
        ))),
        None => Ok(()),
    }
}

/// Order-`orders` diffbit priorities for every boundary of a window, with
/// the certainty of each.
pub(crate) fn diffbit_priorities(
    store: &Store,
    chunks: &[NodeId],
    params: PhaseParams,
    open_right: bool,
) -> Result<Vec<(Option<u8>, bool)>> {
    let n = chunks.len();
    let hashed = params.hashed();
    let heckd: Vec<bool> = chunks
        .windows(2)
        .map(|w| is_heckin(store.weight(w[0]), store.weight(w[1]), params.unit))
        .collect();
    let mut first = Vec::with_capacity(n);
    for i in 0..n {
        first.push(if i + 1 < n && heckd[i] {
            augmented_diffbit(store, chunks[i], chunks[i + 1], hashed)?
        } else {
            fictitious(store.weight(chunks[i]) as u128)
        });
    }
    let top = higher_orders(&first, &heckd, params.orders, open_right)?;
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n.saturating_sub(1) {
        if heckd[j] {
            let (v, sure) = top[j];
            let p = u8::try_from(v).map_err(|_| {
                ChonkError::Config(format!(
                    "{} diffbit orders leave priority {v}",
                    params.orders
                ))
            })?;
            out.push((Some(p), sure));
        } else {
            out.push((None, true));
        }
    }
    Ok(out)
}

pub(crate) fn run_diffbit(
    store: &mut Store,
    chunks: &[NodeId],
    params: PhaseParams,
    ends: Ends,
) -> Result<Vec<Item>> {
    let n = chunks.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let annotated = diffbit_priorities(store, chunks, params, ends.open_right)?;
    let prios: Vec<Option<u8>> = annotated.iter().map(|a| a.0).collect();
    let uncertain: Vec<bool> = annotated.iter().map(|a| !a.1).collect();
    let taint = initial_taint(n, &uncertain, ends);
    merge_items(
        store,
        chunks,
        &prios,
        taint,
        params.unit,
        params.layer,
        Phase::Diffbit,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Distinct leaves of the given weights (bits hold a counter).
    fn leaves(s: &mut Store, weights: &[u32]) -> Vec<NodeId> {
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| s.leaf(i as u64 + 1, w).unwrap())
            .collect()
    }

    fn annotated(prios: &[u8]) -> Vec<BoundaryAnnotation> {
        prios
            .iter()
            .map(|&p| BoundaryAnnotation {
                priority: Some(p),
                heckd: true,
            })
            .collect()
    }

    fn groups(s: &Store, out: &[NodeId]) -> Vec<u64> {
        out.iter().map(|&n| s.weight(n)).collect()
    }

    #[test]
    fn cascade_merges_every_other_boundary() {
        // unit 100, chunks of 40: one merge is fine, a second is not
        let mut s = Store::default();
        let c = leaves(&mut s, &[40; 7]);
        let out = priority_merge(
            &mut s,
            &c,
            &annotated(&[0, 1, 2, 3, 4, 5]),
            100,
            1,
            Phase::Diffbit,
        )
        .unwrap();
        assert_eq!(groups(&s, &out), vec![80, 80, 80, 40]);

        let mut s = Store::default();
        let c = leaves(&mut s, &[40; 7]);
        let out = priority_merge(
            &mut s,
            &c,
            &annotated(&[3, 1, 2, 3, 4, 5]),
            100,
            1,
            Phase::Diffbit,
        )
        .unwrap();
        assert_eq!(groups(&s, &out), vec![40, 80, 80, 80]);
    }

    #[test]
    fn equal_priorities_merge_rightmost_only() {
        let mut s = Store::default();
        let c = leaves(&mut s, &[10; 3]);
        let out = priority_merge(&mut s, &c, &annotated(&[2, 2]), 100, 1, Phase::Diffbit).unwrap();
        assert_eq!(groups(&s, &out), vec![10, 20]);
        assert_eq!(
            s.provenance(out[1]),
            Provenance::new(1, PhaseTag::Diffbit(2))
        );
    }

    #[test]
    fn balancing_merges_the_local_minimum_right() {
        let mut s = Store::default();
        let c = leaves(&mut s, &[60, 10, 40]);
        let out = balancing_phase(&mut s, &c, PhaseParams::new(1, 100)).unwrap();
        assert_eq!(groups(&s, &out), vec![60, 50]);
        assert_eq!(s.provenance(out[1]).tag, PhaseTag::Balancing(0));

        // the merged chunk keeps the priority-1 boundary on its left and,
        // still being heckin' with its neighbour, merges again
        let c = leaves(&mut s, &[40, 10, 40]);
        let out = balancing_phase(&mut s, &c, PhaseParams::new(1, 100)).unwrap();
        assert_eq!(groups(&s, &out), vec![90]);
        assert_eq!(s.provenance(out[0]).tag, PhaseTag::Balancing(1));

        let single = leaves(&mut s, &[7]);
        assert_eq!(
            balancing_phase(&mut s, &single, PhaseParams::new(1, 100)).unwrap(),
            single
        );
    }

    #[test]
    fn balancing_breaks_weight_ties_by_content() {
        let mut s = Store::default();
        let a = s.leaf(0b01, 20).unwrap();
        let b = s.leaf(0b10, 20).unwrap();
        // a holds 1 at bit 0 where b holds 0, so b is smaller
        let out = balancing_phase(&mut s, &[a, b], PhaseParams::new(1, 60)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(s.provenance(out[0]).tag, PhaseTag::Balancing(1));
    }

    #[test]
    fn balancing_rejects_consecutive_kittens() {
        let mut s = Store::default();
        let c = leaves(&mut s, &[10, 10]);
        assert!(matches!(
            balancing_phase(&mut s, &c, PhaseParams::new(1, 100)),
            Err(ChonkError::Invariant(_))
        ));
    }

    #[test]
    fn caterpillar_examples() {
        let mut s = Store::default();
        let a = s.leaf(1, 8).unwrap();
        let b = s.leaf(2, 8).unwrap();
        let out = caterpillar_list(&mut s, &[a, a, a, b], 1).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(s.weight(out[0]), 24);
        assert_eq!(out[1], b);
        assert_eq!(
            caterpillar_list(&mut s, &[a, b, a], 1).unwrap(),
            vec![a, b, a]
        );

        let cat = out[0];
        let twice = caterpillar_list(&mut s, &[cat, cat], 2).unwrap();
        assert_eq!(twice.len(), 1);
        assert_eq!(s.weight(twice[0]), 48);
        assert_eq!(s.segment_weight(twice[0]), 8);
    }

    #[test]
    fn diffbit_examples() {
        let mut s = Store::default();
        let c = leaves(&mut s, &[30, 30]);
        let out = diffbit_phase(&mut s, &c, PhaseParams::new(1, 100)).unwrap();
        assert_eq!(groups(&s, &out), vec![60]);

        let c = leaves(&mut s, &[60, 60, 60]);
        assert_eq!(
            diffbit_phase(&mut s, &c, PhaseParams::new(1, 100)).unwrap(),
            c
        );
    }

    #[test]
    fn taint_spreads_through_merges_and_doubtful_blocks() {
        let mut s = Store::default();
        let c = leaves(&mut s, &[10, 10, 10]);
        // tainted + clean merge -> tainted
        let out = merge_items(
            &mut s,
            &c,
            &[Some(0), None],
            vec![true, false, false],
            100,
            1,
            Phase::Diffbit,
        )
        .unwrap();
        assert!(out[0].tainted && !out[1].tainted);

        // clean pair blocked by a clean item's pre-existing priority stays clean
        let out = merge_items(
            &mut s,
            &c,
            &[Some(0), Some(0)],
            vec![false, false, false],
            100,
            1,
            Phase::Diffbit,
        )
        .unwrap();
        assert!(out.iter().all(|i| !i.tainted));

        // the left pair merges first at priority 0 and grows to 60; the pair
        // at priority 1 is then too heavy because of a tainted chunk
        let c = leaves(&mut s, &[30, 30, 30, 10]);
        let out = merge_items(
            &mut s,
            &c,
            &[Some(0), Some(1), None],
            vec![true, false, false, false],
            80,
            1,
            Phase::Diffbit,
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out[0].tainted && out[1].tainted && !out[2].tainted);
    }

    proptest! {
        #[test]
        fn phase_postconditions_on_random_input(weights in prop::collection::vec(1u32..=64, 1..64), unit in 65u64..=128) {
            let mut s = Store::default();
            // lift every second kitten in a row out of kitten weight
            let mut weights = weights;
            for i in 1..weights.len() {
                if is_kitten(weights[i - 1] as u64, unit) && is_kitten(weights[i] as u64, unit) {
                    weights[i] = unit as u32 / 4 + 1;
                }
            }
            let raw = leaves(&mut s, &weights);
            let params = PhaseParams::new(1, unit);
            let balanced = balancing_phase(&mut s, &raw, params).unwrap();
            let c = caterpillar_list(&mut s, &balanced, 1).unwrap();
            let out = diffbit_phase(&mut s, &c, params).unwrap();
            prop_assert!(check_diffbit(&s, &out, unit).is_ok());
            for &n in &out {
                prop_assert!(s.weight(n) < unit || out.len() == c.len() && c.contains(&n));
            }
            let again = diffbit_phase(&mut s, &c, PhaseParams::new(1, unit)).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}
