//! Corpus generation and the measurements behind the CLI: weight
//! statistics, edit locality, phase census, deduplication, chunk listings.
//!
//! Everything here is deterministic for a given input and config. Work over
//! corpus items may run on several threads, each with its own store; results
//! are gathered in input order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ChonkError, Result};
use crate::pipeline::{build_layers, build_tree, proto_chunks, ChunkerConfig, Granularity, Until};
use crate::rebuild::edit_ops;
use crate::store::{level_of, ContentId, NodeId, NodeView, Phase, PhaseTag, Store};
use crate::yarn::Yarns;

/// A string of `len` characters with code points uniform in 0..=255.
pub fn random_string(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| char::from(rng.gen::<u8>())).collect()
}

pub fn random_corpus(count: usize, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_string(&mut rng, len)).collect()
}

/// Random bytes and a copy with `edits` single bytes changed at distinct
/// positions. The positions are returned sorted.
pub fn versioned_pair(size: usize, edits: usize, seed: u64) -> (Vec<u8>, Vec<u8>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0u8; size];
    rng.fill(&mut a[..]);
    let mut b = a.clone();
    let mut positions: Vec<usize> =
        rand::seq::index::sample(&mut rng, size, edits.min(size)).into_vec();
    positions.sort_unstable();
    for &p in &positions {
        b[p] ^= rng.gen_range(1..=255u8);
    }
    (a, b, positions)
}

/// Map `f` over `items` on up to `jobs` threads, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Mean, population standard deviation and range.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self {
            mean,
            sd: var.sqrt(),
            min,
            max,
            count: values.len(),
        }
    }
}

/// Weights of one layer's output for one input, in units of that layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerWeights {
    pub layer: u32,
    pub avg: f64,
    pub sigma: f64,
    /// Heaviest segment: the period for a caterpillar, the weight otherwise.
    pub max_segment: f64,
    /// Lightest pair of neighbours.
    pub min_pair: f64,
}

/// Build `input` and collect per-layer weights for every layer whose output
/// still has two or more chunks.
pub fn weight_profile(
    store: &mut Store,
    input: &[u8],
    config: &ChunkerConfig,
) -> Result<Vec<LayerWeights>> {
    let protos = proto_chunks(store, input, config.granularity)?;
    if protos.is_empty() {
        return Err(ChonkError::EmptyInput);
    }
    let mut lists: Vec<(u32, Vec<NodeId>)> = Vec::new();
    build_layers(store, protos, config, Until::Root, &mut |level, list| {
        if level % 3 == 0 && list.len() >= 2 {
            lists.push((level / 3, list.to_vec()));
        }
    })?;
    Ok(lists
        .into_iter()
        .map(|(layer, list)| {
            let unit = config.params(layer).unit as f64;
            let w: Vec<f64> = list
                .iter()
                .map(|&c| store.weight(c) as f64 / unit)
                .collect();
            let s = Summary::of(&w);
            let max_segment = list
                .iter()
                .map(|&c| store.segment_weight(c) as f64 / unit)
                .fold(0.0, f64::max);
            let min_pair = w
                .windows(2)
                .map(|p| p[0] + p[1])
                .fold(f64::INFINITY, f64::min);
            LayerWeights {
                layer,
                avg: s.mean,
                sigma: s.sd,
                max_segment,
                min_pair,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStatsRow {
    pub layer: u32,
    pub avg: Summary,
    pub sigma: Summary,
    pub max_segment: Summary,
    pub min_pair: Summary,
}

pub fn weight_stats(
    inputs: &[Vec<u8>],
    config: &ChunkerConfig,
    jobs: usize,
) -> Result<Vec<WeightStatsRow>> {
    if inputs.is_empty() {
        return Err(ChonkError::EmptyInput);
    }
    let profiles = par_map(inputs, jobs, |input| {
        weight_profile(&mut Store::default(), input, config)
    });
    let mut by_layer: BTreeMap<u32, Vec<LayerWeights>> = BTreeMap::new();
    for p in profiles {
        for lw in p? {
            by_layer.entry(lw.layer).or_default().push(lw);
        }
    }
    Ok(by_layer
        .into_iter()
        .map(|(layer, v)| {
            let col =
                |f: fn(&LayerWeights) -> f64| Summary::of(&v.iter().map(f).collect::<Vec<_>>());
            WeightStatsRow {
                layer,
                avg: col(|l| l.avg),
                sigma: col(|l| l.sigma),
                max_segment: col(|l| l.max_segment),
                min_pair: col(|l| l.min_pair),
            }
        })
        .collect())
}

pub fn weight_stats_tsv(rows: &[WeightStatsRow]) -> String {
    let mut out = String::from(
        "layer\tstrings\tavg_mean\tavg_sd\tavg_min\tavg_max\tsigma_mean\tsigma_sd\tmaxseg_mean\tmaxseg_sd\tmaxseg_min\tmaxseg_max\tminpair_mean\tminpair_sd\tminpair_min\tminpair_max\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.layer,
            r.avg.count,
            r.avg.mean,
            r.avg.sd,
            r.avg.min,
            r.avg.max,
            r.sigma.mean,
            r.sigma.sd,
            r.max_segment.mean,
            r.max_segment.sd,
            r.max_segment.min,
            r.max_segment.max,
            r.min_pair.mean,
            r.min_pair.sd,
            r.min_pair.min,
            r.min_pair.max
        );
    }
    out
}

/// End positions of the chunks in `list`, in proto-chunks, without the
/// final one.
fn boundaries(store: &Store, list: &[NodeId], proto_bits: u64) -> Vec<u64> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(list.len());
    for &c in &list[..list.len().saturating_sub(1)] {
        pos += store.weight(c) / proto_bits;
        out.push(pos);
    }
    out
}

/// How far the boundary sets of an old and a new chunking differ around an
/// edit that replaced `deleted` proto-chunks at `edit` by `inserted` ones.
///
/// Left of the edit the sets are compared as they are; right of it the new
/// positions are shifted by `deleted - inserted` so they line up with the
/// old ones. The extent on each side is the distance from the edit to the
/// furthest position where the sets disagree (0 if they agree).
pub fn boundary_extents(
    old: &[u64],
    new: &[u64],
    edit: u64,
    deleted: u64,
    inserted: u64,
) -> (u64, u64) {
    let left_old: HashSet<u64> = old.iter().copied().filter(|&b| b <= edit).collect();
    let left_new: HashSet<u64> = new.iter().copied().filter(|&b| b <= edit).collect();
    let left = left_old
        .symmetric_difference(&left_new)
        .map(|&b| edit - b)
        .max()
        .unwrap_or(0);

    let old_end = edit + deleted;
    let right_old: HashSet<u64> = old.iter().copied().filter(|&b| b >= old_end).collect();
    let right_new: HashSet<u64> = new
        .iter()
        .copied()
        .filter(|&b| b >= edit + inserted)
        .map(|b| b - inserted + deleted)
        .collect();
    let right = right_old
        .symmetric_difference(&right_new)
        .map(|&b| b - old_end)
        .max()
        .unwrap_or(0);
    (left, right)
}

/// Extents of one edit, per layer, in units of that layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EditExtent {
    pub layer: u32,
    pub left: f64,
    pub right: f64,
}

/// Delete one proto-chunk at each of nine evenly spaced positions and
/// measure, per layer, how far the chunk boundaries moved. The new trees
/// come from [`edit_ops`].
pub fn edit_locality(
    store: &mut Store,
    input: &[u8],
    config: &ChunkerConfig,
) -> Result<Vec<EditExtent>> {
    let bits = config.granularity.proto_bits() as u64;
    let root = build_tree(store, input, config)?;
    let n = store.weight(root) / bits;
    if n < 16 {
        return Ok(Vec::new());
    }
    let height = store.provenance(root).layer;
    let lists_of = |store: &Store, root: NodeId| -> Vec<Vec<NodeId>> {
        (1..=height)
            .map(|l| crate::pipeline::list_at_level(store, root, level_of(l, Phase::Diffbit)))
            .collect()
    };
    let old_lists = lists_of(store, root);
    let mut out = Vec::new();
    for i in 1..=9u64 {
        let edit = i * n / 10;
        let new_root = edit_ops(store, Some(root), edit, 1, &[], config)?
            .expect("input keeps 15 proto-chunks");
        let new_lists = lists_of(store, new_root);
        for (li, old) in old_lists.iter().enumerate() {
            if old.len() < 2 {
                continue;
            }
            let layer = li as u32 + 1;
            let new: &[NodeId] = new_lists.get(li).map_or(&[], |v| v.as_slice());
            let (l, r) = boundary_extents(
                &boundaries(store, old, bits),
                &boundaries(store, new, bits),
                edit,
                1,
                0,
            );
            let unit = config.params(layer).unit as f64;
            out.push(EditExtent {
                layer,
                left: (l * bits) as f64 / unit,
                right: (r * bits) as f64 / unit,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalityStatsRow {
    pub layer: u32,
    pub left: Summary,
    pub right: Summary,
}

pub fn locality_stats(
    inputs: &[Vec<u8>],
    config: &ChunkerConfig,
    jobs: usize,
) -> Result<Vec<LocalityStatsRow>> {
    let all = par_map(inputs, jobs, |input| {
        edit_locality(&mut Store::default(), input, config)
    });
    let mut by_layer: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for e in all {
        for x in e? {
            let slot = by_layer.entry(x.layer).or_default();
            slot.0.push(x.left);
            slot.1.push(x.right);
        }
    }
    Ok(by_layer
        .into_iter()
        .map(|(layer, (l, r))| LocalityStatsRow {
            layer,
            left: Summary::of(&l),
            right: Summary::of(&r),
        })
        .collect())
}

pub fn locality_stats_tsv(rows: &[LocalityStatsRow]) -> String {
    let mut out = String::from(
        "layer\tedits\tleft_mean\tleft_sd\tleft_max\tright_mean\tright_sd\tright_max\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.layer,
            r.left.count,
            r.left.mean,
            r.left.sd,
            r.left.max,
            r.right.mean,
            r.right.sd,
            r.right.max
        );
    }
    out
}

/// Census buckets: balancing 0 and 1, caterpillar, diffbit 0 to 5.
pub const CENSUS_BUCKETS: [&str; 9] = [
    "bal0", "bal1", "cat", "dif0", "dif1", "dif2", "dif3", "dif4", "dif5",
];

fn bucket(tag: PhaseTag) -> Option<usize> {
    match tag {
        PhaseTag::Proto => None,
        PhaseTag::Balancing(p) => Some(p as usize),
        PhaseTag::Caterpillar => Some(2),
        PhaseTag::Diffbit(p) => Some(3 + p as usize),
    }
}

/// Node counts per layer and bucket, counting a shared subtree once per
/// occurrence.
pub type CensusCounts = BTreeMap<u32, [u64; 9]>;

pub fn census_tree(store: &Store, root: NodeId) -> CensusCounts {
    // Occurrence counts flow from parents to children; a parent always sits
    // at a higher level than its children, so descending level order works.
    let mut reach = vec![root];
    let mut seen: HashSet<NodeId> = HashSet::from([root]);
    let mut i = 0;
    while i < reach.len() {
        for c in store.children(reach[i]) {
            if seen.insert(c) {
                reach.push(c);
            }
        }
        i += 1;
    }
    reach.sort_by_key(|&n| std::cmp::Reverse(store.provenance(n).level()));
    let mut mult: HashMap<NodeId, u64> = HashMap::from([(root, 1)]);
    let mut counts = CensusCounts::new();
    for &n in &reach {
        let m = mult[&n];
        let prov = store.provenance(n);
        if let Some(b) = bucket(prov.tag) {
            counts.entry(prov.layer).or_insert([0; 9])[b] += m;
        }
        match store.view(n) {
            NodeView::Leaf { .. } => {}
            NodeView::Merge { left, right } => {
                *mult.entry(left).or_insert(0) += m;
                *mult.entry(right).or_insert(0) += m;
            }
            NodeView::Caterpillar(runs) => {
                for r in runs {
                    *mult.entry(r.node).or_insert(0) += m * r.count;
                }
            }
        }
    }
    counts
}

/// One census row: `None` for the row over all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct CensusRow {
    pub layer: Option<u32>,
    pub percent: [f64; 9],
    pub nodes: u64,
}

fn percentages(c: &[u64; 9]) -> [f64; 9] {
    let total: u64 = c.iter().sum();
    c.map(|v| {
        if total == 0 {
            0.0
        } else {
            100.0 * v as f64 / total as f64
        }
    })
}

pub fn census(inputs: &[Vec<u8>], config: &ChunkerConfig, jobs: usize) -> Result<Vec<CensusRow>> {
    let per = par_map(inputs, jobs, |input| -> Result<CensusCounts> {
        let mut store = Store::default();
        let root = build_tree(&mut store, input, config)?;
        Ok(census_tree(&store, root))
    });
    let mut total = CensusCounts::new();
    for c in per {
        for (layer, v) in c? {
            let slot = total.entry(layer).or_insert([0; 9]);
            for (a, b) in slot.iter_mut().zip(v) {
                *a += b;
            }
        }
    }
    let mut all = [0u64; 9];
    for v in total.values() {
        for (a, b) in all.iter_mut().zip(v) {
            *a += b;
        }
    }
    let mut rows = Vec::new();
    if all.iter().sum::<u64>() > 0 {
        rows.push(CensusRow {
            layer: None,
            percent: percentages(&all),
            nodes: all.iter().sum(),
        });
    }
    rows.extend(total.iter().map(|(&l, v)| CensusRow {
        layer: Some(l),
        percent: percentages(v),
        nodes: v.iter().sum(),
    }));
    Ok(rows)
}

pub fn census_tsv(rows: &[CensusRow]) -> String {
    let mut out = format!("layer\tnodes\t{}\n", CENSUS_BUCKETS.join("\t"));
    for r in rows {
        let layer = r.layer.map_or("All".to_string(), |l| l.to_string());
        let cells: Vec<String> = r.percent.iter().map(|p| format!("{p:.4}")).collect();
        let _ = writeln!(out, "{layer}\t{}\t{}", r.nodes, cells.join("\t"));
    }
    out
}

/// Chunks of `input` at the last scheduled layer, or the root for an
/// open-ended schedule.
pub fn final_chunks(
    store: &mut Store,
    input: &[u8],
    config: &ChunkerConfig,
) -> Result<Vec<NodeId>> {
    let protos = proto_chunks(store, input, config.granularity)?;
    if protos.is_empty() {
        return Err(ChonkError::EmptyInput);
    }
    let until = config
        .schedule
        .final_layer()
        .map_or(Until::Root, Until::Layer);
    build_layers(store, protos, config, until, &mut |_, _| {})
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChunkKind {
    Plain,
    /// Run of equal segments; the count is the number of repetitions.
    Caterpillar(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkRecord {
    /// Offset and length in proto-chunks (bytes or characters).
    pub offset: u64,
    pub length: u64,
    pub weight: u64,
    pub kind: ChunkKind,
    pub hash: u32,
}

pub fn chunk_records(
    store: &mut Store,
    input: &[u8],
    config: &ChunkerConfig,
) -> Result<Vec<ChunkRecord>> {
    let bits = config.granularity.proto_bits() as u64;
    let chunks = final_chunks(store, input, config)?;
    let mut offset = 0;
    Ok(chunks
        .into_iter()
        .map(|c| {
            let weight = store.weight(c);
            let kind = match store.view(c) {
                NodeView::Caterpillar(runs) if store.provenance(c).tag == PhaseTag::Caterpillar => {
                    ChunkKind::Caterpillar(runs.iter().map(|r| r.count).sum())
                }
                _ => ChunkKind::Plain,
            };
            let rec = ChunkRecord {
                offset,
                length: weight / bits,
                weight,
                kind,
                hash: store.hash(c),
            };
            offset += weight / bits;
            rec
        })
        .collect())
}

pub fn chunk_records_tsv(name: &str, records: &[ChunkRecord], out: &mut String) {
    for r in records {
        let kind = match r.kind {
            ChunkKind::Plain => "plain".to_string(),
            ChunkKind::Caterpillar(n) => format!("caterpillar×{n}"),
        };
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{kind}\t{:08x}",
            r.offset, r.length, r.weight, r.hash
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DedupReport {
    pub total_bytes: u64,
    pub unique_bytes: u64,
    pub ratio: f64,
    pub chunks: u64,
    pub avg_chunk: f64,
    pub sd_chunk: f64,
}

/// Accumulates final-layer chunks of many files and counts each distinct
/// content once. A caterpillar is stored as its segments, so it adds each
/// distinct segment once.
#[derive(Debug)]
pub struct Deduper {
    store: Store,
    config: ChunkerConfig,
    seen: HashSet<ContentId>,
    total_bits: u64,
    unique_bits: u64,
    sizes: Vec<f64>,
}

impl Deduper {
    pub fn new(config: ChunkerConfig) -> Self {
        Self {
            store: Store::default(),
            config,
            seen: HashSet::new(),
            total_bits: 0,
            unique_bits: 0,
            sizes: Vec::new(),
        }
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn config(&self) -> &ChunkerConfig {
        &self.config
    }

    pub fn add_file(&mut self, data: &[u8]) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let chunks = final_chunks(&mut self.store, data, &self.config)?;
        self.add_chunks(&chunks);
        Ok(())
    }

    /// Add chunks that are already in this deduper's store.
    pub fn add_chunks(&mut self, chunks: &[NodeId]) {
        for &c in chunks {
            let w = self.store.weight(c);
            self.total_bits += w;
            self.sizes.push(w as f64 / 8.0);
            let pieces: Vec<NodeId> = match self.store.view(c) {
                NodeView::Caterpillar(runs)
                    if self.store.provenance(c).tag == PhaseTag::Caterpillar =>
                {
                    runs.iter().map(|r| r.node).collect()
                }
                _ => vec![c],
            };
            for p in pieces {
                if self.seen.insert(self.store.content(p)) {
                    self.unique_bits += self.store.weight(p);
                }
            }
        }
    }

    pub fn report(&self) -> DedupReport {
        let s = Summary::of(&self.sizes);
        let (total, unique) = (self.total_bits / 8, self.unique_bits / 8);
        DedupReport {
            total_bytes: total,
            unique_bytes: unique,
            ratio: if unique == 0 {
                1.0
            } else {
                total as f64 / unique as f64
            },
            chunks: self.sizes.len() as u64,
            avg_chunk: s.mean,
            sd_chunk: s.sd,
        }
    }
}

pub fn dedup_tsv(r: &DedupReport) -> String {
    format!(
        "total_bytes\tunique_bytes\tratio\tchunks\tavg_chunk\tsd_chunk\n{}\t{}\t{:.4}\t{}\t{:.4}\t{:.4}\n",
        r.total_bytes, r.unique_bytes, r.ratio, r.chunks, r.avg_chunk, r.sd_chunk
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct FibReport {
    pub n: u32,
    pub length: u64,
    pub palindrome: bool,
    pub nodes: usize,
    pub reverse_misses: u64,
    pub build_ms: f64,
    pub check_ms: f64,
}

/// Build Fibonacci word `n` by concatenation and check that dropping its
/// last two characters leaves a palindrome, by reversal and handle equality.
pub fn fibonacci_demo(n: u32) -> Result<FibReport> {
    let t0 = Instant::now();
    fibonacci_timed(n, || t0.elapsed().as_secs_f64() * 1e3)
}

/// [`fibonacci_demo`] with a caller-supplied millisecond clock, for targets
/// without `Instant` (wasm32).
pub fn fibonacci_timed(n: u32, mut clock_ms: impl FnMut() -> f64) -> Result<FibReport> {
    let mut y = Yarns::new();
    let t0 = clock_ms();
    let w = y.fibonacci(n)?;
    let t1 = clock_ms();
    let head = y.slice(w, 0, w.len().saturating_sub(2))?;
    let palindrome = y.reverse(head)? == head;
    let t2 = clock_ms();
    Ok(FibReport {
        n,
        length: w.len(),
        palindrome,
        nodes: y.store().stats().nodes,
        reverse_misses: y.reverse_misses(),
        build_ms: t1 - t0,
        check_ms: t2 - t1,
    })
}

pub fn fib_tsv(r: &FibReport) -> String {
    format!(
        "n\tlength\tpalindrome\tnodes\treverse_misses\tbuild_ms\tcheck_ms\n{}\t{}\t{}\t{}\t{}\t{:.1}\t{:.1}\n",
        r.n, r.length, r.palindrome, r.nodes, r.reverse_misses, r.build_ms, r.check_ms
    )
}

pub fn granularity_name(g: Granularity) -> &'static str {
    match g {
        Granularity::Byte8 => "byte8",
        Granularity::Char32 => "char32",
    }
}
