//! Layer schedules and full chonker-tree construction.

use std::hash::{Hash, Hasher};

use crate::bits::{DEFAULT_BASE, DEFAULT_MODULUS};
use crate::error::{ChonkError, Result};
use crate::phases::{balancing_phase, caterpillar_list, diffbit_phase, PhaseParams};
use crate::store::{level_of, NodeId, NodeView, Phase, Store};

/// How input bytes become proto-chunks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Granularity {
    /// One 8-bit proto-chunk per byte.
    Byte8,
    /// One 32-bit proto-chunk per Unicode scalar value of UTF-8 input.
    Char32,
}

impl Granularity {
    pub fn proto_bits(self) -> u32 {
        match self {
            Granularity::Byte8 => 8,
            Granularity::Char32 => 32,
        }
    }

    /// `1 + proto_bits * 2^n`.
    pub fn formula_unit(self, n: u32) -> u64 {
        (self.proto_bits() as u64)
            .checked_shl(n)
            .filter(|v| v >> n == self.proto_bits() as u64)
            .map_or(u64::MAX, |v| v.saturating_add(1))
    }
}

/// How units continue past the listed layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Beyond {
    /// Keep doubling the last listed unit.
    Double,
    /// Keep following `1 + proto_bits * 2^n`.
    Formula(Granularity),
}

/// Absolute units per layer, in bits. Layer 1 is the first entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LayerSchedule {
    units: Vec<u64>,
    beyond: Beyond,
}

impl LayerSchedule {
    pub fn new(units: Vec<u64>, beyond: Beyond) -> Result<Self> {
        let Some(&first) = units.first() else {
            return Err(ChonkError::Config(
                "schedule needs at least one unit".into(),
            ));
        };
        if first < 2 {
            return Err(ChonkError::Config(format!("unit {first} below 2 bits")));
        }
        for w in units.windows(2) {
            if !(w[0] < w[1] && w[1] as u128 <= 2 * w[0] as u128) {
                return Err(ChonkError::Config(format!(
                    "unit {} does not follow {} within (1x, 2x]",
                    w[1], w[0]
                )));
            }
        }
        if let Beyond::Formula(g) = beyond {
            let n = units.len() as u32;
            let (last, next) = (units[n as usize - 1], g.formula_unit(n + 1));
            if !(last < next && next as u128 <= 2 * last as u128) {
                return Err(ChonkError::Config(format!(
                    "formula continuation {next} does not follow {last}"
                )));
            }
        }
        Ok(Self { units, beyond })
    }

    /// `1 + proto_bits * 2^n` for every layer n, without end.
    pub fn formula(g: Granularity) -> Self {
        Self {
            units: vec![g.formula_unit(1)],
            beyond: Beyond::Formula(g),
        }
    }

    /// Formula units up to `target`, then the final unit clamped to `target`.
    /// Any step smaller than a doubling goes to the front of the schedule.
    pub fn clamped(g: Granularity, target: u64) -> Result<Self> {
        let first = g.formula_unit(1);
        if target < first {
            return Err(ChonkError::OutOfRange(format!(
                "target unit {target} below the first unit {first}"
            )));
        }
        let mut units = vec![target];
        let mut v = target;
        while v.div_ceil(2) > first {
            v = v.div_ceil(2);
            units.push(v);
        }
        if v != first {
            units.push(first);
        }
        units.reverse();
        Self::new(units, Beyond::Double)
    }

    /// Unit of `layer` (1-based).
    pub fn unit(&self, layer: u32) -> u64 {
        assert!(layer >= 1, "layers start at 1");
        let i = layer as usize - 1;
        if let Some(&u) = self.units.get(i) {
            return u;
        }
        match self.beyond {
            Beyond::Double => {
                let extra = (i + 1 - self.units.len()) as u32;
                let last = *self.units.last().unwrap();
                last.checked_shl(extra)
                    .filter(|v| v >> extra == last)
                    .unwrap_or(u64::MAX)
            }
            Beyond::Formula(g) => g.formula_unit(layer),
        }
    }

    /// Listed units (layers past these follow the continuation rule).
    pub fn units(&self) -> &[u64] {
        &self.units
    }

    pub fn beyond(&self) -> Beyond {
        self.beyond
    }

    /// Last listed layer of a schedule that ends at a target unit; `None`
    /// for the open-ended formula.
    pub fn final_layer(&self) -> Option<u32> {
        match self.beyond {
            Beyond::Double => Some(self.units.len() as u32),
            Beyond::Formula(_) => None,
        }
    }
}

/// Layer units for a target: [`LayerSchedule::clamped`].
pub fn default_schedule(g: Granularity, target_unit: u64) -> Result<LayerSchedule> {
    LayerSchedule::clamped(g, target_unit)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChunkerConfig {
    pub granularity: Granularity,
    pub schedule: LayerSchedule,
    /// First layer whose augmented contents carry the hash field.
    pub hash_start_layer: u32,
    pub diffbit_orders: u32,
    pub hash_base: u64,
    pub hash_modulus: u64,
}

impl ChunkerConfig {
    pub fn new(granularity: Granularity, schedule: LayerSchedule) -> Result<Self> {
        let proto = granularity.proto_bits() as u64;
        // 1 + 2*proto keeps the formula's first unit (65 for 32-bit protos)
        if schedule.units()[0] > 2 * proto + 1 {
            return Err(ChonkError::Config(format!(
                "first unit {} exceeds twice the proto-chunk weight {proto} plus one",
                schedule.units()[0]
            )));
        }
        Ok(Self {
            granularity,
            schedule,
            hash_start_layer: 3,
            diffbit_orders: 5,
            hash_base: DEFAULT_BASE,
            hash_modulus: DEFAULT_MODULUS,
        })
    }

    /// Characters, open-ended formula schedule (the experiment setting).
    pub fn char32() -> Self {
        Self::new(
            Granularity::Char32,
            LayerSchedule::formula(Granularity::Char32),
        )
        .unwrap()
    }

    /// Bytes, clamped to a 12 KiB final unit, doubling above it.
    pub fn byte8() -> Self {
        Self::new(
            Granularity::Byte8,
            LayerSchedule::clamped(Granularity::Byte8, 12 * 1024 * 8).unwrap(),
        )
        .unwrap()
    }

    pub fn with_hash_start_layer(mut self, layer: u32) -> Self {
        self.hash_start_layer = layer;
        self
    }

    pub fn with_orders(mut self, orders: u32) -> Result<Self> {
        if orders < 4 {
            return Err(ChonkError::Config(format!(
                "{orders} diffbit orders cannot bound priorities"
            )));
        }
        self.diffbit_orders = orders;
        Ok(self)
    }

    pub fn params(&self, layer: u32) -> PhaseParams {
        PhaseParams {
            layer,
            unit: self.schedule.unit(layer),
            hash_start_layer: self.hash_start_layer,
            orders: self.diffbit_orders,
        }
    }

    /// Stable fingerprint, used to key per-config caches.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the Debug form: stable across runs and platforms.
        let text = format!("{self:?}");
        let mut h = FnvHasher(0xcbf2_9ce4_8422_2325);
        text.hash(&mut h);
        h.finish()
    }

    pub(crate) fn check_store(&self, store: &Store) -> Result<()> {
        let r = store.ring();
        if r.base() != self.hash_base || r.modulus() != self.hash_modulus {
            return Err(ChonkError::Config(
                "store hash ring differs from the configuration".into(),
            ));
        }
        Ok(())
    }
}

struct FnvHasher(u64);

impl Hasher for FnvHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }
}

/// Proto-chunk leaf for one byte.
pub fn byte_leaf(store: &mut Store, b: u8) -> Result<NodeId> {
    // position 0 is the byte's most significant bit
    store.leaf(b.reverse_bits() as u64, 8)
}

/// Proto-chunk leaf for one character.
pub fn char_leaf(store: &mut Store, c: char) -> Result<NodeId> {
    store.leaf(c as u64, 32)
}

pub fn proto_chunks(store: &mut Store, input: &[u8], g: Granularity) -> Result<Vec<NodeId>> {
    match g {
        Granularity::Byte8 => input.iter().map(|&b| byte_leaf(store, b)).collect(),
        Granularity::Char32 => {
            let text = std::str::from_utf8(input)
                .map_err(|e| ChonkError::InvalidEncoding(e.valid_up_to()))?;
            text.chars().map(|c| char_leaf(store, c)).collect()
        }
    }
}

/// The bytes a proto-chunk leaf stands for.
pub fn leaf_bytes(store: &Store, leaf: NodeId, g: Granularity, out: &mut Vec<u8>) {
    if let NodeView::Leaf { bits, .. } = store.view(leaf) {
        match g {
            Granularity::Byte8 => out.push((bits as u8).reverse_bits()),
            Granularity::Char32 => {
                let c = char::from_u32(bits as u32).unwrap_or(char::REPLACEMENT_CHARACTER);
                out.extend_from_slice(c.encode_utf8(&mut [0; 4]).as_bytes());
            }
        }
    }
}

/// Decode the input a tree was built from.
pub fn tree_bytes(store: &Store, root: NodeId, g: Granularity) -> Vec<u8> {
    let mut out = Vec::new();
    for leaf in store.leaves(root) {
        leaf_bytes(store, leaf, g, &mut out);
    }
    out
}

/// When to stop building.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Until {
    /// Until a single chunk is left.
    Root,
    /// After this layer, or earlier if a single chunk is left.
    Layer(u32),
}

/// Run the layers over `chunks`. `observe(level, list)` sees every phase's
/// output list.
pub fn build_layers(
    store: &mut Store,
    chunks: Vec<NodeId>,
    config: &ChunkerConfig,
    until: Until,
    observe: &mut dyn FnMut(u32, &[NodeId]),
) -> Result<Vec<NodeId>> {
    config.check_store(store)?;
    let mut chunks = chunks;
    let mut layer = 0;
    while chunks.len() > 1 {
        if let Until::Layer(last) = until {
            if layer >= last {
                break;
            }
        }
        layer += 1;
        let params = config.params(layer);
        chunks = balancing_phase(store, &chunks, params)?;
        observe(level_of(layer, Phase::Balancing), &chunks);
        chunks = caterpillar_list(store, &chunks, layer)?;
        observe(level_of(layer, Phase::Caterpillar), &chunks);
        chunks = diffbit_phase(store, &chunks, params)?;
        observe(level_of(layer, Phase::Diffbit), &chunks);
    }
    Ok(chunks)
}

pub fn build_from_protos(
    store: &mut Store,
    protos: Vec<NodeId>,
    config: &ChunkerConfig,
) -> Result<NodeId> {
    if protos.is_empty() {
        return Err(ChonkError::EmptyInput);
    }
    Ok(build_layers(store, protos, config, Until::Root, &mut |_, _| {})?[0])
}

/// Build the chonker tree of `input` and return its root.
pub fn build_tree(store: &mut Store, input: &[u8], config: &ChunkerConfig) -> Result<NodeId> {
    let protos = proto_chunks(store, input, config.granularity)?;
    build_from_protos(store, protos, config)
}

/// The list at a global level (0 = proto-chunks), read off the tree.
pub fn list_at_level(store: &Store, root: NodeId, level: u32) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if store.provenance(id).level() <= level {
            out.push(id);
            continue;
        }
        match store.view(id) {
            NodeView::Leaf { .. } => out.push(id),
            NodeView::Merge { left, right } => {
                stack.push(right);
                stack.push(left);
            }
            NodeView::Caterpillar(runs) => {
                for r in runs.iter().rev() {
                    for _ in 0..r.count {
                        stack.push(r.node);
                    }
                }
            }
        }
    }
    out
}

/// Output list of `phase` at `layer`; layer 0 gives the proto-chunks.
pub fn chunks_at_layer(
    store: &Store,
    root: NodeId,
    layer: u32,
    phase: Phase,
) -> Result<Vec<NodeId>> {
    let height = store.provenance(root).layer;
    if layer > height {
        return Err(ChonkError::OutOfRange(format!(
            "layer {layer} above tree height {height}"
        )));
    }
    let level = if layer == 0 {
        0
    } else {
        level_of(layer, phase)
    };
    Ok(list_at_level(store, root, level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedules() {
        let f = LayerSchedule::formula(Granularity::Char32);
        assert_eq!([f.unit(1), f.unit(2), f.unit(3)], [65, 129, 257]);
        assert_eq!(f.unit(13), 1 + 32 * 8192);

        let c = LayerSchedule::clamped(Granularity::Char32, 257).unwrap();
        assert_eq!(c.units(), &[65, 129, 257]);
        assert_eq!(c.unit(4), 514);

        assert_eq!(
            LayerSchedule::clamped(Granularity::Char32, 65)
                .unwrap()
                .units(),
            &[65]
        );
        assert!(matches!(
            LayerSchedule::clamped(Granularity::Char32, 64),
            Err(ChonkError::OutOfRange(_))
        ));

        let b = LayerSchedule::clamped(Granularity::Byte8, 98_304).unwrap();
        let mut expect = vec![17];
        expect.extend((0..13).map(|k| 24u64 << k));
        assert_eq!(b.units(), &expect[..]);
        assert_eq!(*b.units().last().unwrap(), 98_304);
    }

    #[test]
    fn schedule_validation() {
        assert!(LayerSchedule::new(vec![10, 21], Beyond::Double).is_err());
        assert!(LayerSchedule::new(vec![10, 10], Beyond::Double).is_err());
        assert!(LayerSchedule::new(vec![1], Beyond::Double).is_err());
        assert!(LayerSchedule::new(vec![10, 20], Beyond::Double).is_ok());
        assert!(ChunkerConfig::new(
            Granularity::Byte8,
            LayerSchedule::new(vec![18], Beyond::Double).unwrap()
        )
        .is_err());
    }

    #[test]
    fn single_byte_is_its_own_root() {
        let mut s = Store::default();
        let root = build_tree(&mut s, b"x", &ChunkerConfig::byte8()).unwrap();
        assert_eq!(s.provenance(root).level(), 0);
        assert_eq!(tree_bytes(&s, root, Granularity::Byte8), b"x");
        assert_eq!(
            build_tree(&mut s, b"", &ChunkerConfig::byte8()),
            Err(ChonkError::EmptyInput)
        );
        assert_eq!(
            build_tree(&mut s, &[0xff], &ChunkerConfig::char32()),
            Err(ChonkError::InvalidEncoding(0))
        );
    }

    #[test]
    fn lists_match_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let text: String = (0..3000)
            .map(|_| char::from(rng.gen_range(0u8..=255)))
            .collect();
        let config = ChunkerConfig::char32();
        let mut s = Store::default();
        let protos = proto_chunks(&mut s, text.as_bytes(), config.granularity).unwrap();
        let mut seen = Vec::new();
        let root = build_layers(
            &mut s,
            protos.clone(),
            &config,
            Until::Root,
            &mut |lvl, l| seen.push((lvl, l.to_vec())),
        )
        .unwrap()[0];
        assert_eq!(root, build_tree(&mut s, text.as_bytes(), &config).unwrap());
        assert_eq!(
            chunks_at_layer(&s, root, 0, Phase::Balancing).unwrap(),
            protos
        );
        for (lvl, list) in &seen {
            assert_eq!(&list_at_level(&s, root, *lvl), list);
        }
        let top = s.provenance(root).layer;
        assert_eq!(
            chunks_at_layer(&s, root, top, Phase::Diffbit).unwrap(),
            vec![root]
        );
        assert!(chunks_at_layer(&s, root, top + 1, Phase::Balancing).is_err());
        assert_eq!(tree_bytes(&s, root, config.granularity), text.as_bytes());
    }
}
