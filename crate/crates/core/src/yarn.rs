//! History-independent strings on top of chonker trees.
//!
//! A [`Yarn`] is a root handle plus a length. Because a tree is a function of
//! its content, two yarns with the same characters have the same root, no
//! matter how they were assembled. Equality is a handle comparison.

use std::cmp::Ordering;

use crate::error::{ChonkError, Result};
use crate::pipeline::{build_tree, proto_chunks, tree_bytes, ChunkerConfig, Granularity};
use crate::rebuild::{splice, Cut};
use crate::store::{NodeId, NodeView, Store};

/// A string handle. Only meaningful together with the [`Yarns`] it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Yarn {
    root: Option<NodeId>,
    len: u64,
}

impl Yarn {
    /// The empty string. It has no tree, since there is no empty chunk.
    pub const EMPTY: Yarn = Yarn { root: None, len: 0 };

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    /// Length in characters.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Owns the node store and config that yarns live in.
///
/// Operations that may create nodes take `&mut self`; reads take `&self`, so
/// `RwLock<Yarns>` gives shared concurrent reads.
#[derive(Debug)]
pub struct Yarns {
    store: Store,
    config: ChunkerConfig,
    reverse_tag: u64,
    reverse_misses: u64,
}

const BITS: u64 = 32;

impl Default for Yarns {
    fn default() -> Self {
        Self::new()
    }
}

impl Yarns {
    pub fn new() -> Self {
        Self::with_config(ChunkerConfig::char32()).expect("char32 config")
    }

    /// Errors unless `config` chunks 32-bit characters.
    pub fn with_config(config: ChunkerConfig) -> Result<Self> {
        if config.granularity != Granularity::Char32 {
            return Err(ChonkError::Config("yarns need char32 granularity".into()));
        }
        let reverse_tag = config.fingerprint() ^ 0x7265_7665_7273_6500;
        Ok(Self {
            store: Store::default(),
            config,
            reverse_tag,
            reverse_misses: 0,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &ChunkerConfig {
        &self.config
    }

    fn handle(&self, root: Option<NodeId>) -> Yarn {
        Yarn {
            root,
            len: root.map_or(0, |r| self.store.weight(r) / BITS),
        }
    }

    pub fn from_text(&mut self, text: &str) -> Result<Yarn> {
        let root = build_tree(&mut self.store, text.as_bytes(), &self.config)?;
        Ok(self.handle(Some(root)))
    }

    pub fn to_string(&self, y: Yarn) -> String {
        match y.root {
            None => String::new(),
            Some(r) => String::from_utf8(tree_bytes(&self.store, r, Granularity::Char32))
                .expect("leaves hold scalar values"),
        }
    }

    pub fn concat(&mut self, a: Yarn, b: Yarn) -> Result<Yarn> {
        match (a.root, b.root) {
            (None, _) => Ok(b),
            (_, None) => Ok(a),
            (Some(x), Some(y)) => {
                let prefix = Cut::whole_prefix(&self.store, x);
                let root = splice(
                    &mut self.store,
                    prefix,
                    &[],
                    Cut::whole_suffix(y),
                    &self.config,
                )?;
                Ok(self.handle(root))
            }
        }
    }

    fn check_range(y: Yarn, start: u64, end: u64) -> Result<()> {
        if start > end || end > y.len {
            return Err(ChonkError::OutOfRange(format!(
                "range {start}..{end} in yarn of length {}",
                y.len
            )));
        }
        Ok(())
    }

    /// Characters `start..end` of `y` replaced by `text`.
    pub fn replace(&mut self, y: Yarn, start: u64, end: u64, text: &str) -> Result<Yarn> {
        Self::check_range(y, start, end)?;
        let middle = proto_chunks(&mut self.store, text.as_bytes(), Granularity::Char32)?;
        let Some(root) = y.root else {
            return if middle.is_empty() {
                Ok(Yarn::EMPTY)
            } else {
                self.from_text(text)
            };
        };
        if start == end && middle.is_empty() {
            return Ok(y);
        }
        let root = splice(
            &mut self.store,
            Cut::new(root, start * BITS),
            &middle,
            Cut::new(root, end * BITS),
            &self.config,
        )?;
        Ok(self.handle(root))
    }

    pub fn insert(&mut self, y: Yarn, pos: u64, text: &str) -> Result<Yarn> {
        self.replace(y, pos, pos, text)
    }

    pub fn delete(&mut self, y: Yarn, start: u64, end: u64) -> Result<Yarn> {
        self.replace(y, start, end, "")
    }

    /// Characters `start..end`, cut off on the left and then on the right.
    pub fn slice(&mut self, y: Yarn, start: u64, end: u64) -> Result<Yarn> {
        Self::check_range(y, start, end)?;
        let Some(root) = y.root else {
            return Ok(Yarn::EMPTY);
        };
        if start == end {
            return Ok(Yarn::EMPTY);
        }
        if start == 0 && end == y.len {
            return Ok(y);
        }
        let tail = splice(
            &mut self.store,
            Cut::EMPTY,
            &[],
            Cut::new(root, start * BITS),
            &self.config,
        )?
        .expect("non-empty tail");
        let root = splice(
            &mut self.store,
            Cut::new(tail, (end - start) * BITS),
            &[],
            Cut::EMPTY,
            &self.config,
        )?;
        Ok(self.handle(root))
    }

    pub fn equal(&self, a: Yarn, b: Yarn) -> bool {
        a == b
    }

    /// Lexicographic order by code point, with the index of the first
    /// differing character. The index is absent when one is a prefix of the
    /// other (the shorter sorts first) or when they are equal.
    pub fn compare(&self, a: Yarn, b: Yarn) -> (Ordering, Option<u64>) {
        let (x, y) = match (a.root, b.root) {
            (Some(x), Some(y)) => (x, y),
            _ => return (a.len.cmp(&b.len), None),
        };
        let Some(diff) = self.store.first_difference(x, y) else {
            return (Ordering::Equal, None);
        };
        let index = diff.index / BITS;
        if index >= a.len.min(b.len) {
            return (a.len.cmp(&b.len), None);
        }
        (
            self.char_code(x, index).cmp(&self.char_code(y, index)),
            Some(index),
        )
    }

    fn char_code(&self, root: NodeId, index: u64) -> u32 {
        let mut code = 0u32;
        for i in 0..BITS {
            if self.store.bit_at(root, index * BITS + i) {
                code |= 1 << i;
            }
        }
        code
    }

    pub fn char_at(&self, y: Yarn, index: u64) -> Option<char> {
        let root = y.root.filter(|_| index < y.len)?;
        char::from_u32(self.char_code(root, index))
    }

    /// Number of nodes whose reverse had to be computed rather than read
    /// from the cache.
    pub fn reverse_misses(&self) -> u64 {
        self.reverse_misses
    }

    /// Character-level reversal. Results are cached per content, so a node
    /// shared many times is reversed once.
    pub fn reverse(&mut self, y: Yarn) -> Result<Yarn> {
        let Some(root) = y.root else {
            return Ok(Yarn::EMPTY);
        };
        let r = self.reverse_node(root)?;
        Ok(self.handle(Some(r)))
    }

    fn reverse_node(&mut self, node: NodeId) -> Result<NodeId> {
        let content = self.store.content(node);
        if let Some(hit) = self.store.monoid_get(content, self.reverse_tag) {
            return Ok(hit);
        }
        self.reverse_misses += 1;
        let out = match self.store.view(node) {
            NodeView::Leaf { .. } => node,
            NodeView::Merge { left, right } => {
                let (l, r) = (self.reverse_node(left)?, self.reverse_node(right)?);
                self.join(r, l)?
            }
            NodeView::Caterpillar(runs) => {
                let runs = runs.to_vec();
                let mut acc: Option<NodeId> = None;
                for run in runs.iter().rev() {
                    let seg = self.reverse_node(run.node)?;
                    let rep = self.power(seg, run.count)?;
                    acc = Some(match acc {
                        None => rep,
                        Some(a) => self.join(a, rep)?,
                    });
                }
                acc.expect("caterpillars have runs")
            }
        };
        self.store.monoid_set(content, self.reverse_tag, out);
        Ok(out)
    }

    fn join(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let prefix = Cut::whole_prefix(&self.store, a);
        Ok(splice(
            &mut self.store,
            prefix,
            &[],
            Cut::whole_suffix(b),
            &self.config,
        )?
        .expect("non-empty"))
    }

    /// `node` repeated `count` times, by doubling.
    fn power(&mut self, node: NodeId, mut count: u64) -> Result<NodeId> {
        let mut base = node;
        let mut acc: Option<NodeId> = None;
        loop {
            if count & 1 == 1 {
                acc = Some(match acc {
                    None => base,
                    Some(a) => self.join(a, base)?,
                });
            }
            count >>= 1;
            if count == 0 {
                return Ok(acc.expect("count > 0"));
            }
            base = self.join(base, base)?;
        }
    }

    /// The Fibonacci word: w1 = "1", w2 = "0", wn = w(n-1) w(n-2).
    pub fn fibonacci(&mut self, n: u32) -> Result<Yarn> {
        if n == 0 || n > 50 {
            return Err(ChonkError::OutOfRange(format!(
                "fibonacci index {n} outside 1..=50"
            )));
        }
        let mut a = self.from_text("1")?;
        if n == 1 {
            return Ok(a);
        }
        let mut b = self.from_text("0")?;
        for _ in 2..n {
            let next = self.concat(b, a)?;
            a = std::mem::replace(&mut b, next);
        }
        Ok(b)
    }
}

/// Naive Fibonacci word, for cross-checks.
pub fn fibonacci_string(n: u32) -> String {
    let (mut a, mut b) = (String::from("1"), String::from("0"));
    if n == 1 {
        return a;
    }
    for _ in 2..n {
        let next = format!("{b}{a}");
        a = std::mem::replace(&mut b, next);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basics() {
        let mut y = Yarns::new();
        let a = y.from_text("a").unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(y.store().weight(a.root().unwrap()), 32);
        assert_eq!(y.from_text("a").unwrap(), a);
        assert!(matches!(y.from_text(""), Err(ChonkError::EmptyInput)));

        let (ab, c, a1, bc) = (
            y.from_text("ab").unwrap(),
            y.from_text("c").unwrap(),
            a,
            y.from_text("bc").unwrap(),
        );
        let left = y.concat(ab, c).unwrap();
        let right = y.concat(a1, bc).unwrap();
        assert_eq!(left, right);
        assert_eq!(y.to_string(left), "abc");
        assert_eq!(y.concat(left, Yarn::EMPTY).unwrap(), left);

        let x = y.insert(bc, 0, "x").unwrap();
        assert_eq!(x, y.from_text("xbc").unwrap());
        assert_eq!(y.delete(x, 3, 3).unwrap(), x);
        assert!(matches!(y.delete(x, 2, 4), Err(ChonkError::OutOfRange(_))));
        assert_eq!(y.slice(x, 0, 3).unwrap(), x);
        assert_eq!(y.slice(x, 1, 1).unwrap(), Yarn::EMPTY);
        assert_eq!(y.slice(x, 1, 2).unwrap(), y.from_text("b").unwrap());
        assert_eq!(y.char_at(x, 2), Some('c'));
    }

    #[test]
    fn compare_examples() {
        let mut y = Yarns::new();
        let (abc, abd) = (y.from_text("abc").unwrap(), y.from_text("abd").unwrap());
        assert_eq!(y.compare(abc, abd), (Ordering::Less, Some(2)));
        assert_eq!(y.compare(abd, abc), (Ordering::Greater, Some(2)));
        assert_eq!(y.compare(abc, abc), (Ordering::Equal, None));
        let ab = y.from_text("ab").unwrap();
        assert_eq!(y.compare(ab, abc), (Ordering::Less, None));
        assert_eq!(y.compare(Yarn::EMPTY, ab), (Ordering::Less, None));
        assert!(!y.equal(abc, abd));
    }

    #[test]
    fn compare_visits_few_nodes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut chars: Vec<char> = (0..10_000)
            .map(|_| char::from(rng.gen_range(b'a'..=b'z')))
            .collect();
        let mut y = Yarns::new();
        let a = y.from_text(&chars.iter().collect::<String>()).unwrap();
        chars[7000] = if chars[7000] == 'q' { 'r' } else { 'q' };
        let b = y.from_text(&chars.iter().collect::<String>()).unwrap();
        y.store().reset_visit_count();
        let (_, index) = y.compare(a, b);
        assert_eq!(index, Some(7000));
        assert!(
            y.store().visit_count() < 1000,
            "{} visits",
            y.store().visit_count()
        );
    }

    #[test]
    fn reverse_examples() {
        let mut y = Yarns::new();
        let ab = y.from_text("ab").unwrap();
        let ba = y.reverse(ab).unwrap();
        assert_eq!(ba, y.from_text("ba").unwrap());
        assert_eq!(y.reverse(ba).unwrap(), ab);
        let text: String = "chonky caterpillars ".repeat(40) + "é€𝄞";
        let t = y.from_text(&text).unwrap();
        let r = y.reverse(t).unwrap();
        assert_eq!(y.to_string(r), text.chars().rev().collect::<String>());
        assert_eq!(
            r,
            y.from_text(&text.chars().rev().collect::<String>())
                .unwrap()
        );
        let before = y.reverse_misses();
        assert_eq!(y.reverse(t).unwrap(), r);
        assert_eq!(y.reverse_misses(), before);
    }

    #[test]
    fn fibonacci_words() {
        assert_eq!(fibonacci_string(1), "1");
        assert_eq!(fibonacci_string(2), "0");
        assert_eq!(fibonacci_string(5), "01001");
        let mut y = Yarns::new();
        for n in 1..=16 {
            let w = y.fibonacci(n).unwrap();
            assert_eq!(y.to_string(w), fibonacci_string(n), "n = {n}");
        }
        assert!(y.fibonacci(51).is_err());
        let w = y.fibonacci(20).unwrap();
        let head = y.slice(w, 0, w.len() - 2).unwrap();
        assert_eq!(y.reverse(head).unwrap(), head);
        let s = y.to_string(head);
        assert_eq!(s.chars().rev().collect::<String>(), s);
    }

    fn op_strategy() -> impl Strategy<Value = Vec<(u8, u16, u16, String)>> {
        prop::collection::vec(
            (
                0u8..5,
                any::<u16>(),
                any::<u16>(),
                "[ab]{0,30}|[a-z]{0,8}|\\PC{0,4}",
            ),
            1..40,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn ops_match_a_plain_string(seed in "[abc]{1,400}", ops in op_strategy()) {
            let mut y = Yarns::new();
            let mut model: Vec<char> = seed.chars().collect();
            let mut cur = y.from_text(&seed).unwrap();
            for (kind, p, q, text) in ops {
                let n = model.len();
                let (i, j) = {
                    let (a, b) = (p as usize % (n + 1), q as usize % (n + 1));
                    (a.min(b), a.max(b))
                };
                match kind {
                    0 => { cur = y.insert(cur, i as u64, &text).unwrap(); model.splice(i..i, text.chars()); }
                    1 => { cur = y.delete(cur, i as u64, j as u64).unwrap(); model.drain(i..j); }
                    2 => { cur = y.replace(cur, i as u64, j as u64, &text).unwrap(); model.splice(i..j, text.chars()); }
                    3 => { cur = y.slice(cur, i as u64, j as u64).unwrap(); model = model[i..j].to_vec(); }
                    _ => {
                        let other = if text.is_empty() { Yarn::EMPTY } else { y.from_text(&text).unwrap() };
                        cur = y.concat(cur, other).unwrap();
                        model.extend(text.chars());
                    }
                }
                if model.is_empty() {
                    model = seed.chars().collect();
                    cur = y.from_text(&seed).unwrap();
                }
            }
            let s: String = model.iter().collect();
            prop_assert_eq!(y.to_string(cur), s.clone());
            prop_assert_eq!(cur, y.from_text(&s).unwrap());
        }

        #[test]
        fn compare_matches_plain_strings(a in "[ab]{1,300}", b in "[ab]{1,300}") {
            let mut y = Yarns::new();
            let (ya, yb) = (y.from_text(&a).unwrap(), y.from_text(&b).unwrap());
            let (ord, index) = y.compare(ya, yb);
            let ca: Vec<char> = a.chars().collect();
            let cb: Vec<char> = b.chars().collect();
            prop_assert_eq!(ord, ca.cmp(&cb));
            let first = ca.iter().zip(&cb).position(|(x, z)| x != z).map(|i| i as u64);
            prop_assert_eq!(index, first);
        }
    }
}
