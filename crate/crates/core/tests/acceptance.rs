//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Runs without the test harness so the lines
//! always show.

use std::cmp::Ordering;
use std::time::Instant;

use chonkers::bench::{self, Deduper};
use chonkers::diffbit::{diffbit_numbers, higher_orders};
use chonkers::pipeline::{build_layers, proto_chunks, Until};
use chonkers::rebuild::{edit_ops, splice_with_stats, Cut};
use chonkers::store::{is_kitten, Phase};
use chonkers::yarn::fibonacci_string;
use chonkers::{
    build_tree, chunks_at_layer, BitContent, ChunkerConfig, HashRing, Store, Yarn, Yarns,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_corpus_bytes(count: usize, seed: u64) -> Vec<Vec<u8>> {
    bench::random_corpus(count, 10_000, seed)
        .into_iter()
        .map(String::into_bytes)
        .collect()
}

/// Binary de Bruijn sequence of order `k` over `alphabet` (Lyndon words).
fn de_bruijn(alphabet: &[u8], k: usize) -> Vec<u8> {
    let n = alphabet.len();
    let mut a = vec![0usize; k * n];
    let mut seq = Vec::new();
    fn db(t: usize, p: usize, k: usize, n: usize, a: &mut [usize], seq: &mut Vec<usize>) {
        if t > k {
            if k.is_multiple_of(p) {
                seq.extend_from_slice(&a[1..=p]);
            }
        } else {
            a[t] = a[t - p];
            db(t + 1, p, k, n, a, seq);
            for j in a[t - p] + 1..n {
                a[t] = j;
                db(t + 1, t, k, n, a, seq);
            }
        }
    }
    db(1, 1, k, n, &mut a, &mut seq);
    seq.into_iter().map(|i| alphabet[i]).collect()
}

fn adversarial(rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; 10_000]];
    for period in 1..=64 {
        let pattern: Vec<u8> = (0..period).map(|_| rng.gen_range(b'a'..=b'z')).collect();
        out.push(pattern.iter().cycle().take(10_000).copied().collect());
    }
    out.push(de_bruijn(b"01", 13));
    out.push(de_bruijn(b"acgt", 6));
    out
}

/// Check the weight guarantees on every layer's output list.
fn weight_violations(input: &[u8], config: &ChunkerConfig) -> Vec<String> {
    let mut store = Store::default();
    let protos = proto_chunks(&mut store, input, config.granularity).unwrap();
    let mut lists = Vec::new();
    build_layers(
        &mut store,
        protos,
        config,
        Until::Root,
        &mut |level, list| {
            if level % 3 == 0 {
                lists.push((level / 3, list.to_vec()));
            }
        },
    )
    .unwrap();
    let mut bad = Vec::new();
    for (layer, list) in lists {
        let u = config.params(layer).unit as u128;
        let w: Vec<u128> = list.iter().map(|&c| store.weight(c) as u128).collect();
        for (i, &c) in list.iter().enumerate() {
            if store.is_caterpillar(c) {
                if store.segment_weight(c) as u128 >= u {
                    bad.push(format!(
                        "layer {layer}: caterpillar segment {} >= unit {u}",
                        store.segment_weight(c)
                    ));
                }
            } else if w[i] >= u {
                bad.push(format!("layer {layer}: chunk {} >= unit {u}", w[i]));
            }
            if is_kitten(w[i] as u64, u as u64) {
                for j in [i.wrapping_sub(1), i + 1] {
                    if j < list.len() && w[i] + w[j] < u {
                        bad.push(format!(
                            "layer {layer}: kitten {} + neighbour {} < {u}",
                            w[i], w[j]
                        ));
                    }
                }
            }
        }
        for p in w.windows(2) {
            if 2 * p[0] < u && 2 * p[1] < u {
                bad.push(format!(
                    "layer {layer}: neighbours {} and {} both under half of {u}",
                    p[0], p[1]
                ));
            }
        }
        if w.len() >= 3 {
            let interior = &w[1..w.len() - 1];
            let sum: u128 = interior.iter().sum();
            if 8 * sum < 3 * u * interior.len() as u128 {
                bad.push(format!(
                    "layer {layer}: interior mean {} below 3/8 of {u}",
                    sum / interior.len() as u128
                ));
            }
        }
    }
    bad
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let char32 = ChunkerConfig::char32();
    let byte8 = ChunkerConfig::byte8();
    let mut bad = Vec::new();
    let mut inputs = 0;
    for s in random_corpus_bytes(1000, 1) {
        bad.extend(weight_violations(&s, &char32));
        inputs += 1;
    }
    for s in adversarial(&mut rng) {
        bad.extend(weight_violations(&s, &char32));
        bad.extend(weight_violations(&s, &byte8));
        inputs += 2;
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("{inputs} inputs, {} violations, {secs:.1}s", bad.len());
    outcome(
        bad.is_empty() && secs < 600.0,
        bad.first()
            .map_or(detail.clone(), |b| format!("{detail}; first: {b}")),
    )
}

fn criterion_2(corpus: &[Vec<u8>]) -> Outcome {
    let rows = bench::weight_stats(corpus, &ChunkerConfig::char32(), 1).unwrap();
    let (l1, l3) = (rows[0].avg.mean, rows[2].avg.mean);
    outcome(
        (0.84..=0.90).contains(&l1) && (0.71..=0.77).contains(&l3),
        format!("layer 1 average {l1:.4} in [0.84, 0.90], layer 3 average {l3:.4} in [0.71, 0.77]"),
    )
}

fn criterion_3(corpus: &[Vec<u8>]) -> Outcome {
    let rows = bench::locality_stats(corpus, &ChunkerConfig::char32(), 1).unwrap();
    let left = rows.iter().map(|r| r.left.max).fold(0.0, f64::max);
    let right = rows.iter().map(|r| r.right.max).fold(0.0, f64::max);
    let edits = rows.first().map_or(0, |r| r.left.count);
    outcome(
        left <= 6.0 && right <= 6.0 && left <= 24.0 && right <= 18.0,
        format!(
            "{edits} edits, max extent left {left:.4} right {right:.4} units (limit 6; hard 24/18)"
        ),
    )
}

fn criterion_4(corpus: &[Vec<u8>]) -> Outcome {
    let rows = bench::census(corpus, &ChunkerConfig::char32(), 1).unwrap();
    let all = &rows[0];
    let (b0, d0) = (all.percent[0], all.percent[3]);
    outcome(
        (72.0..=82.0).contains(&b0) && (13.0..=20.0).contains(&d0),
        format!("All row balancing-0 {b0:.4}% in [72, 82], diffbit-0 {d0:.4}% in [13, 20]"),
    )
}

fn input_for(rng: &mut ChaCha8Rng, case: usize, char_mode: bool) -> Vec<u8> {
    let n = rng.gen_range(1..12_000);
    let alpha = [2u8, 3, 26, 255][case % 4];
    match case % 5 {
        0 => {
            let period = rng.gen_range(1..=64);
            let pattern: Vec<u8> = (0..period).map(|_| rng.gen_range(b'a'..=b'd')).collect();
            pattern.iter().cycle().take(n).copied().collect()
        }
        _ if char_mode => bench::random_string(rng, n)
            .chars()
            .map(|c| (b'a' as u32 + c as u32 % alpha as u32).min(b'~' as u32) as u8)
            .collect(),
        _ => (0..n)
            .map(|_| rng.gen_range(0..=alpha.saturating_sub(1).max(1)))
            .collect(),
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut mismatches = 0;
    let mut fallbacks = 0;
    for case in 0..500 {
        let char_mode = case % 2 == 0;
        let config = if char_mode {
            ChunkerConfig::char32()
        } else {
            ChunkerConfig::byte8()
        };
        let bits = config.granularity.proto_bits() as u64;
        let mut store = Store::default();
        let a = input_for(&mut rng, case, char_mode);
        let b = if case % 3 == 0 {
            input_for(&mut rng, case + 1, char_mode)
        } else {
            a.clone()
        };
        let ta = build_tree(&mut store, &a, &config).unwrap();
        let tb = build_tree(&mut store, &b, &config).unwrap();
        let cut_a = rng.gen_range(0..=a.len());
        let cut_b = if case % 3 == 0 {
            rng.gen_range(0..=b.len())
        } else {
            rng.gen_range(cut_a..=a.len().min(cut_a + 300))
        };
        let mid: Vec<u8> = input_for(&mut rng, case + 2, char_mode)
            .into_iter()
            .take(rng.gen_range(0..200))
            .collect();
        let middle = proto_chunks(&mut store, &mid, config.granularity).unwrap();
        let (root, stats) = splice_with_stats(
            &mut store,
            Cut::new(ta, cut_a as u64 * bits),
            &middle,
            Cut::new(tb, cut_b as u64 * bits),
            &config,
        )
        .unwrap();
        fallbacks += stats.fallbacks;
        let whole: Vec<u8> = a[..cut_a]
            .iter()
            .chain(&mid)
            .chain(&b[cut_b..])
            .copied()
            .collect();
        let want = if whole.is_empty() {
            None
        } else {
            Some(build_tree(&mut store, &whole, &config).unwrap())
        };
        if root != want {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!(
            "{}/500 roots identical to scratch builds ({fallbacks} fallbacks)",
            500 - mismatches
        ),
    )
}

fn text_sample(rng: &mut ChaCha8Rng, style: usize, n: usize) -> String {
    match style % 3 {
        0 => (0..n).map(|_| if rng.gen() { 'a' } else { 'b' }).collect(),
        1 => bench::random_string(rng, n),
        _ => (0..n)
            .map(|_| *['x', 'é', '€', '𝄞', ' ', 'ß'].choose(rng).unwrap())
            .collect(),
    }
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut content_bad, mut handle_bad, mut checks) = (0, 0, 0);
    for seq in 0..1000 {
        let mut y = Yarns::new();
        let style = seq % 3;
        let len = rng.gen_range(1..2000);
        let start = text_sample(&mut rng, style, len);
        let mut model: Vec<char> = start.chars().collect();
        let mut cur = y.from_text(&start).unwrap();
        let ops = rng.gen_range(1..=200);
        for op in 0..ops {
            let n = model.len();
            let i = rng.gen_range(0..=n);
            let j = rng.gen_range(i..=n.min(i + 120));
            let (shift, len) = (rng.gen_range(0..2), rng.gen_range(0..40));
            let text = text_sample(&mut rng, style + shift, len);
            match rng.gen_range(0..6) {
                0 => {
                    cur = y.insert(cur, i as u64, &text).unwrap();
                    model.splice(i..i, text.chars());
                }
                1 => {
                    cur = y.delete(cur, i as u64, j as u64).unwrap();
                    model.drain(i..j);
                }
                2 => {
                    cur = y.replace(cur, i as u64, j as u64, &text).unwrap();
                    model.splice(i..j, text.chars());
                }
                3 => {
                    let (a, b) = if rng.gen() { (0, j.max(n / 2)) } else { (i, n) };
                    cur = y.slice(cur, a as u64, b as u64).unwrap();
                    model = model[a..b].to_vec();
                }
                4 => {
                    let other = if text.is_empty() {
                        Yarn::EMPTY
                    } else {
                        y.from_text(&text).unwrap()
                    };
                    if rng.gen() {
                        cur = y.concat(cur, other).unwrap();
                        model.extend(text.chars());
                    } else {
                        cur = y.concat(other, cur).unwrap();
                        model.splice(0..0, text.chars());
                    }
                }
                _ => {
                    cur = y.concat(cur, cur).unwrap();
                    model.extend_from_within(..);
                }
            }
            if model.len() > 5000 {
                cur = y.slice(cur, 0, 5000).unwrap();
                model.truncate(5000);
            }
            if op % 25 == 24 || op + 1 == ops {
                checks += 1;
                let s: String = model.iter().collect();
                if y.to_string(cur) != s {
                    content_bad += 1;
                }
                let want = if s.is_empty() {
                    Yarn::EMPTY
                } else {
                    y.from_text(&s).unwrap()
                };
                if cur != want {
                    handle_bad += 1;
                }
            }
        }
    }
    outcome(
        content_bad == 0 && handle_bad == 0,
        format!(
            "1000 sequences, {checks} checks: {content_bad} content and {handle_bad} handle mismatches, {:.1}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut y = Yarns::new();
    let mut bad = Vec::new();
    for n in 5..=30 {
        let w = y.fibonacci(n).unwrap();
        let head = y.slice(w, 0, w.len() - 2).unwrap();
        let rev = y.reverse(head).unwrap();
        if rev != head {
            bad.push(n);
        }
        if n <= 20 {
            let s = fibonacci_string(n);
            let naive: String = s[..s.len() - 2].chars().rev().collect();
            if y.to_string(rev) != naive || naive != s[..s.len() - 2] || y.to_string(w) != s {
                bad.push(n);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 30.0,
        format!("n = 5..=30, failures {bad:?}, {secs:.2}s (limit 30s)"),
    )
}

fn data_bit(d: &[u8], i: usize) -> bool {
    d[i / 8] >> (7 - i % 8) & 1 == 1
}

/// First differing data bit by linear scan, with the direction convention of
/// the tree version: the right bit, or the complement of the left bit when
/// only the left side continues.
fn scan(a: &[u8], b: &[u8]) -> Option<(u64, bool)> {
    let n = a.len().min(b.len());
    if let Some(i) = (0..n).find(|&i| a[i] != b[i]) {
        let k = 8 * i + (a[i] ^ b[i]).leading_zeros() as usize;
        return Some((k as u64, data_bit(b, k)));
    }
    match a.len().cmp(&b.len()) {
        Ordering::Equal => None,
        Ordering::Less => Some((8 * n as u64, data_bit(b, 8 * n))),
        Ordering::Greater => Some((8 * n as u64, !data_bit(a, 8 * n))),
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut bad = Vec::new();
    // Triples of values, drawn from narrow and wide ranges so that long
    // shared suffixes are common.
    for _ in 0..1_000_000 {
        let bits = *[3u32, 8, 20, 64, 127].choose(&mut rng).unwrap();
        let mask = (1u128 << bits) - 1;
        let (a, b, c) = (
            rng.gen::<u128>() & mask,
            rng.gen::<u128>() & mask,
            rng.gen::<u128>() & mask,
        );
        if a == b || b == c {
            continue;
        }
        let (x, y) = (
            diffbit_numbers(a, b).unwrap(),
            diffbit_numbers(b, c).unwrap(),
        );
        if x == y {
            bad.push(format!("diffbits of {a}, {b}, {c} coincide"));
        }
        let mut first = vec![x, y];
        first.extend((0..4).map(|_| rng.gen_range(0..(2 * bits as u128 + 2))));
        first.dedup();
        let heckd = vec![true; first.len()];
        let top = higher_orders(&first, &heckd, 5, false).unwrap();
        if top.iter().any(|&(v, _)| v > 5) {
            bad.push(format!("order 5 of {first:?} leaves [0,5]"));
        }
    }
    // Trees against linear scans: a few bases, many edited variants each.
    let config = ChunkerConfig::byte8();
    let mut pairs = 0;
    while pairs < 10_000 {
        let mut store = Store::default();
        let n = rng.gen_range(1..=65_536);
        let alpha: u16 = *[2u16, 16, 256].choose(&mut rng).unwrap();
        let base: Vec<u8> = (0..n).map(|_| (rng.gen::<u16>() % alpha) as u8).collect();
        let root = build_tree(&mut store, &base, &config).unwrap();
        let mut prev = (base.clone(), root);
        for _ in 0..250 {
            let (ref data, r) = prev;
            let pos = rng.gen_range(0..=data.len());
            let del = rng.gen_range(0..=(data.len() - pos).min(4));
            let ins: Vec<u8> = (0..rng.gen_range(0..4))
                .map(|_| (rng.gen::<u16>() % alpha) as u8)
                .collect();
            let Some(v) =
                edit_ops(&mut store, Some(r), pos as u64, del as u64, &ins, &config).unwrap()
            else {
                continue;
            };
            let vdata: Vec<u8> = data[..pos]
                .iter()
                .chain(&ins)
                .chain(&data[pos + del..])
                .copied()
                .collect();
            for (x, xd, y, yd) in [
                (root, &base, v, &vdata),
                (v, &vdata, root, &base),
                (r, data, v, &vdata),
            ] {
                let got = store.first_difference(x, y).map(|d| (d.index, d.direction));
                if got != scan(xd, yd) {
                    bad.push(format!("tree diff {got:?} vs scan {:?}", scan(xd, yd)));
                }
                pairs += 1;
            }
            prev = (vdata, v);
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "10^6 triples and {pairs} tree pairs, {} violations{}",
            bad.len(),
            bad.first()
                .map_or(String::new(), |b| format!("; first: {b}"))
        ),
    )
}

fn criterion_9() -> Outcome {
    let ring = HashRing::default();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let random_bits = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(0..300);
        BitContent::from_bools(&(0..n).map(|_| rng.gen()).collect::<Vec<bool>>())
    };
    let mut bad = 0;
    for _ in 0..100_000 {
        let (u, v) = (random_bits(&mut rng), random_bits(&mut rng));
        let joined =
            chonkers::bits::hash_concat(ring.hash_bits(&u), ring.hash_bits(&v), u.len() as u64)
                .unwrap();
        if joined != ring.hash_bits(&u.concat(&v)) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("10^5 pairs, {bad} mismatches"))
}

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let config = ChunkerConfig::byte8();
    let layer = config.schedule.final_layer().unwrap();
    let unit_bytes = config.params(layer).unit / 8;
    let (a, b, positions) = bench::versioned_pair(10 << 20, 100, 10);
    let mut d = Deduper::new(config.clone());
    let ra = build_tree(d.store_mut(), &a, &config).unwrap();
    let mut rb = ra;
    for &p in &positions {
        rb = edit_ops(d.store_mut(), Some(rb), p as u64, 1, &b[p..=p], &config)
            .unwrap()
            .unwrap();
    }
    let scratch = build_tree(d.store_mut(), &b, &config).unwrap();
    let ca = chunks_at_layer(d.store_mut(), ra, layer, Phase::Diffbit).unwrap();
    let cb = chunks_at_layer(d.store_mut(), rb, layer, Phase::Diffbit).unwrap();
    d.add_chunks(&ca);
    let one = d.report().unique_bytes;
    d.add_chunks(&cb);
    let r = d.report();
    let growth = r.unique_bytes - one;
    let bound = 100 * 42 * unit_bytes;
    let spread = r.sd_chunk / r.avg_chunk;
    outcome(
        rb == scratch && r.ratio >= 1.8 && growth <= bound && spread < 0.5,
        format!(
            "ratio {:.4} (>= 1.8), unique growth {growth} B (<= {bound}), sd/mean {spread:.4} (< 0.5), incremental root {} scratch, {:.0}s",
            r.ratio,
            if rb == scratch { "equals" } else { "differs from" },
            t.elapsed().as_secs_f64()
        ),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    // `cargo test -- --list` and filters: this target has no sub-tests.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let corpus = random_corpus_bytes(100, 2);
    let criteria: Vec<(&str, Criterion)> = vec![
        ("weight guarantees", Box::new(criterion_1)),
        ("weight distribution", Box::new(|| criterion_2(&corpus))),
        ("edit locality", Box::new(|| criterion_3(&corpus))),
        ("phase census", Box::new(|| criterion_4(&corpus))),
        ("splice vs scratch", Box::new(criterion_5)),
        ("yarn history independence", Box::new(criterion_6)),
        ("fibonacci palindrome", Box::new(criterion_7)),
        ("diffbit properties", Box::new(criterion_8)),
        ("hash monoid", Box::new(criterion_9)),
        ("dedup at desk scale", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!(
            "criterion {:>2} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
