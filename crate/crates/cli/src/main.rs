//! `chonkers` command line: chunk files, generate corpora, and run the
//! weight, locality, census, dedup and yarn measurements. Output is TSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chonkers::bench;
use chonkers::{ChonkError, ChunkerConfig, Granularity, LayerSchedule, Store};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "chonkers",
    version,
    about = "Layered content-defined chunker and its experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Proto-chunk size. Defaults to byte8 for chunk and dedup, char32 otherwise.
    #[arg(long, global = true, value_enum)]
    granularity: Option<Gran>,
    /// Final absolute unit, in bits or with a KiB suffix (e.g. 12KiB).
    #[arg(long, global = true)]
    target_unit: Option<String>,
    /// First layer that includes the hash in augmented contents.
    #[arg(long, global = true, default_value_t = 3)]
    hash_start_layer: u32,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout if absent. A directory for gen-corpus.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Gran {
    Byte8,
    Char32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CorpusKind {
    /// Strings of code points 0..=255.
    Random,
    /// Two versions of one random binary file, differing in single bytes.
    Versions,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the final-layer chunks of each file.
    Chunk { paths: Vec<PathBuf> },
    /// Per-layer weight statistics over a corpus directory.
    StatsWeight { corpus: PathBuf },
    /// Per-layer edit locality over a corpus directory (nine deletions per file).
    StatsLocality { corpus: PathBuf },
    /// Share of nodes per phase and merge priority.
    Census { corpus: PathBuf },
    /// Deduplicate final-layer chunks across version directories.
    Dedup {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Build a Fibonacci word by concatenation and check its palindrome.
    YarnDemo {
        #[arg(long, default_value_t = 30)]
        n: u32,
    },
    /// Write a seeded corpus into --out.
    GenCorpus {
        #[arg(long, value_enum, default_value = "random")]
        kind: CorpusKind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Characters per string, or bytes per version file.
        #[arg(long, default_value_t = 10_000)]
        len: usize,
        /// Byte edits between versions.
        #[arg(long, default_value_t = 100)]
        edits: usize,
    },
}

/// Failures, split by exit code.
enum Failure {
    Input(String),
    Internal(String),
}

impl From<ChonkError> for Failure {
    fn from(e: ChonkError) -> Self {
        match e {
            ChonkError::Invariant(_)
            | ChonkError::CaterpillarViolation
            | ChonkError::UndefinedDiffbit => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn parse_unit(s: &str) -> Result<u64, Failure> {
    let t = s.trim();
    let (num, mul) = match t.strip_suffix("KiB").or_else(|| t.strip_suffix("kiB")) {
        Some(n) => (n.trim(), 8 * 1024),
        None => (t, 1),
    };
    num.parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(mul))
        .ok_or_else(|| Failure::Input(format!("bad --target-unit {s:?}")))
}

fn config(common: &Common, default: Granularity) -> Result<ChunkerConfig, Failure> {
    let g = match common.granularity {
        Some(Gran::Byte8) => Granularity::Byte8,
        Some(Gran::Char32) => Granularity::Char32,
        None => default,
    };
    let schedule = match &common.target_unit {
        Some(t) => LayerSchedule::clamped(g, parse_unit(t)?)?,
        None if g == Granularity::Byte8 => LayerSchedule::clamped(g, 12 * 1024 * 8)?,
        None => LayerSchedule::formula(g),
    };
    Ok(ChunkerConfig::new(g, schedule)?.with_hash_start_layer(common.hash_start_layer))
}

/// Files of `dir`, recursively, in sorted order.
fn files_in(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in
            fs::read_dir(&d).map_err(|e| Failure::Input(format!("{}: {e}", d.display())))?
        {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_corpus(dir: &Path) -> Result<Vec<Vec<u8>>, Failure> {
    let files = files_in(dir)?;
    if files.is_empty() {
        return Err(Failure::Input(format!("{}: empty corpus", dir.display())));
    }
    files
        .iter()
        .map(|f| fs::read(f).map_err(|e| Failure::Input(format!("{}: {e}", f.display()))))
        .collect()
}

fn emit(common: &Common, text: &str) -> Result<(), Failure> {
    match &common.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Chunk { paths } => {
            let config = config(c, Granularity::Byte8)?;
            let mut out = String::from("file\toffset\tlength\tweight\tkind\thash\n");
            let mut failed = None;
            for p in paths {
                let name = p.display().to_string();
                let records = fs::read(p)
                    .map_err(|e| Failure::Input(e.to_string()))
                    .and_then(|data| {
                        Ok(bench::chunk_records(&mut Store::default(), &data, &config)?)
                    });
                match records {
                    Ok(r) => bench::chunk_records_tsv(&name, &r, &mut out),
                    Err(Failure::Input(e)) => {
                        out.push_str(&format!("{name}\terror\t{e}\n"));
                        failed = Some(Failure::Input(format!("{name}: {e}")));
                    }
                    Err(internal) => return Err(internal),
                }
            }
            emit(c, &out)?;
            failed.map_or(Ok(()), Err)
        }
        Command::StatsWeight { corpus } => {
            let rows = bench::weight_stats(
                &read_corpus(corpus)?,
                &config(c, Granularity::Char32)?,
                c.jobs,
            )?;
            emit(c, &bench::weight_stats_tsv(&rows))
        }
        Command::StatsLocality { corpus } => {
            let inputs = read_corpus(corpus)?;
            let config = config(c, Granularity::Char32)?;
            let bits = config.granularity.proto_bits() as usize;
            let short = inputs.iter().filter(|i| i.len() * 8 / bits < 16).count();
            if short > 0 {
                eprintln!("skipping {short} input(s) shorter than 16 proto-chunks");
            }
            emit(
                c,
                &bench::locality_stats_tsv(&bench::locality_stats(&inputs, &config, c.jobs)?),
            )
        }
        Command::Census { corpus } => {
            let rows = bench::census(
                &read_corpus(corpus)?,
                &config(c, Granularity::Char32)?,
                c.jobs,
            )?;
            emit(c, &bench::census_tsv(&rows))
        }
        Command::Dedup { dirs } => {
            let mut d = bench::Deduper::new(config(c, Granularity::Byte8)?);
            for dir in dirs {
                for f in files_in(dir)? {
                    d.add_file(&fs::read(&f)?)?;
                }
            }
            emit(c, &bench::dedup_tsv(&d.report()))
        }
        Command::YarnDemo { n } => emit(c, &bench::fib_tsv(&bench::fibonacci_demo(*n)?)),
        Command::GenCorpus {
            kind,
            count,
            len,
            edits,
        } => {
            let dir = c
                .out
                .as_ref()
                .ok_or_else(|| Failure::Input("gen-corpus needs --out <dir>".into()))?;
            match kind {
                CorpusKind::Random => {
                    fs::create_dir_all(dir)?;
                    for (i, s) in bench::random_corpus(*count, *len, c.seed)
                        .iter()
                        .enumerate()
                    {
                        fs::write(dir.join(format!("str-{i:05}.txt")), s)?;
                    }
                }
                CorpusKind::Versions => {
                    let (a, b, _) = bench::versioned_pair(*len, *edits, c.seed);
                    for (v, data) in [("v1", a), ("v2", b)] {
                        fs::create_dir_all(dir.join(v))?;
                        fs::write(dir.join(v).join("data.bin"), data)?;
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal invariant violated: {e}");
            ExitCode::from(2)
        }
    }
}
