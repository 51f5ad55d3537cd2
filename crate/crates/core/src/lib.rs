//! Chonkers: content-defined chunking with hard weight bounds and edit
//! locality, deduplicated chonker trees with incremental rebuild, and the
//! Yarn string type built on top of them.
//!
//! ```
//! use chonkers::{build_tree, ChunkerConfig, Store};
//!
//! let mut store = Store::default();
//! let config = ChunkerConfig::char32();
//! let a = build_tree(&mut store, "hello, world".as_bytes(), &config).unwrap();
//! let b = build_tree(&mut store, "hello, world".as_bytes(), &config).unwrap();
//! assert_eq!(a, b);
//! ```

pub mod bench;
pub mod bits;
pub mod diffbit;
pub mod error;
pub mod phases;
pub mod pipeline;
pub mod rebuild;
pub mod store;

pub use bits::{BitContent, HashRing, PolyHash};
pub use error::{ChonkError, Result};
pub use pipeline::{build_tree, chunks_at_layer, ChunkerConfig, Granularity, LayerSchedule};
pub use rebuild::{edit_ops, splice, Cut, SpliceStats, TreeZipper};
pub mod yarn;
pub use store::{NodeId, PhaseTag, Provenance, Store};
pub use yarn::{Yarn, Yarns};
