//! Causal discovery for quantum process matrices.
//!
//! A process matrix assigns joint probabilities to the local operations of a
//! set of parties without presupposing their causal relations. This crate
//! takes such a matrix (with its party and subsystem dimension metadata) and
//! extracts causal information at three levels:
//!
//! 1. **Open output subsystems** — output factors carrying plain identities,
//!    which feed nothing downstream.
//! 2. **Causal order** — a grouping of the parties into causally ordered
//!    maximal non-signaling sets, when one exists.
//! 3. **The causal model** — for Markovian processes, the minimal DAG
//!    together with the represented mechanisms: input states for parentless
//!    parties and one channel per parented party.
//!
//! The [`generate`] module builds ground-truth test processes (Markovian
//! processes for arbitrary DAGs, memory combs, mixtures of causal orders),
//! and the [`oracle`] module provides an independent brute-force check:
//! joint outcome probabilities via the generalized Born rule and operational
//! signaling tests that certify or refute discovered arrows without touching
//! the discovery code paths.
//!
//! ```
//! use qcausal::generate::{markovian_process, DagEdge, DagSpec};
//! use qcausal::process::{PartySpec, SystemLayout};
//! use qcausal::discovery::discover;
//!
//! let layout = SystemLayout::new(vec![
//!     PartySpec::new("A", 2, vec![2]),
//!     PartySpec::new("B", 2, vec![2]),
//! ])?;
//! let spec = DagSpec::new(layout, vec![DagEdge::new("A", 0, "B")])?;
//! let truth = markovian_process(&spec, 7)?;
//! let report = discover(&truth.process, 1e-9)?;
//! assert!(report.markovian);
//! assert_eq!(report.arrows.len(), 1);
//! # Ok::<(), qcausal::Error>(())
//! ```

pub mod channel;
pub mod discovery;
pub mod error;
pub mod generate;
pub mod io;
pub mod mat;
pub mod oracle;
pub mod process;

mod eigen;

pub use channel::ChoiMatrix;
pub use error::{Error, Result};
pub use mat::{ComplexMatrix, SystemShape};
pub use process::{PartySpec, ProcessMatrix, SubsystemRef, SystemLayout};

/// Chapters of the guide double as documentation tests so the book's code
/// stays in sync with the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(tensor_algebra, "../../../book/src/tensor-algebra.md");
    chapter!(process_matrices, "../../../book/src/process-matrices.md");
    chapter!(generating_processes, "../../../book/src/generating-processes.md");
    chapter!(causal_discovery, "../../../book/src/causal-discovery.md");
    chapter!(signaling_oracle, "../../../book/src/signaling-oracle.md");
    chapter!(readme, "../../../README.md");
}
