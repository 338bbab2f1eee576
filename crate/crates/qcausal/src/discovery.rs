//! The three-stage causal discovery algorithm.
//!
//! Stage 1 finds and removes open output subsystems (identity factors of
//! divided outputs). Stage 2 peels the parties into causally ordered maximal
//! non-signaling sets by repeatedly identifying the set whose whole remaining
//! output carries an identity, tracing it out, and recursing. Stage 3 finds
//! the causal arrows, extracts the represented states and channels, rebuilds
//! a test matrix from them, and declares the process Markovian when the test
//! matrix reproduces the input. A DAG is emitted only for Markovian
//! processes; for a causally ordered non-Markovian process the causal order
//! and the raw arrows are still reported, but they are not reliable.
//!
//! Every evaluation of an open-output or channel constraint is counted; the
//! total is quadratic in the number of parties.

use std::collections::HashSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChoiMatrix;
use crate::error::{Error, Result};
use crate::mat::{identity_on_factors, ComplexMatrix, SystemShape};
use crate::process::{
    ProcessMatrix, SubsystemRef, SystemLayout, DEFAULT_EPS_PSD, DEFAULT_EPS_TRACE,
};

/// Ordered maximal non-signaling sets, first set first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalOrder {
    sets: Vec<Vec<String>>,
}

impl CausalOrder {
    pub fn new(sets: Vec<Vec<String>>) -> Self {
        Self { sets }
    }

    /// Sets from first to last.
    pub fn sets(&self) -> &[Vec<String>] {
        &self.sets
    }

    /// Index of the set containing a party.
    pub fn set_index(&self, party: &str) -> Option<usize> {
        self.sets
            .iter()
            .position(|s| s.iter().any(|p| p == party))
    }

    /// True when `a`'s set strictly precedes `b`'s.
    pub fn strictly_precedes(&self, a: &str, b: &str) -> bool {
        match (self.set_index(a), self.set_index(b)) {
            (Some(i), Some(j)) => i < j,
            _ => false,
        }
    }
}

/// Result of the causal-order stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CausalOrderResult {
    Ordered(CausalOrder),
    /// Peeling stalled: the listed parties could not be grouped. The sets
    /// found before the stall form the tail of the would-be order.
    NotOrdered {
        ordered_tail: Vec<Vec<String>>,
        ungrouped: Vec<String>,
    },
}

/// A causal arrow from an output (sub)system to a party's input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Arrow {
    pub source: SubsystemRef,
    pub target: String,
    /// True when the source party's output is undivided.
    pub whole_output: bool,
}

/// The discovered causal model of a Markovian process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    pub nodes: Vec<String>,
    pub edges: Vec<Arrow>,
    /// Parties with no incoming arrow; they hold input states.
    pub first: Vec<String>,
    /// Parties with no outgoing arrow; their outputs are open.
    pub last: Vec<String>,
}

/// States and channels extracted from the process matrix.
#[derive(Debug, Clone)]
pub struct ExtractedPieces {
    /// Input state per parentless party, normalized to unit trace.
    pub states: Vec<(String, ComplexMatrix)>,
    /// Channel per parented party, on its parent space and input, normalized
    /// so the trace equals the parent dimension.
    pub channels: Vec<(String, Vec<SubsystemRef>, ChoiMatrix)>,
    /// Output subsystems rebuilt as plain identities.
    pub identity_outputs: Vec<SubsystemRef>,
}

/// Everything the discovery run found.
#[derive(Debug, Clone)]
pub struct DiscoveryReport {
    pub open_subsystems: Vec<SubsystemRef>,
    pub open_subsystem_dims: Vec<usize>,
    pub causally_ordered: bool,
    pub causal_order: Option<CausalOrder>,
    /// Sets found before a peeling stall (latest sets), first-to-last.
    pub ordered_tail: Vec<Vec<String>>,
    /// Parties that could not be grouped.
    pub ungrouped: Vec<String>,
    pub arrows: Vec<Arrow>,
    pub markovian: bool,
    pub dag: Option<Dag>,
    pub pieces: Option<ExtractedPieces>,
    pub constraint_tests: u64,
    pub eps: f64,
}

// ---------------------------------------------------------------------------
// Internal working representation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StageFactor {
    party: usize,
    /// `None` for the input factor, `Some(original subsystem index)` for an
    /// output factor.
    sub: Option<usize>,
    dim: usize,
}

/// The matrix under analysis plus which original factor each tensor slot is.
#[derive(Debug, Clone)]
struct Stage {
    mat: ComplexMatrix,
    factors: Vec<StageFactor>,
}

impl Stage {
    fn from_process(w: &ProcessMatrix) -> Self {
        let layout = w.layout();
        let mut factors = Vec::new();
        for (p, party) in layout.parties().iter().enumerate() {
            factors.push(StageFactor {
                party: p,
                sub: None,
                dim: party.input_dim,
            });
            for (s, &d) in party.output_subdims.iter().enumerate() {
                factors.push(StageFactor {
                    party: p,
                    sub: Some(s),
                    dim: d,
                });
            }
        }
        Self {
            mat: w.matrix().clone(),
            factors,
        }
    }

    fn shape(&self) -> SystemShape {
        SystemShape::new(self.factors.iter().map(|f| f.dim).collect()).expect("valid dims")
    }

    fn input_position(&self, party: usize) -> Option<usize> {
        self.factors
            .iter()
            .position(|f| f.party == party && f.sub.is_none())
    }

    /// Remaining output factors of a party: (position, original subsystem, dim).
    fn output_factors(&self, party: usize) -> Vec<(usize, usize, usize)> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.party == party && f.sub.is_some())
            .map(|(pos, f)| (pos, f.sub.unwrap(), f.dim))
            .collect()
    }

    /// Traces out the listed factor positions and divides by `divisor`.
    fn remove(&self, positions: &[usize], divisor: f64) -> Result<Stage> {
        let reduced = self.mat.partial_trace(&self.shape(), positions)?;
        let mat = if (divisor - 1.0).abs() > 0.0 {
            reduced.scale(Complex64::new(1.0 / divisor, 0.0))
        } else {
            reduced
        };
        let factors = self
            .factors
            .iter()
            .enumerate()
            .filter(|(pos, _)| !positions.contains(pos))
            .map(|(_, &f)| f)
            .collect();
        Ok(Stage { mat, factors })
    }
}

// ---------------------------------------------------------------------------
// Stage 1: open output subsystems
// ---------------------------------------------------------------------------

fn stage1_open(
    stage: &Stage,
    layout: &SystemLayout,
    eps: f64,
    counter: &mut u64,
) -> Result<Vec<(SubsystemRef, usize)>> {
    let shape = stage.shape();
    let mut open = Vec::new();
    for (p, party) in layout.parties().iter().enumerate() {
        if party.output_subdims.len() < 2 {
            continue;
        }
        for (pos, orig_sub, dim) in stage.output_factors(p) {
            *counter += 1;
            if identity_on_factors(&stage.mat, &shape, &[pos], eps)? {
                open.push((SubsystemRef::new(party.name.clone(), orig_sub), dim));
            }
        }
    }
    Ok(open)
}

/// Finds the open output subsystems of a process: declared subsystems of
/// parties with two or more subsystems that carry an identity factor. Each
/// subsystem is tested against the matrix as given, one at a time.
pub fn find_open_subsystems(w: &ProcessMatrix, eps: f64) -> Result<Vec<SubsystemRef>> {
    let stage = Stage::from_process(w);
    let mut counter = 0;
    Ok(stage1_open(&stage, w.layout(), eps, &mut counter)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

// ---------------------------------------------------------------------------
// Stage 2: causal order
// ---------------------------------------------------------------------------

enum PeelOutcome {
    /// Sets in discovery order: last set first.
    Ordered(Vec<Vec<usize>>),
    NotOrdered {
        found_last_first: Vec<Vec<usize>>,
        remaining: Vec<usize>,
    },
}

fn peel(stage: &Stage, party_count: usize, eps: f64, counter: &mut u64) -> Result<PeelOutcome> {
    let mut current = stage.clone();
    let mut alive: Vec<usize> = (0..party_count).collect();
    let mut found: Vec<Vec<usize>> = Vec::new();
    while !alive.is_empty() {
        let shape = current.shape();
        let mut last = Vec::new();
        for &p in &alive {
            let positions: Vec<usize> = current
                .output_factors(p)
                .iter()
                .map(|&(pos, _, _)| pos)
                .collect();
            *counter += 1;
            if identity_on_factors(&current.mat, &shape, &positions, eps)? {
                last.push(p);
            }
        }
        if last.is_empty() {
            return Ok(PeelOutcome::NotOrdered {
                found_last_first: found,
                remaining: alive,
            });
        }
        alive.retain(|p| !last.contains(p));
        if !alive.is_empty() {
            let mut positions = Vec::new();
            let mut divisor = 1.0;
            for &p in &last {
                if let Some(pos) = current.input_position(p) {
                    positions.push(pos);
                }
                for (pos, _, dim) in current.output_factors(p) {
                    positions.push(pos);
                    divisor *= dim as f64;
                }
            }
            current = current.remove(&positions, divisor)?;
        }
        found.push(last);
    }
    Ok(PeelOutcome::Ordered(found))
}

/// Groups the parties into causally ordered maximal non-signaling sets, or
/// reports the ungrouped remainder. Open subsystems should already have been
/// traced out.
pub fn peel_causal_order(w: &ProcessMatrix, eps: f64) -> Result<CausalOrderResult> {
    let stage = Stage::from_process(w);
    let mut counter = 0;
    let names = |indices: &[usize]| -> Vec<String> {
        indices
            .iter()
            .map(|&p| w.layout().parties()[p].name.clone())
            .collect()
    };
    match peel(&stage, w.layout().party_count(), eps, &mut counter)? {
        PeelOutcome::Ordered(found) => Ok(CausalOrderResult::Ordered(CausalOrder::new(
            found.iter().rev().map(|s| names(s)).collect(),
        ))),
        PeelOutcome::NotOrdered {
            found_last_first,
            remaining,
        } => Ok(CausalOrderResult::NotOrdered {
            ordered_tail: found_last_first.iter().rev().map(|s| names(s)).collect(),
            ungrouped: names(&remaining),
        }),
    }
}

// ---------------------------------------------------------------------------
// Stage 3: arrows
// ---------------------------------------------------------------------------

/// Raw arrow: (source party, original subsystem, target party).
type RawArrow = (usize, usize, usize);

fn stage3_arrows(
    stage: &Stage,
    set_of: &[usize],
    receiver_sequence: &[usize],
    skip_sources: &HashSet<(usize, usize)>,
    eps: f64,
    counter: &mut u64,
) -> Result<Vec<RawArrow>> {
    let party_count = set_of.len();
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut arrows = Vec::new();
    for &recv in receiver_sequence {
        let mut candidates = Vec::new();
        for q in 0..party_count {
            if set_of[q] >= set_of[recv] {
                continue;
            }
            for (pos, orig_sub, _) in stage.output_factors(q) {
                if used.contains(&(q, orig_sub)) || skip_sources.contains(&(q, orig_sub)) {
                    continue;
                }
                candidates.push((q, orig_sub, pos));
            }
        }
        if candidates.is_empty() {
            continue;
        }
        let input_pos = stage
            .input_position(recv)
            .ok_or_else(|| Error::Layout("receiver input factor missing".into()))?;
        let wa = stage.mat.partial_trace(&stage.shape(), &[input_pos])?;
        let wa_shape = SystemShape::new(
            stage
                .factors
                .iter()
                .enumerate()
                .filter(|(pos, _)| *pos != input_pos)
                .map(|(_, f)| f.dim)
                .collect(),
        )?;
        for (q, orig_sub, pos) in candidates {
            let wa_pos = if pos > input_pos { pos - 1 } else { pos };
            *counter += 1;
            if identity_on_factors(&wa, &wa_shape, &[wa_pos], eps)? {
                used.insert((q, orig_sub));
                arrows.push((q, orig_sub, recv));
            }
        }
    }
    Ok(arrows)
}

fn default_receiver_sequence(sets: &[Vec<usize>]) -> Vec<usize> {
    let mut seq = Vec::new();
    for set in sets {
        let mut s = set.clone();
        s.sort_unstable();
        seq.extend(s);
    }
    seq
}

/// Discovers the causal arrows of a causally ordered process.
///
/// Receivers are visited from the earliest set to the latest; candidate
/// sources are the not-yet-used output (sub)systems of parties in strictly
/// earlier sets, visited in declaration order. Subsystems listed in `open`
/// are never considered.
pub fn find_arrows(
    w: &ProcessMatrix,
    order: &CausalOrder,
    open: &[SubsystemRef],
    eps: f64,
) -> Result<Vec<Arrow>> {
    let layout = w.layout();
    let stage = Stage::from_process(w);
    let mut set_of = vec![usize::MAX; layout.party_count()];
    for (i, set) in order.sets().iter().enumerate() {
        for name in set {
            set_of[layout.party_index(name)?] = i;
        }
    }
    if set_of.contains(&usize::MAX) {
        return Err(Error::Layout("causal order does not cover every party".into()));
    }
    let mut sets_idx: Vec<Vec<usize>> = vec![Vec::new(); order.sets().len()];
    for (p, &s) in set_of.iter().enumerate() {
        sets_idx[s].push(p);
    }
    let mut skip = HashSet::new();
    for r in open {
        skip.insert((layout.party_index(&r.party)?, r.subsystem));
    }
    let mut counter = 0;
    let raw = stage3_arrows(
        &stage,
        &set_of,
        &default_receiver_sequence(&sets_idx),
        &skip,
        eps,
        &mut counter,
    )?;
    Ok(raw
        .into_iter()
        .map(|(q, s, t)| make_arrow(layout, q, s, t))
        .collect())
}

fn make_arrow(layout: &SystemLayout, source: usize, sub: usize, target: usize) -> Arrow {
    Arrow {
        source: SubsystemRef::new(layout.parties()[source].name.clone(), sub),
        target: layout.parties()[target].name.clone(),
        whole_output: layout.parties()[source].output_subdims.len() == 1,
    }
}

// ---------------------------------------------------------------------------
// Extraction and test-matrix assembly
// ---------------------------------------------------------------------------

/// Partial trace onto the listed factor positions, returned in the listed
/// order (not necessarily ascending).
fn extract_onto(
    mat: &ComplexMatrix,
    shape: &SystemShape,
    kept_in_order: &[usize],
) -> Result<ComplexMatrix> {
    let traced: Vec<usize> = (0..shape.len())
        .filter(|k| !kept_in_order.contains(k))
        .collect();
    let reduced = mat.partial_trace(shape, &traced)?;
    let mut ascending: Vec<usize> = kept_in_order.to_vec();
    ascending.sort_unstable();
    if ascending == kept_in_order {
        return Ok(reduced);
    }
    // Send the factor currently at ascending rank r to its index in the
    // requested order.
    let perm: Vec<usize> = ascending
        .iter()
        .map(|pos| kept_in_order.iter().position(|p| p == pos).unwrap())
        .collect();
    let reduced_shape = SystemShape::new(ascending.iter().map(|&k| shape.dims()[k]).collect())?;
    reduced.reorder_systems(&reduced_shape, &perm)
}

/// Extracts the input state of a (first-set) party: the partial trace onto
/// its input factor, normalized to unit trace.
pub fn extract_state(w: &ProcessMatrix, party: &str) -> Result<ComplexMatrix> {
    let idx = w.layout().party_index(party)?;
    let pos = w.layout().input_position(idx);
    let r = extract_onto(w.matrix(), &w.layout().shape(), &[pos])?;
    let t = r.trace();
    if t.norm() < 1e-300 {
        return Err(Error::Numerical("extracted state has zero trace".into()));
    }
    Ok(r.scale(Complex64::ONE / t))
}

/// Extracts the channel from a parent space into a party's input: the
/// partial trace onto the parent factors followed by the input factor,
/// normalized so the trace equals the parent dimension.
pub fn extract_channel(
    w: &ProcessMatrix,
    parents: &[SubsystemRef],
    party: &str,
) -> Result<ChoiMatrix> {
    if parents.is_empty() {
        return Err(Error::Contract("a channel needs at least one parent".into()));
    }
    let layout = w.layout();
    let idx = layout.party_index(party)?;
    let input_pos = layout.input_position(idx);
    let mut parent_positions: Vec<usize> = parents
        .iter()
        .map(|r| layout.position_of(r))
        .collect::<Result<_>>()?;
    parent_positions.sort_unstable();
    parent_positions.dedup();
    if parent_positions.len() != parents.len() {
        return Err(Error::Contract("duplicate parent subsystem".into()));
    }
    let mut kept = parent_positions.clone();
    kept.push(input_pos);
    let extracted = extract_onto(w.matrix(), &layout.shape(), &kept)?;
    let in_dims: Vec<usize> = parent_positions
        .iter()
        .map(|&p| layout.flat_dims()[p])
        .collect();
    let d_parent: f64 = in_dims.iter().map(|&d| d as f64).product();
    let t = extracted.trace();
    if t.norm() < 1e-300 {
        return Err(Error::Numerical("extracted channel has zero trace".into()));
    }
    let normalized = extracted.scale(Complex64::new(d_parent, 0.0) / t);
    ChoiMatrix::new(
        normalized,
        in_dims,
        vec![layout.parties()[idx].input_dim],
    )
}

/// Pieces placed at explicit flat positions, Kronecker-assembled and
/// reordered into the canonical factor order. Every factor must be covered
/// exactly once.
fn assemble(flat_dims: &[usize], pieces: &[(Vec<usize>, &ComplexMatrix)]) -> Result<ComplexMatrix> {
    let n = flat_dims.len();
    let mut covered = vec![false; n];
    for (positions, piece) in pieces {
        let mut dim = 1usize;
        for &p in positions {
            if p >= n {
                return Err(Error::Contract(format!("piece position {p} out of range")));
            }
            if covered[p] {
                return Err(Error::Contract(format!("factor {p} covered twice")));
            }
            covered[p] = true;
            dim *= flat_dims[p];
        }
        if piece.rows() != dim || piece.cols() != dim {
            return Err(Error::Contract(format!(
                "piece side {} does not match its factors (dimension {dim})",
                piece.rows()
            )));
        }
    }
    if let Some(missing) = covered.iter().position(|&c| !c) {
        return Err(Error::Contract(format!("factor {missing} not covered")));
    }
    let mut product: Option<ComplexMatrix> = None;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (positions, piece) in pieces {
        order.extend_from_slice(positions);
        product = Some(match product {
            None => (*piece).clone(),
            Some(acc) => acc.kron(piece)?,
        });
    }
    let product = product.ok_or_else(|| Error::Contract("no pieces supplied".into()))?;
    let current_shape = SystemShape::new(order.iter().map(|&p| flat_dims[p]).collect())?;
    product.reorder_systems(&current_shape, &order)
}

/// Builds a Markovian process matrix from explicit pieces: input states,
/// channels (source subsystems plus target input), and identity factors on
/// the listed output subsystems.
pub fn build_test_matrix_with_identities(
    layout: &SystemLayout,
    states: &[(String, ComplexMatrix)],
    channels: &[(String, Vec<SubsystemRef>, ChoiMatrix)],
    identity_outputs: &[SubsystemRef],
) -> Result<ProcessMatrix> {
    let mut pieces: Vec<(Vec<usize>, &ComplexMatrix)> = Vec::new();
    let mut identities: Vec<(Vec<usize>, ComplexMatrix)> = Vec::new();
    for (party, state) in states {
        let idx = layout.party_index(party)?;
        pieces.push((vec![layout.input_position(idx)], state));
    }
    for (party, parents, choi) in channels {
        let idx = layout.party_index(party)?;
        let mut positions: Vec<usize> = parents
            .iter()
            .map(|r| layout.position_of(r))
            .collect::<Result<_>>()?;
        positions.sort_unstable();
        let parent_dims: Vec<usize> = positions.iter().map(|&p| layout.flat_dims()[p]).collect();
        if choi.in_dims() != parent_dims.as_slice()
            || choi.out_dim() != layout.parties()[idx].input_dim
        {
            return Err(Error::Contract(format!(
                "channel into '{party}' does not match its parent space"
            )));
        }
        positions.push(layout.input_position(idx));
        pieces.push((positions, choi.matrix()));
    }
    for r in identity_outputs {
        let pos = layout.position_of(r)?;
        identities.push((vec![pos], ComplexMatrix::identity(layout.flat_dims()[pos])));
    }
    for (positions, id) in &identities {
        pieces.push((positions.clone(), id));
    }
    let mat = assemble(layout.flat_dims(), &pieces)?;
    ProcessMatrix::new(layout.clone(), mat)
}

/// As [`build_test_matrix_with_identities`], with identities on every output
/// subsystem of the listed last parties.
pub fn build_test_matrix(
    layout: &SystemLayout,
    states: &[(String, ComplexMatrix)],
    channels: &[(String, Vec<SubsystemRef>, ChoiMatrix)],
    last_parties: &[String],
) -> Result<ProcessMatrix> {
    let mut identity_outputs = Vec::new();
    for name in last_parties {
        let idx = layout.party_index(name)?;
        for s in 0..layout.parties()[idx].output_subdims.len() {
            identity_outputs.push(SubsystemRef::new(name.clone(), s));
        }
    }
    build_test_matrix_with_identities(layout, states, channels, &identity_outputs)
}

/// True when the test matrix reproduces the process within `eps`.
pub fn is_markovian(w: &ProcessMatrix, w_test: &ProcessMatrix, eps: f64) -> Result<bool> {
    if w.layout() != w_test.layout() {
        return Err(Error::Layout("layouts differ in Markovianity test".into()));
    }
    w.matrix().approx_equal(w_test.matrix(), eps)
}

// ---------------------------------------------------------------------------
// The discovery orchestrator
// ---------------------------------------------------------------------------

/// Runs the full three-stage analysis.
///
/// The input must pass validation (Hermitian, positive semidefinite, sane
/// trace normalization); otherwise it is rejected. The returned report
/// contains the open subsystems, the causal order or the ungrouped
/// remainder, the causal arrows with the extracted mechanism pieces, the
/// Markovianity verdict, the DAG for a Markovian process, and the number of
/// linear-constraint evaluations performed.
pub fn discover(w: &ProcessMatrix, eps: f64) -> Result<DiscoveryReport> {
    let validation = w.validate(DEFAULT_EPS_PSD, DEFAULT_EPS_TRACE);
    if !validation.is_valid() {
        let mut parts = Vec::new();
        for issue in &validation.issues {
            parts.push(format!("{:?} violated by {:.3e}", issue.check, issue.violation));
        }
        return Err(Error::Validation(parts.join("; ")));
    }
    let layout = w.layout();
    let mut counter: u64 = 0;
    let full = Stage::from_process(w);

    // Stage 1: open output subsystems are tested against the original matrix
    // one at a time, then traced out together (normalized identities).
    let open_found = stage1_open(&full, layout, eps, &mut counter)?;
    let open_positions: Vec<usize> = open_found
        .iter()
        .map(|(r, _)| {
            let p = layout.party_index(&r.party).expect("found on this layout");
            full.factors
                .iter()
                .position(|f| f.party == p && f.sub == Some(r.subsystem))
                .expect("factor present")
        })
        .collect();
    let open_divisor: f64 = open_found.iter().map(|&(_, d)| d as f64).product();
    let reduced = full.remove(&open_positions, open_divisor)?;
    let (open_subsystems, open_subsystem_dims): (Vec<SubsystemRef>, Vec<usize>) =
        open_found.into_iter().unzip();

    // Stage 2: causal order.
    let peel_outcome = peel(&reduced, layout.party_count(), eps, &mut counter)?;
    let names = |indices: &[usize]| -> Vec<String> {
        indices
            .iter()
            .map(|&p| layout.parties()[p].name.clone())
            .collect()
    };
    let sets_idx: Vec<Vec<usize>> = match peel_outcome {
        PeelOutcome::NotOrdered {
            found_last_first,
            remaining,
        } => {
            return Ok(DiscoveryReport {
                open_subsystems,
                open_subsystem_dims,
                causally_ordered: false,
                causal_order: None,
                ordered_tail: found_last_first.iter().rev().map(|s| names(s)).collect(),
                ungrouped: names(&remaining),
                arrows: Vec::new(),
                markovian: false,
                dag: None,
                pieces: None,
                constraint_tests: counter,
                eps,
            });
        }
        PeelOutcome::Ordered(found) => found.into_iter().rev().collect(),
    };
    let causal_order = CausalOrder::new(sets_idx.iter().map(|s| names(s)).collect());
    let mut set_of = vec![0usize; layout.party_count()];
    for (i, set) in sets_idx.iter().enumerate() {
        for &p in set {
            set_of[p] = i;
        }
    }

    // Stage 3: arrows, mechanism extraction, Markovianity.
    let raw_arrows = stage3_arrows(
        &reduced,
        &set_of,
        &default_receiver_sequence(&sets_idx),
        &HashSet::new(),
        eps,
        &mut counter,
    )?;
    let shape = reduced.shape();
    let mut parents_of: Vec<Vec<(usize, usize)>> = vec![Vec::new(); layout.party_count()];
    for &(q, s, t) in &raw_arrows {
        parents_of[t].push((q, s));
    }
    let mut states = Vec::new();
    let mut channels = Vec::new();
    for (p, parents) in parents_of.iter().enumerate() {
        let input_pos = reduced
            .input_position(p)
            .ok_or_else(|| Error::Layout("input factor missing".into()))?;
        if parents.is_empty() {
            let r = extract_onto(&reduced.mat, &shape, &[input_pos])?;
            let t = r.trace();
            states.push((
                layout.parties()[p].name.clone(),
                r.scale(Complex64::ONE / t),
            ));
        } else {
            let mut parent_positions: Vec<(usize, usize, usize)> = parents
                .iter()
                .map(|&(q, s)| {
                    let pos = reduced
                        .factors
                        .iter()
                        .position(|f| f.party == q && f.sub == Some(s))
                        .expect("arrow source present");
                    (pos, q, s)
                })
                .collect();
            parent_positions.sort_unstable();
            let mut kept: Vec<usize> = parent_positions.iter().map(|&(pos, _, _)| pos).collect();
            kept.push(input_pos);
            let extracted = extract_onto(&reduced.mat, &shape, &kept)?;
            let in_dims: Vec<usize> = parent_positions
                .iter()
                .map(|&(pos, _, _)| reduced.factors[pos].dim)
                .collect();
            let d_parent: f64 = in_dims.iter().map(|&d| d as f64).product();
            let t = extracted.trace();
            let choi = ChoiMatrix::new(
                extracted.scale(Complex64::new(d_parent, 0.0) / t),
                in_dims,
                vec![layout.parties()[p].input_dim],
            )?;
            let parent_refs: Vec<SubsystemRef> = parent_positions
                .iter()
                .map(|&(_, q, s)| SubsystemRef::new(layout.parties()[q].name.clone(), s))
                .collect();
            channels.push((layout.parties()[p].name.clone(), parent_refs, choi));
        }
    }
    let used: HashSet<(usize, usize)> = raw_arrows.iter().map(|&(q, s, _)| (q, s)).collect();
    let mut identity_refs = Vec::new();
    for p in 0..layout.party_count() {
        for (_, orig_sub, _) in reduced.output_factors(p) {
            if !used.contains(&(p, orig_sub)) {
                identity_refs.push(SubsystemRef::new(layout.parties()[p].name.clone(), orig_sub));
            }
        }
    }

    // Assemble the test matrix over the reduced factor list.
    let flat_dims: Vec<usize> = reduced.factors.iter().map(|f| f.dim).collect();
    let position_of = |party: usize, sub: Option<usize>| -> usize {
        reduced
            .factors
            .iter()
            .position(|f| f.party == party && f.sub == sub)
            .expect("factor present")
    };
    let mut pieces: Vec<(Vec<usize>, &ComplexMatrix)> = Vec::new();
    for (name, state) in &states {
        let p = layout.party_index(name)?;
        pieces.push((vec![position_of(p, None)], state));
    }
    for (name, parents, choi) in &channels {
        let p = layout.party_index(name)?;
        let mut positions: Vec<usize> = parents
            .iter()
            .map(|r| position_of(layout.party_index(&r.party).unwrap(), Some(r.subsystem)))
            .collect();
        positions.push(position_of(p, None));
        pieces.push((positions, choi.matrix()));
    }
    let identity_mats: Vec<(usize, ComplexMatrix)> = identity_refs
        .iter()
        .map(|r| {
            let p = layout.party_index(&r.party).unwrap();
            let pos = position_of(p, Some(r.subsystem));
            (pos, ComplexMatrix::identity(flat_dims[pos]))
        })
        .collect();
    for (pos, id) in &identity_mats {
        pieces.push((vec![*pos], id));
    }
    let w_test = assemble(&flat_dims, &pieces)?;
    let markovian = reduced.mat.approx_equal(&w_test, eps)?;

    let arrows: Vec<Arrow> = raw_arrows
        .iter()
        .map(|&(q, s, t)| make_arrow(layout, q, s, t))
        .collect();
    let dag = markovian.then(|| {
        let nodes: Vec<String> = layout.parties().iter().map(|p| p.name.clone()).collect();
        let first = nodes
            .iter()
            .filter(|n| !arrows.iter().any(|a| &a.target == *n))
            .cloned()
            .collect();
        let last = nodes
            .iter()
            .filter(|n| !arrows.iter().any(|a| &a.source.party == *n))
            .cloned()
            .collect();
        Dag {
            nodes,
            edges: arrows.clone(),
            first,
            last,
        }
    });

    Ok(DiscoveryReport {
        open_subsystems,
        open_subsystem_dims,
        causally_ordered: true,
        causal_order: Some(causal_order),
        ordered_tail: Vec::new(),
        ungrouped: Vec::new(),
        arrows,
        markovian,
        dag,
        pieces: Some(ExtractedPieces {
            states,
            channels,
            identity_outputs: identity_refs,
        }),
        constraint_tests: counter,
        eps,
    })
}

/// Checks a claimed two-order decomposition `w = q w_ab + (1-q) w_ba` of a
/// bipartite process: the affine combination must reproduce `w`, both terms
/// must be valid process matrices, and each term must carry an identity on
/// the output of its last party (the second party for `w_ab`, the first for
/// `w_ba`).
pub fn verify_two_order_decomposition(
    w: &ProcessMatrix,
    q: f64,
    w_ab: &ProcessMatrix,
    w_ba: &ProcessMatrix,
    eps: f64,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Contract(format!("mixing weight {q} outside [0, 1]")));
    }
    if w.layout() != w_ab.layout() || w.layout() != w_ba.layout() {
        return Err(Error::Layout("decomposition terms live on different layouts".into()));
    }
    if w.layout().party_count() != 2 {
        return Err(Error::Contract(
            "two-order decomposition is defined for two parties".into(),
        ));
    }
    let combo = w_ab
        .matrix()
        .scale(Complex64::new(q, 0.0))
        .add(&w_ba.matrix().scale(Complex64::new(1.0 - q, 0.0)))?;
    if !w.matrix().approx_equal(&combo, eps)? {
        return Ok(false);
    }
    if !w_ab.validate_default().is_valid() || !w_ba.validate_default().is_valid() {
        return Ok(false);
    }
    let shape = w.layout().shape();
    let last_outputs = |party_idx: usize| -> Vec<usize> {
        (0..w.layout().parties()[party_idx].output_subdims.len())
            .map(|s| w.layout().output_position(party_idx, s).unwrap())
            .collect()
    };
    let b_last = identity_on_factors(w_ab.matrix(), &shape, &last_outputs(1), eps)?;
    let a_last = identity_on_factors(w_ba.matrix(), &shape, &last_outputs(0), eps)?;
    Ok(b_last && a_last)
}

// ---------------------------------------------------------------------------
// Report rendering: console, JSON, DOT
// ---------------------------------------------------------------------------

fn arrow_label(a: &Arrow) -> String {
    if a.whole_output {
        format!("party {} to party {}", a.source.party, a.target)
    } else {
        format!(
            "subsystem {} of party {} to party {}",
            a.source.subsystem + 1,
            a.source.party,
            a.target
        )
    }
}

fn arrow_short(a: &Arrow) -> String {
    if a.whole_output {
        format!("{} -> {}", a.source.party, a.target)
    } else {
        format!("{}.{} -> {}", a.source.party, a.source.subsystem + 1, a.target)
    }
}

impl DiscoveryReport {
    /// Arrows connecting successive non-signaling sets.
    pub fn primal_arrows(&self) -> Vec<&Arrow> {
        self.partition_arrows().0
    }

    /// Arrows jumping over at least one set.
    pub fn secondary_arrows(&self) -> Vec<&Arrow> {
        self.partition_arrows().1
    }

    fn partition_arrows(&self) -> (Vec<&Arrow>, Vec<&Arrow>) {
        let mut primal = Vec::new();
        let mut secondary = Vec::new();
        if let Some(order) = &self.causal_order {
            for a in &self.arrows {
                let src = order.set_index(&a.source.party);
                let dst = order.set_index(&a.target);
                match (src, dst) {
                    (Some(i), Some(j)) if j == i + 1 => primal.push(a),
                    _ => secondary.push(a),
                }
            }
        }
        (primal, secondary)
    }

    /// Human-readable findings: open subsystems, the sets (listed last
    /// first), one line per arrow, and the Markovianity verdict.
    pub fn console_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        if self.open_subsystems.is_empty() {
            lines.push("There are no open subsystems.".to_string());
        } else {
            for (i, (r, d)) in self
                .open_subsystems
                .iter()
                .zip(self.open_subsystem_dims.iter())
                .enumerate()
            {
                let body = format!("{} of party {} of dimension {}", r.subsystem + 1, r.party, d);
                if i == 0 {
                    lines.push(format!("There are open subsystems: {body}"));
                } else {
                    lines.push(body);
                }
            }
        }
        if let Some(order) = &self.causal_order {
            lines.push("the_sets =".to_string());
            for set in order.sets().iter().rev() {
                lines.push(format!("    {}", set.join(",")));
            }
            for a in &self.arrows {
                lines.push(format!("Link from {}.", arrow_label(a)));
            }
            let (primal, secondary) = self.partition_arrows();
            let fmt = |arrows: &[&Arrow]| -> String {
                if arrows.is_empty() {
                    "(none)".to_string()
                } else {
                    arrows
                        .iter()
                        .map(|a| arrow_short(a))
                        .collect::<Vec<_>>()
                        .join(", ")
                }
            };
            lines.push(format!("primal_arrows: {}", fmt(&primal)));
            lines.push(format!("secondary_arrows: {}", fmt(&secondary)));
            if self.markovian {
                lines.push("the process is Markovian".to_string());
            } else {
                lines.push("the process is not Markovian".to_string());
                lines.push(
                    "the discovered causal arrows are not reliable and a DAG is not provided"
                        .to_string(),
                );
            }
        } else {
            lines.push("the process is not causally ordered".to_string());
            lines.push(format!("ungrouped parties: {}", self.ungrouped.join(", ")));
            if !self.ordered_tail.is_empty() {
                lines.push("trailing sets (earliest first):".to_string());
                for set in &self.ordered_tail {
                    lines.push(format!("    {}", set.join(",")));
                }
            }
        }
        lines
    }

    /// Stable JSON rendering of the report.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ReportJson::from(self)).expect("report serialization")
    }

    /// DOT rendering of the DAG; present only for Markovian processes.
    /// Nodes and edges are sorted for diff-stable output.
    pub fn to_dot(&self) -> Option<String> {
        let dag = self.dag.as_ref()?;
        let mut out = String::from("digraph causal_structure {\n");
        let mut nodes = dag.nodes.clone();
        nodes.sort();
        for n in &nodes {
            let mut label = n.clone();
            if dag.first.contains(n) {
                label.push_str("\\nstate");
            }
            if dag.last.contains(n) {
                label.push_str("\\nopen output");
            }
            out.push_str(&format!("    \"{n}\" [label=\"{label}\"];\n"));
        }
        let mut edges: Vec<(String, String, usize)> = dag
            .edges
            .iter()
            .map(|a| (a.source.party.clone(), a.target.clone(), a.source.subsystem + 1))
            .collect();
        edges.sort();
        for (src, dst, sub) in edges {
            out.push_str(&format!("    \"{src}\" -> \"{dst}\" [label=\"{sub}\"];\n"));
        }
        out.push_str("}\n");
        Some(out)
    }
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
pub(crate) struct ArrowJson {
    pub from: (String, usize),
    pub to: String,
    pub whole_output: bool,
}

impl From<&Arrow> for ArrowJson {
    fn from(a: &Arrow) -> Self {
        Self {
            from: (a.source.party.clone(), a.source.subsystem),
            to: a.target.clone(),
            whole_output: a.whole_output,
        }
    }
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
pub(crate) struct DagJson {
    nodes: Vec<String>,
    edges: Vec<ArrowJson>,
    first: Vec<String>,
    last: Vec<String>,
}

/// Serialized form of [`DiscoveryReport`] with stable field names.
#[derive(Serialize, Deserialize, PartialEq, Debug)]
pub(crate) struct ReportJson {
    open_subsystems: Vec<(String, usize)>,
    causally_ordered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    causal_order: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ordered_tail: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ungrouped: Vec<String>,
    arrows: Vec<ArrowJson>,
    primal_arrows: Vec<ArrowJson>,
    secondary_arrows: Vec<ArrowJson>,
    markovian: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    dag: Option<DagJson>,
    constraint_tests: u64,
    eps: f64,
}

impl From<&DiscoveryReport> for ReportJson {
    fn from(r: &DiscoveryReport) -> Self {
        let (primal, secondary) = r.partition_arrows();
        Self {
            open_subsystems: r
                .open_subsystems
                .iter()
                .map(|s| (s.party.clone(), s.subsystem))
                .collect(),
            causally_ordered: r.causally_ordered,
            causal_order: r
                .causal_order
                .as_ref()
                .map(|o| o.sets().to_vec()),
            ordered_tail: r.ordered_tail.clone(),
            ungrouped: r.ungrouped.clone(),
            arrows: r.arrows.iter().map(ArrowJson::from).collect(),
            primal_arrows: primal.into_iter().map(ArrowJson::from).collect(),
            secondary_arrows: secondary.into_iter().map(ArrowJson::from).collect(),
            markovian: r.markovian,
            dag: r.dag.as_ref().map(|d| DagJson {
                nodes: d.nodes.clone(),
                edges: d.edges.iter().map(ArrowJson::from).collect(),
                first: d.first.clone(),
                last: d.last.clone(),
            }),
            constraint_tests: r.constraint_tests,
            eps: r.eps,
        }
    }
}
