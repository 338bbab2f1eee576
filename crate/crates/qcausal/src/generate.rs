//! Construction of ground-truth test processes: random states and channels,
//! Markovian process matrices for arbitrary DAGs, causally ordered
//! non-Markovian combs built by contracting latent memory nodes, and
//! mixtures of causal orders.
//!
//! All randomness flows through a named, versioned generator (ChaCha12)
//! seeded explicitly, so every construction is reproducible from its seed.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::channel::ChoiMatrix;
use crate::discovery::build_test_matrix_with_identities;
use crate::error::{Error, Result};
use crate::mat::{contract_factors_with, link_contract, ComplexMatrix, SystemShape};
use crate::process::{PartySpec, ProcessMatrix, SubsystemRef, SystemLayout};

fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn ginibre(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Modified Gram-Schmidt on the columns; input must have full column rank,
/// which holds almost surely for Gaussian draws.
fn orthonormal_columns(a: &ComplexMatrix) -> ComplexMatrix {
    let rows = a.rows();
    let cols = a.cols();
    let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v: Vec<Complex64> = (0..rows).map(|i| a.get(i, j)).collect();
        for prev in &q {
            let overlap: Complex64 = prev
                .iter()
                .zip(v.iter())
                .map(|(p, x)| p.conj() * x)
                .sum();
            for (x, p) in v.iter_mut().zip(prev.iter()) {
                *x -= overlap * p;
            }
        }
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        q.push(v);
    }
    ComplexMatrix::from_fn(rows, cols, |i, j| q[j][i])
}

/// Random full-rank density matrix: `G G† / Tr(G G†)` for a Gaussian `G`.
pub fn random_density(dim: usize, seed: u64) -> Result<ComplexMatrix> {
    if dim == 0 {
        return Err(Error::Contract("state dimension must be at least 1".into()));
    }
    if dim == 1 {
        return Ok(ComplexMatrix::identity(1));
    }
    let mut rng = rng_from_seed(seed);
    Ok(random_density_from(&mut rng, dim))
}

fn random_density_from(rng: &mut ChaCha12Rng, dim: usize) -> ComplexMatrix {
    if dim == 1 {
        return ComplexMatrix::identity(1);
    }
    let g = ginibre(rng, dim, dim);
    let w = g.matmul(&g.adjoint()).expect("square product");
    let t = w.trace();
    w.scale(Complex64::new(1.0 / t.re, 0.0))
}

/// Haar-random unitary of side `dim`.
pub fn random_unitary(dim: usize, seed: u64) -> Result<ComplexMatrix> {
    if dim == 0 {
        return Err(Error::Contract("unitary dimension must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    Ok(random_unitary_from(&mut rng, dim))
}

pub(crate) fn random_unitary_from(rng: &mut ChaCha12Rng, dim: usize) -> ComplexMatrix {
    orthonormal_columns(&ginibre(rng, dim, dim))
}

/// Random pure state (rank-one projector) of side `dim`.
pub(crate) fn random_pure_state_from(rng: &mut ChaCha12Rng, dim: usize) -> ComplexMatrix {
    let v = ginibre(rng, dim, 1);
    let norm: f64 = v.data().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    ComplexMatrix::from_fn(dim, dim, |i, j| v.get(i, 0) * v.get(j, 0).conj() / (norm * norm))
}

/// Random trace-preserving channel via a full-rank isometric dilation: the
/// environment has dimension `d_in * d_out`, so the channel matrix is
/// generically full rank and never factorizes accidentally.
///
/// With `unitary` set the environment is trivial and the channel is a random
/// unitary conjugation; input and output dimensions must then agree.
pub fn random_cptp_choi(
    in_dims: &[usize],
    out_dims: &[usize],
    seed: u64,
    unitary: bool,
) -> Result<ChoiMatrix> {
    let mut rng = rng_from_seed(seed);
    random_cptp_choi_from(&mut rng, in_dims, out_dims, unitary)
}

fn random_cptp_choi_from(
    rng: &mut ChaCha12Rng,
    in_dims: &[usize],
    out_dims: &[usize],
    unitary: bool,
) -> Result<ChoiMatrix> {
    if in_dims.is_empty() || out_dims.is_empty() || in_dims.contains(&0) || out_dims.contains(&0) {
        return Err(Error::Contract("channel factor dimensions must be at least 1".into()));
    }
    let d_in: usize = in_dims.iter().product();
    let d_out: usize = out_dims.iter().product();
    if unitary {
        if d_in != d_out {
            return Err(Error::Contract(format!(
                "unitary channel needs equal dimensions, got {d_in} -> {d_out}"
            )));
        }
        let u = random_unitary_from(rng, d_in);
        let choi = ChoiMatrix::from_unitary(&u)?;
        return ChoiMatrix::new(choi.matrix().clone(), in_dims.to_vec(), out_dims.to_vec());
    }
    let env = d_in * d_out;
    let isometry = orthonormal_columns(&ginibre(rng, d_out * env, d_in));
    let kraus: Vec<ComplexMatrix> = (0..env)
        .map(|e| ComplexMatrix::from_fn(d_out, d_in, |o, i| isometry.get(o * env + e, i)))
        .collect();
    ChoiMatrix::from_kraus(in_dims.to_vec(), out_dims.to_vec(), &kraus)
}

/// One causal arrow of a DAG specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagEdge {
    pub from: SubsystemRef,
    pub to: String,
}

impl DagEdge {
    pub fn new(from_party: impl Into<String>, subsystem: usize, to: impl Into<String>) -> Self {
        Self {
            from: SubsystemRef::new(from_party, subsystem),
            to: to.into(),
        }
    }
}

/// A layout plus causal arrows; the blueprint for a Markovian process.
#[derive(Debug, Clone, PartialEq)]
pub struct DagSpec {
    pub layout: SystemLayout,
    pub edges: Vec<DagEdge>,
}

impl DagSpec {
    /// Validates the structure: arrows connect existing subsystems to
    /// existing parties, every subsystem feeds at most one arrow, the graph
    /// is acyclic, and no arrow carries a trivial (dimension-1) system.
    pub fn new(layout: SystemLayout, edges: Vec<DagEdge>) -> Result<Self> {
        let n = layout.party_count();
        let mut used = std::collections::HashSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            let from_idx = layout.party_index(&e.from.party)?;
            let to_idx = layout.party_index(&e.to)?;
            let src_dim = layout.subsystem_dim(&e.from)?;
            if from_idx == to_idx {
                return Err(Error::Contract(format!(
                    "self-loop on party '{}'",
                    e.to
                )));
            }
            if src_dim < 2 {
                return Err(Error::Contract(format!(
                    "arrow source {} of party '{}' has dimension 1 and can carry no signal",
                    e.from.subsystem, e.from.party
                )));
            }
            if layout.parties()[to_idx].input_dim < 2 {
                return Err(Error::Contract(format!(
                    "arrow target '{}' has a dimension-1 input",
                    e.to
                )));
            }
            if !used.insert(e.from.clone()) {
                return Err(Error::Contract(format!(
                    "subsystem {} of party '{}' feeds two arrows",
                    e.from.subsystem, e.from.party
                )));
            }
            adjacency[from_idx].push(to_idx);
        }
        // Kahn toposort for acyclicity.
        let mut indeg = vec![0usize; n];
        for targets in &adjacency {
            for &t in targets {
                indeg[t] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &t in &adjacency[v] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    queue.push(t);
                }
            }
        }
        if seen != n {
            return Err(Error::Contract("the arrow set contains a directed cycle".into()));
        }
        Ok(Self { layout, edges })
    }

    /// Parents of each party, sorted by flat factor position.
    pub fn parents_of(&self, party: &str) -> Result<Vec<SubsystemRef>> {
        self.layout.party_index(party)?;
        let mut parents: Vec<SubsystemRef> = self
            .edges
            .iter()
            .filter(|e| e.to == party)
            .map(|e| e.from.clone())
            .collect();
        parents.sort_by_key(|r| self.layout.position_of(r).expect("validated edge"));
        Ok(parents)
    }

    /// Parties with no incoming arrow.
    pub fn parentless(&self) -> Vec<String> {
        self.layout
            .parties()
            .iter()
            .filter(|p| !self.edges.iter().any(|e| e.to == p.name))
            .map(|p| p.name.clone())
            .collect()
    }

    /// Parties with no outgoing arrow.
    pub fn childless(&self) -> Vec<String> {
        self.layout
            .parties()
            .iter()
            .filter(|p| !self.edges.iter().any(|e| e.from.party == p.name))
            .map(|p| p.name.clone())
            .collect()
    }

    /// Output subsystems that feed no arrow.
    pub fn edge_free_subsystems(&self) -> Vec<SubsystemRef> {
        let mut free = Vec::new();
        for p in self.layout.parties() {
            for s in 0..p.output_subdims.len() {
                let r = SubsystemRef::new(p.name.clone(), s);
                if !self.edges.iter().any(|e| e.from == r) {
                    free.push(r);
                }
            }
        }
        free
    }

    /// Edge-free subsystems of parties that declare two or more subsystems:
    /// exactly the ones reported open by the first discovery stage.
    pub fn open_subsystems(&self) -> Vec<SubsystemRef> {
        self.edge_free_subsystems()
            .into_iter()
            .filter(|r| {
                let idx = self.layout.party_index(&r.party).expect("validated");
                self.layout.parties()[idx].output_subdims.len() >= 2
            })
            .collect()
    }
}

/// A generated process together with everything used to build it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub process: ProcessMatrix,
    pub dag: DagSpec,
    pub seed: u64,
    /// Input states of parentless parties.
    pub states: Vec<(String, ComplexMatrix)>,
    /// One channel per parented party, from its full parent space.
    pub channels: Vec<(String, Vec<SubsystemRef>, ChoiMatrix)>,
    /// Output subsystems carrying plain identity factors.
    pub identity_outputs: Vec<SubsystemRef>,
    /// Subsystems the first discovery stage should report open.
    pub open: Vec<SubsystemRef>,
    pub first: Vec<String>,
    pub last: Vec<String>,
}

/// Draws random pieces for the DAG and assembles the Markovian process:
/// states on parentless inputs, one random channel into every parented
/// input, identities on edge-free output subsystems.
pub fn markovian_process(spec: &DagSpec, seed: u64) -> Result<GroundTruth> {
    let mut rng = rng_from_seed(seed);
    let mut states = Vec::new();
    let mut channels = Vec::new();
    for p in spec.layout.parties() {
        let parents = spec.parents_of(&p.name)?;
        if parents.is_empty() {
            states.push((p.name.clone(), random_density_from(&mut rng, p.input_dim)));
        } else {
            let in_dims: Vec<usize> = parents
                .iter()
                .map(|r| spec.layout.subsystem_dim(r).expect("validated"))
                .collect();
            let choi = random_cptp_choi_from(&mut rng, &in_dims, &[p.input_dim], false)?;
            channels.push((p.name.clone(), parents, choi));
        }
    }
    let identity_outputs = spec.edge_free_subsystems();
    let process =
        build_test_matrix_with_identities(&spec.layout, &states, &channels, &identity_outputs)?;
    Ok(GroundTruth {
        process,
        dag: spec.clone(),
        seed,
        states,
        channels,
        identity_outputs: identity_outputs.clone(),
        open: spec.open_subsystems(),
        first: spec.parentless(),
        last: spec.childless(),
    })
}

/// Applies a fixed trace-preserving map at one party and removes the party:
/// the map's matrix is inserted in the transposed convention on the party's
/// factors, multiplied in, and the factors are traced out.
pub fn contract_party(w: &ProcessMatrix, party: &str, map: &ChoiMatrix) -> Result<ProcessMatrix> {
    let layout = w.layout();
    let idx = layout.party_index(party)?;
    let spec = &layout.parties()[idx];
    if map.in_dim() != spec.input_dim || map.out_dims() != spec.output_subdims.as_slice() {
        return Err(Error::Contract(format!(
            "map dimensions {}->{:?} do not match party '{party}' ({}->{:?})",
            map.in_dim(),
            map.out_dims(),
            spec.input_dim,
            spec.output_subdims
        )));
    }
    let mut positions = vec![layout.input_position(idx)];
    for s in 0..spec.output_subdims.len() {
        positions.push(layout.output_position(idx, s)?);
    }
    // Transposed-CJ convention for inserted maps.
    let inserted = map.matrix().transpose();
    let reduced = contract_factors_with(w.matrix(), &layout.shape(), &positions, &inserted)?;
    let remaining: Vec<PartySpec> = layout
        .parties()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != idx)
        .map(|(_, p)| p.clone())
        .collect();
    if remaining.is_empty() {
        // Contracting the only party leaves the total probability weight.
        let layout = SystemLayout::new(vec![PartySpec::new(party, 1, vec![1])])?;
        return ProcessMatrix::new(layout, reduced);
    }
    ProcessMatrix::new(SystemLayout::new(remaining)?, reduced)
}

/// Builds a causally ordered chain of `party_dims.len()` parties connected
/// by channels with memory: an initial state correlates the first input
/// with a memory system, and each link maps (output, memory) to the next
/// input (and next memory). Contracting the latent memory interfaces is done
/// link by link, which keeps the intermediate dimension small; the result is
/// the same process the extended Markovian construction would give after
/// contracting every latent node with the identity channel.
///
/// `memory_dims[i]` is the memory carried across link `i`; dimension 1
/// degenerates to a Markovian chain.
pub fn comb_with_memory(
    party_dims: &[(usize, usize)],
    memory_dims: &[usize],
    seed: u64,
) -> Result<ProcessMatrix> {
    let n = party_dims.len();
    if n < 2 {
        return Err(Error::Contract("a comb needs at least two parties".into()));
    }
    if memory_dims.len() != n - 1 {
        return Err(Error::Contract(format!(
            "expected {} memory dimensions for {n} parties, got {}",
            n - 1,
            memory_dims.len()
        )));
    }
    if party_dims.iter().any(|&(i, o)| i == 0 || o == 0) || memory_dims.contains(&0) {
        return Err(Error::Contract("dimensions must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);

    // Running matrix over factors [P1_I, P1_O, P2_I, P2_O, ..., P_k_I, mem];
    // the trailing memory factor (kept even at dimension 1) is the dangling
    // interface the next link glues onto.
    let mut dims: Vec<usize> = vec![party_dims[0].0, memory_dims[0]];
    let mut mat = random_density_from(&mut rng, dims.iter().product());
    for link in 0..n - 1 {
        let (_, d_out) = party_dims[link];
        let d_next_in = party_dims[link + 1].0;
        let mem_in = memory_dims[link];
        let mem_out = if link + 1 < n - 1 { memory_dims[link + 1] } else { 1 };
        let choi = random_cptp_choi_from(
            &mut rng,
            &[d_out, mem_in],
            &[d_next_in, mem_out],
            false,
        )?;
        // Glue the running memory factor (last) to the channel's memory
        // input (second factor of the Choi layout).
        let s_shape = SystemShape::new(dims.clone())?;
        let mem_pos = dims.len() - 1;
        let c_shape = SystemShape::new(vec![d_out, mem_in, d_next_in, mem_out])?;
        mat = link_contract(&mat, &s_shape, &[mem_pos], choi.matrix(), &c_shape, &[1])?;
        dims.pop();
        dims.extend_from_slice(&[d_out, d_next_in, mem_out]);
    }
    // Identity on the last party's output; the leftover dimension-1 memory
    // factor is a no-op in the flat index.
    let d_last_out = party_dims[n - 1].1;
    mat = mat.kron(&ComplexMatrix::identity(d_last_out))?;

    let parties: Vec<PartySpec> = party_dims
        .iter()
        .enumerate()
        .map(|(i, &(d_in, d_out))| PartySpec::new(format!("{}", i + 1), d_in, vec![d_out]))
        .collect();
    ProcessMatrix::new(SystemLayout::new(parties)?, mat)
}

/// Affine combination `q w1 + (1-q) w2` of two processes on one layout.
pub fn mixture(q: f64, w1: &ProcessMatrix, w2: &ProcessMatrix) -> Result<ProcessMatrix> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Contract(format!("mixing weight {q} outside [0, 1]")));
    }
    if w1.layout() != w2.layout() {
        return Err(Error::Layout("mixture terms live on different layouts".into()));
    }
    let combined = w1
        .matrix()
        .scale(Complex64::new(q, 0.0))
        .add(&w2.matrix().scale(Complex64::new(1.0 - q, 0.0)))?;
    ProcessMatrix::new(w1.layout().clone(), combined)
}
