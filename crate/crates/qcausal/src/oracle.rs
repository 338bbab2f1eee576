//! Independent brute-force verification layer.
//!
//! Joint outcome probabilities are computed straight from the generalized
//! Born rule: the process matrix is traced against the tensor product of the
//! parties' CP-map matrices (in the transposed representation, so that a
//! measure-and-reprepare event with effect `P` and repreparation `sigma` is
//! the matrix `P ⊗ sigma^T` on the party's input and output factors).
//! Signaling strength sweeps a finite, seed-deterministic family of sender
//! preparations and receiver measurements; absence of signaling within the
//! family is evidence, not proof. Nothing here touches the discovery code
//! paths.

use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::generate::{random_pure_state_from, random_unitary_from};
use crate::mat::{contract_factors_with, ComplexMatrix};
use crate::process::{ProcessMatrix, SystemLayout};

/// A party's CP map in the transposed matrix representation, living on the
/// party's input factor followed by its output subsystem factors.
#[derive(Debug, Clone)]
pub struct CpMapMatrix {
    party: String,
    matrix: ComplexMatrix,
}

impl CpMapMatrix {
    /// Wraps a matrix for the named party; the side must equal the product
    /// of the party's input and output dimensions.
    pub fn new(layout: &SystemLayout, party: &str, matrix: ComplexMatrix) -> Result<Self> {
        let idx = layout.party_index(party)?;
        let spec = &layout.parties()[idx];
        let side = spec.input_dim * spec.output_dim();
        if !matrix.is_square() || matrix.rows() != side {
            return Err(Error::Layout(format!(
                "map side {} does not match party '{party}' dimension {side}",
                matrix.rows()
            )));
        }
        Ok(Self {
            party: party.to_string(),
            matrix,
        })
    }

    pub fn party(&self) -> &str {
        &self.party
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }
}

/// The deterministic do-nothing event: trace the input, prepare the
/// maximally mixed output. Trace-preserving for every dimension.
pub fn default_cp_map(layout: &SystemLayout, party: &str) -> Result<CpMapMatrix> {
    let idx = layout.party_index(party)?;
    let spec = &layout.parties()[idx];
    let d_out = spec.output_dim();
    let matrix = ComplexMatrix::identity(spec.input_dim)
        .kron(&ComplexMatrix::identity(d_out).scale(Complex64::new(1.0 / d_out as f64, 0.0)))?;
    CpMapMatrix::new(layout, party, matrix)
}

/// The measure-then-reprepare event: effect `measured_proj` on the input,
/// repreparation `prepared_state` on the output. Its matrix is
/// `measured_proj ⊗ prepared_state^T`.
pub fn prepare_measure_cj(
    layout: &SystemLayout,
    party: &str,
    measured_proj: &ComplexMatrix,
    prepared_state: &ComplexMatrix,
) -> Result<CpMapMatrix> {
    let idx = layout.party_index(party)?;
    let spec = &layout.parties()[idx];
    if measured_proj.rows() != spec.input_dim || prepared_state.rows() != spec.output_dim() {
        return Err(Error::Contract(format!(
            "effect/state dimensions do not match party '{party}'"
        )));
    }
    for (name, m) in [("effect", measured_proj), ("state", prepared_state)] {
        if m.hermiticity_violation() > 1e-9 || m.min_eigenvalue()? < -1e-9 {
            return Err(Error::Contract(format!(
                "{name} supplied to the oracle is not positive semidefinite"
            )));
        }
    }
    let matrix = measured_proj.kron(&prepared_state.transpose())?;
    CpMapMatrix::new(layout, party, matrix)
}

/// A choice of CP map for some parties; everyone else applies the default
/// deterministic map.
#[derive(Debug, Clone, Default)]
pub struct InstrumentSetting {
    overrides: Vec<CpMapMatrix>,
}

impl InstrumentSetting {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, map: CpMapMatrix) -> Self {
        self.overrides.push(map);
        self
    }

    fn resolve(&self, layout: &SystemLayout) -> Result<Vec<ComplexMatrix>> {
        let mut maps: Vec<Option<&CpMapMatrix>> = vec![None; layout.party_count()];
        for o in &self.overrides {
            let idx = layout.party_index(&o.party)?;
            if maps[idx].is_some() {
                return Err(Error::Contract(format!(
                    "two maps supplied for party '{}'",
                    o.party
                )));
            }
            maps[idx] = Some(o);
        }
        let mut out = Vec::with_capacity(layout.party_count());
        for (idx, slot) in maps.iter().enumerate() {
            match slot {
                Some(m) => out.push(m.matrix.clone()),
                None => out.push(default_cp_map(layout, &layout.parties()[idx].name)?.matrix),
            }
        }
        Ok(out)
    }
}

/// Joint probability of the chosen CP maps: the process matrix traced
/// against the tensor product of all per-party map matrices.
pub fn probability(w: &ProcessMatrix, setting: &InstrumentSetting) -> Result<f64> {
    let maps = setting.resolve(w.layout())?;
    let mut product: Option<ComplexMatrix> = None;
    for m in &maps {
        product = Some(match product {
            None => m.clone(),
            Some(acc) => acc.kron(m)?,
        });
    }
    let k = product.expect("layouts have at least one party");
    Ok(trace_product(w.matrix(), &k))
}

/// `Re Tr(a b)` without materializing the product.
fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    debug_assert_eq!(a.rows(), b.rows());
    let n = a.rows();
    let mut acc = Complex64::ZERO;
    for i in 0..n {
        let row = i * n;
        for j in 0..n {
            acc += a.data()[row + j] * b.data()[j * n + i];
        }
    }
    acc.re
}

fn basis_projector(dim: usize, b: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(dim, dim);
    m.set(b, b, Complex64::ONE);
    m
}

fn rotated_projector(u: &ComplexMatrix, b: usize) -> ComplexMatrix {
    let d = u.rows();
    ComplexMatrix::from_fn(d, d, |i, j| u.get(i, b) * u.get(j, b).conj())
}

/// Largest change a sender's choice of deterministic preparation can induce
/// on a receiver's outcome probability, over a finite setting family:
/// computational-basis preparations plus `n_settings` random pure states on
/// the sender side, computational-basis measurements plus `n_settings`
/// random rotated bases on the receiver side. All other parties apply the
/// default deterministic map. Deterministic per seed.
pub fn signaling_strength(
    w: &ProcessMatrix,
    sender: &str,
    receiver: &str,
    n_settings: usize,
    seed: u64,
) -> Result<f64> {
    let layout = w.layout();
    let s_idx = layout.party_index(sender)?;
    let r_idx = layout.party_index(receiver)?;
    if s_idx == r_idx {
        return Err(Error::Contract("sender and receiver must differ".into()));
    }
    let s_spec = &layout.parties()[s_idx];
    let r_spec = &layout.parties()[r_idx];

    // Contract everyone else's default map once; what is left lives on the
    // sender and receiver factors only.
    let mut other_positions = Vec::new();
    let mut default_product: Option<ComplexMatrix> = None;
    for (p, spec) in layout.parties().iter().enumerate() {
        if p == s_idx || p == r_idx {
            continue;
        }
        other_positions.push(layout.input_position(p));
        for s in 0..spec.output_subdims.len() {
            other_positions.push(layout.output_position(p, s)?);
        }
        let m = default_cp_map(layout, &spec.name)?.matrix;
        default_product = Some(match default_product {
            None => m,
            Some(acc) => acc.kron(&m)?,
        });
    }
    let w_eff = match default_product {
        None => w.matrix().clone(),
        Some(op) => contract_factors_with(w.matrix(), &layout.shape(), &other_positions, &op)?,
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d_s_out = s_spec.output_dim();
    let mut preparations: Vec<ComplexMatrix> =
        (0..d_s_out).map(|b| basis_projector(d_s_out, b)).collect();
    for _ in 0..n_settings {
        preparations.push(random_pure_state_from(&mut rng, d_s_out));
    }
    let d_r_in = r_spec.input_dim;
    let mut effects: Vec<ComplexMatrix> =
        (0..d_r_in).map(|b| basis_projector(d_r_in, b)).collect();
    for _ in 0..n_settings {
        let u = random_unitary_from(&mut rng, d_r_in);
        for b in 0..d_r_in {
            effects.push(rotated_projector(&u, b));
        }
    }

    let id_s_in = ComplexMatrix::identity(s_spec.input_dim);
    let r_out_mixed = ComplexMatrix::identity(r_spec.output_dim())
        .scale(Complex64::new(1.0 / r_spec.output_dim() as f64, 0.0));

    let mut strength = 0.0f64;
    for effect in &effects {
        let m_r = effect.kron(&r_out_mixed)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for prep in &preparations {
            let m_s = id_s_in.kron(&prep.transpose())?;
            let k = if s_idx < r_idx {
                m_s.kron(&m_r)?
            } else {
                m_r.kron(&m_s)?
            };
            let p = trace_product(&w_eff, &k);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        strength = strength.max(hi - lo);
    }
    Ok(strength)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChoiMatrix;
    use crate::discovery::build_test_matrix_with_identities;
    use crate::generate::random_density;
    use crate::process::{PartySpec, SubsystemRef};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_party(rho_seed: u64) -> ProcessMatrix {
        let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2])]).unwrap();
        ProcessMatrix::new(
            layout,
            random_density(2, rho_seed)
                .unwrap()
                .kron(&ComplexMatrix::identity(2))
                .unwrap(),
        )
        .unwrap()
    }

    fn identity_chain() -> ProcessMatrix {
        let layout = SystemLayout::new(vec![
            PartySpec::new("A", 2, vec![2]),
            PartySpec::new("B", 2, vec![2]),
        ])
        .unwrap();
        build_test_matrix_with_identities(
            &layout,
            &[("A".into(), random_density(2, 3).unwrap())],
            &[(
                "B".into(),
                vec![SubsystemRef::new("A", 0)],
                ChoiMatrix::identity(2),
            )],
            &[SubsystemRef::new("B", 0)],
        )
        .unwrap()
    }

    #[test]
    fn default_maps_give_unit_probability() {
        let w = single_party(1);
        let p = probability(&w, &InstrumentSetting::new()).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
        let chain = identity_chain();
        let p = probability(&chain, &InstrumentSetting::new()).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn born_rule_on_single_state() {
        let w = single_party(2);
        let rho = crate::discovery::extract_state(&w, "A").unwrap();
        let proj = basis_projector(2, 0);
        let mixed = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        let layout = w.layout().clone();
        let setting = InstrumentSetting::new()
            .with(prepare_measure_cj(&layout, "A", &proj, &mixed).unwrap());
        let p = probability(&w, &setting).unwrap();
        assert!((p - rho.get(0, 0).re).abs() < 1e-10);
    }

    #[test]
    fn born_rule_with_complex_effect() {
        // Effect |y+><y+| on rho = |y+><y+| must give probability one.
        let w_layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![2])]).unwrap();
        let y_plus = ComplexMatrix::new(
            2,
            2,
            vec![c(0.5, 0.0), c(0.0, -0.5), c(0.0, 0.5), c(0.5, 0.0)],
        )
        .unwrap();
        let w = ProcessMatrix::new(
            w_layout.clone(),
            y_plus.kron(&ComplexMatrix::identity(2)).unwrap(),
        )
        .unwrap();
        let mixed = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        let setting = InstrumentSetting::new()
            .with(prepare_measure_cj(&w_layout, "A", &y_plus, &mixed).unwrap());
        let p = probability(&w, &setting).unwrap();
        assert!((p - 1.0).abs() < 1e-10, "got {p}");
    }

    #[test]
    fn identity_channel_transmits_basis_states() {
        let w = identity_chain();
        let layout = w.layout().clone();
        let mixed = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        // A prepares |1>, B measures |1><1|.
        let setting = InstrumentSetting::new()
            .with(
                prepare_measure_cj(
                    &layout,
                    "A",
                    &ComplexMatrix::identity(2),
                    &basis_projector(2, 1),
                )
                .unwrap(),
            )
            .with(prepare_measure_cj(&layout, "B", &basis_projector(2, 1), &mixed).unwrap());
        let p = probability(&w, &setting).unwrap();
        assert!((p - 1.0).abs() < 1e-9, "got {p}");
        // Mismatched preparation and measurement never coincide.
        let setting = InstrumentSetting::new()
            .with(
                prepare_measure_cj(
                    &layout,
                    "A",
                    &ComplexMatrix::identity(2),
                    &basis_projector(2, 0),
                )
                .unwrap(),
            )
            .with(prepare_measure_cj(&layout, "B", &basis_projector(2, 1), &mixed).unwrap());
        assert!(probability(&w, &setting).unwrap().abs() < 1e-9);
    }

    #[test]
    fn basis_instrument_sums_to_a_deterministic_map() {
        // Summing measure-and-reprepare matrices over a projective basis
        // gives the matrix of a trace-preserving map: tracing its output
        // factor leaves the identity on the input.
        let layout = SystemLayout::new(vec![PartySpec::new("A", 2, vec![3])]).unwrap();
        let sigma = crate::generate::random_density(3, 4).unwrap();
        let mut total = ComplexMatrix::zeros(6, 6);
        for b in 0..2 {
            let cj = prepare_measure_cj(&layout, "A", &basis_projector(2, b), &sigma).unwrap();
            total = total.add(cj.matrix()).unwrap();
        }
        let shape = crate::mat::SystemShape::new(vec![2, 3]).unwrap();
        let in_marginal = total.partial_trace(&shape, &[1]).unwrap();
        assert!(in_marginal
            .approx_equal(&ComplexMatrix::identity(2), 1e-12)
            .unwrap());
    }

    #[test]
    fn complete_instrument_sums_to_one() {
        let w = identity_chain();
        let layout = w.layout().clone();
        let mixed = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        let total: f64 = (0..2)
            .map(|b| {
                let setting = InstrumentSetting::new().with(
                    prepare_measure_cj(&layout, "B", &basis_projector(2, b), &mixed).unwrap(),
                );
                probability(&w, &setting).unwrap()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probability_is_affine_in_a_party_map() {
        let w = identity_chain();
        let layout = w.layout().clone();
        let mixed = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        let e0 = basis_projector(2, 0);
        let u = crate::generate::random_unitary(2, 5).unwrap();
        let e1 = rotated_projector(&u, 0);
        let m0 = prepare_measure_cj(&layout, "B", &e0, &mixed).unwrap();
        let m1 = prepare_measure_cj(&layout, "B", &e1, &mixed).unwrap();
        let blend = CpMapMatrix::new(
            &layout,
            "B",
            m0.matrix()
                .scale(c(0.3, 0.0))
                .add(&m1.matrix().scale(c(0.7, 0.0)))
                .unwrap(),
        )
        .unwrap();
        let p0 = probability(&w, &InstrumentSetting::new().with(m0)).unwrap();
        let p1 = probability(&w, &InstrumentSetting::new().with(m1)).unwrap();
        let pb = probability(&w, &InstrumentSetting::new().with(blend)).unwrap();
        assert!((pb - (0.3 * p0 + 0.7 * p1)).abs() < 1e-10);
    }

    #[test]
    fn identity_channel_signals_forward_only() {
        let w = identity_chain();
        let forward = signaling_strength(&w, "A", "B", 2, 11).unwrap();
        assert!((forward - 1.0).abs() < 1e-9, "forward {forward}");
        let backward = signaling_strength(&w, "B", "A", 4, 11).unwrap();
        assert!(backward < 1e-9, "backward {backward}");
    }

    #[test]
    fn product_process_never_signals() {
        let layout = SystemLayout::new(vec![
            PartySpec::new("A", 2, vec![2]),
            PartySpec::new("B", 2, vec![2]),
        ])
        .unwrap();
        let w = build_test_matrix_with_identities(
            &layout,
            &[
                ("A".into(), random_density(2, 6).unwrap()),
                ("B".into(), random_density(2, 7).unwrap()),
            ],
            &[],
            &[SubsystemRef::new("A", 0), SubsystemRef::new("B", 0)],
        )
        .unwrap();
        assert!(signaling_strength(&w, "A", "B", 3, 1).unwrap() < 1e-10);
        assert!(signaling_strength(&w, "B", "A", 3, 1).unwrap() < 1e-10);
    }
}
