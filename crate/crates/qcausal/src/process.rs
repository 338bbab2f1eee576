//! The process-matrix data model: parties, system layout, validity checks.
//!
//! A process matrix lives on the joint input/output spaces of all parties.
//! The flat tensor-factor order is fixed by the party sequence: for each
//! party in order, its input system followed by its output subsystems. A
//! party whose output is not divided is represented as a single output
//! subsystem of full dimension.

use serde::{Deserialize, Serialize};

use crate::eigen::min_eigenvalue_estimate;
use crate::error::{Error, Result};
use crate::mat::{ComplexMatrix, SystemShape};

/// Default tolerance for the positive-semidefiniteness check.
pub const DEFAULT_EPS_PSD: f64 = 1e-8;
/// Default relative tolerance for the trace-normalization check.
pub const DEFAULT_EPS_TRACE: f64 = 1e-6;

/// Above this side length the smallest eigenvalue is estimated with a
/// truncated Krylov iteration instead of a full spectrum.
const EXACT_SPECTRUM_LIMIT: usize = 256;
const PSD_ESTIMATE_STEPS: usize = 64;

/// One party: an input system and an ordered list of output subsystems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartySpec {
    pub name: String,
    pub input_dim: usize,
    pub output_subdims: Vec<usize>,
}

impl PartySpec {
    pub fn new(name: impl Into<String>, input_dim: usize, output_subdims: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            input_dim,
            output_subdims,
        }
    }

    /// Product of the output subsystem dimensions.
    pub fn output_dim(&self) -> usize {
        self.output_subdims.iter().product()
    }

    /// True when the output is a single undivided system.
    pub fn has_undivided_output(&self) -> bool {
        self.output_subdims.len() == 1
    }
}

/// A reference to one output subsystem of a party. For a party with an
/// undivided output, index 0 refers to the whole output system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(String, usize)", into = "(String, usize)")]
pub struct SubsystemRef {
    pub party: String,
    pub subsystem: usize,
}

impl SubsystemRef {
    pub fn new(party: impl Into<String>, subsystem: usize) -> Self {
        Self {
            party: party.into(),
            subsystem,
        }
    }
}

impl From<(String, usize)> for SubsystemRef {
    fn from((party, subsystem): (String, usize)) -> Self {
        Self { party, subsystem }
    }
}

impl From<SubsystemRef> for (String, usize) {
    fn from(r: SubsystemRef) -> Self {
        (r.party, r.subsystem)
    }
}

/// Ordered party specs with the derived flat tensor-factor bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PartySpec>", into = "Vec<PartySpec>")]
pub struct SystemLayout {
    parties: Vec<PartySpec>,
    input_pos: Vec<usize>,
    output_pos: Vec<Vec<usize>>,
    flat_dims: Vec<usize>,
}

impl TryFrom<Vec<PartySpec>> for SystemLayout {
    type Error = Error;
    fn try_from(parties: Vec<PartySpec>) -> Result<Self> {
        Self::new(parties)
    }
}

impl From<SystemLayout> for Vec<PartySpec> {
    fn from(layout: SystemLayout) -> Self {
        layout.parties
    }
}

impl SystemLayout {
    pub fn new(parties: Vec<PartySpec>) -> Result<Self> {
        if parties.is_empty() {
            return Err(Error::Layout("a layout needs at least one party".into()));
        }
        for (i, p) in parties.iter().enumerate() {
            if p.input_dim == 0 || p.output_subdims.is_empty() || p.output_subdims.contains(&0) {
                return Err(Error::Layout(format!(
                    "party '{}' has invalid dimensions",
                    p.name
                )));
            }
            if parties[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Layout(format!("duplicate party name '{}'", p.name)));
            }
        }
        let mut input_pos = Vec::with_capacity(parties.len());
        let mut output_pos = Vec::with_capacity(parties.len());
        let mut flat_dims = Vec::new();
        for p in &parties {
            input_pos.push(flat_dims.len());
            flat_dims.push(p.input_dim);
            let mut outs = Vec::with_capacity(p.output_subdims.len());
            for &d in &p.output_subdims {
                outs.push(flat_dims.len());
                flat_dims.push(d);
            }
            output_pos.push(outs);
        }
        let mut total: usize = 1;
        for &d in &flat_dims {
            total = total
                .checked_mul(d)
                .ok_or_else(|| Error::Dimension("layout dimension overflow".into()))?;
        }
        Ok(Self {
            parties,
            input_pos,
            output_pos,
            flat_dims,
        })
    }

    pub fn parties(&self) -> &[PartySpec] {
        &self.parties
    }

    pub fn party_count(&self) -> usize {
        self.parties.len()
    }

    pub fn party_index(&self, name: &str) -> Result<usize> {
        self.parties
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Layout(format!("unknown party '{name}'")))
    }

    /// Flat factor dimensions in the canonical order.
    pub fn flat_dims(&self) -> &[usize] {
        &self.flat_dims
    }

    pub fn shape(&self) -> SystemShape {
        SystemShape::new(self.flat_dims.clone()).expect("layout dims are validated")
    }

    pub fn total_dim(&self) -> usize {
        self.flat_dims.iter().product()
    }

    /// Flat position of a party's input factor.
    pub fn input_position(&self, party: usize) -> usize {
        self.input_pos[party]
    }

    /// Flat position of one output subsystem factor.
    pub fn output_position(&self, party: usize, subsystem: usize) -> Result<usize> {
        self.output_pos
            .get(party)
            .and_then(|outs| outs.get(subsystem))
            .copied()
            .ok_or_else(|| {
                Error::Layout(format!(
                    "party index {party} has no output subsystem {subsystem}"
                ))
            })
    }

    /// Flat position for a named subsystem reference.
    pub fn position_of(&self, r: &SubsystemRef) -> Result<usize> {
        let p = self.party_index(&r.party)?;
        self.output_position(p, r.subsystem)
    }

    /// Product of every party's total output dimension.
    pub fn output_dims_product(&self) -> f64 {
        self.parties
            .iter()
            .map(|p| p.output_dim() as f64)
            .product()
    }

    /// Dimension of one subsystem.
    pub fn subsystem_dim(&self, r: &SubsystemRef) -> Result<usize> {
        let p = self.party_index(&r.party)?;
        self.parties[p]
            .output_subdims
            .get(r.subsystem)
            .copied()
            .ok_or_else(|| {
                Error::Layout(format!(
                    "party '{}' has no output subsystem {}",
                    r.party, r.subsystem
                ))
            })
    }
}

/// What to remove in [`ProcessMatrix::trace_out`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceTarget {
    /// One output subsystem.
    OutputSubsystem(SubsystemRef),
    /// Every output subsystem of a party.
    WholeOutput(String),
    /// A party's input system.
    Input(String),
    /// A party's input and all its outputs.
    WholeParty(String),
}

/// A process matrix: the dense numeric carrier plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix {
    layout: SystemLayout,
    matrix: ComplexMatrix,
}

/// Which validity check produced an issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationCheck {
    Hermiticity,
    PositiveSemidefinite,
    TraceNormalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Failure,
}

#[derive(Debug, Clone)]
pub struct ValidationIssue {
    pub check: ValidationCheck,
    pub severity: Severity,
    pub violation: f64,
}

/// Outcome of [`ProcessMatrix::validate`]; an empty issue list means valid.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub hermiticity_violation: f64,
    /// `max(0, -lambda_min)` of the Hermitian part.
    pub psd_violation: f64,
    /// True when the smallest eigenvalue came from a truncated Krylov
    /// iteration rather than a full spectrum.
    pub psd_estimated: bool,
    pub measured_trace: f64,
    pub expected_trace: f64,
    /// Relative deviation of the trace from the expected normalization.
    pub trace_violation: f64,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    /// True when no check failed hard (warnings allowed).
    pub fn is_valid(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Failure)
    }
}

impl ProcessMatrix {
    /// Wraps a matrix with its layout; the side must match the layout product.
    pub fn new(layout: SystemLayout, matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() != layout.total_dim() {
            return Err(Error::Layout(format!(
                "matrix side {} does not match layout dimension {}",
                matrix.rows(),
                layout.total_dim()
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn total_dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Checks hermiticity, positive semidefiniteness and trace normalization.
    ///
    /// Trace deviations between `eps_trace` and ten times `eps_trace`
    /// (relative) are reported as warnings; anything beyond fails hard.
    pub fn validate(&self, eps_psd: f64, eps_trace: f64) -> ValidationReport {
        let herm = self.matrix.hermiticity_violation();
        let side = self.matrix.rows();
        let (lambda_min, estimated) = if side <= EXACT_SPECTRUM_LIMIT {
            (
                self.matrix.min_eigenvalue().unwrap_or(f64::NEG_INFINITY),
                false,
            )
        } else {
            (
                min_eigenvalue_estimate(&self.matrix, PSD_ESTIMATE_STEPS)
                    .unwrap_or(f64::NEG_INFINITY),
                true,
            )
        };
        let psd_violation = (-lambda_min).max(0.0);
        let measured = self.matrix.trace().re;
        let expected = self.layout.output_dims_product();
        let trace_violation = (measured - expected).abs() / expected;

        let mut issues = Vec::new();
        if herm > eps_psd {
            issues.push(ValidationIssue {
                check: ValidationCheck::Hermiticity,
                severity: Severity::Failure,
                violation: herm,
            });
        }
        if psd_violation > eps_psd {
            issues.push(ValidationIssue {
                check: ValidationCheck::PositiveSemidefinite,
                severity: Severity::Failure,
                violation: psd_violation,
            });
        }
        if trace_violation > eps_trace {
            issues.push(ValidationIssue {
                check: ValidationCheck::TraceNormalization,
                severity: if trace_violation > 10.0 * eps_trace {
                    Severity::Failure
                } else {
                    Severity::Warning
                },
                violation: trace_violation,
            });
        }
        ValidationReport {
            hermiticity_violation: herm,
            psd_violation,
            psd_estimated: estimated,
            measured_trace: measured,
            expected_trace: expected,
            trace_violation,
            issues,
        }
    }

    /// Validation with the default tolerances.
    pub fn validate_default(&self) -> ValidationReport {
        self.validate(DEFAULT_EPS_PSD, DEFAULT_EPS_TRACE)
    }

    /// Removes the targeted factors by partial trace.
    ///
    /// The total trace is preserved. The layout is updated: removed output
    /// subsystems disappear (remaining ones are renumbered), while a party
    /// stripped of all outputs keeps a dimension-1 remnant. Removed inputs
    /// likewise leave a dimension-1 remnant.
    pub fn trace_out(&self, targets: &[TraceTarget]) -> Result<ProcessMatrix> {
        let mut remove_input = vec![false; self.layout.party_count()];
        let mut remove_output: Vec<Vec<bool>> = self
            .layout
            .parties()
            .iter()
            .map(|p| vec![false; p.output_subdims.len()])
            .collect();

        for target in targets {
            match target {
                TraceTarget::OutputSubsystem(r) => {
                    let p = self.layout.party_index(&r.party)?;
                    let flags = &mut remove_output[p];
                    let slot = flags.get_mut(r.subsystem).ok_or_else(|| {
                        Error::Layout(format!(
                            "party '{}' has no output subsystem {}",
                            r.party, r.subsystem
                        ))
                    })?;
                    if *slot {
                        return Err(Error::Layout(format!(
                            "subsystem {} of party '{}' targeted twice",
                            r.subsystem, r.party
                        )));
                    }
                    *slot = true;
                }
                TraceTarget::WholeOutput(name) => {
                    let p = self.layout.party_index(name)?;
                    for slot in remove_output[p].iter_mut() {
                        *slot = true;
                    }
                }
                TraceTarget::Input(name) => {
                    let p = self.layout.party_index(name)?;
                    remove_input[p] = true;
                }
                TraceTarget::WholeParty(name) => {
                    let p = self.layout.party_index(name)?;
                    remove_input[p] = true;
                    for slot in remove_output[p].iter_mut() {
                        *slot = true;
                    }
                }
            }
        }

        let mut traced_positions = Vec::new();
        for (p, flags) in remove_output.iter().enumerate() {
            if remove_input[p] {
                traced_positions.push(self.layout.input_position(p));
            }
            for (s, &removed) in flags.iter().enumerate() {
                if removed {
                    traced_positions.push(self.layout.output_position(p, s)?);
                }
            }
        }

        let reduced = self
            .matrix
            .partial_trace(&self.layout.shape(), &traced_positions)?;

        let mut new_parties = Vec::with_capacity(self.layout.party_count());
        for (p, party) in self.layout.parties().iter().enumerate() {
            let input_dim = if remove_input[p] { 1 } else { party.input_dim };
            let mut subdims: Vec<usize> = party
                .output_subdims
                .iter()
                .enumerate()
                .filter(|(s, _)| !remove_output[p][*s])
                .map(|(_, &d)| d)
                .collect();
            if subdims.is_empty() {
                subdims.push(1);
            }
            new_parties.push(PartySpec::new(party.name.clone(), input_dim, subdims));
        }
        let new_layout = SystemLayout::new(new_parties)?;

        // Dimension-1 remnants in the layout are extra factors of size 1; the
        // traced matrix has the same total dimension.
        ProcessMatrix::new(new_layout, reduced)
    }
}
