//! States, observables (quantum and classical), Born-rule distributions, and
//! seeded sampling.
//!
//! A quantum observable is a finite outcome list with one positive effect per
//! outcome, effects summing to the identity. The classical counterpart stores
//! one fuzzy membership vector over a finite point set Ω per outcome. Both
//! assign outcome probabilities to states through the same rule: evaluate the
//! effect at the state.

use nalgebra::DVector;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    self, norm_scale, ComplexMatrix, HermitianOperator, SpectralDecomposition,
};
use crate::C64;

/// Slack allowed on effect eigenvalues around `[0, 1]`.
pub const TOL_EFFECT: f64 = 1e-10;
/// Tolerance for effects summing to the identity.
pub const TOL_COMPLETENESS: f64 = 1e-10;
/// Tolerance for a distribution summing to 1.
pub const TOL_DISTRIBUTION: f64 = 1e-10;
/// Most negative probability admitted before the distribution is rejected.
pub const TOL_PROB_NEG: f64 = 1e-12;
/// Default tolerance for pairwise effect commutativity.
pub const TOL_COMMUTE: f64 = 1e-10;
/// Tolerance on the norm of a pure state vector.
pub const TOL_PURE_NORM: f64 = 1e-12;
/// Tolerance for classical effects summing to 1 at every point.
pub const TOL_CLASSICAL_SUM: f64 = 1e-12;
/// Tolerance on the trace and eigenvalue floor of a density matrix.
pub const TOL_DENSITY: f64 = 1e-10;

/// Outcome label: a real value, a string, or a tuple of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Real(f64),
    Label(String),
    Tuple(Vec<Outcome>),
}

impl Outcome {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Outcome::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Outcome]> {
        match self {
            Outcome::Tuple(items) => Some(items),
            _ => None,
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Real(x) => write!(f, "{x}"),
            Outcome::Label(s) => write!(f, "{s}"),
            Outcome::Tuple(items) => {
                write!(f, "(")?;
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Quantum state: a unit vector or a density matrix.
#[derive(Debug, Clone)]
pub enum State {
    Pure(DVector<C64>),
    Mixed(ComplexMatrix),
}

impl State {
    /// Pure state from a vector with `‖v‖ = 1` within [`TOL_PURE_NORM`].
    pub fn pure(vector: DVector<C64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::InvalidValue("state vector must be non-empty".into()));
        }
        if vector.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidValue("state vector contains non-finite entries".into()));
        }
        let norm = vector.norm();
        if (norm - 1.0).abs() > TOL_PURE_NORM {
            return Err(Error::InvalidValue(format!(
                "pure state vector has norm {norm}, expected 1"
            )));
        }
        Ok(State::Pure(vector))
    }

    /// Pure state `|k>` in dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, size: dim });
        }
        Ok(State::Pure(operator::basis_vector(dim, k)))
    }

    /// Mixed state: Hermitian, eigenvalues above `-1e-10`, unit trace.
    pub fn mixed(density: ComplexMatrix) -> Result<Self> {
        let herm = HermitianOperator::new(density)?;
        let trace = herm.matrix().trace();
        if (trace.re - 1.0).abs() > TOL_DENSITY || trace.im.abs() > TOL_DENSITY {
            return Err(Error::InvalidValue(format!(
                "density matrix has trace {:.12}, expected 1",
                trace.re
            )));
        }
        let eigs = operator::symmetrized_eigenvalues(herm.matrix())?;
        if let Some(low) = eigs.first() {
            if *low < -TOL_DENSITY {
                return Err(Error::InvalidValue(format!(
                    "density matrix has negative eigenvalue {low:.3e}"
                )));
            }
        }
        Ok(State::Mixed(herm.matrix().clone()))
    }

    /// Maximally mixed state `I/dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        State::Mixed(ComplexMatrix::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)))
    }

    pub fn dim(&self) -> usize {
        match self {
            State::Pure(v) => v.len(),
            State::Mixed(m) => m.rows(),
        }
    }

    /// Evaluate an effect at this state: `<u, E u>` or `trace(rho E)`.
    pub fn evaluate(&self, effect: &ComplexMatrix) -> Result<f64> {
        match self {
            State::Pure(v) => {
                let ev = effect.apply(v)?;
                Ok(v.dotc(&ev).re)
            }
            State::Mixed(rho) => Ok(rho.matmul(effect)?.trace().re),
        }
    }
}

/// Quantum observable: outcome labels with one PSD effect each, summing to I.
#[derive(Debug, Clone, Serialize)]
pub struct Observable {
    outcomes: Vec<Outcome>,
    effects: Vec<ComplexMatrix>,
}

impl Observable {
    /// Validate and construct. Effects must be Hermitian with eigenvalues in
    /// `[-1e-10, 1+1e-10]` and sum to the identity within [`TOL_COMPLETENESS`].
    pub fn new(outcomes: Vec<Outcome>, effects: Vec<ComplexMatrix>) -> Result<Self> {
        if outcomes.is_empty() || outcomes.len() != effects.len() {
            return Err(Error::InvalidValue(format!(
                "observable needs matching non-empty outcome and effect lists, got {} and {}",
                outcomes.len(),
                effects.len()
            )));
        }
        let dim = effects[0].rows();
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for e in &effects {
            if !e.is_square() || e.rows() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "effects must all be {dim}x{dim}, got {}x{}",
                    e.rows(),
                    e.cols()
                )));
            }
            let asym = e.sub(&e.adjoint())?.frobenius_norm();
            if asym > operator::TOL_HERM * norm_scale(e.frobenius_norm()) {
                return Err(Error::NonHermitian { residual: asym });
            }
            let eigs = operator::symmetrized_eigenvalues(e)?;
            for lambda in eigs {
                if !(-TOL_EFFECT..=1.0 + TOL_EFFECT).contains(&lambda) {
                    return Err(Error::InvalidValue(format!(
                        "effect eigenvalue {lambda:.12} outside [0, 1]"
                    )));
                }
            }
            sum = sum.add(e)?;
        }
        let completeness = sum.sub(&ComplexMatrix::identity(dim))?.frobenius_norm();
        if completeness > TOL_COMPLETENESS {
            return Err(Error::InvalidValue(format!(
                "effects sum to identity with residual {completeness:.3e}"
            )));
        }
        Ok(Self { outcomes, effects })
    }

    /// Single-outcome observable with effect `I`.
    pub fn trivial(dim: usize, label: Outcome) -> Self {
        Self { outcomes: vec![label], effects: vec![ComplexMatrix::identity(dim)] }
    }

    pub fn dim(&self) -> usize {
        self.effects[0].rows()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn effects(&self) -> &[ComplexMatrix] {
        &self.effects
    }

    pub fn effect(&self, index: usize) -> &ComplexMatrix {
        &self.effects[index]
    }

    /// Index of an outcome, by equality of labels.
    pub fn position(&self, outcome: &Outcome) -> Option<usize> {
        self.outcomes.iter().position(|o| o == outcome)
    }
}

impl<'de> Deserialize<'de> for Observable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            outcomes: Vec<Outcome>,
            effects: Vec<ComplexMatrix>,
        }
        let wire = Wire::deserialize(deserializer)?;
        Observable::new(wire.outcomes, wire.effects).map_err(D::Error::custom)
    }
}

/// Classical observable over a finite point set Ω: one fuzzy membership
/// vector per outcome, summing to 1 at every point.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalObservable {
    omega_size: usize,
    outcomes: Vec<Outcome>,
    effects: Vec<Vec<f64>>,
}

impl ClassicalObservable {
    pub fn new(omega_size: usize, outcomes: Vec<Outcome>, effects: Vec<Vec<f64>>) -> Result<Self> {
        if omega_size == 0 {
            return Err(Error::InvalidValue("omega_size must be positive".into()));
        }
        if outcomes.is_empty() || outcomes.len() != effects.len() {
            return Err(Error::InvalidValue(format!(
                "classical observable needs matching non-empty outcome and effect lists, got {} and {}",
                outcomes.len(),
                effects.len()
            )));
        }
        for e in &effects {
            if e.len() != omega_size {
                return Err(Error::DimensionMismatch(format!(
                    "classical effect has {} entries, expected {omega_size}",
                    e.len()
                )));
            }
            for &x in e {
                if !x.is_finite() || !(-TOL_CLASSICAL_SUM..=1.0 + TOL_CLASSICAL_SUM).contains(&x) {
                    return Err(Error::InvalidValue(format!(
                        "classical effect entry {x} outside [0, 1]"
                    )));
                }
            }
        }
        for omega in 0..omega_size {
            let total: f64 = effects.iter().map(|e| e[omega]).sum();
            if (total - 1.0).abs() > TOL_CLASSICAL_SUM {
                return Err(Error::InvalidValue(format!(
                    "classical effects sum to {total:.15} at point {omega}, expected 1"
                )));
            }
        }
        Ok(Self { omega_size, outcomes, effects })
    }

    /// Crisp observable from a partition: point ω is assigned outcome
    /// `assignment[ω]` with certainty.
    pub fn crisp(omega_size: usize, outcomes: Vec<Outcome>, assignment: &[usize]) -> Result<Self> {
        if assignment.len() != omega_size {
            return Err(Error::DimensionMismatch(format!(
                "assignment covers {} points, expected {omega_size}",
                assignment.len()
            )));
        }
        let mut effects = vec![vec![0.0; omega_size]; outcomes.len()];
        for (omega, &x) in assignment.iter().enumerate() {
            if x >= outcomes.len() {
                return Err(Error::IndexOutOfRange { index: x, size: outcomes.len() });
            }
            effects[x][omega] = 1.0;
        }
        Self::new(omega_size, outcomes, effects)
    }

    pub fn omega_size(&self) -> usize {
        self.omega_size
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn effects(&self) -> &[Vec<f64>] {
        &self.effects
    }

    /// Embed into the quantum formalism: each effect vector becomes a diagonal
    /// matrix on a space of dimension `omega_size`.
    pub fn to_quantum(&self) -> Result<Observable> {
        let effects = self
            .effects
            .iter()
            .map(|e| ComplexMatrix::from_real_diagonal(e))
            .collect();
        Observable::new(self.outcomes.clone(), effects)
    }
}

impl<'de> Deserialize<'de> for ClassicalObservable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            omega_size: usize,
            outcomes: Option<Vec<Outcome>>,
            effects: Vec<Vec<f64>>,
        }
        let wire = Wire::deserialize(deserializer)?;
        let outcomes = wire
            .outcomes
            .unwrap_or_else(|| (0..wire.effects.len()).map(|k| Outcome::Real(k as f64)).collect());
        ClassicalObservable::new(wire.omega_size, outcomes, wire.effects).map_err(D::Error::custom)
    }
}

/// Probabilities over an ordered outcome list.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeDistribution {
    outcomes: Vec<Outcome>,
    probabilities: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn new(outcomes: Vec<Outcome>, probabilities: Vec<f64>) -> Result<Self> {
        if outcomes.len() != probabilities.len() || outcomes.is_empty() {
            return Err(Error::InvalidValue(format!(
                "distribution needs matching non-empty lists, got {} outcomes and {} probabilities",
                outcomes.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidValue("distribution contains non-finite probability".into()));
        }
        if let Some(&low) = probabilities.iter().min_by(|a, b| a.total_cmp(b)) {
            if low < -TOL_PROB_NEG {
                return Err(Error::InvalidValue(format!(
                    "distribution contains probability {low:.3e} below 0"
                )));
            }
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > TOL_DISTRIBUTION {
            return Err(Error::InvalidValue(format!(
                "distribution sums to {total:.15}, expected 1"
            )));
        }
        Ok(Self { outcomes, probabilities })
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Probability of an outcome by label equality; 0 if absent.
    pub fn probability_of(&self, outcome: &Outcome) -> f64 {
        self.outcomes
            .iter()
            .position(|o| o == outcome)
            .map_or(0.0, |k| self.probabilities[k])
    }

    /// Draw an outcome index by inverse CDF in stored order. Probabilities in
    /// `[-1e-12, 0)` are treated as 0.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &p) in self.probabilities.iter().enumerate() {
            acc += p.max(0.0);
            if u < acc {
                return k;
            }
        }
        self.probabilities.len() - 1
    }

    pub fn sample(&self, rng: &mut impl Rng) -> &Outcome {
        &self.outcomes[self.sample_index(rng)]
    }

    /// `max_x |p(x) - q(x)|` against a distribution over the same outcomes in
    /// the same order.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.outcomes, other.outcomes, "outcome lists differ");
        self.probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }
}

/// Result of a pairwise effect commutativity check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CommuteReport {
    pub commute: bool,
    pub max_residual: f64,
}

/// Spectral observable of a Hermitian operator: distinct eigenvalues
/// (ascending) as outcomes, spectral projectors as effects.
pub fn pvm_from_hermitian(a: &HermitianOperator, group_tol: f64) -> Result<Observable> {
    let dec = operator::spectral_decomposition(a, group_tol)?;
    pvm_from_decomposition(&dec)
}

/// Spectral observable from an existing decomposition.
pub fn pvm_from_decomposition(dec: &SpectralDecomposition) -> Result<Observable> {
    let outcomes = dec.eigenvalues().iter().map(|&x| Outcome::Real(x)).collect();
    Observable::new(outcomes, dec.projectors().to_vec())
}

/// Outcome probabilities of an observable in a state.
pub fn born_distribution(o: &Observable, rho: &State) -> Result<OutcomeDistribution> {
    if o.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observable dimension {} does not match state dimension {}",
            o.dim(),
            rho.dim()
        )));
    }
    let probabilities = o
        .effects()
        .iter()
        .map(|e| rho.evaluate(e))
        .collect::<Result<Vec<f64>>>()?;
    OutcomeDistribution::new(o.outcomes().to_vec(), probabilities)
}

/// Pairwise effect commutativity: passes iff `‖[E, G]‖ ≤ tol · max(1, ‖E‖‖G‖)`
/// for every effect pair, in operator norm. Reports the largest `‖[E, G]‖`.
pub fn commute_check(o1: &Observable, o2: &Observable, tol: f64) -> Result<CommuteReport> {
    if o1.dim() != o2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observables live on dimensions {} and {}",
            o1.dim(),
            o2.dim()
        )));
    }
    let mut commute = true;
    let mut max_residual = 0.0_f64;
    for e in o1.effects() {
        let norm_e = e.operator_norm()?;
        for g in o2.effects() {
            let residual = operator::commutator_matrices(e, g)?.operator_norm()?;
            max_residual = max_residual.max(residual);
            if residual > tol * norm_scale(norm_e * g.operator_norm()?) {
                commute = false;
            }
        }
    }
    Ok(CommuteReport { commute, max_residual })
}

/// Joint observable of two commuting observables on the same space. Outcomes
/// are pairs in row-major order; the effect of `(x, y)` is `E_x G_y`.
pub fn product_observable(o1: &Observable, o2: &Observable) -> Result<Observable> {
    let report = commute_check(o1, o2, TOL_COMMUTE)?;
    if !report.commute {
        return Err(Error::NonCommuting { node: None, residual: report.max_residual });
    }
    let mut outcomes = Vec::with_capacity(o1.len() * o2.len());
    let mut effects = Vec::with_capacity(o1.len() * o2.len());
    for (x, e) in o1.outcomes().iter().zip(o1.effects()) {
        for (y, g) in o2.outcomes().iter().zip(o2.effects()) {
            outcomes.push(Outcome::Tuple(vec![x.clone(), y.clone()]));
            // Jordan product (EG + GE)/2: exactly Hermitian, and equal to EG
            // under the commutativity that was just certified.
            let eg = e.matmul(g)?;
            let ge = g.matmul(e)?;
            effects.push(eg.add(&ge)?.scale(C64::new(0.5, 0.0)));
        }
    }
    Observable::new(outcomes, effects)
}

/// Joint observable of two classical observables over the same Ω: effects
/// multiply pointwise, so commutativity is automatic.
pub fn product_classical(
    o1: &ClassicalObservable,
    o2: &ClassicalObservable,
) -> Result<ClassicalObservable> {
    if o1.omega_size() != o2.omega_size() {
        return Err(Error::DimensionMismatch(format!(
            "classical observables live on point sets of sizes {} and {}",
            o1.omega_size(),
            o2.omega_size()
        )));
    }
    let mut outcomes = Vec::with_capacity(o1.len() * o2.len());
    let mut effects = Vec::with_capacity(o1.len() * o2.len());
    for (x, e) in o1.outcomes().iter().zip(o1.effects()) {
        for (y, g) in o2.outcomes().iter().zip(o2.effects()) {
            outcomes.push(Outcome::Tuple(vec![x.clone(), y.clone()]));
            effects.push(e.iter().zip(g).map(|(a, b)| a * b).collect());
        }
    }
    ClassicalObservable::new(o1.omega_size(), outcomes, effects)
}

/// Outcome probabilities of a classical observable at the point state ω:
/// probability of outcome `x` is `effects[x][ω]`.
pub fn classical_born(o: &ClassicalObservable, omega_index: usize) -> Result<OutcomeDistribution> {
    if omega_index >= o.omega_size() {
        return Err(Error::IndexOutOfRange { index: omega_index, size: o.omega_size() });
    }
    let probabilities = o.effects().iter().map(|e| e[omega_index]).collect();
    OutcomeDistribution::new(o.outcomes().to_vec(), probabilities)
}

/// Measure an observable in a state and draw one outcome.
pub fn sample(o: &Observable, rho: &State, rng: &mut impl Rng) -> Result<Outcome> {
    let dist = born_distribution(o, rho)?;
    Ok(dist.outcomes()[dist.sample_index(rng)].clone())
}

/// Measure a classical observable at a point and draw one outcome.
pub fn sample_classical(
    o: &ClassicalObservable,
    omega_index: usize,
    rng: &mut impl Rng,
) -> Result<Outcome> {
    let dist = classical_born(o, omega_index)?;
    Ok(dist.outcomes()[dist.sample_index(rng)].clone())
}
