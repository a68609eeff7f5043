//! Repeated projective measurement interleaved with short Schrödinger steps:
//! the projective (Lüders) channel of a spectral resolution, the N-fold
//! measure-then-evolve round, survival probabilities, the all-survive lower
//! bound, and the probe showing the round is not a sequential causal
//! observable.
//!
//! Conventions: a round acts on states by projecting first and evolving
//! second; the initial state is measured against the resolution of its own
//! projector, so the first projection is a no-op and survival decays only
//! through the dynamics between measurements.

use nalgebra::DVector;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};

use crate::causality::{
    self, CausalTree, MarkovChannel, NodeObservable, QuantumChannel, Space, TreeEdge, TreeNode,
};
use crate::error::{Error, Result};
use crate::measurement::{born_distribution, Observable, Outcome, State};
use crate::operator::{self, wire, ComplexMatrix, HermitianOperator};
use crate::C64;

/// Tolerance on idempotency, orthogonality and completeness of a resolution.
pub const TOL_RESOLUTION: f64 = 1e-10;
/// Step commutator below this is treated as a degenerate configuration.
pub const COMMUTATION_THRESHOLD: f64 = 1e-8;
/// Norm tolerance on state vectors.
pub const TOL_STATE_NORM: f64 = 1e-12;

/// Complete family of mutually orthogonal projections.
#[derive(Debug, Clone)]
pub struct SpectralResolution {
    dim: usize,
    projections: Vec<ComplexMatrix>,
}

impl SpectralResolution {
    /// Validate idempotency, mutual orthogonality and completeness, each
    /// within [`TOL_RESOLUTION`] in Frobenius norm.
    pub fn new(projections: Vec<ComplexMatrix>) -> Result<Self> {
        let first = projections
            .first()
            .ok_or_else(|| Error::InvalidValue("resolution needs at least one projection".into()))?;
        if !first.is_square() {
            return Err(Error::DimensionMismatch("projections must be square".into()));
        }
        let dim = first.rows();
        let mut residual = 0.0_f64;
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for (i, p) in projections.iter().enumerate() {
            if p.rows() != dim || p.cols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "projection {i} is {}x{}, expected {dim}x{dim}",
                    p.rows(),
                    p.cols()
                )));
            }
            residual = residual.max(p.sub(&p.adjoint())?.frobenius_norm());
            residual = residual.max(p.matmul(p)?.sub(p)?.frobenius_norm());
            for q in &projections[i + 1..] {
                residual = residual.max(p.matmul(q)?.frobenius_norm());
            }
            sum = sum.add(p)?;
        }
        residual = residual.max(sum.sub(&ComplexMatrix::identity(dim))?.frobenius_norm());
        if residual > TOL_RESOLUTION {
            return Err(Error::InvalidResolution { residual });
        }
        Ok(Self { dim, projections })
    }

    /// Two-member resolution `{|ψ⟩⟨ψ|, I − |ψ⟩⟨ψ|}` of a unit vector.
    pub fn from_pure_state(psi: &DVector<C64>) -> Result<Self> {
        if (psi.norm() - 1.0).abs() > TOL_STATE_NORM {
            return Err(Error::InvalidValue(format!(
                "state has norm {}, expected 1",
                psi.norm()
            )));
        }
        let p1 = ComplexMatrix::outer(psi, psi);
        let p2 = ComplexMatrix::identity(psi.len()).sub(&p1)?;
        Self::new(vec![p1, p2])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.projections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projections.is_empty()
    }

    pub fn projections(&self) -> &[ComplexMatrix] {
        &self.projections
    }

    /// The sharp observable with effects `P_n` and outcomes `x1, x2, …`.
    pub fn observable(&self) -> Result<Observable> {
        let outcomes = (1..=self.projections.len())
            .map(|i| Outcome::Label(format!("x{i}")))
            .collect();
        Observable::new(outcomes, self.projections.clone())
    }
}

/// Projective channel of a resolution: Kraus family `{P_n}`, acting on
/// states as `ρ ↦ Σ P_n ρ P_n`.
pub fn lueders_channel(resolution: &SpectralResolution) -> Result<MarkovChannel> {
    Ok(MarkovChannel::Quantum(QuantumChannel::from_kraus(
        resolution.projections.clone(),
    )?))
}

/// Unitary evolution channel with the single Kraus operator `e^{−iH·dt/ħ}`.
pub fn schrodinger_channel(h: &HermitianOperator, dt: f64, hbar: f64) -> Result<MarkovChannel> {
    let u = operator::unitary_evolution(h, dt, hbar)?;
    Ok(MarkovChannel::Quantum(QuantumChannel::unitary(u)?))
}

/// Scan parameters: Hamiltonian, state, horizon and subdivision count.
#[derive(Debug, Clone)]
pub struct ZenoConfig {
    hamiltonian: HermitianOperator,
    hbar: f64,
    psi: DVector<C64>,
    total_time: f64,
    subdivisions: usize,
}

impl ZenoConfig {
    pub fn new(
        hamiltonian: HermitianOperator,
        hbar: f64,
        psi: DVector<C64>,
        total_time: f64,
        subdivisions: usize,
    ) -> Result<Self> {
        if psi.len() != hamiltonian.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has dimension {}, Hamiltonian acts on dimension {}",
                psi.len(),
                hamiltonian.dim()
            )));
        }
        if (psi.norm() - 1.0).abs() > TOL_STATE_NORM {
            return Err(Error::InvalidValue(format!(
                "state has norm {}, expected 1",
                psi.norm()
            )));
        }
        if hbar <= 0.0 || !hbar.is_finite() {
            return Err(Error::InvalidValue(format!("hbar must be positive, got {hbar}")));
        }
        if !(total_time >= 0.0 && total_time.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "total time must be finite and nonnegative, got {total_time}"
            )));
        }
        if subdivisions == 0 {
            return Err(Error::InvalidValue("subdivision count must be positive".into()));
        }
        Ok(Self { hamiltonian, hbar, psi, total_time, subdivisions })
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.hamiltonian
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn psi(&self) -> &DVector<C64> {
        &self.psi
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    /// Duration of one round.
    pub fn dt(&self) -> f64 {
        self.total_time / self.subdivisions as f64
    }

    pub fn with_subdivisions(&self, subdivisions: usize) -> Result<Self> {
        Self::new(
            self.hamiltonian.clone(),
            self.hbar,
            self.psi.clone(),
            self.total_time,
            subdivisions,
        )
    }
}

/// Sweep description, deserialized from
/// `{"hamiltonian": matrix, "hbar": real, "psi": vector, "n_values": [...]}`.
#[derive(Debug, Clone)]
pub struct ZenoSweep {
    base: ZenoConfig,
    n_values: Vec<usize>,
}

impl ZenoSweep {
    pub fn new(
        hamiltonian: HermitianOperator,
        hbar: f64,
        psi: DVector<C64>,
        total_time: f64,
        n_values: Vec<usize>,
    ) -> Result<Self> {
        if n_values.is_empty() {
            return Err(Error::InvalidValue("sweep needs at least one subdivision count".into()));
        }
        if n_values.contains(&0) {
            return Err(Error::InvalidValue("subdivision counts must be positive".into()));
        }
        let base = ZenoConfig::new(hamiltonian, hbar, psi, total_time, n_values[0])?;
        Ok(Self { base, n_values })
    }

    pub fn n_values(&self) -> &[usize] {
        &self.n_values
    }

    pub fn config_for(&self, subdivisions: usize) -> Result<ZenoConfig> {
        self.base.with_subdivisions(subdivisions)
    }
}

impl<'de> Deserialize<'de> for ZenoSweep {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            hamiltonian: HermitianOperator,
            #[serde(default = "one")]
            hbar: f64,
            #[serde(deserialize_with = "wire::deserialize_cvector")]
            psi: DVector<C64>,
            #[serde(default = "one")]
            total_time: f64,
            n_values: Vec<usize>,
        }
        fn one() -> f64 {
            1.0
        }
        let w = Wire::deserialize(deserializer)?;
        ZenoSweep::new(w.hamiltonian, w.hbar, w.psi, w.total_time, w.n_values)
            .map_err(D::Error::custom)
    }
}

fn zeno_round(cfg: &ZenoConfig, resolution: &SpectralResolution) -> Result<QuantumChannel> {
    let project = QuantumChannel::from_kraus(resolution.projections.clone())?;
    let u = operator::unitary_evolution(cfg.hamiltonian(), cfg.dt(), cfg.hbar())?;
    let evolve = QuantumChannel::unitary(u)?;
    // acting on a state, the projection applies first
    project.compose(&evolve)
}

/// N-fold measure-then-evolve composition over the configured horizon.
pub fn zeno_channel(cfg: &ZenoConfig, resolution: &SpectralResolution) -> Result<MarkovChannel> {
    if resolution.dim() != cfg.hamiltonian().dim() {
        return Err(Error::DimensionMismatch(format!(
            "resolution acts on dimension {}, Hamiltonian on {}",
            resolution.dim(),
            cfg.hamiltonian().dim()
        )));
    }
    let round = zeno_round(cfg, resolution)?;
    Ok(MarkovChannel::Quantum(round.power(cfg.subdivisions())?))
}

/// Probability that every measurement along the round sequence, and the final
/// one, finds the initial state: the Heisenberg pullback of the resolution
/// observable of `ψ` through the N-round channel, evaluated at `ψ`.
pub fn survival_probability(cfg: &ZenoConfig) -> Result<f64> {
    let resolution = SpectralResolution::from_pure_state(cfg.psi())?;
    let observable = resolution.observable()?;
    let channel = zeno_channel(cfg, &resolution)?;
    let pulled = channel
        .as_quantum()
        .expect("channel is quantum by construction")
        .pullback(&observable)?;
    let state = State::pure(cfg.psi().clone())?;
    let distribution = born_distribution(&pulled, &state)?;
    Ok(distribution.probability_of(&Outcome::Label("x1".into())))
}

/// All-survive lower bound `|⟨ψ, e^{−iH·dt/ħ} ψ⟩|^{2N}` on the survival
/// probability.
pub fn zeno_lower_bound(cfg: &ZenoConfig) -> Result<f64> {
    let u = operator::unitary_evolution(cfg.hamiltonian(), cfg.dt(), cfg.hbar())?;
    let amplitude = cfg.psi().dotc(&u.apply(cfg.psi())?);
    Ok(amplitude.norm().powf(2.0 * cfg.subdivisions() as f64))
}

/// Evidence that one measure-then-evolve round is not a sequential causal
/// observable.
#[derive(Debug, Clone)]
pub struct NoncommutativityReport {
    /// `‖[P₁, U†P₁U]‖` for a single step `U`.
    pub step_commutator: f64,
    /// Node at which the tree realization was rejected.
    pub rejected_node: String,
    /// Commutator residual reported by the rejected realization.
    pub realize_residual: f64,
}

/// Probe the obstruction: report `‖[P₁, U†P₁U]‖` for one step, then realize
/// the two-node tree carrying the resolution observable of `ψ` at both times
/// and confirm the realization is rejected as noncommuting. A step commutator
/// below [`COMMUTATION_THRESHOLD`] (e.g. `[H, |ψ⟩⟨ψ|] = 0`) is reported as
/// `UnexpectedCommutation`.
pub fn zeno_noncommutativity(cfg: &ZenoConfig) -> Result<NoncommutativityReport> {
    let resolution = SpectralResolution::from_pure_state(cfg.psi())?;
    let u = operator::unitary_evolution(cfg.hamiltonian(), cfg.dt(), cfg.hbar())?;
    let p1 = &resolution.projections()[0];
    let pulled = u.adjoint().matmul(p1)?.matmul(&u)?;
    let step_commutator = operator::commutator_matrices(p1, &pulled)?.operator_norm()?;
    if step_commutator < COMMUTATION_THRESHOLD {
        return Err(Error::UnexpectedCommutation { residual: step_commutator });
    }

    let observable = resolution.observable()?;
    let dim = resolution.dim();
    let tree = CausalTree::new(
        vec![
            TreeNode {
                id: "t0".into(),
                space: Space::Quantum(dim),
                observable: NodeObservable::Quantum(observable.clone()),
            },
            TreeNode {
                id: "t1".into(),
                space: Space::Quantum(dim),
                observable: NodeObservable::Quantum(observable),
            },
        ],
        vec![TreeEdge {
            parent: "t0".into(),
            child: "t1".into(),
            channel: schrodinger_channel(cfg.hamiltonian(), cfg.dt(), cfg.hbar())?,
        }],
    )?;
    match causality::realize(&tree) {
        Err(Error::NonCommuting { node, residual }) => Ok(NoncommutativityReport {
            step_commutator,
            rejected_node: node.unwrap_or_default(),
            realize_residual: residual,
        }),
        Ok(_) => Err(Error::UnexpectedCommutation { residual: step_commutator }),
        Err(other) => Err(other),
    }
}
