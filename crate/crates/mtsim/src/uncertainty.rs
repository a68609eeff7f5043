//! Approximate joint measurement of two noncommuting observables: scenarios
//! on a system⊗ancilla space, noise statistics, and certified uncertainty
//! margins.
//!
//! A scenario carries targets A₁, A₂ on the system space H, a fixed ancilla
//! unit vector s in K, and commuting proxies Â₁, Â₂ on H⊗K that stand in for
//! a simultaneous measurement. The noise operator N̂ᵢ = Âᵢ − Aᵢ⊗I measures how
//! far each proxy sits from its target; everything reported here is a
//! functional of the N̂ᵢ at product states u⊗s.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    self, norm_scale, tensor, tensor_vec, wire, ComplexMatrix, HermitianOperator,
};
use crate::C64;

/// Relative tolerance on `‖[Â₁, Â₂]‖` for a scenario to be accepted.
pub const TOL_SCENARIO_COMM: f64 = 1e-12;
/// Absolute tolerance for the same-average (zero noise bias) check.
pub const TOL_SAME_AVERAGE: f64 = 1e-9;
/// Tolerance on `‖s‖ = 1` and `‖u‖ = 1`.
pub const TOL_UNIT: f64 = 1e-12;

/// Joint-measurement scenario: commuting proxies for two targets.
#[derive(Debug, Clone)]
pub struct JointScenario {
    dim_h: usize,
    dim_k: usize,
    a1: HermitianOperator,
    a2: HermitianOperator,
    s: DVector<C64>,
    ahat1: HermitianOperator,
    ahat2: HermitianOperator,
    hbar: f64,
}

impl JointScenario {
    /// Validate and construct. Fails with `ScenarioInvalid` when the proxies
    /// do not commute within [`TOL_SCENARIO_COMM`] relative to their norms.
    pub fn new(
        a1: HermitianOperator,
        a2: HermitianOperator,
        s: DVector<C64>,
        ahat1: HermitianOperator,
        ahat2: HermitianOperator,
        hbar: f64,
    ) -> Result<Self> {
        let dim_h = a1.dim();
        if a2.dim() != dim_h {
            return Err(Error::DimensionMismatch(format!(
                "targets live on dimensions {} and {}",
                dim_h,
                a2.dim()
            )));
        }
        let dim_k = s.len();
        let total = dim_h * dim_k;
        if ahat1.dim() != total || ahat2.dim() != total {
            return Err(Error::DimensionMismatch(format!(
                "proxies must live on dimension {total}, got {} and {}",
                ahat1.dim(),
                ahat2.dim()
            )));
        }
        if (s.norm() - 1.0).abs() > TOL_UNIT {
            return Err(Error::InvalidValue(format!(
                "ancilla vector has norm {}, expected 1",
                s.norm()
            )));
        }
        if hbar <= 0.0 || !hbar.is_finite() {
            return Err(Error::InvalidValue(format!("hbar must be positive, got {hbar}")));
        }
        let commutator = operator::commutator(&ahat1, &ahat2)?.operator_norm()?;
        let scale = norm_scale(ahat1.matrix().operator_norm()? * ahat2.matrix().operator_norm()?);
        if commutator > TOL_SCENARIO_COMM * scale {
            return Err(Error::ScenarioInvalid { residual: commutator / scale });
        }
        Ok(Self { dim_h, dim_k, a1, a2, s, ahat1, ahat2, hbar })
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    pub fn dim_k(&self) -> usize {
        self.dim_k
    }

    pub fn target(&self, i: usize) -> &HermitianOperator {
        if i == 1 {
            &self.a1
        } else {
            &self.a2
        }
    }

    pub fn proxy(&self, i: usize) -> &HermitianOperator {
        if i == 1 {
            &self.ahat1
        } else {
            &self.ahat2
        }
    }

    pub fn ancilla(&self) -> &DVector<C64> {
        &self.s
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Same scenario with a different unit of action.
    pub fn with_hbar(&self, hbar: f64) -> Result<Self> {
        Self::new(
            self.a1.clone(),
            self.a2.clone(),
            self.s.clone(),
            self.ahat1.clone(),
            self.ahat2.clone(),
            hbar,
        )
    }

    fn lifted_target(&self, i: usize) -> ComplexMatrix {
        tensor(self.target(i).matrix(), &ComplexMatrix::identity(self.dim_k))
    }

    fn product_state(&self, u: &DVector<C64>) -> Result<DVector<C64>> {
        if u.len() != self.dim_h {
            return Err(Error::DimensionMismatch(format!(
                "system state has dimension {}, expected {}",
                u.len(),
                self.dim_h
            )));
        }
        if (u.norm() - 1.0).abs() > TOL_UNIT {
            return Err(Error::InvalidValue(format!(
                "system state has norm {}, expected 1",
                u.norm()
            )));
        }
        Ok(tensor_vec(u, &self.s))
    }
}

impl<'de> Deserialize<'de> for JointScenario {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            #[serde(rename = "A1")]
            a1: HermitianOperator,
            #[serde(rename = "A2")]
            a2: HermitianOperator,
            #[serde(rename = "Ahat1")]
            ahat1: HermitianOperator,
            #[serde(rename = "Ahat2")]
            ahat2: HermitianOperator,
            #[serde(deserialize_with = "wire::deserialize_cvector")]
            s: DVector<C64>,
            #[serde(default = "default_hbar")]
            hbar: f64,
        }
        fn default_hbar() -> f64 {
            1.0
        }
        let w = Wire::deserialize(deserializer)?;
        JointScenario::new(w.a1, w.a2, w.s, w.ahat1, w.ahat2, w.hbar).map_err(D::Error::custom)
    }
}

/// Per-state noise statistics and inequality margins.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub delta1: f64,
    pub delta2: f64,
    pub delta_bar1: f64,
    pub delta_bar2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// ½|⟨u, [A₁, A₂] u⟩|, the right-hand side both margins are measured against.
    pub bound: f64,
    /// 2·Δ̄₁Δ̄₂ − |⟨[N̂₁, N̂₂]⟩|.
    pub margin_robertson: f64,
    /// Δ₁Δ₂ − bound; present only when the same-average condition holds.
    pub margin_ishikawa: Option<f64>,
    /// Δ₁Δ₂ + Δ₂σ₁ + Δ₁σ₂ − bound; meaningful without the same-average condition.
    pub margin_rough: f64,
    /// Operator norm of [N̂₁,N̂₂] + [N̂₁,A₂⊗I] + [A₁⊗I,N̂₂] + [A₁⊗I,A₂⊗I],
    /// which telescopes to [Â₁,Â₂] and so vanishes for a valid scenario.
    #[serde(rename = "identity9_residual")]
    pub identity_residual: f64,
    pub same_average: bool,
    /// |⟨[N̂₁, A₂⊗I]⟩| at u⊗s; vanishes under the same-average condition.
    pub cross_term1: f64,
    /// |⟨[A₁⊗I, N̂₂]⟩| at u⊗s; vanishes under the same-average condition.
    pub cross_term2: f64,
    /// |⟨u⊗s, [A₁⊗I, A₂⊗I] (u⊗s)⟩ − ⟨u, [A₁, A₂] u⟩|.
    pub lift_residual: f64,
}

/// Noise operator `N̂ᵢ = Âᵢ − Aᵢ⊗I` (i ∈ {1, 2}).
pub fn noise_operator(scn: &JointScenario, i: usize) -> Result<HermitianOperator> {
    if i != 1 && i != 2 {
        return Err(Error::InvalidValue(format!("noise index must be 1 or 2, got {i}")));
    }
    let diff = scn.proxy(i).matrix().sub(&scn.lifted_target(i))?;
    HermitianOperator::new(diff)
}

/// Noise magnitudes at the product state u⊗s: `Δ = ‖N̂(u⊗s)‖` and the
/// centered `Δ̄ = ‖(N̂ − ⟨N̂⟩)(u⊗s)‖`.
pub fn deltas(scn: &JointScenario, u: &DVector<C64>) -> Result<[(f64, f64); 2]> {
    let phi = scn.product_state(u)?;
    let mut out = [(0.0, 0.0); 2];
    for i in [1usize, 2] {
        let nhat = noise_operator(scn, i)?;
        let applied = nhat.matrix().apply(&phi)?;
        let delta = applied.norm();
        let mean = phi.dotc(&applied).re;
        let centered = &applied - &phi * C64::new(mean, 0.0);
        out[i - 1] = (delta, centered.norm());
    }
    Ok(out)
}

/// Standard deviation `σ(A; u) = ‖(A − ⟨u, A u⟩) u‖`.
pub fn sigma(a: &HermitianOperator, u: &DVector<C64>) -> Result<f64> {
    if (u.norm() - 1.0).abs() > TOL_UNIT {
        return Err(Error::InvalidValue(format!(
            "state has norm {}, expected 1",
            u.norm()
        )));
    }
    let applied = a.matrix().apply(u)?;
    let mean = u.dotc(&applied).re;
    Ok((&applied - u * C64::new(mean, 0.0)).norm())
}

/// Margin of the Robertson inequality `2 σ(A;u) σ(B;u) ≥ |⟨u, [A,B] u⟩|`.
pub fn robertson_margin(
    a: &HermitianOperator,
    b: &HermitianOperator,
    u: &DVector<C64>,
) -> Result<f64> {
    let lhs = 2.0 * sigma(a, u)? * sigma(b, u)?;
    let c = operator::commutator(a, b)?;
    let rhs = u.dotc(&c.apply(u)?).norm();
    Ok(lhs - rhs)
}

/// Same-average condition: the noise operators have zero matrix elements
/// between all basis product states `e_j⊗s`, which by sesquilinearity makes
/// `⟨u⊗s, N̂ᵢ (u⊗s)⟩ = 0` for every u. Returns the pass flag and the largest
/// violating magnitude.
pub fn check_same_average(scn: &JointScenario, tol: f64) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for i in [1usize, 2] {
        let nhat = noise_operator(scn, i)?;
        for k in 0..scn.dim_h {
            let ek = operator::basis_vector(scn.dim_h, k);
            let applied = nhat.matrix().apply(&tensor_vec(&ek, &scn.s))?;
            for j in 0..scn.dim_h {
                let ej = operator::basis_vector(scn.dim_h, j);
                let entry = tensor_vec(&ej, &scn.s).dotc(&applied);
                worst = worst.max(entry.norm());
            }
        }
    }
    Ok((worst <= tol, worst))
}

/// Full certificate at a system state `u`.
pub fn certify(scn: &JointScenario, u: &DVector<C64>) -> Result<Certificate> {
    let phi = scn.product_state(u)?;
    let [(delta1, delta_bar1), (delta2, delta_bar2)] = deltas(scn, u)?;
    let sigma1 = sigma(&scn.a1, u)?;
    let sigma2 = sigma(&scn.a2, u)?;

    let target_comm = operator::commutator(&scn.a1, &scn.a2)?;
    let target_expect = u.dotc(&target_comm.apply(u)?);
    let bound = 0.5 * target_expect.norm();

    let n1 = noise_operator(scn, 1)?;
    let n2 = noise_operator(scn, 2)?;
    let lift1 = scn.lifted_target(1);
    let lift2 = scn.lifted_target(2);

    let comm_nn = operator::commutator(&n1, &n2)?;
    let comm_n1_a2 = operator::commutator_matrices(n1.matrix(), &lift2)?;
    let comm_a1_n2 = operator::commutator_matrices(&lift1, n2.matrix())?;
    let comm_aa = operator::commutator_matrices(&lift1, &lift2)?;

    let expect = |m: &ComplexMatrix| -> Result<C64> {
        let applied = m.apply(&phi)?;
        Ok(phi.dotc(&applied))
    };
    let margin_robertson = 2.0 * delta_bar1 * delta_bar2 - expect(&comm_nn)?.norm();
    let cross_term1 = expect(&comm_n1_a2)?.norm();
    let cross_term2 = expect(&comm_a1_n2)?.norm();
    let lift_residual = (expect(&comm_aa)? - target_expect).norm();

    let identity_residual = comm_nn
        .add(&comm_n1_a2)?
        .add(&comm_a1_n2)?
        .add(&comm_aa)?
        .operator_norm()?;

    let (same_average, _) = check_same_average(scn, TOL_SAME_AVERAGE)?;
    let margin_ishikawa = same_average.then_some(delta1 * delta2 - bound);
    let margin_rough = delta1 * delta2 + delta2 * sigma1 + delta1 * sigma2 - bound;

    Ok(Certificate {
        delta1,
        delta2,
        delta_bar1,
        delta_bar2,
        sigma1,
        sigma2,
        bound,
        margin_robertson,
        margin_ishikawa,
        margin_rough,
        identity_residual,
        same_average,
        cross_term1,
        cross_term2,
        lift_residual,
    })
}

/// Built-in qubit witness: targets σx and σz, proxies √2·σx⊗σx and √2·σz⊗σz,
/// ancilla chosen so the same-average condition holds exactly.
pub fn builtin_qubit_scenario() -> JointScenario {
    let sqrt2 = std::f64::consts::SQRT_2;
    let theta = std::f64::consts::PI / 8.0;
    let s = DVector::from_vec(vec![C64::new(theta.cos(), 0.0), C64::new(theta.sin(), 0.0)]);
    let ahat1 = HermitianOperator::new(
        tensor(operator::pauli_x().matrix(), operator::pauli_x().matrix())
            .scale(C64::new(sqrt2, 0.0)),
    )
    .expect("static construction");
    let ahat2 = HermitianOperator::new(
        tensor(operator::pauli_z().matrix(), operator::pauli_z().matrix())
            .scale(C64::new(sqrt2, 0.0)),
    )
    .expect("static construction");
    JointScenario::new(operator::pauli_x(), operator::pauli_z(), s, ahat1, ahat2, 1.0)
        .expect("static construction commutes exactly")
}

/// Haar-distributed unit vector: normalized standard complex Gaussian.
pub fn haar_unit_vector(dim: usize, rng: &mut impl Rng) -> DVector<C64> {
    loop {
        let v = DVector::from_iterator(
            dim,
            (0..dim).map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im)
            }),
        );
        let norm = v.norm();
        if norm > 1e-6 {
            return v / C64::new(norm, 0.0);
        }
    }
}

/// Gaussian-ensemble random Hermitian matrix: `(R + R†)/2` with standard
/// complex Gaussian entries.
pub fn random_hermitian(dim: usize, rng: &mut impl Rng) -> HermitianOperator {
    let r = ComplexMatrix::new(
        dim,
        dim,
        (0..dim * dim)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im)
            })
            .collect(),
    )
    .expect("finite Gaussian entries");
    HermitianOperator::symmetrized(&r).expect("symmetrization is Hermitian")
}

/// Random scenario with proxies that commute by construction: both are
/// spectral functions of one random Hermitian operator on H⊗K. With
/// `enforce_hypothesis1`, each target is the ancilla compression
/// `⟨e_j⊗s, Âᵢ (e_k⊗s)⟩` of its proxy, which zeroes every noise matrix
/// element exactly; otherwise the targets are independent random Hermitians.
pub fn random_scenario(
    dim_h: usize,
    dim_k: usize,
    rng: &mut impl Rng,
    enforce_hypothesis1: bool,
) -> Result<JointScenario> {
    if dim_h < 2 || dim_k < 2 {
        return Err(Error::InvalidValue(format!(
            "scenario dimensions must be at least 2, got ({dim_h}, {dim_k})"
        )));
    }
    let total = dim_h * dim_k;
    let generator = random_hermitian(total, rng);
    let dec = operator::spectral_decomposition(&generator, operator::GROUP_TOL)?;
    let spectrum_size = dec.eigenvalues().len();
    let mut spectra = [Vec::with_capacity(spectrum_size), Vec::with_capacity(spectrum_size)];
    for values in &mut spectra {
        for _ in 0..spectrum_size {
            let x: f64 = StandardNormal.sample(rng);
            values.push(x);
        }
    }
    let build_proxy = |values: &[f64]| -> Result<HermitianOperator> {
        let mut acc = ComplexMatrix::zeros(total, total);
        for (v, p) in values.iter().zip(dec.projectors()) {
            acc = acc.add(&p.scale(C64::new(*v, 0.0)))?;
        }
        HermitianOperator::symmetrized(&acc)
    };
    let ahat1 = build_proxy(&spectra[0])?;
    let ahat2 = build_proxy(&spectra[1])?;
    let s = haar_unit_vector(dim_k, rng);

    let compress = |ahat: &HermitianOperator| -> Result<HermitianOperator> {
        let mut entries = vec![C64::new(0.0, 0.0); dim_h * dim_h];
        for k in 0..dim_h {
            let ek = operator::basis_vector(dim_h, k);
            let applied = ahat.matrix().apply(&tensor_vec(&ek, &s))?;
            for j in 0..dim_h {
                let ej = operator::basis_vector(dim_h, j);
                entries[j * dim_h + k] = tensor_vec(&ej, &s).dotc(&applied);
            }
        }
        HermitianOperator::symmetrized(&ComplexMatrix::new(dim_h, dim_h, entries)?)
    };
    let (a1, a2) = if enforce_hypothesis1 {
        (compress(&ahat1)?, compress(&ahat2)?)
    } else {
        (random_hermitian(dim_h, rng), random_hermitian(dim_h, rng))
    };

    JointScenario::new(a1, a2, s, ahat1, ahat2, 1.0).map_err(|e| match e {
        Error::ScenarioInvalid { residual } => Error::ConstructionFailed(format!(
            "spectral construction failed to commute (residual {residual:.3e})"
        )),
        other => other,
    })
}
