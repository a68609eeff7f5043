//! Markov channels in the Heisenberg picture, their composition and
//! observable pullback, and the recursive realization of causal trees.
//!
//! A quantum channel stores the Kraus family of its state action; the
//! Heisenberg action on effects is `F ↦ Σ K† F K`, the state action
//! `ρ ↦ Σ K ρ K†`. A classical channel is a row-stochastic matrix with one
//! row per input point; it pulls an effect vector back by `e ↦ M e`.
//! Composition follows the chain rule: the composite of a step from t₁ to t₂
//! with a step from t₂ to t₃ carries t₃-effects all the way back to t₁.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::measurement::{
    classical_born, born_distribution, ClassicalObservable, Observable, Outcome,
    OutcomeDistribution, State, TOL_COMMUTE,
};
use crate::operator::{self, norm_scale, wire, ComplexMatrix};
use crate::C64;

/// Tolerance for channel unitality at construction.
pub const TOL_UNITAL: f64 = 1e-10;
/// Tolerance for unitality of composed channels, looser to absorb rounding
/// accumulated over long compositions.
pub const TOL_UNITAL_COMPOSED: f64 = 1e-9;
/// Tolerance for stochastic row sums.
pub const TOL_STOCHASTIC: f64 = 1e-12;
/// Kraus family size beyond which composition switches to the superoperator.
pub const KRAUS_FAMILY_CAP: usize = 4096;
/// Kraus operators below this norm are dropped during composition.
pub const KRAUS_PRUNE_NORM: f64 = 1e-14;

/// Column-stacking vectorization.
fn vec_of(m: &DMatrix<C64>) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<C64>, dim: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(dim, dim, v.as_slice())
}

#[derive(Debug, Clone)]
enum QuantumRep {
    Kraus(Vec<ComplexMatrix>),
    /// Heisenberg action on column-stacked effects: a dim_in² × dim_out²
    /// matrix `Σ Kᵀ ⊗ K†`.
    Super(DMatrix<C64>),
}

/// Completely positive unital channel between finite-dimensional spaces.
#[derive(Debug, Clone)]
pub struct QuantumChannel {
    dim_in: usize,
    dim_out: usize,
    rep: QuantumRep,
}

impl QuantumChannel {
    /// Build from the Kraus family of the state action. Each operator maps
    /// the input space to the output space (dim_out × dim_in), and the family
    /// must satisfy `Σ K† K = I` on the input space within [`TOL_UNITAL`].
    pub fn from_kraus(kraus: Vec<ComplexMatrix>) -> Result<Self> {
        let channel = Self::from_kraus_unchecked(kraus)?;
        let residual = channel.unitality_residual()?;
        if residual > TOL_UNITAL {
            return Err(Error::InvalidValue(format!(
                "Kraus family is not unital (residual {residual:.3e})"
            )));
        }
        Ok(channel)
    }

    fn from_kraus_unchecked(kraus: Vec<ComplexMatrix>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidValue("Kraus family must be non-empty".into()))?;
        let (dim_out, dim_in) = (first.rows(), first.cols());
        for k in &kraus {
            if k.rows() != dim_out || k.cols() != dim_in {
                return Err(Error::DimensionMismatch(format!(
                    "Kraus operators must share one shape, got {}x{} after {dim_out}x{dim_in}",
                    k.rows(),
                    k.cols()
                )));
            }
        }
        Ok(Self { dim_in, dim_out, rep: QuantumRep::Kraus(kraus) })
    }

    /// Channel of a unitary `U` (single Kraus operator).
    pub fn unitary(u: ComplexMatrix) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "unitary must be square, got {}x{}",
                u.rows(),
                u.cols()
            )));
        }
        let residual = u
            .adjoint()
            .matmul(&u)?
            .sub(&ComplexMatrix::identity(u.rows()))?
            .frobenius_norm();
        if residual > operator::TOL_UNITARY * norm_scale(1.0) * u.rows() as f64 {
            return Err(Error::InvalidValue(format!(
                "matrix is not unitary (residual {residual:.3e})"
            )));
        }
        Self::from_kraus(vec![u])
    }

    /// Identity channel on a `dim`-dimensional space.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim_in: dim,
            dim_out: dim,
            rep: QuantumRep::Kraus(vec![ComplexMatrix::identity(dim)]),
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// Kraus family, if the channel still carries one.
    pub fn kraus(&self) -> Option<&[ComplexMatrix]> {
        match &self.rep {
            QuantumRep::Kraus(ks) => Some(ks),
            QuantumRep::Super(_) => None,
        }
    }

    pub fn is_superop(&self) -> bool {
        matches!(self.rep, QuantumRep::Super(_))
    }

    fn superop(&self) -> DMatrix<C64> {
        match &self.rep {
            QuantumRep::Super(s) => s.clone(),
            QuantumRep::Kraus(ks) => {
                let mut s = DMatrix::zeros(self.dim_in * self.dim_in, self.dim_out * self.dim_out);
                for k in ks {
                    let kt = k.as_dmatrix().transpose();
                    let kd = k.as_dmatrix().adjoint();
                    s += kt.kronecker(&kd);
                }
                s
            }
        }
    }

    /// Heisenberg action on an effect at the output side: `F ↦ Σ K† F K`.
    pub fn heisenberg(&self, f: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !f.is_square() || f.rows() != self.dim_out {
            return Err(Error::DimensionMismatch(format!(
                "effect must be {0}x{0}, got {1}x{2}",
                self.dim_out,
                f.rows(),
                f.cols()
            )));
        }
        match &self.rep {
            QuantumRep::Kraus(ks) => {
                let mut acc = ComplexMatrix::zeros(self.dim_in, self.dim_in);
                for k in ks {
                    acc = acc.add(&k.adjoint().matmul(f)?.matmul(k)?)?;
                }
                Ok(acc)
            }
            QuantumRep::Super(s) => {
                let out = s * vec_of(f.as_dmatrix());
                ComplexMatrix::from_dmatrix(unvec(&out, self.dim_in))
            }
        }
    }

    /// State action: `ρ ↦ Σ K ρ K†`.
    pub fn schrodinger(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !rho.is_square() || rho.rows() != self.dim_in {
            return Err(Error::DimensionMismatch(format!(
                "state must be {0}x{0}, got {1}x{2}",
                self.dim_in,
                rho.rows(),
                rho.cols()
            )));
        }
        match &self.rep {
            QuantumRep::Kraus(ks) => {
                let mut acc = ComplexMatrix::zeros(self.dim_out, self.dim_out);
                for k in ks {
                    acc = acc.add(&k.matmul(rho)?.matmul(&k.adjoint())?)?;
                }
                Ok(acc)
            }
            QuantumRep::Super(s) => {
                let out = s.adjoint() * vec_of(rho.as_dmatrix());
                ComplexMatrix::from_dmatrix(unvec(&out, self.dim_out))
            }
        }
    }

    /// `‖Φ(I_out) − I_in‖_F`.
    pub fn unitality_residual(&self) -> Result<f64> {
        let image = self.heisenberg(&ComplexMatrix::identity(self.dim_out))?;
        Ok(image.sub(&ComplexMatrix::identity(self.dim_in))?.frobenius_norm())
    }

    /// Chain this step (t₁→t₂) with a later step (t₂→t₃). Kraus families are
    /// multiplied pairwise and pruned; past [`KRAUS_FAMILY_CAP`] the channel
    /// switches to the superoperator representation.
    pub fn compose(&self, later: &QuantumChannel) -> Result<QuantumChannel> {
        if self.dim_out != later.dim_in {
            return Err(Error::DimensionMismatch(format!(
                "cannot chain a step into dimension {} with a step from dimension {}",
                self.dim_out, later.dim_in
            )));
        }
        let composed = match (&self.rep, &later.rep) {
            (QuantumRep::Kraus(ks), QuantumRep::Kraus(ls))
                if ks.len().saturating_mul(ls.len()) <= KRAUS_FAMILY_CAP =>
            {
                let mut products = Vec::with_capacity(ks.len() * ls.len());
                for l in ls {
                    for k in ks {
                        let p = l.matmul(k)?;
                        if p.frobenius_norm() >= KRAUS_PRUNE_NORM {
                            products.push(p);
                        }
                    }
                }
                if products.is_empty() {
                    return Err(Error::NumericalFailure(
                        "all Kraus products fell below the pruning threshold".into(),
                    ));
                }
                QuantumChannel {
                    dim_in: self.dim_in,
                    dim_out: later.dim_out,
                    rep: QuantumRep::Kraus(products),
                }
            }
            _ => QuantumChannel {
                dim_in: self.dim_in,
                dim_out: later.dim_out,
                rep: QuantumRep::Super(self.superop() * later.superop()),
            },
        };
        let residual = composed.unitality_residual()?;
        if residual > TOL_UNITAL_COMPOSED {
            return Err(Error::NumericalFailure(format!(
                "composed channel lost unitality (residual {residual:.3e})"
            )));
        }
        Ok(composed)
    }

    /// The n-fold self-composition of an endomorphic channel, built from
    /// [`QuantumChannel::compose`] by repeated squaring so an N-round chain
    /// costs log N compositions. When the Kraus family of the result would
    /// exceed [`KRAUS_FAMILY_CAP`] the base is moved to the superoperator
    /// representation first, so long chains square small dense matrices
    /// instead of growing operator families.
    pub fn power(&self, n: usize) -> Result<QuantumChannel> {
        if self.dim_in != self.dim_out {
            return Err(Error::DimensionMismatch(format!(
                "only endomorphic channels can be iterated, got {} -> {}",
                self.dim_in, self.dim_out
            )));
        }
        if n == 0 {
            return Err(Error::InvalidValue("iteration count must be positive".into()));
        }
        let base = match self.kraus() {
            Some(ks)
                if ks.len() > 1
                    && (n as f64) * (ks.len() as f64).ln()
                        > (KRAUS_FAMILY_CAP as f64).ln() =>
            {
                QuantumChannel {
                    dim_in: self.dim_in,
                    dim_out: self.dim_out,
                    rep: QuantumRep::Super(self.superop()),
                }
            }
            _ => self.clone(),
        };
        let mut result: Option<QuantumChannel> = None;
        let mut square = base;
        let mut remaining = n;
        loop {
            if remaining & 1 == 1 {
                result = Some(match result {
                    None => square.clone(),
                    Some(r) => r.compose(&square)?,
                });
            }
            remaining >>= 1;
            if remaining == 0 {
                break;
            }
            square = square.compose(&square)?;
        }
        Ok(result.expect("n is positive"))
    }

    /// Pull an observable at the output side back to the input side.
    pub fn pullback(&self, o: &Observable) -> Result<Observable> {
        if o.dim() != self.dim_out {
            return Err(Error::DimensionMismatch(format!(
                "observable dimension {} does not match channel output dimension {}",
                o.dim(),
                self.dim_out
            )));
        }
        let effects = o
            .effects()
            .iter()
            .map(|e| self.heisenberg(e))
            .collect::<Result<Vec<_>>>()?;
        Observable::new(o.outcomes().to_vec(), effects)
    }
}

/// Rescale a Kraus family so that `Σ K† K = I`: multiply each operator on the
/// right by `(Σ K† K)^{-1/2}`.
pub fn normalize_kraus(raw: Vec<ComplexMatrix>) -> Result<Vec<ComplexMatrix>> {
    let first = raw
        .first()
        .ok_or_else(|| Error::InvalidValue("Kraus family must be non-empty".into()))?;
    let dim_in = first.cols();
    let mut gram = ComplexMatrix::zeros(dim_in, dim_in);
    for k in &raw {
        gram = gram.add(&k.adjoint().matmul(k)?)?;
    }
    let herm = crate::operator::HermitianOperator::symmetrized(&gram)?;
    let dec = operator::spectral_decomposition(&herm, 0.0)?;
    if dec.eigenvalues().iter().any(|&lambda| lambda < 1e-12) {
        return Err(Error::ConstructionFailed(
            "Kraus family is singular; cannot normalize".into(),
        ));
    }
    let inv_sqrt = dec.map_eigenvalues(|lambda| C64::new(1.0 / lambda.sqrt(), 0.0));
    raw.iter().map(|k| k.matmul(&inv_sqrt)).collect()
}

/// Row-stochastic matrix: one row per input point, entries in `[0, 1]`,
/// rows summing to 1.
#[derive(Debug, Clone)]
pub struct StochasticMatrix {
    m: DMatrix<f64>,
}

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidValue("stochastic matrix must be non-empty".into()))?;
        let cols = first.len();
        if cols == 0 {
            return Err(Error::InvalidValue("stochastic matrix needs at least one column".into()));
        }
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "stochastic rows must share one length, got {} after {cols}",
                    row.len()
                )));
            }
            let mut total = 0.0;
            for &x in row {
                if !x.is_finite() || x < 0.0 || x > 1.0 + TOL_STOCHASTIC {
                    return Err(Error::InvalidValue(format!(
                        "stochastic entry {x} outside [0, 1]"
                    )));
                }
                total += x;
            }
            if (total - 1.0).abs() > TOL_STOCHASTIC {
                return Err(Error::InvalidValue(format!(
                    "stochastic row sums to {total:.15}, expected 1"
                )));
            }
        }
        let dim_in = rows.len();
        let m = DMatrix::from_fn(dim_in, cols, |i, j| rows[i][j]);
        Ok(Self { m })
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn dim_in(&self) -> usize {
        self.m.nrows()
    }

    pub fn dim_out(&self) -> usize {
        self.m.ncols()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Pull an effect vector on the output points back: `e ↦ M e`.
    pub fn pullback_effect(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.dim_out() {
            return Err(Error::DimensionMismatch(format!(
                "effect vector has {} entries, expected {}",
                e.len(),
                self.dim_out()
            )));
        }
        Ok((0..self.dim_in())
            .map(|i| (0..self.dim_out()).map(|j| self.m[(i, j)] * e[j]).sum())
            .collect())
    }

    /// Pull a classical observable on the output points back to the input.
    pub fn pullback(&self, o: &ClassicalObservable) -> Result<ClassicalObservable> {
        if o.omega_size() != self.dim_out() {
            return Err(Error::DimensionMismatch(format!(
                "observable point set {} does not match channel output points {}",
                o.omega_size(),
                self.dim_out()
            )));
        }
        let effects = o
            .effects()
            .iter()
            .map(|e| self.pullback_effect(e))
            .collect::<Result<Vec<_>>>()?;
        ClassicalObservable::new(self.dim_in(), o.outcomes().to_vec(), effects)
    }

    /// Chain rule: matrix product with a later step.
    pub fn compose(&self, later: &StochasticMatrix) -> Result<StochasticMatrix> {
        if self.dim_out() != later.dim_in() {
            return Err(Error::DimensionMismatch(format!(
                "cannot chain a step into {} points with a step from {} points",
                self.dim_out(),
                later.dim_in()
            )));
        }
        Ok(Self { m: &self.m * &later.m })
    }

    /// True (with the point map) iff every row is a 0/1 indicator within `tol`.
    pub fn deterministic_map(&self, tol: f64) -> Option<Vec<usize>> {
        let mut map = Vec::with_capacity(self.dim_in());
        for i in 0..self.dim_in() {
            let mut target = None;
            for j in 0..self.dim_out() {
                let x = self.m[(i, j)];
                if (x - 1.0).abs() <= tol {
                    if target.is_some() {
                        return None;
                    }
                    target = Some(j);
                } else if x > tol {
                    return None;
                }
            }
            map.push(target?);
        }
        Some(map)
    }
}

/// Markov channel between two spaces of the same kind.
#[derive(Debug, Clone)]
pub enum MarkovChannel {
    Quantum(QuantumChannel),
    Classical(StochasticMatrix),
}

impl MarkovChannel {
    pub fn dim_in(&self) -> usize {
        match self {
            MarkovChannel::Quantum(q) => q.dim_in(),
            MarkovChannel::Classical(c) => c.dim_in(),
        }
    }

    pub fn dim_out(&self) -> usize {
        match self {
            MarkovChannel::Quantum(q) => q.dim_out(),
            MarkovChannel::Classical(c) => c.dim_out(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MarkovChannel::Quantum(_) => "quantum",
            MarkovChannel::Classical(_) => "classical",
        }
    }

    pub fn as_quantum(&self) -> Option<&QuantumChannel> {
        match self {
            MarkovChannel::Quantum(q) => Some(q),
            MarkovChannel::Classical(_) => None,
        }
    }

    pub fn as_classical(&self) -> Option<&StochasticMatrix> {
        match self {
            MarkovChannel::Quantum(_) => None,
            MarkovChannel::Classical(c) => Some(c),
        }
    }

    /// Chain rule for two steps of the same kind.
    pub fn compose(&self, later: &MarkovChannel) -> Result<MarkovChannel> {
        match (self, later) {
            (MarkovChannel::Quantum(a), MarkovChannel::Quantum(b)) => {
                Ok(MarkovChannel::Quantum(a.compose(b)?))
            }
            (MarkovChannel::Classical(a), MarkovChannel::Classical(b)) => {
                Ok(MarkovChannel::Classical(a.compose(b)?))
            }
            _ => Err(Error::KindMismatch),
        }
    }

    /// Pull an observable at the output side back to the input side.
    pub fn pullback(&self, o: &NodeObservable) -> Result<NodeObservable> {
        match (self, o) {
            (MarkovChannel::Quantum(q), NodeObservable::Quantum(obs)) => {
                Ok(NodeObservable::Quantum(q.pullback(obs)?))
            }
            (MarkovChannel::Classical(c), NodeObservable::Classical(obs)) => {
                Ok(NodeObservable::Classical(c.pullback(obs)?))
            }
            _ => Err(Error::KindMismatch),
        }
    }

    /// Point map of a deterministic classical channel; quantum channels are
    /// out of scope and report a kind mismatch.
    pub fn is_deterministic(&self, tol: f64) -> Result<Option<Vec<usize>>> {
        match self {
            MarkovChannel::Classical(c) => Ok(c.deterministic_map(tol)),
            MarkovChannel::Quantum(_) => Err(Error::KindMismatch),
        }
    }
}

impl<'de> Deserialize<'de> for MarkovChannel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(rename_all = "lowercase")]
        enum Wire {
            Kraus(Vec<ComplexMatrix>),
            Stochastic(Vec<Vec<f64>>),
        }
        match Wire::deserialize(deserializer)? {
            Wire::Kraus(ks) => QuantumChannel::from_kraus(ks)
                .map(MarkovChannel::Quantum)
                .map_err(D::Error::custom),
            Wire::Stochastic(rows) => StochasticMatrix::from_rows(rows)
                .map(MarkovChannel::Classical)
                .map_err(D::Error::custom),
        }
    }
}

/// Observable living on either kind of space.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NodeObservable {
    Quantum(Observable),
    Classical(ClassicalObservable),
}

impl NodeObservable {
    pub fn len(&self) -> usize {
        match self {
            NodeObservable::Quantum(o) => o.len(),
            NodeObservable::Classical(o) => o.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn outcomes(&self) -> &[Outcome] {
        match self {
            NodeObservable::Quantum(o) => o.outcomes(),
            NodeObservable::Classical(o) => o.outcomes(),
        }
    }

    pub fn as_quantum(&self) -> Option<&Observable> {
        match self {
            NodeObservable::Quantum(o) => Some(o),
            NodeObservable::Classical(_) => None,
        }
    }

    pub fn as_classical(&self) -> Option<&ClassicalObservable> {
        match self {
            NodeObservable::Quantum(_) => None,
            NodeObservable::Classical(o) => Some(o),
        }
    }
}

/// Space descriptor of a tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Matrix algebra on a Hilbert space of this dimension.
    Quantum(usize),
    /// Functions on a point set of this size.
    Classical(usize),
}

impl Space {
    pub fn size(&self) -> usize {
        match self {
            Space::Quantum(d) | Space::Classical(d) => *d,
        }
    }

    fn matches_observable(&self, o: &NodeObservable) -> bool {
        match (self, o) {
            (Space::Quantum(d), NodeObservable::Quantum(obs)) => obs.dim() == *d,
            (Space::Classical(m), NodeObservable::Classical(obs)) => obs.omega_size() == *m,
            _ => false,
        }
    }

    fn matches_channel_end(&self, kind: &MarkovChannel, dim: usize) -> bool {
        match (self, kind) {
            (Space::Quantum(d), MarkovChannel::Quantum(_)) => *d == dim,
            (Space::Classical(m), MarkovChannel::Classical(_)) => *m == dim,
            _ => false,
        }
    }
}

/// One node of a causal tree.
#[derive(Debug, Clone, Deserialize)]
pub struct TreeNode {
    pub id: String,
    pub space: Space,
    pub observable: NodeObservable,
}

/// One parent→child link with its Markov channel.
#[derive(Debug, Clone, Deserialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    pub channel: MarkovChannel,
}

/// Finite rooted tree of observables linked by Markov channels.
#[derive(Debug, Clone)]
pub struct CausalTree {
    nodes: Vec<TreeNode>,
    edges: Vec<TreeEdge>,
    root: usize,
    /// Per node: (child node index, edge index), in edge declaration order.
    children: Vec<Vec<(usize, usize)>>,
}

impl CausalTree {
    pub fn new(nodes: Vec<TreeNode>, edges: Vec<TreeEdge>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidValue("tree needs at least one node".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (k, n) in nodes.iter().enumerate() {
            if n.id.is_empty() {
                return Err(Error::InvalidValue("node id must be non-empty".into()));
            }
            if index.insert(n.id.as_str(), k).is_some() {
                return Err(Error::InvalidValue(format!("duplicate node id '{}'", n.id)));
            }
            if !n.space.matches_observable(&n.observable) {
                return Err(Error::DimensionMismatch(format!(
                    "observable at node '{}' does not match its space",
                    n.id
                )));
            }
        }
        let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes.len()];
        let mut has_parent = vec![false; nodes.len()];
        for (e_idx, e) in edges.iter().enumerate() {
            let p = *index.get(e.parent.as_str()).ok_or_else(|| {
                Error::InvalidValue(format!("edge references unknown node '{}'", e.parent))
            })?;
            let c = *index.get(e.child.as_str()).ok_or_else(|| {
                Error::InvalidValue(format!("edge references unknown node '{}'", e.child))
            })?;
            if has_parent[c] {
                return Err(Error::InvalidValue(format!(
                    "node '{}' has more than one parent",
                    e.child
                )));
            }
            has_parent[c] = true;
            if !nodes[p].space.matches_channel_end(&e.channel, e.channel.dim_in()) {
                return Err(Error::DimensionMismatch(format!(
                    "channel on edge '{}'→'{}' does not match the parent space",
                    e.parent, e.child
                )));
            }
            if !nodes[c].space.matches_channel_end(&e.channel, e.channel.dim_out()) {
                return Err(Error::DimensionMismatch(format!(
                    "channel on edge '{}'→'{}' does not match the child space",
                    e.parent, e.child
                )));
            }
            children[p].push((c, e_idx));
        }
        let mut roots = (0..nodes.len()).filter(|&k| !has_parent[k]);
        let root = roots
            .next()
            .ok_or_else(|| Error::InvalidValue("tree has no root (parent cycle)".into()))?;
        if roots.next().is_some() {
            return Err(Error::InvalidValue("tree is disconnected (several roots)".into()));
        }
        // one root and one parent per remaining node forces edges = nodes - 1;
        // reachability from the root rules out cycles among non-root nodes
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if seen[v] {
                return Err(Error::InvalidValue("tree contains a cycle".into()));
            }
            seen[v] = true;
            stack.extend(children[v].iter().map(|&(c, _)| c));
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidValue("tree contains a cycle".into()));
        }
        Ok(Self { nodes, edges, root, children })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn is_classical(&self) -> bool {
        self.nodes.iter().all(|n| matches!(n.space, Space::Classical(_)))
    }

    /// Node ids in depth-first order from the root, the order used for
    /// outcome tuples.
    pub fn node_order(&self) -> Vec<String> {
        let mut order = Vec::with_capacity(self.nodes.len());
        self.collect_order(self.root, &mut order);
        order
    }

    fn collect_order(&self, v: usize, out: &mut Vec<String>) {
        out.push(self.nodes[v].id.clone());
        for &(c, _) in &self.children[v] {
            self.collect_order(c, out);
        }
    }
}

impl<'de> Deserialize<'de> for CausalTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            nodes: Vec<TreeNode>,
            #[serde(default)]
            edges: Vec<TreeEdge>,
        }
        let wire = Wire::deserialize(deserializer)?;
        CausalTree::new(wire.nodes, wire.edges).map_err(D::Error::custom)
    }
}

/// Root-time observable realizing a causal tree, with the node order its
/// outcome tuples follow.
#[derive(Debug, Clone)]
pub struct Realized {
    pub node_order: Vec<String>,
    pub observable: NodeObservable,
}

/// State fed to a realized tree: a point of a classical root space, or a
/// vector / density matrix on a quantum one.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TreeState {
    Point {
        omega_index: usize,
    },
    Vector {
        #[serde(deserialize_with = "wire::deserialize_cvector")]
        vector: DVector<C64>,
    },
    Density {
        density: ComplexMatrix,
    },
}

/// Contract a causal tree to the single observable at its root. Outcomes are
/// tuples over the depth-first node order (a single-node tree keeps its own
/// labels). Fails with the node id and residual where effect families stop
/// commuting.
pub fn realize(tree: &CausalTree) -> Result<Realized> {
    let node_order = tree.node_order();
    if tree.len() == 1 {
        return Ok(Realized { node_order, observable: tree.root().observable.clone() });
    }
    let observable = match tree.root().space {
        Space::Quantum(_) => {
            let (lists, effects) = realize_quantum(tree, tree.root)?;
            let outcomes = lists.into_iter().map(Outcome::Tuple).collect();
            NodeObservable::Quantum(Observable::new(outcomes, effects)?)
        }
        Space::Classical(m) => {
            let (lists, effects) = realize_classical(tree, tree.root)?;
            let outcomes = lists.into_iter().map(Outcome::Tuple).collect();
            NodeObservable::Classical(ClassicalObservable::new(m, outcomes, effects)?)
        }
    };
    Ok(Realized { node_order, observable })
}

fn realize_quantum(
    tree: &CausalTree,
    v: usize,
) -> Result<(Vec<Vec<Outcome>>, Vec<ComplexMatrix>)> {
    let node = &tree.nodes[v];
    let own = node.observable.as_quantum().ok_or(Error::KindMismatch)?;
    let mut factor_lists: Vec<Vec<Vec<Outcome>>> =
        vec![own.outcomes().iter().map(|x| vec![x.clone()]).collect()];
    let mut factor_effects: Vec<Vec<ComplexMatrix>> = vec![own.effects().to_vec()];
    for &(c, e_idx) in &tree.children[v] {
        let (clists, ceffects) = realize_quantum(tree, c)?;
        let channel = tree.edges[e_idx]
            .channel
            .as_quantum()
            .ok_or(Error::KindMismatch)?;
        let pulled = ceffects
            .iter()
            .map(|e| channel.heisenberg(e))
            .collect::<Result<Vec<_>>>()?;
        factor_lists.push(clists);
        factor_effects.push(pulled);
    }
    let mut worst = 0.0_f64;
    let mut ok = true;
    for i in 0..factor_effects.len() {
        for j in i + 1..factor_effects.len() {
            for e in &factor_effects[i] {
                let norm_e = e.operator_norm()?;
                for g in &factor_effects[j] {
                    let residual = operator::commutator_matrices(e, g)?.operator_norm()?;
                    worst = worst.max(residual);
                    if residual > TOL_COMMUTE * norm_scale(norm_e * g.operator_norm()?) {
                        ok = false;
                    }
                }
            }
        }
    }
    if !ok {
        return Err(Error::NonCommuting { node: Some(node.id.clone()), residual: worst });
    }
    let dim = own.dim();
    let mut lists: Vec<Vec<Outcome>> = vec![Vec::new()];
    let mut effects: Vec<ComplexMatrix> = vec![ComplexMatrix::identity(dim)];
    for (flists, feffects) in factor_lists.iter().zip(&factor_effects) {
        let mut next_lists = Vec::with_capacity(lists.len() * flists.len());
        let mut next_effects = Vec::with_capacity(lists.len() * flists.len());
        for (list, acc) in lists.iter().zip(&effects) {
            for (flist, fe) in flists.iter().zip(feffects) {
                let mut combined = list.clone();
                combined.extend(flist.iter().cloned());
                next_lists.push(combined);
                // Jordan product keeps the accumulated effect Hermitian; it
                // equals the plain product under the certified commutation.
                let af = acc.matmul(fe)?;
                let fa = fe.matmul(acc)?;
                next_effects.push(af.add(&fa)?.scale(C64::new(0.5, 0.0)));
            }
        }
        lists = next_lists;
        effects = next_effects;
    }
    Ok((lists, effects))
}

fn realize_classical(tree: &CausalTree, v: usize) -> Result<(Vec<Vec<Outcome>>, Vec<Vec<f64>>)> {
    let node = &tree.nodes[v];
    let own = node.observable.as_classical().ok_or(Error::KindMismatch)?;
    let mut factor_lists: Vec<Vec<Vec<Outcome>>> =
        vec![own.outcomes().iter().map(|x| vec![x.clone()]).collect()];
    let mut factor_effects: Vec<Vec<Vec<f64>>> = vec![own.effects().to_vec()];
    for &(c, e_idx) in &tree.children[v] {
        let (clists, ceffects) = realize_classical(tree, c)?;
        let channel = tree.edges[e_idx]
            .channel
            .as_classical()
            .ok_or(Error::KindMismatch)?;
        let pulled = ceffects
            .iter()
            .map(|e| channel.pullback_effect(e))
            .collect::<Result<Vec<_>>>()?;
        factor_lists.push(clists);
        factor_effects.push(pulled);
    }
    let m = own.omega_size();
    let mut lists: Vec<Vec<Outcome>> = vec![Vec::new()];
    let mut effects: Vec<Vec<f64>> = vec![vec![1.0; m]];
    for (flists, feffects) in factor_lists.iter().zip(&factor_effects) {
        let mut next_lists = Vec::with_capacity(lists.len() * flists.len());
        let mut next_effects = Vec::with_capacity(lists.len() * flists.len());
        for (list, acc) in lists.iter().zip(&effects) {
            for (flist, fe) in flists.iter().zip(feffects) {
                let mut combined = list.clone();
                combined.extend(flist.iter().cloned());
                next_lists.push(combined);
                next_effects.push(acc.iter().zip(fe).map(|(a, b)| a * b).collect());
            }
        }
        lists = next_lists;
        effects = next_effects;
    }
    Ok((lists, effects))
}

/// Born distribution of a realized tree at a root state.
pub fn measure_realized(realized: &Realized, state: &TreeState) -> Result<OutcomeDistribution> {
    match (&realized.observable, state) {
        (NodeObservable::Classical(o), TreeState::Point { omega_index }) => {
            classical_born(o, *omega_index)
        }
        (NodeObservable::Quantum(o), TreeState::Vector { vector }) => {
            born_distribution(o, &State::pure(vector.clone())?)
        }
        (NodeObservable::Quantum(o), TreeState::Density { density }) => {
            born_distribution(o, &State::mixed(density.clone())?)
        }
        _ => Err(Error::KindMismatch),
    }
}

/// Exact joint distribution of a classical tree at a root point, by explicit
/// enumeration of every point assignment and outcome tuple. Independent of
/// the realization recursion; quadratic-time care is irrelevant at the sizes
/// this oracle serves.
pub fn brute_force_tree_distribution(
    tree: &CausalTree,
    state: &TreeState,
) -> Result<OutcomeDistribution> {
    if !tree.is_classical() {
        return Err(Error::NotClassical);
    }
    let omega_root = match state {
        TreeState::Point { omega_index } => *omega_index,
        _ => return Err(Error::NotClassical),
    };

    // flatten depth-first so tuple positions match the realize outcome order
    fn walk(
        tree: &CausalTree,
        v: usize,
        parent: Option<(usize, usize)>,
        dfs: &mut Vec<usize>,
        parent_of: &mut Vec<Option<(usize, usize)>>,
    ) {
        let pos = dfs.len();
        dfs.push(v);
        parent_of.push(parent);
        for &(c, e_idx) in &tree.children[v] {
            walk(tree, c, Some((pos, e_idx)), dfs, parent_of);
        }
    }
    let mut dfs = Vec::with_capacity(tree.len());
    // parent_of[k]: (depth-first position of the parent, edge index)
    let mut parent_of = Vec::with_capacity(tree.len());
    walk(tree, tree.root, None, &mut dfs, &mut parent_of);

    let n = dfs.len();
    let omega_sizes: Vec<usize> = dfs.iter().map(|&v| tree.nodes[v].space.size()).collect();
    if omega_root >= omega_sizes[0] {
        return Err(Error::IndexOutOfRange { index: omega_root, size: omega_sizes[0] });
    }
    let observables: Vec<&ClassicalObservable> = dfs
        .iter()
        .map(|&v| tree.nodes[v].observable.as_classical().expect("classical tree"))
        .collect();
    let outcome_counts: Vec<usize> = observables.iter().map(|o| o.len()).collect();
    let tuple_total: usize = outcome_counts.iter().product();
    let point_total: usize = omega_sizes.iter().skip(1).product();

    // digits of a linear index in mixed radix, first position slowest
    let digits = |linear: usize, radices: &[usize]| -> Vec<usize> {
        let mut rem = linear;
        let mut out = vec![0usize; radices.len()];
        for k in (0..radices.len()).rev() {
            out[k] = rem % radices[k];
            rem /= radices[k];
        }
        out
    };

    let mut probabilities = vec![0.0_f64; tuple_total];
    for p_lin in 0..point_total {
        let mut points = vec![omega_root];
        points.extend(digits(p_lin, &omega_sizes[1..]));
        let mut path_weight = 1.0;
        for k in 1..n {
            let (parent_pos, e_idx) = parent_of[k].expect("non-root node");
            let channel = tree.edges[e_idx].channel.as_classical().expect("classical tree");
            path_weight *= channel.entry(points[parent_pos], points[k]);
        }
        if path_weight == 0.0 {
            continue;
        }
        for (t_lin, slot) in probabilities.iter_mut().enumerate() {
            let tuple = digits(t_lin, &outcome_counts);
            let mut w = path_weight;
            for k in 0..n {
                w *= observables[k].effects()[tuple[k]][points[k]];
            }
            *slot += w;
        }
    }

    let outcomes = (0..tuple_total)
        .map(|t_lin| {
            let tuple = digits(t_lin, &outcome_counts);
            let labels: Vec<Outcome> = (0..n)
                .map(|k| observables[k].outcomes()[tuple[k]].clone())
                .collect();
            if n == 1 {
                labels.into_iter().next().expect("one node")
            } else {
                Outcome::Tuple(labels)
            }
        })
        .collect();
    OutcomeDistribution::new(outcomes, probabilities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::pvm_from_hermitian;
    use crate::operator::{
        pauli_x, pauli_z, unitary_evolution, ComplexMatrix, HermitianOperator, GROUP_TOL,
    };

    fn pvm(a: &HermitianOperator) -> Observable {
        pvm_from_hermitian(a, GROUP_TOL).unwrap()
    }

    fn crisp2(labels: [&str; 2]) -> ClassicalObservable {
        ClassicalObservable::crisp(
            2,
            labels.iter().map(|s| Outcome::Label((*s).into())).collect(),
            &[0, 1],
        )
        .unwrap()
    }

    fn fuzzy_channel() -> StochasticMatrix {
        StochasticMatrix::from_rows(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()
    }

    #[test]
    fn kraus_family_must_be_unital() {
        let half = ComplexMatrix::identity(2).scale(C64::new(0.5, 0.0));
        assert!(QuantumChannel::from_kraus(vec![half]).is_err());
        assert!(QuantumChannel::from_kraus(vec![ComplexMatrix::identity(2)]).is_ok());
    }

    #[test]
    fn stochastic_rows_must_sum_to_one() {
        assert!(StochasticMatrix::from_rows(vec![vec![0.7, 0.2]]).is_err());
        assert!(StochasticMatrix::from_rows(vec![vec![0.7, 0.3], vec![-0.1, 1.1]]).is_err());
        assert!(fuzzy_channel().deterministic_map(1e-12).is_none());
    }

    #[test]
    fn compose_with_identity_preserves_action() {
        let u = unitary_evolution(&pauli_x(), 0.3, 1.0).unwrap();
        let phi = QuantumChannel::unitary(u).unwrap();
        let composed = QuantumChannel::identity(2).compose(&phi).unwrap();
        let f = pauli_z().matrix().clone();
        let direct = phi.heisenberg(&f).unwrap();
        let via_id = composed.heisenberg(&f).unwrap();
        assert!(direct.max_abs_diff(&via_id) < 1e-14);
    }

    #[test]
    fn compose_classical_with_identity_is_itself() {
        let m = fuzzy_channel();
        let composed = m.compose(&StochasticMatrix::identity(2)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((composed.entry(i, j) - m.entry(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn compose_unitary_steps_applies_first_step_first() {
        // step 1 evolves by U, step 2 by V; the composite evolves states by
        // VU, so effects pull back through (VU)† F (VU)
        let u = unitary_evolution(&pauli_x(), 0.4, 1.0).unwrap();
        let v = unitary_evolution(&pauli_z(), 0.9, 1.0).unwrap();
        let composed = QuantumChannel::unitary(u.clone())
            .unwrap()
            .compose(&QuantumChannel::unitary(v.clone()).unwrap())
            .unwrap();
        let vu = v.matmul(&u).unwrap();
        let f = pauli_z().matrix().clone();
        let expected = vu.adjoint().matmul(&f).unwrap().matmul(&vu).unwrap();
        assert!(composed.heisenberg(&f).unwrap().max_abs_diff(&expected) < 1e-13);
    }

    #[test]
    fn compose_rejects_kind_and_dimension_mismatch() {
        let q = MarkovChannel::Quantum(QuantumChannel::identity(2));
        let c = MarkovChannel::Classical(StochasticMatrix::identity(2));
        assert!(matches!(q.compose(&c), Err(Error::KindMismatch)));
        let q3 = QuantumChannel::identity(3);
        assert!(matches!(
            QuantumChannel::identity(2).compose(&q3),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn compose_prunes_negligible_kraus_products() {
        let eps = 1e-20_f64;
        let k1 = ComplexMatrix::identity(2).scale(C64::new((1.0 - eps * eps).sqrt(), 0.0));
        let k2 = pauli_x().matrix().scale(C64::new(eps, 0.0));
        let tiny = QuantumChannel::from_kraus(vec![k1, k2]).unwrap();
        let composed = QuantumChannel::identity(2).compose(&tiny).unwrap();
        assert_eq!(composed.kraus().unwrap().len(), 1);
        assert!(composed.unitality_residual().unwrap() < 1e-10);
    }

    #[test]
    fn compose_switches_to_superoperator_beyond_cap() {
        // round: F ↦ 0.8 F + 0.2 sx F sx, which scales sz by 0.6 per round
        let c = 0.8_f64.sqrt();
        let s = 0.2_f64.sqrt();
        let round = QuantumChannel::from_kraus(vec![
            ComplexMatrix::identity(2).scale(C64::new(c, 0.0)),
            pauli_x().matrix().scale(C64::new(s, 0.0)),
        ])
        .unwrap();
        let mut acc = round.clone();
        for _ in 1..13 {
            acc = acc.compose(&round).unwrap();
        }
        assert!(acc.is_superop());
        let image = acc.heisenberg(pauli_z().matrix()).unwrap();
        let expected = pauli_z().matrix().scale(C64::new(0.6_f64.powi(13), 0.0));
        assert!(image.max_abs_diff(&expected) < 1e-12);
        assert!(acc.unitality_residual().unwrap() < 1e-10);
    }

    #[test]
    fn superoperator_and_kraus_actions_agree() {
        let raw = vec![
            ComplexMatrix::new(
                2,
                2,
                vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4), C64::new(0.0, 0.9), C64::new(0.5, -0.3)],
            )
            .unwrap(),
            ComplexMatrix::new(
                2,
                2,
                vec![C64::new(1.0, 0.0), C64::new(0.2, -0.1), C64::new(-0.4, 0.0), C64::new(0.3, 0.6)],
            )
            .unwrap(),
        ];
        let kraus = normalize_kraus(raw).unwrap();
        let phi = QuantumChannel::from_kraus(kraus.clone()).unwrap();
        let as_super = QuantumChannel {
            dim_in: 2,
            dim_out: 2,
            rep: QuantumRep::Super(phi.superop()),
        };
        let f = ComplexMatrix::new(
            2,
            2,
            vec![C64::new(0.2, 0.0), C64::new(0.1, 0.7), C64::new(0.1, -0.7), C64::new(-0.9, 0.0)],
        )
        .unwrap();
        assert!(phi.heisenberg(&f).unwrap().max_abs_diff(&as_super.heisenberg(&f).unwrap()) < 1e-13);
        assert!(phi.schrodinger(&f).unwrap().max_abs_diff(&as_super.schrodinger(&f).unwrap()) < 1e-13);
    }

    #[test]
    fn channel_power_matches_sequential_composition() {
        let u = unitary_evolution(&pauli_x(), 0.37, 1.0).unwrap();
        let round = QuantumChannel::unitary(u)
            .unwrap()
            .compose(&QuantumChannel::from_kraus(vec![
                ComplexMatrix::identity(2).scale(C64::new(0.9_f64.sqrt(), 0.0)),
                pauli_z().matrix().scale(C64::new(0.1_f64.sqrt(), 0.0)),
            ])
            .unwrap())
            .unwrap();
        let probe = pvm(&pauli_z()).effect(0).clone();
        let mut seq = round.clone();
        for n in 1..=9 {
            let pow = round.power(n).unwrap();
            let a = pow.heisenberg(&probe).unwrap();
            let b = seq.heisenberg(&probe).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12, "n = {n}");
            seq = seq.compose(&round).unwrap();
        }
        assert!(matches!(round.power(0), Err(Error::InvalidValue(_))));
        let rect = QuantumChannel::from_kraus(vec![
            ComplexMatrix::new(1, 2, vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).unwrap(),
            ComplexMatrix::new(1, 2, vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]).unwrap(),
        ])
        .unwrap();
        assert!(matches!(rect.power(2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn heisenberg_and_schrodinger_are_trace_dual() {
        let raw = vec![
            ComplexMatrix::new(
                2,
                2,
                vec![C64::new(0.6, -0.2), C64::new(0.0, 0.3), C64::new(0.8, 0.0), C64::new(-0.1, 0.5)],
            )
            .unwrap(),
        ];
        let phi = QuantumChannel::from_kraus(normalize_kraus(raw).unwrap()).unwrap();
        let rho = ComplexMatrix::from_real(2, 2, &[0.7, 0.1, 0.1, 0.3]).unwrap();
        let f = pauli_x().matrix().clone();
        let lhs = phi.schrodinger(&rho).unwrap().matmul(&f).unwrap().trace();
        let rhs = rho.matmul(&phi.heisenberg(&f).unwrap()).unwrap().trace();
        assert!((lhs - rhs).norm() < 1e-13);
    }

    #[test]
    fn pullback_through_identity_is_identity() {
        let o = pvm(&pauli_z());
        let pulled = QuantumChannel::identity(2).pullback(&o).unwrap();
        for k in 0..o.len() {
            assert!(pulled.effect(k).max_abs_diff(o.effect(k)) < 1e-15);
        }
    }

    #[test]
    fn pullback_classical_stochastic_matches_matrix_vector_product() {
        let crisp = crisp2(["a", "b"]);
        let pulled = fuzzy_channel().pullback(&crisp).unwrap();
        assert!((pulled.effects()[0][0] - 0.7).abs() < 1e-15);
        assert!((pulled.effects()[0][1] - 0.4).abs() < 1e-15);
        assert!((pulled.effects()[1][0] - 0.3).abs() < 1e-15);
        assert!((pulled.effects()[1][1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pullback_through_unitary_conjugates_effects() {
        let u = unitary_evolution(&pauli_x(), 0.7, 1.0).unwrap();
        let phi = QuantumChannel::unitary(u.clone()).unwrap();
        let o = pvm(&pauli_z());
        let pulled = phi.pullback(&o).unwrap();
        for k in 0..o.len() {
            let expected = u.adjoint().matmul(o.effect(k)).unwrap().matmul(&u).unwrap();
            assert!(pulled.effect(k).max_abs_diff(&expected) < 1e-13);
        }
    }

    #[test]
    fn pullback_rejects_dimension_mismatch() {
        let o = pvm(&pauli_z());
        assert!(matches!(
            QuantumChannel::identity(3).pullback(&o),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn deterministic_map_of_permutation() {
        let m = StochasticMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(m.deterministic_map(1e-12), Some(vec![1, 0]));
    }

    #[test]
    fn deterministic_map_tolerance_semantics() {
        let m = StochasticMatrix::from_rows(vec![
            vec![1.0 - 1e-13, 1e-13],
            vec![0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(m.deterministic_map(1e-12), Some(vec![0, 1]));
        assert_eq!(m.deterministic_map(1e-14), None);
    }

    #[test]
    fn is_deterministic_rejects_quantum_channels() {
        let q = MarkovChannel::Quantum(QuantumChannel::identity(2));
        assert!(matches!(q.is_deterministic(1e-12), Err(Error::KindMismatch)));
    }

    #[test]
    fn deterministic_pullback_keeps_crisp_observables_crisp() {
        let m = StochasticMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let pulled = m.pullback(&crisp2(["a", "b"])).unwrap();
        for e in pulled.effects() {
            for &x in e {
                assert!(x == 0.0 || x == 1.0);
            }
        }
    }

    fn classical_node(id: &str, observable: ClassicalObservable) -> TreeNode {
        TreeNode {
            id: id.into(),
            space: Space::Classical(observable.omega_size()),
            observable: NodeObservable::Classical(observable),
        }
    }

    fn classical_edge(parent: &str, child: &str, m: StochasticMatrix) -> TreeEdge {
        TreeEdge {
            parent: parent.into(),
            child: child.into(),
            channel: MarkovChannel::Classical(m),
        }
    }

    #[test]
    fn single_node_tree_realizes_unchanged() {
        let tree = CausalTree::new(vec![classical_node("t0", crisp2(["a", "b"]))], vec![]).unwrap();
        let realized = realize(&tree).unwrap();
        assert_eq!(realized.node_order, vec!["t0".to_string()]);
        let o = realized.observable.as_classical().unwrap();
        assert_eq!(o.outcomes()[0], Outcome::Label("a".into()));
        let dist = measure_realized(&realized, &TreeState::Point { omega_index: 1 }).unwrap();
        assert_eq!(dist.probability_of(&Outcome::Label("b".into())), 1.0);
    }

    #[test]
    fn deterministic_chain_yields_forced_tuple() {
        let phi = StochasticMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let tree = CausalTree::new(
            vec![
                classical_node("t0", crisp2(["a", "b"])),
                classical_node("t1", crisp2(["c", "d"])),
            ],
            vec![classical_edge("t0", "t1", phi)],
        )
        .unwrap();
        let realized = realize(&tree).unwrap();
        let dist = measure_realized(&realized, &TreeState::Point { omega_index: 0 }).unwrap();
        let forced = Outcome::Tuple(vec![Outcome::Label("a".into()), Outcome::Label("c".into())]);
        assert!((dist.probability_of(&forced) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fuzzy_chain_matches_hand_values_and_oracle() {
        let tree = CausalTree::new(
            vec![
                classical_node("t0", crisp2(["a", "b"])),
                classical_node("t1", crisp2(["c", "d"])),
            ],
            vec![classical_edge("t0", "t1", fuzzy_channel())],
        )
        .unwrap();
        let realized = realize(&tree).unwrap();
        let state = TreeState::Point { omega_index: 0 };
        let dist = measure_realized(&realized, &state).unwrap();
        let ac = Outcome::Tuple(vec![Outcome::Label("a".into()), Outcome::Label("c".into())]);
        let ad = Outcome::Tuple(vec![Outcome::Label("a".into()), Outcome::Label("d".into())]);
        assert!((dist.probability_of(&ac) - 0.7).abs() < 1e-15);
        assert!((dist.probability_of(&ad) - 0.3).abs() < 1e-15);
        let oracle = brute_force_tree_distribution(&tree, &state).unwrap();
        assert_eq!(dist.outcomes(), oracle.outcomes());
        assert!(dist.max_abs_diff(&oracle) < 1e-15);
    }

    #[test]
    fn v_tree_with_fuzzy_observables_matches_oracle() {
        let fuzzy_obs = ClassicalObservable::new(
            2,
            vec![Outcome::Real(0.0), Outcome::Real(1.0)],
            vec![vec![0.9, 0.2], vec![0.1, 0.8]],
        )
        .unwrap();
        let m_left = fuzzy_channel();
        let m_right = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
        let tree = CausalTree::new(
            vec![
                classical_node("t0", fuzzy_obs.clone()),
                classical_node("left", fuzzy_obs.clone()),
                classical_node("right", fuzzy_obs),
            ],
            vec![
                classical_edge("t0", "left", m_left),
                classical_edge("t0", "right", m_right),
            ],
        )
        .unwrap();
        let realized = realize(&tree).unwrap();
        assert_eq!(realized.node_order, vec!["t0".to_string(), "left".into(), "right".into()]);
        for omega in 0..2 {
            let state = TreeState::Point { omega_index: omega };
            let dist = measure_realized(&realized, &state).unwrap();
            let oracle = brute_force_tree_distribution(&tree, &state).unwrap();
            assert_eq!(dist.outcomes(), oracle.outcomes());
            assert!(dist.max_abs_diff(&oracle) < 1e-14);
        }
    }

    #[test]
    fn uniform_edges_spread_child_outcomes_uniformly() {
        let uniform = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let tree = CausalTree::new(
            vec![
                classical_node("t0", crisp2(["a", "b"])),
                classical_node("t1", crisp2(["c", "d"])),
            ],
            vec![classical_edge("t0", "t1", uniform)],
        )
        .unwrap();
        let state = TreeState::Point { omega_index: 1 };
        let oracle = brute_force_tree_distribution(&tree, &state).unwrap();
        let bc = Outcome::Tuple(vec![Outcome::Label("b".into()), Outcome::Label("c".into())]);
        let bd = Outcome::Tuple(vec![Outcome::Label("b".into()), Outcome::Label("d".into())]);
        assert!((oracle.probability_of(&bc) - 0.5).abs() < 1e-15);
        assert!((oracle.probability_of(&bd) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantum_chain_with_commuting_step_is_repeatable() {
        // the step commutes with sz, so the pulled-back observable coincides
        // with the root one and the joint distribution sits on the diagonal
        let u = unitary_evolution(&pauli_z(), 0.6, 1.0).unwrap();
        let tree = CausalTree::new(
            vec![
                TreeNode {
                    id: "t0".into(),
                    space: Space::Quantum(2),
                    observable: NodeObservable::Quantum(pvm(&pauli_z())),
                },
                TreeNode {
                    id: "t1".into(),
                    space: Space::Quantum(2),
                    observable: NodeObservable::Quantum(pvm(&pauli_z())),
                },
            ],
            vec![TreeEdge {
                parent: "t0".into(),
                child: "t1".into(),
                channel: MarkovChannel::Quantum(QuantumChannel::unitary(u).unwrap()),
            }],
        )
        .unwrap();
        let realized = realize(&tree).unwrap();
        let plus = DVector::from_vec(vec![
            C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        ]);
        let dist = measure_realized(&realized, &TreeState::Vector { vector: plus }).unwrap();
        let same_minus = Outcome::Tuple(vec![Outcome::Real(-1.0), Outcome::Real(-1.0)]);
        let same_plus = Outcome::Tuple(vec![Outcome::Real(1.0), Outcome::Real(1.0)]);
        let cross = Outcome::Tuple(vec![Outcome::Real(1.0), Outcome::Real(-1.0)]);
        assert!((dist.probability_of(&same_minus) - 0.5).abs() < 1e-12);
        assert!((dist.probability_of(&same_plus) - 0.5).abs() < 1e-12);
        assert!(dist.probability_of(&cross).abs() < 1e-12);
    }

    #[test]
    fn quantum_chain_with_tilted_step_fails_to_commute() {
        let u = unitary_evolution(&pauli_x(), 0.1, 1.0).unwrap();
        let tree = CausalTree::new(
            vec![
                TreeNode {
                    id: "t0".into(),
                    space: Space::Quantum(2),
                    observable: NodeObservable::Quantum(pvm(&pauli_z())),
                },
                TreeNode {
                    id: "t1".into(),
                    space: Space::Quantum(2),
                    observable: NodeObservable::Quantum(pvm(&pauli_z())),
                },
            ],
            vec![TreeEdge {
                parent: "t0".into(),
                child: "t1".into(),
                channel: MarkovChannel::Quantum(QuantumChannel::unitary(u).unwrap()),
            }],
        )
        .unwrap();
        match realize(&tree).unwrap_err() {
            Error::NonCommuting { node, residual } => {
                assert_eq!(node.as_deref(), Some("t0"));
                // ‖[(I±sz)/2, U†(I±sz)U/2]‖ = sin(0.2)/2 for U = exp(-0.1 i sx)
                assert!((residual - 0.5 * (0.2_f64).sin()).abs() < 1e-12);
            }
            other => panic!("expected NonCommuting, got {other:?}"),
        }
    }

    #[test]
    fn tree_validation_rejects_malformed_shapes() {
        let two_parents = CausalTree::new(
            vec![
                classical_node("r1", crisp2(["a", "b"])),
                classical_node("r2", crisp2(["a", "b"])),
                classical_node("c", crisp2(["a", "b"])),
            ],
            vec![
                classical_edge("r1", "c", StochasticMatrix::identity(2)),
                classical_edge("r2", "c", StochasticMatrix::identity(2)),
            ],
        );
        assert!(two_parents.is_err());

        let cycle = CausalTree::new(
            vec![
                classical_node("a", crisp2(["x", "y"])),
                classical_node("b", crisp2(["x", "y"])),
            ],
            vec![
                classical_edge("a", "b", StochasticMatrix::identity(2)),
                classical_edge("b", "a", StochasticMatrix::identity(2)),
            ],
        );
        assert!(cycle.is_err());

        let unknown = CausalTree::new(
            vec![classical_node("a", crisp2(["x", "y"]))],
            vec![classical_edge("a", "ghost", StochasticMatrix::identity(2))],
        );
        assert!(unknown.is_err());

        let kind_clash = CausalTree::new(
            vec![
                classical_node("a", crisp2(["x", "y"])),
                TreeNode {
                    id: "b".into(),
                    space: Space::Quantum(2),
                    observable: NodeObservable::Quantum(pvm(&pauli_z())),
                },
            ],
            vec![classical_edge("a", "b", StochasticMatrix::identity(2))],
        );
        assert!(kind_clash.is_err());
    }

    #[test]
    fn brute_force_requires_classical_point_state() {
        let tree = CausalTree::new(
            vec![TreeNode {
                id: "t0".into(),
                space: Space::Quantum(2),
                observable: NodeObservable::Quantum(pvm(&pauli_z())),
            }],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            brute_force_tree_distribution(&tree, &TreeState::Point { omega_index: 0 }),
            Err(Error::NotClassical)
        ));
    }

    #[test]
    fn tree_json_matches_file_format() {
        let json = r#"{
            "nodes": [
                {"id": "t0", "space": {"classical": 2},
                 "observable": {"omega_size": 2, "outcomes": ["a", "b"],
                                "effects": [[1.0, 0.0], [0.0, 1.0]]}},
                {"id": "t1", "space": {"classical": 2},
                 "observable": {"omega_size": 2, "outcomes": ["c", "d"],
                                "effects": [[1.0, 0.0], [0.0, 1.0]]}}
            ],
            "edges": [
                {"parent": "t0", "child": "t1",
                 "channel": {"stochastic": [[0.7, 0.3], [0.4, 0.6]]}}
            ]
        }"#;
        let tree: CausalTree = serde_json::from_str(json).unwrap();
        let realized = realize(&tree).unwrap();
        let dist =
            measure_realized(&realized, &TreeState::Point { omega_index: 0 }).unwrap();
        let ac = Outcome::Tuple(vec![Outcome::Label("a".into()), Outcome::Label("c".into())]);
        assert!((dist.probability_of(&ac) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn quantum_tree_json_with_kraus_channel() {
        let json = r#"{
            "nodes": [
                {"id": "t0", "space": {"quantum": 2},
                 "observable": {"outcomes": [-1.0, 1.0],
                                "effects": [
                                    {"rows":2,"cols":2,"entries":[[0,0],[0,0],[0,0],[1,0]]},
                                    {"rows":2,"cols":2,"entries":[[1,0],[0,0],[0,0],[0,0]]}
                                ]}},
                {"id": "t1", "space": {"quantum": 2},
                 "observable": {"outcomes": [-1.0, 1.0],
                                "effects": [
                                    {"rows":2,"cols":2,"entries":[[0,0],[0,0],[0,0],[1,0]]},
                                    {"rows":2,"cols":2,"entries":[[1,0],[0,0],[0,0],[0,0]]}
                                ]}}
            ],
            "edges": [
                {"parent": "t0", "child": "t1",
                 "channel": {"kraus": [{"rows":2,"cols":2,"entries":[[1,0],[0,0],[0,0],[1,0]]}]}}
            ]
        }"#;
        let tree: CausalTree = serde_json::from_str(json).unwrap();
        let realized = realize(&tree).unwrap();
        assert_eq!(realized.observable.len(), 4);
    }
}
