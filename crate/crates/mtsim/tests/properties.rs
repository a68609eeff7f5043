use mtsim::causality::{normalize_kraus, QuantumChannel, StochasticMatrix};
use mtsim::measurement::{
    born_distribution, classical_born, product_observable, pvm_from_hermitian,
    ClassicalObservable, Observable, Outcome, State,
};
use mtsim::operator::{
    commutator_matrices, spectral_decomposition, tensor, tensor_vec, unitary_evolution,
    ComplexMatrix, GROUP_TOL,
};
use mtsim::uncertainty::{certify, deltas, haar_unit_vector, random_hermitian, random_scenario};
use mtsim::C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(dim: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let entries = (0..dim * dim)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    ComplexMatrix::new(dim, dim, entries).unwrap()
}

fn random_channel(dim: usize, kraus_count: usize, rng: &mut impl Rng) -> QuantumChannel {
    let raw = (0..kraus_count).map(|_| random_matrix(dim, rng)).collect();
    QuantumChannel::from_kraus(normalize_kraus(raw).unwrap()).unwrap()
}

fn random_stochastic(dim_in: usize, dim_out: usize, rng: &mut impl Rng) -> StochasticMatrix {
    let rows = (0..dim_in)
        .map(|_| {
            let raw: Vec<f64> = (0..dim_out).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect();
    StochasticMatrix::from_rows(rows).unwrap()
}

fn random_fuzzy_classical(
    omega_size: usize,
    outcome_count: usize,
    rng: &mut impl Rng,
) -> ClassicalObservable {
    let mut effects = vec![vec![0.0; omega_size]; outcome_count];
    for point in 0..omega_size {
        let raw: Vec<f64> = (0..outcome_count).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        for (x, weight) in raw.iter().enumerate() {
            effects[x][point] = weight / total;
        }
    }
    let outcomes = (0..outcome_count).map(|x| Outcome::Real(x as f64)).collect();
    ClassicalObservable::new(omega_size, outcomes, effects).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // reconstructing from eigenvalue groups and projectors recovers the operator
    #[test]
    fn spectral_reconstruction_matches_operator(seed in any::<u64>(), dim in 2usize..=6) {
        let mut rng = rng_for(seed);
        let a = random_hermitian(dim, &mut rng);
        let dec = spectral_decomposition(&a, GROUP_TOL).unwrap();
        prop_assert!(dec.reconstruct().max_abs_diff(a.matrix()) < 1e-7);
        let mut total = ComplexMatrix::zeros(dim, dim);
        for p in dec.projectors() {
            total = total.add(p).unwrap();
        }
        prop_assert!(total.max_abs_diff(&ComplexMatrix::identity(dim)) < 1e-10);
    }

    // [A, B]† = −[A, B] for Hermitian A, B
    #[test]
    fn commutator_of_hermitians_is_anti_hermitian(seed in any::<u64>(), dim in 2usize..=6) {
        let mut rng = rng_for(seed);
        let a = random_hermitian(dim, &mut rng);
        let b = random_hermitian(dim, &mut rng);
        let c = commutator_matrices(a.matrix(), b.matrix()).unwrap();
        prop_assert!(c.add(&c.adjoint()).unwrap().max_abs_diff(&ComplexMatrix::zeros(dim, dim)) < 1e-10);
    }

    // exp(−itH/ħ) is unitary for every t and ħ > 0
    #[test]
    fn evolution_is_unitary(seed in any::<u64>(), dim in 2usize..=5, t in -3.0..3.0f64, hbar in 0.5..2.0f64) {
        let mut rng = rng_for(seed);
        let h = random_hermitian(dim, &mut rng);
        let u = unitary_evolution(&h, t, hbar).unwrap();
        prop_assert!(u.adjoint().matmul(&u).unwrap().max_abs_diff(&ComplexMatrix::identity(dim)) < 1e-10);
    }

    // (A⊗B)(C⊗D) = AC⊗BD and (A⊗B)(u⊗v) = Au⊗Bv
    #[test]
    fn tensor_respects_products(seed in any::<u64>(), da in 2usize..=3, db in 2usize..=3) {
        let mut rng = rng_for(seed);
        let a = random_matrix(da, &mut rng);
        let b = random_matrix(db, &mut rng);
        let c = random_matrix(da, &mut rng);
        let d = random_matrix(db, &mut rng);
        let lhs = tensor(&a, &b).matmul(&tensor(&c, &d)).unwrap();
        let rhs = tensor(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        let u = haar_unit_vector(da, &mut rng);
        let v = haar_unit_vector(db, &mut rng);
        let applied = tensor(&a, &b).apply(&tensor_vec(&u, &v)).unwrap();
        let split = tensor_vec(&a.apply(&u).unwrap(), &b.apply(&v).unwrap());
        prop_assert!((applied - split).norm() < 1e-10);
    }

    // measurement probabilities are nonnegative and total 1
    #[test]
    fn born_distribution_is_a_probability(seed in any::<u64>(), dim in 2usize..=6) {
        let mut rng = rng_for(seed);
        let o = pvm_from_hermitian(&random_hermitian(dim, &mut rng), GROUP_TOL).unwrap();
        let u = haar_unit_vector(dim, &mut rng);
        let dist = born_distribution(&o, &State::pure(u).unwrap()).unwrap();
        let total: f64 = dist.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(dist.probabilities().iter().all(|&p| p >= -1e-12));
    }

    // the joint of two lifted sharp observables has the factor distributions as marginals
    #[test]
    fn product_observable_reproduces_marginals(seed in any::<u64>(), dh in 2usize..=3, dk in 2usize..=3) {
        let mut rng = rng_for(seed);
        let oa = pvm_from_hermitian(&random_hermitian(dh, &mut rng), GROUP_TOL).unwrap();
        let ob = pvm_from_hermitian(&random_hermitian(dk, &mut rng), GROUP_TOL).unwrap();
        let id_h = ComplexMatrix::identity(dh);
        let id_k = ComplexMatrix::identity(dk);
        let lift_a = Observable::new(
            oa.outcomes().to_vec(),
            oa.effects().iter().map(|e| tensor(e, &id_k)).collect(),
        ).unwrap();
        let lift_b = Observable::new(
            ob.outcomes().to_vec(),
            ob.effects().iter().map(|e| tensor(&id_h, e)).collect(),
        ).unwrap();
        let joint = product_observable(&lift_a, &lift_b).unwrap();
        let u = haar_unit_vector(dh, &mut rng);
        let v = haar_unit_vector(dk, &mut rng);
        let joint_dist = born_distribution(&joint, &State::pure(tensor_vec(&u, &v)).unwrap()).unwrap();
        let dist_a = born_distribution(&oa, &State::pure(u).unwrap()).unwrap();
        let dist_b = born_distribution(&ob, &State::pure(v).unwrap()).unwrap();
        for x in 0..oa.len() {
            let marginal: f64 = (0..ob.len()).map(|y| joint_dist.probabilities()[x * ob.len() + y]).sum();
            prop_assert!((marginal - dist_a.probabilities()[x]).abs() < 1e-10);
        }
        for y in 0..ob.len() {
            let marginal: f64 = (0..oa.len()).map(|x| joint_dist.probabilities()[x * ob.len() + y]).sum();
            prop_assert!((marginal - dist_b.probabilities()[y]).abs() < 1e-10);
        }
    }

    // the diagonal-matrix embedding of a classical observable reproduces its statistics
    #[test]
    fn classical_embedding_preserves_distributions(seed in any::<u64>(), omega in 2usize..=4, k in 2usize..=4) {
        let mut rng = rng_for(seed);
        let o = random_fuzzy_classical(omega, k, &mut rng);
        let q = o.to_quantum().unwrap();
        for point in 0..omega {
            let classical = classical_born(&o, point).unwrap();
            let quantum = born_distribution(&q, &State::basis(omega, point).unwrap()).unwrap();
            prop_assert!(classical.max_abs_diff(&quantum) < 1e-12);
        }
    }

    // chaining is associative
    #[test]
    fn channel_composition_is_associative(seed in any::<u64>(), dim in 2usize..=3) {
        let mut rng = rng_for(seed);
        let c1 = random_channel(dim, 2, &mut rng);
        let c2 = random_channel(dim, 2, &mut rng);
        let c3 = random_channel(dim, 2, &mut rng);
        let probe = random_hermitian(dim, &mut rng);
        let lhs = c1.compose(&c2).unwrap().compose(&c3).unwrap();
        let rhs = c1.compose(&c2.compose(&c3).unwrap()).unwrap();
        let a = lhs.heisenberg(probe.matrix()).unwrap();
        let b = rhs.heisenberg(probe.matrix()).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-11);
    }

    // n-fold self-composition satisfies the power law
    #[test]
    fn channel_power_is_additive(seed in any::<u64>(), a in 1usize..=5, b in 1usize..=5) {
        let mut rng = rng_for(seed);
        let round = random_channel(2, 2, &mut rng);
        let probe = random_hermitian(2, &mut rng);
        let split = round.power(a).unwrap().compose(&round.power(b).unwrap()).unwrap();
        let joined = round.power(a + b).unwrap();
        let lhs = split.heisenberg(probe.matrix()).unwrap();
        let rhs = joined.heisenberg(probe.matrix()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
    }

    // pulling a resolution of identity through a channel keeps it a resolution
    #[test]
    fn pullback_preserves_normalization(seed in any::<u64>(), dim in 2usize..=4) {
        let mut rng = rng_for(seed);
        let channel = random_channel(dim, 2, &mut rng);
        let o = pvm_from_hermitian(&random_hermitian(dim, &mut rng), GROUP_TOL).unwrap();
        let pulled = channel.pullback(&o).unwrap();
        let mut total = ComplexMatrix::zeros(dim, dim);
        for e in pulled.effects() {
            prop_assert!(e.max_abs_diff(&e.adjoint()) < 1e-10);
            total = total.add(e).unwrap();
        }
        prop_assert!(total.max_abs_diff(&ComplexMatrix::identity(dim)) < 1e-9);
    }

    // a point-map channel pulls crisp observables back to crisp observables
    #[test]
    fn deterministic_channels_preserve_crisp_observables(
        seed in any::<u64>(),
        omega_in in 2usize..=4,
        omega_out in 2usize..=4,
        outcome_count in 2usize..=3,
    ) {
        let mut rng = rng_for(seed);
        let map: Vec<usize> = (0..omega_in).map(|_| rng.random_range(0..omega_out)).collect();
        let rows = map
            .iter()
            .map(|&j| {
                let mut row = vec![0.0; omega_out];
                row[j] = 1.0;
                row
            })
            .collect();
        let channel = StochasticMatrix::from_rows(rows).unwrap();
        prop_assert_eq!(channel.deterministic_map(1e-12), Some(map.clone()));
        let assignment: Vec<usize> =
            (0..omega_out).map(|_| rng.random_range(0..outcome_count)).collect();
        let outcomes: Vec<Outcome> = (0..outcome_count).map(|x| Outcome::Real(x as f64)).collect();
        let child = ClassicalObservable::crisp(omega_out, outcomes.clone(), &assignment).unwrap();
        let pulled = channel.pullback(&child).unwrap();
        let composed: Vec<usize> = map.iter().map(|&j| assignment[j]).collect();
        let expected = ClassicalObservable::crisp(omega_in, outcomes, &composed).unwrap();
        for (e, g) in pulled.effects().iter().zip(expected.effects()) {
            for (a, b) in e.iter().zip(g) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }

    // chaining stochastic steps yields a stochastic step
    #[test]
    fn stochastic_composition_stays_stochastic(seed in any::<u64>(), a in 2usize..=4, b in 2usize..=4, c in 2usize..=4) {
        let mut rng = rng_for(seed);
        let first = random_stochastic(a, b, &mut rng);
        let second = random_stochastic(b, c, &mut rng);
        let chained = first.compose(&second).unwrap();
        for i in 0..a {
            let mut total = 0.0;
            for j in 0..c {
                let x = chained.entry(i, j);
                prop_assert!(x >= -1e-14 && x <= 1.0 + 1e-12);
                total += x;
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    // plain noise magnitude dominates its centered version
    #[test]
    fn noise_magnitude_dominates_centered_magnitude(seed in any::<u64>(), dh in 2usize..=3, dk in 2usize..=3, hyp1 in any::<bool>()) {
        let mut rng = rng_for(seed);
        let scn = random_scenario(dh, dk, &mut rng, hyp1).unwrap();
        let u = haar_unit_vector(dh, &mut rng);
        for (delta, delta_bar) in deltas(&scn, &u).unwrap() {
            prop_assert!(delta >= delta_bar - 1e-12);
        }
    }

    // adding the nonnegative mixed terms can only widen the margin
    #[test]
    fn rough_margin_dominates_plain_margin(seed in any::<u64>(), dh in 2usize..=3, dk in 2usize..=3) {
        let mut rng = rng_for(seed);
        let scn = random_scenario(dh, dk, &mut rng, true).unwrap();
        let u = haar_unit_vector(dh, &mut rng);
        let cert = certify(&scn, &u).unwrap();
        prop_assert!(cert.same_average);
        let plain = cert.margin_ishikawa.unwrap();
        prop_assert!(cert.margin_rough >= plain - 1e-12);
    }
}
