//! Sampled invariants of norms, flowed lattices, realizing sequences, exhaustions and the
//! nested-box construction.

use dirichlet_core::approx::*;
use dirichlet_core::constructor::*;
use dirichlet_core::exhaustion::*;
use dirichlet_core::lattice_flow::*;
use dirichlet_core::norms::*;
use dirichlet_core::rational::{from_i64, ratio};
use num_rational::BigRational;
use num_traits::One;
use proptest::prelude::*;
use rand::Rng;

fn norm_strategy() -> impl Strategy<Value = NormSpec> {
    (1usize..=5, 0usize..4, 1i64..=8).prop_flat_map(|(dim, kind, p)| {
        prop::collection::vec(1i64..=9, dim).prop_map(move |w| match kind {
            0 => NormSpec::sup(dim),
            1 => NormSpec::euclidean(dim),
            2 => NormSpec::p(ratio(p + 2, 2), dim).unwrap(),
            _ => NormSpec::weighted_sup(w.iter().map(|&v| ratio(v, 3)).collect()).unwrap(),
        })
    })
}

fn vec_for(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, dim)
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// A matrix with entries `k/den` in `[0, 1)`.
fn theta_strategy(max_d: usize, den: i64) -> impl Strategy<Value = MatrixPoint> {
    (1usize..=2, 1usize..=2)
        .prop_filter("dimension cap", move |(m, n)| m + n <= max_d)
        .prop_flat_map(move |(m, n)| {
            prop::collection::vec(0..den, m * n)
                .prop_map(move |ks| MatrixPoint::new(m, n, ks.iter().map(|&k| ratio(k, den)).collect()).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn norm_homogeneity((spec, x) in norm_strategy().prop_flat_map(|s| { let d = s.dim; (Just(s), vec_for(d)) }), lam in -50f64..50.0) {
        let scaled: Vec<f64> = x.iter().map(|v| v * lam).collect();
        let lhs = spec.eval(&scaled).unwrap();
        prop_assert!((lhs - lam.abs() * spec.eval(&x).unwrap()).abs() <= 1e-10 * lhs.max(1e-300));
    }

    #[test]
    fn norm_triangle((spec, x, y) in norm_strategy().prop_flat_map(|s| { let d = s.dim; (Just(s), vec_for(d), vec_for(d)) })) {
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (a, b, c) = (spec.eval(&sum).unwrap(), spec.eval(&x).unwrap(), spec.eval(&y).unwrap());
        prop_assert!(a <= b + c + 1e-10 * (b + c).max(1.0));
    }

    #[test]
    fn norm_equivalence_sandwich((spec, x) in norm_strategy().prop_flat_map(|s| { let d = s.dim; (Just(s), vec_for(d)) })) {
        let (lo, hi) = spec.equivalence_constants();
        let (v, s) = (spec.eval(&x).unwrap(), sup(&x));
        prop_assert!(lo * s <= v * (1.0 + 1e-12) && v <= hi * s * (1.0 + 1e-12));
    }

    #[test]
    fn norm_is_absolute_and_monotone(
        (spec, x, i) in norm_strategy().prop_flat_map(|s| { let d = s.dim; (Just(s), vec_for(d), 0..d) }),
        shrink in 0f64..1.0,
        flip in any::<bool>(),
    ) {
        let mut y = x.clone();
        y[i] *= if flip { -shrink } else { shrink };
        prop_assert!(spec.eval(&y).unwrap() <= spec.eval(&x).unwrap() * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lattice_is_unimodular(theta in theta_strategy(4, 1 << 20)) {
        prop_assert!(lattice_of(&theta).det.is_one());
    }

    #[test]
    fn flow_preserves_covolume(m in 1usize..=3, n in 1usize..=3, t in 1.0f64..1e6, seed in any::<u64>()) {
        let mut rng = sample_rng(seed, 0);
        let mut block = |len: usize| -> Vec<BigRational> {
            let raw: Vec<i64> = (0..len).map(|_| rng.gen_range(1..=20)).collect();
            let total: i64 = raw.iter().sum();
            raw.iter().map(|&r| ratio(r, total)).collect()
        };
        let w = Weights::new(block(m), block(n)).unwrap();
        let sa: BigRational = w.alpha.iter().sum();
        let sb: BigRational = w.beta.iter().sum();
        prop_assert_eq!(sa, sb);
        let (e, c) = FlowSpec::G(w).scales(t, m, n).unwrap();
        let log_det: f64 = e.iter().chain(&c).map(|v| v.ln()).sum();
        prop_assert!(log_det.abs() <= 1e-12 * t.ln().max(1.0));
    }

    #[test]
    fn witness_is_a_nonzero_lattice_vector(theta in theta_strategy(4, 1 << 20), t in 1.0f64..1e3) {
        let (m, n) = (theta.m(), theta.n());
        let flow = FlowSpec::G(Weights::equal(m, n));
        let norm = AmbientNorm::sup_product(m, n);
        let (v, w) = first_minimum_flowed(&theta, &flow, t, &norm).unwrap();
        prop_assert!(w.q.iter().chain(&w.p).any(|&c| c != 0));
        let u = flowed_vector(&theta, &flow, t, &w.q, &w.p).unwrap();
        prop_assert!((norm.eval(&u).unwrap() - v).abs() <= 1e-10 * v.max(1.0));
    }

    #[test]
    fn enumeration_matches_brute_force(theta in theta_strategy(4, 1 << 20), t in 1.0f64..20.0) {
        // With entries in [0, 1) and t ≤ 20, any vector of sup norm ≤ 1 has |q|, |p| ≤ 21.
        let (m, n) = (theta.m(), theta.n());
        let flow = FlowSpec::G(Weights::equal(m, n));
        let norm = AmbientNorm::sup_product(m, n);
        let fast = first_minimum_flowed(&theta, &flow, t, &norm).unwrap().0;
        let naive = first_minimum_flowed_naive(&theta, &flow, t, &norm, 22).unwrap();
        prop_assert!((fast - naive).abs() <= 1e-9, "fast {} naive {}", fast, naive);
    }

    #[test]
    fn sup_norm_minima_respect_the_dirichlet_bound(d in 2usize..=4, seed in any::<u64>()) {
        let basis = random_unimodular(d, &mut sample_rng(seed, 1));
        let (v, _, _) = first_minimum(&basis, &AmbientNorm::Full(NormSpec::sup(d))).unwrap();
        prop_assert!(v <= 1.0 + 1e-9, "{}", v);
    }

    #[test]
    fn lambda_psi_is_the_flowed_first_minimum(theta in theta_strategy(4, 1 << 30), t in 1.0f64..1e4) {
        let (m, n) = (theta.m(), theta.n());
        let lam = lambda_psi(&theta, t, &PsiSpec::inverse_t(), &ProductNormSpec::sup(m, n)).unwrap();
        let fm = first_minimum_flowed(&theta, &FlowSpec::G(Weights::equal(m, n)), t, &AmbientNorm::sup_product(m, n)).unwrap().0;
        prop_assert!((lam - fm).abs() <= 1e-9 * fm.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn realizing_sequence_structure(theta in theta_strategy(3, 1 << 30)) {
        let (m, n) = (theta.m(), theta.n());
        let psi = PsiSpec::inverse_t();
        let norms = ProductNormSpec::sup(m, n);
        let seq = realizing_sequence(&theta, &psi, &norms, 1e4).unwrap();
        for w in seq.records.windows(2) {
            prop_assert!(w[1].qnorm > w[0].qnorm && w[1].err < w[0].err);
        }
        let end = seq.valid_until.min(1e4);
        for k in 0..seq.records.len() {
            let a = seq.t_times[k];
            let b = seq.t_times.get(k + 1).copied().unwrap_or(end).min(end);
            if b <= a {
                continue;
            }
            let r = &seq.records[k];
            let z = seq.z_times[k];
            for j in 1..=10 {
                let t = a * (b / a).powf(j as f64 / 11.0);
                let formula = if t <= z { seq.contract(t) * r.qnorm } else { seq.expand(t) * r.err };
                let direct = lambda_psi(&theta, t, &psi, &norms).unwrap();
                prop_assert!((formula - direct).abs() <= 1e-9 * direct.max(1.0), "k {} t {} {} vs {}", k, t, formula, direct);
                if t > a && t < z {
                    prop_assert!(seq.lambda_at(a) > seq.lambda_at(t));
                }
            }
            if k + 1 < seq.t_times.len() && seq.t_times[k + 1] <= end {
                prop_assert!(seq.lambda_at(z) < seq.lambda_at(seq.t_times[k + 1]));
            }
        }
    }

    #[test]
    fn chi_peaks_respect_the_dirichlet_bound(theta in theta_strategy(3, 1 << 40)) {
        let (m, n) = (theta.m(), theta.n());
        prop_assume!(m == 1 || n == 1);
        let qmax = if n == 1 { 1e4 } else { 1e3 };
        let front = pareto_front(&theta, &ProductNormSpec::sup(m, n), qmax).unwrap();
        for v in chi_peaks(&front, n as f64 / m as f64) {
            prop_assert!(v <= 1.0 + 1e-9, "{}", v);
        }
    }

    #[test]
    fn dir_agrees_with_the_limsup_peaks(theta in theta_strategy(3, 1 << 40)) {
        let (m, n) = (theta.m(), theta.n());
        let window = (10.0, 1e5);
        let Ok(d) = dir_estimate(&theta, &Weights::equal(m, n), &ExhaustionSpec::sup_product(m, n), window) else {
            return Ok(());
        };
        let est = limsup_estimate(&theta, &PsiSpec::inverse_t(), &ProductNormSpec::sup(m, n), Some(0), window.1).unwrap();
        let from_limsup = est.tail_peaks.iter().filter(|(t, _)| *t >= window.0 && *t <= window.1).map(|p| p.1).fold(0.0, f64::max);
        if !d.peak_times.is_empty() {
            prop_assert!((d.peak_values.iter().cloned().fold(0.0, f64::max) - from_limsup).abs() <= 1e-9);
        }
        for (&t, &v) in d.peak_times.iter().zip(&d.peak_values) {
            let direct = height(&theta, &FlowSpec::G(Weights::equal(m, n)), t, &ExhaustionSpec::sup_product(m, n)).unwrap();
            prop_assert!((direct - v).abs() <= 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn height_is_log_lipschitz(theta in theta_strategy(4, 1 << 30), t in 1.0f64..1e3, ratio_ in 1.0f64..3.0) {
        // Each coordinate scales by at most t^{max |e_i|}, so log λ₁ does too.
        let (m, n) = (theta.m(), theta.n());
        let w = Weights::equal(m, n);
        let flow = LatticeFlow::of_theta(&theta, &w);
        let bound = flow.exponents.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
        let l = height_log_lipschitz(&flow, &AmbientNorm::sup_product(m, n), &[t, t * ratio_]).unwrap();
        prop_assert!(l <= bound + 1e-9, "{} > {}", l, bound);
    }

    #[test]
    fn exhaustion_is_nested(h in 0.0f64..2.0, e1 in 0.0f64..2.0, e2 in 0.0f64..2.0) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        if ExhaustionSpec::contains(h, hi) {
            prop_assert!(ExhaustionSpec::contains(h, lo));
        }
    }

    #[test]
    fn family_witnesses_stay_below_the_level(
        dir in prop::collection::vec(-3i64..=3, 2),
        base in prop::collection::vec(0i64..7, 2),
        y in 0i64..1000,
        c in 0.2f64..0.9,
        stretch in 1.0f64..100.0,
    ) {
        prop_assume!(dir.iter().any(|&v| v != 0));
        let member = FamilyMember::line(dir, base.iter().map(|&b| ratio(b, 7)).collect()).unwrap();
        let x = member.point(&ratio(y, 997)).unwrap();
        let w = Weights::equal(2, 1);
        let flow = FlowSpec::G(w);
        let norm = AmbientNorm::sup_product(2, 1);
        let u = uniformity_time(&member, c, &flow, &norm).unwrap();
        let t = u.t0 * stretch;
        let wit = witness_vector(&member, &x, &flow, t).unwrap();
        prop_assert!(wit.value < c, "{} at t {}", wit.value, t);
        prop_assert!(wit.value <= family_envelope(&member, &flow, t).unwrap() * (1.0 + 1e-12));
        // Lattice membership: the stored value is the flowed (Θq − p, q) for integers q, p.
        let v = flowed_vector(&x, &flow, t, &wit.q, &wit.p).unwrap();
        prop_assert!((sup(&v) - wit.value).abs() <= 1e-12);
    }

    #[test]
    fn plane_witnesses_stay_below_the_level(
        i in prop::collection::vec(-4i64..=4, 2),
        free in prop::collection::vec(0i64..50, 1),
        c in 0.2f64..0.9,
        stretch in 1.0f64..100.0,
    ) {
        // Points of {Θ : Θi = z} in M_{1,2}: fix one entry freely, solve for the other.
        prop_assume!(i[1] != 0);
        let z = ratio(3, 5);
        let a = ratio(free[0], 50);
        let b = (&z - &a * from_i64(i[0])) / from_i64(i[1]);
        let x = MatrixPoint::new(1, 2, vec![a, b]).unwrap();
        let member = FamilyMember::plane(i.iter().map(|&v| from_i64(v)).collect(), vec![z]).unwrap();
        prop_assert!(member.contains(&x));
        let flow = FlowSpec::G(Weights::equal(1, 2));
        let u = uniformity_time(&member, c, &flow, &AmbientNorm::sup_product(1, 2)).unwrap();
        let t = u.t0 * stretch;
        let wit = witness_vector(&member, &x, &flow, t).unwrap();
        prop_assert!(wit.value < c);
        let q: Vec<BigRational> = wit.q.iter().map(|&v| from_i64(v)).collect();
        prop_assert_eq!(x.mul_vec(&q), wit.p.iter().map(|&v| from_i64(v)).collect::<Vec<_>>());
    }

    #[test]
    fn modes_evaluate_the_same_function(theta in theta_strategy(3, 1 << 30), t in 1.0f64..1e4) {
        let (m, n) = (theta.m(), theta.n());
        let ex = Objective::new(&ConstructMode::Exhaustion { weights: Weights::equal(m, n), ex: ExhaustionSpec::sup_product(m, n) }).unwrap();
        let ps = Objective::new(&ConstructMode::PsiDirichlet { psi: PsiSpec::inverse_t(), norms: ProductNormSpec::sup(m, n) }).unwrap();
        let (a, b) = (ex.eval(&theta, t).unwrap(), ps.eval(&theta, t).unwrap());
        let h = height(&theta, &FlowSpec::G(Weights::equal(m, n)), t, &ExhaustionSpec::sup_product(m, n)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 && (a - h).abs() <= 1e-9 * h.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn constructed_boxes_nest_and_replay(seed in 0u64..1000, c_idx in 0usize..2) {
        let c = [0.4, 0.6][c_idx];
        let mode = ConstructMode::Exhaustion { weights: Weights::equal(2, 1), ex: ExhaustionSpec::sup_product(2, 1) };
        let domain = BoxRegion::new(2, 1, vec![ratio(1, 2), ratio(1, 2)], ratio(1, 4)).unwrap();
        let params = ConstructParams { rounds: 2, seed, ..ConstructParams::default() };
        let out = construct_theta(&mode, c, &domain, &params).unwrap();
        let cert = &out.certificate;
        prop_assert!(cert.complete, "{:?}", cert.failure);
        let mut outer = &cert.start;
        for r in &cert.rounds {
            prop_assert!(outer.contains_closure_of(&r.region));
            outer = &r.region;
        }
        prop_assert!(outer.contains(out.theta.entries()));
        let rep = replay(cert).unwrap();
        prop_assert!(rep.passed, "{:?}", rep.details);
    }
}

#[test]
fn limsup_collapses_off_the_critical_exponent() {
    let theta = MatrixPoint::scalar(preset("golden", 40).unwrap());
    let front = pareto_front(&theta, &ProductNormSpec::sup(1, 1), 1e9).unwrap();
    let tail = |g: f64| {
        let p = chi_peaks(&front, g);
        let k = p.len() / 2;
        (p[k..].iter().cloned().fold(0.0, f64::max), p[p.len() - 1], p[k])
    };
    let (below, below_last, below_mid) = tail(0.9);
    let (at, _, _) = tail(1.0);
    let (_, above_last, above_mid) = tail(1.1);
    assert!(at > 0.5 && at < 1.0);
    // Below the critical exponent the tail shrinks toward zero; above it the tail grows.
    assert!(below < at && below_last < below_mid && below_last < 0.2);
    assert!(above_last > above_mid && above_last > 2.0);
}
