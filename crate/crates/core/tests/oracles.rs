//! Reference values, each recomputed here by an independent brute-force or closed-form
//! oracle and checked against the frozen number.

use dirichlet_core::approx::*;
use dirichlet_core::exhaustion::*;
use dirichlet_core::lattice_flow::*;
use dirichlet_core::norms::*;
use dirichlet_core::rational::{ratio, to_f64};

const GOLDEN: f64 = 1.618_033_988_749_895;
const SQRT2: f64 = std::f64::consts::SQRT_2;

fn golden() -> MatrixPoint {
    MatrixPoint::scalar(preset("golden", 40).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// `min_{1 ≤ q ≤ qmax, p} max(k·|qθ − p|, q/k)` for one number, in plain floats.
fn brute_lambda(theta: f64, t: f64, qmax: i64) -> (f64, i64) {
    (1..=qmax)
        .map(|q| {
            let e = (q as f64 * theta - (q as f64 * theta).round()).abs();
            ((t * e).max(q as f64 / t), q)
        })
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

/// Records of `|qθ − p|` by scanning every `q`.
fn brute_front(theta: f64, qmax: i64) -> Vec<(i64, f64)> {
    let mut out: Vec<(i64, f64)> = Vec::new();
    for q in 1..=qmax {
        let e = (q as f64 * theta - (q as f64 * theta).round()).abs();
        if out.last().is_none_or(|r| e < r.1) {
            out.push((q, e));
        }
    }
    out
}

#[test]
fn golden_flowed_vector() {
    let frozen = -0.557_280_900_008_412_1;
    let v = flowed_vector(&golden(), &FlowSpec::G(Weights::equal(1, 1)), 10.0, &[8], &[13]).unwrap();
    assert!(close(10.0 * (8.0 * GOLDEN - 13.0), frozen, 1e-12));
    assert!(close(v[0], frozen, 1e-12) && close(v[1], 0.8, 1e-15));
}

#[test]
fn golden_first_minimum_at_ten() {
    let (brute, q) = brute_lambda(GOLDEN, 10.0, 50);
    assert_eq!(q, 8);
    assert!(close(brute, 0.8, 1e-12));
    let (v, w) = first_minimum_flowed(&golden(), &FlowSpec::G(Weights::equal(1, 1)), 10.0, &AmbientNorm::sup_product(1, 1)).unwrap();
    assert!(close(v, 0.8, 1e-12));
    assert_eq!((w.q, w.p), (vec![8], vec![13]));
    let lam = lambda_psi(&golden(), 10.0, &PsiSpec::inverse_t(), &ProductNormSpec::sup(1, 1)).unwrap();
    assert!(close(lam, 0.8, 1e-12));
    let h = height(&golden(), &FlowSpec::G(Weights::equal(1, 1)), 10.0, &ExhaustionSpec::sup_product(1, 1)).unwrap();
    assert!(close(h, 0.8, 1e-12));
}

#[test]
fn hexagonal_minimum() {
    let frozen = 1.074_569_931_823_542;
    let b = hexagonal_basis();
    let mut brute = f64::INFINITY;
    for a in -3_i32..=3 {
        for c in -3_i32..=3 {
            if (a, c) == (0, 0) {
                continue;
            }
            let x = a as f64 * b.columns[0][0] + c as f64 * b.columns[1][0];
            let y = a as f64 * b.columns[0][1] + c as f64 * b.columns[1][1];
            brute = brute.min(x.hypot(y));
        }
    }
    assert!(close(brute, frozen, 1e-12));
    let (v, _, _) = first_minimum(&b, &AmbientNorm::Full(NormSpec::euclidean(2))).unwrap();
    assert!(close(v, frozen, 1e-9));
    assert!(close(b.det(), 1.0, 1e-12));
}

#[test]
fn golden_chi_at_five() {
    let frozen = 0.450_849_718_747_371_2;
    let brute = (1..=5)
        .map(|q| (q as f64 * GOLDEN - (q as f64 * GOLDEN).round()).abs())
        .fold(f64::INFINITY, f64::min)
        * 5.0;
    assert!(close(brute, frozen, 1e-12));
    let v = chi_gamma(&golden(), 5.0, 1.0, &ProductNormSpec::sup(1, 1)).unwrap();
    assert!(close(v, frozen, 1e-12));
}

#[test]
fn rational_chi_vanishes() {
    let v = chi_gamma(&MatrixPoint::scalar(ratio(1, 2)), 2.0, 1.0, &ProductNormSpec::sup(1, 1)).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn golden_chi_limsup() {
    let frozen = 0.723_606_797_749_979;
    assert!(close(GOLDEN / 5f64.sqrt(), frozen, 1e-15));
    // Fibonacci oracle: the peak ending the segment of q = b is c·|bθ − c| with c = a + b, and
    // Cassini's identity gives |bθ − c| = 1/(c + b/θ) without cancellation.
    let (mut a, mut b) = (1_f64, 2_f64);
    let mut last = 0.0;
    while b < 1e6 {
        let c = a + b;
        last = c / (c + b / GOLDEN);
        (a, b) = (b, c);
    }
    assert!(close(last, frozen, 1e-6));
    let front = pareto_front(&golden(), &ProductNormSpec::sup(1, 1), 1e6).unwrap();
    let peaks = chi_peaks(&front, 1.0);
    let tail = peaks[peaks.len() / 2..].iter().cloned().fold(0.0, f64::max);
    assert!(close(tail, frozen, 5e-3));
}

#[test]
fn fronts_of_quadratic_irrationals() {
    let sqrt2 = MatrixPoint::scalar(preset("sqrt2", 40).unwrap());
    let q = |f: Vec<ApproxRecord>| f.iter().map(|r| r.q[0]).collect::<Vec<_>>();
    let brute: Vec<i64> = brute_front(SQRT2, 30).iter().map(|r| r.0).collect();
    assert_eq!(brute, vec![1, 2, 5, 12, 29]);
    assert_eq!(q(pareto_front(&sqrt2, &ProductNormSpec::sup(1, 1), 30.0).unwrap()), brute);
    let brute: Vec<i64> = brute_front(GOLDEN, 10).iter().map(|r| r.0).collect();
    assert_eq!(brute, vec![1, 2, 3, 5, 8]);
    assert_eq!(q(pareto_front(&golden(), &ProductNormSpec::sup(1, 1), 10.0).unwrap()), brute);
    let half = pareto_front(&MatrixPoint::scalar(ratio(1, 2)), &ProductNormSpec::sup(1, 1), 3.0).unwrap();
    let last = half.last().unwrap();
    assert_eq!((last.q[0], last.err), (2, 0.0));
}

#[test]
fn golden_switch_times() {
    let (t_frozen, z_frozen, low_frozen) = (9.419_201_640_797_154, 7.446_532_731_328_546, 0.671_453_437_512_513_7);
    let err5 = (5.0 * GOLDEN - 8.0).abs();
    assert!(close((8.0 / err5).sqrt(), t_frozen, 1e-12));
    assert!(close((5.0 / err5).sqrt(), z_frozen, 1e-12));
    assert!(close(5.0 / z_frozen, low_frozen, 1e-12));
    let seq = realizing_sequence(&golden(), &PsiSpec::inverse_t(), &ProductNormSpec::sup(1, 1), 100.0).unwrap();
    let k8 = seq.records.iter().position(|r| r.q[0] == 8).unwrap();
    let k5 = seq.records.iter().position(|r| r.q[0] == 5).unwrap();
    assert!(close(seq.t_times[k8], t_frozen, 1e-12));
    assert!(close(seq.z_times[k5], z_frozen, 1e-12));
    assert!(close(seq.lambda_at(z_frozen), low_frozen, 1e-12));
    // The direct minimum agrees at the switch and at the dip.
    assert!(close(brute_lambda(GOLDEN, z_frozen, 200).0, low_frozen, 1e-9));
}

#[test]
fn golden_lambda_limsup() {
    let frozen = 0.850_650_808_352_039_9;
    let est = limsup_estimate(&golden(), &PsiSpec::inverse_t(), &ProductNormSpec::sup(1, 1), None, 1e6).unwrap();
    assert_eq!(est.divergence, Divergence::Finite);
    assert!(close(est.value, frozen, 5e-3));
    let d = dir_estimate(&golden(), &Weights::equal(1, 1), &ExhaustionSpec::sup_product(1, 1), default_window(1e6)).unwrap();
    assert!(close(d.value, frozen, 5e-3));
}

#[test]
fn limsup_of_rational_and_fast_psi() {
    let r = limsup_estimate(&MatrixPoint::scalar(ratio(3, 7)), &PsiSpec::inverse_t(), &ProductNormSpec::sup(1, 1), None, 1e4).unwrap();
    assert_eq!((r.divergence, r.value), (Divergence::TerminatedRational, 0.0));
    let fast = PsiSpec::power(ratio(3, 2));
    let g = limsup_estimate(&golden(), &fast, &ProductNormSpec::sup(1, 1), None, 1e12).unwrap();
    assert_eq!(g.divergence, Divergence::GrowingUnbounded);
}

#[test]
fn golden_bridge() {
    let b = bridge_check(&golden(), &ratio(1, 1), &ProductNormSpec::sup(1, 1), 1e6).unwrap();
    assert!(close(b.lhs, 0.723_606_797_749_979, 5e-3) && close(b.rhs, 0.723_606_797_749_979, 5e-3));
    assert!(b.rel_gap < 0.01);
    let r = bridge_check(&MatrixPoint::scalar(ratio(2, 5)), &ratio(1, 1), &ProductNormSpec::sup(1, 1), 1e5).unwrap();
    assert_eq!((r.lhs, r.rhs, r.rel_gap), (0.0, 0.0, 0.0));
}

#[test]
fn uniform_exponents() {
    // -log|F_k θ − F_{k+1}| / log F_{k+2} tends to one from above, slowly.
    let w = uniform_exponent_estimate(&golden(), &ProductNormSpec::sup(1, 1), 1e6).unwrap();
    assert!(w > 1.0 && w < 1.03, "{w}");
    let r = uniform_exponent_estimate(&MatrixPoint::scalar(ratio(5, 8)), &ProductNormSpec::sup(1, 1), 1e3).unwrap();
    assert!(r.is_infinite());
    let mut rng = sample_rng(11, 0);
    let x = MatrixPoint::random(2, 1, 1 << 40, &mut rng);
    let w = uniform_exponent_estimate(&x, &ProductNormSpec::sup(2, 1), 1e5).unwrap();
    assert!((w - 0.5).abs() < 0.1, "{w}");
}

#[test]
fn r_lower_bounds() {
    let sup = r_estimate(&AmbientNorm::Full(NormSpec::sup(3)), 3, 200, 1).unwrap();
    assert!(close(sup.value, 1.0, 1e-12));
    let e2 = r_estimate(&AmbientNorm::Full(NormSpec::euclidean(2)), 2, 200, 1).unwrap();
    assert!(close(e2.value, 1.074_569_931_823_542, 1e-9));
    let prod = AmbientNorm::Product(ProductNormSpec::new(NormSpec::euclidean(2), NormSpec::sup(1)));
    let r = r_estimate(&prod, 3, 2000, 1).unwrap();
    let target = 1.049_115_063_421_648_2;
    assert!(r.value >= 0.98 * target && r.value <= target + 1e-9, "{}", r.value);
}

#[test]
fn rational_dir_vanishes() {
    let theta = MatrixPoint::new(2, 1, vec![ratio(2, 7), ratio(5, 9)]).unwrap();
    let d = dir_estimate(&theta, &Weights::equal(2, 1), &ExhaustionSpec::sup_product(2, 1), default_window(1e4)).unwrap();
    assert!(d.value < 0.01);
}

#[test]
fn random_dir_is_near_one() {
    // Records of a plane point are sparse: (1e3, 1e6) can hold only two peaks.
    let mut rng = sample_rng(5, 0);
    let vals: Vec<f64> = (0..5)
        .map(|_| {
            let x = MatrixPoint::random(2, 1, 1 << 50, &mut rng);
            dir_estimate(&x, &Weights::equal(2, 1), &ExhaustionSpec::sup_product(2, 1), default_window(1e10)).unwrap().value
        })
        .collect();
    assert!(vals.iter().all(|&v| v > 0.7 && v <= 1.0 + 1e-9), "{vals:?}");
}

#[test]
fn gap_scan_leaves_the_low_band_empty() {
    let scan = gap_scan_d2(200, &ExhaustionSpec::sup_product(1, 1), (10.0, 1e4), 2024).unwrap();
    assert_eq!(scan.count_in(0.05, 0.4), 0);
    assert_eq!(scan.counts.iter().sum::<usize>() + scan.skipped, 200);
    let flow = LatticeFlow { basis: lattice_of(&golden()).to_real(), exponents: vec![0.5, -0.5] };
    let d = dir_estimate_envelope(&flow, &AmbientNorm::sup_product(1, 1), (10.0, 1e4)).unwrap();
    assert!(close(d.value, 0.850_650_808_352_039_9, 1e-2) && d.value > 0.4);
}

#[test]
fn excursions_are_found_quickly() {
    use dirichlet_core::constructor::*;
    let mode = ConstructMode::Exhaustion { weights: Weights::equal(2, 1), ex: ExhaustionSpec::sup_product(2, 1) };
    let obj = Objective::new(&mode).unwrap();
    let dom = BoxRegion::new(2, 1, vec![ratio(1, 2), ratio(1, 2)], ratio(1, 2)).unwrap();
    for seed in 0..5 {
        let mut rng = sample_rng(seed, 0);
        let exc = find_excursion(&obj, &dom, 10.0, 0.5, 50, &mut rng).unwrap();
        assert!(exc.value > 0.5 && exc.s >= 10.0);
        let y = MatrixPoint::new(2, 1, exc.y.clone()).unwrap();
        assert!(close(obj.eval(&y, exc.s).unwrap(), exc.value, 1e-9));
    }
    let mut rng = sample_rng(0, 0);
    assert!(find_excursion(&obj, &dom, 10.0, 1.0, 50, &mut rng).is_err());
    let _ = to_f64(&ratio(1, 2));
}
