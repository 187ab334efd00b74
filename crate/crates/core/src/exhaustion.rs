//! Exhaustions by first-minimum level sets, finite-horizon escape thresholds along flows,
//! and sampling experiments on random lattices.

use crate::approx::{realizing_sequence, PsiSpec};
use crate::error::{Error, Result};
use crate::lattice_flow::{
    first_minimum, first_minimum_flowed, lattice_of, FlowSpec, MatrixPoint, RealBasis,
    Weights,
};
use crate::norms::AmbientNorm;
use crate::rational::to_f64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The exhaustion `K_ε = {Λ : ε ≤ λ₁(Λ)}` for a norm, with upper end `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustionSpec {
    pub norm: AmbientNorm,
    /// Upper end of the exhaustion range: the exact constant when known, else a sampled lower bound.
    pub b: f64,
}

impl ExhaustionSpec {
    /// Sup norm on `R^d`, whose constant is exactly one.
    pub fn sup_product(m: usize, n: usize) -> Self {
        ExhaustionSpec { norm: AmbientNorm::sup_product(m, n), b: 1.0 }
    }

    /// Membership `Λ ∈ K_ε` given the lattice's height.
    pub fn contains(height: f64, eps: f64) -> bool {
        eps <= height
    }
}

/// `inf{ε : Λ ∉ K_ε}` for `Λ = flow(t)·Λ_Θ`, which is its first minimum.
pub fn height(theta: &MatrixPoint, flow: &FlowSpec, t: f64, ex: &ExhaustionSpec) -> Result<f64> {
    Ok(first_minimum_flowed(theta, flow, t, &ex.norm)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirEstimate {
    pub value: f64,
    pub window: (f64, f64),
    pub peak_times: Vec<f64>,
    pub peak_values: Vec<f64>,
    pub method: String,
}

/// Grid points per doubling of `t` in the envelope method.
const GRID_PER_OCTAVE: usize = 64;

/// Finite-horizon escape threshold of `Λ_Θ` along `g_t`: the largest height peak in the
/// window. Equal weights with a product norm use the exact switch times; anything else
/// goes through the certified lower-envelope method.
pub fn dir_estimate(theta: &MatrixPoint, weights: &Weights, ex: &ExhaustionSpec, window: (f64, f64)) -> Result<DirEstimate> {
    check_window(window)?;
    match (&ex.norm, weights.is_equal()) {
        (AmbientNorm::Product(p), true) => {
            let seq = realizing_sequence(theta, &PsiSpec::inverse_t(), p, window.1)?;
            let (times, values): (Vec<f64>, Vec<f64>) =
                seq.peaks().into_iter().filter(|(t, _)| *t >= window.0 && *t <= window.1).unzip();
            let mut value = values.iter().cloned().fold(0.0, f64::max);
            if seq.terminated {
                value = value.max(seq.lambda_at(window.1));
            } else if times.len() < 3 {
                return Err(Error::WindowTooSmall { peaks: times.len() });
            }
            Ok(DirEstimate { value, window, peak_times: times, peak_values: values, method: "exact-switch-times".into() })
        }
        _ => {
            let flow = LatticeFlow::of_theta(theta, weights);
            dir_estimate_envelope(&flow, &ex.norm, window)
        }
    }
}

/// Tail window `(√Tmax, Tmax)`, discarding the transient first half on a log scale.
pub fn default_window(tmax: f64) -> (f64, f64) {
    (tmax.sqrt().max(1.0), tmax)
}

fn check_window(window: (f64, f64)) -> Result<()> {
    if !(window.0 >= 1.0 && window.1 > window.0) {
        return Err(Error::InvalidArgument(format!("window must satisfy 1 <= Tmin < Tmax, got {window:?}")));
    }
    Ok(())
}

/// A lattice `M·Z^d` under the diagonal flow `diag(t^{e_1}, …, t^{e_d})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFlow {
    pub basis: RealBasis,
    pub exponents: Vec<f64>,
}

impl LatticeFlow {
    pub fn of_theta(theta: &MatrixPoint, w: &Weights) -> Self {
        let exponents = w.alpha.iter().map(to_f64).chain(w.beta.iter().map(|b| -to_f64(b))).collect();
        LatticeFlow { basis: lattice_of(theta).to_real(), exponents }
    }

    pub fn flowed_basis(&self, t: f64) -> RealBasis {
        RealBasis {
            columns: self
                .basis
                .columns
                .iter()
                .map(|c| c.iter().zip(&self.exponents).map(|(x, e)| x * t.powf(*e)).collect())
                .collect(),
        }
    }

    fn flow_vec(&self, u: &[f64], t: f64) -> Vec<f64> {
        u.iter().zip(&self.exponents).map(|(x, e)| x * t.powf(*e)).collect()
    }

    pub fn height(&self, t: f64, norm: &AmbientNorm) -> Result<f64> {
        Ok(first_minimum(&self.flowed_basis(t), norm)?.0)
    }
}

fn log_grid(a: f64, b: f64, per_octave: usize) -> Vec<f64> {
    let steps = (((b / a).log2() * per_octave as f64).ceil() as usize).max(1);
    (0..=steps).map(|i| a * (b / a).powf(i as f64 / steps as f64)).collect()
}

/// Every lattice vector that can be a shortest vector somewhere in `[a, b]`.
fn block_candidates(flow: &LatticeFlow, norm: &AmbientNorm, a: f64, b: f64) -> Result<Vec<Vec<f64>>> {
    let grid = log_grid(a, b, 8);
    let mut witnesses: Vec<Vec<f64>> = Vec::new();
    for &t in &grid {
        let (_, c, _) = first_minimum(&flow.flowed_basis(t), norm)?;
        let u = flow.basis.apply(&c);
        if !witnesses.contains(&u) {
            witnesses.push(u);
        }
    }
    // Upper bound for λ₁ over the whole block: on each grid cell every coordinate of a
    // flowed vector is monotone, so the cell maximum is bounded by the endpoint maxima.
    let mut bound = 0.0_f64;
    for w in grid.windows(2) {
        let cell = witnesses
            .iter()
            .map(|u| {
                let v: Vec<f64> = u
                    .iter()
                    .zip(&flow.exponents)
                    .map(|(x, e)| x.abs() * w[0].powf(*e).max(w[1].powf(*e)))
                    .collect();
                norm.eval(&v).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        bound = bound.max(cell);
    }
    let (c_low, _) = norm.equivalence_constants();
    let reach = bound / c_low * (1.0 + 1e-9);
    let half: Vec<f64> = flow.exponents.iter().map(|e| reach * a.powf(-e).max(b.powf(-e))).collect();
    // Enumerate lattice points in the box through a reduced basis at the middle time.
    let tm = (a * b).sqrt();
    let mid = flow.flowed_basis(tm);
    let scaled_half: Vec<f64> = half.iter().zip(&flow.exponents).map(|(h, e)| h * tm.powf(*e)).collect();
    let pts = lattice_points_in_box(&mid, &scaled_half)?;
    Ok(pts
        .into_iter()
        .map(|v| v.iter().zip(&flow.exponents).map(|(x, e)| x * tm.powf(-e)).collect())
        .collect())
}

/// Nonzero lattice points (one per ± pair) with `|v_i| ≤ half[i]`.
fn lattice_points_in_box(basis: &RealBasis, half: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = basis.d();
    let scaled = RealBasis {
        columns: basis.columns.iter().map(|c| c.iter().zip(half).map(|(x, h)| x / h).collect()).collect(),
    };
    // In scaled coordinates the box is the unit cube; collect all points of sup norm ≤ 1.
    let sup = AmbientNorm::Full(crate::norms::NormSpec::sup(d));
    let mut out = Vec::new();
    crate::lattice_flow::enumerate_ball(&scaled, &sup, 1.0 + 1e-9, 10_000_000, |c, _| out.push(basis.apply(c)))?;
    Ok(out)
}

fn envelope(cands: &[Vec<f64>], flow: &LatticeFlow, norm: &AmbientNorm, t: f64) -> f64 {
    cands
        .iter()
        .map(|u| norm.eval(&flow.flow_vec(u, t)).unwrap())
        .fold(f64::INFINITY, f64::min)
}

/// Envelope-based estimate for an arbitrary lattice flow.
pub fn dir_estimate_envelope(flow: &LatticeFlow, norm: &AmbientNorm, window: (f64, f64)) -> Result<DirEstimate> {
    check_window(window)?;
    let mut blocks = Vec::new();
    let mut a = window.0;
    while a < window.1 {
        let b = (2.0 * a).min(window.1);
        blocks.push((a, b, block_candidates(flow, norm, a, b)?));
        a = b;
    }
    // Global grid of (t, envelope, block index).
    let mut pts: Vec<(f64, f64, usize)> = Vec::new();
    for (bi, (a, b, cands)) in blocks.iter().enumerate() {
        let g = log_grid(*a, *b, GRID_PER_OCTAVE);
        let skip = if bi == 0 { 0 } else { 1 };
        for &t in &g[skip..] {
            pts.push((t, envelope(cands, flow, norm, t), bi));
        }
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for i in 1..pts.len().saturating_sub(1) {
        if pts[i].1 > pts[i - 1].1 && pts[i].1 >= pts[i + 1].1 {
            let mut cands = blocks[pts[i - 1].2].2.clone();
            if pts[i + 1].2 != pts[i - 1].2 {
                cands.extend(blocks[pts[i + 1].2].2.iter().cloned());
            }
            let (t, v) = golden_max(|t| envelope(&cands, flow, norm, t), pts[i - 1].0, pts[i + 1].0);
            times.push(t);
            values.push(v);
        }
    }
    if times.len() < 3 {
        return Err(Error::WindowTooSmall { peaks: times.len() });
    }
    let value = values.iter().cloned().fold(0.0, f64::max);
    Ok(DirEstimate { value, window, peak_times: times, peak_values: values, method: "certified-envelope".into() })
}

/// Golden-section search for the maximum on `[a, b]` in `log t`.
fn golden_max(f: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a.ln(), b.ln());
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1.exp()), f(x2.exp()));
    for _ in 0..120 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2.exp());
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1.exp());
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let t = (0.5 * (lo + hi)).exp();
    
    [(t, f(t)), (x1.exp(), f1), (x2.exp(), f2)]
        .into_iter()
        .fold((t, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc })
}

/// Random unimodular 2-lattice `R(φ)·[[a, b], [0, 1/a]]`.
pub fn random_lattice_d2<R: Rng>(rng: &mut R) -> RealBasis {
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let a: f64 = rng.gen_range(-1.0_f64..1.0).exp();
    let b: f64 = rng.gen_range(-0.5..0.5);
    let (s, c) = phi.sin_cos();
    let col0 = [a, 0.0];
    let col1 = [b, 1.0 / a];
    let rot = |v: [f64; 2]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
    RealBasis { columns: vec![rot(col0), rot(col1)] }
}

/// Per-sample generator: one stream of the seeded generator per sample index.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    /// Bin edges, `counts.len() + 1` of them.
    pub bins: Vec<f64>,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub window: (f64, f64),
    pub values: Vec<f64>,
    /// Samples whose window held too few peaks.
    pub skipped: usize,
}

impl GapScan {
    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        self.values.iter().filter(|&&v| v > lo && v < hi).count()
    }
}

pub fn histogram(values: &[f64], top: f64, nbins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins: Vec<f64> = (0..=nbins).map(|i| top * i as f64 / nbins as f64).collect();
    let mut counts = vec![0; nbins];
    for &v in values {
        let k = ((v / top) * nbins as f64).floor().max(0.0) as usize;
        counts[k.min(nbins - 1)] += 1;
    }
    (bins, counts)
}

/// Escape-threshold estimates over seeded random unimodular 2-lattices under the flow
/// `diag(t^{1/2}, t^{−1/2})`.
pub fn gap_scan_d2(sample_count: usize, ex: &ExhaustionSpec, window: (f64, f64), seed: u64) -> Result<GapScan> {
    if ex.norm.dim() != 2 {
        return Err(Error::InvalidArgument("the gap scan works in dimension 2".into()));
    }
    let mut values = Vec::new();
    let mut skipped = 0;
    for k in 0..sample_count {
        let mut rng = sample_rng(seed, k as u64);
        let flow = LatticeFlow { basis: random_lattice_d2(&mut rng), exponents: vec![0.5, -0.5] };
        match dir_estimate_envelope(&flow, &ex.norm, window) {
            Ok(d) => values.push(d.value),
            Err(Error::WindowTooSmall { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let (bins, counts) = histogram(&values, ex.b, 20);
    Ok(GapScan { bins, counts, seed, window, values, skipped })
}

/// Sampled empirical Lipschitz constant of `log height` against `log t`.
pub fn height_log_lipschitz(flow: &LatticeFlow, norm: &AmbientNorm, times: &[f64]) -> Result<f64> {
    let hs: Vec<f64> = times.iter().map(|&t| flow.height(t, norm)).collect::<Result<_>>()?;
    let mut l = 0.0_f64;
    for i in 1..times.len() {
        let dl = (times[i].ln() - times[i - 1].ln()).abs();
        if dl > 0.0 {
            l = l.max((hs[i].ln() - hs[i - 1].ln()).abs() / dl);
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    #[test]
    fn zero_theta_height_is_one() {
        let h = height(&MatrixPoint::zero(1, 1), &FlowSpec::G(Weights::equal(1, 1)), 1.0, &ExhaustionSpec::sup_product(1, 1)).unwrap();
        assert_eq!(h, 1.0);
    }

    #[test]
    fn histogram_bins() {
        let (b, c) = histogram(&[0.0, 0.5, 1.0, 0.99], 1.0, 4);
        assert_eq!(b.len(), 5);
        assert_eq!(c, vec![1, 0, 1, 2]);
    }

    #[test]
    fn rational_dir_is_small() {
        let theta = MatrixPoint::new(2, 1, vec![ratio(1, 2), ratio(1, 3)]).unwrap();
        let d = dir_estimate(&theta, &Weights::equal(2, 1), &ExhaustionSpec::sup_product(2, 1), default_window(1e4)).unwrap();
        assert!(d.value < 0.01);
    }
}
