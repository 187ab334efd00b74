//! Irrationality measure functions, ψ-Dirichlet functions, best-approximation fronts and
//! realizing sequences.

use crate::error::{Error, Result};
use crate::lattice_flow::{box_points, first_minimum_flowed, FlowSpec, MatrixPoint, ENUM_BUDGET};
use crate::norms::{AmbientNorm, ProductNormSpec};
use crate::rational::{serde_rational, to_f64};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// `ψ(t) = C·t^{−γ}·(log(e+t))^{−s}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    #[serde(rename = "C", with = "serde_rational")]
    pub c: BigRational,
    #[serde(with = "serde_rational")]
    pub gamma: BigRational,
    #[serde(with = "serde_rational")]
    pub s: BigRational,
}

impl PsiSpec {
    pub fn new(c: BigRational, gamma: BigRational, s: BigRational) -> Result<Self> {
        if !c.is_positive() || !gamma.is_positive() || s.is_negative() {
            return Err(Error::InvalidArgument("psi needs C > 0, gamma > 0, s >= 0".into()));
        }
        Ok(PsiSpec { c, gamma, s })
    }

    /// `ψ(t) = t^{−γ}`.
    pub fn power(gamma: BigRational) -> Self {
        PsiSpec { c: BigRational::one(), gamma, s: BigRational::zero() }
    }

    pub fn inverse_t() -> Self {
        PsiSpec::power(BigRational::one())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut v = to_f64(&self.c) * t.powf(-to_f64(&self.gamma));
        if !self.s.is_zero() {
            v *= (std::f64::consts::E + t).ln().powf(-to_f64(&self.s));
        }
        v
    }

    /// `ψ(t) = o(1/t)`.
    pub fn is_o_of_inverse_t(&self) -> bool {
        let one = BigRational::one();
        self.gamma > one || (self.gamma == one && self.s.is_positive())
    }

    /// `ψ(t)^{−1/m} = o(t)`.
    pub fn inverse_root_is_o_t(&self, m: usize) -> bool {
        let mm = BigRational::from_integer(BigInt::from(m));
        self.gamma < mm || (self.gamma == mm && self.s.is_positive())
    }

    /// `t^{1/n}·ψ(t)^{−1/m}`, strictly increasing; its level sets are the switch times.
    fn phi(&self, t: f64, m: usize, n: usize) -> f64 {
        t.powf(1.0 / n as f64) * self.eval(t).powf(-1.0 / m as f64)
    }

    /// Solves `t^{1/n}·ψ(t)^{−1/m} = ratio` for `t`.
    pub fn solve_phi(&self, ratio: f64, m: usize, n: usize) -> Result<f64> {
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::Bracketing(format!("ratio {ratio} out of range")));
        }
        let (mf, nf) = (m as f64, n as f64);
        if self.s.is_zero() {
            let expo = 1.0 / nf + to_f64(&self.gamma) / mf;
            return Ok((to_f64(&self.c).powf(1.0 / mf) * ratio).powf(1.0 / expo));
        }
        let f = |lt: f64| self.phi(lt.exp(), m, n).ln() - ratio.ln();
        let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
        let mut guard = 0;
        while f(lo) > 0.0 {
            lo *= 2.0;
            guard += 1;
            if guard > 60 {
                return Err(Error::Bracketing("no lower bracket for the switch equation".into()));
            }
        }
        while f(hi) < 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 120 {
                return Err(Error::Bracketing("no upper bracket for the switch equation".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }
}

/// A best-approximation pair with its block norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxRecord {
    pub q: Vec<i64>,
    pub p: Vec<i64>,
    pub qnorm: f64,
    pub err: f64,
}

fn record_for(theta: &MatrixPoint, norms: &ProductNormSpec, q: &[i64]) -> ApproxRecord {
    let (p, off) = theta.round_residual(q);
    let qf: Vec<f64> = q.iter().map(|&x| x as f64).collect();
    ApproxRecord { q: q.to_vec(), p, qnorm: norms.right.eval_unchecked(&qf), err: norms.left.eval_unchecked(&off) }
}

fn check_norms(theta: &MatrixPoint, norms: &ProductNormSpec) -> Result<()> {
    if norms.left.dim != theta.m() {
        return Err(Error::DimensionMismatch { expected: theta.m(), got: norms.left.dim });
    }
    if norms.right.dim != theta.n() {
        return Err(Error::DimensionMismatch { expected: theta.n(), got: norms.right.dim });
    }
    Ok(())
}

/// All records with `‖q‖ ≤ qmax` whose error strictly beats every record of smaller `‖q‖`
/// (and the `q = 0` level `min_{p≠0} ‖p‖`); stops at the first exact hit.
pub fn pareto_front(theta: &MatrixPoint, norms: &ProductNormSpec, qmax: f64) -> Result<Vec<ApproxRecord>> {
    check_norms(theta, norms)?;
    if theta.n() == 1 {
        front_walk(theta, norms, qmax)
    } else {
        pareto_front_scan(theta, norms, qmax)
    }
}

/// One-column fronts by jumping from record to record: the next record is the smallest `q`
/// beating the current error, found by box enumeration over doubling `q` ranges.
fn front_walk(theta: &MatrixPoint, norms: &ProductNormSpec, qmax: f64) -> Result<Vec<ApproxRecord>> {
    let unit = norms.right.eval_unchecked(&[1.0]);
    let top = (qmax / unit * (1.0 + 1e-12)).floor() as i64;
    let (c_low, _) = norms.left.equivalence_constants();
    let m = theta.m();
    let mut bar = norms.left.min_integer_norm();
    let mut cur = 0_i64;
    let mut out = Vec::new();
    while cur < top {
        let mut reach = cur.saturating_mul(2).max(cur + 8).min(top);
        let next = loop {
            let ebox = vec![bar / c_low * (1.0 + 1e-9); m];
            let best = box_points(theta, &[reach as f64], &ebox, ENUM_BUDGET / 4)?
                .into_iter()
                .filter(|(q, _)| q[0] > cur)
                .map(|(q, _)| record_for(theta, norms, &q))
                .filter(|r| r.err < bar && r.qnorm <= qmax)
                .min_by_key(|r| r.q[0]);
            if best.is_some() || reach == top {
                break best;
            }
            reach = reach.saturating_mul(2).min(top);
        };
        let Some(r) = next else { break };
        cur = r.q[0];
        bar = r.err;
        let hit = r.err == 0.0;
        out.push(r);
        if hit {
            break;
        }
    }
    Ok(out)
}

/// Reference front by scanning every `q` with `‖q‖ ≤ qmax`.
pub fn pareto_front_scan(theta: &MatrixPoint, norms: &ProductNormSpec, qmax: f64) -> Result<Vec<ApproxRecord>> {
    check_norms(theta, norms)?;
    let n = theta.n();
    let mut bar = norms.left.min_integer_norm();
    let mut out = Vec::new();
    if n == 1 {
        let unit = norms.right.eval_unchecked(&[1.0]);
        let top = (qmax / unit * (1.0 + 1e-12)).floor() as i64;
        for q in 1..=top {
            let r = record_for(theta, norms, &[q]);
            if r.qnorm > qmax {
                break;
            }
            if r.err < bar {
                bar = r.err;
                let hit = r.err == 0.0;
                out.push(r);
                if hit {
                    break;
                }
            }
        }
        return Ok(out);
    }
    let (c_low, _) = norms.right.equivalence_constants();
    let b = (qmax / c_low * (1.0 + 1e-12)).floor() as i64;
    let count = (2 * b + 1) as f64;
    if count.powi(n as i32) / 2.0 > (ENUM_BUDGET / 4) as f64 {
        return Err(Error::Budget { needed: count.powi(n as i32) / 2.0, cap: ENUM_BUDGET / 4 });
    }
    let mut cands: Vec<ApproxRecord> = Vec::new();
    let mut q = vec![-b; n];
    loop {
        if q.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0) {
            let r = record_for(theta, norms, &q);
            if r.qnorm <= qmax {
                cands.push(r);
            }
        }
        let mut i = n;
        let mut done = true;
        while i > 0 {
            i -= 1;
            if q[i] < b {
                q[i] += 1;
                for v in q.iter_mut().skip(i + 1) {
                    *v = -b;
                }
                done = false;
                break;
            }
        }
        if done {
            break;
        }
    }
    cands.sort_by(|a, b| {
        a.qnorm
            .total_cmp(&b.qnorm)
            .then(a.err.total_cmp(&b.err))
            .then_with(|| a.q.cmp(&b.q))
            .then_with(|| a.p.cmp(&b.p))
    });
    let mut last_qnorm = f64::NEG_INFINITY;
    for r in cands {
        if r.qnorm == last_qnorm {
            continue;
        }
        last_qnorm = r.qnorm;
        if r.err < bar {
            bar = r.err;
            let hit = r.err == 0.0;
            out.push(r);
            if hit {
                break;
            }
        }
    }
    Ok(out)
}

/// `t^γ · min_{0<‖q‖≤t} ‖Θq − p‖`.
pub fn chi_gamma(theta: &MatrixPoint, t: f64, gamma: f64, norms: &ProductNormSpec) -> Result<f64> {
    let t0 = norms.right.min_integer_norm();
    if t < t0 {
        return Err(Error::InvalidArgument(format!("t = {t} is below the domain start {t0}")));
    }
    let front = pareto_front(theta, norms, t)?;
    let err = front.last().map(|r| r.err).expect("the domain start admits a record");
    Ok(t.powf(gamma) * err)
}

/// Suprema of `χ_γ` over a front: `‖q_{k+1}‖^γ·err_k`, approached just before each new record.
pub fn chi_peaks(front: &[ApproxRecord], gamma: f64) -> Vec<f64> {
    front.windows(2).map(|w| w[1].qnorm.powf(gamma) * w[0].err).collect()
}

/// `λ_{Θ,ψ}(t)`, the first minimum of `a_{ψ,t}Λ_Θ` under the product norm.
pub fn lambda_psi(theta: &MatrixPoint, t: f64, psi: &PsiSpec, norms: &ProductNormSpec) -> Result<f64> {
    check_norms(theta, norms)?;
    let (v, _) = first_minimum_flowed(theta, &FlowSpec::APsi(psi.clone()), t, &AmbientNorm::Product(norms.clone()))?;
    Ok(v)
}

/// Ordered records realizing `λ_{Θ,ψ}` with their switch times.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizingSequence {
    pub m: usize,
    pub n: usize,
    /// `min_{p≠0} ‖p‖`, the error level of the `q = 0` vectors governing small `t`.
    pub head_err: f64,
    pub records: Vec<ApproxRecord>,
    /// `t_times[k]`: record `k` takes over from its predecessor.
    pub t_times: Vec<f64>,
    /// `z_times[k]`: record `k` switches from its decreasing to its increasing branch
    /// (`+∞` for an exact hit).
    pub z_times: Vec<f64>,
    pub psi: PsiSpec,
    /// Domain start `min ‖q‖` over nonzero integer `q`.
    pub t0: f64,
    /// The formulas are certified up to this time (`+∞` after an exact hit).
    pub valid_until: f64,
    pub qmax: f64,
    pub terminated: bool,
}

impl RealizingSequence {
    fn pred_err(&self, k: usize) -> f64 {
        if k == 0 {
            self.head_err
        } else {
            self.records[k - 1].err
        }
    }

    /// `ψ(t)^{−1/m}`.
    pub fn expand(&self, t: f64) -> f64 {
        self.psi.eval(t).powf(-1.0 / self.m as f64)
    }

    pub fn contract(&self, t: f64) -> f64 {
        t.powf(-1.0 / self.n as f64)
    }

    /// Index of the record realizing `λ` at `t`, or `None` on the initial `q = 0` segment.
    pub fn segment(&self, t: f64) -> Option<usize> {
        let k = self.t_times.partition_point(|&s| s <= t);
        k.checked_sub(1)
    }

    /// `λ` from the segment formulas.
    pub fn lambda_at(&self, t: f64) -> f64 {
        match self.segment(t) {
            None => self.expand(t) * self.head_err,
            Some(k) => {
                let r = &self.records[k];
                if t <= self.z_times[k] {
                    self.contract(t) * r.qnorm
                } else {
                    self.expand(t) * r.err
                }
            }
        }
    }

    /// `(t_k, λ(t_k))` for every switch between two nonzero records.
    pub fn peaks(&self) -> Vec<(f64, f64)> {
        (1..self.records.len())
            .map(|k| {
                let t = self.t_times[k];
                (t, self.expand(t) * self.pred_err(k))
            })
            .collect()
    }
}

/// Computes the realizing sequence certified on `[t0, tmax]`.
pub fn realizing_sequence(
    theta: &MatrixPoint,
    psi: &PsiSpec,
    norms: &ProductNormSpec,
    tmax: f64,
) -> Result<RealizingSequence> {
    check_norms(theta, norms)?;
    let (m, n) = (theta.m(), theta.n());
    let head_err = norms.left.min_integer_norm();
    let t0 = norms.right.min_integer_norm();
    let mut qmax = t0.max(16.0);
    loop {
        let front = pareto_front(theta, norms, qmax)?;
        let seq = assemble(front, psi, m, n, head_err, t0, qmax)?;
        if seq.valid_until >= tmax {
            return Ok(trim(seq, tmax));
        }
        qmax *= 2.0;
    }
}

fn assemble(
    records: Vec<ApproxRecord>,
    psi: &PsiSpec,
    m: usize,
    n: usize,
    head_err: f64,
    t0: f64,
    qmax: f64,
) -> Result<RealizingSequence> {
    let mut t_times = Vec::with_capacity(records.len());
    let mut z_times = Vec::with_capacity(records.len());
    let mut prev = head_err;
    for r in &records {
        t_times.push(psi.solve_phi(r.qnorm / prev, m, n)?);
        z_times.push(if r.err == 0.0 { f64::INFINITY } else { psi.solve_phi(r.qnorm / r.err, m, n)? });
        prev = r.err;
    }
    let terminated = records.last().is_some_and(|r| r.err == 0.0);
    let valid_until = if terminated {
        f64::INFINITY
    } else {
        let unseen = qmax.max(records.last().map_or(0.0, |r| r.qnorm));
        psi.solve_phi(unseen / prev, m, n)?
    };
    Ok(RealizingSequence {
        m,
        n,
        head_err,
        records,
        t_times,
        z_times,
        psi: psi.clone(),
        t0,
        valid_until,
        qmax,
        terminated,
    })
}

fn trim(mut seq: RealizingSequence, tmax: f64) -> RealizingSequence {
    let keep = seq.t_times.partition_point(|&s| s <= tmax);
    if keep < seq.records.len() {
        seq.records.truncate(keep);
        seq.t_times.truncate(keep);
        seq.z_times.truncate(keep);
        seq.terminated = false;
    }
    seq
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Divergence {
    Finite,
    GrowingUnbounded,
    TerminatedRational,
}

/// Finite-horizon stand-in for a limsup: the maximum over the tail of exact peak values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimsupEstimate {
    pub value: f64,
    pub tail_peaks: Vec<(f64, f64)>,
    pub k_tail: usize,
    pub tmax: f64,
    pub divergence: Divergence,
    /// Least-squares slope of `log peak` against `log t` over the tail.
    pub tail_slope: f64,
}

/// Peak values above this are declared divergent.
pub const DIVERGENCE_LEVEL: f64 = 1e6;
/// Tail slopes above this (with at least four tail peaks) are declared divergent.
pub const DIVERGENCE_SLOPE: f64 = 0.1;

pub fn default_tail(peaks: usize) -> usize {
    peaks / 2
}

/// Estimator over already computed peaks.
pub fn limsup_from_peaks(peaks: &[(f64, f64)], k_tail: Option<usize>, tmax: f64, terminated: bool) -> LimsupEstimate {
    let k_tail = k_tail.unwrap_or_else(|| default_tail(peaks.len())).min(peaks.len());
    let tail: Vec<(f64, f64)> = peaks[k_tail..].to_vec();
    let slope = log_slope(&tail);
    if terminated {
        return LimsupEstimate {
            value: 0.0,
            tail_peaks: tail,
            k_tail,
            tmax,
            divergence: Divergence::TerminatedRational,
            tail_slope: slope,
        };
    }
    let max = tail.iter().map(|p| p.1).fold(0.0, f64::max);
    let growing = peaks.iter().any(|p| p.1 > DIVERGENCE_LEVEL) || (tail.len() >= 4 && slope > DIVERGENCE_SLOPE);
    LimsupEstimate {
        value: if growing { f64::INFINITY } else { max },
        tail_peaks: tail,
        k_tail,
        tmax,
        divergence: if growing { Divergence::GrowingUnbounded } else { Divergence::Finite },
        tail_slope: slope,
    }
}

fn log_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Tail maximum of `λ_{Θ,ψ}` over exact peak times up to `tmax`.
pub fn limsup_estimate(
    theta: &MatrixPoint,
    psi: &PsiSpec,
    norms: &ProductNormSpec,
    k_tail: Option<usize>,
    tmax: f64,
) -> Result<LimsupEstimate> {
    let seq = realizing_sequence(theta, psi, norms, tmax)?;
    Ok(limsup_from_peaks(&seq.peaks(), k_tail, tmax, seq.terminated))
}

/// Both sides of `limsup λ_{ψ_γ}^{1+γn/m} = limsup χ_{γn/m}` at a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResult {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_gap: f64,
    pub peaks: usize,
}

/// The left side evaluates `λ` directly by enumeration at each switch time; the right side
/// uses the front's closed-form `χ` peaks.
pub fn bridge_check(theta: &MatrixPoint, gamma: &BigRational, norms: &ProductNormSpec, qmax: f64) -> Result<BridgeResult> {
    check_norms(theta, norms)?;
    let (m, n) = (theta.m() as f64, theta.n() as f64);
    let g = to_f64(gamma);
    let front = pareto_front(theta, norms, qmax)?;
    if front.last().is_some_and(|r| r.err == 0.0) {
        return Ok(BridgeResult { lhs: 0.0, rhs: 0.0, rel_gap: 0.0, peaks: 0 });
    }
    let psi = PsiSpec::power(gamma.clone());
    let chi = chi_peaks(&front, g * n / m);
    let k_tail = default_tail(chi.len());
    let mut lhs = 0.0_f64;
    let mut rhs = 0.0_f64;
    for k in k_tail..chi.len() {
        rhs = rhs.max(chi[k]);
        let t = psi.solve_phi(front[k + 1].qnorm / front[k].err, theta.m(), theta.n())?;
        let lam = lambda_psi(theta, t, &psi, norms)?;
        lhs = lhs.max(lam.powf(1.0 + g * n / m));
    }
    let rel_gap = if rhs > 0.0 { (lhs - rhs).abs() / rhs } else { 0.0 };
    Ok(BridgeResult { lhs, rhs, rel_gap, peaks: chi.len() - k_tail })
}

/// Tail minimum of `−log err_k / log ‖q_{k+1}‖`; `+∞` after an exact hit.
pub fn uniform_exponent_estimate(theta: &MatrixPoint, norms: &ProductNormSpec, qmax: f64) -> Result<f64> {
    let front = pareto_front(theta, norms, qmax)?;
    if front.last().is_some_and(|r| r.err == 0.0) {
        return Ok(f64::INFINITY);
    }
    let vals: Vec<f64> = front
        .windows(2)
        .filter(|w| w[1].qnorm > 1.0)
        .map(|w| -w[0].err.ln() / w[1].qnorm.ln())
        .collect();
    let tail = &vals[default_tail(vals.len())..];
    Ok(tail.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Rational approximations of named constants: continued-fraction convergents `h/k` with
/// `|x − h/k| < 1/(k·k') ≤ 10^{−digits}`.
pub fn preset(name: &str, digits: u32) -> Result<BigRational> {
    let term = |i: usize| -> i64 {
        match name {
            "golden" => 1,
            "sqrt2" => {
                if i == 0 {
                    1
                } else {
                    2
                }
            }
            "e" => {
                if i == 0 {
                    2
                } else if i % 3 == 2 {
                    2 * (i as i64 + 1) / 3
                } else {
                    1
                }
            }
            _ => 0,
        }
    };
    if !["golden", "sqrt2", "e"].contains(&name) {
        return Err(Error::InvalidArgument(format!("unknown preset {name:?}")));
    }
    let target = num_traits::pow(BigInt::from(10), digits as usize);
    let (mut h0, mut h1) = (BigInt::one(), BigInt::from(term(0)));
    let (mut k0, mut k1) = (BigInt::zero(), BigInt::one());
    let mut i = 1;
    loop {
        let a = BigInt::from(term(i));
        let h2 = &a * &h1 + &h0;
        let k2 = &a * &k1 + &k0;
        if &k1 * &k2 >= target {
            return Ok(BigRational::new(h1, k1));
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    fn sup11() -> ProductNormSpec {
        ProductNormSpec::sup(1, 1)
    }

    #[test]
    fn psi_flags() {
        assert!(!PsiSpec::inverse_t().is_o_of_inverse_t());
        assert!(PsiSpec::power(ratio(3, 2)).is_o_of_inverse_t());
        assert!(PsiSpec::new(ratio(1, 1), ratio(1, 1), ratio(1, 1)).unwrap().is_o_of_inverse_t());
        assert!(PsiSpec::inverse_t().inverse_root_is_o_t(2));
        assert!(!PsiSpec::power(ratio(2, 1)).inverse_root_is_o_t(2));
        assert!(PsiSpec::new(ratio(1, 1), ratio(2, 1), ratio(1, 2)).unwrap().inverse_root_is_o_t(2));
    }

    #[test]
    fn solve_phi_with_log_factor_matches_definition() {
        let psi = PsiSpec::new(ratio(2, 1), ratio(3, 2), ratio(1, 1)).unwrap();
        let t = psi.solve_phi(50.0, 2, 1).unwrap();
        assert!((psi.phi(t, 2, 1) / 50.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rational_front_terminates() {
        let front = pareto_front(&MatrixPoint::scalar(ratio(1, 2)), &sup11(), 3.0).unwrap();
        assert_eq!(front.last().unwrap().q, vec![2]);
        assert_eq!(front.last().unwrap().err, 0.0);
        assert_eq!(chi_gamma(&MatrixPoint::scalar(ratio(1, 2)), 2.0, 1.0, &sup11()).unwrap(), 0.0);
    }

    #[test]
    fn front_walk_matches_scan() {
        use crate::norms::NormSpec;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for m in 1..=3 {
            for norms in [ProductNormSpec::sup(m, 1), ProductNormSpec::new(NormSpec::euclidean(m), NormSpec::sup(1))] {
                for _ in 0..4 {
                    let theta = MatrixPoint::random(m, 1, 1 << 44, &mut rng);
                    let walk = pareto_front(&theta, &norms, 20_000.0).unwrap();
                    let scan = pareto_front_scan(&theta, &norms, 20_000.0).unwrap();
                    assert_eq!(walk, scan);
                }
            }
        }
        let half = MatrixPoint::scalar(ratio(1, 2));
        assert_eq!(pareto_front(&half, &sup11(), 100.0).unwrap(), pareto_front_scan(&half, &sup11(), 100.0).unwrap());
    }

    #[test]
    fn presets_are_accurate() {
        let g = preset("golden", 40).unwrap();
        // g² − g − 1 = O(10^{-40})
        let r = &g * &g - &g - BigRational::one();
        assert!(r.abs() < ratio(1, 1) / BigRational::from_integer(num_traits::pow(BigInt::from(10), 39)));
        let s = preset("sqrt2", 40).unwrap();
        let r = &s * &s - BigRational::from_integer(2.into());
        assert!(r.abs() < ratio(1, 1) / BigRational::from_integer(num_traits::pow(BigInt::from(10), 39)));
        let e = preset("e", 20).unwrap();
        assert!((to_f64(&e) - std::f64::consts::E).abs() < 1e-15);
        assert!(preset("pi", 10).is_err());
    }
}
