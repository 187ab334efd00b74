//! One runner per subcommand. Each reads its arguments back from the effective config so
//! that config-file overrides apply.

use crate::config::{self, required};
use crate::{
    CliError, Command, Common, ConstructArgs, DirArgs, EvalArgs, Gap2Args, LimsupArgs, Output, ParetoArgs, RealizeArgs,
    SampleAeArgs, Target,
};
use dirichlet_core::approx::{chi_gamma, chi_peaks, limsup_estimate, pareto_front, realizing_sequence, ApproxRecord, PsiSpec};
use dirichlet_core::constructor::{construct_theta, BoxRegion, ConstructMode, ConstructParams};
use dirichlet_core::exhaustion::{default_window, dir_estimate, gap_scan_d2, histogram, sample_rng, ExhaustionSpec};
use dirichlet_core::fmt17;
use dirichlet_core::lattice_flow::{first_minimum_flowed, r_estimate, FlowSpec, MatrixPoint, MatrixPointJson, Weights};
use dirichlet_core::norms::{AmbientNorm, NormSpec, ProductNormSpec};
use dirichlet_core::rational::{parse_rational, ratio, to_f64};
use serde_json::{json, Map, Value};

type Run = (Output, Result<(), CliError>);

pub fn dispatch(cmd: &Command, effective: &Map<String, Value>, common: &Common) -> Result<Run, CliError> {
    let done = |o: Output| Ok((o, Ok(())));
    match cmd {
        Command::Eval(_) => done(eval(&config::from_map(effective)?, common)?),
        Command::Pareto(_) => done(pareto(&config::from_map(effective)?, common)?),
        Command::Realize(_) => done(realize(&config::from_map(effective)?, common)?),
        Command::Limsup(_) => done(limsup(&config::from_map(effective)?, common)?),
        Command::Dir(_) => done(dir(&config::from_map(effective)?, common)?),
        Command::Construct(_) => construct(&config::from_map(effective)?, common),
        Command::SampleAe(_) => done(sample_ae(&config::from_map(effective)?, common)?),
        Command::Gap2(_) => done(gap2(&config::from_map(effective)?, common)?),
    }
}

fn ints(v: &[i64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn resolve(target: &Target, common: &Common) -> Result<(MatrixPoint, ProductNormSpec), CliError> {
    let s = &target.shape;
    let theta = config::theta(&required(&target.theta, "theta")?, s.m, s.n, common.precision)?;
    Ok((theta, config::product_norm(&s.norm, &s.qnorm, s.m, s.n)?))
}

/// Upper end of the exhaustion range: exactly one for sup norms, else the sampled lower
/// bound for the largest first minimum (whose library includes the known extremal lattices).
fn exhaustion_for(norm: AmbientNorm, seed: u64) -> Result<ExhaustionSpec, CliError> {
    let b = if norm.is_sup() { 1.0 } else { r_estimate(&norm, norm.dim(), 2000, seed)?.value };
    Ok(ExhaustionSpec { norm, b })
}

fn eval(a: &EvalArgs, common: &Common) -> Result<Output, CliError> {
    let (theta, norms) = resolve(&a.target, common)?;
    let (m, n) = (theta.m(), theta.n());
    let modes = [a.psi.is_some(), a.gamma.is_some(), a.weights.is_some()].iter().filter(|&&b| b).count();
    if modes > 1 {
        return Err(CliError::Config("give at most one of psi, gamma, weights".into()));
    }
    if a.t.is_some() == a.peaks.is_some() {
        return Err(CliError::Config("give exactly one of t, peaks".into()));
    }
    let header = vec!["t", "value", "witness_q", "witness_p"];
    let row = |t: f64, v: f64, q: &[i64], p: &[i64]| vec![fmt17(t), fmt17(v), ints(q), ints(p)];
    let mut rows = Vec::new();
    if let Some(g) = &a.gamma {
        let gamma = to_f64(&parse_rational(g).map_err(|e| CliError::Config(format!("gamma: {e}")))?);
        match (&a.t, a.peaks) {
            (Some(ts), _) => {
                for t in config::times(ts)? {
                    let v = chi_gamma(&theta, t, gamma, &norms)?;
                    let front = pareto_front(&theta, &norms, t)?;
                    let r = front.last().expect("chi_gamma succeeded, so a record exists");
                    rows.push(row(t, v, &r.q, &r.p));
                }
            }
            (None, Some(k)) => {
                let front = pareto_front(&theta, &norms, a.tmax)?;
                let peaks = chi_peaks(&front, gamma);
                check_peak_count(peaks.len(), k, front.last().is_some_and(|r| r.err == 0.0))?;
                for (i, v) in peaks.iter().take(k).enumerate() {
                    rows.push(row(front[i + 1].qnorm, *v, &front[i].q, &front[i].p));
                }
            }
            _ => unreachable!(),
        }
        return Ok(Output::Csv { header, rows });
    }
    let ambient = AmbientNorm::Product(norms.clone());
    let flow = match &a.weights {
        Some(_) => FlowSpec::G(config::weights(&a.weights, m, n)?),
        None => FlowSpec::APsi(config::psi(a.psi.as_deref().unwrap_or("t^-1"))?),
    };
    match (&a.t, a.peaks) {
        (Some(ts), _) => {
            for t in config::times(ts)? {
                let (v, w) = first_minimum_flowed(&theta, &flow, t, &ambient)?;
                rows.push(row(t, v, &w.q, &w.p));
            }
        }
        (None, Some(k)) => {
            let psi = match &flow {
                FlowSpec::APsi(p) => p.clone(),
                FlowSpec::G(w) if w.is_equal() => PsiSpec::inverse_t(),
                FlowSpec::G(_) => return Err(CliError::Config("peaks need equal weights".into())),
            };
            let seq = realizing_sequence(&theta, &psi, &norms, a.tmax)?;
            let peaks = seq.peaks();
            check_peak_count(peaks.len(), k, seq.terminated)?;
            for (t, v) in peaks.into_iter().take(k) {
                let (_, w) = first_minimum_flowed(&theta, &flow, t, &ambient)?;
                rows.push(row(t, v, &w.q, &w.p));
            }
        }
        _ => unreachable!(),
    }
    Ok(Output::Csv { header, rows })
}

/// A rational point has finitely many peaks; otherwise running short means the horizon
/// was too small.
fn check_peak_count(found: usize, wanted: usize, terminated: bool) -> Result<(), CliError> {
    if found < wanted && !terminated {
        return Err(CliError::Budget(format!("only {found} peaks below tmax; raise tmax")));
    }
    Ok(())
}

fn pareto(a: &ParetoArgs, common: &Common) -> Result<Output, CliError> {
    let (theta, norms) = resolve(&a.target, common)?;
    let front = pareto_front(&theta, &norms, a.qmax)?;
    let rows = front
        .iter()
        .enumerate()
        .map(|(k, r): (usize, &ApproxRecord)| vec![k.to_string(), ints(&r.q), ints(&r.p), fmt17(r.qnorm), fmt17(r.err)])
        .collect();
    Ok(Output::Csv { header: vec!["k", "q", "p", "qnorm", "err"], rows })
}

fn realize(a: &RealizeArgs, common: &Common) -> Result<Output, CliError> {
    let (theta, norms) = resolve(&a.target, common)?;
    let seq = realizing_sequence(&theta, &config::psi(&a.psi)?, &norms, a.tmax)?;
    let rows = seq
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let t = seq.t_times[k];
            vec![k.to_string(), fmt17(r.qnorm), fmt17(r.err), fmt17(t), fmt17(seq.z_times[k]), fmt17(seq.lambda_at(t))]
        })
        .collect();
    Ok(Output::Csv { header: vec!["k", "qnorm", "err", "t_k", "z_k", "peak"], rows })
}

fn limsup(a: &LimsupArgs, common: &Common) -> Result<Output, CliError> {
    let (theta, norms) = resolve(&a.target, common)?;
    let est = limsup_estimate(&theta, &config::psi(&a.psi)?, &norms, a.k_tail, a.tmax)?;
    Ok(Output::Json(json!({ "estimate": est })))
}

fn dir(a: &DirArgs, common: &Common) -> Result<Output, CliError> {
    let (theta, norms) = resolve(&a.target, common)?;
    let w = config::weights(&a.weights, theta.m(), theta.n())?;
    let ex = exhaustion_for(AmbientNorm::Product(norms), common.seed)?;
    let window = (a.tmin.unwrap_or(default_window(a.tmax).0), a.tmax);
    let est = dir_estimate(&theta, &w, &ex, window)?;
    Ok(Output::Json(json!({ "b": ex.b, "estimate": est })))
}

fn construct(a: &ConstructArgs, common: &Common) -> Result<Run, CliError> {
    let (m, n) = (a.m, a.n);
    let norms = config::product_norm(&a.norm, &a.qnorm, m, n)?;
    let c = required(&a.c, "c")?;
    if !(c >= 0.0) || !c.is_finite() {
        return Err(CliError::Config(format!("c must be a finite value >= 0, got {c}")));
    }
    let mode = match a.mode.as_str() {
        "exhaustion" => {
            if config::psi(&a.psi)? != PsiSpec::inverse_t() {
                return Err(CliError::Config("the exhaustion mode uses psi = t^-1".into()));
            }
            let ex = exhaustion_for(AmbientNorm::Product(norms), common.seed)?;
            if c >= ex.b {
                return Err(CliError::Config(format!("c = {c} must be below b = {}", ex.b)));
            }
            ConstructMode::Exhaustion { weights: Weights::equal(m, n), ex }
        }
        "psi" => ConstructMode::PsiDirichlet { psi: config::psi(&a.psi)?, norms },
        other => return Err(CliError::Config(format!("mode must be exhaustion or psi, got {other:?}"))),
    };
    let center = match &a.center {
        Some(s) => config::theta(s, m, n, common.precision)?.entries().to_vec(),
        None => vec![ratio(1, 2); m * n],
    };
    let radius = parse_rational(&a.radius).map_err(|e| CliError::Config(format!("radius: {e}")))?;
    let domain = BoxRegion::new(m, n, center, radius)?;
    let params = ConstructParams {
        rounds: a.rounds,
        eps0: a.eps0,
        seed: common.seed,
        excursion_budget: a.excursion_budget,
        box_samples: a.box_samples,
    };
    let out = construct_theta(&mode, c, &domain, &params)?;
    let cert = &out.certificate;
    let replay = cert.replay.clone();
    let verdict = if !cert.complete {
        Err(CliError::Budget(format!(
            "construction stopped in round {}: {}",
            cert.failure_round.map_or("?".into(), |k| k.to_string()),
            cert.failure.clone().unwrap_or_default()
        )))
    } else if !replay.as_ref().is_some_and(|r| r.passed) {
        Err(CliError::Failed(format!("certificate replay failed: {:?}", replay.as_ref().map(|r| &r.details))))
    } else {
        Ok(())
    };
    let docs = vec![
        ("theta", json!(MatrixPointJson::from(&out.theta))),
        ("certificate", json!(cert)),
        ("replay", json!(replay)),
    ];
    Ok((Output::Files(docs), verdict))
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let x = q * (sorted.len() - 1) as f64;
    let (i, f) = (x.floor() as usize, x.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

fn summary(values: &[f64]) -> Value {
    if values.is_empty() {
        return Value::Null;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    json!({
        "min": s[0],
        "q25": quantile(&s, 0.25),
        "median": quantile(&s, 0.5),
        "q75": quantile(&s, 0.75),
        "max": s[s.len() - 1],
    })
}

fn sample_ae(a: &SampleAeArgs, common: &Common) -> Result<Output, CliError> {
    let s = &a.shape;
    let norms = config::product_norm(&s.norm, &s.qnorm, s.m, s.n)?;
    let ex = exhaustion_for(AmbientNorm::Product(norms), common.seed)?;
    if a.den_bits == 0 || a.den_bits > 62 {
        return Err(CliError::Config("den_bits must be in 1..=62".into()));
    }
    let window = (a.tmin.unwrap_or(default_window(a.horizon).0), a.horizon);
    let w = Weights::equal(s.m, s.n);
    let mut values = Vec::new();
    let mut skipped = 0;
    for i in 0..a.samples {
        let theta = MatrixPoint::random(s.m, s.n, 1_i64 << a.den_bits, &mut sample_rng(common.seed, i as u64));
        match dir_estimate(&theta, &w, &ex, window) {
            Ok(d) => values.push(d.value),
            Err(dirichlet_core::Error::WindowTooSmall { .. }) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let (bins, counts) = histogram(&values, ex.b, 20);
    Ok(Output::Json(json!({
        "b": ex.b,
        "window": window,
        "values": values,
        "skipped": skipped,
        "summary": summary(&values),
        "histogram": { "bins": bins, "counts": counts },
    })))
}

fn gap2(a: &Gap2Args, common: &Common) -> Result<Output, CliError> {
    let spec = config::norm(&a.norm, 2, "norm")?;
    let norm = if spec == NormSpec::sup(2) { AmbientNorm::sup_product(1, 1) } else { AmbientNorm::Full(spec) };
    let ex = exhaustion_for(norm, common.seed)?;
    let scan = gap_scan_d2(a.samples, &ex, (a.tmin, a.tmax), common.seed)?;
    Ok(Output::Json(json!({ "b": ex.b, "scan": scan })))
}
