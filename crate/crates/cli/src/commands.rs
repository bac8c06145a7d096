use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use onestep_core::cv::{cv_select, CvConfig};
use onestep_core::density::{regularized_onestep, DensityConfig, DensityTarget};
use onestep_core::hilbert::{RegOrigin, RegRule};
use onestep_core::inference::{
    band_confidence, density_confidence, equality_test, mmd_test, EqualityConfig, MmdConfig, StandardizerKind,
    ThresholdMethod,
};
use onestep_core::nuisance::{PropensityMethod, SupportRule};
use onestep_core::rkhs::{band_onestep, BandConfig};
use onestep_core::sim::{run_experiment, summarize, ExperimentConfig};
use onestep_core::stats::normal_quantile;
use onestep_core::{Basis, BasisKind, Dataset, Learners, RegSeq};

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn learners(common: &Common, support: SupportRule) -> Learners {
    Learners {
        propensity: match common.learner {
            LearnerArg::Logistic => PropensityMethod::Logistic,
            LearnerArg::Nw => PropensityMethod::NadarayaWatson,
        },
        grid_cells: common.outcome_grid,
        eps: common.propensity_floor,
        support,
        ..Learners::default()
    }
}

fn parse_domain(text: &str) -> Result<(f64, f64)> {
    let (lo, hi) = text.split_once(':').ok_or_else(|| CliError::Usage(format!("domain must be LO:HI, got {text}")))?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("invalid domain bound {s:?}")));
    Ok((parse(lo)?, parse(hi)?))
}

fn basis_kinds(choice: BasisChoice) -> Vec<BasisKind> {
    match choice {
        BasisChoice::Cosine => vec![BasisKind::Cosine],
        BasisChoice::Legendre => vec![BasisKind::Legendre],
        BasisChoice::Cv => vec![BasisKind::Cosine, BasisKind::Legendre],
    }
}

fn make_basis(kind: BasisKind, kmax: usize, domain: (f64, f64)) -> Result<Basis> {
    Ok(Basis::on_interval(kind, kmax, domain.0, domain.1)?)
}

fn threshold_method(inf: &InferenceFlags) -> ThresholdMethod {
    match inf.threshold {
        ThresholdArg::Bootstrap => ThresholdMethod::Bootstrap { reps: inf.boot },
        ThresholdArg::Szekely => ThresholdMethod::Szekely,
    }
}

fn omega_kind(o: OmegaArg) -> StandardizerKind {
    match o {
        OmegaArg::Identity => StandardizerKind::Identity,
        OmegaArg::WaldCov => StandardizerKind::WaldCov,
        OmegaArg::WaldCorr => StandardizerKind::WaldCorr,
    }
}

fn check_threshold_omega(inf: &InferenceFlags, omega: OmegaArg) -> Result<()> {
    if inf.threshold == ThresholdArg::Szekely && omega != OmegaArg::Identity {
        return Err(CliError::Usage("--threshold szekely requires --omega identity".into()));
    }
    Ok(())
}

fn beta_json(beta: &RegSeq) -> Value {
    json!({
        "rule": beta.rule.to_string(),
        "origin": beta.origin,
        "values": beta.values(),
    })
}

/// Hard thresholds `0..=16` over the requested bases.
fn select(
    data: &Dataset,
    kinds: &[BasisKind],
    kmax: usize,
    domain: (f64, f64),
    max_k: usize,
    target: DensityTarget,
    common: &Common,
) -> Result<onestep_core::cv::CvResult> {
    let bases = kinds.iter().map(|&k| make_basis(k, kmax, domain)).collect::<Result<Vec<_>>>()?;
    let cfg = CvConfig {
        candidates: (0..=max_k.min(kmax)).map(|k| RegRule::HardThreshold { k }).collect(),
        bases,
        target,
        seed: common.seed,
    };
    let l = learners(common, SupportRule::Fixed { lo: domain.0, hi: domain.1 });
    Ok(cv_select(data, &cfg, &l)?)
}

fn write_output(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn write_curve(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn report_config<T: Serialize>(args: &T) -> Result<Value> {
    Ok(serde_json::to_value(args)?)
}

pub fn estimate(args: &EstimateArgs) -> Result<Value> {
    check_threshold_omega(&args.inference, args.omega)?;
    let data = Dataset::from_csv_path(&args.common.data)?;
    let domain = parse_domain(&args.basis.domain)?;
    let (basis, beta) = if args.basis.basis == BasisChoice::Cv {
        let res = select(
            &data,
            &basis_kinds(BasisChoice::Cv),
            args.basis.kmax,
            domain,
            16,
            DensityTarget::Arm(1),
            &args.common,
        )?;
        (res.basis, res.beta)
    } else {
        let basis = make_basis(basis_kinds(args.basis.basis)[0], args.basis.kmax, domain)?;
        let beta = RegSeq::new(args.basis.beta.parse()?, args.basis.kmax)?;
        (basis, beta)
    };
    let cfg = DensityConfig { basis, beta: beta.clone(), folds: args.common.folds, seed: args.common.seed };
    let fit =
        regularized_onestep(&data, &cfg, &learners(&args.common, SupportRule::Fixed { lo: domain.0, hi: domain.1 }))?;
    let mut out = json!({
        "command": "estimate",
        "config": report_config(args)?,
        "n": data.len(),
        "estimator": "regularized_onestep",
        "basis": basis,
        "beta": beta_json(&beta),
        "estimation_only": beta.origin == RegOrigin::CrossValidated,
        "coefficients": fit.regularized.coeffs(),
        "plugin_coefficients": fit.plugin.coeffs(),
        "projection_coefficients": fit.projection.coeffs(),
        "sigma_hat": fit.sigma_hat,
    });
    if args.confidence {
        let method = threshold_method(&args.inference);
        let kind = omega_kind(args.omega);
        let report = density_confidence(
            &fit,
            kind,
            args.lambda,
            args.inference.alpha,
            method,
            args.common.seed,
            args.allow_selected_beta,
        )?;
        out["confidence_set"] = json!({
            "estimator": "projection_onestep",
            "alpha": args.inference.alpha,
            "zeta_hat": report.threshold.value,
            "method": method.name(),
            "omega_kind": kind,
            "lambda": args.lambda,
            "seed": args.common.seed,
            "B": method.reps(),
        });
    }
    if let Some(path) = &args.curve {
        let m = args.grid.max(2);
        let ys: Vec<f64> = (0..m).map(|i| basis.lo + basis.width() * i as f64 / (m - 1) as f64).collect();
        let est = fit.regularized.eval_many(&ys)?;
        let plug = fit.plugin.eval_many(&ys)?;
        write_curve(path, &["y", "estimate", "plugin"], (0..m).map(|i| vec![ys[i], est[i], plug[i]]))?;
    }
    Ok(out)
}

pub fn band_estimate(args: &BandArgs) -> Result<Value> {
    let data = Dataset::from_csv_path(&args.common.data)?;
    let cfg = BandConfig {
        b: args.bandlimit,
        grid_points: args.grid,
        folds: args.common.folds,
        seed: args.common.seed,
        extra_points: args.at.clone(),
        ..BandConfig::default()
    };
    let fit = band_onestep(&data, &cfg, &learners(&args.common, SupportRule::DataDriven { pad: 4.0 }))?;
    let method = threshold_method(&args.inference);
    let report = band_confidence(&fit, args.inference.alpha, method, args.common.seed)?;
    let radius = report.radius.unwrap_or(0.0);
    let z = normal_quantile(1.0 - args.inference.alpha / 2.0);
    let n = data.len() as f64;
    let points: Vec<Value> = args
        .at
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let est = fit.extra_estimate[i];
            let se = fit.pointwise_sd(i) / n.sqrt();
            json!({
                "y": y,
                "estimate": est,
                "plugin": fit.extra_plugin[i],
                "pointwise_se": se,
                "uniform_band": [est - radius, est + radius],
                "wald_interval": [est - z * se, est + z * se],
                "width_ratio": if se > 0.0 { radius / (z * se) } else { f64::INFINITY },
            })
        })
        .collect();
    if let Some(path) = &args.curve {
        let mut order: Vec<usize> = (0..fit.grid.len()).collect();
        order.sort_by(|&a, &b| fit.grid.points[a].total_cmp(&fit.grid.points[b]));
        write_curve(
            path,
            &["y", "estimate", "plugin", "lower", "upper"],
            order.into_iter().map(|i| {
                let e = fit.estimate.values[i];
                vec![fit.grid.points[i], e, fit.plugin.values[i], e - radius, e + radius]
            }),
        )?;
    }
    Ok(json!({
        "command": "band-estimate",
        "config": report_config(args)?,
        "n": data.len(),
        "report": {
            "estimator": "band_onestep",
            "alpha": args.inference.alpha,
            "zeta_hat": report.threshold.value,
            "method": method.name(),
            "omega_kind": StandardizerKind::Identity,
            "lambda": 1.0,
            "radius": radius,
            "seed": args.common.seed,
            "B": method.reps(),
        },
        "grid": fit.grid.spec,
        "points": points,
    }))
}

pub fn kme_test(args: &KmeArgs) -> Result<Value> {
    let data = Dataset::from_csv_path(&args.common.data)?;
    let cfg = MmdConfig {
        bandwidth_mult: args.kernel_bw_mult,
        folds: args.common.folds,
        seed: args.common.seed,
        alpha: args.inference.alpha,
        threshold: threshold_method(&args.inference),
        ..MmdConfig::default()
    };
    let report = mmd_test(&data, &cfg, &learners(&args.common, SupportRule::DataDriven { pad: 4.0 }))?;
    let mut out = serde_json::to_value(&report)?;
    out["command"] = json!("kme-test");
    out["config"] = report_config(args)?;
    out["n"] = json!(data.len());
    Ok(out)
}

pub fn density_test(args: &DensityTestArgs) -> Result<Value> {
    check_threshold_omega(&args.inference, args.omega)?;
    let data = Dataset::from_csv_path(&args.common.data)?;
    let domain = parse_domain(&args.basis.domain)?;
    let (basis, beta) = if args.basis.basis == BasisChoice::Cv {
        if !args.allow_selected_beta {
            return Err(CliError::Usage(
                "--basis cv selects β from the data; confidence sets need a fixed β (pass --allow-selected-beta to override)"
                    .into(),
            ));
        }
        let res = select(
            &data,
            &basis_kinds(BasisChoice::Cv),
            args.basis.kmax,
            domain,
            16,
            DensityTarget::Difference,
            &args.common,
        )?;
        (res.basis, res.beta)
    } else {
        let basis = make_basis(basis_kinds(args.basis.basis)[0], args.basis.kmax, domain)?;
        (basis, RegSeq::new(args.basis.beta.parse()?, args.basis.kmax)?)
    };
    let cfg = EqualityConfig {
        basis,
        beta,
        folds: args.common.folds,
        seed: args.common.seed,
        omega: omega_kind(args.omega),
        lambda: args.lambda,
        alpha: args.inference.alpha,
        threshold: threshold_method(&args.inference),
        allow_selected_beta: args.allow_selected_beta,
    };
    let report =
        equality_test(&data, &cfg, &learners(&args.common, SupportRule::Fixed { lo: domain.0, hi: domain.1 }))?;
    let mut out = serde_json::to_value(&report)?;
    out["command"] = json!("density-test");
    out["config"] = report_config(args)?;
    out["n"] = json!(data.len());
    Ok(out)
}

pub fn cv(args: &CvArgs) -> Result<Value> {
    let data = Dataset::from_csv_path(&args.common.data)?;
    let domain = parse_domain(&args.domain)?;
    let target = if args.difference { DensityTarget::Difference } else { DensityTarget::Arm(1) };
    let res = select(&data, &basis_kinds(args.basis), args.kmax, domain, args.max_k, target, &args.common)?;
    let scores: Vec<Value> =
        res.scores.iter().map(|s| json!({"basis": s.basis.kind, "rule": s.rule.to_string(), "risk": s.risk})).collect();
    Ok(json!({
        "command": "cv",
        "config": report_config(args)?,
        "n": data.len(),
        "tag": "estimation-only",
        "selected": {"basis": res.basis, "beta": beta_json(&res.beta)},
        "scores": scores,
    }))
}

pub fn simulate(args: &SimulateArgs) -> Result<Value> {
    let mut cfg = ExperimentConfig::from_json_path(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_path = Some(out.clone());
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    let rows = run_experiment(&cfg)?;
    Ok(json!({
        "command": "simulate",
        "config": cfg,
        "rows": rows.len(),
        "summary": summarize(&rows),
    }))
}

pub fn run(cli: &Cli) -> Result<()> {
    let (value, out) = match &cli.command {
        Command::Estimate(a) => (estimate(a)?, a.common.out.clone()),
        Command::BandEstimate(a) => (band_estimate(a)?, a.common.out.clone()),
        Command::KmeTest(a) => (kme_test(a)?, a.common.out.clone()),
        Command::DensityTest(a) => (density_test(a)?, a.common.out.clone()),
        Command::Cv(a) => (cv(a)?, a.common.out.clone()),
        Command::Simulate(a) => (simulate(a)?, a.summary.clone()),
    };
    write_output(out.as_deref(), &value)
}
