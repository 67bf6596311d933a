use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use pufferkit::audit::{audit_dp, AuditConfig, AuditTarget, Decision, ThresholdMethod};
use pufferkit::composition::{compose as compose_total, compose_uc, PrivacyBudget, UcCondition};
use pufferkit::framework::{DataFunction, Database, PPFramework};
use pufferkit::infotheory::{
    exhaustive_mechanism_mi_with, DiscreteKernel, Discretizer, McConfig, MechanismKernel,
};
use pufferkit::meanest::{private_mean, MeanEstConfig, MeanEstReport, MedianKind};
use pufferkit::mechanisms::{
    calibrate_gaussian, calibrate_gaussian_ap, calibrate_gaussian_entropy_law,
    calibrate_gaussian_projection, calibrate_gaussian_sensitivity, calibrate_laplace,
    calibrate_laplace_sensitivity, CalibrationWitness, EntropyBound, NoiseSpec, Projection,
};
use pufferkit::relations::{
    approx_pp_to_mipp_finite, mipp_to_approx_pp, pp_to_mipp, ConversionResult,
};
use pufferkit::smi::{
    smi_dp_statistic, smi_mc, MiEstimator, NeuralDVConfig, PlugInEstimator, RowSamples,
    SliceSampleSet,
};

use crate::json::g17;
use crate::{Failure, Output};

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_framework(path: &PathBuf) -> Result<PPFramework, Failure> {
    Ok(PPFramework::from_toml_path(path)?)
}

/// Query names accepted on the command line.
///
/// `avg`, `sum`, `constant`, `row:I`, `column:J`, `column-sum:J`,
/// `column-avg:J` and `linear:W1,W2,...` (one output, `n*k` weights in
/// row-major order).
pub fn parse_query(spec: &str, n: usize, k: usize) -> Result<DataFunction, Failure> {
    let (head, arg) = match spec.split_once(':') {
        Some((h, a)) => (h.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    let index = || -> Result<usize, Failure> {
        arg.ok_or_else(|| usage(format!("query '{head}' needs an index, e.g. {head}:0")))?
            .parse()
            .map_err(|_| usage(format!("bad index in query '{spec}'")))
    };
    let f = match head {
        "avg" | "average" => DataFunction::average(n, k),
        "sum" => DataFunction::sum(n, k),
        "constant" => DataFunction::constant(),
        "row" => DataFunction::row(index()?),
        "column" => DataFunction::column(index()?),
        "column-sum" => DataFunction::column_sum(n, k, index()?),
        "column-avg" => DataFunction::column_average(n, k, index()?),
        "linear" => {
            let weights = arg
                .ok_or_else(|| usage("query 'linear' needs weights"))?
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| usage(format!("bad weight '{w}'")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            DataFunction::linear(1, weights)?
        }
        other => return Err(usage(format!("unknown query '{other}'"))),
    };
    f.validate(n, k)?;
    Ok(f)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismArg {
    Laplace,
    Gaussian,
    GaussianProjection,
    EntropyLaw,
    Ap,
    LaplaceSensitivity,
    GaussianSensitivity,
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    /// Framework TOML file (not needed for the sensitivity mechanisms).
    #[arg(long)]
    framework: Option<PathBuf>,
    /// Query, e.g. avg, sum, row:0, column-avg:1, linear:1,1.
    #[arg(long, default_value = "avg")]
    query: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = MechanismArg::Gaussian)]
    mechanism: MechanismArg,
    /// Projection dimension for gaussian-projection (random projection).
    #[arg(long)]
    ell: Option<usize>,
    /// Lower bound on the conditional entropy for entropy-law; the Gaussian
    /// closed form is used when omitted.
    #[arg(long)]
    entropy_lb: Option<f64>,
    /// L1 (Laplace) or L2 (Gaussian) sensitivity for the sensitivity mechanisms.
    #[arg(long)]
    sensitivity: Option<f64>,
    /// Output dimension for the sensitivity mechanisms.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Use the scalar closed form for gaussian-sensitivity.
    #[arg(long)]
    compact_scalar: bool,
    /// Outer Monte Carlo draws for sample-access families.
    #[arg(long, default_value_t = 2000)]
    mc_outer: usize,
    /// Inner Monte Carlo draws for sample-access families.
    #[arg(long, default_value_t = 200)]
    mc_inner: usize,
}

#[derive(Serialize)]
struct CalibrateOut {
    method: String,
    family: String,
    b_or_sigma2: f64,
    bound_raw: f64,
    bound_inflated: f64,
    stderr: f64,
    witness: Option<CalibrationWitness>,
    free_regime: bool,
}

#[derive(Serialize)]
struct WithSeed<'a, T> {
    #[serde(flatten)]
    args: &'a T,
    seed: u64,
}

pub fn calibrate(a: CalibrateArgs, seed: u64) -> Result<Output, Failure> {
    let mc = McConfig {
        n_outer: a.mc_outer,
        n_inner: a.mc_inner,
        seed,
    };
    let sensitivity = || {
        a.sensitivity
            .ok_or_else(|| usage("--sensitivity is required for this mechanism"))
    };
    let mut inputs = Vec::new();
    let report = match a.mechanism {
        MechanismArg::LaplaceSensitivity => {
            calibrate_laplace_sensitivity(sensitivity()?, a.dim, a.eps)?
        }
        MechanismArg::GaussianSensitivity => {
            calibrate_gaussian_sensitivity(sensitivity()?, a.dim, a.eps, a.compact_scalar)?
        }
        mech => {
            let path = a
                .framework
                .as_ref()
                .ok_or_else(|| usage("--framework is required for this mechanism"))?;
            inputs.push(path.clone());
            let fw = load_framework(path)?;
            let f = parse_query(&a.query, fw.n, fw.k)?;
            match mech {
                MechanismArg::Laplace => calibrate_laplace(&fw, &f, a.eps, &mc)?,
                MechanismArg::Gaussian => calibrate_gaussian(&fw, &f, a.eps, &mc)?,
                MechanismArg::GaussianProjection => {
                    let ell = a
                        .ell
                        .ok_or_else(|| usage("--ell is required for gaussian-projection"))?;
                    calibrate_gaussian_projection(
                        &fw,
                        &f,
                        a.eps,
                        &Projection::Random { seed, ell },
                        &mc,
                        &[],
                    )?
                }
                MechanismArg::EntropyLaw => {
                    let bound = a
                        .entropy_lb
                        .map_or(EntropyBound::GaussianClosedForm, EntropyBound::Given);
                    calibrate_gaussian_entropy_law(&fw, &f, a.eps, bound, &mc)?
                }
                MechanismArg::Ap => calibrate_gaussian_ap(&fw, &f, a.eps, &mc)?,
                MechanismArg::LaplaceSensitivity | MechanismArg::GaussianSensitivity => {
                    unreachable!()
                }
            }
        }
    };
    let out = CalibrateOut {
        method: report.method.clone(),
        family: report.family.clone(),
        b_or_sigma2: report.b_or_sigma2(),
        bound_raw: report.bound_raw,
        bound_inflated: report.bound_inflated,
        stderr: report.stderr,
        witness: report.witness.clone(),
        free_regime: report.free_regime,
    };
    Ok(Output::json(&out, &WithSeed { args: &a, seed })?.with_inputs(inputs))
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Notion {
    Pp,
    Mipp,
    ApproxPp,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    from: Notion,
    #[arg(long, value_enum)]
    to: Notion,
    #[arg(long)]
    eps: f64,
    /// delta of an (eps, delta)-PP input.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// eps' of the approximate-PP output.
    #[arg(long, default_value_t = 0.0)]
    eps_prime: f64,
    /// Mechanism support size for approx-pp to mipp.
    #[arg(long)]
    supp_m: Option<u64>,
    /// Largest private image size for approx-pp to mipp.
    #[arg(long)]
    max_im_g: Option<u64>,
    /// Print the full conversion record as JSON.
    #[arg(long)]
    json: bool,
}

pub fn convert(a: ConvertArgs) -> Result<Output, Failure> {
    let result = match (a.from, a.to) {
        (Notion::Pp, Notion::Mipp) => ConversionResult {
            input_notion: "pp".into(),
            output_notion: "mi-pp".into(),
            params_in: vec![a.eps],
            params_out: vec![pp_to_mipp(a.eps)?],
            assumptions: vec![],
            vacuous: false,
        },
        (Notion::Mipp, Notion::ApproxPp) => mipp_to_approx_pp(a.eps, a.eps_prime)?,
        (Notion::ApproxPp, Notion::Mipp) => approx_pp_to_mipp_finite(a.eps, a.delta, a.supp_m, a.max_im_g)?,
        (from, to) => {
            return Err(usage(format!(
                "no conversion from {from:?} to {to:?}; supported: pp->mipp, mipp->approx-pp, approx-pp->mipp"
            )))
        }
    };
    let stdout = if a.json {
        crate::json::to_pretty(&result)?
    } else {
        result
            .params_out
            .iter()
            .map(|v| g17(*v))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok(Output {
        stdout,
        params: serde_json::to_value(&a)?,
        inputs: vec![],
        violation: false,
    })
}

// ---------------------------------------------------------------------------
// compose
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct ComposeArgs {
    /// Budget TOML: mode, [[entries]] with id and eps, optional eta and eta_provenance.
    #[arg(long)]
    budget: PathBuf,
    /// Framework TOML; enables composition under uniquely-conditioned families.
    #[arg(long)]
    framework: Option<PathBuf>,
    /// Assert that every mechanism satisfies standard PP (needed when the family has non-UC members).
    #[arg(long)]
    assert_standard_pp: bool,
}

#[derive(Serialize)]
struct ComposeOut {
    total: f64,
    budget: PrivacyBudget,
    uc_condition: Option<UcCondition>,
    trail: Vec<String>,
}

pub fn compose(a: ComposeArgs) -> Result<Output, Failure> {
    let text = std::fs::read_to_string(&a.budget)
        .map_err(|e| usage(format!("cannot read {}: {e}", a.budget.display())))?;
    let budget: PrivacyBudget =
        toml::from_str(&text).map_err(|e| usage(format!("bad budget file: {e}")))?;
    let mut trail: Vec<String> = budget
        .entries
        .iter()
        .map(|e| format!("{}: eps = {}", e.id, g17(e.eps)))
        .collect();
    let mut inputs = vec![a.budget.clone()];
    let (total, uc_condition) = match &a.framework {
        Some(path) => {
            inputs.push(path.clone());
            let fw = load_framework(path)?;
            let uc = compose_uc(&budget, &fw.theta, &fw.graph, a.assert_standard_pp)?;
            trail.push(format!(
                "no eta term: {}",
                serde_json::to_value(uc.condition)?
            ));
            (uc.total, Some(uc.condition))
        }
        None => {
            let total = compose_total(&budget)?;
            if let Some(p) = budget.eta_provenance {
                trail.push(format!(
                    "eta = {} ({})",
                    g17(budget.eta),
                    serde_json::to_value(p)?.as_str().unwrap_or_default()
                ));
            }
            (total, None)
        }
    };
    trail.push(format!("total = {}", g17(total)));
    let out = ComposeOut {
        total,
        budget,
        uc_condition,
        trail,
    };
    Ok(Output::json(&out, &a)?.with_inputs(inputs))
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Fixed,
    Bootstrap,
}

#[derive(Args, Debug, Serialize)]
pub struct DvArgs {
    /// Hidden ReLU units of the DV critic.
    #[arg(long, default_value_t = 64)]
    neurons: usize,
    /// Optimisation steps per fit.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    /// Scale applied to standardised inputs.
    #[arg(long, default_value_t = 20.0)]
    input_scale: f64,
}

impl DvArgs {
    fn config(&self) -> NeuralDVConfig {
        NeuralDVConfig {
            neurons: self.neurons,
            steps: self.steps,
            step_size: self.step_size,
            input_scale: self.input_scale,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct AuditArgs {
    /// Directory of row_<i>.csv sample files.
    #[arg(long)]
    samples: PathBuf,
    /// Reference directory used to build the bootstrap null.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    mode: ModeArg,
    /// Margin r for the fixed mode.
    #[arg(long)]
    margin: Option<f64>,
    /// Projections per record.
    #[arg(long, default_value_t = 16)]
    p: usize,
    /// Bootstrap replicates for the bootstrap mode.
    #[arg(long, default_value_t = 20)]
    n_boot: usize,
    /// dp, mi-dp, smi-dp or renyi:ORDER.
    #[arg(long, default_value = "dp")]
    target: String,
    #[command(flatten)]
    dv: DvArgs,
}

fn parse_target(s: &str) -> Result<AuditTarget, Failure> {
    match s.split_once(':') {
        Some(("renyi", order)) => {
            let order: f64 = order
                .parse()
                .map_err(|_| usage(format!("bad Renyi order '{order}'")))?;
            if !(order >= 1.0) {
                return Err(usage("Renyi order must be at least 1"));
            }
            Ok(AuditTarget::RenyiDp { order })
        }
        None if s == "dp" => Ok(AuditTarget::Dp),
        None if s == "mi-dp" => Ok(AuditTarget::MiDp),
        None if s == "smi-dp" => Ok(AuditTarget::SmiDp),
        _ => Err(usage(format!("unknown target '{s}'"))),
    }
}

pub fn audit(a: AuditArgs, seed: u64) -> Result<Output, Failure> {
    let cfg = AuditConfig {
        eps: a.eps,
        level_alpha: a.alpha,
        method: match a.mode {
            ModeArg::Fixed => ThresholdMethod::FixedMargin,
            ModeArg::Bootstrap => ThresholdMethod::BootstrapNull,
        },
        margin: a.margin,
        p: a.p,
        estimator: a.dv.config(),
        n_boot: a.n_boot,
        target: parse_target(&a.target)?,
        seed,
    };
    cfg.validate()?;
    let samples = SliceSampleSet::read_dir(&a.samples)?;
    let reference = a
        .reference
        .as_ref()
        .map(SliceSampleSet::read_dir)
        .transpose()?;
    let report = audit_dp(&samples, &cfg, reference.as_ref())?;
    // Wall time lives in the manifest so identical runs print identical reports.
    let mut value = serde_json::to_value(&report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.shift_remove("runtime_secs");
    }
    let mut inputs = vec![a.samples.clone()];
    inputs.extend(a.reference.clone());
    let mut out = Output::json(&value, &cfg)?.with_inputs(inputs);
    out.violation = report.decision == Decision::Violation;
    Ok(out)
}

// ---------------------------------------------------------------------------
// mean-estimate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MedianArg {
    Geometric,
    Coordinatewise,
}

#[derive(Args, Debug, Serialize)]
pub struct MeanEstimateArgs {
    /// CSV with header c0,...,c{d-1} and one sample per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Failure probability; sets the number of chunks.
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Bound on E|X - mu|^2.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, value_enum, default_value_t = MedianArg::Geometric)]
    median: MedianArg,
    /// Chunks = floor(multiplier * ln(1/beta)).
    #[arg(long, default_value_t = pufferkit::meanest::REFERENCE_MULTIPLIER)]
    m_multiplier: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
}

#[derive(Serialize)]
struct MeanOut {
    estimate: Vec<f64>,
    #[serde(flatten)]
    report: MeanEstReport,
}

pub fn mean_estimate(a: MeanEstimateArgs, seed: u64) -> Result<Output, Failure> {
    let db = Database::read_csv_path(&a.input)?;
    let rows: Vec<Vec<f64>> = (0..db.n()).map(|i| db.row(i).to_vec()).collect();
    let cfg = MeanEstConfig {
        eps: a.eps,
        beta: a.beta,
        d: db.k(),
        c: a.c,
        m_multiplier: a.m_multiplier,
        median: match a.median {
            MedianArg::Geometric => MedianKind::Geometric,
            MedianArg::Coordinatewise => MedianKind::Coordinatewise,
        },
        tol: a.tol,
        max_iters: a.max_iters,
        seed,
    };
    let (estimate, report) = private_mean(&rows, &cfg)?;
    Ok(Output::json(&MeanOut { estimate, report }, &cfg)?.with_inputs([a.input.clone()]))
}

// ---------------------------------------------------------------------------
// oracle-mi
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseArg {
    Laplace,
    Gaussian,
}

#[derive(Args, Debug, Serialize)]
pub struct OracleMiArgs {
    /// Framework TOML with a discrete family.
    #[arg(long)]
    framework: PathBuf,
    /// Kernel CSV: header c0..c{outputs-1}, one row per database in grid order.
    #[arg(long, conflicts_with_all = ["query", "noise"])]
    kernel: Option<PathBuf>,
    /// Query of an additive-noise mechanism.
    #[arg(long, requires = "noise")]
    query: Option<String>,
    #[arg(long, value_enum, requires = "scale")]
    noise: Option<NoiseArg>,
    /// Laplace b or Gaussian sigma^2.
    #[arg(long)]
    scale: Option<f64>,
    /// Cells per output coordinate when discretising additive noise.
    #[arg(long, default_value_t = 512)]
    bins: usize,
}

pub fn oracle_mi(a: OracleMiArgs) -> Result<Output, Failure> {
    let fw = load_framework(&a.framework)?;
    let mut inputs = vec![a.framework.clone()];
    let kernel = match (&a.kernel, &a.query, a.noise) {
        (Some(path), _, _) => {
            inputs.push(path.clone());
            let table = Database::read_csv_path(path)?;
            let rows = (0..table.n()).map(|i| table.row(i).to_vec()).collect();
            MechanismKernel::Discrete(DiscreteKernel::new(rows)?)
        }
        (None, Some(q), Some(noise)) => {
            let f = parse_query(q, fw.n, fw.k)?;
            let scale = a
                .scale
                .ok_or_else(|| usage("--scale is required with --noise"))?;
            let dim = f.output_dim(fw.n, fw.k);
            let noise = match noise {
                NoiseArg::Laplace => NoiseSpec::laplace(scale, dim),
                NoiseArg::Gaussian => NoiseSpec::gaussian(scale, dim),
            };
            noise.validate()?;
            MechanismKernel::AdditiveNoise { f, noise }
        }
        _ => {
            return Err(usage(
                "give either --kernel or --query with --noise and --scale",
            ))
        }
    };
    let value = exhaustive_mechanism_mi_with(&fw, &kernel, &Discretizer::with_bins(a.bins))?;
    Ok(Output::json(&value, &a)?.with_inputs(inputs))
}

// ---------------------------------------------------------------------------
// smi-estimate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    Dv,
    PlugIn,
}

#[derive(Args, Debug, Serialize)]
pub struct SmiEstimateArgs {
    /// A record CSV (x*, y*, z* columns) or a directory of row_<i>.csv files.
    #[arg(long)]
    samples: PathBuf,
    /// Projections per record.
    #[arg(long, default_value_t = 16)]
    p: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Dv)]
    estimator: EstimatorArg,
    /// Bins per coordinate for the plug-in estimator.
    #[arg(long, default_value_t = 8)]
    bins: usize,
    #[command(flatten)]
    dv: DvArgs,
}

pub fn smi_estimate(a: SmiEstimateArgs, seed: u64) -> Result<Output, Failure> {
    let dv = a.dv.config();
    let plug = PlugInEstimator { bins: a.bins };
    let inner: &dyn MiEstimator = match a.estimator {
        EstimatorArg::Dv => &dv,
        EstimatorArg::PlugIn => &plug,
    };
    let params = WithSeed { args: &a, seed };
    let out = if a.samples.is_dir() {
        let set = SliceSampleSet::read_dir(&a.samples)?;
        Output::json(&smi_dp_statistic(&set, a.p, inner, seed)?, &params)?
    } else {
        let file = std::fs::File::open(&a.samples)
            .map_err(|e| usage(format!("cannot open {}: {e}", a.samples.display())))?;
        let record = RowSamples::read_csv(file)?;
        Output::json(&smi_mc(&record, a.p, inner, seed)?, &params)?
    };
    Ok(out.with_inputs([a.samples.clone()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_names() {
        assert_eq!(parse_query("avg", 3, 2).unwrap().output_dim(3, 2), 1);
        assert_eq!(
            parse_query("column-avg:1", 3, 2).unwrap().output_dim(3, 2),
            1
        );
        assert!(parse_query("linear:1,2,3,4,5,6", 3, 2).is_ok());
        assert!(matches!(
            parse_query("linear:1,2", 3, 2),
            Err(Failure::Usage(_))
        ));
        assert!(matches!(parse_query("row", 3, 2), Err(Failure::Usage(_))));
        assert!(matches!(
            parse_query("median", 3, 2),
            Err(Failure::Usage(_))
        ));
    }

    #[test]
    fn targets() {
        assert_eq!(
            parse_target("renyi:2").unwrap(),
            AuditTarget::RenyiDp { order: 2.0 }
        );
        assert_eq!(parse_target("smi-dp").unwrap(), AuditTarget::SmiDp);
        assert!(parse_target("renyi:0.5").is_err());
        assert!(parse_target("zcdp").is_err());
    }
}
