use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boundselect::catalog::{
    balke_pearl_ate_spec, dyntreat_spec, estimate_reduced_form, manski_binary_spec, BinaryIvData, EstimateOptions,
};
use boundselect::lpbounds::{lp_to_bounds_spec, LatentLp, LpSummary, DEFAULT_ENUM_CAP};
use boundselect::select::from_undominated;
use boundselect::sim::{json_sha256, run, Provenance, SimConfig};
use boundselect::{
    conditional_ci, conventional_ci, estimate_bounds, fixed_target, hybrid_ci, projection_ci, rule_weighted,
    undominated_set, BoundEstimate, BoundsSpec, ConfidenceInterval, CriticalValues, Error, ErrorClass, Matrix,
    ReducedForm, SelectionOutcome, UpperTarget,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "boundselect",
    version,
    about = "Confidence intervals for selected interval-identified parameters"
)]
struct Cli {
    /// Worker threads; 0 uses every logical core.
    #[arg(long, global = true, env = "BOUNDSELECT_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate bounds from data, select an option and report all four intervals.
    Ci(CiArgs),
    /// Run a coverage, length or power experiment from a JSON config.
    Simulate(SimulateArgs),
    /// Convert latent LP systems into a bounds spec.
    Lp2spec(Lp2specArgs),
    /// Check input files without computing anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CatalogName {
    ManskiBinary,
    BalkePearl,
    Dyntreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RuleArg {
    Maxlower,
    Maxupper,
    Weighted,
    Fixed,
    Undominated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum UpperTargetArg {
    Symmetric,
    Literal,
}

#[derive(Args, Debug, Serialize)]
struct CiArgs {
    /// Built-in bounds spec.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    catalog: Option<CatalogName>,
    /// Bounds spec JSON file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// CSV with header y,d,z or y1,y2,d1,d2,z.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = RuleArg::Maxlower)]
    rule: RuleArg,
    /// Weight on the lower bound for the weighted rule.
    #[arg(long, default_value_t = 1.0)]
    w_lower: f64,
    /// Weight on the upper bound for the weighted rule.
    #[arg(long, default_value_t = 1.0)]
    w_upper: f64,
    /// Target option for the fixed rule.
    #[arg(long, default_value_t = 0)]
    option: usize,
    /// Total level, split evenly between the two sides.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// Hybrid pre-test level as a fraction of each side's two-sided level.
    #[arg(long, default_value_t = 0.1)]
    beta_frac: f64,
    #[arg(long, value_enum, default_value_t = UpperTargetArg::Symmetric)]
    upper_target: UpperTargetArg,
    /// Monte Carlo draws for projection critical values.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    #[arg(long, default_value_t = 5)]
    min_stratum: usize,
    /// Covariance eigenvalue band; inf only requires PSD.
    #[arg(long, default_value_t = 1e6)]
    lambda_bar: f64,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Experiment config JSON.
    config: PathBuf,
    /// Used only when the config does not set reps.
    #[arg(long)]
    reps: Option<usize>,
    /// Used only when the config does not set seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for <name>.csv, <name>.json and <name>.dat.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct Lp2specArgs {
    /// One latent LP object or an array of them, one per option.
    input: PathBuf,
    /// Largest number of row subsets to enumerate.
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    cap: u128,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("inputs").required(true).multiple(true))]
struct ValidateArgs {
    #[arg(long, group = "inputs")]
    config: Option<PathBuf>,
    #[arg(long, group = "inputs")]
    spec: Option<PathBuf>,
    #[arg(long, group = "inputs")]
    data: Option<PathBuf>,
    #[arg(long, group = "inputs")]
    lp: Option<PathBuf>,
    /// Minimum stratum size applied to --data.
    #[arg(long, default_value_t = 5)]
    min_stratum: usize,
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    code: &'a str,
    class: &'a str,
    message: String,
}

fn fail(code: &str, class: ErrorClass, message: String) -> ExitCode {
    let class_name = match class {
        ErrorClass::Validation => "validation",
        ErrorClass::Numerical => "numerical",
    };
    let report = ErrorReport {
        code,
        class: class_name,
        message,
    };
    eprintln!("{}", serde_json::to_string(&report).expect("error serializes"));
    ExitCode::from(match class {
        ErrorClass::Validation => 2,
        ErrorClass::Numerical => 3,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail("USAGE", ErrorClass::Validation, e.to_string().trim().to_string());
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            return fail("THREADS", ErrorClass::Validation, e.to_string());
        }
    }
    let res = match cli.command {
        Command::Ci(a) => cmd_ci(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Lp2spec(a) => cmd_lp2spec(&a),
        Command::Validate(a) => cmd_validate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.class(), e.to_string()),
    }
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, body)?,
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn to_json<S: Serialize>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn load_data(path: &Path, opts: &EstimateOptions) -> Result<(BinaryIvData, ReducedForm<f64>), Error> {
    let file = fs::File::open(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let data = BinaryIvData::from_csv(file)?;
    let rf = estimate_reduced_form(&data, opts)?;
    Ok((data, rf))
}

#[derive(Debug, Serialize)]
struct SelectionReport {
    d_hat: usize,
    j_l_hat: usize,
    j_u_hat: usize,
    gamma_l: Vec<i64>,
    gamma_u: Vec<i64>,
    intervals: Vec<ConfidenceInterval>,
}

#[derive(Debug, Serialize)]
struct CiReport {
    provenance: Provenance,
    spec_source: String,
    rule: RuleArg,
    n: usize,
    p_hat: Vec<f64>,
    sigma_hat: Matrix<f64>,
    estimate: BoundEstimate<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    undominated: Option<Vec<usize>>,
    selections: Vec<SelectionReport>,
}

fn check_level(name: &str, a: f64) -> Result<(), Error> {
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::InvalidArgument(format!("{name} = {a} must lie in (0, 0.5)")));
    }
    Ok(())
}

fn cmd_ci(a: &CiArgs) -> Result<(), Error> {
    let (a1, a2) = match (a.alpha1, a.alpha2) {
        (None, None) => {
            check_level("alpha", a.alpha)?;
            (a.alpha / 2.0, a.alpha / 2.0)
        }
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Err(Error::InvalidArgument(
                "alpha1 and alpha2 must be given together".into(),
            ))
        }
    };
    check_level("alpha1", a1)?;
    check_level("alpha2", a2)?;
    if !(a.beta_frac > 0.0 && a.beta_frac < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "beta_frac = {} must lie in (0, 0.5)",
            a.beta_frac
        )));
    }
    let (spec, source): (BoundsSpec<f64>, String) = match (a.catalog, &a.spec) {
        (Some(CatalogName::ManskiBinary), _) => (manski_binary_spec(), "catalog:manski-binary".into()),
        (Some(CatalogName::BalkePearl), _) => (balke_pearl_ate_spec(), "catalog:balke-pearl".into()),
        (Some(CatalogName::Dyntreat), _) => (dyntreat_spec(), "catalog:dyntreat".into()),
        (None, Some(p)) => (serde_json::from_str(&read(p)?)?, format!("file:{}", p.display())),
        (None, None) => return Err(Error::InvalidArgument("one of --catalog or --spec is required".into())),
    };
    let opts = EstimateOptions {
        smoothing: a.smoothing,
        min_stratum: a.min_stratum,
        lambda_bar: a.lambda_bar,
    };
    let (_, rf) = load_data(&a.data, &opts)?;
    if spec.dim_p() != rf.dim() {
        return Err(Error::Dimension(format!(
            "spec has dim_p {} but the data give {} reduced-form coordinates",
            spec.dim_p(),
            rf.dim()
        )));
    }
    let estimate = estimate_bounds(&spec, &rf)?;
    let (undominated, selections): (Option<Vec<usize>>, Vec<SelectionOutcome<f64>>) = match a.rule {
        RuleArg::Maxlower => (None, vec![rule_weighted(&spec, &rf, 1.0, 0.0)?]),
        RuleArg::Maxupper => (None, vec![rule_weighted(&spec, &rf, 0.0, 1.0)?]),
        RuleArg::Weighted => (None, vec![rule_weighted(&spec, &rf, a.w_lower, a.w_upper)?]),
        RuleArg::Fixed => (None, vec![fixed_target(&spec, &rf, a.option)?]),
        RuleArg::Undominated => {
            let set = undominated_set(&spec, &rf)?;
            (Some(set.options()), from_undominated(&set))
        }
    };
    let upper_target = match a.upper_target {
        UpperTargetArg::Symmetric => UpperTarget::Symmetric,
        UpperTargetArg::Literal => UpperTarget::Literal,
    };
    let cv = CriticalValues::new(a.draws, a.seed);
    let selections = selections
        .iter()
        .map(|sel| {
            let intervals = vec![
                conventional_ci(&spec, &rf, sel, a1, a2)?,
                conditional_ci(&spec, &rf, sel, a1, a2)?,
                projection_ci(&spec, &rf, sel, a1, a2, &cv)?,
                hybrid_ci(&spec, &rf, sel, a1, a2, a.beta_frac, upper_target, &cv)?,
            ];
            Ok(SelectionReport {
                d_hat: sel.d_hat,
                j_l_hat: sel.j_l_hat,
                j_u_hat: sel.j_u_hat,
                gamma_l: sel.gamma_l.clone(),
                gamma_u: sel.gamma_u.clone(),
                intervals,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = CiReport {
        provenance: Provenance::new(json_sha256(a), a.seed),
        spec_source: source,
        rule: a.rule,
        n: rf.n(),
        p_hat: rf.p_hat().to_vec(),
        sigma_hat: rf.sigma_hat().clone(),
        estimate,
        undominated,
        selections,
    };
    emit(a.out.as_deref(), &to_json(&report))
}

/// Fills `reps` and `seed` from the flags where the config leaves them unset.
fn merge_flags(text: &str, reps: Option<usize>, seed: Option<u64>) -> Result<SimConfig, Error> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    if let Some(obj) = v.as_object_mut() {
        for (key, flag) in [("reps", reps.map(|r| r as u64)), ("seed", seed)] {
            if let Some(x) = flag {
                if obj.contains_key(key) {
                    eprintln!("note: --{key} ignored, the config sets {key}");
                } else {
                    obj.insert(key.into(), x.into());
                }
            }
        }
    }
    let cfg: SimConfig = serde_json::from_value(v)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    provenance: Provenance,
    csv: PathBuf,
    json: PathBuf,
    dat: PathBuf,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Error> {
    let cfg = merge_flags(&read(&a.config)?, a.reps, a.seed)?;
    let report = run(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    let summary = SimulateSummary {
        provenance: report.provenance.clone(),
        csv: a.out_dir.join(format!("{}.csv", cfg.name)),
        json: a.out_dir.join(format!("{}.json", cfg.name)),
        dat: a.out_dir.join(format!("{}.dat", cfg.name)),
    };
    fs::write(&summary.csv, report.to_csv())?;
    fs::write(&summary.json, report.to_json())?;
    fs::write(&summary.dat, report.to_dat())?;
    emit(None, &to_json(&summary))
}

#[derive(Debug, Serialize)]
struct Lp2specReport {
    provenance: Provenance,
    spec: BoundsSpec<f64>,
    summary: LpSummary,
}

fn parse_lps(text: &str) -> Result<Vec<LatentLp>, Error> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let lps = if value.is_array() {
        serde_json::from_value::<Vec<LatentLp>>(value)?
    } else {
        vec![serde_json::from_value::<LatentLp>(value)?]
    };
    for lp in &lps {
        lp.validate()?;
    }
    Ok(lps)
}

fn cmd_lp2spec(a: &Lp2specArgs) -> Result<(), Error> {
    let lps = parse_lps(&read(&a.input)?)?;
    let (spec, summary) = lp_to_bounds_spec(&lps, a.cap)?;
    let report = Lp2specReport {
        provenance: Provenance::new(json_sha256(&lps), 0),
        spec,
        summary,
    };
    emit(a.out.as_deref(), &to_json(&report))
}

#[derive(Debug, Serialize)]
struct ValidateReport {
    provenance: Provenance,
    valid: bool,
    checked: Vec<String>,
}

fn cmd_validate(a: &ValidateArgs) -> Result<(), Error> {
    let mut checked = Vec::new();
    let mut seed = 0;
    if let Some(p) = &a.config {
        let cfg = SimConfig::from_json(&read(p)?)?;
        seed = cfg.seed;
        checked.push(format!("config:{}", p.display()));
    }
    if let Some(p) = &a.spec {
        let _: BoundsSpec<f64> = serde_json::from_str(&read(p)?)?;
        checked.push(format!("spec:{}", p.display()));
    }
    if let Some(p) = &a.data {
        let opts = EstimateOptions {
            min_stratum: a.min_stratum,
            lambda_bar: f64::INFINITY,
            ..EstimateOptions::default()
        };
        load_data(p, &opts)?;
        checked.push(format!("data:{}", p.display()));
    }
    if let Some(p) = &a.lp {
        parse_lps(&read(p)?)?;
        checked.push(format!("lp:{}", p.display()));
    }
    let report = ValidateReport {
        provenance: Provenance::new(json_sha256(&checked), seed),
        valid: true,
        checked,
    };
    emit(None, &to_json(&report))
}
