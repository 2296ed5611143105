//! Command-line front end.
//!
//! Settings come from flags and optionally a `--config` file, either
//! `key=value` lines or a flat JSON object, with keys named like the long
//! flags. File settings are spliced in ahead of the command-line flags, so
//! flags win.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::counterfactual::{
    combine_two_scale, CfEstimator, CutoffConfig, EstimatorOptions, Grids, PreparedSample, DEFAULT_GRID_NODES,
};
use crate::error::{Error, ErrorClass, Result};
use crate::inference::{bootstrap_att, BootstrapConfig, CiMethod};
use crate::io::{config_comments, read_panel_csv, write_sim, CiRecord, CurvePoint, Report, ResultRecord};
use crate::simulation::{mc_bias_table, mc_coverage_table, DgpConfig, McSettings, TableKind};
use crate::smoothers::{BandwidthRule, Bandwidths, ScaleSource};

pub const DEFAULT_BW_CONSTANT: f64 = FRAC_1_SQRT_2;
pub const DEFAULT_BW_EXPONENT: f64 = 0.30;
const SUBCOMMANDS: [&str; 4] = ["simulate", "estimate", "bootstrap", "mc-table"];

#[derive(Debug, Parser)]
#[command(name = "cfrdd", version, about = "Counterfactual total policy effects in RDDs with a distorted running variable")]
#[command(args_override_self = true)]
struct Cli {
    /// Settings file (`key=value` lines or a JSON object); flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a panel from the simulation design and write it as CSV.
    Simulate(SimulateArgs),
    /// Point estimates at one or more counterfactual cutoffs.
    Estimate(EstimateArgs),
    /// Point estimates plus balanced-group bootstrap intervals.
    Bootstrap(BootstrapArgs),
    /// Monte Carlo bias or coverage table.
    McTable(McTableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DgpArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "share-z1", default_value_t = 0.5)]
    share_z1: f64,
    #[arg(long, default_value_t = 60.0, allow_negative_numbers = true)]
    cutoff: f64,
    #[arg(long = "cf-cutoff", default_value_t = 63.0, allow_negative_numbers = true)]
    cf_cutoff: f64,
    #[arg(long = "noise-sd", default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long = "null-effect", action = ArgAction::Set, num_args = 0..=1, default_value = "false", default_missing_value = "true")]
    null_effect: bool,
}

impl DgpArgs {
    fn config(&self) -> DgpConfig {
        DgpConfig {
            n: self.n,
            share_z1: self.share_z1,
            cutoff: self.cutoff,
            cf_cutoff: self.cf_cutoff,
            outcome_noise_sd: self.noise_sd,
            seed: self.seed,
            null_effect: self.null_effect,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BandwidthArgs {
    /// κ in `h = κ·n^(−x)·σ`.
    #[arg(long = "bw-constant")]
    bw_constant: Option<f64>,
    /// x in `h = κ·n^(−x)·σ`.
    #[arg(long = "bw-exponent")]
    bw_exponent: Option<f64>,
    /// σ source: `per-subsample`, `pooled`, or a number.
    #[arg(long = "bw-scale", default_value = "per-subsample", value_parser = parse_scale)]
    bw_scale: ScaleSource,
    /// Explicit bandwidth along the period-zero running variable.
    #[arg(long)]
    h: Option<f64>,
    /// Explicit bandwidth along the period-one running variable.
    #[arg(long)]
    b: Option<f64>,
}

fn parse_scale(s: &str) -> std::result::Result<ScaleSource, String> {
    match s {
        "per-subsample" => Ok(ScaleSource::PerSubsample),
        "pooled" => Ok(ScaleSource::Pooled),
        other => other
            .parse::<f64>()
            .map(ScaleSource::Fixed)
            .map_err(|_| format!("expected per-subsample, pooled or a number, got `{other}`")),
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    cutoff: f64,
    /// One or more counterfactual cutoffs, comma separated.
    #[arg(long = "cf-cutoff", action = ArgAction::Set, allow_negative_numbers = true, value_delimiter = ',', required = true, num_args = 1..)]
    cf_cutoff: Vec<f64>,
    /// Permit counterfactual cutoffs below the actual cutoff.
    #[arg(long = "allow-extrapolation-below", action = ArgAction::Set, num_args = 0..=1, default_value = "false", default_missing_value = "true")]
    allow_extrapolation_below: bool,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[arg(long = "grid-points", default_value_t = DEFAULT_GRID_NODES)]
    grid_points: usize,
    /// Boundary region width of the treated mean, in units of `b`.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Also report the two-scale bias-reduced ATT.
    #[arg(long = "bias-reduce", action = ArgAction::Set, num_args = 0..=1, default_value = "true", default_missing_value = "true")]
    bias_reduce: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    #[arg(long = "B", default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "ci-method", default_value = "basic")]
    ci_method: CiMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct McTableArgs {
    #[arg(long, default_value = "bias")]
    table: TableKind,
    #[command(flatten)]
    dgp: DgpArgs,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', num_args = 1.., default_values_t = [0.28, 0.30, 0.32])]
    exponents: Vec<f64>,
    /// Bandwidth constants of the bias table; the coverage table uses the first.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', num_args = 1.., default_values_t = [FRAC_1_SQRT_2, 1.0, SQRT_2])]
    constants: Vec<f64>,
    #[arg(long = "bw-scale", default_value = "per-subsample", value_parser = parse_scale)]
    bw_scale: ScaleSource,
    #[arg(long = "grid-points", default_value_t = DEFAULT_GRID_NODES)]
    grid_points: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long = "oracle-draws", default_value_t = crate::simulation::DEFAULT_ORACLE_DRAWS)]
    oracle_draws: usize,
    #[arg(long = "B", default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Coverage of the bias-reduced (true) or original (false) estimator.
    #[arg(long = "bias-reduce", action = ArgAction::Set, num_args = 0..=1, default_value = "true", default_missing_value = "true")]
    bias_reduce: bool,
    #[command(flatten)]
    output: OutputArgs,
}

/// Runs the CLI with process stdout/stderr and returns the exit status.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    run_cli_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// Runs the CLI against the given streams. Failures print
/// `error-class=<class>` on one line followed by a diagnostic.
pub fn run_cli_with<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let result = expand_config(args).and_then(|args| match Cli::try_parse_from(args) {
        Ok(cli) => Ok(Some(cli)),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = write!(stdout, "{e}");
            Ok(None)
        }
        Err(e) => Err(Error::Config(e.to_string().trim_end().replace('\n', " "))),
    });
    let outcome = match result {
        Ok(Some(cli)) => dispatch(cli, stdout),
        Ok(None) => Ok(()),
        Err(e) => Err(e),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            let _ = writeln!(stderr, "error-class={class}");
            let _ = writeln!(stderr, "error: {e}");
            class.exit_code()
        }
    }
}

/// Splices settings from `--config` right after the subcommand name.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = Some(args.get(i + 1).ok_or_else(|| Error::Config("--config needs a path".into()))?.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let extra = config_file_args(Path::new(&path))?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else { return Ok(args) };
    let mut out = args[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn config_file_args(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    if text.trim_start().starts_with('{') {
        let v: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        let Value::Object(map) = v else { unreachable!("starts with a brace") };
        for (k, v) in map {
            let value = match v {
                Value::String(s) => s,
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                Value::Null => continue,
                other => other.to_string(),
            };
            pairs.push((k, value));
        }
    } else {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config file {} line {}: expected key=value", path.display(), lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(pairs
        .into_iter()
        .filter(|(k, _)| k != "config")
        .map(|(k, v)| format!("--{}={v}", k.replace('_', "-")))
        .collect())
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if threads == 0 {
        return Err(Error::Config("--threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut buf = Vec::new();
    let stdout_buf: &mut Vec<u8> = &mut buf;
    let result = pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(&a, stdout_buf),
        Command::Estimate(a) => {
            let report = estimate(&a, None)?;
            emit_report(&report, &a.output, stdout_buf)
        }
        Command::Bootstrap(a) => {
            let cfg = BootstrapConfig {
                replicates: a.replicates,
                seed: a.seed,
                alpha: a.alpha,
                ci_method: a.ci_method,
                bias_reduce: a.estimate.bias_reduce,
            };
            cfg.validate()?;
            let report = estimate(&a.estimate, Some(cfg))?;
            emit_report(&report, &a.estimate.output, stdout_buf)
        }
        Command::McTable(a) => mc_table(&a, stdout_buf),
    });
    stdout.write_all(&buf)?;
    result
}

fn write_output(bytes: &[u8], out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = a.dgp.config();
    let sim = crate::simulation::simulate(&cfg)
        .map_err(|e| if e.class() == ErrorClass::Config { e } else { Error::Config(e.to_string()) })?;
    let mut buf = config_comments(&json!({"mode": "simulate", "dgp": cfg, "version": env!("CARGO_PKG_VERSION")}))
        .into_bytes();
    write_sim(&sim, &mut buf)?;
    write_output(&buf, a.out.as_deref(), stdout)
}

fn resolve_bandwidths(a: &BandwidthArgs, data: &crate::panel::PanelDataset) -> Result<(Bandwidths, Value)> {
    let explicit = a.h.is_some() || a.b.is_some();
    let rule_given = a.bw_constant.is_some() || a.bw_exponent.is_some();
    if explicit && rule_given {
        return Err(Error::Config("explicit --h/--b and --bw-constant/--bw-exponent are mutually exclusive".into()));
    }
    if explicit {
        let (Some(h), Some(b)) = (a.h, a.b) else {
            return Err(Error::Config("explicit bandwidths need both --h and --b".into()));
        };
        let bw = Bandwidths::new(h, b)?;
        return Ok((bw, json!({"source": "explicit", "h": bw.h, "b": bw.b})));
    }
    let rule = BandwidthRule {
        constant: a.bw_constant.unwrap_or(DEFAULT_BW_CONSTANT),
        exponent: a.bw_exponent.unwrap_or(DEFAULT_BW_EXPONENT),
        scale: a.bw_scale,
    };
    let bw = rule.resolve(data)?;
    Ok((
        bw,
        json!({
            "source": "rule",
            "constant": rule.constant,
            "exponent": rule.exponent,
            "scale": scale_label(rule.scale),
            "h": bw.h,
            "b": bw.b,
        }),
    ))
}

fn scale_label(s: ScaleSource) -> String {
    match s {
        ScaleSource::PerSubsample => "per-subsample".into(),
        ScaleSource::Pooled => "pooled".into(),
        ScaleSource::Fixed(v) => v.to_string(),
    }
}

fn estimate(a: &EstimateArgs, boot: Option<BootstrapConfig>) -> Result<Report> {
    let data = read_panel_csv(&a.input)?;
    let (bw, bw_json) = resolve_bandwidths(&a.bandwidth, &data)?;
    let opts = EstimatorOptions { tau: a.tau, ..EstimatorOptions::default() };
    if !(a.tau >= 0.0) {
        return Err(Error::Config(format!("--tau must be nonnegative, got {}", a.tau)));
    }
    let cuts = a
        .cf_cutoff
        .iter()
        .map(|&c_cf| {
            if c_cf < a.cutoff && !a.allow_extrapolation_below {
                Err(Error::Config(format!(
                    "counterfactual cutoff {c_cf} is below the cutoff {}; pass --allow-extrapolation-below",
                    a.cutoff
                )))
            } else {
                CutoffConfig::allowing_below(a.cutoff, c_cf).map_err(|e| Error::Config(e.to_string()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let sample = PreparedSample::new(&data, a.cutoff)?;

    let mut config = json!({
        "mode": if boot.is_some() { "bootstrap" } else { "estimate" },
        "version": env!("CARGO_PKG_VERSION"),
        "input": a.input.display().to_string(),
        "units": data.len(),
        "cutoff": a.cutoff,
        "cf_cutoffs": a.cf_cutoff,
        "allow_extrapolation_below": a.allow_extrapolation_below,
        "bandwidth": bw_json,
        "grid_points": a.grid_points,
        "tau": a.tau,
        "bias_reduce": a.bias_reduce,
        "max_uncovered_fraction": opts.max_uncovered_fraction,
        "max_excluded_mass": opts.max_excluded_mass,
    });
    if let Some(cfg) = &boot {
        config["bootstrap"] = json!({
            "B": cfg.replicates,
            "seed": cfg.seed,
            "alpha": cfg.alpha,
            "ci_method": cfg.ci_method.to_string(),
        });
    }

    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for cut in cuts {
        let span_bw = if a.bias_reduce { bw.scaled(SQRT_2) } else { bw };
        let grids = Grids::covering(&data, span_bw, &cut, a.grid_points)?;
        let fine = CfEstimator::new(&sample, bw, cut, grids, opts)?;
        let orig = fine.att()?;
        let br = if a.bias_reduce {
            let coarse = CfEstimator::new(&sample, bw.scaled(SQRT_2), cut, grids, opts)?.att()?;
            Some(combine_two_scale(&orig, &coarse))
        } else {
            None
        };
        for w in br.as_ref().unwrap_or(&orig).warnings.iter() {
            warnings.push(format!("cf_cutoff={}: {w}", cut.c_cf));
        }
        let ci = match &boot {
            Some(cfg) => {
                let res = bootstrap_att(&data, bw, cut, grids, opts, cfg)?;
                if res.failed > 0 || res.redrawn > 0 {
                    warnings.push(format!(
                        "cf_cutoff={}: {} bootstrap replicates redrawn, {} failed",
                        cut.c_cf, res.redrawn, res.failed
                    ));
                }
                Some(CiRecord {
                    lo: res.ci_lo,
                    hi: res.ci_hi,
                    method: res.method.to_string(),
                    alpha: res.alpha,
                    replicates: cfg.replicates,
                })
            }
            None => None,
        };
        let density = fine.density();
        results.push(ResultRecord {
            cf_cutoff: cut.c_cf,
            att: orig.att,
            att_bias_reduced: br.map(|b| b.att),
            mass_above: orig.mass_above,
            extrapolated_below_cutoff: cut.is_extrapolated().then_some(true),
            ci,
            t_curve: fine.total_effect_curve().into_iter().map(|(r, value)| CurvePoint { r, value }).collect(),
            f_cf: density.grid.nodes().zip(density.values).map(|(r, value)| CurvePoint { r, value }).collect(),
        });
    }
    Ok(Report { config, results, warnings })
}

fn emit_report(report: &Report, out: &OutputArgs, stdout: &mut dyn Write) -> Result<()> {
    let text = match out.format {
        Format::Json => report.to_json()?,
        Format::Csv => report.to_csv(),
    };
    write_output(text.as_bytes(), out.out.as_deref(), stdout)
}

fn mc_table(a: &McTableArgs, stdout: &mut dyn Write) -> Result<()> {
    let dgp = a.dgp.config();
    let settings = McSettings {
        reps: a.reps,
        grid_points: a.grid_points,
        scale: a.bw_scale,
        options: EstimatorOptions { tau: a.tau, ..EstimatorOptions::default() },
        oracle_draws: a.oracle_draws,
    };
    let report = match a.table {
        TableKind::Bias => mc_bias_table(&dgp, &settings, &a.exponents, &a.constants)?,
        TableKind::Coverage => {
            let boot = BootstrapConfig {
                replicates: a.replicates,
                seed: a.dgp.seed,
                alpha: a.alpha,
                ci_method: CiMethod::Basic,
                bias_reduce: a.bias_reduce,
            };
            mc_coverage_table(&dgp, &settings, &boot, &a.exponents, a.constants[0])?
        }
    };
    let text = match a.output.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut config = serde_json::to_value(&report)?;
            if let Value::Object(map) = &mut config {
                map.remove("cells");
            }
            config_comments(&config) + &report.to_csv()
        }
    };
    write_output(text.as_bytes(), a.output.out.as_deref(), stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_parser() {
        assert_eq!(parse_scale("pooled").unwrap(), ScaleSource::Pooled);
        assert_eq!(parse_scale("2.5").unwrap(), ScaleSource::Fixed(2.5));
        assert!(parse_scale("wide").is_err());
    }

    #[test]
    fn config_splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\ncutoff = 60\ncf_cutoff=63,65\n\nbias-reduce=false\n").unwrap();
        let args: Vec<String> =
            ["cfrdd", "--config", path.to_str().unwrap(), "estimate", "--cutoff", "61"].map(String::from).into();
        let out = expand_config(args).unwrap();
        assert_eq!(
            out[3..],
            ["estimate", "--cutoff=60", "--cf-cutoff=63,65", "--bias-reduce=false", "--cutoff", "61"]
        );
    }

    #[test]
    fn json_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"cf_cutoff": [63, 65.5], "format": "csv", "h": null, "allow_extrapolation_below": true}"#)
            .unwrap();
        let mut out = config_file_args(&path).unwrap();
        out.sort();
        assert_eq!(out, ["--allow-extrapolation-below=true", "--cf-cutoff=63,65.5", "--format=csv"]);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "n=150\nseed=3\n").unwrap();
        let args = expand_config(
            ["cfrdd", "simulate", "--config", path.to_str().unwrap(), "--n", "120"].map(String::from).into(),
        )
        .unwrap();
        let cli = Cli::try_parse_from(args).unwrap();
        let Command::Simulate(s) = cli.command else { panic!() };
        assert_eq!((s.dgp.n, s.dgp.seed), (120, 3));
    }

    #[test]
    fn bad_flag_is_config_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli_with(["cfrdd", "estimate", "--bogus"], &mut o, &mut e), 2);
        assert!(String::from_utf8(e).unwrap().starts_with("error-class=config\n"));
    }
}
