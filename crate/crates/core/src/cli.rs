//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a self-test invariant failed, 2 usage or input
//! error. `MX4SIM_THREADS` caps the worker pool; results do not depend on it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::formats::{Fp4Code, FpFormat, SpecialValues};
use crate::mx::{MxAlgorithm, MxMatrix};
use crate::rng::{Domain, StreamKey};
use crate::tensor::{TensorData, TensorFile};
use crate::train::{train_run, BackwardMode, RunRecord, StudySummary};
use crate::variancelab::run_sweep;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const THREADS_ENV: &str = "MX4SIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mx4sim", version, about = "MXFP4 training arithmetic emulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Reference,
    Unbiased,
}

impl From<AlgoArg> for MxAlgorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Reference => MxAlgorithm::Reference,
            AlgoArg::Unbiased => MxAlgorithm::Unbiased,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the 16 FP4 codes and the floating-point format table.
    Fp4Table,
    /// Quantize an FP32/FP64 tensor file to MXFP4 along its last dimension.
    Quantize {
        /// Input tensor file.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output MXFP4 tensor file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the dequantized values as an FP64 tensor file.
        #[arg(long, value_name = "PATH")]
        dequantize: Option<PathBuf>,
        /// Statistics JSON; defaults to `<out>.stats.json`.
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
    },
    /// Run the dot-product variance sweep and write its CSV.
    VarianceSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// RHT segment length; the whole vector by default.
        #[arg(long)]
        g: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured backward-pass arms.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        g: Option<usize>,
        /// `all` or a comma-separated list such as `EXACT,MXFP4_RHT_SR`.
        #[arg(long)]
        arms: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the core invariants; exits 1 naming any that fail.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<Fault>,
    },
}

/// Deliberate defects used to confirm the self-test can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Drop the 16/9 output correction of the stochastic backward pass.
    Debias,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match run(cli.command, out) {
        Ok(code) => code,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn init_thread_pool() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::arg(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool that is already built (a second call in one process) is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Fp4Table => {
            cmd_fp4_table(out)?;
            Ok(EXIT_OK)
        }
        Command::Quantize {
            input,
            algo,
            seed,
            config,
            out: out_path,
            dequantize,
            stats,
        } => {
            let cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            let algo = algo.map_or(cfg.quantize.algo, MxAlgorithm::from);
            let seed = seed.unwrap_or(cfg.seed);
            let stats_path = stats.unwrap_or_else(|| with_suffix(&out_path, ".stats.json"));
            let report = cmd_quantize(&input, algo, seed, &out_path, dequantize.as_deref())?;
            fs::write(&stats_path, serde_json::to_string_pretty(&report)?)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(EXIT_OK)
        }
        Command::VarianceSweep {
            config,
            seed,
            g,
            out: out_path,
        } => {
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if g.is_some() {
                cfg.variance.rht_g = g;
            }
            cmd_variance_sweep(&cfg, &out_path)?;
            writeln!(out, "wrote {}", out_path.display())?;
            Ok(EXIT_OK)
        }
        Command::Train {
            config,
            seed,
            g,
            arms,
            out: out_dir,
        } => {
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.study.seeds.clear();
            }
            if let Some(g) = g {
                cfg.train.rht_g = g;
            }
            if let Some(a) = arms {
                cfg.study.arms = parse_arms(&a)?;
            }
            let summary = cmd_train(&cfg, &out_dir)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&summary.verdict)?)?;
            Ok(EXIT_OK)
        }
        Command::Selftest { seed, inject_fault } => {
            let report = cmd_selftest(seed, inject_fault, out)?;
            Ok(if report.passed() { EXIT_OK } else { EXIT_INVARIANT })
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn parse_arms(s: &str) -> Result<Vec<BackwardMode>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(BackwardMode::ALL.to_vec());
    }
    s.split(',').map(|a| BackwardMode::parse(a.trim())).collect()
}

fn specials_label(s: SpecialValues) -> &'static str {
    match s {
        SpecialValues::Ieee => "inf+nan",
        SpecialValues::NanOnly => "nan",
        SpecialValues::None => "none",
    }
}

pub fn cmd_fp4_table(out: &mut dyn Write) -> Result<()> {
    writeln!(out, "# FP4 E2M1 codes")?;
    writeln!(out, "{:<6}{:<6}{:>6}", "code", "bits", "value")?;
    for bits in 0u8..16 {
        let v = Fp4Code::from_bits(bits)?.to_f64();
        let sign = if bits & 0x8 != 0 && v == 0.0 { "-" } else { "" };
        writeln!(
            out,
            "{:<6}{:<6}{:>6}",
            format!("0x{bits:x}"),
            format!("{bits:04b}"),
            format!("{sign}{v}")
        )?;
    }
    writeln!(out)?;
    writeln!(out, "# formats")?;
    writeln!(
        out,
        "{:<10}{:>6}{:>10}{:>10}{:>6}{:>8}{:>14}{:>10}",
        "format", "bits", "exponent", "mantissa", "bias", "emax", "max_normal", "specials"
    )?;
    for f in FpFormat::TABLE {
        writeln!(
            out,
            "{:<10}{:>6}{:>10}{:>10}{:>6}{:>8}{:>14}{:>10}",
            f.name,
            f.total_bits(),
            f.exp_bits,
            f.mantissa_bits,
            f.exp_bias,
            f.emax_elem(),
            format!("{:e}", f.max_normal()),
            specials_label(f.specials)
        )?;
    }
    Ok(())
}

/// Quantizes `input` and writes the MXFP4 tensor; returns the statistics
/// report.
pub fn cmd_quantize(
    input: &Path,
    algo: MxAlgorithm,
    seed: u64,
    out: &Path,
    dequantize: Option<&Path>,
) -> Result<serde_json::Value> {
    let t = TensorFile::read(input)?;
    if matches!(t.data, TensorData::Mxfp4(_)) {
        return Err(Error::TensorFile {
            path: input.to_path_buf(),
            reason: "input is already MXFP4; expected FP32 or FP64".into(),
        });
    }
    let m = t.to_matrix()?;
    let (q, stats) = MxMatrix::quantize(&m, algo, &StreamKey::new(seed, Domain::Dither))?;
    if let Some(path) = dequantize {
        TensorFile::f64(t.dims.clone(), q.dequantize().into_vec())?.write(path)?;
    }
    TensorFile::mxfp4(t.dims.clone(), q)?.write(out)?;
    let mut report = stats.to_json();
    report["algo"] = json!(algo);
    report["seed"] = json!(seed);
    report["dims"] = json!(t.dims);
    Ok(report)
}

/// Writes the sweep CSV to `out` and its metadata to `<out>.meta.json`.
pub fn cmd_variance_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let table = run_sweep(&cfg.variance_sweep())?;
    fs::write(out, table.to_csv())?;
    let mut meta = table.metadata();
    meta["config_hash"] = json!(config_hash(cfg)?);
    fs::write(with_suffix(out, ".meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// SHA-256 of the canonical TOML form of the whole experiment config.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// File stem shared by the loss CSV and run JSON of one run.
pub fn run_stem(mode: BackwardMode, seed: u64) -> String {
    format!("{}_seed{seed}", mode.as_str())
}

/// Trains every (seed, arm) pair of the study in parallel and writes
/// `<ARM>_seed<S>.loss.csv`, `<ARM>_seed<S>.run.json` and `summary.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<StudySummary> {
    if cfg.study.arms.is_empty() {
        return Err(Error::Config("no training arms selected".into()));
    }
    fs::create_dir_all(out_dir)?;
    let jobs: Vec<_> = cfg
        .train_seeds()
        .into_iter()
        .flat_map(|seed| {
            cfg.study.arms.iter().map(move |&mode| crate::train::TrainConfig {
                seed,
                backward_mode: mode,
                ..cfg.train.clone()
            })
        })
        .collect();
    let runs: Vec<RunRecord> = jobs.par_iter().map(train_run).collect::<Result<_>>()?;
    for r in &runs {
        let stem = run_stem(r.mode, r.seed);
        fs::write(out_dir.join(format!("{stem}.loss.csv")), r.loss_csv())?;
        fs::write(
            out_dir.join(format!("{stem}.run.json")),
            serde_json::to_string_pretty(r)?,
        )?;
    }
    let summary = StudySummary::from_runs(&runs);
    let doc = json!({
        "config_hash": config_hash(cfg)?,
        "seeds": cfg.train_seeds(),
        "diverged": runs.iter().filter(|r| r.failed()).map(|r| run_stem(r.mode, r.seed)).collect::<Vec<_>>(),
        "arms": summary.arms,
        "verdict": summary.verdict,
    });
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_names(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

/// Runs the invariant checks, printing one line each.
pub fn cmd_selftest(seed: u64, fault: Option<Fault>, out: &mut dyn Write) -> Result<SelftestReport> {
    let mut checks = Vec::new();
    for (name, check) in crate::selftest::CHECKS {
        let t0 = Instant::now();
        let (passed, detail) = match check(seed, fault) {
            Ok(detail) => (true, detail),
            Err(detail) => (false, detail),
        };
        writeln!(
            out,
            "{} {name}: {detail} ({:.1}s)",
            if passed { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        )?;
        checks.push(CheckOutcome { name, passed, detail });
    }
    let report = SelftestReport { checks };
    if report.passed() {
        writeln!(out, "all {} invariants hold", report.checks.len())?;
    } else {
        writeln!(out, "failed: {}", report.failed_names().join(", "))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = main_with_args(std::iter::once("mx4sim").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn fp4_table_contents() {
        let (code, text) = run_cli(&["fp4-table"]);
        assert_eq!(code, 0);
        assert!(text
            .lines()
            .any(|l| l.starts_with("0x7") && l.contains("0111") && l.trim_end().ends_with('6')));
        let code_rows = text.lines().filter(|l| l.starts_with("0x")).count();
        assert_eq!(code_rows, 16);
        let bf16 = text.lines().find(|l| l.starts_with("BF16")).unwrap();
        let cols: Vec<&str> = bf16.split_whitespace().collect();
        assert_eq!(&cols[1..4], &["16", "8", "7"]);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_cli(&["no-such-command"]).0, EXIT_USAGE);
        assert_eq!(run_cli(&["quantize", "--algo", "sideways"]).0, EXIT_USAGE);
        assert_eq!(
            run_cli(&["train", "--arms", "BF16", "--out", "/nonexistent/x"]).0,
            EXIT_USAGE
        );
    }

    #[test]
    fn arms_parsing() {
        assert_eq!(parse_arms("all").unwrap().len(), 5);
        assert_eq!(
            parse_arms("EXACT, mxfp4_rht_sr").unwrap(),
            vec![BackwardMode::Exact, BackwardMode::Mxfp4RhtSr]
        );
        assert!(parse_arms("EXACT,,MXFP4").is_err());
    }

    #[test]
    fn quantize_roundtrip_on_grid_input() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.mx4t");
        // every 32-run contains 6, so the scale is 1 and all values are on the grid
        let vals: Vec<f64> = (0..128)
            .map(|i| if i % 32 == 0 { 6.0 } else { [0.5, -1.5, 3.0, 0.0][i % 4] })
            .collect();
        TensorFile::f64(vec![2, 2, 32], vals.clone())
            .unwrap()
            .write(&input)
            .unwrap();
        let out = dir.path().join("q.mx4t");
        let deq = dir.path().join("dq.mx4t");
        let args = [
            "quantize",
            "--in",
            input.to_str().unwrap(),
            "--algo",
            "reference",
            "--out",
            out.to_str().unwrap(),
            "--dequantize",
            deq.to_str().unwrap(),
        ];
        let (code, text) = run_cli(&args);
        assert_eq!(code, 0, "{text}");
        let back = TensorFile::read(&deq).unwrap();
        assert_eq!(back.dims, vec![2, 2, 32]);
        assert_eq!(back.data, TensorData::F64(vals));
        let q = TensorFile::read(&out).unwrap();
        assert_eq!(q.dims, vec![2, 2, 32]);
        let stats: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(with_suffix(&out, ".stats.json")).unwrap()).unwrap();
        assert_eq!(stats["clipped_fraction"], 0.0);
    }

    #[test]
    fn quantize_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("bad.mx4t");
        fs::write(&input, b"NOPE....").unwrap();
        let out = dir.path().join("q.mx4t");
        let (code, _) = run_cli(&[
            "quantize",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
        TensorFile::f64(vec![40], vec![1.0; 40]).unwrap().write(&input).unwrap();
        let (code, _) = run_cli(&[
            "quantize",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
