//! `ternq` command-line front end.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 unreadable or malformed
//! input, 3 bad flags, 4 training divergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{histogram, packed_size_bytes, StorageMode, DEFAULT_BLOCK_SIZE};
use crate::error::Error;
use crate::format::{
    quantize_archive, size_report, FloatArchive, LayerWeights, QuantArchive, QuantizeOptions, FLOAT_MAGIC, QUANT_MAGIC,
};
use crate::qat::{run_experiment, ExperimentConfig, QatInit};
use crate::quant::{QuantConfig, WeightBits, DEFAULT_EPSILON};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ternq", version, about = "Ternary and low-bit weight quantization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize a .btw float archive into a .btq archive and print a size report.
    Quantize(QuantizeArgs),
    /// Rewrite a .btq archive with Huffman coding switched on or off.
    Pack(PackArgs),
    /// Dequantize a .btq archive back into a .btw float archive.
    Unpack(UnpackArgs),
    /// List the tensors of a .btw or .btq file.
    Inspect(InspectArgs),
    /// Pattern-index frequencies of ternary layers.
    Histogram(HistogramArgs),
    /// Storage size of N weights under every storage mode.
    Sizes(SizesArgs),
    /// Re-quantize a float archive and compare it with an existing .btq.
    Verify(VerifyArgs),
    /// Float vs PTQ vs QAT on a teacher-student regression task.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    fn sep(self) -> char {
        match self {
            TableFormat::Csv => ',',
            TableFormat::Tsv => '\t',
        }
    }
}

fn parse_bits(s: &str) -> Result<WeightBits, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_glob(s: &str) -> Result<glob::Pattern, String> {
    glob::Pattern::new(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct QuantFlags {
    /// Weight precision: 1.58 (ternary) or an integer width 2..=8.
    #[arg(long, default_value = "1.58", value_parser = parse_bits)]
    pub bits: WeightBits,
    /// Ternary weights per pattern index.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub huffman: Switch,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub eps: f32,
    /// Tensors matching this glob stay float32 (repeatable).
    #[arg(long = "keep-float", value_name = "GLOB", value_parser = parse_glob)]
    pub keep_float: Vec<glob::Pattern>,
    /// Store 2..=4-bit weights one per byte instead of two per byte.
    #[arg(long)]
    pub int4_as_int8: bool,
}

impl QuantFlags {
    fn options(&self) -> Result<QuantizeOptions, Failure> {
        let cfg = QuantConfig { weight_bits: self.bits, epsilon: self.eps, ..QuantConfig::default() };
        cfg.validate().map_err(Failure::usage)?;
        if !(1..=crate::codec::MAX_BLOCK_SIZE).contains(&self.block_size) {
            return Err(Failure::usage(Error::InvalidBlockSize(self.block_size)));
        }
        Ok(QuantizeOptions {
            cfg,
            block_size: self.block_size,
            huffman: self.huffman.is_on(),
            keep_float: self.keep_float.clone(),
            int4_as_int8: self.int4_as_int8,
        })
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "FILE")]
    pub output: PathBuf,
    #[command(flatten)]
    pub quant: QuantFlags,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "FILE")]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub huffman: Switch,
}

#[derive(Debug, Args)]
pub struct UnpackArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long = "out", value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Only count layers whose names match.
    #[arg(long, value_name = "GLOB", default_value = "*", value_parser = parse_glob)]
    pub layer: glob::Pattern,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
    /// Print only the N most frequent indices.
    #[arg(long, value_name = "N")]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SizesArgs {
    #[arg(long)]
    pub weights: u64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Float archive the .btq was produced from.
    #[arg(long, value_name = "FILE")]
    pub against: PathBuf,
    /// Largest accepted absolute difference between scales.
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f32,
    #[command(flatten)]
    pub quant: QuantFlags,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = ExperimentConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = ExperimentConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long = "lr", default_value_t = ExperimentConfig::default().learning_rate)]
    pub learning_rate: f32,
    /// Start QAT from the trained float model instead of its initialization.
    #[arg(long)]
    pub fine_tune: bool,
    /// Report file (CSV, one row per seed). Printed to stdout when omitted.
    #[arg(long = "out", value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn usage(e: Error) -> Self {
        Self::new(EXIT_USAGE, e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => EXIT_DIVERGED,
            Error::InvalidConfig(_) | Error::InvalidBlockSize(_) => EXIT_USAGE,
            _ => EXIT_PARSE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_PARSE, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Quantize(a) => cmd_quantize(a, out),
        Command::Pack(a) => cmd_pack(a, out),
        Command::Unpack(a) => cmd_unpack(a),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Histogram(a) => cmd_histogram(a, out),
        Command::Sizes(a) => cmd_sizes(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Experiment(a) => cmd_experiment(a, out, err),
    }
}

fn cmd_quantize(a: &QuantizeArgs, out: &mut dyn Write) -> CmdResult {
    let opts = a.quant.options()?;
    let input = FloatArchive::read_file(&a.input)?;
    let archive = quantize_archive(&input, &opts)?;
    archive.write_file(&a.output)?;
    write!(out, "{}", size_report(&archive)?.to_csv())?;
    Ok(())
}

fn cmd_pack(a: &PackArgs, out: &mut dyn Write) -> CmdResult {
    let mut archive = QuantArchive::read_file(&a.input)?;
    for layer in &mut archive.layers {
        layer.huffman = a.huffman.is_on();
    }
    archive.write_file(&a.output)?;
    write!(out, "{}", size_report(&archive)?.to_csv())?;
    Ok(())
}

fn cmd_unpack(a: &UnpackArgs) -> CmdResult {
    let archive = QuantArchive::read_file(&a.input)?;
    let mut floats = FloatArchive::new();
    for layer in &archive.layers {
        floats.push(layer.name.clone(), layer.weights.dequantize()?);
    }
    floats.write_file(&a.output)?;
    Ok(())
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> CmdResult {
    let bytes = std::fs::read(&a.input).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", a.input.display())))?;
    let magic: [u8; 4] = bytes.get(..4).and_then(|m| m.try_into().ok()).unwrap_or_default();
    if magic == FLOAT_MAGIC {
        let archive = FloatArchive::read(&bytes)?;
        writeln!(out, "name,shape,num_weights")?;
        for t in &archive.tensors {
            writeln!(out, "{},{},{}", t.name, shape_string(t.tensor.shape()), t.tensor.len())?;
        }
    } else if magic == QUANT_MAGIC {
        let archive = QuantArchive::read(&bytes)?;
        writeln!(out, "name,kind,shape,num_weights,beta,block_size,huffman,payload_bytes")?;
        for l in &archive.layers {
            let beta = l.weights.beta().map(|b| b.to_string()).unwrap_or_default();
            let block = match &l.weights {
                LayerWeights::Ternary { packed, .. } => packed.block_size().to_string(),
                _ => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                l.name,
                l.kind(),
                shape_string(l.weights.shape()),
                l.weights.num_weights(),
                beta,
                block,
                if l.huffman { "on" } else { "off" },
                l.stored_payload()?.len()
            )?;
        }
    } else {
        return Err(Error::BadMagic(magic).into());
    }
    Ok(())
}

fn cmd_histogram(a: &HistogramArgs, out: &mut dyn Write) -> CmdResult {
    let archive = QuantArchive::read_file(&a.input)?;
    let packed: Vec<_> = archive
        .layers
        .iter()
        .filter(|l| a.layer.matches(&l.name))
        .filter_map(|l| match &l.weights {
            LayerWeights::Ternary { packed, .. } => Some(packed),
            _ => None,
        })
        .collect();
    if packed.is_empty() {
        return Err(Failure::new(EXIT_VERIFY, format!("no ternary layer matches {:?}", a.layer.as_str())));
    }
    let hist = histogram(packed.iter().copied())?;
    let sep = a.format.sep();
    writeln!(out, "index{sep}count")?;
    let rows: Vec<(usize, u64)> = match a.top {
        Some(n) => hist.ranked().into_iter().take(n).collect(),
        None => hist.counts.iter().copied().enumerate().collect(),
    };
    for (index, count) in rows {
        writeln!(out, "{index}{sep}{count}")?;
    }
    Ok(())
}

fn cmd_sizes(a: &SizesArgs, out: &mut dyn Write) -> CmdResult {
    writeln!(out, "mode,bytes,kib")?;
    for mode in StorageMode::ALL {
        let bytes = packed_size_bytes(a.weights, mode);
        let shown = if mode == StorageMode::Ideal { format!("{bytes:.2}") } else { format!("{bytes}") };
        writeln!(out, "{},{},{:.2}", mode.name(), shown, bytes / 1024.0)?;
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> CmdResult {
    if !(a.tolerance >= 0.0 && a.tolerance.is_finite()) {
        return Err(Failure::new(EXIT_USAGE, format!("tolerance must be non-negative, got {}", a.tolerance)));
    }
    let opts = a.quant.options()?;
    let stored = QuantArchive::read_file(&a.input)?;
    let expected = quantize_archive(&FloatArchive::read_file(&a.against)?, &opts)?;
    let mismatch = |msg: String| Err(Failure::new(EXIT_VERIFY, msg));

    if stored.layers.len() != expected.layers.len() {
        return mismatch(format!(
            "{} has {} layers, re-quantized source has {}",
            a.input.display(),
            stored.layers.len(),
            expected.layers.len()
        ));
    }
    for (s, e) in stored.layers.iter().zip(&expected.layers) {
        if s.name != e.name {
            return mismatch(format!("layer {}: expected layer {} at this position", s.name, e.name));
        }
        if s.kind() != e.kind() || s.weights.shape() != e.weights.shape() {
            return mismatch(format!(
                "layer {}: stored as {} {:?}, re-quantized as {} {:?}",
                s.name,
                s.kind(),
                s.weights.shape(),
                e.kind(),
                e.weights.shape()
            ));
        }
        if let (Some(bs), Some(be)) = (s.weights.beta(), e.weights.beta()) {
            if (bs - be).abs() > a.tolerance {
                return mismatch(format!("layer {}: beta {bs} differs from {be}", s.name));
            }
        }
        let (ps, pe) = (s.stored_payload()?, e.stored_payload()?);
        if ps.len() != pe.len() {
            return mismatch(format!(
                "layer {}: payload is {} bytes, re-quantized payload is {} bytes (check --block-size, --bits and --huffman)",
                s.name,
                ps.len(),
                pe.len()
            ));
        }
        if let Some(i) = ps.iter().zip(&pe).position(|(x, y)| x != y) {
            return mismatch(format!("layer {}: payload differs at byte {i}", s.name));
        }
    }
    writeln!(out, "verified {} layers", stored.layers.len())?;
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg = ExperimentConfig {
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        qat_init: if a.fine_tune { QatInit::FineTune } else { QatInit::Scratch },
        ..ExperimentConfig::default()
    }
    .with_seeds(a.seeds)
    .with_steps(a.steps);
    let report = run_experiment(&cfg)?;
    let csv = report.to_csv();
    match &a.output {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
            writeln!(err, "wrote {}", path.display())?;
        }
        None => write!(out, "{csv}")?,
    }
    writeln!(out, "method,mean,std")?;
    for (name, s) in [("float", report.float_summary()), ("ptq", report.ptq_summary()), ("qat", report.qat_summary())] {
        writeln!(out, "{name},{:.6},{:.6}", s.mean, s.std)?;
    }
    let verdict = if report.qat_beats_ptq() { "PASS" } else { "FAIL" };
    writeln!(out, "{verdict}: mean qat loss < mean ptq loss by more than the qat std")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("ternq").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn sizes_for_conv_layer() {
        let (code, out, _) = run_str(&["sizes", "--weights", "327680"]);
        assert_eq!(code, 0);
        assert_eq!(
            out,
            "mode,bytes,kib\nideal-1.58,64920.06,63.40\nraw-int8,327680,320.00\nindexed,65536,64.00\nint4,163840,160.00\n"
        );
    }

    #[test]
    fn sizes_edge_cases() {
        let (_, out, _) = run_str(&["sizes", "--weights", "0"]);
        assert!(out.lines().skip(1).all(|l| l.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0)));
        let (_, out, _) = run_str(&["sizes", "--weights", "7"]);
        assert!(out.contains("\nindexed,2,"));
    }

    #[test]
    fn usage_errors_exit_3() {
        assert_eq!(run_str(&[]).0, EXIT_USAGE);
        assert_eq!(run_str(&["sizes"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["quantize", "--in", "a", "--out", "b", "--bits", "3.5"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["quantize", "--in", "a", "--out", "b", "--block-size", "6"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["quantize", "--in", "a", "--out", "b", "--eps", "0"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["histogram", "--in", "a", "--format", "json"]).0, EXIT_USAGE);
    }

    #[test]
    fn help_and_version_exit_0() {
        let (code, out, _) = run_str(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("quantize"));
        assert_eq!(run_str(&["--version"]).0, 0);
    }

    #[test]
    fn missing_input_is_parse_error() {
        let (code, _, err) = run_str(&["inspect", "--in", "/nonexistent/x.btq"]);
        assert_eq!(code, EXIT_PARSE);
        assert!(err.starts_with("error:"));
    }
}
