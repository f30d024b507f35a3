//! The `ucda` command-line tool.
//!
//! Exit codes: 0 ok, 1 parse/usage error, 2 infeasible program, 3 runtime
//! error, 4 datapath/oracle mismatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::controller::{
    compile, compare, execute_traced, random_input, random_weights, segnet_basic_preset, Fault, LayerCommand,
    NetDescription, OpKind, PostOps, Program,
};
use crate::controller::weights::{read_weights, write_weights};
use crate::datapath::run_layer;
use crate::error::Error;
use crate::kernels::ComputeKind;
use crate::linebuffer::PaddingMode;
use crate::pearray::HwConfig;
use crate::perf::{latency_scenario, layer_cycles, PerfReport};
use crate::qtensor::{Activation, PoolKind, QTensor, Shape3};
use crate::tensorio::{decode_pnm, encode_pnm, read_raw, write_raw};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

pub const SEED_ENV: &str = "UCDA_SEED";

#[derive(Parser, Debug)]
#[command(name = "ucda", version, about = "Unified conv/deconv accelerator model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Preset {
    SegnetBasic,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Scenario {
    Latency,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FaultArg {
    FlipBit,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// Network description (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    net: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args, Debug)]
struct HwArgs {
    /// Hardware overrides, e.g. `tn=8,tm=8,arrays=2,clock_mhz=220`.
    #[arg(long = "hw", value_name = "KEY=VALUE[,...]")]
    hw: Vec<String>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Weight image; random weights from the seed when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Raw input tensor; a random tensor from the seed when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed for generated data (default: $UCDA_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a network into a command program.
    Compile {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        hw: HwArgs,
        /// Program dump destination (stdout when absent).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Execute a network on the datapath model.
    Run {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        hw: HwArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Raw output tensor.
        #[arg(short, long)]
        output: PathBuf,
        /// JSON performance report (stdout when absent).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check the datapath against the reference oracle layer by layer.
    Compare {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        hw: HwArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        fault: Option<FaultArg>,
    },
    /// Print modelled performance.
    Bench {
        #[arg(long, value_enum, conflicts_with = "layer")]
        scenario: Option<Scenario>,
        /// `op:HxWxC:COUT[:POOL]`, e.g. `conv3x3:90x120x8:8:max`.
        #[arg(long)]
        layer: Vec<String>,
        #[command(flatten)]
        hw: HwArgs,
        #[arg(long)]
        json: bool,
    },
    /// Write a random raw tensor.
    GenInput {
        /// `HxWxC`
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = -7, allow_hyphen_values = true)]
        scale_exp: i32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a random weight image for a network.
    GenWeights {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Convert between PPM/PGM images and raw tensors (by file extension).
    Convert { input: PathBuf, output: PathBuf },
}

struct Failure {
    code: i32,
    message: String,
}

type CliResult<T> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn stage(self, code: i32) -> CliResult<T>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn stage(self, code: i32) -> CliResult<T> {
        self.map_err(|e| {
            let code = match e {
                Error::Infeasible { .. } | Error::CapacityExceeded { .. } => EXIT_INFEASIBLE,
                _ => code,
            };
            Failure {
                code,
                message: e.to_string(),
            }
        })
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_PARSE,
        message: format!("{}: {e}", path.display()),
    }
}

fn seed(explicit: Option<u64>) -> CliResult<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure {
            code: EXIT_PARSE,
            message: format!("{SEED_ENV}={v:?} is not an unsigned integer"),
        }),
        Err(_) => Ok(0),
    }
}

fn load_net(a: &NetArgs) -> CliResult<NetDescription> {
    match (&a.net, a.preset) {
        (_, Some(Preset::SegnetBasic)) => Ok(segnet_basic_preset()),
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
            NetDescription::from_json(&text).stage(EXIT_PARSE).map_err(|f| Failure {
                message: format!("{}: {}", p.display(), f.message),
                ..f
            })
        }
        (None, None) => Err(Failure {
            code: EXIT_PARSE,
            message: "--net or --preset is required".into(),
        }),
    }
}

fn load_hw(a: &HwArgs) -> CliResult<HwConfig> {
    let mut cfg = HwConfig::default();
    for spec in &a.hw {
        cfg = cfg.with_overrides(spec).stage(EXIT_PARSE)?;
    }
    Ok(cfg)
}

fn load_data(net: &NetDescription, d: &DataArgs) -> CliResult<(Vec<crate::kernels::KernelSet>, QTensor)> {
    let seed = seed(d.seed)?;
    let weights = match &d.weights {
        Some(p) => read_weights(p).stage(EXIT_PARSE)?,
        None => random_weights(net, seed).stage(EXIT_PARSE)?,
    };
    let input = match &d.input {
        Some(p) => read_raw(p).stage(EXIT_PARSE)?,
        None => random_input(net.input.shape(), net.input.scale_exp, seed),
    };
    if input.shape() != net.input.shape() {
        return Err(Failure {
            code: EXIT_PARSE,
            message: format!("input tensor {} but the net expects {}", input.shape(), net.input.shape()),
        });
    }
    Ok((weights, input))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: format!("{}: {e}", path.display()),
    })
}

fn parse_shape(s: &str) -> CliResult<Shape3> {
    let bad = || Failure {
        code: EXIT_PARSE,
        message: format!("bad shape {s:?}, expected HxWxC"),
    };
    let d: Vec<usize> = s.split('x').map(|v| v.parse().map_err(|_| bad())).collect::<CliResult<_>>()?;
    match d[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Shape3::new(h, w, c)),
        _ => Err(bad()),
    }
}

fn parse_layer_spec(spec: &str, cfg: &HwConfig) -> CliResult<LayerCommand> {
    let bad = |m: String| Failure {
        code: EXIT_PARSE,
        message: format!("layer spec {spec:?}: {m}"),
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(bad("expected op:HxWxC:COUT[:POOL]".into()));
    }
    let op: OpKind = parts[0].parse().map_err(|e: Error| bad(e.to_string()))?;
    let input = parse_shape(parts[1])?;
    let cout: usize = parts[2].parse().map_err(|_| bad("bad output channels".into()))?;
    let pool: PoolKind = match parts.get(3) {
        Some(p) => p.parse().map_err(|e: Error| bad(e.to_string()))?,
        None => PoolKind::None,
    };
    let padding = match op {
        OpKind::Conv3x3 => PaddingMode::ALL,
        OpKind::Deconv2x => PaddingMode::TOP_LEFT,
        _ => PaddingMode::NONE,
    };
    let mut cmd = LayerCommand {
        op,
        padding,
        in_shape: input,
        out_shape: input,
        tile_depth: input.channels.min(cfg.tn()),
        unroll: (cfg.tn(), cfg.tm()),
        weight_slot: op.compute_kind().map(|_| 0),
        if_bank: 0,
        of_bank: 0,
        post: PostOps {
            activation: Activation::Relu,
            pool,
            out_scale_exp: -4,
        },
    };
    if op.compute_kind().is_none() {
        cmd.tile_depth = input.channels;
        cmd.post.pool = PoolKind::None;
    }
    cmd.out_shape.channels = if op.compute_kind().is_some() { cout } else { input.channels };
    let pre = cmd.pre_pool_shape();
    cmd.out_shape = if cmd.post.pool != PoolKind::None || matches!(op, OpKind::MaxPool | OpKind::AvgPool) {
        Shape3::new(pre.height / 2, pre.width / 2, pre.channels)
    } else {
        pre
    };
    cmd.validate().map_err(|e| bad(e.to_string()))?;
    Ok(cmd)
}

fn cmd_compile(net: &NetArgs, hw: &HwArgs, output: &Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let net = load_net(net)?;
    let cfg = load_hw(hw)?;
    let program = compile(&net, &cfg).stage(EXIT_PARSE)?;
    let dump = program.dump();
    match output {
        Some(p) => write_file(p, dump.as_bytes())?,
        None => {
            let _ = out.write_all(dump.as_bytes());
        }
    }
    let b = program.budget;
    let stages = program.commands.len()
        + program.commands.iter().filter(|c| c.post.pool != PoolKind::None).count();
    let _ = writeln!(
        err,
        "feasible: {} commands ({stages} stages); IF {} / {} bits, OF {} / {} bits, weights {} / {} bits",
        program.commands.len(),
        b.if_bits,
        cfg.if_bank_bits(),
        b.of_bits,
        cfg.of_bits(),
        b.weight_bits,
        cfg.weight_bits()
    );
    Ok(())
}

fn cmd_run(
    net_args: &NetArgs,
    hw: &HwArgs,
    data: &DataArgs,
    output: &Path,
    report: &Option<PathBuf>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let net = load_net(net_args)?;
    let cfg = load_hw(hw)?;
    let (weights, input) = load_data(&net, data)?;
    let program = compile(&net, &cfg).stage(EXIT_PARSE)?;
    let (outputs, trace) = execute_traced(&program, &weights, &input, &cfg).stage(EXIT_RUNTIME)?;
    let result = outputs.last().unwrap_or(&input);
    write_raw(output, result).stage(EXIT_RUNTIME)?;
    let reports: Vec<_> = trace.iter().map(|t| t.report).collect();
    let perf = PerfReport::new(&program, &reports, &cfg);
    match report {
        Some(p) => {
            write_file(p, perf.to_json().as_bytes())?;
            let _ = out.write_all(perf.to_table().as_bytes());
        }
        None => {
            let _ = writeln!(out, "{}", perf.to_json());
        }
    }
    Ok(())
}

fn cmd_compare(
    net_args: &NetArgs,
    hw: &HwArgs,
    data: &DataArgs,
    fault: Option<FaultArg>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let net = load_net(net_args)?;
    let cfg = load_hw(hw)?;
    let (weights, input) = load_data(&net, data)?;
    let program = compile(&net, &cfg).stage(EXIT_PARSE)?;
    let fault = fault.map(|FaultArg::FlipBit| Fault::FlipBit);
    let r = compare(&program, &weights, &input, &cfg, fault).stage(EXIT_RUNTIME)?;
    for l in &r.layers {
        let _ = writeln!(out, "layer {} {}: max |diff| {}", l.index, l.op, l.max_abs_diff);
    }
    match r.deconv_mult_ratio {
        Some(x) => {
            let _ = writeln!(out, "deconv multiplications, naive / patch: {x:.2}");
        }
        None => {
            let _ = writeln!(out, "deconv multiplications, naive / patch: n/a");
        }
    }
    if let Some(d) = r.first_divergence() {
        let (y, x, c) = d.first_mismatch.unwrap_or_default();
        return Err(Failure {
            code: EXIT_MISMATCH,
            message: format!(
                "mismatch: layer {} ({}) first differs at row {y}, column {x}, channel {c}",
                d.index, d.op
            ),
        });
    }
    let _ = writeln!(out, "bit-exact: all {} layers", r.layers.len());
    Ok(())
}

fn cmd_bench(scenario: Option<Scenario>, layers: &[String], hw: &HwArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_hw(hw)?;
    if layers.is_empty() {
        let _ = scenario;
        let s = latency_scenario(&cfg);
        if json {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&s).expect("plain data"));
            return Ok(());
        }
        let _ = out.write_all(s.to_table().as_bytes());
        let _ = writeln!(out, "peak {:.2} GOPS, DSP-equiv {}", crate::perf::peak_gops(&cfg), crate::perf::dsp_equiv(&cfg));
        return Ok(());
    }
    let commands = layers.iter().map(|l| parse_layer_spec(l, &cfg)).collect::<CliResult<Vec<_>>>()?;
    let program = Program {
        commands,
        budget: Default::default(),
    };
    let reports: Vec<_> = program.commands.iter().map(|c| layer_cycles(c, &cfg)).collect();
    let perf = PerfReport::new(&program, &reports, &cfg);
    if json {
        let _ = writeln!(out, "{}", perf.to_json());
    } else {
        let _ = out.write_all(perf.to_table().as_bytes());
    }
    Ok(())
}

/// Runs one command on a random input/weights and returns its report, for
/// checking the analytic model from the command line.
pub fn simulate_layer(cmd: &LayerCommand, cfg: &HwConfig, seed: u64) -> crate::Result<crate::datapath::CycleReport> {
    let input = random_input(cmd.in_shape, -7, seed);
    let ks = match cmd.op.compute_kind() {
        Some(kind) => {
            let cin = cmd.in_shape.channels;
            let cout = cmd.out_shape.channels;
            let w = random_input(Shape3::new(cout, cin, 9), 0, seed ^ 1).into_data();
            Some(crate::kernels::KernelSet::with_uniform_requant(
                kind,
                cin,
                cout,
                w,
                crate::qtensor::Requant::new(16384, 8)?,
            )?)
        }
        None => None,
    };
    let ks = ks.map(|k| if k.kind == ComputeKind::Deconv2x { k.rotate_all() } else { k });
    Ok(run_layer(cmd, &input, ks.as_ref(), cfg)?.1)
}

fn cmd_gen_input(shape: &str, scale_exp: i32, s: Option<u64>, output: &Path) -> CliResult<()> {
    let shape = parse_shape(shape)?;
    if !(-16..=0).contains(&scale_exp) {
        return Err(Failure {
            code: EXIT_PARSE,
            message: format!("scale exponent {scale_exp} outside [-16, 0]"),
        });
    }
    let t = random_input(shape, scale_exp, seed(s)?);
    write_raw(output, &t).stage(EXIT_RUNTIME)
}

fn cmd_gen_weights(net: &NetArgs, s: Option<u64>, output: &Path) -> CliResult<()> {
    let net = load_net(net)?;
    let w = random_weights(&net, seed(s)?).stage(EXIT_RUNTIME)?;
    write_weights(output, &w).stage(EXIT_RUNTIME)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("ppm" | "pgm" | "pnm")
    )
}

fn cmd_convert(input: &Path, output: &Path) -> CliResult<()> {
    let tensor = if is_image(input) {
        let bytes = std::fs::read(input).map_err(|e| io_fail(input, e))?;
        decode_pnm(&bytes).stage(EXIT_PARSE)?
    } else {
        read_raw(input).stage(EXIT_PARSE)?
    };
    if is_image(output) {
        write_file(output, &encode_pnm(&tensor).stage(EXIT_PARSE)?)
    } else {
        write_raw(output, &tensor).stage(EXIT_RUNTIME)
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Compile { net, hw, output } => cmd_compile(net, hw, output, out, err),
        Command::Run {
            net,
            hw,
            data,
            output,
            report,
        } => cmd_run(net, hw, data, output, report, out),
        Command::Compare { net, hw, data, fault } => cmd_compare(net, hw, data, *fault, out),
        Command::Bench {
            scenario,
            layer,
            hw,
            json,
        } => cmd_bench(*scenario, layer, hw, *json, out),
        Command::GenInput {
            shape,
            scale_exp,
            seed,
            output,
        } => cmd_gen_input(shape, *scale_exp, *seed, output),
        Command::GenWeights { net, seed, output } => cmd_gen_weights(net, *seed, output),
        Command::Convert { input, output } => cmd_convert(input, output),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("ucda").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn bench_default_lines() {
        let (code, out, _) = run_str(&["bench", "--scenario", "latency"]);
        assert_eq!(code, 0);
        assert!(out.contains("conv = deconv compute cycles: 10800 = 10800"));
        assert!(out.contains("peak 253.44 GOPS, DSP-equiv 576"));
        let (_, out, _) = run_str(&["bench", "--hw", "arrays=2"]);
        assert!(out.contains("peak 506.88 GOPS, DSP-equiv 1152"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_str(&["frobnicate"]).0, 1);
        assert_eq!(run_str(&["bench", "--hw", "tn=3"]).0, 1);
        assert_eq!(run_str(&["--help"]).0, 0);
    }

    #[test]
    fn layer_specs() {
        let cfg = HwConfig::default();
        let c = parse_layer_spec("conv3x3:90x120x8:8:max", &cfg).ok().unwrap();
        assert_eq!(c.out_shape, Shape3::new(45, 60, 8));
        let d = parse_layer_spec("deconv2x:45x60x8:8", &cfg).ok().unwrap();
        assert_eq!(d.out_shape, Shape3::new(90, 120, 8));
        assert!(parse_layer_spec("conv3x3:9x9", &cfg).is_err());
        assert!(parse_layer_spec("conv3x3:9x9x1:1:max", &cfg).is_err());
        let r = simulate_layer(&d, &cfg, 1).unwrap();
        assert_eq!(r, layer_cycles(&d, &cfg));
    }
}
