use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cnnfwd::autotune::{self, load_profile, save_profile, SystemClock, PROFILE_FILE_NAME};
use cnnfwd::bench;
use cnnfwd::engine::{build_network_with, BuildOptions, Network};
use cnnfwd::netfile::{AutoTuning, ExecutionMode};
use cnnfwd::tensor_io::{read_tensor, write_tensor};
use cnnfwd::{mse, parse_netfile, zoo, Error, NetConfig, Shape4};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "cnnfwd", version, about = "Run, verify, benchmark and tune CNN inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Parallel,
}

impl From<Mode> for ExecutionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sequential => ExecutionMode::Sequential,
            Mode::Parallel => ExecutionMode::Parallel,
        }
    }
}

#[derive(Args)]
struct NetArgs {
    /// NetFile describing the network.
    netfile: PathBuf,
    /// Directory holding the layer parameter files.
    model_dir: PathBuf,
    /// Worker threads for parallel mode (default: all hardware threads).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch through the network and write the output tensor.
    Run {
        #[command(flatten)]
        net: NetArgs,
        input: PathBuf,
        output: PathBuf,
        /// Override the NetFile's execution_mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Count parameter loading in the reported times.
        #[arg(long)]
        include_io: bool,
    },
    /// Compare the network's output against a reference tensor by MSE.
    Verify {
        #[command(flatten)]
        net: NetArgs,
        input: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        threshold: f64,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Per-image runtime of sequential vs. the chosen mode on random input.
    Benchmark {
        #[command(flatten)]
        net: NetArgs,
        /// Single-image input shape as C,H,W.
        #[arg(long, value_parser = parse_chw)]
        input_shape: Shape4,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, value_enum, default_value = "parallel")]
        mode: Mode,
        #[arg(long)]
        include_io: bool,
    },
    /// Time every tuning candidate and save the fastest profile.
    Tune {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, value_parser = parse_chw)]
        input_shape: Shape4,
        /// Re-tune even if a profile exists or auto_tuning is off.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Write a bundled NetFile with seeded random parameters.
    Example {
        #[arg(value_parser = ["lenet", "cifar10", "alexnet", "alexnet-conv1"])]
        model: String,
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_chw(s: &str) -> Result<Shape4, String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad dimension `{p}`")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape4::new(1, c, h, w)),
        _ => Err(format!("expected C,H,W with positive entries, got `{s}`")),
    }
}

fn load_config(path: &Path) -> Result<NetConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(parse_netfile(&text)?)
}

fn open(net: &NetArgs, input: Shape4) -> Result<(NetConfig, Network), Error> {
    let cfg = load_config(&net.netfile)?;
    let network = build_network_with(
        &cfg,
        &net.model_dir,
        input,
        BuildOptions {
            threads: net.threads,
            profile: None,
        },
    )?;
    Ok((cfg, network))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn run_tuner(network: &mut Network, model_dir: &Path, batch: usize, reps: usize) -> Result<(), Error> {
    let sample = zoo::random_tensor(network.input_shape().with_batch(batch), 0);
    let report = autotune::tune(network, &sample, reps, &SystemClock::new())?;
    save_profile(&report.chosen, &report.host, &model_dir.join(PROFILE_FILE_NAME))?;
    for line in report.to_lines() {
        println!("{line}");
    }
    network.set_profile(report.chosen);
    Ok(())
}

fn cmd_run(net: NetArgs, input: PathBuf, output: PathBuf, mode: Option<Mode>, include_io: bool) -> Result<u8, Error> {
    let batch = read_tensor(&input)?;
    let (cfg, mut network) = open(&net, batch.shape().with_batch(1))?;
    if cfg.auto_tuning == AutoTuning::On && !network.profile_tuned() {
        eprintln!("autotune=first_run");
        run_tuner(&mut network, &net.model_dir, 1, 3)?;
    }
    let mode = network.mode(mode.map(Into::into).unwrap_or(cfg.execution_mode));
    let (out, timings) = network.compute_timed(&batch, mode)?;
    let mut total = Duration::ZERO;
    for t in &timings {
        let spent = if include_io { t.compute + t.fetch } else { t.compute };
        total += spent;
        eprintln!(
            "layer={} kind={} time_ms={:.3} fetch_ms={:.3}",
            t.name,
            t.kind,
            ms(spent),
            ms(t.fetch)
        );
    }
    eprintln!("total_ms={:.3}", ms(total));
    eprintln!("output_shape={}", out.shape());
    write_tensor(&output, &out)?;
    Ok(0)
}

fn cmd_verify(net: NetArgs, input: PathBuf, reference: PathBuf, threshold: f64, mode: Option<Mode>) -> Result<u8, Error> {
    let batch = read_tensor(&input)?;
    let reference = read_tensor(&reference)?;
    let (cfg, network) = open(&net, batch.shape().with_batch(1))?;
    let mode = network.mode(mode.map(Into::into).unwrap_or(cfg.execution_mode));
    let out = network.compute_with(&batch, mode)?;
    let err = mse(&out, &reference)?;
    println!("mse={err:e}");
    println!("threshold={threshold:e}");
    if err <= threshold {
        println!("result=pass");
        Ok(0)
    } else {
        println!("result=fail");
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn cmd_benchmark(net: NetArgs, input: Shape4, batch: usize, reps: usize, mode: Mode, include_io: bool) -> Result<u8, Error> {
    let (_, network) = open(&net, input)?;
    let report = bench::benchmark(&network, batch, reps, mode.into(), include_io)?;
    println!("profile={}", network.profile());
    for line in report.to_lines() {
        println!("{line}");
    }
    Ok(0)
}

fn cmd_tune(net: NetArgs, input: Shape4, force: bool, reps: usize, batch: usize) -> Result<u8, Error> {
    let cfg = load_config(&net.netfile)?;
    if cfg.auto_tuning == AutoTuning::Off && !force {
        eprintln!("auto_tuning is off in the NetFile; pass --force to tune anyway");
        return Ok(EXIT_ERROR);
    }
    let profile_path = net.model_dir.join(PROFILE_FILE_NAME);
    let existing = load_profile(&profile_path)?;
    if existing.tuned && !force {
        println!("status=already_tuned");
        println!("profile={}", existing.profile);
        return Ok(0);
    }
    let (_, mut network) = open(&net, input)?;
    run_tuner(&mut network, &net.model_dir, batch, reps)?;
    println!("status=tuned");
    println!("profile_file={}", profile_path.display());
    Ok(0)
}

fn cmd_example(model: String, dir: PathBuf, seed: u64) -> Result<u8, Error> {
    let template = zoo::by_name(&model).expect("validated by clap");
    template.write_to(&dir, seed)?;
    let s = template.input;
    println!("netfile={}", dir.join("net.netfile").display());
    println!("input_shape={},{},{}", s.c, s.h, s.w);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            net,
            input,
            output,
            mode,
            include_io,
        } => cmd_run(net, input, output, mode, include_io),
        Command::Verify {
            net,
            input,
            reference,
            threshold,
            mode,
        } => cmd_verify(net, input, reference, threshold, mode),
        Command::Benchmark {
            net,
            input_shape,
            batch,
            reps,
            mode,
            include_io,
        } => cmd_benchmark(net, input_shape, batch, reps, mode, include_io),
        Command::Tune {
            net,
            input_shape,
            force,
            reps,
            batch,
        } => cmd_tune(net, input_shape, force, reps, batch),
        Command::Example { model, dir, seed } => cmd_example(model, dir, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
