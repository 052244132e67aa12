//! `wam` — command-line front door for the world-action-model runtime.
//!
//! Subcommands: `sim` (closed-loop episode), `bench` (cumulative latency
//! accounting), `fuse` (one-shot chunk fusion), `smooth` (smooth→interpolate
//! pipeline), `mask` (attention-mask build/inspect/export), `quant`
//! (FP8 weight blobs). Exit codes: 0 success, 1 runtime failure, 2 usage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wam_core::chunk::ActionChunk;
use wam_core::config::{SimConfig, SimMode};
use wam_core::fusion::{fuse_chunks, fusion_weights, steps_of_delay, FusionConfig};
use wam_core::masks::{
    build_mask, decoupled_mask, hbridge_schedule, AttentionMask, MaskKind, TokenLayout,
};
use wam_core::fp8::{eligible, quantize_tensor, QuantLinear};
use wam_core::sim::{
    metrics_from_trace, render_report, run_discrete_event, run_real_time, table3_report,
    Table3Preset,
};
use wam_core::smooth::{freq_interpolate, smooth_chunk, SavGolConfig};

#[derive(Parser)]
#[command(name = "wam", version, about = "World-action-model inference/execution runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation episode and write trace + metrics.
    Sim(SimArgs),
    /// Print the cumulative inference-optimization accounting table.
    Bench(BenchArgs),
    /// Fuse the remaining tail of an old chunk with a fresh chunk.
    Fuse(FuseArgs),
    /// Smooth a chunk and interpolate it to the control frequency.
    Smooth(SmoothArgs),
    /// Build, summarize, or export an attention mask.
    Mask(MaskArgs),
    /// Quantize or inspect FP8 weight blobs.
    Quant(QuantArgs),
    /// Convert between absolute poses and relative actions.
    Pose(PoseArgs),
}

#[derive(Args)]
struct SimArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's mode.
    #[arg(long, value_parser = ["discrete_event", "real_time"])]
    mode: Option<String>,
    /// Write the event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the metrics CSV here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Print the fully resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Preset TOML path, or "table3" for the bundled rows.
    #[arg(long, default_value = "table3")]
    presets: String,
}

#[derive(Args)]
struct FuseArgs {
    /// Old (active) chunk record file.
    #[arg(long)]
    old: PathBuf,
    /// Fresh chunk record file.
    #[arg(long, value_name = "FILE")]
    new: PathBuf,
    /// Actions already executed from the old chunk (s).
    #[arg(long)]
    executed: usize,
    /// Estimated inference delay in seconds.
    #[arg(long)]
    delay: f64,
    /// Soft-constraint window past the frozen prefix.
    #[arg(long, default_value_t = 8)]
    window: usize,
    /// Write the fused chunk here (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SmoothArgs {
    /// Input chunk record file.
    #[arg(long)]
    input: PathBuf,
    /// Output chunk record file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Low-level control frequency to interpolate to.
    #[arg(long)]
    control_hz: f64,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 2)]
    polyorder: usize,
}

#[derive(Args)]
struct MaskArgs {
    /// stage1 | stage2 | v2a | ar | decoupled
    #[arg(long)]
    kind: String,
    /// Layout TOML path, or "small" for the bundled example layout.
    #[arg(long, default_value = "small")]
    layout: String,
    /// Export the mask bitmap text here.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Print a block-structure summary.
    #[arg(long)]
    summary: bool,
    /// Also print the H-bridge layer schedule for this depth.
    #[arg(long)]
    hbridge_depth: Option<usize>,
}

#[derive(Args)]
struct QuantArgs {
    #[command(subcommand)]
    action: QuantAction,
}

#[derive(Subcommand)]
enum QuantAction {
    /// Quantize a whitespace-separated weight matrix into an FP8 blob.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the header and value statistics of an FP8 blob.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Sim(args) => cmd_sim(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Smooth(args) => cmd_smooth(args),
        Command::Mask(args) => cmd_mask(args),
        Command::Quant(args) => match args.action {
            QuantAction::Quantize { input, output } => cmd_quantize(&input, &output),
            QuantAction::Inspect { input } => cmd_inspect(&input),
        },
    }
}

fn write_or_print(path: Option<&PathBuf>, content: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_sim(args: SimArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(mode) = &args.mode {
        cfg.sim.mode = if mode == "real_time" {
            SimMode::RealTime
        } else {
            SimMode::DiscreteEvent
        };
    }
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    cfg.validate()?;
    let (trace, metrics) = match cfg.sim.mode {
        SimMode::DiscreteEvent => run_discrete_event(&cfg)?,
        SimMode::RealTime => {
            let outcome = run_real_time(&cfg)?;
            println!(
                "wall: {:.2} Hz achieved, max tick jitter {:.3} ms",
                outcome.wall_achieved_hz,
                outcome.max_tick_jitter * 1e3
            );
            (outcome.trace, outcome.metrics)
        }
    };
    if let Some(path) = &args.trace {
        std::fs::write(path, trace.to_text())?;
    }
    let csv = metrics.to_csv();
    match &args.metrics {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    // metrics are recomputable from the trace alone
    debug_assert_eq!(metrics_from_trace(&trace), metrics);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Box<dyn std::error::Error>> {
    let preset = if args.presets == "table3" {
        Table3Preset::builtin()
    } else {
        Table3Preset::from_toml(&std::fs::read_to_string(&args.presets)?)?
    };
    let rows = table3_report(&preset)?;
    print!("{}", render_report(&rows));
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<(), Box<dyn std::error::Error>> {
    let old = ActionChunk::from_record(&std::fs::read_to_string(&args.old)?)?;
    let fresh = ActionChunk::from_record(&std::fs::read_to_string(&args.new)?)?;
    if args.executed >= old.horizon() {
        return Err(format!(
            "executed {} leaves no remaining actions in a horizon-{} chunk",
            args.executed,
            old.horizon()
        )
        .into());
    }
    let remain = &old.actions[args.executed..];
    let d = steps_of_delay(args.delay, 1.0 / fresh.model_hz)?.min(fresh.horizon());
    let cfg = FusionConfig {
        overlap_window: args.window,
        control_period: 1.0 / fresh.model_hz,
    };
    let fusion_end = cfg.fusion_end(d, fresh.horizon());
    let mut weights = fusion_weights(d, fusion_end, fresh.horizon())?;
    for w in weights.iter_mut().skip(remain.len()) {
        *w = 0.0;
    }
    let fused = fuse_chunks(remain, &fresh, &weights)?;
    eprintln!(
        "s={} d={} L={} weights=[{}]",
        args.executed,
        d,
        fusion_end,
        weights
            .iter()
            .map(|w| format!("{w:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    write_or_print(args.out.as_ref(), &fused.to_record())?;
    Ok(())
}

fn cmd_smooth(args: SmoothArgs) -> Result<(), Box<dyn std::error::Error>> {
    let chunk = ActionChunk::from_record(&std::fs::read_to_string(&args.input)?)?;
    let cfg = SavGolConfig {
        window: args.window,
        polyorder: args.polyorder,
    };
    let (smoothed, applied) = smooth_chunk(&chunk, &cfg)?;
    if !applied {
        eprintln!("chunk too short for window {}; passed through unsmoothed", args.window);
    }
    let out = freq_interpolate(&smoothed, args.control_hz)?;
    write_or_print(args.output.as_ref(), &out.to_record())?;
    Ok(())
}

fn small_layout() -> TokenLayout {
    TokenLayout {
        n_text: 2,
        n_cond: 1,
        frames: 2,
        views: 1,
        tokens_per_frame_per_view: 2,
        actions_per_frame: 2,
        chunking: Some(vec![1, 2]),
    }
}

fn cmd_mask(args: MaskArgs) -> Result<(), Box<dyn std::error::Error>> {
    let layout = if args.layout == "small" {
        small_layout()
    } else {
        toml::from_str::<TokenLayout>(&std::fs::read_to_string(&args.layout)?)?
    };
    let (mask, kind_name): (AttentionMask, &str) = match args.kind.as_str() {
        "stage1" => (build_mask(MaskKind::Stage1, &layout)?, "stage1"),
        "stage2" => (build_mask(MaskKind::Stage2, &layout)?, "stage2"),
        "v2a" => (build_mask(MaskKind::NonArV2a, &layout)?, "v2a"),
        "ar" => (build_mask(MaskKind::Ar, &layout)?, "ar"),
        "decoupled" => (decoupled_mask(&layout)?, "decoupled"),
        other => return Err(format!("unknown mask kind {other:?}").into()),
    };
    if args.summary || args.export.is_none() {
        let video = layout.frames * layout.video_tokens_per_frame();
        let action = layout.frames * layout.actions_per_frame;
        println!(
            "kind={kind_name} tokens={} (text={} cond={} video={video} action={action}) density={:.4}",
            mask.len(),
            layout.n_text,
            layout.n_cond,
            mask.density()
        );
    }
    if let Some(depth) = args.hbridge_depth {
        let sched = hbridge_schedule(depth)?;
        let flags: String = sched
            .joint_flags
            .iter()
            .map(|&j| if j { 'J' } else { 'D' })
            .collect();
        println!("hbridge depth={depth} joint_layers={} schedule={flags}", sched.joint_count());
    }
    if let Some(path) = &args.export {
        std::fs::write(path, mask.to_text())?;
    }
    Ok(())
}

fn parse_weight_matrix(text: &str) -> Result<Vec<Vec<f64>>, Box<dyn std::error::Error>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err("weight file holds no rows".into());
    }
    Ok(rows)
}

fn cmd_quantize(input: &PathBuf, output: &PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    let weights = parse_weight_matrix(&std::fs::read_to_string(input)?)?;
    let q = quantize_tensor(&weights)?;
    if !eligible(q.in_dim, q.out_dim) {
        eprintln!(
            "note: {}x{} is not divisible by 16; a deployment would skip this layer",
            q.in_dim, q.out_dim
        );
    }
    std::fs::write(output, q.to_bytes())?;
    println!(
        "quantized {}x{} scale={:.6e} ({} bytes)",
        q.out_dim,
        q.in_dim,
        q.scale,
        q.to_bytes().len()
    );
    Ok(())
}

fn cmd_inspect(input: &PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    let q = QuantLinear::from_bytes(&std::fs::read(input)?)?;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut zeros = 0usize;
    for o in 0..q.out_dim {
        for i in 0..q.in_dim {
            let v = q.weight(o, i);
            min = min.min(v);
            max = max.max(v);
            if v == 0.0 {
                zeros += 1;
            }
        }
    }
    println!(
        "dims={}x{} scale={:.6e} eligible={} dequant_range=[{:.6e}, {:.6e}] zeros={}",
        q.out_dim,
        q.in_dim,
        q.scale,
        eligible(q.in_dim, q.out_dim),
        min,
        max,
        zeros
    );
    Ok(())
}
