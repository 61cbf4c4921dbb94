//! `orf`: generate synthetic inputs, compress them, check the chunk DP
//! against exhaustive search, and inspect the results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orf_core::container::{load_container, save_container, Container};
use orf_core::correspondence::{build_field, FieldMatrix};
use orf_core::cpcr::{refine_chunks_bruteforce, refine_chunks_dp, ChunkingExport};
use orf_core::export::{export_retention_map, MapFormat};
use orf_core::metrics::CostModel;
use orf_core::scenario::{generate_scenario, ScenarioSpec};
use orf_core::sweep::{init_global_pool, sweep, ParamGrid};
use orf_core::{
    run_pipeline_with, CompressionReport, Error, ErrorKind, HyperParams, PipelineOptions,
    PipelineRun,
};

#[derive(Parser)]
#[command(
    name = "orf",
    version,
    about = "Audio-visual token compression over embedding streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario as an ORTC container.
    Gen(GenArgs),
    /// Compress an ORTC container; writes a JSON report and optionally the
    /// compressed streams.
    Compress(CompressArgs),
    /// Compare the chunk DP against exhaustive search on small scenarios.
    OracleCheck(OracleArgs),
    /// Summarize a report written by `compress`.
    Report(ReportArgs),
    /// Export the retention map of a run as CSV or SVG.
    Viz(VizArgs),
    /// Run a parameter grid over one input.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output container path.
    #[arg(short, long)]
    out: PathBuf,
    /// JSON scenario spec; the flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    grid_h: Option<usize>,
    #[arg(long)]
    grid_w: Option<usize>,
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    jitter: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hyperparameters (JSON) to embed in the container.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Input ORTC container.
    input: PathBuf,
    /// Hyperparameters (JSON); defaults to those embedded in the input, then
    /// to the reference configuration.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Restrict the chunk DP to its diagonal band (default).
    #[arg(long, conflicts_with = "exact")]
    banded: bool,
    /// Search the full chunk DP table.
    #[arg(long)]
    exact: bool,
    /// Per-token audio importance scores (JSON array); l2 norms otherwise.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Cost model (JSON) for the FLOPs proxy.
    #[arg(long)]
    cost_model: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Report path.
    #[arg(short, long, default_value = "report.json")]
    report: PathBuf,
    /// Compressed ORTC output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-chunk compression traces (JSON).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Refined chunking with block scores (JSON).
    #[arg(long)]
    chunks: Option<PathBuf>,
    /// Masked correspondence field (CSV).
    #[arg(long)]
    field_csv: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Number of scenarios, with consecutive seeds.
    #[arg(long, default_value_t = 20)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 24)]
    tokens: usize,
    /// Chunk bounds and penalty (JSON); defaults suit the small sizes.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    /// Print the report JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VizArgs {
    #[command(flatten)]
    run: RunArgs,
    /// csv or svg.
    #[arg(short, long, default_value = "csv")]
    format: String,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Grid JSON: `{"param": [values...]}`.
    #[arg(long)]
    grid: PathBuf,
    /// Tune rho_v per point to this overall retained ratio first.
    #[arg(long)]
    constant_budget: Option<f64>,
    /// Write the rows as JSON; a table is printed either way.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_input(args: &RunArgs) -> Result<(Container, HyperParams, PipelineOptions), Error> {
    let c = load_container(&args.input)?;
    let params = match &args.params {
        Some(p) => HyperParams::from_json(&read_text(p)?)?,
        None => c.params.clone().unwrap_or_default(),
    };
    let cost_model = match &args.cost_model {
        Some(p) => serde_json::from_str::<CostModel>(&read_text(p)?)?,
        None => CostModel::default(),
    };
    let audio_scores = match &args.scores {
        Some(p) => Some(serde_json::from_str::<Vec<f64>>(&read_text(p)?)?),
        None => None,
    };
    let options = PipelineOptions {
        banded: !args.exact,
        cost_model,
        audio_scores,
    };
    Ok((c, params, options))
}

fn run(args: &RunArgs) -> Result<(PipelineRun, HyperParams), Error> {
    let (c, params, options) = load_input(args)?;
    let run = run_pipeline_with(&c.video, &c.audio, &params, &options)?;
    Ok((run, params))
}

fn gen(a: &GenArgs) -> Result<(), Error> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => ScenarioSpec::default(),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.num_frames, a.frames);
    set(&mut spec.grid_h, a.grid_h);
    set(&mut spec.grid_w, a.grid_w);
    set(&mut spec.num_audio_tokens, a.tokens);
    set(&mut spec.dim, a.dim);
    set(&mut spec.num_events, a.events);
    set(&mut spec.boundary_jitter, a.jitter);
    if let Some(n) = a.noise {
        spec.noise_sigma = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let params = match &a.params {
        Some(p) => Some(HyperParams::from_json(&read_text(p)?)?),
        None => None,
    };
    let s = generate_scenario(&spec)?;
    save_container(
        &a.out,
        &s.video,
        &s.audio,
        params.as_ref(),
        Some(&s.ground_truth),
    )?;
    println!(
        "wrote {}: {} frames of {}x{}, {} audio tokens, dim {}, {} buckets",
        a.out.display(),
        s.video.num_frames(),
        s.video.grid_h(),
        s.video.grid_w(),
        s.audio.num_tokens(),
        s.video.dim(),
        s.video.num_buckets()
    );
    println!(
        "event boundaries: video {:?}, audio {:?}",
        s.ground_truth.video, s.ground_truth.audio
    );
    Ok(())
}

fn compress(a: &CompressArgs) -> Result<(), Error> {
    let (run, params) = run(&a.run)?;
    run.report.write(&a.report)?;
    if let Some(out) = &a.output {
        fs::write(out, run.encode_compressed(&params)?)?;
    }
    if let Some(path) = &a.trace {
        fs::write(path, serde_json::to_vec_pretty(&run.traces())?)?;
    }
    if let Some(path) = &a.chunks {
        ChunkingExport::new(&run.chunking, &run.field, params.lambda_c, run.band).write(path)?;
    }
    if let Some(path) = &a.field_csv {
        run.field.write_csv(FieldMatrix::Masked, path)?;
    }
    print_summary(&run.report);
    Ok(())
}

/// Small-instance defaults: unit-ish frame chunks and short audio chunks.
fn oracle_params() -> HyperParams {
    HyperParams {
        sv_min: 1,
        sv_max: 3,
        sa_min: 2,
        sa_max: 8,
        ..Default::default()
    }
}

fn oracle_check(a: &OracleArgs) -> Result<bool, Error> {
    let params = match &a.params {
        Some(p) => HyperParams::from_json(&read_text(p)?)?,
        None => oracle_params(),
    };
    let mut mismatches = 0;
    for seed in a.seed..a.seed + a.count {
        let spec = ScenarioSpec {
            num_frames: a.frames,
            num_audio_tokens: a.tokens,
            grid_h: 2,
            grid_w: 2,
            dim: 8,
            num_events: 2,
            boundary_jitter: 1,
            seed,
            frame_bucket_range: (1, a.frames),
            audio_bucket_range: (1, a.tokens),
            num_buckets: Some(a.frames.min(a.tokens).min(4)),
            ..Default::default()
        };
        let s = generate_scenario(&spec)?;
        let field = build_field(&s.video, &s.audio, &params)?;
        let dp = refine_chunks_dp(&field, &params, false);
        let brute = refine_chunks_bruteforce(&field, &params);
        if let Err(e @ Error::SizeGuard { .. }) = brute {
            return Err(e);
        }
        let same = match (&dp, &brute) {
            (Ok(x), Ok(y)) => x.score == y.score && x.chunks == y.chunks,
            (Err(x), Err(y)) => x.to_string() == y.to_string(),
            _ => false,
        };
        let show = |r: &Result<orf_core::cpcr::RefinedChunking, Error>| match r {
            Ok(c) => format!("{:.6} with {} chunks", c.score, c.chunks.len()),
            Err(e) => format!("error: {e}"),
        };
        println!(
            "seed {seed}: dp {} | exhaustive {} | {}",
            show(&dp),
            show(&brute),
            if same { "match" } else { "MISMATCH" }
        );
        if !same {
            mismatches += 1;
        }
    }
    println!("{} of {} instances match", a.count - mismatches, a.count);
    Ok(mismatches == 0)
}

fn print_summary(r: &CompressionReport) {
    println!(
        "{:>5} {:>9} {:>11} {:>8} {:>7} {:>7} {:>7} {:>13} {:>13}",
        "chunk", "frames", "tokens", "phi", "r_v", "m_a", "r_a", "video", "audio"
    );
    for c in &r.per_chunk {
        println!(
            "{:>5} {:>9} {:>11} {:>8.4} {:>7.4} {:>7.4} {:>7.4} {:>13} {:>13}",
            c.chunk_id,
            format!("{}-{}", c.chunk.f_lo, c.chunk.f_hi),
            format!("{}-{}", c.chunk.t_lo, c.chunk.t_hi),
            c.phi,
            c.r_v,
            c.m_a,
            c.r_a,
            format!("{}/{}", c.video_tokens_after, c.video_tokens_before),
            format!("{}/{}", c.audio_tokens_after, c.audio_tokens_before),
        );
    }
    println!(
        "tokens {}/{} retained ({:.4}), flops proxy {:.4}, chunking score {:.4}, {}",
        r.tokens_after,
        r.tokens_before,
        r.overall_retained_ratio,
        r.flops_proxy_ratio,
        r.chunking_score,
        if r.banded { "banded" } else { "exact" }
    );
    println!("config {}", r.config_digest);
    for n in &r.notes {
        println!("note: {n}");
    }
}

fn report(a: &ReportArgs) -> Result<(), Error> {
    let r = CompressionReport::from_json(&read_text(&a.report)?)?;
    if a.json {
        println!("{}", r.to_json()?);
    } else {
        print_summary(&r);
    }
    Ok(())
}

fn viz(a: &VizArgs) -> Result<(), Error> {
    let format: MapFormat = a.format.parse()?;
    let (run, _) = run(&a.run)?;
    export_retention_map(&run, &a.out, format)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<(), Error> {
    let grid = ParamGrid::from_json(&read_text(&a.grid)?)?;
    let (c, params, options) = load_input(&a.run)?;
    let rows = sweep(
        &c.video,
        &c.audio,
        &params,
        &grid,
        a.constant_budget,
        &options,
    )?;
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_vec_pretty(&rows)?)?;
    }
    println!(
        "{:<40} {:>7} {:>7} {:>9} {:>9} {:>8} {:>8}",
        "point", "rho_v", "chunks", "retained", "flops", "mean r_v", "mean m_a"
    );
    for r in &rows {
        println!(
            "{:<40} {:>7.4} {:>7} {:>9.4} {:>9.4} {:>8.4} {:>8.4}",
            serde_json::to_string(&r.point)?,
            r.rho_v,
            r.num_chunks,
            r.overall_retained_ratio,
            r.flops_proxy_ratio,
            r.mean_r_v,
            r.mean_m_a
        );
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Io | ErrorKind::Format => 3,
        ErrorKind::Internal => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_global_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Compress(a) => compress(a),
        Command::OracleCheck(a) => match oracle_check(a) {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::Internal(
                "chunk DP disagrees with exhaustive search".into(),
            )),
            Err(e) => Err(e),
        },
        Command::Report(a) => report(a),
        Command::Viz(a) => viz(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
