use clap::{Args, Parser, Subcommand};
use gesturekit::container::Container;
use gesturekit::dataset::{mask_plan, split_dataset, DatasetManifest, Split};
use gesturekit::motion::{MotionClip, NUM_JOINTS};
use gesturekit::pipeline::{output_hashes, run_pipeline, PipelineError, RunConfig, Stage};
use gesturekit::vq::{evaluate, CompositeQuantizer, LearnConfig, SegmentCodebook, SegmentCodes, SegmentSpec};
use serde_json::json;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gesturekit", version, about = "Gesture motion-capture processing and evaluation")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse BVH motion into skeleton and motion containers.
    Parse(StageArgs),
    /// Fit the body model to marker observations.
    Fit(StageArgs),
    /// Apply the refinement rules.
    Refine {
        #[command(flatten)]
        stage: StageArgs,
        /// Comma-separated rules, e.g. head,fingers,ks3sigma.
        #[arg(long)]
        rules: Option<String>,
    },
    /// Map ARKit blendshape weights to expression parameters.
    Facemap(StageArgs),
    /// Learn, apply and evaluate segment codebooks.
    #[command(subcommand)]
    Quantize(QuantizeCmd),
    /// Extract audio rhythm and content features.
    Features(StageArgs),
    /// Compute the evaluation metrics and write the report.
    Metrics(StageArgs),
    /// Assign train/val/test splits per speaker.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.85, 0.075, 0.075])]
        ratios: Vec<f64>,
    },
    /// Masked frame and joint indices for one training epoch.
    Maskplan {
        #[arg(long)]
        epoch: u64,
        #[arg(long)]
        total_epochs: u64,
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = NUM_JOINTS)]
        joints: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write maskplan.json and a manifest into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full configured stage chain.
    Run(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum QuantizeCmd {
    /// Learn one codebook per segment from motion containers.
    Learn {
        #[arg(long, required = true, num_args = 1..)]
        motion: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "face,upper,hands,lower")]
        segments: Vec<String>,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Encode a motion container to per-segment code indices.
    Encode {
        #[arg(long, required = true, num_args = 1..)]
        codebook: Vec<PathBuf>,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode code indices onto a base motion container.
    Decode {
        #[arg(long, required = true, num_args = 1..)]
        codebook: Vec<PathBuf>,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-segment loss breakdown of a motion container.
    Losses {
        #[arg(long, required = true, num_args = 1..)]
        codebook: Vec<PathBuf>,
        #[arg(long)]
        motion: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

fn config_err(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn data_err(e: impl Display) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

type Res<T> = Result<T, Failure>;

fn load_config(args: &StageArgs) -> Res<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

/// Runs the configured stages up to and including `last`.
fn run_through(args: &StageArgs, last: Stage, rules: Option<&str>) -> Res<()> {
    let mut cfg = load_config(args)?;
    if let Some(r) = rules {
        cfg.set("refine.rules", r)?;
    }
    let mut stages: Vec<Stage> = cfg.stages()?.into_iter().filter(|s| *s < last).collect();
    stages.push(last);
    let names: Vec<&str> = stages.iter().map(|s| s.name()).collect();
    cfg.set("stages", &names.join(", "))?;
    run_pipeline(&cfg, &args.out)?;
    println!("{}", args.out.join(last.name()).display());
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, params: serde_json::Value) -> Res<()> {
    let outputs: Vec<_> = output_hashes(dir)
        .map_err(data_err)?
        .into_iter()
        .filter(|(p, _)| p != "manifest.json")
        .map(|(p, h)| json!({ "path": p, "sha256": h }))
        .collect();
    let doc = json!({ "format": "gesturekit-run", "version": 1, "command": command, "params": params, "outputs": outputs });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&doc).expect("json") + "\n").map_err(data_err)
}

fn create_dir(dir: &Path) -> Res<()> {
    std::fs::create_dir_all(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))
}

fn read_clip(path: &Path) -> Res<MotionClip> {
    let c = Container::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    MotionClip::from_container(&c).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn load_quantizer(paths: &[PathBuf]) -> Res<CompositeQuantizer> {
    let codebooks = paths
        .iter()
        .map(|p| SegmentCodebook::load(p).map_err(|e| data_err(format!("{}: {e}", p.display()))))
        .collect::<Res<Vec<_>>>()?;
    Ok(CompositeQuantizer { codebooks })
}

fn quantize(cmd: QuantizeCmd) -> Res<()> {
    match cmd {
        QuantizeCmd::Learn { motion, out, segments, size, latent_dim, seed, max_iters } => {
            let segs = segments.iter().map(|s| SegmentSpec::by_name(s).map_err(config_err)).collect::<Res<Vec<_>>>()?;
            let clips = motion.iter().map(|p| read_clip(p)).collect::<Res<Vec<_>>>()?;
            let cfg = LearnConfig { codebook_size: size, latent_dim, seed, max_iters, ..Default::default() };
            let q = CompositeQuantizer::learn(&clips, &segs, &cfg).map_err(data_err)?;
            create_dir(&out)?;
            for cb in &q.codebooks {
                cb.save(&out.join(format!("{}.codebook.json", cb.segment.name))).map_err(data_err)?;
            }
            write_manifest(&out, "quantize learn", json!({ "segments": segments, "size": size, "seed": seed, "max_iters": max_iters }))
        }
        QuantizeCmd::Encode { codebook, motion, out } => {
            let q = load_quantizer(&codebook)?;
            let codes = q.encode(&read_clip(&motion)?).map_err(data_err)?;
            create_dir(&out)?;
            std::fs::write(out.join("codes.json"), serde_json::to_string(&codes).expect("json") + "\n").map_err(data_err)?;
            write_manifest(&out, "quantize encode", json!({ "motion": motion }))
        }
        QuantizeCmd::Decode { codebook, codes, base, out } => {
            let q = load_quantizer(&codebook)?;
            let text = std::fs::read_to_string(&codes).map_err(|e| data_err(format!("{}: {e}", codes.display())))?;
            let codes: Vec<SegmentCodes> = serde_json::from_str(&text).map_err(data_err)?;
            let clip = q.decode(&codes, &read_clip(&base)?).map_err(data_err)?;
            create_dir(&out)?;
            clip.to_container().write(&out.join("recon.motion.json")).map_err(data_err)?;
            write_manifest(&out, "quantize decode", json!({ "base": base }))
        }
        QuantizeCmd::Losses { codebook, motion } => {
            let q = load_quantizer(&codebook)?;
            let clip = read_clip(&motion)?;
            let mut losses = serde_json::Map::new();
            for cb in &q.codebooks {
                let l = evaluate(cb, &cb.segment.extract_clip(&clip)).map_err(data_err)?;
                if !l.total().is_finite() {
                    return Err(Failure { code: 4, message: format!("{}: non-finite loss", cb.segment.name) });
                }
                losses.insert(cb.segment.name.clone(), serde_json::to_value(l).expect("json"));
            }
            println!("{}", serde_json::to_string_pretty(&losses).expect("json"));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Parse(a) => run_through(&a, Stage::Parse, None),
        Command::Fit(a) => run_through(&a, Stage::Fit, None),
        Command::Refine { stage, rules } => run_through(&stage, Stage::Refine, rules.as_deref()),
        Command::Facemap(a) => run_through(&a, Stage::FaceMap, None),
        Command::Features(a) => run_through(&a, Stage::Features, None),
        Command::Metrics(a) => run_through(&a, Stage::Metrics, None),
        Command::Quantize(q) => quantize(q),
        Command::Run(a) => {
            let report = run_pipeline(&load_config(&a)?, &a.out)?;
            let agg = serde_json::to_string(&report.aggregate).expect("json");
            println!("{agg}");
            Ok(())
        }
        Command::Split { manifest, out, seed, ratios } => {
            let m = DatasetManifest::read(&manifest).map_err(data_err)?;
            let ratios: [f64; 3] = ratios.try_into().map_err(|_| config_err("--ratios needs three numbers"))?;
            let (split, warnings) = split_dataset(&m, ratios, seed).map_err(config_err)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            create_dir(&out)?;
            std::fs::write(out.join("split.json"), split.to_json()).map_err(data_err)?;
            let counts = [Split::Train, Split::Val, Split::Test].map(|s| split.count(s));
            println!("train {} val {} test {}", counts[0], counts[1], counts[2]);
            write_manifest(&out, "split", json!({ "manifest": manifest, "seed": seed, "ratios": ratios, "warnings": warnings }))
        }
        Command::Maskplan { epoch, total_epochs, frames, joints, seed, out } => {
            if epoch > total_epochs {
                log::warn!("epoch {epoch} is past the schedule end {total_epochs}; ratio stays at the cap");
            }
            let text = serde_json::to_string_pretty(&mask_plan(epoch, total_epochs, frames, joints, seed)).expect("json") + "\n";
            print!("{text}");
            if let Some(out) = out {
                create_dir(&out)?;
                std::fs::write(out.join("maskplan.json"), &text).map_err(data_err)?;
                write_manifest(&out, "maskplan", json!({ "epoch": epoch, "total_epochs": total_epochs, "frames": frames, "joints": joints, "seed": seed }))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
