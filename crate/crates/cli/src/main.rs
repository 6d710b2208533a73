//! `regen-snn` command-line front end.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort
//! (non-finite value during training), 5 I/O or checkpoint error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regen_snn::checkpoint;
use regen_snn::config::{self, RunConfig};
use regen_snn::data::{write_grayscale_image, write_pgm, Dataset};
use regen_snn::metrics::MetricRow;
use regen_snn::trainer::{has_first_conv, probe_sparsity, Trainer};
use regen_snn::Error;

#[derive(Parser)]
#[command(
    name = "regen-snn",
    version,
    about = "Layer-wise regenerative training of spiking conv networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every conv layer; writes checkpoint.bin and stack_metrics.csv.
    TrainStack {
        #[command(flatten)]
        common: Common,
        /// Number of unlabeled training images; overrides `train.stack_images`.
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Train the readout of a checkpoint; writes checkpoint.bin and readout_metrics.csv.
    TrainReadout {
        #[command(flatten)]
        common: Common,
        /// Labeled subset size; overrides `train.labeled`.
        #[arg(long)]
        subset: Option<usize>,
        /// Checkpoint to start from; defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify the test split; writes eval_metrics.csv and confusion.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Presentations summed per decision; overrides `eval.passes`.
        #[arg(long)]
        passes: Option<usize>,
        /// Passes over the test split; overrides `eval.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
        /// Number of test images; overrides `eval.test_images`.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Dump original / input-spike / reconstruction graymaps for one image.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        index: usize,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print topology, weight statistics and probe sparsity of a checkpoint.
    Inspect {
        checkpoint: PathBuf,
        /// Config whose test split provides the probe images.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write a first-layer kernel grid graymap here.
        #[arg(long)]
        kernels: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidParam(_) | Error::InvalidRate(_) | Error::Topology { .. } => 2,
            Error::Format { .. } | Error::EmptyDataset(_) | Error::Shape(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Io { .. } | Error::CorruptCheckpoint(_) | Error::CheckpointVersion { .. } => 5,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn data_error(e: Error) -> Failure {
    match e {
        Error::Io { .. } => Failure {
            code: 3,
            msg: e.to_string(),
        },
        other => other.into(),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let loaded = config::load(&common.config).map_err(|e| match e {
        Error::Io { .. } => Failure {
            code: 2,
            msg: e.to_string(),
        },
        other => other.into(),
    })?;
    for n in &loaded.notices {
        eprintln!("notice: {n}");
    }
    let mut cfg = loaded.config;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: 5,
        msg: format!("cannot create {}: {e}", dir.display()),
    })
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure {
        code: 5,
        msg: format!("cannot write {}: {e}", path.display()),
    })
}

fn print_row(row: &MetricRow) {
    match row {
        MetricRow::Reconstruction {
            layer,
            pass,
            images,
            potential_loss,
            count_error,
        } => {
            println!("layer {layer} pass {pass}: {images} images, potential loss {potential_loss:.6e}, count error {count_error:.6e}")
        }
        MetricRow::Readout { pass, images, loss } => println!("readout epoch {pass}: {images} images, loss {loss:.6e}"),
        MetricRow::Accuracy {
            iteration,
            images,
            accuracy,
        } => {
            println!("iteration {iteration}: accuracy {accuracy:.4} on {images} images")
        }
        MetricRow::Sparsity {
            layer,
            active_fraction,
            mean_rate_hz,
        } => {
            println!("layer {layer} sparsity: active fraction {active_fraction:.4}, mean rate {mean_rate_hz:.3} Hz")
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<checkpoint::Checkpoint, Failure> {
    checkpoint::load(path).map_err(Failure::from)
}

fn train_stack(common: Common, subset: Option<usize>) -> Outcome {
    let mut cfg = load_config(&common)?;
    if let Some(n) = subset {
        if n == 0 {
            return Err(Error::Config("--subset must be >= 1".into()).into());
        }
        cfg.train.stack_images = Some(n);
    }
    let train = cfg.load_train().map_err(data_error)?;
    ensure_dir(&cfg.output.dir)?;
    let mut trainer = Trainer::new(cfg.train.clone())?;
    trainer.set_abort_checkpoint(cfg.output.dir.join("abort.bin"));
    trainer.set_observer(print_row);
    let data = trainer.stack_subset(&train)?;
    trainer.train_conv_stack(&data)?;
    checkpoint::save(&trainer.checkpoint(), cfg.checkpoint_path())?;
    write_file(&cfg.output.dir.join("stack_metrics.csv"), &trainer.log().to_csv(true))?;
    println!("wrote {}", cfg.checkpoint_path().display());
    Ok(())
}

/// Resume from `path` (or the run's checkpoint) with the run's readout
/// settings and seed.
fn resume(cfg: &RunConfig, path: Option<PathBuf>) -> Result<Trainer, Failure> {
    let path = path.unwrap_or_else(|| cfg.checkpoint_path());
    let ck = load_checkpoint(&path)?;
    let mut trainer = Trainer::from_checkpoint(ck)?;
    let t = trainer.config_mut();
    t.seed = cfg.train.seed;
    t.readout = cfg.train.readout;
    t.labeled = cfg.train.labeled;
    Ok(trainer)
}

fn train_readout(common: Common, subset: Option<usize>, ck: Option<PathBuf>) -> Outcome {
    let mut cfg = load_config(&common)?;
    if let Some(n) = subset {
        if n == 0 {
            return Err(Error::Config("--subset must be >= 1".into()).into());
        }
        cfg.train.labeled = n;
    }
    let mut trainer = resume(&cfg, ck)?;
    if trainer.progress().layers_trained < trainer.topology().conv_layers().len() {
        return Err(Error::InvalidParam("the conv stack of this checkpoint is not fully trained".into()).into());
    }
    let train = cfg.load_train().map_err(data_error)?;
    ensure_dir(&cfg.output.dir)?;
    trainer.set_abort_checkpoint(cfg.output.dir.join("abort.bin"));
    trainer.set_observer(print_row);
    trainer.train_readout(&train)?;
    checkpoint::save(&trainer.checkpoint(), cfg.checkpoint_path())?;
    write_file(&cfg.output.dir.join("readout_metrics.csv"), &trainer.log().to_csv(true))?;
    println!("wrote {}", cfg.checkpoint_path().display());
    Ok(())
}

fn eval(
    common: Common,
    passes: Option<usize>,
    iterations: Option<usize>,
    subset: Option<usize>,
    ck: Option<PathBuf>,
) -> Outcome {
    let mut cfg = load_config(&common)?;
    let passes = passes.unwrap_or(cfg.eval.passes);
    let iterations = iterations.unwrap_or(cfg.eval.iterations);
    if let Some(n) = subset {
        if n == 0 {
            return Err(Error::Config("--subset must be >= 1".into()).into());
        }
        cfg.eval.test_images = Some(n);
    }
    let mut trainer = resume(&cfg, ck)?;
    let test = cfg.load_test().map_err(data_error)?;
    ensure_dir(&cfg.output.dir)?;
    trainer.set_observer(print_row);
    let ev = trainer.evaluate(&test, passes, iterations)?;
    println!(
        "mean accuracy {:.4} (sd {:.4}) over {iterations} iteration(s), {passes} pass(es) per decision, {} images",
        ev.mean(),
        ev.std_dev(),
        test.len()
    );
    let k = ev.classes;
    let mut confusion = String::from("true\\predicted");
    for c in 0..k {
        confusion.push_str(&format!(",{c}"));
    }
    confusion.push('\n');
    for t in 0..k {
        confusion.push_str(&t.to_string());
        for p in 0..k {
            confusion.push_str(&format!(",{}", ev.confusion[t * k + p]));
        }
        confusion.push('\n');
    }
    println!("confusion (rows true, columns predicted, summed over iterations):");
    print!("{confusion}");
    write_file(&cfg.output.dir.join("eval_metrics.csv"), &trainer.log().to_csv(true))?;
    write_file(&cfg.output.dir.join("confusion.csv"), &confusion)?;
    Ok(())
}

fn reconstruct(common: Common, index: usize, split: Split, ck: Option<PathBuf>) -> Outcome {
    let cfg = load_config(&common)?;
    let trainer = resume(&cfg, ck)?;
    if !has_first_conv(trainer.topology()) {
        return Err(Error::InvalidParam("topology has no conv layer after the input".into()).into());
    }
    if trainer.progress().layers_trained == 0 {
        return Err(Error::InvalidParam("the first conv layer is untrained".into()).into());
    }
    let data = match split {
        Split::Train => cfg.load_train(),
        Split::Test => cfg.load_test(),
    }
    .map_err(data_error)?;
    if index >= data.len() {
        return Err(Error::InvalidParam(format!("index {index} out of range for {} images", data.len())).into());
    }
    let one = data.slice(index, index + 1);
    let (report, traces) = trainer.reconstruct_probe(0, &one)?;
    let image = &one.images()[0];
    let s = image.shape();
    let plane = s.rows * s.cols;
    ensure_dir(&cfg.output.dir)?;
    let mut written = Vec::new();
    for c in 0..s.maps {
        let suffix = if s.maps == 1 { String::new() } else { format!("_c{c}") };
        let stem = cfg.output.dir.join(format!("recon_{index}{suffix}"));
        let orig = PathBuf::from(format!("{}_original.pgm", stem.display()));
        let input = PathBuf::from(format!("{}_input.pgm", stem.display()));
        let recon = PathBuf::from(format!("{}_reconstructed.pgm", stem.display()));
        write_pgm(image.channel(c), s.rows, s.cols, &orig)?;
        write_grayscale_image(
            &traces[0].input_counts[c * plane..(c + 1) * plane],
            s.rows,
            s.cols,
            &input,
        )?;
        write_grayscale_image(
            &traces[0].recon_counts[c * plane..(c + 1) * plane],
            s.rows,
            s.cols,
            &recon,
        )?;
        written.extend([orig, input, recon]);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    println!("spike-count reconstruction error {:.1}", report.aggregate);
    Ok(())
}

fn inspect(path: PathBuf, config: Option<PathBuf>, kernels: Option<PathBuf>) -> Outcome {
    let ck = load_checkpoint(&path)?;
    let topo = &ck.topology;
    println!("topology {}", topo.spec());
    println!(
        "progress: {} of {} conv layers trained, readout {}",
        ck.progress.layers_trained,
        topo.conv_layers().len(),
        if ck.progress.readout_trained {
            "trained"
        } else {
            "untrained"
        }
    );
    for (i, d) in topo.layers().iter().enumerate() {
        println!("  layer {i}: {:?} -> {:?}", d.kind, d.geometry);
    }
    let stats = |w: &[f64]| {
        let n = w.len().max(1) as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("n {} mean {mean:.4} sd {sd:.4} min {min:.4} max {max:.4}", w.len())
    };
    for (c, k) in topo.kernels().iter().enumerate() {
        let [o, i, kh, kw] = k.dims();
        println!("conv {} ({o}x{i}x{kh}x{kw}): {}", c + 1, stats(k.as_slice()));
    }
    println!(
        "readout ({}x{}): {}",
        topo.readout().outputs,
        topo.readout().inputs,
        stats(&topo.readout().weights)
    );
    if let Some(cpath) = config {
        let loaded = config::load(&cpath)?;
        let test = loaded.config.load_test().map_err(data_error)?;
        let probe: Dataset = test.head(1);
        let sp = probe_sparsity(topo, &ck.config, &probe)?;
        for (c, s) in sp.iter().enumerate() {
            println!(
                "probe image 0, conv {}: active fraction {:.4}, mean rate {:.3} Hz",
                c + 1,
                s.active_fraction,
                s.mean_rate_hz
            );
        }
    }
    if let Some(out) = kernels {
        let Some(first) = topo.kernels().first() else {
            return Err(Error::InvalidParam("topology has no conv layers".into()).into());
        };
        let [o, i, kh, kw] = first.dims();
        let (rows, cols) = (i * (kh + 1) + 1, o * (kw + 1) + 1);
        let w = first.as_slice();
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut px = vec![0u8; rows * cols];
        for k in 0..o {
            for l in 0..i {
                for a in 0..kh {
                    for b in 0..kw {
                        let v = (first.weight(k, l, a, b) - lo) / span;
                        px[(l * (kh + 1) + 1 + a) * cols + k * (kw + 1) + 1 + b] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
        write_pgm(&px, rows, cols, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.cmd {
        Command::TrainStack { common, subset } => train_stack(common, subset),
        Command::TrainReadout {
            common,
            subset,
            checkpoint,
        } => train_readout(common, subset, checkpoint),
        Command::Eval {
            common,
            passes,
            iterations,
            subset,
            checkpoint,
        } => eval(common, passes, iterations, subset, checkpoint),
        Command::Reconstruct {
            common,
            index,
            split,
            checkpoint,
        } => reconstruct(common, index, split, checkpoint),
        Command::Inspect {
            checkpoint,
            config,
            kernels,
        } => inspect(checkpoint, config, kernels),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
