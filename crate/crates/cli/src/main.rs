use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scan_core::data::{self, export_heatmap, gen_dataset, load_dataset, load_split, save_dataset, DatasetSpec};
use scan_core::decoding::{lexicon_select, BeamConfig, Lexicon};
use scan_core::extractor::Preset;
use scan_core::model::{ScanConfig, ScanModel};
use scan_core::parallel::Execution;
use scan_core::training::{prepare, train_loop, TrainConfig};
use scan_core::vocab::ALPHANUMERIC;
use scan_core::windowing::WindowConfig;
use scan_core::ScanError;

#[derive(Parser)]
#[command(name = "scan", version, about = "Sliding-window convolutional text-line recognizer")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with a train/dev split.
    GenData(GenData),
    /// Train a model on a generated dataset.
    Train(Train),
    /// Read the text in one image.
    Recognize(Recognize),
    /// Sequence accuracy on a dataset split.
    Eval(Eval),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    min_len: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ALPHANUMERIC)]
    charset: String,
    /// Held-out samples; a tenth of --count by default.
    #[arg(long)]
    dev_count: Option<usize>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    preset: Preset,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Window widths, one glimpse channel each.
    #[arg(long, value_delimiter = ',', default_value = "32,40,48")]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// Output symbols; defaults to the characters found in the labels.
    #[arg(long)]
    charset: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    clip: f64,
    /// Share of the training set visited per epoch.
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Stop once dev accuracy reaches this value.
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Run batch samples one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct Recognize {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Write the last decoder layer's attention as a PGM.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "dev")]
    split: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
}

fn gen_data(a: GenData) -> Result<(), ScanError> {
    let mut spec = DatasetSpec::new(&a.charset.to_uppercase(), a.count, a.min_len, a.max_len, a.seed);
    spec.dev_count = a.dev_count;
    let ds = gen_dataset(&spec)?;
    save_dataset(&a.out, &ds)?;
    println!("{} train / {} dev samples in {}", ds.train.len(), ds.dev.len(), a.out.display());
    Ok(())
}

fn train(a: Train) -> Result<(), ScanError> {
    let ds = load_dataset(&a.data)?;
    let charset = match a.charset {
        Some(c) => c.to_uppercase(),
        None => {
            let chars: BTreeSet<char> = ds.train.iter().chain(&ds.dev).flat_map(|s| s.label.chars()).collect();
            chars.into_iter().collect()
        }
    };
    let windows = WindowConfig {
        scales: a.scales,
        stride: a.stride,
    };
    let config = ScanConfig::new(a.preset, &charset, windows);
    let mut model = ScanModel::<f32>::new(config, a.seed)?;
    let mut cfg = match a.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::default(),
    };
    cfg.lr = a.lr;
    cfg.clip_norm = a.clip;
    cfg.batch_size = a.batch;
    cfg.epochs = a.epochs;
    cfg.epoch_fraction = a.fraction;
    cfg.seed = a.seed;
    cfg.target_accuracy = a.target_accuracy;
    if let Some(p) = a.dropout {
        cfg.dropout_p = p;
    }
    if a.sequential {
        cfg.execution = Execution::Sequential;
    }
    let pairs = |s: &[data::Sample]| s.iter().map(|s| (s.image.clone(), s.label.clone())).collect::<Vec<_>>();
    let train_set = prepare(&model, &pairs(&ds.train), cfg.execution)?;
    let dev_set = prepare(&model, &pairs(&ds.dev), cfg.execution)?;
    eprintln!(
        "training on {} samples ({} dev), {} parameters, charset {charset}",
        train_set.len(),
        dev_set.len(),
        model.params().scalar_count()
    );
    let report = train_loop(&mut model, &train_set, &dev_set, &cfg, |s| {
        eprintln!(
            "epoch {:3}  loss {:.4}  dev {:.4}  {:.1}s",
            s.epoch, s.mean_loss, s.dev_accuracy, s.seconds
        );
    })?;
    data::save_checkpoint(&a.out, &model)?;
    println!(
        "best dev accuracy {:.4} at epoch {} ({:.1}s); saved {}",
        report.best_accuracy,
        report.best_epoch,
        report.wall_seconds,
        a.out.display()
    );
    Ok(())
}

fn beam(width: usize) -> Result<BeamConfig, ScanError> {
    if width == 0 {
        return Err(ScanError::InvalidArgument("--beam must be at least 1".into()));
    }
    Ok(BeamConfig {
        width,
        ..BeamConfig::default()
    })
}

fn recognize(a: Recognize) -> Result<(), ScanError> {
    let model = data::load_checkpoint::<f32>(&a.ckpt)?;
    let img = data::pgm::load_image(&a.image)?;
    let ws = model.windows(&img)?;
    let rec = model.recognize_windows(&ws, beam(a.beam)?)?;
    let text = match &a.lexicon {
        Some(path) => lexicon_select(&rec.hypotheses, &Lexicon::load(path)?)?,
        None => rec.text.clone(),
    };
    if let Some(path) = &a.heatmap {
        let src = model.encode(&ws)?;
        let (_, att) = model.teacher_forced(&src, rec.best.body())?;
        export_heatmap(&att, att.layers() - 1, ws.centers(), path)?;
    }
    println!("{text}");
    Ok(())
}

fn eval(a: Eval) -> Result<(), ScanError> {
    let model = data::load_checkpoint::<f32>(&a.ckpt)?;
    let samples = load_split(&a.data, &a.split)?;
    let lexicon = a.lexicon.as_deref().map(Lexicon::load).transpose()?;
    let cfg = beam(a.beam)?;
    let outcomes = Execution::Parallel.map(&samples, |_, s| -> Result<bool, ScanError> {
        let rec = model.recognize(&s.image, cfg)?;
        let text = match &lexicon {
            Some(lex) => lexicon_select(&rec.hypotheses, lex)?,
            None => rec.text,
        };
        Ok(text == s.label)
    });
    let mut correct = 0;
    for o in outcomes {
        correct += usize::from(o?);
    }
    let accuracy = correct as f64 / samples.len() as f64;
    println!("accuracy {accuracy:.4} ({correct}/{})", samples.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Recognize(a) => recognize(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
