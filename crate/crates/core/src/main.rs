use std::error::Error;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use holomem::datapage::{PageGeometry, ShiftSpan};
use holomem::nn::io::{read_model, read_optstate, write_model, write_optstate, MODEL_MAGIC, OPTSTATE_MAGIC};
use holomem::pipeline::{
    evaluate_fer, generate_dataset, read_dataset, run_benchmark, run_training, write_dataset,
    Dataset, Decoder, ExperimentConfig, ModelKind, DATASET_MAGIC,
};
use holomem::Network;

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "holomem", version, about = "Holographic data-storage read-channel simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test fragment datasets.
    Gen(GenArgs),
    /// Train a CNN or MLP on a dataset.
    Train(TrainArgs),
    /// Measure the fragment error rate of a model or the template decoder.
    Eval(EvalArgs),
    /// Sweep propagation distances: generate, train and evaluate all decoders.
    Bench(BenchArgs),
    /// Print the header of a dataset, model or optimizer-state file.
    Inspect { path: PathBuf },
}

/// Experiment settings shared by `gen` and `bench`; flags override `--config`.
#[derive(Args)]
struct ExperimentArgs {
    /// TOML file with ExperimentConfig keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `desk` (20x20 fragments), `paper` (50x50) or a fragments-per-side count.
    #[arg(long)]
    geometry: Option<String>,
    /// Gaussian noise standard deviation on the 0-255 sensor scale.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Largest detector misalignment in pixels.
    #[arg(long)]
    max_shift: Option<u32>,
    /// `half-open` ({-s..s-1}) or `closed` ({-s..s}).
    #[arg(long)]
    shift_span: Option<String>,
    /// Number of training pages.
    #[arg(long)]
    train_pages: Option<usize>,
    /// Number of test pages.
    #[arg(long)]
    test_pages: Option<usize>,
    /// Master seed for pages and channel noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs per network.
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for weight init, shuffles and dropout.
    #[arg(long)]
    train_seed: Option<u64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_toml(&fs::read_to_string(p)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(g) = &self.geometry {
            c.geometry = match g.as_str() {
                "desk" => PageGeometry::desk(),
                "paper" => PageGeometry::paper(),
                n => PageGeometry::new(n.parse()?, c.geometry.cell_px)?,
            };
        }
        if let Some(v) = self.noise_sigma {
            c.channel.noise_sigma = v;
        }
        if let Some(v) = self.max_shift {
            c.channel.max_shift_px = v;
        }
        if let Some(s) = &self.shift_span {
            c.channel.shift_span = match s.as_str() {
                "half-open" => ShiftSpan::HalfOpen,
                "closed" => ShiftSpan::Closed,
                _ => return Err(format!("unknown shift span {s:?}").into()),
            };
        }
        if let Some(v) = self.train_pages {
            c.train_pages = v;
        }
        if let Some(v) = self.test_pages {
            c.test_pages = v;
        }
        if let Some(v) = self.seed {
            c.channel.seed = v;
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.train_seed {
            c.train.seed = v;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Propagation distance in meters.
    #[arg(long)]
    z: Option<f64>,
    /// Output directory for train.hmfrag, test.hmfrag and config.toml.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "cnn")]
    model: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write; optimizer state goes to `<out>.optstate`, the
    /// epoch log to `<out>.log.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this model file (and its `.optstate`, if present).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "template", required_unless_present = "template")]
    model_file: Option<PathBuf>,
    #[arg(long)]
    template: bool,
    #[arg(long)]
    data: PathBuf,
    /// CSV report path; `<stem>.confusion.csv` and `<stem>.txt` are written beside it.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated distances in meters.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15")]
    z_list: Vec<f64>,
    /// Directory for CSV, text reports and PGM images.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(read_dataset(&mut BufReader::new(File::open(path)?))?)
}

fn load_model(path: &Path) -> CliResult<Network> {
    Ok(read_model(&mut BufReader::new(File::open(path)?))?)
}

/// Config saved by `gen` next to the dataset, if any.
fn sibling_config(data: &Path) -> CliResult<Option<ExperimentConfig>> {
    let path = data.with_file_name("config.toml");
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(ExperimentConfig::from_toml(&fs::read_to_string(path)?)?))
}

fn gen(args: &GenArgs) -> CliResult<()> {
    let mut config = args.experiment.resolve()?;
    if let Some(z) = args.z {
        config.channel.z = z;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    let (train, test) = generate_dataset(&config)?;
    fs::create_dir_all(&config.out_dir)?;
    for (name, d) in [("train.hmfrag", &train), ("test.hmfrag", &test)] {
        let mut w = BufWriter::new(File::create(config.out_dir.join(name))?);
        write_dataset(d, &mut w)?;
        w.flush()?;
    }
    fs::write(config.out_dir.join("config.toml"), config.to_toml())?;
    println!(
        "wrote {} train and {} test fragments to {}",
        train.len(),
        test.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn train(args: &TrainArgs) -> CliResult<()> {
    let kind: ModelKind = args.model.parse()?;
    let data = load_dataset(&args.data)?;
    let mut tc = sibling_config(&args.data)?.map(|c| c.train).unwrap_or_default();
    tc.epochs = args.epochs;
    tc.batch_size = args.batch_size;
    tc.learning_rate = args.lr;
    tc.seed = args.seed;
    let network = match &args.resume {
        Some(path) => {
            let mut net = load_model(path)?;
            let opt = with_suffix(path, ".optstate");
            if opt.exists() {
                read_optstate(&mut net, &mut BufReader::new(File::open(opt)?))?;
            }
            Some(net)
        }
        None => None,
    };
    let outcome = run_training(kind, &tc, &data, network)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    write_model(&outcome.network, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(with_suffix(&args.out, ".optstate"))?);
    write_optstate(&outcome.network, &mut w)?;
    w.flush()?;
    fs::write(with_suffix(&args.out, ".log.csv"), outcome.log_csv())?;
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {}: loss {:.5}, train accuracy {:.4}",
            last.epoch, last.mean_loss, last.accuracy
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let data = load_dataset(&args.data)?;
    let config = sibling_config(&args.data)?;
    let z = config.as_ref().map_or(f64::NAN, |c| c.channel.z);
    let network;
    let (decoder, kind) = match &args.model_file {
        Some(path) => {
            network = load_model(path)?;
            let kind = if network.layers().iter().any(|l| matches!(l, holomem::nn::Layer::Conv(_))) {
                ModelKind::Cnn
            } else {
                ModelKind::Mlp
            };
            (Decoder::Network { name: kind.name(), network: &network }, kind)
        }
        None => (Decoder::Template, ModelKind::Template),
    };
    let fingerprint = match config {
        Some(mut c) => {
            c.model = kind;
            c.fingerprint()
        }
        None => String::from("unknown"),
    };
    let report = evaluate_fer(&decoder, &data, z, &fingerprint)?;
    if let Some(path) = &args.report {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, report.to_csv())?;
        fs::write(path.with_extension("confusion.csv"), report.confusion_csv())?;
        fs::write(path.with_extension("txt"), report.to_text())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn bench(args: &BenchArgs) -> CliResult<()> {
    let mut config = args.experiment.resolve()?;
    if let Some(out) = &args.out_dir {
        config.out_dir = out.clone();
    }
    config.validate()?;
    let report = run_benchmark(&config, &args.z_list, Some(&config.out_dir))?;
    print!("{}", report.to_text());
    println!("wrote {}", config.out_dir.join("bench.csv").display());
    Ok(())
}

fn inspect(path: &Path) -> CliResult<()> {
    let mut magic = [0u8; 8];
    File::open(path)?.read_exact(&mut magic)?;
    if &magic == DATASET_MAGIC {
        let d = load_dataset(path)?;
        println!("HMFRAG1 dataset");
        println!("fragment_px  {}", d.fragment_px());
        println!("count        {}", d.len());
        println!("mean pixel   {:.6}", d.mean_pixel());
        println!("class counts {:?}", d.class_counts());
    } else if &magic[..7] == MODEL_MAGIC {
        let net = load_model(path)?;
        println!("HMNET1 model");
        println!("input        {:?}", net.input_shape());
        println!("parameters   {}", net.parameter_count());
        for (layer, shape) in net.layers().iter().zip(net.shape_trace()) {
            println!("  {:<10} in {:?}", layer.name(), shape);
        }
    } else if &magic[..7] == OPTSTATE_MAGIC {
        let mut step = [0u8; 8];
        let mut f = File::open(path)?;
        f.read_exact(&mut [0u8; 7])?;
        f.read_exact(&mut step)?;
        println!("HMOPT1 optimizer state");
        println!("step         {}", u64::from_le_bytes(step));
    } else {
        return Err(format!("{}: unrecognized file format", path.display()).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Inspect { path } => inspect(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("holomem: error: {e}");
            ExitCode::FAILURE
        }
    }
}
