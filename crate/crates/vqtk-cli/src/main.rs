use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vqtk_cli::config::{resolve, Settings};
use vqtk_cli::demo::{detokenize, run_demo};
use vqtk_cli::inputs::{load_feature_maps, load_token_grids};
use vqtk_cli::manifest::Manifest;
use vqtk_cli::report::Report;
use vqtk_cli::sweep::{sweep_csv, sweep_sizes, sweep_synthetic};
use vqtk_cli::synth::MixtureSpec;

use vqtk_core::cluster::{kmeans_fit, KMeansConfig};
use vqtk_core::error::{Error, Result};
use vqtk_core::fsq::{fsq_implied_codebook, fsq_quantize, FsqLevels};
use vqtk_core::io;
use vqtk_core::metrics::{
    codebook_usage, export_codebook_projection, feature_stats, frechet_distance,
    inception_score, perplexity, ProbMatrix,
};
use vqtk_core::ngram::{
    ngram_fit, ngram_sample, read_ngram, sequence_log_prob, write_ngram, ProposalModel,
    UniformProposal,
};
use vqtk_core::types::{Codebook, FeatureMap, QuantizeOutput, TokenGrid};
use vqtk_core::vq::{train_codebook, vq_quantize, VqTrainConfig};

/// Exit codes: 2 usage/config, 3 bad data, 4 numeric failure, 5 I/O.
#[derive(Parser)]
#[command(name = "vqtk", version, about = "Feature-map quantization toolkit")]
struct Cli {
    /// RNG seed shared by all seeded operations.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Cap on worker threads (0 uses every core); never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Optional key=value config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Emit the report as a single JSON object.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a codebook to feature maps (k-means or EMA vector quantization).
    BuildCodebook(BuildCodebookArgs),
    /// Map feature maps to token grids with a VQ or FSQ quantizer.
    Tokenize(TokenizeArgs),
    /// Map token grids back to code-vector feature maps.
    Detokenize(DetokenizeArgs),
    /// Evaluation metrics over tokens, features, or probability tables.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Fit, sample, or score an n-gram proposal model.
    #[command(subcommand)]
    Ngram(NgramCmd),
    /// Sweep codebook sizes (and dims on synthetic data), emitting CSV.
    Sweep(SweepArgs),
    /// Cluster codebook vs random codebook on a synthetic token world.
    Demo(DemoArgs),
    /// Project codebook rows onto their top two principal components.
    ProjectCodebook(ProjectArgs),
}

#[derive(Args)]
struct BuildCodebookArgs {
    /// cluster | vq-ema
    #[arg(long)]
    method: Option<String>,
    /// Codebook size.
    #[arg(long)]
    k: Option<usize>,
    /// FMAP file or directory.
    #[arg(short, long)]
    input: PathBuf,
    /// CBOK output path.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// L2-normalize feature vectors before fitting.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    dead_threshold: Option<u64>,
}

#[derive(Args)]
struct TokenizeArgs {
    /// vq | fsq
    #[arg(long)]
    quantizer: Option<String>,
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Comma-separated FSQ level counts, e.g. 8,8,5,5,5.
    #[arg(long)]
    levels: Option<String>,
    /// FMAP file or directory.
    #[arg(short, long)]
    input: PathBuf,
    /// TOKG file (single input) or directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DetokenizeArgs {
    /// vq | fsq
    #[arg(long)]
    quantizer: Option<String>,
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[arg(long)]
    levels: Option<String>,
    /// TOKG file or directory.
    #[arg(short, long)]
    input: PathBuf,
    /// FMAP file (single input) or directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Fraction of the vocabulary appearing in a token corpus.
    Usage {
        /// TOKG file or directory.
        #[arg(short, long)]
        tokens: PathBuf,
        #[arg(long)]
        vocab: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Perplexity of a token corpus under a proposal model.
    Ppl {
        /// "uniform" or a path to an NGRM model file.
        #[arg(long)]
        model: String,
        /// Vocabulary size (required for the uniform model).
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(short, long)]
        tokens: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fréchet distance between two feature populations.
    Frechet {
        #[arg(short)]
        a: PathBuf,
        #[arg(short)]
        b: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fréchet distance between features and their quantized
    /// reconstructions.
    Rfid {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        quantizer: Option<String>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        levels: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Inception-score-style diversity over a CSV of class
    /// probabilities (one row per sample).
    Is {
        #[arg(long)]
        probs: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NgramCmd {
    /// Count n-grams over raster-order token sequences.
    Fit {
        #[arg(short, long)]
        tokens: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        vocab: usize,
        /// Add-alpha smoothing constant.
        #[arg(long)]
        alpha: Option<f64>,
        /// NGRM output path.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Ancestral sampling into token grids.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Number of grids to sample (seeded seed, seed+1, ...).
        #[arg(long)]
        count: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Perplexity and log-probability of a corpus under a model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        tokens: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated codebook sizes.
    #[arg(long)]
    sizes: Option<String>,
    /// Comma-separated feature dims (synthetic sweeps only).
    #[arg(long)]
    dims: Option<String>,
    /// Sweep a generated mixture corpus instead of files.
    #[arg(long)]
    synthetic: bool,
    /// FMAP file or directory (fixed-data sweep).
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// CSV output path.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    codebook: PathBuf,
    /// Optional TOKG corpus supplying per-code usage counts.
    #[arg(short, long)]
    tokens: Option<PathBuf>,
    /// CSV output path.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 5,
        Error::NotPsd { .. } | Error::SqrtNonConvergence { .. } => 4,
        Error::InvalidConfig(_) => 2,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        // Ignored if a pool already exists; results never depend on it.
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    let settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    match &cli.command {
        Command::BuildCodebook(args) => cmd_build_codebook(cli, &settings, args),
        Command::Tokenize(args) => cmd_tokenize(cli, &settings, args),
        Command::Detokenize(args) => cmd_detokenize(cli, &settings, args),
        Command::Eval(args) => cmd_eval(cli, &settings, args),
        Command::Ngram(args) => cmd_ngram(cli, &settings, args),
        Command::Sweep(args) => cmd_sweep(cli, &settings, args),
        Command::Demo(args) => cmd_demo(cli, &settings, args),
        Command::ProjectCodebook(args) => cmd_project(cli, args),
    }
}

fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad list entry {t:?}")))
        })
        .collect()
}

fn parse_levels(text: &str) -> Result<FsqLevels> {
    let levels: Vec<u32> = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad level {t:?}")))
        })
        .collect::<Result<_>>()?;
    FsqLevels::new(levels)
}

/// Resolves a path that may come from a flag or the config file.
fn path_param(
    flag: &Option<PathBuf>,
    settings: &Settings,
    key: &str,
    params: &mut BTreeMap<String, String>,
) -> Result<PathBuf> {
    let path = match flag {
        Some(p) => p.clone(),
        None => settings
            .get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::InvalidConfig(format!("missing --{key}")))?,
    };
    params.insert(key.to_string(), path.display().to_string());
    Ok(path)
}

/// One output path per input: `output` itself for a lone file target,
/// otherwise `<output dir>/<input stem>.<ext>`.
fn output_paths(inputs: &[PathBuf], output: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if inputs.len() == 1 && !output.is_dir() && output.extension().is_some() {
        return Ok(vec![output.to_path_buf()]);
    }
    std::fs::create_dir_all(output).map_err(|source| Error::Io {
        path: output.to_path_buf(),
        source,
    })?;
    Ok(inputs
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "out".to_string());
            output.join(format!("{stem}.{ext}"))
        })
        .collect())
}

fn print_report(cli: &Cli, report: &Report, output: Option<&PathBuf>) -> Result<()> {
    let text = report.render(cli.json);
    println!("{text}");
    if let Some(path) = output {
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

fn normalize_maps(maps: Vec<FeatureMap>) -> Result<Vec<FeatureMap>> {
    maps.into_iter()
        .map(|m| {
            let mut data = Vec::with_capacity(m.positions() * m.dim());
            for v in m.vectors() {
                let norm = v
                    .iter()
                    .map(|&x| x as f64 * x as f64)
                    .sum::<f64>()
                    .sqrt();
                if norm > 0.0 {
                    data.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
                } else {
                    data.extend_from_slice(v);
                }
            }
            FeatureMap::new(m.height(), m.width(), m.dim(), data)
        })
        .collect()
}

/// Seeded draw of k distinct feature vectors as the EMA trainer's
/// initial codebook.
fn sample_init(data: &[FeatureMap], k: usize, seed: u64) -> Result<Codebook> {
    let dim = data[0].dim();
    let vectors: Vec<&[f32]> = data.iter().flat_map(|m| m.vectors()).collect();
    if vectors.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: vectors.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, vectors.len(), k);
    let mut rows = Vec::with_capacity(k * dim);
    for i in picks {
        rows.extend_from_slice(vectors[i]);
    }
    Codebook::new(k, dim, rows)
}

fn cmd_build_codebook(cli: &Cli, settings: &Settings, a: &BuildCodebookArgs) -> Result<()> {
    let mut params = BTreeMap::new();
    let method = resolve(
        a.method.clone(),
        settings,
        "method",
        "cluster".to_string(),
        &mut params,
    )?;
    let k = resolve(a.k, settings, "k", 16usize, &mut params)?;
    if k == 0 {
        return Err(Error::InvalidConfig("--k must be >= 1".into()));
    }
    let normalize = a.normalize || settings.get("normalize") == Some("true");
    params.insert("normalize".into(), normalize.to_string());

    let loaded = load_feature_maps(&a.input)?;
    let input_files: Vec<PathBuf> = loaded.iter().map(|(p, _)| p.clone()).collect();
    let mut data: Vec<FeatureMap> = loaded.into_iter().map(|(_, m)| m).collect();
    if normalize {
        data = normalize_maps(data)?;
    }

    let (book, trace) = match method.as_str() {
        "cluster" => {
            let cfg = KMeansConfig {
                k,
                max_iters: resolve(a.max_iters, settings, "max_iters", 100, &mut params)?,
                batch_size: resolve(
                    a.batch_size,
                    settings,
                    "batch_size",
                    usize::MAX,
                    &mut params,
                )?,
                seed: cli.seed,
                tol: resolve(a.tol, settings, "tol", 1e-9, &mut params)?,
                reinit_empty: true,
            };
            kmeans_fit(&data, &cfg)?
        }
        "vq-ema" => {
            let cfg = VqTrainConfig {
                ema_decay: resolve(a.ema_decay, settings, "ema_decay", 0.99, &mut params)?,
                dead_code_threshold: resolve(
                    a.dead_threshold,
                    settings,
                    "dead_threshold",
                    0,
                    &mut params,
                )?,
                reinit_seed: cli.seed,
                epochs: resolve(a.epochs, settings, "epochs", 20, &mut params)?,
                batch_size: resolve(
                    a.batch_size,
                    settings,
                    "batch_size",
                    usize::MAX,
                    &mut params,
                )?,
            };
            let init = sample_init(&data, k, cli.seed)?;
            train_codebook(&data, &init, &cfg)?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown method {other:?} (expected cluster or vq-ema)"
            )))
        }
    };

    io::write_codebook(&book, &a.output)?;
    let mut manifest = Manifest::new("build-codebook", cli.seed, cli.threads);
    manifest.params = params;
    manifest.inputs = input_files;
    manifest.outputs = vec![a.output.clone()];
    manifest
        .extra
        .insert("trace".into(), serde_json::json!(trace));
    manifest.write_beside(&a.output)?;

    let mut report = Report::new();
    report.push("method", method);
    report.push("k", book.size() as u64);
    report.push("dim", book.dim() as u64);
    report.push("final_error", trace.last().copied().unwrap_or(f64::NAN));
    report.push("output", a.output.display().to_string());
    print_report(cli, &report, None)
}

enum Quantizer {
    Vq(Codebook),
    Fsq(FsqLevels),
}

impl Quantizer {
    fn from_args(
        settings: &Settings,
        name: &Option<String>,
        codebook: &Option<PathBuf>,
        levels: &Option<String>,
        params: &mut BTreeMap<String, String>,
    ) -> Result<Self> {
        let kind = resolve(name.clone(), settings, "quantizer", "vq".to_string(), params)?;
        match kind.as_str() {
            "vq" => {
                let path = path_param(codebook, settings, "codebook", params)?;
                Ok(Self::Vq(io::read_codebook(&path)?))
            }
            "fsq" => {
                let text = match levels {
                    Some(t) => t.clone(),
                    None => settings
                        .get("levels")
                        .map(str::to_string)
                        .ok_or_else(|| Error::InvalidConfig("missing --levels".into()))?,
                };
                params.insert("levels".into(), text.clone());
                Ok(Self::Fsq(parse_levels(&text)?))
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown quantizer {other:?} (expected vq or fsq)"
            ))),
        }
    }

    fn quantize(&self, map: &FeatureMap) -> Result<QuantizeOutput> {
        match self {
            Self::Vq(book) => vq_quantize(map, book),
            Self::Fsq(levels) => fsq_quantize(map, levels),
        }
    }

    fn vocab(&self) -> usize {
        match self {
            Self::Vq(book) => book.size(),
            Self::Fsq(levels) => levels.codebook_size() as usize,
        }
    }

    fn codebook(&self) -> Result<Codebook> {
        match self {
            Self::Vq(book) => Ok(book.clone()),
            Self::Fsq(levels) => fsq_implied_codebook(levels),
        }
    }
}

fn cmd_tokenize(cli: &Cli, settings: &Settings, a: &TokenizeArgs) -> Result<()> {
    let mut params = BTreeMap::new();
    let quantizer =
        Quantizer::from_args(settings, &a.quantizer, &a.codebook, &a.levels, &mut params)?;
    let loaded = load_feature_maps(&a.input)?;
    let input_files: Vec<PathBuf> = loaded.iter().map(|(p, _)| p.clone()).collect();
    let outs = output_paths(&input_files, &a.output, "tokg")?;

    let mut grids = Vec::with_capacity(loaded.len());
    let mut quant_error = 0.0;
    for ((_, map), out) in loaded.iter().zip(&outs) {
        let result = quantizer.quantize(map)?;
        quant_error += result.quant_error;
        io::write_token_grid(&result.tokens, out)?;
        grids.push(result.tokens);
    }
    quant_error /= grids.len() as f64;
    let usage = codebook_usage(&grids, quantizer.vocab())?;

    let mut manifest = Manifest::new("tokenize", cli.seed, cli.threads);
    manifest.params = params;
    manifest.inputs = input_files;
    manifest.outputs = outs;
    manifest.write_beside(&a.output)?;

    let mut report = Report::new();
    report.push("maps", grids.len() as u64);
    report.push("quant_error", quant_error);
    report.push("usage_percent", usage.usage_percent);
    print_report(cli, &report, None)
}

fn cmd_detokenize(cli: &Cli, settings: &Settings, a: &DetokenizeArgs) -> Result<()> {
    let mut params = BTreeMap::new();
    let quantizer =
        Quantizer::from_args(settings, &a.quantizer, &a.codebook, &a.levels, &mut params)?;
    let book = quantizer.codebook()?;
    let loaded = load_token_grids(&a.input)?;
    let input_files: Vec<PathBuf> = loaded.iter().map(|(p, _)| p.clone()).collect();
    let outs = output_paths(&input_files, &a.output, "fmap")?;

    for ((_, grid), out) in loaded.iter().zip(&outs) {
        let map = detokenize(grid, &book)?;
        io::write_feature_map(&map, out)?;
    }

    let mut manifest = Manifest::new("detokenize", cli.seed, cli.threads);
    manifest.params = params;
    manifest.inputs = input_files;
    manifest.outputs = outs.clone();
    manifest.write_beside(&a.output)?;

    let mut report = Report::new();
    report.push("grids", outs.len() as u64);
    report.push("dim", book.dim() as u64);
    print_report(cli, &report, None)
}

fn read_prob_csv(path: &Path) -> Result<ProbMatrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut data = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "{}: expected comma-separated numbers",
                        path.display()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if rows == 0 {
            cols = values.len();
        }
        rows += 1;
        data.extend(values);
    }
    if rows == 0 {
        return Err(Error::EmptyInput("probability CSV has no rows"));
    }
    ProbMatrix::new(rows, cols, data)
}

fn cmd_eval(cli: &Cli, settings: &Settings, cmd: &EvalCmd) -> Result<()> {
    let mut params = BTreeMap::new();
    let mut report = Report::new();
    let (name, inputs, output) = match cmd {
        EvalCmd::Usage {
            tokens,
            vocab,
            output,
        } => {
            let loaded = load_token_grids(tokens)?;
            let grids: Vec<TokenGrid> = loaded.iter().map(|(_, g)| g.clone()).collect();
            let usage = codebook_usage(&grids, *vocab)?;
            params.insert("vocab".into(), vocab.to_string());
            report.push("metric", "codebook usage");
            report.push("used", usage.used as u64);
            report.push("total", usage.total as u64);
            report.push("usage_percent", usage.usage_percent);
            (
                "eval-usage",
                loaded.into_iter().map(|(p, _)| p).collect(),
                output,
            )
        }
        EvalCmd::Ppl {
            model,
            vocab,
            tokens,
            output,
        } => {
            let loaded = load_token_grids(tokens)?;
            let grids: Vec<TokenGrid> = loaded.iter().map(|(_, g)| g.clone()).collect();
            params.insert("model".into(), model.clone());
            let ppl = if model == "uniform" {
                let vocab = vocab.ok_or_else(|| {
                    Error::InvalidConfig("uniform model needs --vocab".into())
                })?;
                if vocab == 0 {
                    return Err(Error::InvalidConfig("--vocab must be >= 1".into()));
                }
                params.insert("vocab".into(), vocab.to_string());
                perplexity(&UniformProposal { vocab_size: vocab }, &grids)?
            } else {
                perplexity(&read_ngram(Path::new(model))?, &grids)?
            };
            report.push("metric", "perplexity");
            report.push("perplexity", ppl);
            (
                "eval-ppl",
                loaded.into_iter().map(|(p, _)| p).collect(),
                output,
            )
        }
        EvalCmd::Frechet { a, b, output } => {
            let first = load_feature_maps(a)?;
            let second = load_feature_maps(b)?;
            let stats_a = feature_stats(&first.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>())?;
            let stats_b =
                feature_stats(&second.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>())?;
            let distance = frechet_distance(&stats_a, &stats_b)?;
            report.push("metric", "Frechet distance (feature space)");
            report.push("frechet", distance);
            let mut paths: Vec<PathBuf> = first.into_iter().map(|(p, _)| p).collect();
            paths.extend(second.into_iter().map(|(p, _)| p));
            ("eval-frechet", paths, output)
        }
        EvalCmd::Rfid {
            input,
            quantizer,
            codebook,
            levels,
            output,
        } => {
            let q = Quantizer::from_args(settings, quantizer, codebook, levels, &mut params)?;
            let book = q.codebook()?;
            let loaded = load_feature_maps(input)?;
            let maps: Vec<FeatureMap> = loaded.iter().map(|(_, m)| m.clone()).collect();
            let mut recon = Vec::with_capacity(maps.len());
            let mut quant_error = 0.0;
            for map in &maps {
                let result = q.quantize(map)?;
                quant_error += result.quant_error;
                recon.push(detokenize(&result.tokens, &book)?);
            }
            quant_error /= maps.len() as f64;
            let distance = frechet_distance(&feature_stats(&maps)?, &feature_stats(&recon)?)?;
            report.push("metric", "Frechet distance (feature space), reconstruction");
            report.push("frechet", distance);
            report.push("quant_error", quant_error);
            (
                "eval-rfid",
                loaded.into_iter().map(|(p, _)| p).collect(),
                output,
            )
        }
        EvalCmd::Is { probs, output } => {
            let matrix = read_prob_csv(probs)?;
            let score = inception_score(&matrix)?;
            report.push("metric", "inception score");
            report.push("inception_score", score);
            ("eval-is", vec![probs.clone()], output)
        }
    };

    print_report(cli, &report, output.as_ref())?;
    if let Some(out) = output {
        let mut manifest = Manifest::new(name, cli.seed, cli.threads);
        manifest.params = params;
        manifest.inputs = inputs;
        manifest.outputs = vec![out.clone()];
        manifest.write_beside(out)?;
    }
    Ok(())
}

fn cmd_ngram(cli: &Cli, settings: &Settings, cmd: &NgramCmd) -> Result<()> {
    let mut params = BTreeMap::new();
    match cmd {
        NgramCmd::Fit {
            tokens,
            order,
            vocab,
            alpha,
            output,
        } => {
            let order = resolve(*order, settings, "order", 2usize, &mut params)?;
            let alpha = resolve(*alpha, settings, "alpha", 1.0f64, &mut params)?;
            params.insert("vocab".into(), vocab.to_string());
            let loaded = load_token_grids(tokens)?;
            let grids: Vec<TokenGrid> = loaded.iter().map(|(_, g)| g.clone()).collect();
            let model = ngram_fit(&grids, order, *vocab, alpha)?;
            write_ngram(&model, output)?;

            let mut manifest = Manifest::new("ngram-fit", cli.seed, cli.threads);
            manifest.params = params;
            manifest.inputs = loaded.into_iter().map(|(p, _)| p).collect();
            manifest.outputs = vec![output.clone()];
            manifest.write_beside(output)?;

            let mut report = Report::new();
            report.push("order", order as u64);
            report.push("vocab", *vocab as u64);
            report.push("alpha", alpha);
            report.push("output", output.display().to_string());
            print_report(cli, &report, None)
        }
        NgramCmd::Sample {
            model,
            height,
            width,
            count,
            output,
        } => {
            let height = resolve(*height, settings, "height", 8usize, &mut params)?;
            let width = resolve(*width, settings, "width", 8usize, &mut params)?;
            let count = resolve(*count, settings, "count", 1usize, &mut params)?;
            if height == 0 || width == 0 || count == 0 {
                return Err(Error::InvalidConfig(
                    "height, width, and count must be >= 1".into(),
                ));
            }
            params.insert("model".into(), model.display().to_string());
            let loaded = read_ngram(model)?;
            let names: Vec<PathBuf> = (0..count)
                .map(|i| PathBuf::from(format!("sample_{i:04}")))
                .collect();
            let outs = output_paths(&names, output, "tokg")?;
            for (i, out) in outs.iter().enumerate() {
                let seq = ngram_sample(&loaded, height * width, cli.seed + i as u64)?;
                io::write_token_grid(&TokenGrid::new(height, width, seq)?, out)?;
            }

            let mut manifest = Manifest::new("ngram-sample", cli.seed, cli.threads);
            manifest.params = params;
            manifest.inputs = vec![model.clone()];
            manifest.outputs = outs.clone();
            manifest.write_beside(output)?;

            let mut report = Report::new();
            report.push("grids", outs.len() as u64);
            report.push("tokens_per_grid", (height * width) as u64);
            print_report(cli, &report, None)
        }
        NgramCmd::Score {
            model,
            tokens,
            output,
        } => {
            params.insert("model".into(), model.display().to_string());
            let loaded_model = read_ngram(model)?;
            let loaded = load_token_grids(tokens)?;
            let grids: Vec<TokenGrid> = loaded.iter().map(|(_, g)| g.clone()).collect();
            let ppl = perplexity(&loaded_model, &grids)?;
            let mut log_prob = 0.0;
            for grid in &grids {
                log_prob += sequence_log_prob(&loaded_model, grid.codes())?;
            }

            let mut report = Report::new();
            report.push("perplexity", ppl);
            report.push("log_prob", log_prob);
            report.push("vocab", loaded_model.vocab_size() as u64);
            print_report(cli, &report, output.as_ref())?;
            if let Some(out) = output {
                let mut manifest = Manifest::new("ngram-score", cli.seed, cli.threads);
                manifest.params = params;
                manifest.inputs = loaded.into_iter().map(|(p, _)| p).collect();
                manifest.outputs = vec![out.clone()];
                manifest.write_beside(out)?;
            }
            Ok(())
        }
    }
}

fn cmd_sweep(cli: &Cli, settings: &Settings, a: &SweepArgs) -> Result<()> {
    let mut params = BTreeMap::new();
    let sizes = parse_list(&resolve(
        a.sizes.clone(),
        settings,
        "sizes",
        "16,32,64,128,256,512,1024".to_string(),
        &mut params,
    )?)?;
    let dims = parse_list(&resolve(
        a.dims.clone(),
        settings,
        "dims",
        "6".to_string(),
        &mut params,
    )?)?;

    let (cells, inputs) = match (&a.input, a.synthetic) {
        (Some(input), false) => {
            let loaded = load_feature_maps(input)?;
            let maps: Vec<FeatureMap> = loaded.iter().map(|(_, m)| m.clone()).collect();
            (
                sweep_sizes(&maps, &sizes, cli.seed)?,
                loaded.into_iter().map(|(p, _)| p).collect(),
            )
        }
        (None, _) => {
            params.insert("synthetic".into(), "true".to_string());
            (
                sweep_synthetic(&MixtureSpec::default(), &sizes, &dims, cli.seed)?,
                Vec::new(),
            )
        }
        (Some(_), true) => {
            return Err(Error::InvalidConfig(
                "--synthetic and --input are mutually exclusive".into(),
            ))
        }
    };

    let body = if cli.json {
        serde_json::to_string_pretty(&serde_json::json!({ "cells": cells }))
            .expect("cells serialize")
    } else {
        sweep_csv(&cells)
    };
    println!("{body}");
    if let Some(out) = &a.output {
        std::fs::write(out, sweep_csv(&cells)).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        let mut manifest = Manifest::new("sweep", cli.seed, cli.threads);
        manifest.params = params;
        manifest.inputs = inputs;
        manifest.outputs = vec![out.clone()];
        manifest.write_beside(out)?;
    }
    Ok(())
}

fn cmd_demo(cli: &Cli, settings: &Settings, a: &DemoArgs) -> Result<()> {
    let mut params = BTreeMap::new();
    let count = resolve(a.seeds, settings, "seeds", 10usize, &mut params)?;
    if count == 0 {
        return Err(Error::InvalidConfig("--seeds must be >= 1".into()));
    }
    let result = run_demo(&MixtureSpec::default(), cli.seed, count)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&result).expect("demo serializes")
        );
        return Ok(());
    }
    for seed in &result.seeds {
        println!(
            "seed={} cluster_ppl={:.4} random_ppl={:.4} cluster_frechet={:.6} random_frechet={:.6} winner={}",
            seed.seed,
            seed.cluster.perplexity,
            seed.random.perplexity,
            seed.cluster.frechet,
            seed.random.frechet,
            if seed.cluster_wins() { "cluster" } else { "random" },
        );
    }
    println!("cluster_wins={}/{}", result.cluster_wins, count);
    Ok(())
}

fn cmd_project(cli: &Cli, a: &ProjectArgs) -> Result<()> {
    let book = io::read_codebook(&a.codebook)?;
    let grids = match &a.tokens {
        Some(path) => Some(
            load_token_grids(path)?
                .into_iter()
                .map(|(_, g)| g)
                .collect::<Vec<_>>(),
        ),
        None => None,
    };
    let projection = export_codebook_projection(&book, grids.as_deref())?;

    let body = if cli.json {
        serde_json::to_string_pretty(&serde_json::json!({
            "explained": projection.explained,
            "total_variance": projection.total_variance,
            "rows": projection
                .rows
                .iter()
                .map(|r| serde_json::json!({
                    "code": r.code,
                    "usage": r.usage,
                    "pc1": r.pc1,
                    "pc2": r.pc2,
                }))
                .collect::<Vec<_>>(),
        }))
        .expect("projection serializes")
    } else {
        let mut csv = String::from("code,usage,pc1,pc2\n");
        for r in &projection.rows {
            csv.push_str(&format!("{},{},{},{}\n", r.code, r.usage, r.pc1, r.pc2));
        }
        csv
    };
    println!("{body}");
    if let Some(out) = &a.output {
        std::fs::write(out, &body).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        let mut manifest = Manifest::new("project-codebook", cli.seed, cli.threads);
        manifest
            .params
            .insert("codebook".into(), a.codebook.display().to_string());
        manifest.inputs = vec![a.codebook.clone()];
        manifest.outputs = vec![out.clone()];
        manifest.write_beside(out)?;
    }
    Ok(())
}
