//! Command implementations behind the `tale` binary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    attribute_transition_prob, avg_interval_matrix, avg_item_score, column_means, cooccurrence_by_interval,
    popularity_profile, read_attributes, temporal_pearson, test_queries, write_pearson_csv, write_profile_csv,
};
use crate::augment::{assemble_matrices, augment, unit_weight, Augmentation};
use crate::config::{ItemScoreMode, RunConfig};
use crate::dataio::{
    dataset_stats, filter_time_window, kcore_filter, leave_one_out_split, load_interactions, load_split, save_split,
    Interaction, InteractionLog, SplitDataset, StatsRecord,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::inference::{load_model, recommend, resolve_items, save_model, Query};
use crate::oracle::{lsq_oracle, pair_count_oracle};
use crate::solver::{assemble_gram, mix_models, solve_ridge, DenseMatrix, GramSystem, Model};
use crate::train::{best_grid_point, grid_search, train_model, GridPoint, GridSpec, TrainTimings};

#[derive(Debug, Parser)]
#[command(name = "tale", version, about = "Temporal linear item-item sequential recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, filter and split a raw interaction file.
    Prepare(ConfigArgs),
    /// Train a model on a prepared split.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Grid-search the weighting hyperparameters on validation NDCG@10 first.
        #[arg(long)]
        grid: bool,
    },
    /// Compute HR/NDCG on the held-out items.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write diagnostic CSVs.
    Analyze {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Top-K recommendations for histories read from a file.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        /// One history per line: `user item item ...`, oldest item first.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Allow items from the history in the output.
        #[arg(long)]
        keep_seen: bool,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the solver and the augmentation against brute-force references.
    #[command(hide = true)]
    Selftest {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset used when no config file is given.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(input) = &self.input {
            cfg.input_path = Some(input.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut r = BufReader::new(File::open(path)?);
    loop {
        let buf = r.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        hasher.update(buf);
        let len = buf.len();
        r.consume(len);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<T>,
}

fn write_manifest<T: Serialize>(cfg: &RunConfig, command: &str, inputs: &[&Path], outputs: &[PathBuf], details: Option<T>) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        details,
    };
    let path = cfg.output_dir.join(format!("{command}_manifest.json"));
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    Ok(())
}

fn start_run(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    cfg.save(cfg.output_dir.join("config.resolved.toml"))
}

/// Reads and filters the configured input.
pub fn prepare_log(cfg: &RunConfig) -> Result<InteractionLog> {
    let input = cfg
        .input_path
        .as_ref()
        .ok_or_else(|| Error::Config("input_path is required".into()))?;
    let log = load_interactions(input, &cfg.column_mapping())?;
    let log = filter_time_window(&log, cfg.min_timestamp, cfg.max_timestamp);
    let log = if cfg.k_core > 0 { kcore_filter(&log, cfg.k_core) } else { log };
    if log.is_empty() {
        return Err(Error::Config(format!("no interactions left in {} after filtering", input.display())));
    }
    Ok(log)
}

pub fn prepare_split(cfg: &RunConfig) -> Result<SplitDataset> {
    Ok(leave_one_out_split(&prepare_log(cfg)?))
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<StatsRecord> {
    start_run(cfg)?;
    let log = prepare_log(cfg)?;
    let stats = dataset_stats(&log);
    let split = leave_one_out_split(&log);
    let split_path = cfg.split_path();
    save_split(&split_path, &split)?;
    let stats_path = cfg.output_dir.join("stats.json");
    let mut f = File::create(&stats_path)?;
    serde_json::to_writer_pretty(&mut f, &stats)?;
    writeln!(f)?;
    let input = cfg.input_path.clone().expect("checked by prepare_log");
    write_manifest::<()>(cfg, "prepare", &[&input], &[split_path, stats_path], None)?;
    log::info!(
        "{} users, {} items, {} interactions",
        stats.users,
        stats.items,
        stats.interactions
    );
    Ok(stats)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub timings: TrainTimings,
    pub selected: Option<GridPoint>,
    pub mixed_with: Option<String>,
}

pub fn grid_spec(cfg: &RunConfig) -> GridSpec {
    GridSpec {
        lambda: cfg.grid_lambda.clone(),
        tau_time: cfg.grid_tau_time.clone(),
        c: cfg.grid_c.clone(),
        window_n_days: cfg.grid_window_n_days.clone(),
        c_inf_follows_c: cfg.c_inf.is_none(),
    }
}

pub fn cmd_train(cfg: &RunConfig, grid: bool) -> Result<(Model, TrainSummary)> {
    start_run(cfg)?;
    let split_path = cfg.split_path();
    let split = load_split(&split_path)?;
    let opts = cfg.train_options();
    let mut training = cfg.training_config();
    let mut selected = None;
    if grid {
        let spec = grid_spec(cfg);
        let points = grid_search(&split, &training, &spec, &opts, cfg.exclude_seen)?;
        let mut w = BufWriter::new(File::create(cfg.output_dir.join("grid.csv"))?);
        writeln!(w, "lambda,tau_time,c,window_n_days,valid_ndcg10")?;
        for p in &points {
            let score = p.valid_ndcg10.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{score}", p.lambda, p.tau_time, p.c, p.window_n_days)?;
        }
        w.flush()?;
        let best = best_grid_point(&points)
            .ok_or_else(|| Error::Config("no grid point could be trained".into()))?
            .clone();
        training = best.apply(&training, spec.c_inf_follows_c);
        selected = Some(best);
    }
    let (mut model, timings) = train_model(&split, &training, &opts)?;
    let mut inputs: Vec<&Path> = vec![&split_path];
    if let Some(other) = &cfg.mix_model_path {
        let external = load_model(other)?;
        model = mix_models(&external, &model, cfg.mix_alpha)?;
        model.config = training.clone();
        inputs.push(other);
    }
    let model_path = cfg.model_path();
    save_model(&model_path, &model, cfg.model_precision)?;
    let summary = TrainSummary {
        timings,
        selected,
        mixed_with: cfg.mix_model_path.as_ref().map(|p| p.display().to_string()),
    };
    write_manifest(cfg, "train", &inputs, &[model_path], Some(&summary))?;
    Ok((model, summary))
}

pub fn cmd_evaluate(cfg: &RunConfig, model_path: Option<&Path>) -> Result<EvalReport> {
    start_run(cfg)?;
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.model_path());
    let split_path = cfg.split_path();
    let model = load_model(&model_path)?;
    let split = load_split(&split_path)?;
    let report = evaluate(&model, &split, &cfg.eval_config())?;
    let dir = cfg.output_dir.join("eval");
    report.save(&dir, cfg.dump_ranks.then_some(&split))?;
    write_manifest::<()>(cfg, "evaluate", &[&model_path, &split_path], &[dir], None)?;
    for s in &report.slices {
        log::info!("{:<5} users={} ndcg={:?} hr={:?}", s.slice, s.users, s.ndcg, s.hr);
    }
    Ok(report)
}

pub fn cmd_analyze(cfg: &RunConfig, model_path: Option<&Path>) -> Result<Vec<PathBuf>> {
    start_run(cfg)?;
    if cfg.analyze_attributes && cfg.attribute_path.is_none() {
        return Err(Error::Config("attribute analysis requested without attribute_path".into()));
    }
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.model_path());
    let split_path = cfg.split_path();
    let model = load_model(&model_path)?;
    let split = load_split(&split_path)?;
    let dir = cfg.output_dir.join("analysis");
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    let mut create = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        outputs.push(p.clone());
        Ok(BufWriter::new(File::create(p)?))
    };
    if cfg.analyze_pearson {
        let iv = avg_interval_matrix(&split.train);
        let r = temporal_pearson(&model, &iv, cfg.pearson_epsilon_days)?;
        let mut w = create("pearson.csv")?;
        write_pearson_csv(&mut w, r, iv.len())?;
        w.flush()?;
    }
    if cfg.analyze_histogram {
        let h = cooccurrence_by_interval(&split.train, &cfg.histogram_edges_days)?;
        let mut w = create("interval_histogram.csv")?;
        h.write_csv(&mut w)?;
        w.flush()?;
    }
    if cfg.analyze_attributes {
        let attrs = read_attributes(cfg.attribute_path.as_ref().expect("checked above"), &split.train)?;
        let t = attribute_transition_prob(&split.train, &attrs, &cfg.histogram_edges_days)?;
        if t.skipped > 0 {
            log::warn!("{} consecutive pairs skipped for missing attributes", t.skipped);
        }
        let mut w = create("attribute_transitions.csv")?;
        t.write_csv(&mut w)?;
        w.flush()?;
    }
    if cfg.analyze_item_scores {
        let values = match cfg.item_score_mode {
            ItemScoreMode::Queries => avg_item_score(&model, &test_queries(&model, &split)?)?,
            ItemScoreMode::ColumnMean => column_means(&model),
        };
        let rows = popularity_profile(&split.train, &values);
        let mut w = create("item_scores.csv")?;
        write_profile_csv(&mut w, &rows, &split.train)?;
        w.flush()?;
    }
    let mut inputs: Vec<&Path> = vec![&model_path, &split_path];
    if let Some(p) = cfg.attribute_path.as_deref().filter(|_| cfg.analyze_attributes) {
        inputs.push(p);
    }
    write_manifest::<()>(cfg, "analyze", &inputs, &outputs, None)?;
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecommendSummary {
    pub queries: usize,
    pub skipped_items: usize,
}

/// Writes `user, rank, item, score` rows for every query line.
pub fn cmd_recommend(model: &Model, queries: impl BufRead, k: usize, exclude_seen: bool, out: &mut impl Write) -> Result<RecommendSummary> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let mut summary = RecommendSummary::default();
    writeln!(out, "user\trank\titem\tscore")?;
    for line in queries.lines() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(user) = fields.next() else { continue };
        let items = resolve_items(&model.items, fields);
        let query = Query {
            history: items.into_iter().enumerate().map(|(t, i)| (i, t as i64)).collect(),
            exclude_seen,
        };
        let (ranking, skipped) = recommend(model, &query, k)?;
        summary.queries += 1;
        summary.skipped_items += skipped;
        for (r, s) in ranking.iter().enumerate() {
            writeln!(out, "{user}\t{}\t{}\t{}", r + 1, model.items.id(s.item), s.score)?;
        }
    }
    Ok(summary)
}

fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if rng.random::<f64>() < density { rng.random::<f64>() } else { 0.0 })
                .collect()
        })
        .collect()
}

fn to_sparse(d: &[Vec<f64>], cols: usize) -> crate::augment::SparseMatrix {
    let mut m = crate::augment::SparseMatrix::new(d.len(), cols);
    for (r, row) in d.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                m.entries.push((r as u32, c as u32, v));
            }
        }
    }
    m
}

/// Solver against the brute-force least squares reference and augmented
/// products against exhaustive pair counts. Returns one line per check.
pub fn selftest(instances: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = rng.random_range(1..=20);
        let m = rng.random_range(1..=60);
        let lambda = [0.1, 1.0, 10.0][k % 3];
        let s = random_dense(&mut rng, m, n, 0.4);
        let t = random_dense(&mut rng, m, n, 0.3);
        let b = solve_ridge(assemble_gram(&to_sparse(&s, n), &to_sparse(&t, n), lambda)?)?;
        let reference = DenseMatrix::from_rows(&lsq_oracle(&s, &t, lambda)?)?;
        let diff = b
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        worst = worst.max(diff / reference.max_abs().max(f64::MIN_POSITIVE));
    }
    let mut lines = vec![format!(
        "solver vs reference: {instances} instances, worst relative max-norm error {worst:.3e} ({})",
        if worst <= 1e-8 { "ok" } else { "FAIL" }
    )];

    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=8usize);
        let seqs: Vec<Vec<u32>> = (0..rng.random_range(0..6))
            .map(|_| (0..rng.random_range(0..9)).map(|_| rng.random_range(0..n as u32)).collect())
            .collect();
        for mode in [Augmentation::Single, Augmentation::Multi] {
            let mut c = vec![vec![0.0; n]; n];
            for (u, items) in seqs.iter().enumerate() {
                let seq: Vec<Interaction> = items
                    .iter()
                    .enumerate()
                    .map(|(t, &item)| Interaction { user: u as u32, item, t: t as i64 })
                    .collect();
                let pairs = augment(&seq, mode);
                let (s, t) = assemble_matrices(&pairs, n, &unit_weight, &unit_weight)?;
                let sys: GramSystem = assemble_gram(&s, &t, 0.0)?;
                for (a, row) in c.iter_mut().enumerate() {
                    for (b, v) in row.iter_mut().enumerate() {
                        *v += sys.cross.get(a, b);
                    }
                }
            }
            let oracle = pair_count_oracle(&seqs, n, mode);
            let equal = (0..n).all(|a| (0..n).all(|b| c[a][b] == oracle[a][b] as f64));
            mismatches += usize::from(!equal);
        }
    }
    lines.push(format!(
        "pair-count identities: {} cases, {mismatches} mismatches ({})",
        2 * instances,
        if mismatches == 0 { "ok" } else { "FAIL" }
    ));
    if worst > 1e-8 || mismatches > 0 {
        return Err(Error::Protocol(lines.join("; ")));
    }
    Ok(lines)
}

/// Sizes the global thread pool from the config. Only the first call has
/// an effect.
fn init_threads(cfg: RunConfig) -> RunConfig {
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            log::debug!("thread pool already initialized: {e}");
        }
    }
    cfg
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let stats = cmd_prepare(&init_threads(args.resolve()?))?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Train { config, grid } => {
            let (_, summary) = cmd_train(&init_threads(config.resolve()?), grid)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Evaluate { config, model } => {
            let report = cmd_evaluate(&init_threads(config.resolve()?), model.as_deref())?;
            report.write_csv(&mut std::io::stdout().lock())?;
        }
        Command::Analyze { config, model } => {
            for p in cmd_analyze(&init_threads(config.resolve()?), model.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Recommend {
            model,
            queries,
            k,
            keep_seen,
            out,
        } => {
            let model = load_model(&model)?;
            let queries = BufReader::new(File::open(&queries)?);
            let summary = match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    let s = cmd_recommend(&model, queries, k, !keep_seen, &mut w)?;
                    w.flush()?;
                    s
                }
                None => cmd_recommend(&model, queries, k, !keep_seen, &mut std::io::stdout().lock())?,
            };
            eprintln!("{} queries, {} unknown items skipped", summary.queries, summary.skipped_items);
        }
        Command::Selftest { instances, seed } => {
            for line in selftest(instances, seed)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}
