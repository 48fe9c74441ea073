mod settings;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use latentnet::eval::GridSpec;
use latentnet::{
    coldstart_experiment, evaluate_cv, evaluate_holdout, grid_search, load_csv, load_movielens, make_variant,
    new_item_prediction, split_holdout, train_with_observer, ColdStartConfig, Dataset, ModelVariant, RatingScale,
    TrainConfig, TrainedModel, VariantKind,
};

use settings::{parse_list, Settings};

const DATA_ENV: &str = "LATENTNET_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "latentnet", version, about = "Latent-input neural network recommender")]
struct Cli {
    /// File of `key = value` lines; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Parallel jobs for grid points, folds and hold-out conditions.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on all ratings and write it to a file.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Where to write the trained model.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Also append the per-epoch log to this file.
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Score a configuration on the hold-out test split or by k-fold cross-validation.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Number of folds; without it the 20% hold-out split is used.
        #[arg(long)]
        cv: Option<usize>,
        /// Seed for the split; defaults to --seed.
        #[arg(long)]
        split_seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Select parameters by validation MAE, then score the winner on the test split.
    Gridsearch {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Latent sizes to try, comma separated.
        #[arg(long, value_delimiter = ',')]
        latents: Option<Vec<usize>>,
        /// Regularization weights to try.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Hidden layer sizes to try; 0 means no hidden layer.
        #[arg(long, value_delimiter = ',')]
        hiddens: Option<Vec<usize>>,
        #[arg(long)]
        split_seed: Option<u64>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Hold out whole items, retrain, and predict their ratings from descriptions alone.
    Coldstart {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// `topK` for the K most rated items, each alone and all together.
        #[arg(long, conflicts_with = "items")]
        holdout: Option<String>,
        /// Item ids to hold out, comma separated.
        #[arg(long, value_delimiter = ',')]
        items: Option<Vec<String>>,
        #[command(flatten)]
        neighbors: NeighborArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Predict one rating from a saved model.
    Predict {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Item to rate: a 0-based index, or an item id when --data is given.
        #[arg(long, required_unless_present = "genres")]
        item: Option<String>,
        /// User: a 0-based index, or a user id when --data is given.
        #[arg(long)]
        user: String,
        /// Describe a new item by attribute names instead of --item (needs --data).
        #[arg(long, value_delimiter = ',', conflicts_with = "item")]
        genres: Option<Vec<String>>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        neighbors: NeighborArgs,
    },
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Directory holding user_ratedmovies.dat and movie_genres.dat [env: LATENTNET_DATA_DIR].
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// `item,user,rating` file to use instead of the MovieLens directory.
    #[arg(long, value_name = "FILE", conflicts_with = "data")]
    ratings: Option<PathBuf>,
    /// `item,attribute` file accompanying --ratings.
    #[arg(long, value_name = "FILE", requires = "ratings")]
    attributes: Option<PathBuf>,
    /// Rating scale of --ratings as `min,max,step`; step 0 is continuous.
    #[arg(long, value_name = "MIN,MAX,STEP")]
    scale: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// mf, nlpca, ubp, lnn or lnn3pt.
    #[arg(long)]
    variant: Option<String>,
    /// Latent variables per item.
    #[arg(long)]
    latent: Option<usize>,
    /// Hidden layer sizes, comma separated; 0 means none.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Weight decay.
    #[arg(long)]
    lambda: Option<f64>,
    /// Starting learning rate.
    #[arg(long)]
    eta_initial: Option<f64>,
    /// Training stops once the learning rate falls to this.
    #[arg(long)]
    eta_final: Option<f64>,
    /// Relative RMSE improvement below which the learning rate halves.
    #[arg(long)]
    gamma: Option<f64>,
    /// Standard deviation of initial weights and latents.
    #[arg(long)]
    init_deviation: Option<f64>,
    /// Epoch cap per phase.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Seed for initialization and presentation order.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct NeighborArgs {
    /// Nearest items consulted for a new item.
    #[arg(long)]
    neighbors: Option<usize>,
    /// Largest Hamming distance a neighbour may have.
    #[arg(long)]
    dist_thresh: Option<f64>,
    /// A neighbour needs more ratings than this.
    #[arg(long)]
    min_ratings: Option<u32>,
}

#[derive(Args, Debug, Default)]
struct ReportArgs {
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

fn usage_error(message: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, message).exit()
}

struct RunContext {
    settings: Settings,
    format: Format,
    workers: usize,
}

impl RunContext {
    fn load_data(&self, args: &DataArgs) -> Result<Dataset> {
        let ratings = self.settings.pick(args.ratings.clone(), "ratings")?;
        if let Some(ratings) = ratings {
            let attributes: Option<PathBuf> = self.settings.pick(args.attributes.clone(), "attributes")?;
            let scale = match self.settings.pick(args.scale.clone(), "scale")? {
                None => RatingScale::MOVIELENS,
                Some(text) => {
                    let parts: Vec<f64> = parse_list(&text).context("--scale")?;
                    if parts.len() != 3 {
                        bail!("--scale wants `min,max,step`, got `{text}`");
                    }
                    RatingScale::new(parts[0], parts[1], parts[2])?
                }
            };
            return Ok(load_csv(&ratings, attributes.as_deref(), scale)?);
        }
        let dir = match self.settings.pick(args.data.clone(), "data")? {
            Some(dir) => dir,
            None => match std::env::var_os(DATA_ENV) {
                Some(dir) => PathBuf::from(dir),
                None => usage_error(&format!(
                    "a dataset is required: pass --data <DIR> or --ratings <FILE>, or set {DATA_ENV}"
                )),
            },
        };
        Ok(load_movielens(
            dir.join("user_ratedmovies.dat"),
            dir.join("movie_genres.dat"),
        )?)
    }

    fn variant(&self, args: &ModelArgs) -> Result<ModelVariant> {
        let s = &self.settings;
        let kind: VariantKind = s
            .pick(args.variant.clone(), "variant")?
            .map(|v: String| v.parse())
            .transpose()?
            .unwrap_or(VariantKind::Lnn3pt);
        let d = TrainConfig::default();
        let hidden = s
            .pick_list(args.hidden.clone(), "hidden")?
            .map(|h| h.into_iter().filter(|&n| n > 0).collect())
            .unwrap_or(d.hidden.clone());
        let config = TrainConfig {
            latent: s.pick(args.latent, "latent")?.unwrap_or(d.latent),
            hidden,
            lambda: s.pick(args.lambda, "lambda")?.unwrap_or(d.lambda),
            eta_initial: s.pick(args.eta_initial, "eta_initial")?.unwrap_or(d.eta_initial),
            eta_final: s.pick(args.eta_final, "eta_final")?.unwrap_or(d.eta_final),
            gamma: s.pick(args.gamma, "gamma")?.unwrap_or(d.gamma),
            init_deviation: s
                .pick(args.init_deviation, "init_deviation")?
                .unwrap_or(d.init_deviation),
            max_epochs: s.pick(args.max_epochs, "max_epochs")?.unwrap_or(d.max_epochs),
            seed: s.pick(args.seed, "seed")?.unwrap_or(d.seed),
            ..d
        };
        Ok(make_variant(kind, &config)?)
    }

    fn coldstart_config(&self, args: &NeighborArgs) -> Result<ColdStartConfig> {
        let d = ColdStartConfig::default();
        let config = ColdStartConfig {
            num_neighbors: self
                .settings
                .pick(args.neighbors, "neighbors")?
                .unwrap_or(d.num_neighbors),
            dist_thresh: self
                .settings
                .pick(args.dist_thresh, "dist_thresh")?
                .unwrap_or(d.dist_thresh),
            min_ratings: self
                .settings
                .pick(args.min_ratings, "min_ratings")?
                .unwrap_or(d.min_ratings),
        };
        config.validate()?;
        Ok(config)
    }

    fn emit(&self, args: &ReportArgs, table: String, json: String) -> Result<()> {
        let text = match self.format {
            Format::Table => table,
            Format::Json => json + "\n",
        };
        let path = self.settings.pick(args.report.clone(), "report")?;
        match path {
            Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let format = settings.pick(cli.format, "format")?.unwrap_or(Format::Table);
    let workers = settings
        .pick(cli.workers, "workers")?
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let ctx = RunContext {
        settings,
        format,
        workers,
    };

    match cli.command {
        Command::Train { data, model, out, log } => cmd_train(&ctx, &data, &model, &out, log.as_deref()),
        Command::Evaluate {
            data,
            model,
            cv,
            split_seed,
            report,
        } => {
            let variant = ctx.variant(&model)?;
            let dataset = ctx.load_data(&data)?;
            let cv = ctx.settings.pick(cv, "cv")?;
            let seed = ctx
                .settings
                .pick(split_seed, "split_seed")?
                .unwrap_or(variant.config.seed);
            let result = match cv {
                Some(k) => evaluate_cv(
                    variant.kind,
                    &variant.config,
                    &dataset.ratings,
                    &dataset.profiles,
                    k,
                    seed,
                    ctx.workers,
                )?,
                None => {
                    let split = split_holdout(&dataset.ratings, seed)?;
                    evaluate_holdout(
                        variant.kind,
                        &variant.config,
                        &dataset.ratings,
                        &dataset.profiles,
                        &split,
                    )?
                }
            };
            if !result.failures.is_empty() {
                for f in &result.failures {
                    eprintln!("failed: {f}");
                }
            }
            ctx.emit(&report, result.to_table(), result.to_json())?;
            if !result.failures.is_empty() {
                bail!("{} of the folds failed", result.failures.len());
            }
            Ok(())
        }
        Command::Gridsearch {
            data,
            model,
            latents,
            lambdas,
            hiddens,
            split_seed,
            report,
        } => {
            let variant = ctx.variant(&model)?;
            let dataset = ctx.load_data(&data)?;
            let d = GridSpec::default();
            let grid = GridSpec {
                latent: ctx.settings.pick_list(latents, "latents")?.unwrap_or(d.latent),
                lambda: ctx.settings.pick_list(lambdas, "lambdas")?.unwrap_or(d.lambda),
                hidden: ctx.settings.pick_list(hiddens, "hiddens")?.unwrap_or(d.hidden),
            };
            let seed = ctx
                .settings
                .pick(split_seed, "split_seed")?
                .unwrap_or(variant.config.seed);
            let split = split_holdout(&dataset.ratings, seed)?;
            let outcome = grid_search(
                variant.kind,
                &grid,
                &variant.config,
                &dataset.ratings,
                &dataset.profiles,
                &split,
                ctx.workers,
            )?;
            let test = evaluate_holdout(variant.kind, &outcome.best, &dataset.ratings, &dataset.profiles, &split)?;
            let table = format!("{}\n{}", outcome.to_table(), test.to_table());
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "grid": serde_json::from_str::<serde_json::Value>(&outcome.to_json())?,
                "test": serde_json::from_str::<serde_json::Value>(&test.to_json())?,
            }))?;
            ctx.emit(&report, table, json)
        }
        Command::Coldstart {
            data,
            model,
            holdout,
            items,
            neighbors,
            report,
        } => {
            let variant = ctx.variant(&model)?;
            let cs = ctx.coldstart_config(&neighbors)?;
            let dataset = ctx.load_data(&data)?;
            let holdout = ctx.settings.pick(holdout, "holdout")?;
            let items = ctx.settings.pick_list(items, "items")?;
            let (indices, labels, combined) = match (holdout, items) {
                (Some(spec), None) => {
                    let k: usize = spec
                        .strip_prefix("top")
                        .and_then(|k| k.parse().ok())
                        .filter(|&k| k > 0)
                        .with_context(|| format!("--holdout wants `topK`, got `{spec}`"))?;
                    let indices = dataset.ratings.most_rated(k);
                    let labels = indices.iter().map(|&i| dataset.item_ids[i].clone()).collect();
                    (indices, labels, Some(spec))
                }
                (None, Some(ids)) if !ids.is_empty() => {
                    let indices = ids
                        .iter()
                        .map(|id: &String| {
                            dataset
                                .item_index(id)
                                .with_context(|| format!("unknown item id `{id}`"))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let combined = (ids.len() > 1).then(|| "all".to_string());
                    (indices, ids, combined)
                }
                _ => bail!("coldstart needs --holdout topK or --items <ids>"),
            };
            let result = coldstart_experiment(
                variant.kind,
                &variant.config,
                &dataset.ratings,
                &dataset.profiles,
                &indices,
                &labels,
                combined.as_deref(),
                &cs,
                ctx.workers,
            )?;
            ctx.emit(&report, result.to_table(), result.to_json())
        }
        Command::Predict {
            model,
            item,
            user,
            genres,
            data,
            neighbors,
        } => {
            let trained = TrainedModel::load(&model)?;
            let wants_data = genres.is_some()
                || data.data.is_some()
                || data.ratings.is_some()
                || ctx.settings.raw("data").is_some()
                || ctx.settings.raw("ratings").is_some();
            let rating = if wants_data {
                let dataset = ctx.load_data(&data)?;
                if dataset.ratings.num_items() != trained.num_items() {
                    bail!(
                        "model has {} items but the dataset has {}; was it trained on this data?",
                        trained.num_items(),
                        dataset.ratings.num_items()
                    );
                }
                let u = dataset
                    .user_index(&user)
                    .with_context(|| format!("unknown user id `{user}`"))?;
                match (item, genres) {
                    (_, Some(names)) => {
                        let profile = dataset.profile_from_names(&names)?;
                        let cs = ctx.coldstart_config(&neighbors)?;
                        new_item_prediction(&profile, u, &trained, &dataset.ratings, &cs)?
                    }
                    (Some(id), None) => {
                        let i = dataset
                            .item_index(&id)
                            .with_context(|| format!("unknown item id `{id}`"))?;
                        trained.predict(i, u)?
                    }
                    (None, None) => unreachable!("clap requires --item or --genres"),
                }
            } else {
                let item = item.context("--item is required without --data")?;
                let i: usize = item
                    .parse()
                    .with_context(|| format!("--item `{item}` is not an index"))?;
                let u: usize = user
                    .parse()
                    .with_context(|| format!("--user `{user}` is not an index"))?;
                trained.predict(i, u)?
            };
            println!("{rating}");
            Ok(())
        }
    }
}

fn cmd_train(ctx: &RunContext, data: &DataArgs, model: &ModelArgs, out: &Path, log: Option<&Path>) -> Result<()> {
    let variant = ctx.variant(model)?;
    let dataset = ctx.load_data(data)?;
    let mut log_file = match log {
        Some(path) => Some(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => None,
    };
    let start = Instant::now();
    let mut log_error = None;
    let trained = train_with_observer(
        &dataset.ratings,
        &variant.profiles(&dataset.profiles),
        &variant.config,
        &mut |record| {
            eprintln!("{record}");
            if let Some(file) = log_file.as_mut() {
                if let Err(e) = writeln!(file, "{record}") {
                    log_error.get_or_insert(e);
                }
            }
        },
    )?;
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    trained.save(out)?;
    let last = trained.log().epochs.last();
    println!(
        "{} model: {} items, {} users, {} epochs, final rmse {:.6}, {:.1}s, written to {}",
        variant.kind,
        trained.num_items(),
        trained.num_users(),
        trained.log().epochs.len(),
        last.map_or(f64::NAN, |r| r.rmse),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
