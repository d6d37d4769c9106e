//! Command-line front end.
//!
//! Every subcommand reads the inputs named in a TOML run configuration,
//! recomputes the stages it needs and writes its artifacts into the output
//! directory. Nothing is cached between invocations.
//!
//! Exit codes: 0 success, 1 validation or data error, 2 configuration
//! error. Failures print a JSON error report on stderr.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::evaluation::{
    annotation_quality, best_sweep_threshold, evaluate_predictions, make_splits, mcnemar,
    micro_average, paired_correctness, threshold_sweep, LearningCurvePoint, McNemarResult,
    MetricsReport, SplitPlan, SweepPoint, SweepRow,
};
use crate::ingest::{self, DatasetBundle};
use crate::schema::{AdjudicationRecord, Judgment, RelationSchema, ValidationReport};
use crate::scoring::{
    agreement_sweep, best_threshold, build_baseline_training_set, build_crowd_training_set,
    build_evaluation_set, build_expert_training_set, build_single_training_set, clarity_report,
    default_grid, disagreements, expert_label_map, AgreementPoint, EvaluationSet, GoldSet,
    QueueEntry, ScoreTable, TrainingSet,
};
use crate::simulator::{self, SimConfig};
use crate::stability::{
    default_k_max, mean_cosine_delta_curve, quality_by_worker_count, CurvePoint, RelationGold,
    WorkerOrder,
};
use crate::vectors::{group_by_sentence, sentence_vectors, SentenceVector};
use crate::worker_quality::{exclude_thin, filter_spammers, SpamFilterConfig, SpamFilterOutcome};

#[derive(Debug, Parser)]
#[command(name = "crowdtruth", version, about = "Disagreement-aware crowd ground truth for relation extraction")]
pub struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against
    /// its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `out` in the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check inputs and write validation.json.
    Validate,
    /// Spam filtering: workers.csv, trusted_judgments.csv, thin_sentences.csv.
    FilterWorkers,
    /// Sentence vectors: vectors.csv.
    Aggregate,
    /// Sentence-relation scores and clarity: scores.csv, clarity.csv, relation_clarity.csv.
    Score,
    /// Training labels: training_<provenance>_<relation>.csv.
    Label {
        #[arg(long, value_parser = ["crowd", "baseline", "expert", "single"])]
        provenance: String,
        /// Crowd threshold (default: `label_threshold` from the config).
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        relation: Vec<String>,
    },
    /// Crowd/expert agreement per threshold: agreement_<relation>.csv, thresholds.json.
    AgreementSweep,
    /// Adjudicated gold sets: gold_<relation>.csv, or adjudication_queue.csv and exit 1.
    BuildGold,
    /// Every crowd/expert disagreement: adjudication_queue.csv.
    AdjudicateExport,
    /// Checks a filled-in adjudication file and writes adjudications.csv.
    AdjudicateImport {
        #[arg(long)]
        file: PathBuf,
    },
    /// Cross-validation folds: splits.csv.
    Splits,
    /// Scores classifier predictions per fold.
    Evaluate {
        /// Prediction files, one per training-set size.
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        /// Training-set size of each prediction file, in the same order.
        #[arg(long)]
        training_size: Vec<usize>,
        #[arg(long)]
        relation: Vec<String>,
        /// Tag used in output file names.
        #[arg(long, default_value = "classifier")]
        name: String,
        /// Fold plan to use instead of recomputing it from the config seed.
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Annotation quality: sweep_<relation>.csv, report_<relation>.json,
    /// annotation_quality.csv. With --labeling, scores that file instead.
    WeightedEval {
        #[arg(long)]
        labeling: Option<PathBuf>,
        #[arg(long)]
        relation: Vec<String>,
        #[arg(long, default_value = "labeling")]
        name: String,
    },
    /// McNemar's test between two labelings on the gold set: mcnemar.json.
    Mcnemar {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        #[arg(long)]
        relation: String,
        /// Disable the continuity correction.
        #[arg(long)]
        no_correction: bool,
    },
    /// Worker-count stability: stability_cosine.csv, stability_f1.csv.
    Stability {
        #[arg(long)]
        k_max: Option<usize>,
        /// Shuffle workers per sentence with this seed instead of using
        /// submission order.
        #[arg(long)]
        shuffle_seed: Option<u64>,
    },
    /// Synthetic corpus with a ready-to-run configuration.
    Simulate {
        /// Simulator settings (TOML); command-line values override it.
        #[arg(long)]
        sim_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_sentences: Option<usize>,
        #[arg(long)]
        n_workers: Option<usize>,
        #[arg(long)]
        workers_per_sentence: Option<usize>,
        #[arg(long)]
        ambiguous_fraction: Option<f64>,
        #[arg(long)]
        reliability: Option<f64>,
        #[arg(long)]
        spam_fraction: Option<f64>,
    },
    /// Runs every stage and writes all artifacts plus manifest.json.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpamSection {
    #[serde(default = "defaults::spam_threshold")]
    pub threshold: f64,
    #[serde(default = "defaults::max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "defaults::min_judgments")]
    pub min_judgments: usize,
}

impl Default for SpamSection {
    fn default() -> Self {
        SpamSection {
            threshold: defaults::spam_threshold(),
            max_rounds: defaults::max_rounds(),
            min_judgments: defaults::min_judgments(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub splits: Option<u64>,
    pub single: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub sentences: PathBuf,
    pub judgments: PathBuf,
    pub expert: Option<PathBuf>,
    pub adjudications: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Relations to label and evaluate. Defaults to the relations that
    /// carry expert labels, or every schema relation without experts.
    pub relations: Option<Vec<String>>,
    #[serde(default)]
    pub spam: SpamSection,
    #[serde(default = "defaults::worker_floor")]
    pub worker_floor: usize,
    /// Keep sentences below the worker floor.
    #[serde(default)]
    pub allow_thin: bool,
    pub grid: Option<Vec<f64>>,
    #[serde(default = "defaults::label_threshold")]
    pub label_threshold: f64,
    #[serde(default = "defaults::folds")]
    pub folds: usize,
    #[serde(default)]
    pub stratify: bool,
    #[serde(default = "defaults::continuity_correction")]
    pub continuity_correction: bool,
    pub k_max: Option<usize>,
    #[serde(default)]
    pub seeds: Seeds,
}

mod defaults {
    pub fn spam_threshold() -> f64 {
        0.5
    }
    pub fn max_rounds() -> u32 {
        10
    }
    pub fn min_judgments() -> usize {
        3
    }
    pub fn worker_floor() -> usize {
        crate::worker_quality::DEFAULT_WORKER_FLOOR
    }
    pub fn label_threshold() -> f64 {
        0.5
    }
    pub fn folds() -> usize {
        5
    }
    pub fn continuity_correction() -> bool {
        true
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.sentences);
        resolve(&mut config.judgments);
        for p in [
            &mut config.schema,
            &mut config.expert,
            &mut config.adjudications,
            &mut config.out,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(config)
    }

    fn spam_filter(&self) -> SpamFilterConfig {
        SpamFilterConfig {
            threshold: self.spam.threshold,
            max_rounds: self.spam.max_rounds,
            min_judgments: self.spam.min_judgments,
            worker_floor: self.worker_floor,
        }
    }

    fn grid(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(default_grid)
    }

    fn seed(&self, seed: Option<u64>, name: &str) -> Result<u64, Failure> {
        seed.ok_or_else(|| Failure::Config(format!("`seeds.{name}` must be set explicitly")))
    }
}

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Data(Error),
    Config(String),
    Invalid(ValidationReport),
    AdjudicationRequired { pending: usize, queue: PathBuf },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            e => Failure::Data(e),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Data(Error::InvalidParameter(_)) => 2,
            _ => 1,
        }
    }

    pub fn report(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Failure::Data(e) => {
                let mut v = json!({ "error": e.kind(), "message": e.to_string() });
                if let Error::MissingPredictions(ids) | Error::MissingScores(ids) = e {
                    v["sentence_ids"] = json!(ids);
                }
                v
            }
            Failure::Config(msg) => json!({ "error": "config", "message": msg }),
            Failure::Invalid(report) => json!({
                "error": "validation_failed",
                "message": format!("{} validation error(s)", report.errors.len()),
                "violations": report.errors,
            }),
            Failure::AdjudicationRequired { pending, queue } => json!({
                "error": "adjudication_required",
                "message": format!("{pending} disagreement(s) need adjudication"),
                "queue": queue.display().to_string(),
            }),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Parses arguments, runs the command and reports failures on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let mut stderr = std::io::stderr().lock();
            let _ = serde_json::to_writer(&mut stderr, &failure.report());
            let _ = writeln!(stderr);
            ExitCode::from(failure.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Outcome<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: Cli) -> Outcome<()> {
    if let Command::Simulate {
        sim_config,
        seed,
        n_sentences,
        n_workers,
        workers_per_sentence,
        ambiguous_fraction,
        reliability,
        spam_fraction,
    } = &cli.command
    {
        let out = cli
            .out
            .clone()
            .ok_or_else(|| Failure::Config("simulate needs --out".into()))?;
        let mut config = match sim_config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                let mut text_config: toml::Table = toml::from_str(&text)
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                if let Some(seed) = seed {
                    text_config.insert("seed".into(), toml::Value::Integer(*seed as i64));
                }
                text_config
                    .try_into::<SimConfig>()
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
            }
            None => SimConfig::new(seed.ok_or_else(|| {
                Failure::Config("simulate needs --seed or a --sim-config with a seed".into())
            })?),
        };
        macro_rules! set {
            ($field:ident, $value:expr) => {
                if let Some(v) = $value {
                    config.$field = *v;
                }
            };
        }
        set!(n_sentences, n_sentences);
        set!(n_workers, n_workers);
        set!(workers_per_sentence, workers_per_sentence);
        set!(ambiguous_fraction, ambiguous_fraction);
        set!(faithful_reliability, reliability);
        set!(spam_fraction, spam_fraction);
        return simulate(&config, &out);
    }

    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let config = RunConfig::load(config_path)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| Failure::Config("no output directory: set `out` or pass --out".into()))?;
    let mut w = Artifacts::new(out);

    if let Command::Validate = cli.command {
        let report = match load(&config)? {
            Ok((_, report)) | Err(report) => report,
        };
        w.json("validation.json", &report)?;
        return if report.is_accepted() {
            Ok(())
        } else {
            Err(Failure::Invalid(report))
        };
    }

    let run = Pipeline::new(config, &mut w)?;
    match cli.command {
        Command::Validate | Command::Simulate { .. } => unreachable!("handled above"),
        Command::FilterWorkers => run.write_filter(&mut w),
        Command::Aggregate => run.write_vectors(&mut w),
        Command::Score => run.write_scores(&mut w),
        Command::Label {
            provenance,
            threshold,
            relation,
        } => {
            let relations = run.relations_or(&relation)?;
            let t = threshold.unwrap_or(run.config.label_threshold);
            for r in &relations {
                let set = run.training_set(&provenance, r, t)?;
                w.training(&set)?;
            }
            Ok(())
        }
        Command::AgreementSweep => run.write_agreement(&mut w).map(|_| ()),
        Command::BuildGold => run.write_gold(&mut w).map(|_| ()),
        Command::AdjudicateExport => run.write_queue(&mut w),
        Command::AdjudicateImport { file } => run.import_adjudications(&file, &mut w),
        Command::Splits => run.write_splits(&mut w).map(|_| ()),
        Command::Evaluate {
            predictions,
            training_size,
            relation,
            name,
            splits,
        } => run.evaluate(&predictions, &training_size, &relation, &name, splits.as_deref(), &mut w),
        Command::WeightedEval {
            labeling,
            relation,
            name,
        } => match labeling {
            Some(path) => run.evaluate_labeling(&path, &relation, &name, &mut w),
            None => run.write_quality(&mut w).map(|_| ()),
        },
        Command::Mcnemar {
            first,
            second,
            relation,
            no_correction,
        } => {
            let correction = run.config.continuity_correction && !no_correction;
            run.mcnemar(&first, &second, &relation, correction, &mut w)
        }
        Command::Stability {
            k_max,
            shuffle_seed,
        } => run.write_stability(k_max, shuffle_seed, &mut w),
        Command::Report => run.report(&mut w),
    }
}

/// Writes files into the output directory and remembers their names.
struct Artifacts {
    dir: PathBuf,
    written: BTreeSet<String>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Self {
        Artifacts {
            dir,
            written: BTreeSet::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.insert(name.to_string());
        self.dir.join(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Outcome<()> {
        let path = self.path(name);
        let mut f = ingest::create(&path)?;
        ingest::write_csv(&mut f, rows)?;
        f.flush().map_err(Error::from)?;
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Outcome<()> {
        let path = self.path(name);
        let mut f = ingest::create(&path)?;
        ingest::write_json(&mut f, value)?;
        f.flush().map_err(Error::from)?;
        Ok(())
    }

    fn with<F>(&mut self, name: &str, write: F) -> Outcome<()>
    where
        F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> crate::Result<()>,
    {
        let path = self.path(name);
        let mut f = ingest::create(&path)?;
        write(&mut f)?;
        f.flush().map_err(Error::from)?;
        Ok(())
    }

    fn training(&mut self, set: &TrainingSet) -> Outcome<()> {
        let rows: Vec<TrainingRow> = set
            .instances
            .iter()
            .map(|i| TrainingRow {
                sentence_id: i.sentence_id.clone(),
                relation: i.relation.clone(),
                weight: i.weight,
            })
            .collect();
        let stem = format!("training_{}_{}", set.provenance, set.relation);
        self.csv(&format!("{stem}.csv"), &rows)?;
        if !set.excluded.is_empty() {
            self.csv(&format!("{stem}_excluded.csv"), &set.excluded)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainingRow {
    sentence_id: String,
    relation: String,
    weight: f64,
}

#[derive(Serialize)]
struct GoldRow {
    sentence_id: String,
    label: u8,
    srs: f64,
}

#[derive(Serialize)]
struct ClarityRow {
    sentence_id: String,
    clarity: f64,
}

#[derive(Serialize)]
struct RelationClarityRow {
    relation: String,
    clarity: Option<f64>,
}

#[derive(Serialize)]
struct QualityRow {
    relation: String,
    source: String,
    threshold: Option<f64>,
    precision: f64,
    recall: f64,
    f1: f64,
    weighted_precision: f64,
    weighted_recall: f64,
    weighted_f1: f64,
}

impl QualityRow {
    fn new(relation: &str, source: &str, threshold: Option<f64>, r: &MetricsReport) -> Self {
        QualityRow {
            relation: relation.to_string(),
            source: source.to_string(),
            threshold,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            weighted_precision: r.weighted_precision,
            weighted_recall: r.weighted_recall,
            weighted_f1: r.weighted_f1,
        }
    }
}

#[derive(Serialize)]
struct ThresholdChoice {
    relation: String,
    /// Threshold maximizing crowd/expert agreement; used to build gold.
    agreement_threshold: f64,
    agreement: f64,
}

#[derive(Serialize)]
struct RelationReport<'a> {
    relation: &'a str,
    agreement_threshold: f64,
    best_f1_threshold: f64,
    gold_size: usize,
    adjudicated: usize,
    dropped_unresolved: usize,
    sources: BTreeMap<&'a str, MetricsReport>,
}

#[derive(Serialize)]
struct McNemarReport<'a> {
    relation: &'a str,
    first: String,
    second: String,
    sentences: usize,
    #[serde(flatten)]
    result: McNemarResult,
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    bytes: u64,
    sha256: String,
}

/// Parses the inputs; the inner result carries the rejecting report when
/// validation fails.
fn load(config: &RunConfig) -> Outcome<std::result::Result<(DatasetBundle, ValidationReport), ValidationReport>> {
    let schema = match &config.schema {
        Some(path) => ingest::load_schema(path)?,
        None => RelationSchema::medical(),
    };
    let sentences = ingest::parse_sentences(ingest::open(&config.sentences)?)?;
    let judgments = ingest::parse_judgments(ingest::open(&config.judgments)?, &schema)?;
    let expert = match &config.expert {
        Some(path) => Some(ingest::parse_expert_labels(ingest::open(path)?)?),
        None => None,
    };
    Ok(DatasetBundle::assemble(schema, sentences, judgments, expert))
}

/// Everything up to the score table, computed once per invocation.
struct Pipeline {
    config: RunConfig,
    bundle: DatasetBundle,
    filter: SpamFilterOutcome,
    groups: BTreeMap<String, Vec<Judgment>>,
    vectors: BTreeMap<String, SentenceVector>,
    scores: ScoreTable,
}

/// Gold sets with the thresholds that produced them.
struct GoldStage {
    agreement: BTreeMap<String, (Vec<AgreementPoint>, f64)>,
    gold: BTreeMap<String, GoldSet>,
}

impl Pipeline {
    fn new(config: RunConfig, w: &mut Artifacts) -> Outcome<Pipeline> {
        let bundle = match load(&config)? {
            Ok((bundle, _)) => bundle,
            Err(report) => {
                w.json("validation.json", &report)?;
                return Err(Failure::Invalid(report));
            }
        };
        let filter = filter_spammers(&bundle.judgments, &bundle.schema, &config.spam_filter())?;
        let trusted = if config.allow_thin {
            filter.trusted.clone()
        } else {
            exclude_thin(&filter.trusted, &filter.floor)
        };
        let groups = group_by_sentence(&trusted);
        let vectors = sentence_vectors(&groups, &bundle.schema);
        let scores = ScoreTable::compute(&vectors, &bundle.schema);
        Ok(Pipeline {
            config,
            bundle,
            filter,
            groups,
            vectors,
            scores,
        })
    }

    fn schema(&self) -> &RelationSchema {
        &self.bundle.schema
    }

    fn relations(&self) -> Outcome<Vec<String>> {
        let schema = self.schema();
        let list = match (&self.config.relations, &self.bundle.expert_labels) {
            (Some(list), _) => list.clone(),
            (None, Some(labels)) => {
                let used: BTreeSet<&str> = labels.iter().map(|l| l.relation.as_str()).collect();
                schema
                    .relations()
                    .iter()
                    .filter(|r| used.contains(r.as_str()))
                    .cloned()
                    .collect()
            }
            (None, None) => schema.relations().to_vec(),
        };
        for r in &list {
            if !schema.is_relation(r) {
                return Err(Failure::Config(format!("`{r}` is not a relation of the schema")));
            }
        }
        Ok(list)
    }

    fn relations_or(&self, requested: &[String]) -> Outcome<Vec<String>> {
        if requested.is_empty() {
            return self.relations();
        }
        for r in requested {
            if !self.schema().is_relation(r) {
                return Err(Failure::Config(format!("`{r}` is not a relation of the schema")));
            }
        }
        Ok(requested.to_vec())
    }

    fn expert_labels(&self) -> Outcome<&[crate::schema::ExpertLabel]> {
        self.bundle
            .expert_labels
            .as_deref()
            .ok_or_else(|| Failure::Config("this command needs `expert` labels in the config".into()))
    }

    fn expert_map(&self, relation: &str) -> Outcome<BTreeMap<String, bool>> {
        let labels = self.expert_labels()?;
        Ok(expert_label_map(self.bundle.sentences.values(), labels, relation, self.schema()).0)
    }

    fn adjudications(&self) -> Outcome<Vec<AdjudicationRecord>> {
        match &self.config.adjudications {
            Some(path) => Ok(ingest::parse_adjudications(ingest::open(path)?)?),
            None => Ok(Vec::new()),
        }
    }

    fn training_set(&self, provenance: &str, relation: &str, threshold: f64) -> Outcome<TrainingSet> {
        Ok(match provenance {
            "crowd" => build_crowd_training_set(&self.scores, relation, threshold)?,
            "baseline" => build_baseline_training_set(self.bundle.sentences.values(), relation, self.schema())?,
            "expert" => build_expert_training_set(
                self.bundle.sentences.values(),
                self.expert_labels()?,
                relation,
                self.schema(),
            )?,
            "single" => {
                let seed = self.config.seed(self.config.seeds.single, "single")?;
                build_single_training_set(&self.groups, relation, seed)
            }
            other => return Err(Failure::Config(format!("unknown provenance `{other}`"))),
        })
    }

    fn write_filter(&self, w: &mut Artifacts) -> Outcome<()> {
        w.csv("workers.csv", &self.filter.workers)?;
        w.with("trusted_judgments.csv", |f| ingest::write_judgments(f, &self.filter.trusted))?;
        w.csv("thin_sentences.csv", &self.filter.floor.thin)
    }

    fn write_vectors(&self, w: &mut Artifacts) -> Outcome<()> {
        w.with("vectors.csv", |f| ingest::write_vectors(f, self.schema(), &self.vectors))
    }

    fn write_scores(&self, w: &mut Artifacts) -> Outcome<()> {
        w.csv("scores.csv", &self.scores.rows())?;
        let clarity = clarity_report(&self.scores, self.schema());
        let rows: Vec<ClarityRow> = clarity
            .sentence_clarity
            .iter()
            .map(|(id, &c)| ClarityRow {
                sentence_id: id.clone(),
                clarity: c,
            })
            .collect();
        w.csv("clarity.csv", &rows)?;
        let rows: Vec<RelationClarityRow> = clarity
            .relation_clarity
            .iter()
            .map(|(r, &c)| RelationClarityRow {
                relation: r.clone(),
                clarity: c,
            })
            .collect();
        w.csv("relation_clarity.csv", &rows)
    }

    fn agreement(&self) -> Outcome<BTreeMap<String, (Vec<AgreementPoint>, f64)>> {
        let grid = self.config.grid();
        let mut out = BTreeMap::new();
        for r in self.relations()? {
            let points = agreement_sweep(&self.scores, &self.expert_map(&r)?, &r, &grid)?;
            let best = best_threshold(&points)
                .ok_or_else(|| Failure::Config("threshold grid is empty".into()))?;
            out.insert(r, (points, best));
        }
        Ok(out)
    }

    fn write_agreement(&self, w: &mut Artifacts) -> Outcome<BTreeMap<String, (Vec<AgreementPoint>, f64)>> {
        let sweeps = self.agreement()?;
        let mut choices = Vec::new();
        for (r, (points, best)) in &sweeps {
            w.csv(&format!("agreement_{r}.csv"), points)?;
            let agreement = points
                .iter()
                .find(|p| p.threshold == *best)
                .map_or(0.0, |p| p.agreement);
            choices.push(ThresholdChoice {
                relation: r.clone(),
                agreement_threshold: *best,
                agreement,
            });
        }
        w.json("thresholds.json", &choices)?;
        Ok(sweeps)
    }

    fn queue(&self, agreement: &BTreeMap<String, (Vec<AgreementPoint>, f64)>) -> Outcome<Vec<QueueEntry>> {
        let mut all = Vec::new();
        for (r, (_, t)) in agreement {
            all.extend(disagreements(&self.scores, &self.expert_map(r)?, r, *t)?);
        }
        Ok(all)
    }

    fn write_queue(&self, w: &mut Artifacts) -> Outcome<()> {
        let queue = self.queue(&self.agreement()?)?;
        w.csv("adjudication_queue.csv", &queue)
    }

    fn gold_stage(&self, w: &mut Artifacts) -> Outcome<GoldStage> {
        let agreement = self.write_agreement(w)?;
        let adjudications = self.adjudications()?;
        let mut gold = BTreeMap::new();
        let mut pending = Vec::new();
        for (r, (_, t)) in &agreement {
            match build_evaluation_set(&self.scores, &self.expert_map(r)?, r, *t, &adjudications)? {
                EvaluationSet::Gold(g) => {
                    gold.insert(r.clone(), g);
                }
                EvaluationSet::NeedsAdjudication(q) => pending.extend(q),
            }
        }
        if !pending.is_empty() {
            let queue = w.dir.join("adjudication_queue.csv");
            w.csv("adjudication_queue.csv", &pending)?;
            return Err(Failure::AdjudicationRequired {
                pending: pending.len(),
                queue,
            });
        }
        Ok(GoldStage { agreement, gold })
    }

    fn write_gold(&self, w: &mut Artifacts) -> Outcome<GoldStage> {
        let stage = self.gold_stage(w)?;
        for (r, g) in &stage.gold {
            let srs = self.scores.relation_scores(r)?;
            let rows: Vec<GoldRow> = g
                .labels
                .iter()
                .map(|(id, &label)| GoldRow {
                    sentence_id: id.clone(),
                    label: label as u8,
                    srs: srs[id],
                })
                .collect();
            w.csv(&format!("gold_{r}.csv"), &rows)?;
        }
        let summary: Vec<&GoldSet> = stage.gold.values().collect();
        w.json("gold_summary.json", &summary)?;
        Ok(stage)
    }

    fn import_adjudications(&self, file: &Path, w: &mut Artifacts) -> Outcome<()> {
        let mut records = ingest::parse_adjudications(ingest::open(file)?)?;
        for r in &records {
            if !self.bundle.sentences.contains_key(&r.sentence_id) {
                return Err(Error::Row {
                    line: 0,
                    message: format!("unknown sentence `{}`", r.sentence_id),
                }
                .into());
            }
            if !self.schema().is_relation(&r.relation) {
                return Err(Error::UnknownOption(r.relation.clone()).into());
            }
        }
        records.sort_by(|a, b| (&a.sentence_id, &a.relation).cmp(&(&b.sentence_id, &b.relation)));
        w.with("adjudications.csv", |f| ingest::write_adjudications(f, &records))?;
        let queue = self.queue(&self.agreement()?)?;
        let covered: BTreeSet<(&str, &str)> = records
            .iter()
            .map(|r| (r.sentence_id.as_str(), r.relation.as_str()))
            .collect();
        let pending: Vec<&QueueEntry> = queue
            .iter()
            .filter(|q| !covered.contains(&(q.sentence_id.as_str(), q.relation.as_str())))
            .collect();
        w.json(
            "adjudication_import.json",
            &serde_json::json!({ "records": records.len(), "pending": pending }),
        )
    }

    fn split_plan(&self) -> Outcome<SplitPlan> {
        let seed = self.config.seed(self.config.seeds.splits, "splits")?;
        let labels = self.expert_labels()?;
        let subset: BTreeSet<&str> = labels
            .iter()
            .map(|l| l.sentence_id.as_str())
            .filter(|id| self.bundle.sentences.contains_key(*id))
            .collect();
        let strata: BTreeMap<String, bool> = labels
            .iter()
            .map(|l| (l.sentence_id.clone(), l.decision))
            .collect();
        Ok(make_splits(
            subset.iter().copied(),
            self.bundle.sentences.keys().map(String::as_str),
            self.config.folds,
            seed,
            self.config.stratify.then_some(&strata),
        )?)
    }

    fn write_splits(&self, w: &mut Artifacts) -> Outcome<SplitPlan> {
        let plan = self.split_plan()?;
        w.with("splits.csv", |f| plan.write_csv(f))?;
        Ok(plan)
    }

    fn evaluate(
        &self,
        predictions: &[PathBuf],
        sizes: &[usize],
        relations: &[String],
        name: &str,
        splits: Option<&Path>,
        w: &mut Artifacts,
    ) -> Outcome<()> {
        if !sizes.is_empty() && sizes.len() != predictions.len() {
            return Err(Failure::Config(format!(
                "{} prediction file(s) but {} training size(s)",
                predictions.len(),
                sizes.len()
            )));
        }
        let plan = match splits {
            Some(path) => SplitPlan::parse_csv(ingest::open(path)?)?,
            None => self.split_plan()?,
        };
        let stage = self.gold_stage(w)?;
        let records = predictions
            .iter()
            .map(|p| Ok(ingest::parse_predictions(ingest::open(p)?)?))
            .collect::<Outcome<Vec<_>>>()?;
        for r in self.relations_or(relations)? {
            let gold = stage
                .gold
                .get(&r)
                .ok_or_else(|| Failure::Config(format!("no gold set for `{r}`")))?;
            let srs = self.scores.relation_scores(&r)?;
            let mut reports = Vec::new();
            for (i, preds) in records.iter().enumerate() {
                reports.push(evaluate_predictions(preds, &r, &gold.labels, &srs, &plan, sizes.get(i).copied())?);
            }
            w.json(&format!("evaluation_{name}_{r}.json"), &reports)?;
            if !sizes.is_empty() {
                let curve: Vec<LearningCurvePoint> = reports.iter().filter_map(|c| c.curve_point()).collect();
                w.csv(&format!("learning_curve_{name}_{r}.csv"), &curve)?;
            }
        }
        Ok(())
    }

    fn evaluate_labeling(&self, path: &Path, relations: &[String], name: &str, w: &mut Artifacts) -> Outcome<()> {
        let stage = self.gold_stage(w)?;
        let mut reports = BTreeMap::new();
        for r in self.relations_or(relations)? {
            let gold = stage
                .gold
                .get(&r)
                .ok_or_else(|| Failure::Config(format!("no gold set for `{r}`")))?;
            let candidate = ingest::parse_labeling(ingest::open(path)?, &r)?;
            let srs = self.scores.relation_scores(&r)?;
            reports.insert(r, annotation_quality(&candidate, &gold.labels, &srs)?);
        }
        let pooled: Vec<MetricsReport> = reports.values().copied().collect();
        let micro = micro_average(&pooled)?;
        w.json(
            &format!("quality_{name}.json"),
            &serde_json::json!({ "relations": reports, "micro": micro }),
        )
    }

    /// Crowd F1 sweep per relation against gold, with the F1-maximizing
    /// threshold.
    fn sweeps(&self, stage: &GoldStage) -> Outcome<BTreeMap<String, (Vec<SweepPoint>, f64)>> {
        let grid = self.config.grid();
        let mut out = BTreeMap::new();
        for (r, g) in &stage.gold {
            let srs = self.scores.relation_scores(r)?;
            let gold_srs: BTreeMap<String, f64> = g.labels.keys().map(|id| (id.clone(), srs[id])).collect();
            let points = threshold_sweep(&gold_srs, &g.labels, &grid)?;
            let best = best_sweep_threshold(&points)
                .ok_or_else(|| Failure::Config("threshold grid is empty".into()))?;
            out.insert(r.clone(), (points, best));
        }
        Ok(out)
    }

    fn write_quality(&self, w: &mut Artifacts) -> Outcome<(GoldStage, BTreeMap<String, f64>)> {
        let stage = self.write_gold(w)?;
        let sweeps = self.sweeps(&stage)?;
        let mut table = Vec::new();
        let mut by_source: BTreeMap<&str, Vec<MetricsReport>> = BTreeMap::new();
        let mut best_f1 = BTreeMap::new();
        for (r, g) in &stage.gold {
            let (points, best) = &sweeps[r];
            let rows: Vec<SweepRow> = points.iter().map(SweepPoint::row).collect();
            w.csv(&format!("sweep_{r}.csv"), &rows)?;

            let srs = self.scores.relation_scores(r)?;
            let crowd: BTreeMap<String, bool> = g.labels.keys().map(|id| (id.clone(), srs[id] >= *best)).collect();
            let mut sources = BTreeMap::new();
            sources.insert("crowd", annotation_quality(&crowd, &g.labels, &srs)?);
            sources.insert("expert", annotation_quality(&self.expert_map(r)?, &g.labels, &srs)?);
            let baseline = build_baseline_training_set(self.bundle.sentences.values(), r, self.schema())?;
            sources.insert("baseline", annotation_quality(&baseline.labels(), &g.labels, &srs)?);
            if let Some(seed) = self.config.seeds.single {
                let single = build_single_training_set(&self.groups, r, seed);
                sources.insert("single", annotation_quality(&single.labels(), &g.labels, &srs)?);
            }
            for (source, report) in &sources {
                let t = (*source == "crowd").then_some(*best);
                table.push(QualityRow::new(r, source, t, report));
                by_source.entry(source).or_default().push(*report);
            }
            w.json(
                &format!("report_{r}.json"),
                &RelationReport {
                    relation: r,
                    agreement_threshold: stage.agreement[r].1,
                    best_f1_threshold: *best,
                    gold_size: g.labels.len(),
                    adjudicated: g.adjudicated.len(),
                    dropped_unresolved: g.dropped_unresolved.len(),
                    sources,
                },
            )?;
            best_f1.insert(r.clone(), *best);
        }
        for (source, reports) in &by_source {
            table.push(QualityRow::new("micro", source, None, &micro_average(reports)?));
        }
        w.csv("annotation_quality.csv", &table)?;
        Ok((stage, best_f1))
    }

    fn mcnemar(&self, first: &Path, second: &Path, relation: &str, correction: bool, w: &mut Artifacts) -> Outcome<()> {
        let stage = self.gold_stage(w)?;
        let gold = stage
            .gold
            .get(relation)
            .ok_or_else(|| Failure::Config(format!("no gold set for `{relation}`")))?;
        let a = ingest::parse_labeling(ingest::open(first)?, relation)?;
        let b = ingest::parse_labeling(ingest::open(second)?, relation)?;
        let (ca, cb) = paired_correctness(&a, &b, &gold.labels)?;
        let result = mcnemar(&ca, &cb, correction)?;
        w.json(
            "mcnemar.json",
            &McNemarReport {
                relation,
                first: first.display().to_string(),
                second: second.display().to_string(),
                sentences: ca.len(),
                result,
            },
        )
    }

    fn write_stability(&self, k_max: Option<usize>, shuffle: Option<u64>, w: &mut Artifacts) -> Outcome<()> {
        let order = shuffle.map_or(WorkerOrder::Submission, WorkerOrder::Shuffled);
        let k_max = k_max.or(self.config.k_max).unwrap_or_else(|| default_k_max(&self.groups));
        let cosine = mean_cosine_delta_curve(&self.groups, self.schema(), k_max, order)?;
        w.csv("stability_cosine.csv", &cosine.points)?;
        if self.bundle.expert_labels.is_some() {
            let (stage, best_f1) = self.write_quality(w)?;
            self.write_f1_stability(&stage, &best_f1, k_max, order, w)?;
        }
        Ok(())
    }

    fn write_f1_stability(
        &self,
        stage: &GoldStage,
        best_f1: &BTreeMap<String, f64>,
        k_max: usize,
        order: WorkerOrder,
        w: &mut Artifacts,
    ) -> Outcome<()> {
        let mut gold = BTreeMap::new();
        for (r, g) in &stage.gold {
            gold.insert(
                r.clone(),
                RelationGold {
                    labels: g.labels.clone(),
                    threshold: best_f1[r],
                    srs: self.scores.relation_scores(r)?,
                },
            );
        }
        let curve = quality_by_worker_count(&self.groups, self.schema(), &gold, k_max, order)?;
        let points: &[CurvePoint] = &curve.points;
        w.csv("stability_f1.csv", points)
    }

    fn report(&self, w: &mut Artifacts) -> Outcome<()> {
        w.json("validation.json", &ValidationReport::default())?;
        self.write_filter(w)?;
        self.write_vectors(w)?;
        self.write_scores(w)?;
        let relations = self.relations()?;
        let mut provenances = vec!["crowd", "baseline", "single"];
        if self.bundle.expert_labels.is_some() {
            provenances.push("expert");
        }
        for r in &relations {
            for p in &provenances {
                w.training(&self.training_set(p, r, self.config.label_threshold)?)?;
            }
        }
        let k_max = self.config.k_max.unwrap_or_else(|| default_k_max(&self.groups));
        let cosine = mean_cosine_delta_curve(&self.groups, self.schema(), k_max, WorkerOrder::Submission)?;
        w.csv("stability_cosine.csv", &cosine.points)?;
        if self.bundle.expert_labels.is_some() {
            self.write_splits(w)?;
            let (stage, best_f1) = self.write_quality(w)?;
            self.write_f1_stability(&stage, &best_f1, k_max, WorkerOrder::Submission, w)?;
        }
        self.manifest(w)
    }

    fn manifest(&self, w: &mut Artifacts) -> Outcome<()> {
        let mut entries = Vec::new();
        for name in &w.written {
            let bytes = std::fs::read(w.dir.join(name)).map_err(Error::from)?;
            entries.push(ManifestEntry {
                file: name.clone(),
                bytes: bytes.len() as u64,
                sha256: format!("{:x}", Sha256::digest(&bytes)),
            });
        }
        w.json("manifest.json", &entries)
    }
}

fn simulate(config: &SimConfig, out: &Path) -> Outcome<()> {
    let (bundle, latent) = simulator::generate(config)?;
    let mut w = Artifacts::new(out.to_path_buf());
    let schema_text = bundle.schema.to_toml_string();
    w.with("schema.toml", |f| Ok(f.write_all(schema_text.as_bytes())?))?;
    let sentences: Vec<_> = bundle.sentences.values().cloned().collect();
    w.with("sentences.csv", |f| ingest::write_sentences(f, &sentences))?;
    w.with("judgments.csv", |f| ingest::write_judgments(f, &bundle.judgments))?;
    w.with("expert.csv", |f| ingest::write_expert_labels(f, bundle.expert_labels()))?;
    let adjudications = latent.adjudications(&bundle);
    w.with("adjudications.csv", |f| ingest::write_adjudications(f, &adjudications))?;
    w.json("latent.json", &latent)?;
    let run = RunConfig {
        schema: Some("schema.toml".into()),
        sentences: "sentences.csv".into(),
        judgments: "judgments.csv".into(),
        expert: Some("expert.csv".into()),
        adjudications: Some("adjudications.csv".into()),
        out: Some("results".into()),
        relations: None,
        spam: SpamSection::default(),
        worker_floor: defaults::worker_floor(),
        allow_thin: false,
        grid: None,
        label_threshold: defaults::label_threshold(),
        folds: defaults::folds(),
        stratify: false,
        continuity_correction: defaults::continuity_correction(),
        k_max: None,
        seeds: Seeds {
            splits: Some(config.seed),
            single: Some(config.seed),
        },
    };
    let text = toml::to_string(&run).map_err(|e| Failure::Config(e.to_string()))?;
    w.with("crowdtruth.toml", |f| Ok(f.write_all(text.as_bytes())?))
}
