// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use assertscope::dump::{id_index, read_json, write_json};
use assertscope::embed::{self, region_overlay, LabelMap};
use assertscope::localize::{sweep_layers_full, LocalizeOptions, DEFAULT_MIN_CLUSTER};
use assertscope::preprocess::{debias_all_layers, source_debias};
use assertscope::probe::{ablate, ablation_svg, fit_probe, groups_from_labels, write_ablation_csv};
use assertscope::similarity::{correlation_matrix, region_stats};
use assertscope::steering::{diff_of_means, read_vectors, write_vectors};
use assertscope::{read_dump, synth, write_dump, ActivationDump, Error, Objective, PlantSpec, SampleMeta, TsneParams};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::pipeline::{run_pipeline, PipelineConfig, DEFAULT_EXTRA_LOWS};
use crate::{CliError, StageExt};

#[derive(Debug, Parser)]
#[command(name = "assertscope", version, about = "Localize and decompose assertiveness representations")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dump with planted structure.
    Synth(SynthArgs),
    /// Project per-source mean offsets out of every layer.
    Debias(DebiasArgs),
    /// Score-ordered correlation matrix at one layer.
    Similarity(SimilarityArgs),
    /// Borderline and layer sweeps.
    Localize(LocalizeArgs),
    /// t-SNE of selected items at one layer.
    Embed(EmbedArgs),
    /// Difference-of-means steering vectors from a label file.
    Steer(SteerArgs),
    /// RMSE change of a ridge probe after removing steering vectors.
    Ablate(AblateArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Cross,
    Contrast,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Cross => Objective::Cross,
            ObjectiveArg::Contrast => Objective::Contrast,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output dump path; the sidecar and `<stem>.truth.json` go next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation of the activations.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct DebiasArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Only this layer; all layers by default.
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Debug, Args)]
struct SimilarityArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
    /// Use raw activations instead of debiased ones.
    #[arg(long)]
    no_debias: bool,
    /// Also report region means at this borderline.
    #[arg(long)]
    borderline: Option<usize>,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_CLUSTER)]
    min_cluster: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Cross)]
    objective: ObjectiveArg,
    #[arg(long)]
    no_debias: bool,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
    /// JSON list of sample ids to embed.
    #[arg(long)]
    ids: PathBuf,
    /// JSON map `sample_id -> label` drawn as overlay circles.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_debias: bool,
}

#[derive(Debug, Args)]
struct SteerArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    layer: usize,
    /// JSON map `sample_id -> label`.
    #[arg(long)]
    labels: PathBuf,
    /// Label whose members form the reference group.
    #[arg(long)]
    baseline: String,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_debias: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Steering vector JSON (one object or an array).
    #[arg(long)]
    vectors: PathBuf,
    /// JSON map `sample_id -> group`.
    #[arg(long)]
    groups: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
    #[arg(long)]
    no_debias: bool,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with_all = ["synth_default", "config"])]
    input: Option<PathBuf>,
    /// Use the default synthetic plant instead of an input dump.
    #[arg(long, conflicts_with = "config")]
    synth_default: bool,
    /// Re-run from an echoed `config.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the layer sweep's choice and use this layer.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MIN_CLUSTER)]
    min_cluster: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Cross)]
    objective: ObjectiveArg,
    #[arg(long)]
    no_debias: bool,
    #[arg(long, default_value_t = 5.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    tsne_iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
    /// JSON list of low items to add to the embedding.
    #[arg(long)]
    extra_lows: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EXTRA_LOWS)]
    n_extra_lows: usize,
    /// JSON map `sample_id -> sub-component` replacing the 2-means proposal.
    #[arg(long)]
    subcomponents: Option<PathBuf>,
    /// JSON map `sample_id -> group` for the ablation report.
    #[arg(long)]
    groups: Option<PathBuf>,
}

pub(crate) fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Debias(a) => debias_cmd(a),
        Command::Similarity(a) => similarity_cmd(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Steer(a) => steer_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_owned(), source: e }
}

fn out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e)).stage("output")
}

fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(path, e)).stage("write")
}

fn with_file(path: &Path, f: impl FnOnce(BufWriter<fs::File>) -> assertscope::Result<()>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e)).stage("write")?;
    f(BufWriter::new(file)).stage("write")
}

fn load(path: &Path, debias: bool) -> Result<(ActivationDump, Vec<SampleMeta>), CliError> {
    let (dump, meta) = read_dump(path).stage("load")?;
    if debias {
        let (d, _) = debias_all_layers(&dump, &meta).stage("debias")?;
        Ok((d, meta))
    } else {
        Ok((dump, meta))
    }
}

fn synth_cmd(a: SynthArgs) -> Result<(), CliError> {
    let mut spec = PlantSpec::with_seed(a.seed);
    if let Some(s) = a.sigma {
        spec.noise_sigma = s;
    }
    let (dump, meta, truth) = synth::generate(&spec).stage("synth")?;
    write_dump(&dump, &meta, &a.out).stage("write")?;
    write_json(&a.out.with_extension("truth.json"), &truth).stage("write")?;
    write_json(&a.out.with_extension("spec.json"), &spec).stage("write")
}

fn debias_cmd(a: DebiasArgs) -> Result<(), CliError> {
    let (dump, meta) = read_dump(&a.input).stage("load")?;
    let (out, reports) = match a.layer {
        Some(l) => {
            let (d, r) = source_debias(&dump, &meta, l).stage("debias")?;
            (d, vec![r])
        }
        None => debias_all_layers(&dump, &meta).stage("debias")?,
    };
    write_dump(&out, &meta, &a.out).stage("write")?;
    write_json(&a.out.with_extension("debias.json"), &reports).stage("write")
}

fn similarity_cmd(a: SimilarityArgs) -> Result<(), CliError> {
    let (dump, meta) = load(&a.input, !a.no_debias)?;
    let sim = correlation_matrix(&dump, &meta, a.layer).stage("similarity")?;
    out_dir(&a.out)?;
    with_file(&a.out.join("similarity.csv"), |w| sim.write_csv(w))?;
    write_text(&a.out.join("similarity.svg"), &sim.to_svg())?;
    if let Some(b) = a.borderline {
        let stats = region_stats(&sim, b).stage("similarity")?;
        write_json(&a.out.join("regions.json"), &stats).stage("write")?;
    }
    Ok(())
}

fn localize_cmd(a: LocalizeArgs) -> Result<(), CliError> {
    let (dump, meta) = read_dump(&a.input).stage("load")?;
    let opts = LocalizeOptions { min_cluster: a.min_cluster, objective: a.objective.into(), debias: !a.no_debias };
    let sweep = sweep_layers_full(&dump, &meta, opts).stage("localize")?;
    out_dir(&a.out)?;
    let best = &sweep.partitions[sweep.curve.best_layer];
    with_file(&a.out.join("layers.csv"), |w| sweep.curve.write_csv(w))?;
    write_text(&a.out.join("layers.svg"), &sweep.curve.to_svg())?;
    with_file(&a.out.join("partition.csv"), |w| best.write_csv(w))?;
    write_text(&a.out.join("partition.svg"), &best.to_svg())?;
    write_json(&a.out.join("localize.json"), &sweep.curve).stage("write")
}

fn embed_cmd(a: EmbedArgs) -> Result<(), CliError> {
    let (dump, meta) = load(&a.input, !a.no_debias)?;
    dump.check_layer(a.layer).stage("embed")?;
    let ids: Vec<String> = read_json(&a.ids).stage("embed")?;
    let index = id_index(&meta);
    let mut rows = Vec::with_capacity(ids.len());
    for id in &ids {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| Error::Validation(format!("unknown sample_id '{id}'")))
            .stage("embed")?;
        rows.push(dump.vector(i, a.layer));
    }
    let params = TsneParams { perplexity: a.perplexity, iterations: a.iterations, seed: a.seed, ..Default::default() };
    let emb = embed::tsne(&rows, &ids, &params).stage("embed")?;
    let labels: LabelMap = match &a.labels {
        Some(p) => read_json(p).stage("embed")?,
        None => BTreeMap::new(),
    };
    let overlay = region_overlay(&emb, &labels, &meta).stage("embed")?;
    out_dir(&a.out)?;
    with_file(&a.out.join("embedding.csv"), |w| overlay.write_csv(w))?;
    write_text(&a.out.join("embedding.svg"), &overlay.to_svg(&format!("t-SNE, layer {}", a.layer)))?;
    write_json(&a.out.join("embedding.json"), &emb).stage("write")
}

fn steer_cmd(a: SteerArgs) -> Result<(), CliError> {
    let (dump, meta) = load(&a.input, !a.no_debias)?;
    let labels: LabelMap = read_json(&a.labels).stage("steer")?;
    let groups = embed::groups_by_label(&labels);
    let base: BTreeSet<String> = groups
        .get(&a.baseline)
        .ok_or_else(|| CliError::Usage(format!("baseline label '{}' not found in label file", a.baseline)))?
        .iter()
        .cloned()
        .collect();
    let mut vectors = Vec::new();
    for (name, members) in groups.iter().filter(|(k, _)| **k != a.baseline) {
        let g: BTreeSet<String> = members.iter().cloned().collect();
        vectors.push(diff_of_means(&dump, &meta, &g, &base, a.layer, name).stage("steer")?);
    }
    if vectors.is_empty() {
        return Err(CliError::Usage("label file has no group besides the baseline".into()));
    }
    write_vectors(&a.out, &vectors).stage("write")
}

fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    let (dump, meta) = load(&a.input, !a.no_debias)?;
    let vectors = read_vectors(&a.vectors).stage("ablate")?;
    let groups = groups_from_labels(&read_json::<LabelMap>(&a.groups).stage("ablate")?);
    let mut probes = BTreeMap::new();
    let mut reports = Vec::new();
    for v in &vectors {
        let probe = match probes.entry(v.layer) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                dump.check_layer(v.layer).stage("ablate")?;
                e.insert(fit_probe(&dump, &meta, v.layer, a.ridge_lambda).stage("ablate")?)
            }
        };
        reports.push(ablate(&dump, &meta, probe, v, &groups).stage("ablate")?);
    }
    out_dir(&a.out)?;
    with_file(&a.out.join("ablation.csv"), |w| write_ablation_csv(&reports, w))?;
    write_text(&a.out.join("ablation.svg"), &ablation_svg(&reports))?;
    write_json(&a.out.join("ablation.json"), &reports).stage("write")
}

fn pipeline_cmd(a: PipelineArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<PipelineConfig>(p).stage("config")?,
        None => {
            let extra_lows = match &a.extra_lows {
                Some(p) => Some(read_json::<Vec<String>>(p).stage("config")?),
                None => None,
            };
            let synth = a.synth_default.then(|| PlantSpec::with_seed(a.seed));
            if synth.is_none() && a.input.is_none() {
                return Err(CliError::Usage("pipeline needs --input, --synth-default or --config".into()));
            }
            PipelineConfig {
                input: a.input.clone(),
                synth,
                layer: a.layer,
                min_cluster: a.min_cluster,
                objective: a.objective.into(),
                debias: !a.no_debias,
                perplexity: a.perplexity,
                tsne_iterations: a.tsne_iterations,
                ridge_lambda: a.ridge_lambda,
                extra_lows,
                n_extra_lows: a.n_extra_lows,
                subcomponent_labels: a.subcomponents.clone(),
                group_labels: a.groups.clone(),
                seed: a.seed,
                ..PipelineConfig::default()
            }
        }
    };
    cfg.out = a.out;
    let outcome = run_pipeline(&cfg)?;
    let s = &outcome.summary;
    println!(
        "best layer {} borderline {} ({} low / {} high); {} vectors; {} files in {}",
        s.best_layer,
        s.best_borderline,
        s.n_low,
        s.n_high,
        outcome.vectors.len(),
        outcome.files.len(),
        cfg.out.display()
    );
    Ok(())
}
