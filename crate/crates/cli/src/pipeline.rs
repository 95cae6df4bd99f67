// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end run: localize, embed, derive vectors, ablate.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use assertscope::dump::{read_json, write_json};
use assertscope::embed::{self, region_overlay, two_means, LabelMap};
use assertscope::localize::{sweep_layers_full, LayerCurve, LocalizeOptions, DEFAULT_MIN_CLUSTER};
use assertscope::preprocess::debias_all_layers;
use assertscope::probe::{ablate, ablation_svg, fit_probe, groups_from_labels, write_ablation_csv, Groups};
use assertscope::similarity::{correlation_matrix, region_stats, score_order, RegionStats};
use assertscope::steering::{diff_of_means, orthogonality, write_vectors};
use assertscope::{
    linalg, read_dump, synth, ActivationDump, AblationReport, Error, Objective, PlantSpec, PlantTruth,
    SampleMeta, SteeringVector, TsneParams,
};
use serde::{Deserialize, Serialize};

use crate::{CliError, StageExt};

pub const DEFAULT_EXTRA_LOWS: usize = 25;

/// Everything that determines a run. Echoed to `config.json` without the
/// output directory, so two runs into different directories echo the same
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    /// Generate the dump instead of reading one.
    pub synth: Option<PlantSpec>,
    #[serde(skip)]
    pub out: PathBuf,
    pub layer: Option<usize>,
    pub min_cluster: usize,
    pub objective: Objective,
    pub debias: bool,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub ridge_lambda: f64,
    /// Low items added to the embedding; `None` takes the lowest-scored.
    pub extra_lows: Option<Vec<String>>,
    pub n_extra_lows: usize,
    /// `sample_id -> sub-component` labels; `None` uses 2-means proposals.
    pub subcomponent_labels: Option<PathBuf>,
    /// `sample_id -> evaluation group` for the ablation report.
    pub group_labels: Option<PathBuf>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            synth: None,
            out: PathBuf::from("out"),
            layer: None,
            min_cluster: DEFAULT_MIN_CLUSTER,
            objective: Objective::Cross,
            debias: true,
            perplexity: 5.0,
            tsne_iterations: 1000,
            ridge_lambda: assertscope::probe::DEFAULT_RIDGE_LAMBDA,
            extra_lows: None,
            n_extra_lows: DEFAULT_EXTRA_LOWS,
            subcomponent_labels: None,
            group_labels: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Synthetic run on the default plant with `seed`.
    pub fn synth_default(seed: u64, out: impl Into<PathBuf>) -> Self {
        Self { synth: Some(PlantSpec::with_seed(seed)), out: out.into(), seed, ..Self::default() }
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let must_exist = |p: &Path| -> Result<(), CliError> {
            fs::metadata(p)
                .map(|_| ())
                .map_err(|e| CliError::Stage { stage: "config", source: Error::Io { path: p.to_owned(), source: e } })
        };
        match (&self.input, &self.synth) {
            (Some(p), None) => must_exist(p)?,
            (None, Some(_)) => {}
            _ => return Err(CliError::Usage("give exactly one of an input dump or a synthetic spec".into())),
        }
        for p in [&self.subcomponent_labels, &self.group_labels].into_iter().flatten() {
            must_exist(p)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Recovery {
    pub vector: String,
    pub cos_emotional: f64,
    pub cos_logical: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub n_samples: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub best_layer: usize,
    pub best_borderline: usize,
    pub best_objective: f64,
    pub n_low: usize,
    pub n_high: usize,
    pub regions: RegionStats,
    pub subcomponents: BTreeMap<String, Vec<String>>,
    pub vector_cosines: Vec<(String, String, f64)>,
    pub tsne_kl_initial: f64,
    pub tsne_kl_final: f64,
    pub flagged: BTreeMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub recovery: Vec<Recovery>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub layers: LayerCurve,
    pub best_layer: usize,
    pub best_borderline: usize,
    pub high_ids: Vec<String>,
    pub subcomponents: BTreeMap<String, Vec<String>>,
    pub vectors: Vec<SteeringVector<f64>>,
    pub reports: Vec<AblationReport>,
    pub truth: Option<PlantTruth>,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

struct Artifacts<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Artifacts<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| Error::Io { path: p, source: e }).stage("write")
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, v: &T) -> Result<(), CliError> {
        let p = self.path(name);
        write_json(&p, v).stage("write")
    }

    fn csv(
        &mut self,
        name: &str,
        f: impl FnOnce(BufWriter<fs::File>) -> assertscope::Result<()>,
    ) -> Result<(), CliError> {
        let p = self.path(name);
        let file = fs::File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e }).stage("write")?;
        f(BufWriter::new(file)).stage("write")
    }
}

fn load(cfg: &PipelineConfig) -> Result<(ActivationDump, Vec<SampleMeta>, Option<PlantTruth>), CliError> {
    match (&cfg.input, &cfg.synth) {
        (Some(p), _) => {
            let (d, m) = read_dump(p).stage("load")?;
            Ok((d, m, None))
        }
        (None, Some(spec)) => {
            let (d, m, t) = synth::generate(spec).stage("synth")?;
            Ok((d, m, Some(t)))
        }
        (None, None) => Err(CliError::Usage("no input dump".into())),
    }
}

fn ids_of(meta: &[SampleMeta], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| meta[i].sample_id.clone()).collect()
}

/// Run every stage and write the artifacts into `cfg.out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, CliError> {
    cfg.check_paths()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Io { path: cfg.out.clone(), source: e }).stage("output")?;
    let mut art = Artifacts { dir: &cfg.out, files: Vec::new() };
    art.json("config.json", cfg)?;

    let (raw, meta, truth) = load(cfg)?;
    let dump = if cfg.debias { debias_all_layers(&raw, &meta).stage("debias")?.0 } else { raw };

    // Localize.
    let opts = LocalizeOptions { min_cluster: cfg.min_cluster, objective: cfg.objective, debias: false };
    let sweep = sweep_layers_full(&dump, &meta, opts).stage("localize")?;
    let layer = match cfg.layer {
        Some(l) => {
            dump.check_layer(l).stage("localize")?;
            l
        }
        None => sweep.curve.best_layer,
    };
    let partition = &sweep.partitions[layer];
    let b = partition.best_b;
    art.csv("layers.csv", |w| sweep.curve.write_csv(w))?;
    art.text("layers.svg", &sweep.curve.to_svg())?;
    art.csv("partition.csv", |w| partition.write_csv(w))?;
    art.text("partition.svg", &partition.to_svg())?;

    // Similarity at the chosen layer.
    let sim = correlation_matrix(&dump, &meta, layer).stage("similarity")?;
    let regions = region_stats(&sim, b).stage("similarity")?;
    art.csv("similarity.csv", |w| sim.write_csv(w))?;
    art.text("similarity.svg", &sim.to_svg())?;

    let order = score_order(&meta);
    let low_idx = &order[..b];
    let high_idx = &order[b..];
    let high_ids = ids_of(&meta, high_idx);
    let low_ids: BTreeSet<String> = ids_of(&meta, low_idx).into_iter().collect();

    // Embed the high items plus a handful of low ones.
    let extra: Vec<String> = match &cfg.extra_lows {
        Some(ids) => ids.clone(),
        None => ids_of(&meta, &low_idx[..cfg.n_extra_lows.min(low_idx.len())]),
    };
    let index = assertscope::dump::id_index(&meta);
    let mut embed_ids = high_ids.clone();
    for id in &extra {
        if !index.contains_key(id.as_str()) {
            return Err(CliError::Stage {
                stage: "embed",
                source: Error::Validation(format!("unknown extra low sample_id '{id}'")),
            });
        }
        if !embed_ids.contains(id) {
            embed_ids.push(id.clone());
        }
    }
    let rows: Vec<&[f32]> = embed_ids.iter().map(|id| dump.vector(index[id.as_str()], layer)).collect();
    let params = TsneParams {
        perplexity: cfg.perplexity,
        iterations: cfg.tsne_iterations,
        seed: cfg.seed,
        ..TsneParams::default()
    };
    let emb = embed::tsne(&rows, &embed_ids, &params).stage("embed")?;

    let labels: LabelMap = match &cfg.subcomponent_labels {
        Some(p) => read_json(p).stage("embed")?,
        None => {
            let coords: Vec<[f64; 2]> =
                emb.coords[..high_ids.len()].iter().map(|c| [c[0] as f64, c[1] as f64]).collect();
            let pts: Vec<&[f64]> = coords.iter().map(|c| &c[..]).collect();
            two_means(&pts)
                .into_iter()
                .zip(&high_ids)
                .map(|(k, id)| (id.clone(), format!("cluster_{k}")))
                .collect()
        }
    };
    let overlay = region_overlay(&emb, &labels, &meta).stage("embed")?;
    art.csv("embedding.csv", |w| overlay.write_csv(w))?;
    art.text("embedding.svg", &overlay.to_svg(&format!("t-SNE of high items, layer {layer}")))?;

    // Steering vectors: each sub-component against the unlabeled low items.
    let subcomponents: BTreeMap<String, Vec<String>> = embed::groups_by_label(&labels);
    let labeled: BTreeSet<&String> = labels.keys().collect();
    let baseline: BTreeSet<String> = low_ids.iter().filter(|id| !labeled.contains(id)).cloned().collect();
    let mut vectors = Vec::new();
    for (name, members) in &subcomponents {
        let group: BTreeSet<String> = members.iter().cloned().collect();
        vectors.push(diff_of_means(&dump, &meta, &group, &baseline, layer, name).stage("steer")?);
    }
    write_vectors(&art.path("steering.json"), &vectors).stage("write")?;
    let mut vector_cosines = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let c = orthogonality(&vectors[i], &vectors[j]).stage("steer")?;
            vector_cosines.push((vectors[i].label.clone(), vectors[j].label.clone(), c));
        }
    }

    // Ablation against a frozen probe.
    let groups: Groups = match (&cfg.group_labels, &truth) {
        (Some(p), _) => groups_from_labels(&read_json::<LabelMap>(p).stage("ablate")?),
        (None, Some(t)) => groups_from_labels(&t.group_labels(&meta)),
        (None, None) => {
            let mut g: Groups = subcomponents
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect();
            g.push(("low".to_string(), baseline.clone()));
            g
        }
    };
    let probe = fit_probe(&dump, &meta, layer, cfg.ridge_lambda).stage("ablate")?;
    let reports: Vec<AblationReport> = vectors
        .iter()
        .map(|v| ablate(&dump, &meta, &probe, v, &groups))
        .collect::<assertscope::Result<_>>()
        .stage("ablate")?;
    art.csv("ablation.csv", |w| write_ablation_csv(&reports, w))?;
    art.text("ablation.svg", &ablation_svg(&reports))?;

    let recovery = truth
        .as_ref()
        .map(|t| {
            vectors
                .iter()
                .map(|v| Recovery {
                    vector: v.label.clone(),
                    cos_emotional: linalg::cosine(&v.direction, &t.emotional_axis),
                    cos_logical: linalg::cosine(&v.direction, &t.logical_axis),
                })
                .collect()
        })
        .unwrap_or_default();
    let summary = Summary {
        n_samples: dump.n_samples(),
        n_layers: dump.n_layers(),
        d_model: dump.d_model(),
        best_layer: layer,
        best_borderline: b,
        best_objective: partition.best_value,
        n_low: b,
        n_high: high_ids.len(),
        regions,
        subcomponents: subcomponents.clone(),
        vector_cosines,
        tsne_kl_initial: emb.kl_history[0],
        tsne_kl_final: *emb.kl_history.last().expect("kl history is never empty"),
        flagged: reports
            .iter()
            .map(|r| {
                let g = r.groups.iter().filter(|g| g.flagged).map(|g| g.name.clone()).collect();
                (r.vector.clone(), g)
            })
            .collect(),
        recovery,
    };
    art.json("summary.json", &summary)?;

    Ok(PipelineOutcome {
        layers: sweep.curve,
        best_layer: layer,
        best_borderline: b,
        high_ids,
        subcomponents,
        vectors,
        reports,
        truth,
        summary,
        files: art.files,
    })
}
