//! End-to-end orchestration: generate → ingest → fuse → analyze →
//! train/cluster/embed/cotrain → report, driven by a single declarative
//! config with deterministic seeds throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterAlgo};
use crate::cotrain::{self, ViewSplit};
use crate::dnp3;
use crate::fusion::{
    self, FeatureMatrix, FusedTable, Label, LabelMode, LabelVector, PhysicalMode, ScaleMethod,
    FUSED_COLUMNS, N_CYBER_COLUMNS,
};
use crate::ingest;
use crate::learn::{self, Algo, ClassifierSpec};
use crate::manifold::{self, ManifoldAlgo, ManifoldParams};
use crate::scenario::{self, AttackWindow, Manifest, ScenarioSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        message: e.to_string(),
    }
}

// ------------------------------------------------------------- config

/// One named scenario to synthesize and analyze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: ScenarioSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysicalModeOpt {
    Impute,
    Drop,
}

impl PhysicalModeOpt {
    pub fn to_mode(self) -> PhysicalMode {
        match self {
            PhysicalModeOpt::Impute => PhysicalMode::Impute,
            PhysicalModeOpt::Drop => PhysicalMode::Drop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleOpt {
    Minmax,
    LogThenMinmax,
    None,
}

impl ScaleOpt {
    pub fn to_method(self) -> ScaleMethod {
        match self {
            ScaleOpt::Minmax => ScaleMethod::MinMax,
            ScaleOpt::LogThenMinmax => ScaleMethod::LogThenMinMax,
            ScaleOpt::None => ScaleMethod::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOpt {
    Snort,
    AttackWindow,
    Both,
}

impl LabelOpt {
    /// The label source(s) to run; `both` produces the paired table.
    pub fn modes(self) -> Vec<LabelMode> {
        match self {
            LabelOpt::Snort => vec![LabelMode::Snort],
            LabelOpt::AttackWindow => vec![LabelMode::AttackWindow],
            LabelOpt::Both => vec![LabelMode::Snort, LabelMode::AttackWindow],
        }
    }

    /// The mode classifiers train on when only one table is wanted.
    pub fn primary(self) -> LabelMode {
        match self {
            LabelOpt::Snort => LabelMode::Snort,
            LabelOpt::AttackWindow | LabelOpt::Both => LabelMode::AttackWindow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuseOptions {
    #[serde(default = "default_physical_mode")]
    pub physical_mode: PhysicalModeOpt,
    #[serde(default = "default_scale")]
    pub scale: ScaleOpt,
    #[serde(default = "default_label_mode")]
    pub label_mode: LabelOpt,
}

fn default_physical_mode() -> PhysicalModeOpt {
    PhysicalModeOpt::Impute
}
fn default_scale() -> ScaleOpt {
    ScaleOpt::Minmax
}
fn default_label_mode() -> LabelOpt {
    LabelOpt::AttackWindow
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions {
            physical_mode: default_physical_mode(),
            scale: default_scale(),
            label_mode: default_label_mode(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatAnOptions {
    #[serde(default = "default_pca_threshold")]
    pub pca_threshold: f64,
    #[serde(default = "default_shapiro_cutoff")]
    pub shapiro_cutoff: f64,
}

fn default_pca_threshold() -> f64 {
    0.95
}
fn default_shapiro_cutoff() -> f64 {
    0.5
}

/// The three feature scopes of the comparison experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    PureCyber,
    PurePhysical,
    CyberPhysical,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [
        FeatureSet::PureCyber,
        FeatureSet::PurePhysical,
        FeatureSet::CyberPhysical,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FeatureSet::PureCyber => "pure_cyber",
            FeatureSet::PurePhysical => "pure_physical",
            FeatureSet::CyberPhysical => "cyber_physical",
        }
    }

    /// Fused-table column names belonging to this scope.
    pub fn columns(self) -> Vec<String> {
        let names = |defs: &[fusion::ColumnDef]| {
            defs.iter().map(|c| c.name.to_string()).collect::<Vec<_>>()
        };
        match self {
            FeatureSet::PureCyber => names(&FUSED_COLUMNS[..N_CYBER_COLUMNS]),
            FeatureSet::PurePhysical => names(&FUSED_COLUMNS[N_CYBER_COLUMNS..]),
            FeatureSet::CyberPhysical => names(&FUSED_COLUMNS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOptions {
    #[serde(default = "default_learn_algos")]
    pub algos: Vec<String>,
    #[serde(default = "default_feature_sets")]
    pub feature_sets: Vec<FeatureSet>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Per-algorithm hyperparameter grids, cross-validated before the
    /// final fit; absent algorithms use their defaults.
    #[serde(default)]
    pub grids: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    #[serde(default = "default_learn_seed")]
    pub seed: u64,
}

fn default_learn_algos() -> Vec<String> {
    vec!["DT".into(), "RF".into()]
}
fn default_feature_sets() -> Vec<FeatureSet> {
    FeatureSet::ALL.to_vec()
}
fn default_train_fraction() -> f64 {
    0.7
}
fn default_learn_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    #[serde(default = "default_cluster_algos")]
    pub algos: Vec<String>,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_cluster_rows")]
    pub max_rows: usize,
    #[serde(default = "default_cluster_seed")]
    pub seed: u64,
}

fn default_cluster_algos() -> Vec<String> {
    vec!["KMEANS".into(), "AGGLOMERATIVE".into()]
}
fn default_k_min() -> usize {
    2
}
fn default_k_max() -> usize {
    10
}
fn default_cluster_rows() -> usize {
    400
}
fn default_cluster_seed() -> u64 {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldOptions {
    #[serde(default = "default_manifold_algos")]
    pub algos: Vec<String>,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_manifold_rows")]
    pub max_rows: usize,
    #[serde(default = "default_manifold_seed")]
    pub seed: u64,
}

fn default_manifold_algos() -> Vec<String> {
    vec!["MDS".into(), "ISOMAP".into()]
}
fn default_dims() -> usize {
    2
}
fn default_manifold_rows() -> usize {
    150
}
fn default_manifold_seed() -> u64 {
    13
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotrainOptions {
    #[serde(default = "default_cotrain_base")]
    pub base: String,
    /// Fraction of the training rows that keep their labels; the rest
    /// form the unlabeled pool (1:2 ratio by default).
    #[serde(default = "default_labeled_fraction")]
    pub labeled_fraction: f64,
    #[serde(default = "default_max_loops")]
    pub max_loops: usize,
    #[serde(default = "default_cotrain_seed")]
    pub seed: u64,
}

fn default_cotrain_base() -> String {
    "DT".into()
}
fn default_labeled_fraction() -> f64 {
    1.0 / 3.0
}
fn default_max_loops() -> usize {
    cotrain::DEFAULT_MAX_LOOPS
}
fn default_cotrain_seed() -> u64 {
    17
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default)]
    pub fuse: FuseOptions,
    #[serde(default)]
    pub featan: Option<FeatAnOptions>,
    #[serde(default)]
    pub learn: Option<LearnOptions>,
    #[serde(default)]
    pub cluster: Option<ClusterOptions>,
    #[serde(default)]
    pub manifold: Option<ManifoldOptions>,
    #[serde(default)]
    pub cotrain: Option<CotrainOptions>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::Config(msg));
        if self.scenarios.is_empty() {
            return fail("at least one scenario is required".into());
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.scenarios.len() {
            return fail("scenario names must be unique".into());
        }
        for entry in &self.scenarios {
            entry
                .spec
                .validate()
                .map_err(|e| PipelineError::Config(format!("scenario {}: {e}", entry.name)))?;
        }
        if let Some(learn) = &self.learn {
            for tag in &learn.algos {
                if Algo::from_tag(tag).is_none() {
                    return fail(format!("unknown classifier {tag:?}"));
                }
            }
            if !(0.0 < learn.train_fraction && learn.train_fraction < 1.0) {
                return fail("train_fraction must lie in (0, 1)".into());
            }
            if learn.feature_sets.is_empty() || learn.algos.is_empty() {
                return fail("learn needs at least one algorithm and feature set".into());
            }
        }
        if let Some(cl) = &self.cluster {
            for tag in &cl.algos {
                if ClusterAlgo::from_tag(tag).is_none() {
                    return fail(format!("unknown clustering algorithm {tag:?}"));
                }
            }
            if cl.k_min < 2 || cl.k_min > cl.k_max {
                return fail("cluster k range must satisfy 2 <= k_min <= k_max".into());
            }
        }
        if let Some(mf) = &self.manifold {
            for tag in &mf.algos {
                if ManifoldAlgo::from_tag(tag).is_none() {
                    return fail(format!("unknown manifold algorithm {tag:?}"));
                }
            }
        }
        if let Some(ct) = &self.cotrain {
            if Algo::from_tag(&ct.base).is_none() {
                return fail(format!("unknown co-training base classifier {:?}", ct.base));
            }
            if !(0.0 < ct.labeled_fraction && ct.labeled_fraction < 1.0) {
                return fail("labeled_fraction must lie in (0, 1)".into());
            }
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash over the canonical JSON serialization;
    /// covers every value that can change an emitted number.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

// ------------------------------------------------------------- report

/// One emitted metric table: CSV on disk plus aligned text in the
/// summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let fmt_row = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", fmt_row(&self.columns));
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        for row in &self.rows {
            let _ = writeln!(out, "{}", fmt_row(row));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub crate_version: String,
    pub seeds: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub tables: Vec<ReportTable>,
    pub provenance: Provenance,
}

impl Report {
    /// Write each table as `<name>.csv` plus a combined `summary.txt`;
    /// returns the written paths in emission order.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut summary = String::new();
        let _ = writeln!(summary, "config hash : {}", self.provenance.config_hash);
        let _ = writeln!(summary, "version     : {}", self.provenance.crate_version);
        for (name, seed) in &self.provenance.seeds {
            let _ = writeln!(summary, "seed        : {name} = {seed}");
        }
        for table in &self.tables {
            let path = dir.join(format!("{}.csv", table.name));
            std::fs::write(&path, table.to_csv())?;
            written.push(path);
            let _ = writeln!(summary, "\n== {} ==\n{}", table.name, table.to_text());
        }
        let summary_path = dir.join("summary.txt");
        std::fs::write(&summary_path, summary)?;
        written.push(summary_path);
        Ok(written)
    }
}

// ----------------------------------------------------- fusion plumbing

/// The generated-or-loaded inputs of one scenario.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub packets: Vec<ingest::RawPacket>,
    pub flows: Vec<ingest::FlowEvent>,
    pub alerts: Vec<ingest::AlertEvent>,
    pub manifest: Manifest,
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle, PipelineError> {
    let err = stage("ingest");
    let packets = ingest::load_capture(&dir.join("capture.jsonl")).map_err(&err)?;
    let flows = ingest::load_flow_events(&dir.join("flows.jsonl")).map_err(&err)?;
    let alerts = ingest::load_alert_events(&dir.join("alerts.jsonl")).map_err(&err)?;
    let manifest_text =
        std::fs::read_to_string(dir.join("manifest.json")).map_err(stage("ingest"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text).map_err(stage("ingest"))?;
    Ok(LoadedBundle {
        packets,
        flows,
        alerts,
        manifest,
    })
}

/// The fusion procedure in its fixed step order: cyber base columns,
/// per-packet annotations, alert merge, flow merge, physical join,
/// imputation.
pub fn fuse_bundle(
    bundle: &LoadedBundle,
    mode: PhysicalMode,
) -> Result<FusedTable, PipelineError> {
    let err = stage("fuse");
    let mut cyber: Vec<ingest::CyberRecord> = bundle
        .packets
        .iter()
        .map(ingest::extract_cyber_base)
        .collect();
    let retrans = ingest::annotate_retransmissions(&bundle.packets);
    let rtts = ingest::annotate_rtt(&bundle.packets);
    for ((rec, is_retx), rtt) in cyber.iter_mut().zip(&retrans).zip(&rtts) {
        rec.retrans = Some(if *is_retx { 1.0 } else { 0.0 });
        rec.rtt_ms = *rtt;
    }
    let cyber = fusion::merge_alerts(cyber, &bundle.alerts).map_err(&err)?;
    let cyber = fusion::merge_flow_features(cyber, &bundle.flows).map_err(&err)?;
    let mut physical = Vec::new();
    for pkt in &bundle.packets {
        if let Some(bytes) = pkt.dnp3_bytes() {
            let frame = dnp3::parse_link_frame(&bytes).map_err(stage("dnp3"))?;
            let rec = dnp3::extract_physical(&frame).map_err(stage("dnp3"))?;
            physical.push((pkt.ts_us, rec));
        }
    }
    let fused = fusion::fuse_physical(cyber, &physical, mode).map_err(&err)?;
    Ok(fusion::impute(fusion::to_table(&fused)))
}

/// Encode and scale the fused table into model-ready features.
pub fn encode_scaled(
    table: &FusedTable,
    method: ScaleMethod,
) -> Result<FeatureMatrix, PipelineError> {
    fusion::scale(fusion::encode(table), method).map_err(stage("fuse"))
}

pub fn labels_for(
    table: &FusedTable,
    mode: LabelMode,
    windows: &[AttackWindow],
) -> Result<LabelVector, PipelineError> {
    fusion::assign_labels(table, mode, windows).map_err(stage("fuse"))
}

/// Seed-controlled stratified train/test split: indices of each class
/// are shuffled, then the first `train_fraction` of every class trains.
pub fn stratified_split(
    y: &[Label],
    train_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut classes: Vec<Label> = y.to_vec();
    classes.sort_by_key(|c| c.name());
    classes.dedup();
    for class in classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * train_fraction).round() as usize;
        let n_train = n_train.clamp(1.min(idx.len()), idx.len().saturating_sub(1).max(1));
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

// -------------------------------------------------------- experiments

struct ScenarioOutput {
    fusion_row: Vec<String>,
    featan_rows: Vec<Vec<String>>,
    pca_rows: Vec<Vec<String>>,
    correlation: Option<ReportTable>,
    classification_rows: Vec<Vec<String>>,
    label_rows: Vec<Vec<String>>,
    cluster_rows: Vec<Vec<String>>,
    manifold_rows: Vec<Vec<String>>,
    cotrain_rows: Vec<Vec<String>>,
}

fn spec_with_grid(
    tag: &str,
    seed: u64,
    grids: &BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    x: &FeatureMatrix,
    y: &[Label],
) -> Result<ClassifierSpec, PipelineError> {
    let algo = Algo::from_tag(tag).expect("validated");
    let mut spec = ClassifierSpec::new(algo, seed);
    if let Some(grid) = grids.get(tag) {
        let (best, _) =
            learn::grid_search(&spec, x, y, grid, 3).map_err(stage("learn"))?;
        for (key, value) in best {
            spec = spec.set(&key, value).map_err(stage("learn"))?;
        }
    }
    Ok(spec)
}

fn run_scenario(
    entry: &ScenarioEntry,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<ScenarioOutput, PipelineError> {
    let scen_dir = out_dir.join("scenarios").join(&entry.name);
    scenario::generate_scenario(&entry.spec, &scen_dir).map_err(stage("generate"))?;
    let bundle = load_bundle(&scen_dir)?;
    let table = fuse_bundle(&bundle, config.fuse.physical_mode.to_mode())?;
    let windows = bundle.manifest.windows.clone();
    let primary_labels = labels_for(&table, config.fuse.label_mode.primary(), &windows)?;
    fusion::write_fused_csv(&table, Some(&primary_labels), &scen_dir.join("fused.csv"))
        .map_err(stage("fuse"))?;
    let x_all = encode_scaled(&table, config.fuse.scale.to_method())?;

    let dnp3_rows = bundle
        .packets
        .iter()
        .filter(|p| p.dnp3_bytes().is_some())
        .count();
    let fusion_row = vec![
        entry.name.clone(),
        table.n_rows().to_string(),
        dnp3_rows.to_string(),
        bundle.flows.len().to_string(),
        bundle.alerts.len().to_string(),
    ];

    let mut out = ScenarioOutput {
        fusion_row,
        featan_rows: Vec::new(),
        pca_rows: Vec::new(),
        correlation: None,
        classification_rows: Vec::new(),
        label_rows: Vec::new(),
        cluster_rows: Vec::new(),
        manifold_rows: Vec::new(),
        cotrain_rows: Vec::new(),
    };

    if let Some(fa) = &config.featan {
        let err = stage("featan");
        let corr = crate::featan::pearson_matrix(&x_all).map_err(&err)?;
        let mut columns = vec!["feature".to_string()];
        columns.extend(corr.names.iter().cloned());
        let rows = corr
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let mut row = vec![name.clone()];
                row.extend((0..corr.names.len()).map(|j| fmt(corr.r[(i, j)])));
                row
            })
            .collect();
        out.correlation = Some(ReportTable {
            name: format!("correlation_{}", entry.name),
            columns,
            rows,
        });
        let scores = crate::featan::shapiro_rank(&x_all).map_err(&err)?;
        let selected = crate::featan::select_features(&x_all.names, &scores, fa.shapiro_cutoff);
        for (name, score) in x_all.names.iter().zip(&scores) {
            out.featan_rows.push(vec![
                entry.name.clone(),
                name.clone(),
                fmt(*score),
                selected.contains(name).to_string(),
            ]);
        }
        let (pca, _z) =
            crate::featan::pca_fit_transform(&x_all, fa.pca_threshold).map_err(&err)?;
        out.pca_rows.push(vec![
            entry.name.clone(),
            pca.n_components().to_string(),
            fmt(pca.explained_ratio.iter().sum()),
        ]);
    }

    if let Some(lo) = &config.learn {
        let err = stage("learn");
        let y_all = primary_labels.labels.clone();
        let (train_idx, test_idx) = stratified_split(&y_all, lo.train_fraction, lo.seed);
        for set in &lo.feature_sets {
            let x_set = x_all
                .select(&set.columns())
                .expect("fused columns present");
            let (xt, yt) = learn::subset(&x_set, &y_all, &train_idx);
            let (xv, yv) = learn::subset(&x_set, &y_all, &test_idx);
            for tag in &lo.algos {
                let spec = spec_with_grid(tag, lo.seed, &lo.grids, &xt, &yt)?;
                let model = learn::train(&spec, &xt, &yt).map_err(&err)?;
                let pred = learn::predict(&model, &xv).map_err(&err)?;
                let m = learn::evaluate(&yv, &pred).map_err(&err)?;
                out.classification_rows.push(vec![
                    entry.name.clone(),
                    set.tag().to_string(),
                    tag.clone(),
                    fmt(m.weighted_precision),
                    fmt(m.weighted_recall),
                    fmt(m.weighted_f1),
                ]);
            }
        }
        // paired label-source table
        if config.fuse.label_mode == LabelOpt::Both {
            let mut per_mode: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
            for mode in config.fuse.label_mode.modes() {
                let labels = labels_for(&table, mode, &windows)?.labels;
                let (tr, te) = stratified_split(&labels, lo.train_fraction, lo.seed);
                // evaluated against ground truth so sources are comparable
                let truth = labels_for(&table, LabelMode::AttackWindow, &windows)?.labels;
                for tag in &lo.algos {
                    let (xt, yt) = learn::subset(&x_all, &labels, &tr);
                    let (xv, _) = learn::subset(&x_all, &labels, &te);
                    let yv: Vec<Label> = te.iter().map(|&i| truth[i]).collect();
                    let spec = spec_with_grid(tag, lo.seed, &lo.grids, &xt, &yt)?;
                    let model = learn::train(&spec, &xt, &yt).map_err(&err)?;
                    let pred = learn::predict(&model, &xv).map_err(&err)?;
                    let m = learn::evaluate(&yv, &pred).map_err(&err)?;
                    let key = match mode {
                        LabelMode::Snort => "snort",
                        LabelMode::AttackWindow => "attack_window",
                    };
                    per_mode
                        .entry(key)
                        .or_default()
                        .push((tag.clone(), m.weighted_f1));
                }
            }
            if let (Some(snort), Some(window)) =
                (per_mode.get("snort"), per_mode.get("attack_window"))
            {
                for ((tag, f1_snort), (_, f1_window)) in snort.iter().zip(window) {
                    out.label_rows.push(vec![
                        entry.name.clone(),
                        tag.clone(),
                        fmt(*f1_snort),
                        fmt(*f1_window),
                        fmt(f1_window - f1_snort),
                    ]);
                }
            }
        }
    }

    if let Some(co) = &config.cluster {
        let err = stage("cluster");
        let n = x_all.n_rows().min(co.max_rows);
        let sub = nalgebra::DMatrix::from_fn(n, x_all.n_cols(), |i, j| x_all.data[(i, j)]);
        let truth: Vec<usize> = primary_labels.labels[..n]
            .iter()
            .map(|l| usize::from(*l == Label::Attacked))
            .collect();
        for tag in &co.algos {
            let algo = ClusterAlgo::from_tag(tag).expect("validated");
            let mut best: Option<(usize, f64)> = None;
            for k in co.k_min..=co.k_max.min(n.saturating_sub(1)) {
                let res = cluster::cluster(algo, &sub, k, co.seed).map_err(&err)?;
                let q = cluster::cluster_quality(&sub, &res.assignments).map_err(&err)?;
                let ari = cluster::adjusted_rand(&truth, &res.assignments).map_err(&err)?;
                if best.map_or(true, |(_, s)| q.silhouette > s) {
                    best = Some((k, q.silhouette));
                }
                out.cluster_rows.push(vec![
                    entry.name.clone(),
                    tag.clone(),
                    k.to_string(),
                    fmt(q.silhouette),
                    fmt(q.calinski_harabasz),
                    fmt(q.davies_bouldin),
                    fmt(ari),
                    String::new(),
                ]);
            }
            if let Some((best_k, _)) = best {
                for row in out.cluster_rows.iter_mut().rev() {
                    if row[0] == entry.name && row[1] == *tag {
                        row[7] = (row[2] == best_k.to_string()).to_string();
                    } else {
                        break;
                    }
                }
            }
        }
    }

    if let Some(mf) = &config.manifold {
        let err = stage("manifold");
        let n = x_all.n_rows().min(mf.max_rows);
        let sub = nalgebra::DMatrix::from_fn(n, x_all.n_cols(), |i, j| x_all.data[(i, j)]);
        for tag in &mf.algos {
            let algo = ManifoldAlgo::from_tag(tag).expect("validated");
            let mut params = ManifoldParams::default();
            params.perplexity = params.perplexity.min((n as f64 / 4.0).max(5.0));
            let emb = manifold::embed(algo, &sub, mf.dims, &params, mf.seed).map_err(&err)?;
            let s = manifold::stress(&sub, &emb.coords).map_err(&err)?;
            out.manifold_rows.push(vec![
                entry.name.clone(),
                tag.clone(),
                fmt(s),
                emb.graph_patched.to_string(),
            ]);
        }
    }

    if let Some(ct) = &config.cotrain {
        let err = stage("cotrain");
        let y_all = primary_labels.labels.clone();
        let (train_idx, test_idx) = stratified_split(&y_all, 0.7, ct.seed);
        let (xt, yt) = learn::subset(&x_all, &y_all, &train_idx);
        let (xv, yv) = learn::subset(&x_all, &y_all, &test_idx);
        let (lab_idx, unlab_idx) = stratified_split(&yt, ct.labeled_fraction, ct.seed + 1);
        let (xl, yl) = learn::subset(&xt, &yt, &lab_idx);
        let (xu, _) = learn::subset(&xt, &yt, &unlab_idx);
        let split = ViewSplit::default_split();
        let base = ClassifierSpec::new(Algo::from_tag(&ct.base).expect("validated"), ct.seed);
        // supervised baseline on the same labeled fraction
        let empty = FeatureMatrix::from_rows(xt.names.clone(), &[]);
        let sup = cotrain::cotrain_fit(&base, &xl, &yl, &empty, &split, ct.max_loops)
            .map_err(&err)?;
        let (sup_pred, _) = cotrain::cotrain_predict(&sup, &xv).map_err(&err)?;
        let sup_f1 = learn::evaluate(&yv, &sup_pred).map_err(stage("learn"))?.weighted_f1;
        let co = cotrain::cotrain_fit(&base, &xl, &yl, &xu, &split, ct.max_loops)
            .map_err(&err)?;
        let (co_pred, _) = cotrain::cotrain_predict(&co, &xv).map_err(&err)?;
        let co_f1 = learn::evaluate(&yv, &co_pred).map_err(stage("learn"))?.weighted_f1;
        out.cotrain_rows.push(vec![
            entry.name.clone(),
            ct.base.clone(),
            fmt(sup_f1),
            fmt(co_f1),
            fmt(co_f1 - sup_f1),
            co.log.len().to_string(),
        ]);
    }

    Ok(out)
}

// -------------------------------------------------------- entry point

/// Run the configured experiment matrix and assemble the [`Report`].
/// Scenarios execute concurrently; assembly order is the config order,
/// so output is deterministic.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<Report, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(stage("report"))?;

    let results: Vec<Result<ScenarioOutput, PipelineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .scenarios
            .iter()
            .map(|entry| scope.spawn(move || run_scenario(entry, config, out_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });
    let mut outputs = Vec::with_capacity(results.len());
    for result in results {
        outputs.push(result?);
    }

    let mut tables = Vec::new();
    let gather = |rows: Vec<Vec<String>>, name: &str, columns: &[&str]| ReportTable {
        name: name.to_string(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows,
    };
    tables.push(gather(
        outputs.iter().map(|o| o.fusion_row.clone()).collect(),
        "fusion_summary",
        &["scenario", "fused_rows", "dnp3_rows", "flow_events", "alert_events"],
    ));
    if config.featan.is_some() {
        tables.push(gather(
            outputs.iter().flat_map(|o| o.featan_rows.clone()).collect(),
            "feature_analysis",
            &["scenario", "feature", "shapiro_w", "selected"],
        ));
        tables.push(gather(
            outputs.iter().flat_map(|o| o.pca_rows.clone()).collect(),
            "pca_summary",
            &["scenario", "n_components", "explained_ratio"],
        ));
        for o in &outputs {
            if let Some(corr) = &o.correlation {
                tables.push(corr.clone());
            }
        }
    }
    if config.learn.is_some() {
        tables.push(gather(
            outputs
                .iter()
                .flat_map(|o| o.classification_rows.clone())
                .collect(),
            "classification",
            &["scenario", "feature_set", "algo", "precision", "recall", "f1"],
        ));
        if config.fuse.label_mode == LabelOpt::Both {
            tables.push(gather(
                outputs.iter().flat_map(|o| o.label_rows.clone()).collect(),
                "label_comparison",
                &["scenario", "algo", "snort_f1", "attack_window_f1", "delta"],
            ));
        }
    }
    if config.cluster.is_some() {
        tables.push(gather(
            outputs.iter().flat_map(|o| o.cluster_rows.clone()).collect(),
            "clustering",
            &[
                "scenario",
                "algo",
                "k",
                "silhouette",
                "calinski_harabasz",
                "davies_bouldin",
                "ari",
                "best_k",
            ],
        ));
    }
    if config.manifold.is_some() {
        tables.push(gather(
            outputs.iter().flat_map(|o| o.manifold_rows.clone()).collect(),
            "manifold",
            &["scenario", "algo", "stress", "graph_patched"],
        ));
    }
    if config.cotrain.is_some() {
        tables.push(gather(
            outputs.iter().flat_map(|o| o.cotrain_rows.clone()).collect(),
            "cotrain",
            &["scenario", "base", "supervised_f1", "cotrain_f1", "delta", "loops"],
        ));
    }

    let mut seeds: Vec<(String, u64)> = config
        .scenarios
        .iter()
        .map(|s| (format!("scenario.{}", s.name), s.spec.seed))
        .collect();
    if let Some(lo) = &config.learn {
        seeds.push(("learn".into(), lo.seed));
    }
    if let Some(co) = &config.cluster {
        seeds.push(("cluster".into(), co.seed));
    }
    if let Some(mf) = &config.manifold {
        seeds.push(("manifold".into(), mf.seed));
    }
    if let Some(ct) = &config.cotrain {
        seeds.push(("cotrain".into(), ct.seed));
    }

    Ok(Report {
        tables,
        provenance: Provenance {
            config_hash: config.hash(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
        },
    })
}
