use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::io::{self, PanelFormat};
use super::{compare_topologies, ieee39_tree_case, HarnessError, Result, TopologyMetrics};
use crate::dynamics::{simulate, simulate_with, GridNetworkModel, ModelConfig, TimeSeriesPanel};
use crate::graph::{kin_graph_oracle, validate_tree, UndirectedGraph};
use crate::prune::{reconstruct_tree_with, EdgeDecision, Reconstruction, TieBreak};
use crate::spectral::{
    welch_cross_psd, DetrendMode, SpectralDensityField, WelchAccumulator, WelchConfig,
};
use crate::wiener::{
    coupling_scores, partial_coherence_scores, select_kin, wiener_filters, CouplingScores,
    KinSelection, ScoreKind, ThresholdPolicy,
};

/// Where the network model comes from: inline, a JSON file, or
/// `"builtin:ieee39"` for the bundled case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Inline(ModelConfig),
    Path(PathBuf),
}

pub const BUILTIN_IEEE39: &str = "builtin:ieee39";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_samples: usize,
    /// Defaults to the model's suggested burn-in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Feed samples straight into the spectral estimator instead of keeping
    /// the panel in memory.
    #[serde(default)]
    pub streaming: bool,
}

/// Which pairwise statistic summarises the filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreChoice {
    /// Standardised partial coherence for Welch estimates, filter RMS for
    /// exact spectra.
    #[default]
    Auto,
    FilterRms,
    PartialCoherence,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WienerConfig {
    /// Fixed ridge; by default each bin uses `1e-6 · trace Φ / m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub score: ScoreChoice,
    /// By default `significance:0.001` for standardised scores, `gap` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<ThresholdPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    #[default]
    Strict,
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default)]
    pub mode: PruneMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for artifacts; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write the simulated panel (`panel.bin` with sidecar).
    #[serde(default)]
    pub save_panel: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub welch: WelchConfig,
    #[serde(default)]
    pub wiener: WienerConfig,
    #[serde(default)]
    pub prune: PruneConfig,
    /// Load `panel` instead of simulating.
    #[serde(default)]
    pub skip_simulation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    /// Ground truth graph; defaults to the model topology when a model is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = io::read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// The network model, if one is configured.
    pub fn model(&self) -> Result<Option<GridNetworkModel>> {
        let cfg = match &self.model {
            None => return Ok(None),
            Some(ModelSource::Path(p)) if p.as_os_str() == BUILTIN_IEEE39 => {
                return Ok(Some(ieee39_tree_case()))
            }
            Some(ModelSource::Path(p)) => io::read_json::<ModelConfig>(&self.resolve(p))?,
            Some(ModelSource::Inline(c)) => c.clone(),
        };
        GridNetworkModel::from_config(&cfg)
            .map(Some)
            .map_err(|e| HarnessError::Config(format!("model: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.welch
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(p) = self.wiener.policy {
            p.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.skip_simulation {
            let panel = self
                .panel
                .as_ref()
                .ok_or_else(|| HarnessError::Config("skip_simulation requires `panel`".into()))?;
            if !self.resolve(panel).exists() {
                return Err(HarnessError::Config(format!(
                    "panel file {} does not exist",
                    panel.display()
                )));
            }
        } else {
            if self.model.is_none() {
                return Err(HarnessError::Config(
                    "`model` is required to simulate".into(),
                ));
            }
            let sim = self.simulation.as_ref().ok_or_else(|| {
                HarnessError::Config(
                    "`simulation` is required unless skip_simulation is set".into(),
                )
            })?;
            if sim.n_samples < 4 * self.welch.window_len {
                return Err(HarnessError::Config(format!(
                    "n_samples {} is below 4 x window_len ({})",
                    sim.n_samples,
                    4 * self.welch.window_len
                )));
            }
            if sim.streaming && self.welch.detrend == DetrendMode::Difference {
                return Err(HarnessError::Config(
                    "streaming simulation does not support difference detrending".into(),
                ));
            }
        }
        if let Some(t) = &self.truth {
            if !self.resolve(t).exists() {
                return Err(HarnessError::Config(format!(
                    "truth file {} does not exist",
                    t.display()
                )));
            }
        }
        Ok(())
    }
}

/// Options for turning a spectral field into a tree.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReconstructOptions {
    pub ridge: Option<f64>,
    pub score: ScoreChoice,
    pub policy: Option<ThresholdPolicy>,
    pub mode: PruneMode,
}

impl From<&ExperimentConfig> for ReconstructOptions {
    fn from(cfg: &ExperimentConfig) -> Self {
        Self {
            ridge: cfg.wiener.ridge,
            score: cfg.wiener.score,
            policy: cfg.wiener.policy,
            mode: cfg.prune.mode,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldReconstruction {
    pub scores: CouplingScores,
    pub selection: KinSelection,
    pub reconstruction: Reconstruction,
}

fn score_field(
    field: &SpectralDensityField,
    opts: &ReconstructOptions,
) -> Result<(CouplingScores, KinSelection)> {
    let bank = wiener_filters(field, opts.ridge).map_err(|e| HarnessError::stage("wiener", e))?;
    let scores = match opts.score {
        ScoreChoice::FilterRms => coupling_scores(&bank),
        ScoreChoice::PartialCoherence => partial_coherence_scores(&bank),
        ScoreChoice::Auto if bank.stats().is_some() => partial_coherence_scores(&bank),
        ScoreChoice::Auto => coupling_scores(&bank),
    };
    let policy = opts.policy.unwrap_or(match scores.kind() {
        ScoreKind::StandardizedPartialCoherence => ThresholdPolicy::Significance {
            alpha: ThresholdPolicy::DEFAULT_ALPHA,
        },
        _ => ThresholdPolicy::Gap,
    });
    let selection = select_kin(&scores, policy).map_err(|e| HarnessError::stage("threshold", e))?;
    Ok((scores, selection))
}

fn prune_kin(
    kin: &UndirectedGraph,
    scores: &CouplingScores,
    mode: PruneMode,
) -> Result<Reconstruction> {
    let score = |a: &str, b: &str| {
        let idx = |l: &str| scores.labels().iter().position(|x| x == l);
        match (idx(a), idx(b)) {
            (Some(i), Some(j)) => scores.get(i, j),
            _ => 0.0,
        }
    };
    let tie = match mode {
        PruneMode::Strict => TieBreak::Strict,
        PruneMode::Robust => TieBreak::Robust(&score),
    };
    reconstruct_tree_with(kin, tie).map_err(|e| HarnessError::stage("prune", e))
}

/// Wiener filters, scores, kin selection and the two pruning stages.
pub fn reconstruct_from_field(
    field: &SpectralDensityField,
    opts: &ReconstructOptions,
) -> Result<FieldReconstruction> {
    let (scores, selection) = score_field(field, opts)?;
    let reconstruction = prune_kin(&selection.graph, &scores, opts.mode)?;
    Ok(FieldReconstruction {
        scores,
        selection,
        reconstruction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub score: ScoreKind,
    pub policy: ThresholdPolicy,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// How cleanly the threshold splits the pair scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub max: f64,
    pub min_selected: Option<f64>,
    pub max_rejected: Option<f64>,
}

impl ScoreSummary {
    fn new(scores: &CouplingScores, threshold: f64) -> Self {
        let pairs = scores.pairs();
        let (sel, rej): (Vec<_>, Vec<_>) = pairs.iter().map(|p| p.2).partition(|&s| s > threshold);
        Self {
            max: pairs.iter().map(|p| p.2).fold(0.0, f64::max),
            min_selected: sel.into_iter().reduce(f64::min),
            max_rejected: rej.into_iter().reduce(f64::max),
        }
    }
}

type Edge = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub nodes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_edges: Option<Vec<Edge>>,
    pub kin_edges: Vec<Edge>,
    pub confirmed_edges: Vec<Edge>,
    pub final_edges: Vec<Edge>,
    /// Final tree against the truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<TopologyMetrics>,
    /// Selected kin graph against the kin graph of the truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kin_metrics: Option<TopologyMetrics>,
    pub selection: SelectionSummary,
    pub scores: ScoreSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub low_confidence_leaves: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kin_mismatch: Vec<Edge>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

#[derive(Serialize)]
struct Provenance<'a> {
    selection: &'a SelectionSummary,
    kin_edges: &'a [Edge],
    decisions: Vec<EdgeDecision>,
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.0.entry(stage.to_owned()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

fn simulate_field(
    cfg: &ExperimentConfig,
    model: &GridNetworkModel,
    sim: &SimulationConfig,
    timer: &mut Timer,
    out_dir: Option<&Path>,
) -> Result<SpectralDensityField> {
    let dss = model
        .discretize()
        .map_err(|e| HarnessError::stage("simulate", e))?;
    let burn_in = sim.burn_in.unwrap_or_else(|| dss.suggested_burn_in());
    if sim.streaming {
        return timer.run("simulate", || {
            let mut acc = WelchAccumulator::new(dss.labels().to_vec(), cfg.welch)
                .map_err(|e| HarnessError::stage("spectral", e))?;
            simulate_with(&dss, model.noise(), sim.n_samples, sim.seed, burn_in, |y| {
                acc.push(y)
            })
            .map_err(|e| HarnessError::stage("simulate", e))?;
            acc.finish().map_err(|e| HarnessError::stage("spectral", e))
        });
    }
    let panel = timer.run("simulate", || {
        simulate(&dss, model.noise(), sim.n_samples, sim.seed, burn_in)
            .map_err(|e| HarnessError::stage("simulate", e))
    })?;
    if let (Some(dir), true) = (out_dir, cfg.output.save_panel) {
        io::save_panel(&dir.join("panel.bin"), &panel, PanelFormat::Binary)?;
    }
    timer.run("spectral", || estimate(&panel, &cfg.welch))
}

fn estimate(panel: &TimeSeriesPanel, welch: &WelchConfig) -> Result<SpectralDensityField> {
    welch_cross_psd(panel, welch).map_err(|e| HarnessError::stage("spectral", e))
}

/// Runs every stage. With `output.dir` set, artifacts are written as each
/// stage finishes, so earlier outputs survive a later failure.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ReconstructionReport> {
    cfg.validate()?;
    let mut timer = Timer(BTreeMap::new());
    let out_dir = cfg.output.dir.as_ref().map(|d| cfg.resolve(d));
    let out_dir = out_dir.as_deref();
    let model = cfg.model()?;

    let (field, n_samples) = if cfg.skip_simulation {
        let path = cfg.resolve(cfg.panel.as_ref().expect("validated"));
        let dt = model.as_ref().map(|m| m.dt());
        let panel = timer.run("load", || {
            io::load_panel(&path, PanelFormat::from_path(&path), dt)
        })?;
        let n = panel.len();
        (timer.run("spectral", || estimate(&panel, &cfg.welch))?, n)
    } else {
        let sim = cfg.simulation.as_ref().expect("validated");
        let model = model.as_ref().expect("validated");
        (
            simulate_field(cfg, model, sim, &mut timer, out_dir)?,
            sim.n_samples,
        )
    };
    if let Some(dir) = out_dir {
        io::save_field(&dir.join("psd.json"), &field)?;
    }

    let truth = match (&cfg.truth, &model) {
        (Some(p), _) => Some(io::load_graph(&cfg.resolve(p))?),
        (None, Some(m)) => Some(m.topology().graph().clone()),
        (None, None) => None,
    };

    let opts = ReconstructOptions::from(cfg);
    let (scores, selection) = timer.run("wiener", || score_field(&field, &opts))?;
    let summary = SelectionSummary {
        score: scores.kind(),
        policy: selection.policy,
        threshold: selection.threshold,
        gap_ratio: selection.gap_ratio,
        warnings: selection.warnings.clone(),
    };
    let kin_edges = selection.graph.edges();
    if let Some(dir) = out_dir {
        let path = dir.join("scores.csv");
        let file = std::fs::File::create(&path).map_err(|e| HarnessError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        scores
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| HarnessError::Io {
                path,
                message: e.to_string(),
            })?;
        io::save_graph(&dir.join("kin.json"), &selection.graph)?;
    }

    let rec = timer.run("prune", || prune_kin(&selection.graph, &scores, opts.mode))?;
    let tree = &rec.tree;

    let (metrics, kin_metrics) = match &truth {
        Some(t) => {
            let m = timer.run("evaluate", || compare_topologies(tree, t))?;
            let kin_truth = validate_tree(t)
                .map(|tt| kin_graph_oracle(&tt))
                .map_err(|e| HarnessError::Config(format!("truth is not a tree: {e}")))?;
            (
                Some(m),
                Some(compare_topologies(&selection.graph, &kin_truth)?),
            )
        }
        None => (None, None),
    };

    let report = ReconstructionReport {
        nodes: field.labels().to_vec(),
        n_samples: Some(n_samples),
        segments: field.stats().map(|s| s.segments),
        true_edges: truth.as_ref().map(|t| t.edges()),
        kin_edges: kin_edges.clone(),
        confirmed_edges: rec.outcome.confirmed.clone(),
        final_edges: tree.edges(),
        metrics,
        kin_metrics,
        scores: ScoreSummary::new(&scores, selection.threshold),
        selection: summary,
        low_confidence_leaves: rec
            .leaves
            .iter()
            .filter(|l| l.low_confidence)
            .map(|l| l.leaf.clone())
            .collect(),
        kin_mismatch: rec.kin_mismatch.clone(),
        timings: timer.0,
        config: cfg.clone(),
    };
    if let Some(dir) = out_dir {
        io::save_graph(&dir.join("tree.json"), tree)?;
        io::write_json(
            &dir.join("provenance.json"),
            &Provenance {
                selection: &report.selection,
                kin_edges: &kin_edges,
                decisions: rec.provenance(),
            },
        )?;
        io::write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::EdgeConfig;

    fn chain_model(n: usize) -> ModelConfig {
        ModelConfig {
            nodes: (1..=n).map(|i| i.to_string()).collect(),
            edges: (1..n)
                .map(|i| EdgeConfig {
                    a: i.to_string(),
                    b: (i + 1).to_string(),
                    susceptance: 1.0,
                })
                .collect(),
            inertia: Default::default(),
            damping: Default::default(),
            grounding: None,
            noise: Default::default(),
            dt: None,
        }
    }

    fn chain_config(n_samples: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            model: Some(ModelSource::Inline(chain_model(5))),
            simulation: Some(SimulationConfig {
                n_samples,
                burn_in: None,
                seed,
                streaming: false,
            }),
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = chain_config(1000, 0);
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg.simulation = None;
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        let skip = ExperimentConfig {
            skip_simulation: true,
            ..Default::default()
        };
        assert_eq!(
            skip.validate().unwrap_err().exit_code(),
            super::super::EXIT_CONFIG
        );
        let parsed: ExperimentConfig = serde_json::from_str(
            r#"{"model":"builtin:ieee39","simulation":{"n_samples":100000},
                "wiener":{"policy":"fixed:0.1"},"prune":{"mode":"robust"}}"#,
        )
        .unwrap();
        assert_eq!(
            parsed.wiener.policy,
            Some(ThresholdPolicy::Fixed { tau: 0.1 })
        );
        assert_eq!(parsed.prune.mode, PruneMode::Robust);
        assert_eq!(parsed.model().unwrap().unwrap().node_count(), 39);
    }

    #[test]
    fn chain5_pipeline_recovers_tree() {
        let report = run_pipeline(&chain_config(200_000, 7)).unwrap();
        let m = report.metrics.unwrap();
        assert!(m.exact_match, "{report:?}");
        assert_eq!(m.symmetric_difference, 0);
        assert_eq!(report.kin_edges.len(), 7);
        assert_eq!(
            report.selection.score,
            ScoreKind::StandardizedPartialCoherence
        );
        assert!(report.timings.contains_key("prune"));
    }

    #[test]
    fn zero_noise_aborts_in_spectral_stage() {
        let mut cfg = chain_config(20_000, 1);
        if let Some(ModelSource::Inline(m)) = &mut cfg.model {
            for i in 1..=5 {
                m.noise
                    .insert(i.to_string(), crate::dynamics::NodeNoise::white(0.0));
            }
        }
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage_name(), Some("spectral"));
        assert_eq!(err.exit_code(), super::super::EXIT_STAGE);
    }
}
