//! Linearised swing-equation dynamics on a tree network.
//!
//! Each bus obeys `m_i θ̈_i + d_i θ̇_i = −Σ_k b_ik (θ_i − θ_k) − δ θ_i + p_i`,
//! where `δ` is a small grounding term that keeps the angles stationary.
//! The model is discretised with a zero-order hold, driven by independent
//! AR(1) injections, and observed through the angle block.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{edge_key, validate_tree, GraphError, TreeTopology, UndirectedGraph};
use crate::spectral::{SpectralDensityField, SpectralError, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("matrix exponential produced non-finite entries (dt = {0})")]
    NonFinite(f64),
    #[error("discrete system is not stable (spectral radius {0})")]
    UnstableSystem(f64),
    #[error("resolvent is singular at ω = {0}")]
    SingularResolvent(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_GROUNDING_RATIO: f64 = 0.01;

/// Injection process of one node: `p(k) = ar · p(k−1) + sigma · e(k)` with
/// `e` standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeNoise {
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub ar: f64,
}

impl Default for NodeNoise {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            ar: 0.0,
        }
    }
}

impl NodeNoise {
    pub fn white(sigma: f64) -> Self {
        Self { sigma, ar: 0.0 }
    }

    fn validate(&self, label: &str) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DynamicsError::InvalidModel(format!(
                "noise sigma of `{label}` must be finite and non-negative"
            )));
        }
        if !(self.ar > -1.0 && self.ar < 1.0) {
            return Err(DynamicsError::InvalidModel(format!(
                "noise ar of `{label}` must lie in (-1, 1)"
            )));
        }
        Ok(())
    }

    /// Spectrum `σ² / |1 − a e^{−iω}|²`.
    pub fn spectrum(&self, omega: f64) -> f64 {
        let d = C64::new(1.0, 0.0) - C64::from_polar(self.ar, -omega);
        self.sigma * self.sigma / d.norm_sqr()
    }
}

/// Mutually independent per-node injections, indexed like the model's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    nodes: Vec<NodeNoise>,
}

impl NoiseSpec {
    pub fn new(nodes: Vec<NodeNoise>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            n.validate(&i.to_string())?;
        }
        Ok(Self { nodes })
    }

    pub fn white(m: usize, sigma: f64) -> Self {
        Self {
            nodes: vec![NodeNoise::white(sigma); m],
        }
    }

    pub fn nodes(&self) -> &[NodeNoise] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn one() -> f64 {
    1.0
}

/// A line of the model. Deserialises from `{"a", "b", "susceptance"}` or
/// from a bare `[a, b]` pair with unit susceptance, so graph documents are
/// valid model configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "EdgeRepr")]
pub struct EdgeConfig {
    pub a: String,
    pub b: String,
    pub susceptance: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EdgeRepr {
    Pair([String; 2]),
    Full {
        a: String,
        b: String,
        #[serde(default = "one")]
        susceptance: f64,
    },
}

impl From<EdgeRepr> for EdgeConfig {
    fn from(e: EdgeRepr) -> Self {
        match e {
            EdgeRepr::Pair([a, b]) => Self {
                a,
                b,
                susceptance: 1.0,
            },
            EdgeRepr::Full { a, b, susceptance } => Self { a, b, susceptance },
        }
    }
}

/// JSON form of a [`GridNetworkModel`]. Omitted per-node values default to 1,
/// the grounding to `0.01 · min b`, and `dt` to 0.1 s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inertia: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub damping: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub noise: BTreeMap<String, NodeNoise>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridNetworkModel {
    topology: TreeTopology,
    /// Keyed by [`edge_key`].
    susceptance: HashMap<(String, String), f64>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
    grounding: f64,
    noise: NoiseSpec,
    dt: f64,
}

fn positive(what: &str, label: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(DynamicsError::InvalidModel(format!(
            "{what} of `{label}` must be positive, got {v}"
        )))
    }
}

impl GridNetworkModel {
    /// Unit inertia, damping and susceptance, white unit-variance noise,
    /// default grounding and sampling interval.
    pub fn uniform(topology: TreeTopology) -> Self {
        let m = topology.graph().node_count();
        let susceptance = topology
            .graph()
            .edges()
            .into_iter()
            .map(|e| (e, 1.0))
            .collect();
        Self {
            topology,
            susceptance,
            inertia: vec![1.0; m],
            damping: vec![1.0; m],
            grounding: DEFAULT_GROUNDING_RATIO,
            noise: NoiseSpec::white(m, 1.0),
            dt: DEFAULT_DT,
        }
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &cfg.edges {
            if !seen.insert(edge_key(&e.a, &e.b)) {
                return Err(DynamicsError::InvalidModel(format!(
                    "duplicate edge ({}, {})",
                    e.a, e.b
                )));
            }
        }
        let g = UndirectedGraph::new(
            cfg.nodes.iter().cloned(),
            cfg.edges.iter().map(|e| (e.a.clone(), e.b.clone())),
        )?;
        let mut model = Self::uniform(validate_tree(&g)?);
        let mut min_b = f64::INFINITY;
        for e in &cfg.edges {
            model.set_susceptance(&e.a, &e.b, e.susceptance)?;
            min_b = min_b.min(e.susceptance);
        }
        for (label, &v) in &cfg.inertia {
            model.set_inertia(label, v)?;
        }
        for (label, &v) in &cfg.damping {
            model.set_damping(label, v)?;
        }
        for (label, &n) in &cfg.noise {
            model.set_noise(label, n)?;
        }
        let grounding = cfg
            .grounding
            .unwrap_or(DEFAULT_GROUNDING_RATIO * if min_b.is_finite() { min_b } else { 1.0 });
        model.set_grounding(grounding)?;
        model.set_dt(cfg.dt.unwrap_or(DEFAULT_DT))?;
        Ok(model)
    }

    /// Full config with every value written out.
    pub fn to_config(&self) -> ModelConfig {
        let labels = self.labels();
        ModelConfig {
            nodes: labels.to_vec(),
            edges: self
                .topology
                .graph()
                .edges()
                .into_iter()
                .map(|(a, b)| {
                    let s = self.susceptance[&(a.clone(), b.clone())];
                    EdgeConfig {
                        a,
                        b,
                        susceptance: s,
                    }
                })
                .collect(),
            inertia: labels
                .iter()
                .cloned()
                .zip(self.inertia.iter().copied())
                .collect(),
            damping: labels
                .iter()
                .cloned()
                .zip(self.damping.iter().copied())
                .collect(),
            grounding: Some(self.grounding),
            noise: labels
                .iter()
                .cloned()
                .zip(self.noise.nodes.iter().copied())
                .collect(),
            dt: Some(self.dt),
        }
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    pub fn labels(&self) -> &[String] {
        self.topology.graph().nodes()
    }

    pub fn node_count(&self) -> usize {
        self.inertia.len()
    }

    pub fn susceptance(&self, a: &str, b: &str) -> Option<f64> {
        self.susceptance.get(&edge_key(a, b)).copied()
    }

    pub fn inertia(&self) -> &[f64] {
        &self.inertia
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    pub fn grounding(&self) -> f64 {
        self.grounding
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn set_susceptance(&mut self, a: &str, b: &str, v: f64) -> Result<()> {
        let key = edge_key(a, b);
        match self.susceptance.get_mut(&key) {
            Some(slot) => {
                *slot = positive("susceptance", &format!("{a}-{b}"), v)?;
                Ok(())
            }
            None => Err(DynamicsError::InvalidModel(format!(
                "({a}, {b}) is not a tree edge"
            ))),
        }
    }

    pub fn set_inertia(&mut self, label: &str, v: f64) -> Result<()> {
        let i = self.topology.graph().index_of(label)?;
        self.inertia[i] = positive("inertia", label, v)?;
        Ok(())
    }

    pub fn set_damping(&mut self, label: &str, v: f64) -> Result<()> {
        let i = self.topology.graph().index_of(label)?;
        self.damping[i] = positive("damping", label, v)?;
        Ok(())
    }

    pub fn set_noise(&mut self, label: &str, n: NodeNoise) -> Result<()> {
        let i = self.topology.graph().index_of(label)?;
        n.validate(label)?;
        self.noise.nodes[i] = n;
        Ok(())
    }

    pub fn set_all_noise(&mut self, n: NodeNoise) -> Result<()> {
        n.validate("*")?;
        self.noise.nodes.fill(n);
        Ok(())
    }

    pub fn set_grounding(&mut self, v: f64) -> Result<()> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(DynamicsError::InvalidModel(format!(
                "grounding must be non-negative, got {v}"
            )));
        }
        self.grounding = v;
        Ok(())
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        self.dt = positive("dt", "model", dt)?;
        Ok(())
    }

    /// Laplacian, continuous system and ZOH discretisation at the model's `dt`.
    pub fn discretize(&self) -> Result<DiscreteStateSpace> {
        let (a, b) = assemble_continuous(self);
        let mut dss = discretize_zoh(&a, &b, self.dt)?;
        dss.labels = self.labels().to_vec();
        Ok(dss)
    }
}

/// Susceptance-weighted Laplacian plus `δ I`.
pub fn build_laplacian(model: &GridNetworkModel) -> DMatrix<f64> {
    let g = model.topology.graph();
    let m = g.node_count();
    let mut l = DMatrix::from_diagonal_element(m, m, model.grounding);
    for (i, k) in g.index_edges() {
        let b = model.susceptance[&edge_key(g.label(i), g.label(k))];
        l[(i, k)] -= b;
        l[(k, i)] -= b;
        l[(i, i)] += b;
        l[(k, k)] += b;
    }
    l
}

/// `A = [[0, I], [−M⁻¹L, −M⁻¹D]]`, `B = [[0], [M⁻¹]]` over the state `[θ; θ̇]`.
pub fn assemble_continuous(model: &GridNetworkModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = model.node_count();
    let l = build_laplacian(model);
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    let mut b = DMatrix::zeros(2 * m, m);
    for i in 0..m {
        let inv = 1.0 / model.inertia[i];
        a[(i, m + i)] = 1.0;
        for k in 0..m {
            a[(m + i, k)] = -l[(i, k)] * inv;
        }
        a[(m + i, m + i)] = -model.damping[i] * inv;
        b[(m + i, i)] = inv;
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    dt: f64,
    labels: Vec<String>,
}

impl DiscreteStateSpace {
    /// Builds a system observed through the first `b.ncols()` states.
    /// Outputs are labelled `1..=m` unless relabelled.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() || b.ncols() > a.nrows() {
            return Err(DynamicsError::InvalidModel(format!(
                "incompatible shapes A {}x{}, B {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let labels = (1..=b.ncols()).map(|i| i.to_string()).collect();
        Ok(Self { a, b, dt, labels })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.b.ncols() {
            return Err(DynamicsError::InvalidModel(format!(
                "{} labels for {} outputs",
                labels.len(),
                self.b.ncols()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Output selector `[I 0]`.
    pub fn c(&self) -> DMatrix<f64> {
        let m = self.output_count();
        DMatrix::from_fn(m, self.state_dim(), |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_count(&self) -> usize {
        self.b.ncols()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Burn-in long enough for the zero initial state to decay by `e^{-10}`.
    pub fn suggested_burn_in(&self) -> usize {
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return 0;
        }
        (10.0 / -rho.ln()).ceil() as usize
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Zero-order-hold discretisation via the exponential of `[[A, B], [0, 0]] Δt`.
pub fn discretize_zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<DiscreteStateSpace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidModel(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let n = a.nrows();
    let k = b.ncols();
    let mut aug = DMatrix::zeros(n + k, n + k);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, k)).copy_from(&(b * dt));
    let e = aug.exp();
    if e.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::NonFinite(dt));
    }
    DiscreteStateSpace::new(
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, k)).into_owned(),
        dt,
    )
}

/// Node-major sample matrix (`samples[i][k]` is node `i` at step `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    labels: Vec<String>,
    samples: Vec<Vec<f64>>,
    dt: f64,
    burn_in_discarded: usize,
}

impl TimeSeriesPanel {
    pub fn new(
        labels: Vec<String>,
        samples: Vec<Vec<f64>>,
        dt: f64,
        burn_in_discarded: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(DynamicsError::InvalidPanel("no series".into()));
        }
        if labels.len() != samples.len() {
            return Err(DynamicsError::InvalidPanel(format!(
                "{} labels for {} series",
                labels.len(),
                samples.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(DynamicsError::InvalidPanel(format!(
                    "duplicate label `{l}`"
                )));
            }
        }
        let n = samples[0].len();
        if n < 2 {
            return Err(DynamicsError::InvalidPanel(format!(
                "{n} samples, at least 2 required"
            )));
        }
        for (l, row) in labels.iter().zip(&samples) {
            if row.len() != n {
                return Err(DynamicsError::InvalidPanel(format!(
                    "series `{l}` has {} samples, expected {n}",
                    row.len()
                )));
            }
            if let Some(k) = row.iter().position(|x| !x.is_finite()) {
                return Err(DynamicsError::InvalidPanel(format!(
                    "non-finite sample in `{l}` at step {k}"
                )));
            }
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidPanel(format!(
                "dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            labels,
            samples,
            dt,
            burn_in_discarded,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn burn_in_discarded(&self) -> usize {
        self.burn_in_discarded
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    /// Number of samples per node.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, label: &str) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.samples[i].as_slice())
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        let samples = std::mem::take(&mut self.samples);
        Self::new(labels, samples, self.dt, self.burn_in_discarded)
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(
            self.labels.clone(),
            self.samples
                .iter()
                .map(|r| r[..n.min(r.len())].to_vec())
                .collect(),
            self.dt,
            self.burn_in_discarded,
        )
    }

    pub(crate) fn map_rows<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Self {
        Self {
            labels: self.labels.clone(),
            samples: self.samples.iter().map(|r| f(r)).collect(),
            dt: self.dt,
            burn_in_discarded: self.burn_in_discarded,
        }
    }
}

fn check_noise(dss: &DiscreteStateSpace, noise: &NoiseSpec) -> Result<()> {
    if noise.len() != dss.output_count() {
        return Err(DynamicsError::InvalidModel(format!(
            "noise has {} nodes, system has {} inputs",
            noise.len(),
            dss.output_count()
        )));
    }
    Ok(())
}

/// Runs the recurrence from the zero state and hands each post-burn-in
/// output vector to `sink`. Node `i` draws from ChaCha stream `i` of `seed`.
pub fn simulate_with<F: FnMut(&[f64])>(
    dss: &DiscreteStateSpace,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
    burn_in: usize,
    mut sink: F,
) -> Result<()> {
    check_noise(dss, noise)?;
    let rho = dss.spectral_radius();
    if rho >= 1.0 {
        return Err(DynamicsError::UnstableSystem(rho));
    }
    let s = dss.state_dim();
    let m = dss.output_count();
    // One product per step: [x; p] ↦ [A B][x; p].
    let mut ab = DMatrix::zeros(s, s + m);
    ab.view_mut((0, 0), (s, s)).copy_from(&dss.a);
    ab.view_mut((0, s), (s, m)).copy_from(&dss.b);
    let mut rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut xp = DVector::zeros(s + m);
    let mut next = DVector::zeros(s);
    for k in 0..burn_in + n {
        for (i, (rng, spec)) in rngs.iter_mut().zip(&noise.nodes).enumerate() {
            let e: f64 = StandardNormal.sample(rng);
            xp[s + i] = spec.ar * xp[s + i] + spec.sigma * e;
        }
        next.gemv(1.0, &ab, &xp, 0.0);
        xp.rows_mut(0, s).copy_from(&next);
        if k >= burn_in {
            sink(&xp.as_slice()[..m]);
        }
    }
    Ok(())
}

/// Simulates `n` retained samples after discarding `burn_in`.
pub fn simulate(
    dss: &DiscreteStateSpace,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
    burn_in: usize,
) -> Result<TimeSeriesPanel> {
    if n < 2 {
        return Err(DynamicsError::InvalidPanel(format!(
            "{n} samples, at least 2 required"
        )));
    }
    let m = dss.output_count();
    let mut rows = vec![Vec::with_capacity(n); m];
    simulate_with(dss, noise, n, seed, burn_in, |y| {
        for (row, &v) in rows.iter_mut().zip(y) {
            row.push(v);
        }
    })?;
    TimeSeriesPanel::new(dss.labels.clone(), rows, dss.dt, burn_in)
}

/// Exact output spectrum `G Φ_p G*` with `G(z) = C (zI − A)⁻¹ B`.
pub fn analytic_psd(
    dss: &DiscreteStateSpace,
    noise: &NoiseSpec,
    grid: &[f64],
) -> Result<SpectralDensityField> {
    check_noise(dss, noise)?;
    let rho = dss.spectral_radius();
    if rho >= 1.0 {
        return Err(DynamicsError::UnstableSystem(rho));
    }
    if let Some(&w) = grid.iter().find(|w| !(0.0..=PI).contains(*w)) {
        return Err(DynamicsError::InvalidModel(format!(
            "frequency {w} outside [0, π]"
        )));
    }
    let s = dss.state_dim();
    let m = dss.output_count();
    let a = dss.a.map(|x| C64::new(x, 0.0));
    let b = dss.b.map(|x| C64::new(x, 0.0));
    let matrices = grid
        .par_iter()
        .map(|&w| {
            let z = Complex::from_polar(1.0, w);
            let resolvent = DMatrix::from_diagonal_element(s, s, z) - &a;
            let x = resolvent
                .lu()
                .solve(&b)
                .filter(|x| x.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
                .ok_or(DynamicsError::SingularResolvent(w))?;
            let mut g = x.rows(0, m).into_owned();
            for (j, spec) in noise.nodes.iter().enumerate() {
                let scale = spec.spectrum(w).sqrt();
                g.column_mut(j).scale_mut(scale);
            }
            Ok(&g * g.adjoint())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralDensityField::new(
        dss.labels.clone(),
        grid.to_vec(),
        matrices,
        None,
    )?)
}
