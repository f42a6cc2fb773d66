use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dmgrad::lattice_packing::PackConfig;
use dmgrad::tomography::{DEFAULT_BANDWIDTH_FACTOR, DEFAULT_REFLECT_TOL};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GradBenchConfig {
    pub t_list: Vec<f64>,
    pub m_list: Vec<usize>,
    pub trials: usize,
}

impl Default for GradBenchConfig {
    fn default() -> Self {
        Self { t_list: vec![1.0, 0.5, 0.1, 0.05], m_list: vec![100, 200, 300, 400], trials: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PackCliConfig {
    pub n: usize,
    pub executions: usize,
    /// Iteration cap; 0 picks 2000 for n = 2 and 5000 otherwise.
    pub budget: usize,
    pub lambda0: f64,
    pub l: usize,
    pub epsilon: f64,
    pub s_f: f64,
    pub m: usize,
    pub delta: f64,
    pub sigma: f64,
    /// Kernel bandwidth; 0 ties it to `sigma`.
    pub t: f64,
    pub scatter_radius: f64,
}

impl Default for PackCliConfig {
    fn default() -> Self {
        let p = PackConfig::default();
        Self {
            n: 2,
            executions: 1,
            budget: 0,
            lambda0: p.lambda0,
            l: p.l,
            epsilon: p.epsilon,
            s_f: p.s_f,
            m: p.m,
            delta: p.delta,
            sigma: p.sigma,
            t: 0.0,
            scatter_radius: 3.0,
        }
    }
}

impl PackCliConfig {
    pub fn resolve(&mut self) {
        if self.budget == 0 {
            self.budget = if self.n == 2 { 2000 } else { 5000 };
        }
        if self.t == 0.0 {
            self.t = self.sigma;
        }
    }

    pub fn to_pack_config(&self) -> PackConfig {
        PackConfig {
            lambda0: self.lambda0,
            l: self.l,
            epsilon: self.epsilon,
            s_f: self.s_f,
            m: self.m,
            delta: self.delta,
            sigma: self.sigma,
            t: self.t,
            max_iters: self.budget,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TomoCliConfig {
    pub n: usize,
    pub k: usize,
    /// Detector count; 0 uses `n`.
    pub l: usize,
    pub s: usize,
    pub m: usize,
    pub etas: Vec<f64>,
    pub reflect_tol: f64,
    /// Fixed embedding bandwidth; 0 uses `bandwidth_factor` times the
    /// median pairwise distance of each embedded set.
    pub bandwidth: f64,
    pub bandwidth_factor: f64,
    pub emit_embeddings: bool,
}

impl Default for TomoCliConfig {
    fn default() -> Self {
        Self {
            n: 128,
            k: 2000,
            l: 0,
            s: 20,
            m: 10,
            etas: vec![0.0, 0.05, 0.1],
            reflect_tol: DEFAULT_REFLECT_TOL,
            bandwidth: 0.0,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
            emit_embeddings: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DmapConfig {
    pub input: Option<PathBuf>,
    pub dim: usize,
    pub time: f64,
    /// Kernel bandwidth; 0 picks the median pairwise distance.
    pub bandwidth: f64,
}

impl Default for DmapConfig {
    fn default() -> Self {
        Self { input: None, dim: 2, time: 1.0, bandwidth: 0.0 }
    }
}

/// Everything a run depends on; echoed into the output directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub seed: u64,
    pub out: PathBuf,
    pub strict: bool,
    pub grad_bench: GradBenchConfig,
    pub pack: PackCliConfig,
    pub tomo: TomoCliConfig,
    pub dmap: DmapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            seed: 0,
            out: PathBuf::from("out"),
            strict: false,
            grad_bench: GradBenchConfig::default(),
            pack: PackCliConfig::default(),
            tomo: TomoCliConfig::default(),
            dmap: DmapConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
