use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use decotree::population::EvolveOptions;
use decotree::recursion::{QLaw, DEFAULT_POLISH, DEFAULT_W0};
use decotree::{Complex64, Convention, Distribution, MomentQuantity, PotentialModel, TreeShape};
use serde::{Deserialize, Serialize};

/// Every parameter of a run. Energies and windows are in `convention`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub shape: TreeShape,
    pub convention: Convention,
    pub window: [f64; 2],
    pub step: f64,
    pub epsilon: Vec<f64>,
    pub distribution: Distribution,
    pub k: f64,
    pub p: f64,
    pub pool_size: usize,
    pub generations: usize,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub strict: bool,
    // green, moments
    pub lambda: [f64; 2],
    pub depth: usize,
    pub vertex: usize,
    pub dump_tree: bool,
    // moments
    pub quantity: MomentQuantity,
    pub symmetrize: bool,
    // dos diagnostic table, written when ac_window is set
    pub ac_window: Option<[f64; 2]>,
    pub ac_points: usize,
    pub ys: Vec<f64>,
    // mu-scan
    pub samples: usize,
    pub envelope_samples: usize,
    pub w0: f64,
    pub polish: usize,
    pub envelope_q: QLaw,
    // validate
    pub oracle_configs: usize,
    pub tolerance: f64,
    pub lock_depth: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            shape: TreeShape::new(1, 2),
            convention: Convention::Paper,
            window: [-3.5, 3.5],
            step: 0.01,
            epsilon: vec![1e-2],
            distribution: Distribution::default(),
            k: 0.0,
            p: 0.1,
            pool_size: 10_000,
            generations: 100,
            seed: None,
            workers: None,
            out: PathBuf::from("out"),
            strict: false,
            lambda: [0.5, 1e-2],
            depth: 6,
            vertex: 0,
            dump_tree: false,
            quantity: MomentQuantity::WMoment,
            symmetrize: false,
            ac_window: None,
            ac_points: 41,
            ys: vec![1e-1, 1e-2, 1e-3, 1e-4],
            samples: 100_000,
            envelope_samples: 100_000,
            w0: DEFAULT_W0,
            polish: DEFAULT_POLISH,
            envelope_q: QLaw::LogUniform { lo: -3.0, hi: 3.0 },
            oracle_configs: 100,
            tolerance: 1e-10,
            lock_depth: 8,
        }
    }
}

fn parse_shape(s: &str) -> Result<TreeShape, String> {
    let (m, n) = s.split_once(',').ok_or("expected M,N")?;
    let m = m.trim().parse().map_err(|e| format!("m: {e}"))?;
    let n = n.trim().parse().map_err(|e| format!("n: {e}"))?;
    Ok(TreeShape::new(m, n))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected A,B")?;
    Ok([a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?])
}

fn parse_json<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_str(s).map_err(|e| e.to_string())
}

fn parse_quantity(s: &str) -> Result<MomentQuantity, String> {
    parse_json(&format!("\"{s}\""))
}

/// Flags shared by every command. Each one mirrors a config field and
/// wins over the file value.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON config, or a manifest written by an earlier run
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["paper", "spectral"])]
    pub convention: Option<String>,
    /// Decoration as M,N
    #[arg(long, global = true, value_parser = parse_shape)]
    pub shape: Option<TreeShape>,
    /// Real energy window as LO,HI
    #[arg(long, global = true, value_parser = parse_pair, allow_hyphen_values = true)]
    pub window: Option<[f64; 2]>,
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Imaginary parts, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub epsilon: Option<Vec<f64>>,
    /// Potential law as JSON, e.g. '{"family":"gaussian","sigma":1}'
    #[arg(long, global = true, value_parser = parse_json::<Distribution>)]
    pub distribution: Option<Distribution>,
    #[arg(long, global = true)]
    pub k: Option<f64>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true)]
    pub pool_size: Option<usize>,
    #[arg(long, global = true)]
    pub generations: Option<usize>,
    /// Reject m = n
    #[arg(long, global = true)]
    pub strict: bool,
    /// Complex energy as RE,IM
    #[arg(long, global = true, value_parser = parse_pair, allow_hyphen_values = true)]
    pub lambda: Option<[f64; 2]>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub vertex: Option<usize>,
    /// Also write tree.json and hamiltonian.mtx
    #[arg(long, global = true)]
    pub dump_tree: bool,
    /// w_moment or abs_green_moment
    #[arg(long, global = true, value_parser = parse_quantity)]
    pub quantity: Option<MomentQuantity>,
    #[arg(long, global = true)]
    pub symmetrize: bool,
    /// Window of the diagnostic table as LO,HI
    #[arg(long, global = true, value_parser = parse_pair, allow_hyphen_values = true)]
    pub ac_window: Option<[f64; 2]>,
    #[arg(long, global = true)]
    pub ac_points: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub ys: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub envelope_samples: Option<usize>,
    #[arg(long, global = true)]
    pub w0: Option<f64>,
    #[arg(long, global = true)]
    pub polish: Option<usize>,
    #[arg(long, global = true, value_parser = parse_json::<QLaw>)]
    pub envelope_q: Option<QLaw>,
    #[arg(long, global = true)]
    pub oracle_configs: Option<usize>,
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub lock_depth: Option<usize>,
}

macro_rules! set {
    ($cfg:ident, $o:ident, $($f:ident),*) => {
        $(if let Some(v) = $o.$f.clone() { $cfg.$f = v; })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let o = self;
        set!(cfg, o, shape, window, step, epsilon, distribution, k, p, pool_size, generations, lambda, depth, vertex);
        set!(cfg, o, quantity, ac_points, ys, samples, envelope_samples, w0, polish, envelope_q, oracle_configs, tolerance);
        set!(cfg, o, lock_depth, out);
        if let Some(c) = &o.convention {
            cfg.convention = c.parse().expect("checked by clap");
        }
        if o.seed.is_some() {
            cfg.seed = o.seed;
        }
        if o.workers.is_some() {
            cfg.workers = o.workers;
        }
        if o.ac_window.is_some() {
            cfg.ac_window = o.ac_window;
        }
        cfg.strict |= o.strict;
        cfg.dump_tree |= o.dump_tree;
        cfg.symmetrize |= o.symmetrize;
    }
}

/// Reads a config file. A manifest is accepted too; its `config` field is used.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))?;
    let is_manifest = value.get("manifest_sha256").is_some() && value.get("config").is_some();
    let cfg = if is_manifest {
        serde_json::from_value(value["config"].clone())
    } else {
        // parse the text again so errors carry line and column
        serde_json::from_str(&text)
    };
    cfg.with_context(|| format!("{}: invalid config", path.display()))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("field `{name}`: must be positive and finite, got {v}");
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window[0].is_nan() || self.window[1].is_nan() || self.window[0] >= self.window[1] {
            bail!("field `window`: need lo < hi, got {:?}", self.window);
        }
        positive("step", self.step)?;
        if self.epsilon.is_empty() {
            bail!("field `epsilon`: empty list");
        }
        for &e in &self.epsilon {
            positive("epsilon", e)?;
        }
        if !self.k.is_finite() {
            bail!("field `k`: must be finite");
        }
        if !(0.0..1.0).contains(&self.p) {
            bail!("field `p`: must lie in [0, 1), got {}", self.p);
        }
        if self.lambda[1] < 0.0 {
            bail!("field `lambda`: imaginary part must be non-negative");
        }
        if self.workers == Some(0) {
            bail!("field `workers`: must be at least 1");
        }
        if self.strict && self.shape.is_symmetric() {
            return Err(decotree::Error::ShapeSymmetric(self.shape.m)).context("field `shape` rejected by strict mode");
        }
        self.distribution.sampler().map_err(|e| anyhow::anyhow!("field `distribution`: {e}"))?;
        Ok(())
    }

    pub fn model(&self) -> PotentialModel {
        PotentialModel { distribution: self.distribution.clone(), coupling: self.k, p: self.p }
    }

    pub fn to_paper(&self, x: f64) -> f64 {
        self.convention.to_paper(Complex64::new(x, 0.0)).re
    }

    pub fn shown(&self, x: f64) -> f64 {
        self.convention.from_paper(Complex64::new(x, 0.0)).re
    }

    pub fn paper_window(&self) -> (f64, f64) {
        (self.to_paper(self.window[0]), self.to_paper(self.window[1]))
    }

    pub fn paper_lambda(&self) -> Complex64 {
        self.convention.to_paper(Complex64::new(self.lambda[0], self.lambda[1]))
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions { symmetrize: self.symmetrize, ..EvolveOptions::default() }
    }
}
