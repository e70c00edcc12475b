use super::PipelineError;
use crate::classifier::{default_gamma_grid, Ablation, CvConfig};
use crate::portfolio::{PortfolioMode, ThinningConfig};
use crate::seeds;
use crate::severity::SeverityConfig;
use crate::trip::{RoadType, UahOptions};
use crate::wavelet::{AggregationRule, WaveletFamily};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// Root of the UAH-DriveSet download, read by `ingest`.
    pub uah_root: Option<PathBuf>,
    /// Synthetic cohort description, read by `synth`.
    pub cohort_spec: Option<PathBuf>,
    /// Interchange trips file; defaults to `<output_dir>/trips.csv`.
    pub trips_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

/// Either a fixed depth or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DepthSetting {
    Fixed(usize),
    Auto(Auto),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletConfig {
    pub depth: DepthSetting,
    pub family: WaveletFamily,
    pub rule: AggregationRule,
    /// Levels fed to the aggregation rule; empty means all.
    pub levels: Vec<usize>,
    /// Drop ratio for `depth: "auto"`.
    pub drop_threshold: f64,
    /// Upper bound for `depth: "auto"`.
    pub max_depth: usize,
    /// Also write every level's coefficients.
    pub write_coefficients: bool,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            depth: DepthSetting::Fixed(6),
            family: WaveletFamily::D4,
            rule: AggregationRule::SignedMaxAbs,
            levels: Vec::new(),
            drop_threshold: 0.35,
            max_depth: 10,
            write_coefficients: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    LogLik,
    Aic,
    #[default]
    Bic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub g: Vec<usize>,
    pub m_left: Vec<usize>,
    pub m_right: Vec<usize>,
    pub criterion: Criterion,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { g: vec![2], m_left: vec![4], m_right: vec![5], criterion: Criterion::Bic }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Search {
    Search,
}

/// A fixed exponent or `"search"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Fixed(f64),
    Search(Search),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub omega: f64,
    pub gamma: GammaSetting,
    pub gamma_grid: Vec<f64>,
    /// Restricts the scores file to one road type.
    pub road_type: Option<RoadType>,
    /// Raw labels in the order a driver's trips are folded into the
    /// posterior; unlisted labels follow, by trip id.
    pub trip_order: Vec<String>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            omega: 0.05,
            gamma: GammaSetting::Fixed(1.7),
            gamma_grid: default_gamma_grid(),
            road_type: None,
            trip_order: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Kfold,
    Lodo,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Kfold => "kfold",
            Scheme::Lodo => "lodo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub k_out: usize,
    pub r_out: usize,
    pub k_in: usize,
    pub grid_step: f64,
    /// Defaults to a stream derived from the global seed.
    pub seed: Option<u64>,
    pub schemes: Vec<Scheme>,
    pub ablations: Vec<Ablation>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        let cv = CvConfig::default();
        Self {
            k_out: cv.k_out,
            r_out: cv.r_out,
            k_in: cv.k_in,
            grid_step: cv.grid_step,
            seed: None,
            schemes: vec![Scheme::Kfold, Scheme::Lodo],
            ablations: vec![Ablation::Total, Ablation::Uniform, Ablation::Weighted],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub uah: UahOptions,
    pub wavelet: WaveletConfig,
    pub thinning: ThinningConfig,
    pub portfolio: PortfolioMode,
    pub severity: SeverityConfig,
    pub selection: SelectionConfig,
    pub risk: RiskConfig,
    pub classify: ClassifyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: None,
            uah: UahOptions::default(),
            wavelet: WaveletConfig::default(),
            thinning: ThinningConfig::default(),
            portfolio: PortfolioMode::AllTrips,
            severity: SeverityConfig::default(),
            selection: SelectionConfig::default(),
            risk: RiskConfig::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::config(msg)
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))
    }

    /// Reads a config file and resolves relative input and output paths
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.input.uah_root, &mut cfg.input.cohort_spec, &mut cfg.input.trips_csv].into_iter().flatten() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn cv(&self) -> CvConfig {
        let c = &self.classify;
        CvConfig {
            k_out: c.k_out,
            r_out: c.r_out,
            k_in: c.k_in,
            grid_step: c.grid_step,
            seed: c.seed.unwrap_or_else(|| seeds::derive_seed(self.seed, "cv")),
        }
    }

    /// Hex SHA-256 of the settings that influence outputs. Output location
    /// and thread count are left out so relocated or parallel runs match.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.output_dir = PathBuf::new();
        view.threads = None;
        let json = serde_json::to_string(&view).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Checks every section, and that all configured input paths exist.
    pub fn validate(&self) -> Result<(), PipelineError> {
        for p in [&self.input.uah_root, &self.input.cohort_spec, &self.input.trips_csv].into_iter().flatten() {
            if !p.exists() {
                return Err(bad(format!("input path {} does not exist", p.display())));
            }
        }
        if self.threads == Some(0) {
            return Err(bad("threads must be positive"));
        }
        let u = &self.uah;
        if u.time_column == 0 || u.accel_column == 0 || u.time_column == u.accel_column {
            return Err(bad("uah columns are 1-based and must differ"));
        }
        if !(u.sample_rate_hz > 0.0) {
            return Err(bad("uah.sample_rate_hz must be positive"));
        }
        let w = &self.wavelet;
        match w.depth {
            DepthSetting::Fixed(0) => return Err(bad("wavelet.depth must be at least 1")),
            DepthSetting::Fixed(j) if j > 20 => return Err(bad("wavelet.depth above 20")),
            DepthSetting::Auto(_) => {
                if !(w.drop_threshold > 0.0 && w.drop_threshold < 1.0) {
                    return Err(bad("wavelet.drop_threshold must lie in (0, 1)"));
                }
                if w.max_depth == 0 || w.max_depth > 20 {
                    return Err(bad("wavelet.max_depth must lie in 1..=20"));
                }
            }
            _ => {}
        }
        let top = match w.depth {
            DepthSetting::Fixed(j) => j,
            DepthSetting::Auto(_) => w.max_depth,
        };
        if w.levels.iter().any(|&l| l == 0 || l > top) {
            return Err(bad(format!("wavelet.levels must lie in 1..={top}")));
        }
        match &w.rule {
            AggregationRule::SingleLevel(l) if *l == 0 || *l > top => {
                return Err(bad(format!("single_level {l} outside 1..={top}")));
            }
            AggregationRule::WeightedAbs(ws) => {
                let n = if w.levels.is_empty() { top } else { w.levels.len() };
                if ws.len() != n || ws.iter().any(|x| !(*x >= 0.0)) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(bad("weighted_abs needs one nonnegative weight per level, summing to 1"));
                }
            }
            _ => {}
        }
        self.thinning.validate().map_err(|e| bad(e.to_string()))?;
        if let PortfolioMode::Hierarchical { draws: 0 } = self.portfolio {
            return Err(bad("portfolio draws must be positive"));
        }
        self.severity.validate().map_err(|e| bad(e.to_string()))?;
        let s = &self.selection;
        if s.g.is_empty() || s.m_left.is_empty() || s.m_right.is_empty() {
            return Err(bad("selection grids must be nonempty"));
        }
        if s.g.iter().chain(&s.m_left).chain(&s.m_right).any(|&v| v == 0) {
            return Err(bad("selection grid entries must be positive"));
        }
        let r = &self.risk;
        if !(0.0..0.5).contains(&r.omega) {
            return Err(bad("risk.omega must lie in [0, 0.5)"));
        }
        match r.gamma {
            GammaSetting::Fixed(g) if !(g >= 0.0 && g.is_finite()) => {
                return Err(bad("risk.gamma must be a finite nonnegative number or \"search\""));
            }
            GammaSetting::Search(_) if r.gamma_grid.is_empty() || r.gamma_grid.iter().any(|g| !(*g >= 0.0)) => {
                return Err(bad("risk.gamma_grid must hold nonnegative values"));
            }
            _ => {}
        }
        self.cv().validate().map_err(|e| bad(e.to_string()))?;
        if self.classify.schemes.is_empty() || self.classify.ablations.is_empty() {
            return Err(bad("classify.schemes and classify.ablations must be nonempty"));
        }
        Ok(())
    }
}
