//! The pipeline config file (TOML). Relative paths resolve against the
//! directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use super::stages::SynthOptions;
use crate::aggregate::{windows, AggregateParams, DEFAULT_WINDOW_LENGTH, DEFAULT_WINDOW_OVERLAP};
use crate::eval::ClassMap;
use crate::fuse::{FusionParams, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::inject::{InjectionPolicy, DEFAULT_MIN_POINTS, DEFAULT_SCORE_THRESHOLD};
use crate::reconstruct::ReconstructParams;
use crate::sensor::SensorCatalog;
use crate::trace::{TraceParams, DEFAULT_SUPERSAMPLING};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    #[serde(default)]
    pub workers: usize,
    pub output: PathBuf,
    /// Sensor catalog file; the built-in catalog when absent.
    #[serde(default)]
    pub sensor_catalog: Option<PathBuf>,
    #[serde(default)]
    pub dump_ply: bool,
    pub source: SourceSection,
    pub target: TargetSection,
    #[serde(default)]
    pub aggregate: AggregateSection,
    #[serde(default)]
    pub reconstruct: ReconstructParams,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub inject: InjectSection,
    #[serde(default)]
    pub fuse: FuseSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Sequence manifest of the labeled source dataset.
    pub sequence: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub sensor: String,
    /// Target-domain frames; needed for injection and fusion.
    #[serde(default)]
    pub sequence: Option<PathBuf>,
    /// Cuboids of the target frames, for the instance bank.
    #[serde(default)]
    pub cuboids: Option<PathBuf>,
    /// Pseudo-label directory for the target frames.
    #[serde(default)]
    pub pseudo_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateSection {
    pub stride: usize,
    pub world_radius: f64,
    pub window_length: usize,
    pub window_overlap: usize,
}

impl Default for AggregateSection {
    fn default() -> Self {
        let p = AggregateParams::default();
        AggregateSection {
            stride: p.stride,
            world_radius: p.world_radius,
            window_length: DEFAULT_WINDOW_LENGTH,
            window_overlap: DEFAULT_WINDOW_OVERLAP,
        }
    }
}

impl AggregateSection {
    pub fn params(&self) -> AggregateParams {
        AggregateParams {
            stride: self.stride,
            world_radius: self.world_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    pub supersampling: usize,
    pub bleed_band: f64,
    pub max_azimuth_span_deg: f64,
    pub pose_stride: usize,
}

impl Default for TraceSection {
    fn default() -> Self {
        let p = TraceParams::default();
        TraceSection {
            supersampling: DEFAULT_SUPERSAMPLING,
            bleed_band: p.bleed_band,
            max_azimuth_span_deg: p.max_azimuth_span_deg,
            pose_stride: 1,
        }
    }
}

impl TraceSection {
    pub fn params(&self) -> TraceParams {
        TraceParams {
            supersampling: self.supersampling,
            bleed_band: self.bleed_band,
            max_azimuth_span_deg: self.max_azimuth_span_deg,
            ..TraceParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectSection {
    pub enabled: bool,
    /// Expected instances per frame, keyed by class id.
    pub rates: BTreeMap<String, f64>,
    pub score_threshold: f64,
    pub min_points: usize,
}

impl Default for InjectSection {
    fn default() -> Self {
        InjectSection {
            enabled: true,
            rates: BTreeMap::new(),
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            min_points: DEFAULT_MIN_POINTS,
        }
    }
}

impl InjectSection {
    pub fn policy(&self, seed: u64) -> Result<InjectionPolicy> {
        let mut rates = BTreeMap::new();
        for (k, v) in &self.rates {
            let class: u32 = k
                .parse()
                .with_context(|| format!("inject.rates key '{k}' is not a class id"))?;
            rates.insert(class, *v);
        }
        Ok(InjectionPolicy {
            rates,
            score_threshold: self.score_threshold,
            min_points: self.min_points,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseSection {
    pub enabled: bool,
    pub confidence_threshold: f32,
}

impl Default for FuseSection {
    fn default() -> Self {
        FuseSection {
            enabled: true,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

impl FuseSection {
    pub fn params(&self, seed: u64) -> FusionParams {
        FusionParams {
            confidence_threshold: self.confidence_threshold,
            pairing_seed: seed,
            ..FusionParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Reference frames for the traced output, compared cell by cell.
    pub reference: Option<PathBuf>,
    pub gt_map: String,
    pub pred_map: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            reference: None,
            gt_map: "joint".into(),
            pred_map: "joint".into(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_file(p: &Path, key: &str) -> Result<()> {
    ensure!(p.is_file(), "{key}: file not found: {}", p.display());
    Ok(())
}

/// Class maps are built-in names or files relative to the config.
fn resolve_map(base: &Path, spec: &mut String, key: &str) -> Result<()> {
    if ClassMap::builtin(spec).is_ok() {
        return Ok(());
    }
    let p = base.join(&*spec);
    require_file(&p, key)?;
    ClassMap::load(&p).with_context(|| format!("{key}: {}", p.display()))?;
    *spec = p.display().to_string();
    Ok(())
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).context("invalid config")?;
        cfg.resolve_paths(base)?;
        Ok(cfg)
    }

    /// Loads, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("config {}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        resolve(base, &mut self.output);
        resolve(base, &mut self.source.sequence);
        for p in [
            &mut self.sensor_catalog,
            &mut self.target.sequence,
            &mut self.target.cuboids,
            &mut self.target.pseudo_labels,
            &mut self.eval.reference,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve_map(base, &mut self.eval.gt_map, "eval.gt_map")?;
        resolve_map(base, &mut self.eval.pred_map, "eval.pred_map")?;
        Ok(())
    }

    pub fn catalog(&self) -> Result<SensorCatalog> {
        Ok(match &self.sensor_catalog {
            Some(p) => SensorCatalog::load(p).with_context(|| format!("sensor_catalog {}", p.display()))?,
            None => SensorCatalog::builtin(),
        })
    }

    /// Referenced files exist and every parameter is in range.
    pub fn validate(&self) -> Result<()> {
        require_file(&self.source.sequence, "source.sequence")?;
        if let Some(p) = &self.sensor_catalog {
            require_file(p, "sensor_catalog")?;
        }
        if let Some(p) = &self.target.sequence {
            require_file(p, "target.sequence")?;
        }
        if let Some(p) = &self.target.cuboids {
            require_file(p, "target.cuboids")?;
        }
        if let Some(p) = &self.target.pseudo_labels {
            ensure!(p.is_dir(), "target.pseudo_labels: directory not found: {}", p.display());
        }
        if let Some(p) = &self.eval.reference {
            require_file(p, "eval.reference")?;
        }
        let catalog = self.catalog()?;
        catalog.get(&self.target.sensor).context("target.sensor")?;
        self.aggregate.params().validate().context("[aggregate]")?;
        windows(1, self.aggregate.window_length, self.aggregate.window_overlap).context("[aggregate]")?;
        self.reconstruct.tsdf.validate().context("[reconstruct.tsdf]")?;
        ensure!(self.reconstruct.normal_k >= 3, "[reconstruct] normal_k must be >= 3");
        ensure!(self.reconstruct.transfer.k >= 1, "[reconstruct.transfer] k must be >= 1");
        self.trace.params().validate().context("[trace]")?;
        ensure!(self.trace.pose_stride >= 1, "[trace] pose_stride must be >= 1");
        self.inject.policy(self.seed)?.validate().context("[inject]")?;
        self.fuse.params(self.seed).validate().context("[fuse]")?;
        if self.inject.enabled && self.inject.rates.values().any(|&r| r > 0.0) {
            if self.target.sequence.is_none() || self.target.cuboids.is_none() {
                bail!("[inject] needs target.sequence and target.cuboids for the instance bank");
            }
        }
        Ok(())
    }
}

/// The config `synth` writes next to its output.
pub fn synth_config_template(opts: &SynthOptions) -> String {
    use crate::synthworld::class;
    format!(
        r#"# Pipeline over the synthetic dataset in this directory.
seed = {seed}
workers = 0
output = "pipeline"

[source]
sequence = "source/manifest.json"

[target]
sensor = "{target}"
sequence = "target/manifest.json"
cuboids = "target/cuboids.jsonl"

[aggregate]
stride = 1
world_radius = 120.0
window_length = 200
window_overlap = 50

[reconstruct]
normal_k = 12

[reconstruct.tsdf]
voxel_size = 0.1
truncation = 0.3
band = 0.2

[trace]
supersampling = 3
pose_stride = 1

[inject]
rates = {{ "{car}" = 1.0, "{ped}" = 1.0 }}

[fuse]
confidence_threshold = 0.85

[eval]
reference = "oracle/manifest.json"
gt_map = "joint"
pred_map = "joint"
"#,
        seed = opts.seed,
        target = opts.target_sensor,
        car = class::CAR,
        ped = class::PEDESTRIAN,
    )
}
