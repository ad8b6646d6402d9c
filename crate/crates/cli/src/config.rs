//! Scenario configuration: one TOML file per scenario, overridable key by key
//! from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use uwsl_core::edicp::RegistrationConfig;
use uwsl_core::fixtures;
use uwsl_core::fusion::{Mat6, Mat9, Method};
use uwsl_core::sim::{
    ClutterSpec, DefectKind, DefectSpec, NoiseSpec, PipeSegment, ScanMode, SceneSpec, ServoSweep, SpeedProfile, TrajectorySpec,
};
use uwsl_core::{DisplacementMode, FilterConfig, Vec3};

use crate::error::{usage, CliResult};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "UWSL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Required whenever a stage draws random numbers.
    pub seed: Option<u64>,
    /// Output directory.
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub trajectory: TrajectoryConfig,
    pub filter: FilterSection,
    pub registration: RegistrationSection,
    pub calibration: CalibrationSection,
    pub inputs: Inputs,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            scene: SceneConfig::default(),
            trajectory: TrajectoryConfig::default(),
            filter: FilterSection::default(),
            registration: RegistrationSection::default(),
            calibration: CalibrationSection::default(),
            inputs: Inputs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub pipes: Vec<PipeConfig>,
    /// Height of the flat bed the pipes rest on, meters; no bed if absent.
    pub bed: Option<f64>,
    pub defects: Vec<DefectConfig>,
    pub clutter: Option<ClutterConfig>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { pipes: vec![PipeConfig::default()], bed: Some(0.0), defects: Vec::new(), clutter: None }
    }
}

/// Pipe lying on the bed with its axis along world `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipeConfig {
    pub radius: f64,
    pub length: f64,
    pub x_center: f64,
}

impl Default for PipeConfig {
    fn default() -> Self {
        Self { radius: 0.08, length: 0.3, x_center: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectConfig {
    /// `attachment`, `depression` or `leak`.
    pub kind: String,
    #[serde(default)]
    pub segment: usize,
    pub axial: f64,
    /// Radians from the horizontal, toward the top of the pipe.
    pub azimuth: f64,
    pub size: f64,
    #[serde(default)]
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterConfig {
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// `[x_min, x_max, y_min, y_max]`, meters.
    pub region: [f64; 4],
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// `translation`, `rotation` or `translation-rotation`.
    pub mode: String,
    /// `uniform` or `variable`.
    pub speed: String,
    /// Uniform speed, or the mean of a variable profile, m/s.
    pub speed_mps: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub speed_step_sigma: f64,
    pub knot_interval: f64,
    pub start_x: f64,
    pub height: f64,
    pub duration: f64,
    pub frame_rate: f64,
    pub imu_rate: f64,
    pub dvl_rate: f64,
    pub servo_min_deg: f64,
    pub servo_max_deg: f64,
    pub servo_rate_deg: f64,
    pub noise_accel: f64,
    pub noise_gyro: f64,
    pub noise_dvl: f64,
    pub accel_bias: [f64; 3],
    /// DVL outage windows `[start, end]`, seconds.
    pub outages: Vec<[f64; 2]>,
    /// Displacement flag: 0 calibrated velocity, 1 fused velocity.
    pub mu: u8,
    /// Stripe centerline noise, pixels.
    pub pixel_sigma: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let SpeedProfile::Variable { min, max, step_sigma, knot_interval, .. } = SpeedProfile::variable_default() else {
            unreachable!("variable default is variable")
        };
        Self {
            mode: "translation".into(),
            speed: "uniform".into(),
            speed_mps: fixtures::SCAN_SPEED,
            speed_min: min,
            speed_max: max,
            speed_step_sigma: step_sigma,
            knot_interval,
            start_x: -0.2,
            height: 0.51,
            duration: 0.4 / fixtures::SCAN_SPEED,
            frame_rate: 5.0,
            imu_rate: 200.0,
            dvl_rate: 10.0,
            servo_min_deg: -30.0,
            servo_max_deg: 30.0,
            servo_rate_deg: 10.0,
            noise_accel: 0.0,
            noise_gyro: 0.0,
            noise_dvl: 0.0,
            accel_bias: [0.0; 3],
            outages: Vec::new(),
            mu: 0,
            pixel_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// `dr`, `ekf` or `aekf`.
    pub method: String,
    /// Accelerometer noise variance, (m/s²)².
    pub q_accel: f64,
    /// Gyro noise variance, (rad/s)².
    pub q_gyro: f64,
    /// DVL noise variance, (m/s)².
    pub r_dvl: f64,
    pub p0: f64,
    pub k_m: f64,
    /// Stream matching tolerance, seconds.
    pub sync_tol: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            method: "aekf".into(),
            q_accel: d.q[(0, 0)],
            q_gyro: d.q[(3, 3)],
            r_dvl: d.r[(0, 0)],
            p0: d.p0[(0, 0)],
            k_m: d.k_m,
            sync_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    /// Edge gating distance, pixels.
    pub eps_px: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub overlap_min: f64,
    pub overlap_max: f64,
    /// Plain ICP instead of the weighted, adaptive variant.
    pub baseline: bool,
    /// Make `simulate` render edge images and write the gated cloud.
    pub gate: bool,
    /// Seconds between rendered edge images.
    pub edge_interval: f64,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        let d = RegistrationConfig::default();
        Self {
            eps_px: fixtures::EDGE_GATE_PX,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            overlap_min: d.overlap_bounds.0,
            overlap_max: d.overlap_bounds.1,
            baseline: false,
            gate: false,
            edge_interval: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Camera/DVL motion pairs written by `simulate`.
    pub pairs: usize,
    pub sigma_t: f64,
    pub sigma_r_deg: f64,
    pub max_iter: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { pairs: 20, sigma_t: 0.0, sigma_r_deg: 0.0, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub imu: Option<PathBuf>,
    pub dvl: Option<PathBuf>,
    /// Body trajectory truth for `fuse`.
    pub trajectory_truth: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub poses: Option<PathBuf>,
    pub plane: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    /// Point-wise truth of `cloud`.
    pub truth: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
}

/// Parses a flag value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Sets a dotted key, creating intermediate tables.
fn set_dotted(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| usage(format!("empty config key '{key}'")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| usage(format!("config key '{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Reads the config file (if any), applies `key value` overrides and the
/// seed environment variable, and validates the result.
pub fn load(path: Option<&Path>, overrides: &[(String, String)], env_seed: Option<&str>) -> CliResult<ScenarioConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for (k, v) in overrides {
        set_dotted(&mut table, k, parse_value(v))?;
    }
    if let Some(s) = env_seed {
        let seed: u64 = s.trim().parse().map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got '{s}'")))?;
        table.insert("seed".into(), Value::Integer(seed as i64));
    }
    let cfg: ScenarioConfig = table.try_into().map_err(|e: toml::de::Error| usage(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Splits `--key value` pairs.
pub fn parse_overrides(args: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag.strip_prefix("--").ok_or_else(|| usage(format!("expected --key, got '{flag}'")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("flag --{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key, value));
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.scan_mode()?;
        self.method()?;
        self.speed_profile()?;
        self.displacement()?;
        for d in &self.scene.defects {
            defect_kind(&d.kind)?;
        }
        if self.seed.is_none() && self.is_stochastic() {
            return Err(usage(format!(
                "a seed is required for this configuration (variable speed, noise or clutter); set 'seed' or {SEED_ENV}"
            )));
        }
        Ok(())
    }

    /// Whether any stage draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        let t = &self.trajectory;
        t.speed == "variable"
            || t.noise_accel > 0.0
            || t.noise_gyro > 0.0
            || t.noise_dvl > 0.0
            || t.pixel_sigma > 0.0
            || self.scene.clutter.is_some_and(|c| c.count > 0)
            || self.calibration.sigma_t > 0.0
            || self.calibration.sigma_r_deg > 0.0
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn scan_mode(&self) -> CliResult<ScanMode> {
        self.trajectory.mode.parse().map_err(|e: uwsl_core::Error| usage(e.to_string()))
    }

    pub fn method(&self) -> CliResult<Method> {
        self.filter.method.parse().map_err(|e: uwsl_core::Error| usage(e.to_string()))
    }

    pub fn displacement(&self) -> CliResult<DisplacementMode> {
        DisplacementMode::from_mu(self.trajectory.mu).map_err(|e| usage(e.to_string()))
    }

    pub fn speed_profile(&self) -> CliResult<SpeedProfile> {
        let t = &self.trajectory;
        match t.speed.as_str() {
            "uniform" => Ok(SpeedProfile::Uniform(t.speed_mps)),
            "variable" => Ok(SpeedProfile::Variable {
                mean: t.speed_mps,
                min: t.speed_min,
                max: t.speed_max,
                step_sigma: t.speed_step_sigma,
                knot_interval: t.knot_interval,
            }),
            other => Err(usage(format!("unknown speed profile '{other}' (uniform|variable)"))),
        }
    }

    pub fn scene_spec(&self) -> CliResult<SceneSpec> {
        let bed = self.scene.bed.unwrap_or(0.0);
        let segments = self.scene.pipes.iter().map(|p| PipeSegment::on_bed(p.radius, p.length, p.x_center, bed)).collect();
        let defects = self
            .scene
            .defects
            .iter()
            .map(|d| {
                Ok(DefectSpec {
                    kind: defect_kind(&d.kind)?,
                    segment: d.segment,
                    axial: d.axial,
                    azimuth: d.azimuth,
                    size: d.size,
                    height: d.height,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let clutter = self.scene.clutter.map(|c| ClutterSpec {
            count: c.count,
            radius_range: (c.radius_min, c.radius_max),
            region: c.region,
            clearance: c.clearance,
        });
        let spec = SceneSpec { segments, defects, terrain_height: self.scene.bed, clutter };
        spec.validate().map_err(|e| usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn trajectory_spec(&self) -> CliResult<TrajectorySpec> {
        let t = &self.trajectory;
        let mut spec = TrajectorySpec::scan(self.scan_mode()?, self.speed_profile()?, t.start_x, t.height, t.duration);
        spec.servo = ServoSweep {
            min: t.servo_min_deg.to_radians(),
            max: t.servo_max_deg.to_radians(),
            rate: t.servo_rate_deg.to_radians(),
        };
        spec.frame_rate = t.frame_rate;
        spec.imu_rate = t.imu_rate;
        spec.dvl_rate = t.dvl_rate;
        spec.noise = NoiseSpec {
            accel: t.noise_accel,
            gyro: t.noise_gyro,
            dvl: t.noise_dvl,
            accel_bias: Vec3::from(t.accel_bias),
        };
        spec.outages = t.outages.iter().map(|w| (w[0], w[1])).collect();
        spec.validate().map_err(|e| usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn filter_config(&self) -> CliResult<FilterConfig> {
        let f = &self.filter;
        let mut q = Mat6::zeros();
        for i in 0..3 {
            q[(i, i)] = f.q_accel;
            q[(i + 3, i + 3)] = f.q_gyro;
        }
        let mut cfg = FilterConfig { q, k_m: f.k_m, p0: Mat9::identity() * f.p0, ..FilterConfig::default() };
        cfg.r.fill_with_identity();
        cfg.r *= f.r_dvl;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn registration_config(&self) -> CliResult<RegistrationConfig> {
        let r = &self.registration;
        let base = if r.baseline { RegistrationConfig::plain_icp() } else { RegistrationConfig::default() };
        let cfg = RegistrationConfig {
            max_iterations: r.max_iterations,
            tolerance: r.tolerance,
            overlap_bounds: (r.overlap_min, r.overlap_max),
            ..base
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Path of an input file, or a usage error naming the missing key.
    pub fn input(&self, key: &str) -> CliResult<&Path> {
        let i = &self.inputs;
        let v = match key {
            "imu" => &i.imu,
            "dvl" => &i.dvl,
            "trajectory_truth" => &i.trajectory_truth,
            "pairs" => &i.pairs,
            "frames" => &i.frames,
            "poses" => &i.poses,
            "plane" => &i.plane,
            "cloud" => &i.cloud,
            "truth" => &i.truth,
            "source" => &i.source,
            "target" => &i.target,
            _ => &None,
        };
        v.as_deref().ok_or_else(|| usage(format!("missing input: set inputs.{key} (--inputs.{key} <path>)")))
    }

    /// The resolved configuration as a TOML table, for report echoes.
    pub fn to_table(&self) -> Table {
        Table::try_from(self).expect("config serializes")
    }
}

fn defect_kind(s: &str) -> CliResult<DefectKind> {
    match s {
        "attachment" => Ok(DefectKind::Attachment),
        "depression" => Ok(DefectKind::Depression),
        "leak" => Ok(DefectKind::Leak),
        other => Err(usage(format!("unknown defect kind '{other}' (attachment|depression|leak)"))),
    }
}
