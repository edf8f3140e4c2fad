//! Scenario configuration: a flat key/value text format plus the shipped
//! presets.
//!
//! The format is line-oriented: `key = value` with `#` comments, list
//! values in brackets (`ber = [0, 0.01]`), dotted keys for per-user prompts
//! (`prompt.user1 = Apple on Table`) and per-device overrides
//! (`device.user1.compute_rate = 4.0`). Unknown keys are rejected by name;
//! parse errors carry line numbers. At most one of `architecture`,
//! `shared_steps`, `ber`, `snr` may be a list; its values become the sweep
//! cells.

use crate::channel::QuantizationSpec;
use crate::error::{Error, Result};
use crate::orchestrator::{AdaptParams, Architecture, DeviceProfile, PowerClass, Role};
use crate::semantic::SharedPolicy;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrototypeSource {
    Builtin,
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphSource {
    Builtin,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Lossless,
    Fixed,
    Awgn,
    Rayleigh,
}

impl ChannelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelKind::Lossless => "lossless",
            ChannelKind::Fixed => "fixed",
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        }
    }
}

pub fn architecture_name(a: Architecture) -> &'static str {
    match a {
        Architecture::EdgeToMulti => "edge_to_multi",
        Architecture::DeviceToDevice => "d2d",
        Architecture::Cluster { with_edge: false } => "cluster",
        Architecture::Cluster { with_edge: true } => "cluster_edge",
    }
}

/// A fully validated scenario description with defaults filled in.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub width: usize,
    pub height: usize,
    pub sigma0: f64,
    pub context_weight: f64,
    pub prototypes: PrototypeSource,
    pub graph: GraphSource,
    /// (user id, prompt text) in file order.
    pub prompts: Vec<(String, String)>,
    pub architectures: Vec<Architecture>,
    pub shared_steps: Vec<usize>,
    pub channel: ChannelKind,
    pub ber: Vec<f64>,
    pub snr: Vec<f64>,
    pub quant: QuantizationSpec,
    pub threshold: f64,
    pub policy: SharedPolicy,
    pub cache: bool,
    pub force_group: bool,
    pub repetitions: usize,
    pub fixed_rate_bps: f64,
    pub fade_timeline: Vec<(f64, f64)>,
    pub adapt: AdaptParams,
    pub devices: Vec<DeviceProfile>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: "scenario".into(),
            seed: 42,
            steps: 11,
            beta_start: 0.1,
            beta_end: 0.6,
            width: 16,
            height: 16,
            sigma0: 0.05,
            context_weight: 0.02,
            prototypes: PrototypeSource::Builtin,
            graph: GraphSource::Builtin,
            prompts: Vec::new(),
            architectures: vec![Architecture::EdgeToMulti],
            shared_steps: vec![5],
            channel: ChannelKind::Fixed,
            ber: vec![0.0],
            snr: vec![1.0],
            quant: QuantizationSpec::default(),
            threshold: 0.5,
            policy: SharedPolicy::Leader,
            cache: true,
            force_group: false,
            repetitions: 50,
            fixed_rate_bps: 20_000.0,
            fade_timeline: Vec::new(),
            adapt: AdaptParams::default(),
            devices: Vec::new(),
        }
    }
}

fn default_edge() -> DeviceProfile {
    DeviceProfile {
        id: "edge".into(),
        role: Role::Edge,
        compute_rate: 20.0,
        energy_per_step: 0.5,
        power_class: PowerClass::Medium,
        uplink_hz: 1e5,
        downlink_hz: 1e5,
    }
}

fn default_user(id: &str) -> DeviceProfile {
    DeviceProfile {
        id: id.into(),
        role: Role::User,
        compute_rate: 2.0,
        energy_per_step: 1.0,
        power_class: PowerClass::Medium,
        uplink_hz: 1e4,
        downlink_hz: 1e4,
    }
}

/// One sweep cell: the value that varies, everything else fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellSpec {
    Single,
    Ber(f64),
    Snr(f64),
    SharedSteps(usize),
    Arch(Architecture),
}

impl CellSpec {
    pub fn label(&self) -> String {
        match self {
            CellSpec::Single => "single".into(),
            CellSpec::Ber(p) => format!("ber={p}"),
            CellSpec::Snr(s) => format!("snr={s}"),
            CellSpec::SharedSteps(s) => format!("s={s}"),
            CellSpec::Arch(a) => format!("arch={}", architecture_name(*a)),
        }
    }
}

impl ScenarioConfig {
    /// The sweep cells this scenario expands into.
    pub fn cells(&self) -> Vec<CellSpec> {
        if self.architectures.len() > 1 {
            return self
                .architectures
                .iter()
                .map(|a| CellSpec::Arch(*a))
                .collect();
        }
        if self.shared_steps.len() > 1 {
            return self
                .shared_steps
                .iter()
                .map(|s| CellSpec::SharedSteps(*s))
                .collect();
        }
        match self.channel {
            ChannelKind::Fixed if self.ber.len() > 1 => {
                self.ber.iter().map(|p| CellSpec::Ber(*p)).collect()
            }
            ChannelKind::Awgn | ChannelKind::Rayleigh if self.snr.len() > 1 => {
                self.snr.iter().map(|s| CellSpec::Snr(*s)).collect()
            }
            _ => vec![CellSpec::Single],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let key = |k: &str, m: String| Error::Config(format!("{k}: {m}"));
        if self.prompts.is_empty() {
            return Err(key(
                "prompt",
                "at least one prompt.<user> entry required".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(key("repetitions", "must be >= 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(key("width/height", "must be positive".into()));
        }
        for s in &self.shared_steps {
            if *s > self.steps {
                return Err(key(
                    "shared_steps",
                    format!("{s} exceeds chain length {}", self.steps),
                ));
            }
        }
        if self.shared_steps.is_empty() || self.ber.is_empty() || self.snr.is_empty() {
            return Err(key("sweep", "sweep lists must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(key("threshold", "must lie in [0, 1]".into()));
        }
        for p in &self.ber {
            if !(0.0..=1.0).contains(p) {
                return Err(key("ber", format!("{p} outside [0, 1]")));
            }
        }
        for s in &self.snr {
            if !(*s > 0.0) {
                return Err(key("snr", format!("{s} must be positive")));
            }
        }
        if !(self.sigma0 >= 0.0) {
            return Err(key("sigma0", "must be >= 0".into()));
        }
        if !(self.context_weight > 0.0) {
            return Err(key("context_weight", "must be positive".into()));
        }
        if !(self.fixed_rate_bps > 0.0) {
            return Err(key("fixed_rate_bps", "must be positive".into()));
        }
        let sweep_lists = [
            self.architectures.len() > 1,
            self.shared_steps.len() > 1,
            self.ber.len() > 1,
            self.snr.len() > 1,
        ];
        if sweep_lists.iter().filter(|b| **b).count() > 1 {
            return Err(key(
                "sweep",
                "only one of architecture/shared_steps/ber/snr may be a list".into(),
            ));
        }
        match self.channel {
            ChannelKind::Lossless if self.ber.iter().any(|p| *p != 0.0) => {
                return Err(key("ber", "not applicable to a lossless channel".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Every device the scenario can touch: one per prompt user plus the
    /// default edge, with any overrides already applied.
    pub fn profiles(&self) -> Vec<DeviceProfile> {
        let mut out = self.devices.clone();
        if !out.iter().any(|d| d.role == Role::Edge) {
            out.push(default_edge());
        }
        for (user, _) in &self.prompts {
            if !out.iter().any(|d| &d.id == user) {
                out.push(default_user(user));
            }
        }
        out
    }
}

struct Parser {
    cfg: ScenarioConfig,
    /// device id -> (field, value, line)
    device_overrides: Vec<(String, String, String, usize)>,
    saw_snr: bool,
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{key}: cannot parse {value:?}"),
    })
}

fn parse_list(value: &str) -> Option<Vec<String>> {
    let inner = value.strip_prefix('[')?.strip_suffix(']')?;
    Some(
        inner
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    )
}

fn parse_number_list(key: &str, value: &str, line: usize) -> Result<Vec<f64>> {
    match parse_list(value) {
        Some(items) => items.iter().map(|s| parse_scalar(key, s, line)).collect(),
        None => Ok(vec![parse_scalar(key, value, line)?]),
    }
}

fn parse_switch(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("{key}: expected on/off, got {value:?}"),
        }),
    }
}

fn parse_architecture(value: &str, line: usize) -> Result<Architecture> {
    match value {
        "edge_to_multi" => Ok(Architecture::EdgeToMulti),
        "d2d" => Ok(Architecture::DeviceToDevice),
        "cluster" => Ok(Architecture::Cluster { with_edge: false }),
        "cluster_edge" => Ok(Architecture::Cluster { with_edge: true }),
        _ => Err(Error::Parse {
            line,
            message: format!("architecture: unknown variant {value:?}"),
        }),
    }
}

impl Parser {
    fn new() -> Self {
        Parser {
            cfg: ScenarioConfig::default(),
            device_overrides: Vec::new(),
            saw_snr: false,
        }
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let err = |message: String| Error::Parse { line, message };
        if let Some(user) = key.strip_prefix("prompt.") {
            if user.is_empty() {
                return Err(err("prompt key needs a user id".into()));
            }
            if self.cfg.prompts.iter().any(|(u, _)| u == user) {
                return Err(err(format!("duplicate prompt for user {user:?}")));
            }
            self.cfg.prompts.push((user.to_string(), value.to_string()));
            return Ok(());
        }
        if let Some(rest) = key.strip_prefix("device.") {
            let (id, field) = rest
                .rsplit_once('.')
                .ok_or_else(|| err(format!("device key {key:?} needs device.<id>.<field>")))?;
            self.device_overrides.push((
                id.to_string(),
                field.to_string(),
                value.to_string(),
                line,
            ));
            return Ok(());
        }
        match key {
            "schema_version" => {
                if value != "1" {
                    return Err(err(format!("unsupported schema_version {value:?}")));
                }
            }
            "scenario" => self.cfg.scenario = value.to_string(),
            "seed" => self.cfg.seed = parse_scalar(key, value, line)?,
            "steps" => self.cfg.steps = parse_scalar(key, value, line)?,
            "beta_start" => self.cfg.beta_start = parse_scalar(key, value, line)?,
            "beta_end" => self.cfg.beta_end = parse_scalar(key, value, line)?,
            "width" => self.cfg.width = parse_scalar(key, value, line)?,
            "height" => self.cfg.height = parse_scalar(key, value, line)?,
            "sigma0" => self.cfg.sigma0 = parse_scalar(key, value, line)?,
            "context_weight" => self.cfg.context_weight = parse_scalar(key, value, line)?,
            "prototypes" => {
                self.cfg.prototypes = if value == "builtin" {
                    PrototypeSource::Builtin
                } else {
                    PrototypeSource::Dir(PathBuf::from(value))
                };
            }
            "graph" => {
                self.cfg.graph = if value == "builtin" {
                    GraphSource::Builtin
                } else {
                    GraphSource::File(PathBuf::from(value))
                };
            }
            "architecture" => {
                let items = parse_list(value).unwrap_or_else(|| vec![value.to_string()]);
                self.cfg.architectures = items
                    .iter()
                    .map(|v| parse_architecture(v, line))
                    .collect::<Result<_>>()?;
                if self.cfg.architectures.is_empty() {
                    return Err(err("architecture list is empty".into()));
                }
            }
            "shared_steps" => {
                let items = parse_list(value).unwrap_or_else(|| vec![value.to_string()]);
                self.cfg.shared_steps = items
                    .iter()
                    .map(|v| parse_scalar(key, v, line))
                    .collect::<Result<_>>()?;
                if self.cfg.shared_steps.is_empty() {
                    return Err(err("shared_steps list is empty".into()));
                }
            }
            "channel" => {
                self.cfg.channel = match value {
                    "lossless" => ChannelKind::Lossless,
                    "fixed" => ChannelKind::Fixed,
                    "awgn" => ChannelKind::Awgn,
                    "rayleigh" => ChannelKind::Rayleigh,
                    _ => return Err(err(format!("channel: unknown variant {value:?}"))),
                };
            }
            "ber" => {
                self.cfg.ber = parse_number_list(key, value, line)?;
                if self.cfg.ber.is_empty() {
                    return Err(err("ber list is empty".into()));
                }
            }
            "snr" => {
                self.cfg.snr = parse_number_list(key, value, line)?;
                self.saw_snr = true;
                if self.cfg.snr.is_empty() {
                    return Err(err("snr list is empty".into()));
                }
            }
            "quant_bits" => {
                let bits: u8 = parse_scalar(key, value, line)?;
                self.cfg.quant = QuantizationSpec::new(bits, self.cfg.quant.lo, self.cfg.quant.hi)
                    .map_err(|e| err(e.to_string()))?;
            }
            "quant_lo" => {
                let lo: f64 = parse_scalar(key, value, line)?;
                self.cfg.quant = QuantizationSpec::new(self.cfg.quant.bits, lo, self.cfg.quant.hi)
                    .map_err(|e| err(e.to_string()))?;
            }
            "quant_hi" => {
                let hi: f64 = parse_scalar(key, value, line)?;
                self.cfg.quant = QuantizationSpec::new(self.cfg.quant.bits, self.cfg.quant.lo, hi)
                    .map_err(|e| err(e.to_string()))?;
            }
            "threshold" => self.cfg.threshold = parse_scalar(key, value, line)?,
            "policy" => {
                self.cfg.policy = match value {
                    "leader" => SharedPolicy::Leader,
                    "union" => SharedPolicy::Union,
                    _ => return Err(err(format!("policy: unknown variant {value:?}"))),
                };
            }
            "cache" => self.cfg.cache = parse_switch(key, value, line)?,
            "force_group" => self.cfg.force_group = parse_switch(key, value, line)?,
            "repetitions" => self.cfg.repetitions = parse_scalar(key, value, line)?,
            "fixed_rate_bps" => self.cfg.fixed_rate_bps = parse_scalar(key, value, line)?,
            "deep_fade_snr" => self.cfg.adapt.deep_fade_snr = parse_scalar(key, value, line)?,
            "fade_extra_steps" => self.cfg.adapt.extra_steps = parse_scalar(key, value, line)?,
            "fade_timeline" => {
                let items = parse_list(value)
                    .ok_or_else(|| err("fade_timeline must be a [t:snr, ...] list".into()))?;
                let mut points = Vec::new();
                for item in items {
                    let (t, snr) = item
                        .split_once(':')
                        .ok_or_else(|| err(format!("fade_timeline entry {item:?} needs t:snr")))?;
                    points.push((
                        parse_scalar("fade_timeline.t", t.trim(), line)?,
                        parse_scalar("fade_timeline.snr", snr.trim(), line)?,
                    ));
                }
                self.cfg.fade_timeline = points;
            }
            _ => {
                return Err(err(format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }

    fn apply_device_overrides(&mut self) -> Result<()> {
        if self.device_overrides.is_empty() {
            return Ok(());
        }
        // materialize defaults first so overrides can patch them
        let mut devices = self.cfg.profiles();
        for (id, field, value, line) in &self.device_overrides {
            let err = |message: String| Error::Parse {
                line: *line,
                message,
            };
            let known_user = self.cfg.prompts.iter().any(|(u, _)| u == id);
            if !known_user && id != "edge" {
                return Err(err(format!(
                    "device.{id}: no prompt user or edge with this id"
                )));
            }
            let dev = devices
                .iter_mut()
                .find(|d| &d.id == id)
                .expect("materialized");
            match field.as_str() {
                "compute_rate" => dev.compute_rate = parse_scalar(field, value, *line)?,
                "energy_per_step" => dev.energy_per_step = parse_scalar(field, value, *line)?,
                "uplink_hz" => dev.uplink_hz = parse_scalar(field, value, *line)?,
                "downlink_hz" => dev.downlink_hz = parse_scalar(field, value, *line)?,
                "power_class" => {
                    dev.power_class = match value.as_str() {
                        "low" => PowerClass::Low,
                        "medium" => PowerClass::Medium,
                        "high" => PowerClass::High,
                        _ => return Err(err(format!("power_class: unknown {value:?}"))),
                    };
                }
                _ => return Err(err(format!("unknown device field {field:?}"))),
            }
        }
        self.cfg.devices = devices;
        Ok(())
    }
}

/// Parse a scenario from text; `name` seeds the scenario id when the file
/// does not set one.
pub fn parse_config(text: &str, name: &str) -> Result<ScenarioConfig> {
    let mut parser = Parser::new();
    parser.cfg.scenario = name.to_string();
    let mut explicit_scenario = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key == "scenario" {
            explicit_scenario = true;
        }
        parser.set(key, value, lineno + 1)?;
    }
    if !explicit_scenario {
        parser.cfg.scenario = name.to_string();
    }
    parser.apply_device_overrides()?;
    // snr given without a fading channel is a schema violation
    if parser.saw_snr
        && !matches!(
            parser.cfg.channel,
            ChannelKind::Awgn | ChannelKind::Rayleigh
        )
    {
        return Err(Error::Config(
            "snr: only applicable to awgn/rayleigh channels".into(),
        ));
    }
    parser.cfg.validate()?;
    Ok(parser.cfg)
}

/// Load a scenario file; the file stem becomes the default scenario id.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "scenario".into());
    parse_config(&text, &name)
}

/// The experiment presets shipped with the binary, as config text.
pub fn preset_text(name: &str) -> Option<&'static str> {
    let text = match name {
        // wireless corruption of the handoff between two fruit prompts
        "ber_sweep" => {
            "scenario = ber_sweep\n\
             seed = 42\n\
             steps = 11\n\
             sigma0 = 0.7\n\
             context_weight = 0.02\n\
             prompt.user1 = Apple on Table\n\
             prompt.user2 = Lemon on Table\n\
             architecture = d2d\n\
             device.user1.compute_rate = 4.0\n\
             shared_steps = 5\n\
             channel = fixed\n\
             ber = [0, 0.005, 0.01, 0.02, 0.05, 0.1]\n\
             repetitions = 50\n"
        }
        // how much of the chain can be shared before quality collapses
        "split_sweep" => {
            "scenario = split_sweep\n\
             seed = 42\n\
             steps = 11\n\
             sigma0 = 0.7\n\
             context_weight = 0.02\n\
             prompt.user1 = Apple on Table\n\
             prompt.user2 = Lemon on Table\n\
             architecture = d2d\n\
             device.user1.compute_rate = 4.0\n\
             shared_steps = [5, 7, 9]\n\
             channel = fixed\n\
             ber = 0\n\
             repetitions = 50\n"
        }
        // semantically distant prompts forced into one group
        "mismatch" => {
            "scenario = mismatch\n\
             seed = 42\n\
             steps = 11\n\
             sigma0 = 0.7\n\
             context_weight = 0.02\n\
             prompt.user1 = Apple on Table\n\
             prompt.user2 = Car on Road\n\
             force_group = on\n\
             architecture = d2d\n\
             device.user1.compute_rate = 4.0\n\
             shared_steps = 4\n\
             channel = fixed\n\
             ber = 0\n\
             repetitions = 50\n"
        }
        // latency/energy ledgers across the three network architectures
        "arch_compare" => {
            "scenario = arch_compare\n\
             seed = 42\n\
             steps = 11\n\
             sigma0 = 0.7\n\
             context_weight = 0.02\n\
             prompt.user1 = Apple on Table\n\
             prompt.user2 = Lemon on Table\n\
             architecture = [edge_to_multi, d2d, cluster, cluster_edge]\n\
             device.user1.compute_rate = 4.0\n\
             shared_steps = 5\n\
             channel = awgn\n\
             snr = 3.0\n\
             repetitions = 10\n"
        }
        _ => return None,
    };
    Some(text)
}

pub const PRESET_NAMES: [&str; 4] = ["ber_sweep", "split_sweep", "mismatch", "arch_compare"];

pub fn load_preset(name: &str) -> Result<ScenarioConfig> {
    let text = preset_text(name)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?} (try {PRESET_NAMES:?})")))?;
    parse_config(text, name)
}
