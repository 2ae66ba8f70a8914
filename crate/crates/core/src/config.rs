//! Scenario configuration: every knob of the simulator in one TOML
//! document. `Config::default()` is the desk-scale reference scenario;
//! files only need to override what they change.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::DistillMode;
use crate::edge::ActionSpace;
use crate::error::ConfigError;
use crate::phy::{PathLossModel, RadioParams, SfTable};

// ============================================================================
// Variants
// ============================================================================

/// Which parts of the stack a run enables. `HeatLdl` is the full method;
/// the ablation arms disable one or more modules; the last three are the
/// comparison baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    HeatLdl,
    OnlyLocal,
    OnlyDistill,
    OnlyLy,
    LocalDistill,
    StaticBaseline,
    AdrLike,
    Random,
}

pub const ALL_VARIANTS: [Variant; 8] = [
    Variant::HeatLdl,
    Variant::OnlyLocal,
    Variant::OnlyDistill,
    Variant::OnlyLy,
    Variant::LocalDistill,
    Variant::StaticBaseline,
    Variant::AdrLike,
    Variant::Random,
];

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::HeatLdl => "heat-ldl",
            Variant::OnlyLocal => "only-local",
            Variant::OnlyDistill => "only-distill",
            Variant::OnlyLy => "only-ly",
            Variant::LocalDistill => "local+distill",
            Variant::StaticBaseline => "static-baseline",
            Variant::AdrLike => "adr-like",
            Variant::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_VARIANTS.iter().copied().find(|v| v.as_str() == s)
    }

    /// Edge decider active (history + prior fallback decisions).
    pub fn edge_decider(&self) -> bool {
        matches!(self, Variant::HeatLdl | Variant::OnlyLocal | Variant::LocalDistill)
    }

    /// Teacher-to-student distillation active.
    pub fn distillation(&self) -> bool {
        matches!(self, Variant::HeatLdl | Variant::OnlyDistill | Variant::LocalDistill)
    }

    /// Learned dispatch with overload queues active.
    pub fn lyapunov(&self) -> bool {
        matches!(self, Variant::HeatLdl | Variant::OnlyLy)
    }

    /// Whether the cloud sends any downlink control at all.
    pub fn downlink_control(&self) -> bool {
        matches!(
            self,
            Variant::HeatLdl
                | Variant::OnlyDistill
                | Variant::OnlyLy
                | Variant::LocalDistill
                | Variant::AdrLike
        )
    }

    /// Nodes start from a fixed SF7 / max-power assignment instead of a
    /// seeded random one.
    pub fn static_start(&self) -> bool {
        matches!(self, Variant::StaticBaseline)
    }
}

impl TryFrom<String> for Variant {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Variant::parse(&s).ok_or_else(|| format!("unknown variant '{s}'"))
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.as_str().to_string()
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ============================================================================
// Config sections
// ============================================================================

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub nodes: usize,
    pub gateways: usize,
    /// Traffic intensity: mean uplinks per node per reference period.
    pub delta: f64,
    pub horizon_s: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            nodes: 100,
            gateways: 3,
            delta: 2.0,
            horizon_s: 3600.0,
            seed: 1,
            variant: Variant::HeatLdl,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficSection {
    /// Period over which `delta` counts uplinks, seconds.
    pub reference_period_s: f64,
    pub uplink_payload_bytes: usize,
    /// A newer reading supersedes an unsent one; the superseded uplink
    /// counts as lost.
    pub supersede_pending: bool,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self { reference_period_s: 600.0, uplink_payload_bytes: 20, supersede_pending: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PhySection {
    pub radio: RadioParams,
    pub sf_table: SfTable,
    pub path_loss: PathLossModel,
    pub capture_margin_db: f64,
    pub noise_floor_dbm: f64,
    pub uplink_channels: u8,
    /// Fixed EIRP of gateway downlinks, dBm.
    pub gateway_tx_power_dbm: f64,
}

impl Default for PhySection {
    fn default() -> Self {
        Self {
            radio: RadioParams::default(),
            sf_table: SfTable::default(),
            path_loss: PathLossModel::default(),
            capture_margin_db: 6.0,
            noise_floor_dbm: -117.0,
            uplink_channels: 8,
            gateway_tx_power_dbm: 14.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySection {
    /// Nodes are placed uniformly in a disc of this radius around the
    /// gateway centroid.
    pub disc_radius_m: f64,
    /// Explicit gateway coordinates; when fewer than `gateways` entries
    /// are given the remainder is placed on a default asymmetric layout.
    pub gateway_positions_m: Vec<[f64; 2]>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self { disc_radius_m: 4500.0, gateway_positions_m: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MacSection {
    /// Node duty-cycle cap as an airtime fraction; 1.0 disables it.
    pub duty_cycle: f64,
    /// Sliding window the cap is enforced over, seconds.
    pub duty_window_s: f64,
    /// Delay from uplink end to receive-window open, seconds.
    pub rx_delay_s: f64,
    /// Index into the window-size list nodes start with.
    pub initial_window_idx: usize,
    /// Gateway downlink duty-cycle cap (single downlink channel).
    pub gateway_downlink_duty: f64,
    pub downlink_payload_bytes: usize,
}

impl Default for MacSection {
    fn default() -> Self {
        Self {
            duty_cycle: 0.01,
            duty_window_s: 3600.0,
            rx_delay_s: 1.0,
            initial_window_idx: 1,
            gateway_downlink_duty: 0.01,
            downlink_payload_bytes: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeSection {
    /// History decay weighing long-term against recent slices.
    pub decay: f64,
    /// Uplink attempts per history slice.
    pub slice_len: u32,
    pub prior_weight_tx: f64,
    pub prior_weight_rx: f64,
    /// Consecutive downlink-free uplinks before a node decides locally.
    pub trigger_after_misses: u32,
    /// Divide priors by the signed demodulation threshold (literal form)
    /// instead of its magnitude.
    pub raw_demod_sign: bool,
}

impl Default for EdgeSection {
    fn default() -> Self {
        Self {
            decay: 0.5,
            slice_len: 20,
            prior_weight_tx: 0.1,
            prior_weight_rx: 0.1,
            trigger_after_misses: 3,
            raw_demod_sign: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillSection {
    pub mode: String,
    pub temperature: f64,
    /// Recent node states distilled per received downlink.
    pub batch: usize,
    /// Distillation steps before the student outranks the history-based
    /// decider.
    pub student_ready_steps: u64,
    pub learning_rate: f64,
    pub bytes_per_logit: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            mode: DistillMode::SuccessShift.as_str().to_string(),
            temperature: 2.0,
            batch: 4,
            student_ready_steps: 100,
            learning_rate: 0.01,
            bytes_per_logit: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsSection {
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub scheduler_hidden: Vec<usize>,
    pub teacher_lr: f64,
    pub grad_clip: f64,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            teacher_hidden: vec![64, 64],
            student_hidden: vec![16],
            scheduler_hidden: vec![32],
            teacher_lr: 0.02,
            grad_clip: 5.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerSection {
    /// Slot length, seconds of simulated time.
    pub slot_s: f64,
    /// Per-slot downlink airtime capacity entering the queue recursion;
    /// 0 selects `gateway_downlink_duty * slot_s`.
    pub capacity_s: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub load_sign: f64,
    pub delta_h_clamp: f64,
    /// Weight of the decision-value term in the logged drift-plus-penalty
    /// objective; the dispatch path itself uses the reduced form.
    pub lambda_l: f64,
    /// EWMA smoothing of the per-combo global success model.
    pub tracker_smoothing: f64,
    /// Link margin the teacher keeps when proposing combos, dB.
    pub margin_guard_db: f64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            slot_s: 10.0,
            capacity_s: 0.0,
            gamma: 0.9,
            replay_capacity: 10_000,
            batch: 32,
            critic_lr: 0.01,
            actor_lr: 0.01,
            load_sign: -1.0,
            delta_h_clamp: 1.5,
            lambda_l: 0.0,
            tracker_smoothing: 0.99,
            margin_guard_db: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySection {
    /// Receiver draw while a window is open, milliwatts.
    pub rx_mw: f64,
    /// Display scale applied to delivered-per-joule.
    pub eer_scale: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self { rx_mw: 36.0, eer_scale: 10.0 }
    }
}

// ============================================================================
// Top level
// ============================================================================

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub scenario: ScenarioSection,
    pub traffic: TrafficSection,
    pub phy: PhySection,
    pub topology: TopologySection,
    pub action_space: ActionSpace,
    pub mac: MacSection,
    pub edge: EdgeSection,
    pub distill: DistillSection,
    pub models: ModelsSection,
    pub scheduler: SchedulerSection,
    pub energy: EnergySection,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Effective per-slot downlink capacity for the overload queues.
    pub fn slot_capacity_s(&self) -> f64 {
        if self.scheduler.capacity_s > 0.0 {
            self.scheduler.capacity_s
        } else {
            self.mac.gateway_downlink_duty * self.scheduler.slot_s
        }
    }

    pub fn distill_mode(&self) -> DistillMode {
        DistillMode::parse(&self.distill.mode).expect("validated at load")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |msg: String| Err(ConfigError::Invalid(msg));
        if self.scenario.nodes == 0 {
            return inv("at least one node required".into());
        }
        if self.scenario.gateways == 0 {
            return inv("at least one gateway required".into());
        }
        if self.scenario.delta <= 0.0 {
            return inv(format!("traffic intensity must be positive, got {}", self.scenario.delta));
        }
        if self.scenario.horizon_s <= 0.0 {
            return inv("horizon must be positive".into());
        }
        if self.traffic.reference_period_s <= 0.0 {
            return inv("reference period must be positive".into());
        }
        self.phy.radio.validate()?;
        self.phy.sf_table.validate()?;
        if !(0.0..=1.0).contains(&self.mac.duty_cycle) || self.mac.duty_cycle == 0.0 {
            return inv("duty cycle must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.mac.gateway_downlink_duty)
            || self.mac.gateway_downlink_duty == 0.0
        {
            return inv("gateway downlink duty must lie in (0, 1]".into());
        }
        if self.mac.initial_window_idx >= self.action_space.window_sizes_s.len() {
            return inv("initial window index outside the window-size list".into());
        }
        let tx_combos = self.action_space.tx_combo_count();
        if tx_combos != 48 {
            return inv(format!(
                "uplink-SF x power grid must have 48 entries, got {tx_combos}"
            ));
        }
        for &sf in self.action_space.uplink_sfs.iter().chain(&self.action_space.downlink_sfs) {
            if !(7..=12).contains(&sf) {
                return inv(format!("spreading factor {sf} outside 7..=12"));
            }
        }
        if self.action_space.window_sizes_s.iter().any(|&w| w <= 0.0) {
            return inv("window sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.edge.decay) {
            return inv("history decay must lie in [0, 1)".into());
        }
        if self.edge.slice_len == 0 {
            return inv("slice length must be positive".into());
        }
        if self.edge.prior_weight_tx < 0.0 || self.edge.prior_weight_rx < 0.0 {
            return inv("prior weights must be nonnegative".into());
        }
        if DistillMode::parse(&self.distill.mode).is_none() {
            return inv(format!(
                "unknown distillation mode '{}' (expected success-shift | logit-std | fixed-T)",
                self.distill.mode
            ));
        }
        if self.distill.temperature <= 0.0 {
            return inv("distillation temperature must be positive".into());
        }
        if !(0.0..1.0).contains(&self.scheduler.gamma) {
            return inv("gamma must lie in [0, 1)".into());
        }
        if self.scheduler.slot_s <= 0.0 {
            return inv("slot length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.scheduler.tracker_smoothing) {
            return inv("tracker smoothing must lie in [0, 1)".into());
        }
        if self.scheduler.replay_capacity == 0 || self.scheduler.batch == 0 {
            return inv("replay capacity and batch must be positive".into());
        }
        Ok(())
    }

    /// Gateway coordinates for this scenario: configured positions first,
    /// then a deliberately asymmetric default layout (one central gateway
    /// plus offset ring positions) scaled to the disc radius.
    pub fn gateway_positions(&self) -> Vec<[f64; 2]> {
        let g = self.scenario.gateways;
        let r = self.topology.disc_radius_m;
        let mut out: Vec<[f64; 2]> =
            self.topology.gateway_positions_m.iter().take(g).copied().collect();
        let defaults = [
            [0.0, 0.0],
            [0.55 * r, 0.1 * r],
            [-0.35 * r, 0.5 * r],
            [0.1 * r, -0.6 * r],
            [-0.6 * r, -0.25 * r],
            [0.4 * r, 0.55 * r],
        ];
        let mut i = out.len();
        while out.len() < g {
            if i < defaults.len() {
                out.push(defaults[i]);
            } else {
                // Beyond the table: spiral outward deterministically.
                let k = (i - defaults.len() + 1) as f64;
                let angle = 2.399963 * i as f64;
                out.push([0.3 * r * k.sqrt() * angle.cos(), 0.3 * r * k.sqrt() * angle.sin()]);
            }
            i += 1;
        }
        out
    }
}
