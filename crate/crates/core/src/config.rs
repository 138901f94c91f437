//! Declarative run configuration and its validation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::dynamics::NeuronParams;
use crate::experiments::{CircuitKind, LatencyProbe, TrialMode, WeightKind, WeightOverrides};
use crate::fabric::{
    Address, BiasCode, BiasName, CoreId, FeatureFlags, SourceTag, SynapseCalibration, SynapseType,
    CAM_SLOTS,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Trace,
    CharacterizePopulation,
    CharacterizeCams,
    SweepPair,
    SweepTriplet,
    SweepWeights,
    PermutationControl,
    CalibrateMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub experiment: Experiment,
    /// Master seed. Required, but may come from the command line instead.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub fabric: FabricConfig,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub cams: CamsConfig,
    #[serde(default = "PairConfig::default")]
    pub pair: PairConfig,
    #[serde(default = "TripletConfig::default")]
    pub triplet: TripletConfig,
    #[serde(default)]
    pub weight_sweep: WeightSweepConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchSection {
    pub cv_neuron: f64,
    pub cv_cam: f64,
}

impl Default for MismatchSection {
    fn default() -> Self {
        let d = crate::fabric::MismatchConfig::default();
        Self {
            cv_neuron: d.cv_neuron,
            cv_cam: d.cv_cam,
        }
    }
}

/// A CAM entry added on top of the experiment's own circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionConfig {
    pub neuron: Address,
    pub slot: u8,
    pub tag: SourceTag,
    pub syn_type: SynapseType,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricConfig {
    #[serde(default)]
    pub mismatch: MismatchSection,
    #[serde(default)]
    pub neuron: NeuronParams,
    #[serde(default)]
    pub synapse: SynapseCalibration,
    /// Per-core bias overrides keyed by "chip.core"; unnamed parameters
    /// keep their delay-element defaults.
    #[serde(default)]
    pub biases: BTreeMap<String, BTreeMap<String, BiasCode>>,
    #[serde(default)]
    pub features: FeatureFlags,
    #[serde(default)]
    pub connections: Vec<ConnectionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub id: String,
    pub neuron: Address,
    pub exc_slot: u8,
    pub inh_slot: u8,
    /// Gaussian measurement noise on the recorded trace (V).
    pub measurement_noise: f64,
    /// Round the trace to an n-bit converter over the voltage rails.
    pub quantize_bits: Option<u32>,
    /// Record with spiking disabled.
    pub subthreshold: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            id: "nominal".into(),
            neuron: Address { chip: 0, core: 0, neuron: 0 },
            exc_slot: 0,
            inh_slot: 1,
            measurement_noise: 0.0,
            quantize_bits: None,
            subthreshold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub core: CoreId,
    pub exc_slot: u8,
    pub inh_slot: u8,
    pub bin_width: f64,
    pub measurement_noise: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            core: CoreId { chip: 0, core: 0 },
            exc_slot: 0,
            inh_slot: 1,
            bin_width: 1e-3,
            measurement_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CamsConfig {
    pub neuron: Address,
    pub n_pairs: usize,
    pub bin_width: f64,
}

impl Default for CamsConfig {
    fn default() -> Self {
        Self {
            neuron: Address { chip: 0, core: 0, neuron: 7 },
            n_pairs: 256,
            bin_width: 1e-3,
        }
    }
}

/// Pair circuit: explicit slots, or selection among delay-element
/// candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub neuron: Address,
    /// (exc_slot, inh_slot) candidates for selection.
    pub candidates: Vec<(u8, u8)>,
    /// Skip selection and use these two elements in input order.
    pub slots: Option<[(u8, u8); 2]>,
    pub target_isi: f64,
    pub weights: WeightOverrides,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            neuron: Address { chip: 0, core: 0, neuron: 47 },
            candidates: (0..32).map(|k| (2 * k, 2 * k + 1)).collect(),
            slots: None,
            target_isi: 5e-3,
            weights: WeightOverrides {
                exc_fine: Some(140),
                inh_fine: Some(100),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    pub neuron: Address,
    pub inh_slot: u8,
    /// Excitatory candidate slots for selection.
    pub candidates: Vec<u8>,
    /// Skip selection and use these excitatory slots in input order.
    pub exc_slots: Option<[u8; 3]>,
    pub probe: LatencyProbe,
    pub target_isi: f64,
    pub weights: WeightOverrides,
    /// Derangement applied by the permutation control.
    pub derangement: [usize; 3],
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            neuron: Address { chip: 0, core: 0, neuron: 37 },
            inh_slot: 63,
            candidates: (0..63).collect(),
            exc_slots: None,
            probe: LatencyProbe::WithInhibition(63),
            target_isi: 5e-3,
            weights: WeightOverrides {
                exc_fine: Some(80),
                inh_fine: Some(150),
            },
            derangement: [2, 0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSweepConfig {
    pub circuit: CircuitKind,
    pub which: WeightKind,
    pub fine_values: Vec<u8>,
}

impl Default for WeightSweepConfig {
    fn default() -> Self {
        Self {
            circuit: CircuitKind::Pair,
            which: WeightKind::Excitatory,
            fine_values: vec![60, 100, 140, 180],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub isi_max: f64,
    pub isi_step: f64,
    pub n_trials: usize,
    pub current_noise: f64,
    pub mode: TrialMode,
    pub trial_gap: f64,
    pub dt: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            isi_max: 10e-3,
            isi_step: 1e-3,
            n_trials: 100,
            current_noise: 0.0,
            mode: TrialMode::Isolated,
            trial_gap: crate::stimulus::DEFAULT_TRIAL_GAP,
            dt: crate::dynamics::DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub cv_neuron_grid: Vec<f64>,
    pub cv_cam_grid: Vec<f64>,
    /// Target standard deviation of population delays (s).
    pub target_std: f64,
    /// Target main mode of population delays (s).
    pub target_mode: f64,
    pub target_spiking_fraction: f64,
    /// Fabric seeds averaged per grid point, counted from the run seed.
    pub n_seeds: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            cv_neuron_grid: vec![0.1, 0.15, 0.2, 0.25, 0.3],
            cv_cam_grid: vec![0.05, 0.1, 0.15, 0.2],
            target_std: 10e-3,
            target_mode: 15e-3,
            target_spiking_fraction: 0.5,
            n_seeds: 8,
        }
    }
}

/// One validation finding, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn diag(path: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        path: path.into(),
        message: message.into(),
    }
}

/// Parse a configuration document. Structural problems come back as
/// diagnostics carrying the offending field path.
pub fn parse(text: &str) -> Result<RunConfig, Vec<Diagnostic>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        vec![diag(path, e.into_inner().to_string())]
    })
}

/// Full schema and cross-reference check; an empty list means valid.
pub fn validate_document(text: &str) -> Vec<Diagnostic> {
    match parse(text) {
        Ok(cfg) => validate(&cfg),
        Err(d) => d,
    }
}

pub fn parse_core_key(key: &str) -> Option<CoreId> {
    let (chip, core) = key.split_once('.')?;
    CoreId::new(chip.parse().ok()?, core.parse().ok()?).ok()
}

fn check_address(out: &mut Vec<Diagnostic>, path: &str, a: &Address) {
    if a.check().is_err() {
        out.push(diag(
            path,
            format!("address {a} outside 4 chips x 4 cores x 256 neurons"),
        ));
    }
}

fn check_core(out: &mut Vec<Diagnostic>, path: &str, c: &CoreId) {
    if CoreId::new(c.chip, c.core).is_err() {
        out.push(diag(path, format!("core {c} outside 4 chips x 4 cores")));
    }
}

fn check_slot(out: &mut Vec<Diagnostic>, path: &str, slot: u8) {
    if slot >= CAM_SLOTS {
        out.push(diag(
            path,
            format!("CAM slot {slot} exceeds the {CAM_SLOTS}-slot CAM (valid 0..=63)"),
        ));
    }
}

fn check_positive(out: &mut Vec<Diagnostic>, path: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) {
        out.push(diag(path, format!("must be positive and finite, got {x}")));
    }
}

fn check_nonneg(out: &mut Vec<Diagnostic>, path: &str, x: f64) {
    if !(x >= 0.0 && x.is_finite()) {
        out.push(diag(path, format!("must be >= 0 and finite, got {x}")));
    }
}

fn check_code(out: &mut Vec<Diagnostic>, path: &str, code: &BiasCode) {
    if code.check().is_err() {
        out.push(diag(
            format!("{path}.coarse"),
            format!("coarse value {} outside 0..=7", code.coarse),
        ));
    }
}

fn check_distinct(out: &mut Vec<Diagnostic>, path: &str, slots: &[u8]) {
    let mut s = slots.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != slots.len() {
        out.push(diag(path, "slots must be distinct"));
    }
}

pub fn validate(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if cfg.schema_version != SCHEMA_VERSION {
        out.push(diag(
            "schema_version",
            format!("unsupported schema version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
        ));
    }

    let f = &cfg.fabric;
    check_nonneg(&mut out, "fabric.mismatch.cv_neuron", f.mismatch.cv_neuron);
    check_nonneg(&mut out, "fabric.mismatch.cv_cam", f.mismatch.cv_cam);
    if let Err(e) = f.neuron.validate() {
        out.push(diag("fabric.neuron", e.to_string()));
    }
    check_positive(&mut out, "fabric.synapse.c_syn", f.synapse.c_syn);
    check_positive(&mut out, "fabric.synapse.u_t", f.synapse.u_t);
    check_positive(&mut out, "fabric.synapse.t_pulse", f.synapse.t_pulse);
    for (name, g) in [
        ("exc_slow", f.synapse.weight_gain.exc_slow),
        ("exc_fast", f.synapse.weight_gain.exc_fast),
        ("inh_subtractive", f.synapse.weight_gain.inh_subtractive),
    ] {
        check_nonneg(&mut out, &format!("fabric.synapse.weight_gain.{name}"), g);
    }
    for (core_key, codes) in &f.biases {
        let base = format!("fabric.biases.{core_key}");
        if parse_core_key(core_key).is_none() {
            out.push(diag(&base, "core key must be \"chip.core\" with chip, core in 0..=3"));
        }
        for (name, code) in codes {
            let path = format!("{base}.{name}");
            if name.parse::<BiasName>().is_err() {
                out.push(diag(&path, format!("unknown bias parameter {name}")));
            }
            check_code(&mut out, &path, code);
        }
    }
    let mut occupied = std::collections::BTreeSet::new();
    for (k, c) in f.connections.iter().enumerate() {
        let path = format!("fabric.connections[{k}]");
        check_address(&mut out, &format!("{path}.neuron"), &c.neuron);
        check_slot(&mut out, &format!("{path}.slot"), c.slot);
        if !occupied.insert((c.neuron, c.slot)) {
            out.push(diag(&path, format!("slot {} of {} used twice", c.slot, c.neuron)));
        }
    }

    let t = &cfg.trace;
    check_address(&mut out, "trace.neuron", &t.neuron);
    check_slot(&mut out, "trace.exc_slot", t.exc_slot);
    check_slot(&mut out, "trace.inh_slot", t.inh_slot);
    check_distinct(&mut out, "trace", &[t.exc_slot, t.inh_slot]);
    check_nonneg(&mut out, "trace.measurement_noise", t.measurement_noise);
    if t.id.is_empty() || !t.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        out.push(diag("trace.id", "must be non-empty [A-Za-z0-9_-]"));
    }
    if let Some(b) = t.quantize_bits {
        if !(1..=24).contains(&b) {
            out.push(diag("trace.quantize_bits", "must be in 1..=24"));
        }
    }

    let p = &cfg.population;
    check_core(&mut out, "population.core", &p.core);
    check_slot(&mut out, "population.exc_slot", p.exc_slot);
    check_slot(&mut out, "population.inh_slot", p.inh_slot);
    check_distinct(&mut out, "population", &[p.exc_slot, p.inh_slot]);
    check_positive(&mut out, "population.bin_width", p.bin_width);
    check_nonneg(&mut out, "population.measurement_noise", p.measurement_noise);

    let c = &cfg.cams;
    check_address(&mut out, "cams.neuron", &c.neuron);
    check_positive(&mut out, "cams.bin_width", c.bin_width);
    let max_pairs = CAM_SLOTS as usize * (CAM_SLOTS as usize - 1);
    if c.n_pairs == 0 || c.n_pairs > max_pairs {
        out.push(diag("cams.n_pairs", format!("must be in 1..={max_pairs}")));
    }

    let pr = &cfg.pair;
    check_address(&mut out, "pair.neuron", &pr.neuron);
    check_positive(&mut out, "pair.target_isi", pr.target_isi);
    for (k, (e, i)) in pr.candidates.iter().enumerate() {
        check_slot(&mut out, &format!("pair.candidates[{k}][0]"), *e);
        check_slot(&mut out, &format!("pair.candidates[{k}][1]"), *i);
    }
    match pr.slots {
        Some(s) => {
            for (k, (e, i)) in s.iter().enumerate() {
                check_slot(&mut out, &format!("pair.slots[{k}][0]"), *e);
                check_slot(&mut out, &format!("pair.slots[{k}][1]"), *i);
            }
            check_distinct(&mut out, "pair.slots", &[s[0].0, s[0].1, s[1].0, s[1].1]);
        }
        None if pr.candidates.len() < 2 => {
            out.push(diag("pair.candidates", "need at least 2 candidates"));
        }
        None => {}
    }

    let tr = &cfg.triplet;
    check_address(&mut out, "triplet.neuron", &tr.neuron);
    check_slot(&mut out, "triplet.inh_slot", tr.inh_slot);
    check_positive(&mut out, "triplet.target_isi", tr.target_isi);
    for (k, s) in tr.candidates.iter().enumerate() {
        check_slot(&mut out, &format!("triplet.candidates[{k}]"), *s);
        if *s == tr.inh_slot {
            out.push(diag(format!("triplet.candidates[{k}]"), "candidate collides with inh_slot"));
        }
    }
    if let LatencyProbe::WithInhibition(s) = tr.probe {
        check_slot(&mut out, "triplet.probe.with_inhibition", s);
    }
    match tr.exc_slots {
        Some(s) => {
            for (k, e) in s.iter().enumerate() {
                check_slot(&mut out, &format!("triplet.exc_slots[{k}]"), *e);
            }
            check_distinct(&mut out, "triplet.exc_slots", &[s[0], s[1], s[2], tr.inh_slot]);
        }
        None if tr.candidates.len() < 3 => {
            out.push(diag("triplet.candidates", "need at least 3 candidates"));
        }
        None => {}
    }
    let d = tr.derangement;
    let mut sorted = d;
    sorted.sort_unstable();
    if sorted != [0, 1, 2] || d.iter().enumerate().any(|(i, &p)| i == p) {
        out.push(diag("triplet.derangement", format!("{d:?} is not a derangement of [0, 1, 2]")));
    }

    if cfg.weight_sweep.fine_values.is_empty() {
        out.push(diag("weight_sweep.fine_values", "must not be empty"));
    }

    let s = &cfg.sweep;
    check_nonneg(&mut out, "sweep.isi_max", s.isi_max);
    check_positive(&mut out, "sweep.isi_step", s.isi_step);
    if s.n_trials == 0 {
        out.push(diag("sweep.n_trials", "must be >= 1"));
    }
    check_nonneg(&mut out, "sweep.current_noise", s.current_noise);
    check_nonneg(&mut out, "sweep.trial_gap", s.trial_gap);
    if !(s.dt > 0.0 && s.dt <= crate::dynamics::DT_MAX) {
        out.push(diag("sweep.dt", format!("must be in (0, {}]", crate::dynamics::DT_MAX)));
    }

    let cal = &cfg.calibration;
    if cal.cv_neuron_grid.is_empty() {
        out.push(diag("calibration.cv_neuron_grid", "must not be empty"));
    }
    if cal.cv_cam_grid.is_empty() {
        out.push(diag("calibration.cv_cam_grid", "must not be empty"));
    }
    for (k, x) in cal.cv_neuron_grid.iter().enumerate() {
        check_nonneg(&mut out, &format!("calibration.cv_neuron_grid[{k}]"), *x);
    }
    for (k, x) in cal.cv_cam_grid.iter().enumerate() {
        check_nonneg(&mut out, &format!("calibration.cv_cam_grid[{k}]"), *x);
    }
    check_positive(&mut out, "calibration.target_std", cal.target_std);
    check_positive(&mut out, "calibration.target_mode", cal.target_mode);
    if cal.n_seeds == 0 {
        out.push(diag("calibration.n_seeds", "must be >= 1"));
    }

    if cfg.seed.is_none() {
        out.push(diag("seed", "a seed is required (in the config or via --seed)"));
    }
    out
}
