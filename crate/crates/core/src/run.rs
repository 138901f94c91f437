//! Experiment dispatch and artifact writing for one configuration.
//!
//! All files are written into a hidden staging directory next to the
//! output directory and renamed into place only after the experiment
//! finished, so a failed run leaves nothing behind.

use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::config::{self, Diagnostic, Experiment, RunConfig};
use crate::delaylab::{
    self, best_point, build_delay_element, characterize_cam_combinations, characterize_population,
    probe_element, probe_element_subthreshold, setup_population, summarize, CalibrationSetup,
    CalibrationTargets, DelayError, DelayRecord, ProbeOptions, CHARACTERIZATION_TAG, MODE_PROMINENCE,
};
use crate::exec::Executor;
use crate::experiments::{
    permutation_control, run_isi_sweep, select_synapses, sweep_weights, Candidate, CircuitKind,
    CircuitSpec, ExperimentError, LatencyProbe, SweepOptions, TuningCurve,
};
use crate::fabric::mismatch::derive_seed;
use crate::fabric::{CoreId, Fabric, FabricError, MismatchConfig};
use crate::sim::SimError;
use crate::stimulus::{gen_single, isi_grid, Pattern};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const STREAM_PROBE: u64 = 1;
const STREAM_SWEEP: u64 = 2;
const STREAM_CAMS: u64 = 3;
const STREAM_CALIBRATION: u64 = 4;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration")]
    Config(Vec<Diagnostic>),
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// 1 for problems in the request, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::UnsupportedFeature(_) => 1,
            RunError::Runtime(_) | RunError::Io(_) => 2,
        }
    }

    pub fn config(path: &str, message: impl Into<String>) -> Self {
        RunError::Config(vec![Diagnostic {
            path: path.into(),
            message: message.into(),
        }])
    }
}

fn unsupported(e: &FabricError) -> Option<RunError> {
    match e {
        FabricError::UnsupportedSynapseType(_) | FabricError::UnsupportedBias(_) => {
            Some(RunError::UnsupportedFeature(e.to_string()))
        }
        _ => None,
    }
}

impl From<FabricError> for RunError {
    fn from(e: FabricError) -> Self {
        unsupported(&e).unwrap_or_else(|| RunError::Runtime(e.to_string()))
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Fabric(f) => f.into(),
            other => RunError::Runtime(other.to_string()),
        }
    }
}

impl From<DelayError> for RunError {
    fn from(e: DelayError) -> Self {
        match e {
            DelayError::Fabric(f) => f.into(),
            DelayError::Sim(s) => s.into(),
            other => RunError::Runtime(other.to_string()),
        }
    }
}

impl From<ExperimentError> for RunError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Fabric(f) => f.into(),
            ExperimentError::Sim(s) => s.into(),
            ExperimentError::Delay(d) => d.into(),
            other => RunError::Runtime(other.to_string()),
        }
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Runtime(format!("csv: {e}"))
    }
}

impl From<crate::stimulus::StimulusError> for RunError {
    fn from(e: crate::stimulus::StimulusError) -> Self {
        RunError::Runtime(e.to_string())
    }
}

/// Read, parse and validate a configuration file, applying a seed
/// override first.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::config("", format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = config::parse(&text).map_err(RunError::Config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let diags = config::validate(&cfg);
    if !diags.is_empty() {
        return Err(RunError::Config(diags));
    }
    Ok(cfg)
}

/// Fabric with the configured mismatch, biases and extra connections.
/// The run seed seeds the mismatch draw.
pub fn build_fabric(cfg: &RunConfig, mismatch: MismatchConfig) -> Result<Fabric, RunError> {
    let f = &cfg.fabric;
    let mut fabric = Fabric::new(mismatch, f.synapse, f.neuron);
    for (key, overrides) in &f.biases {
        let core = config::parse_core_key(key)
            .ok_or_else(|| RunError::config(&format!("fabric.biases.{key}"), "invalid core key"))?;
        let set = fabric.core_biases(core).with_overrides(overrides)?;
        fabric.set_core_biases(core, set)?;
    }
    fabric.set_features(f.features);
    for c in &f.connections {
        fabric.configure_connection(c.neuron, c.slot, c.tag, c.syn_type)?;
    }
    fabric.check_simulatable()?;
    Ok(fabric)
}

/// Mismatch of a run with master seed `seed`.
pub fn run_mismatch(cfg: &RunConfig, seed: u64) -> MismatchConfig {
    MismatchConfig {
        cv_neuron: cfg.fabric.mismatch.cv_neuron,
        cv_cam: cfg.fabric.mismatch.cv_cam,
        seed,
    }
}

/// Output directory staged next to its final location.
struct Staging {
    dir: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    fn create(out: &Path) -> io::Result<Self> {
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let name = out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
            committed: false,
        })
    }

    fn file(&mut self, rel: &str) -> io::Result<BufWriter<fs::File>> {
        let path = self.dir.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        self.files.push(rel.to_string());
        Ok(BufWriter::new(fs::File::create(path)?))
    }

    fn commit(mut self, out: &Path) -> io::Result<()> {
        if out.exists() {
            // Only an empty directory may be replaced.
            fs::remove_dir(out)?;
        }
        fs::rename(&self.dir, out)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn check_out_dir(out: &Path) -> Result<(), RunError> {
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(out)?.next().is_none();
        if !empty {
            return Err(RunError::config(
                "output_dir",
                format!("{} exists and is not an empty directory", out.display()),
            ));
        }
    }
    Ok(())
}

/// Summary of a completed run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub files: Vec<String>,
    pub results: Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'a str,
    schema_version: u32,
    experiment: Experiment,
    seeds: Value,
    config: &'a RunConfig,
    mismatch: MismatchConfig,
    effective: Value,
    results: &'a Value,
    files: &'a [String],
}

/// Run the configured experiment and write its artifacts into `out`.
/// `jobs` only sets the worker count; outputs do not depend on it.
pub fn execute(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunSummary, RunError> {
    let diags = config::validate(cfg);
    if !diags.is_empty() {
        return Err(RunError::Config(diags));
    }
    check_out_dir(out)?;
    let seed = cfg.seed.expect("validated");
    let exec = Executor::new(jobs);
    log::info!("{:?} with seed {seed} on {} worker(s)", cfg.experiment, exec.jobs());

    let mismatch = run_mismatch(cfg, seed);
    let fabric = build_fabric(cfg, mismatch)?;
    let mut stage = Staging::create(out)?;
    let mut ctx = Ctx {
        cfg,
        seed,
        fabric: &fabric,
        exec: &exec,
        stage: &mut stage,
    };
    let (results, used_cores) = match cfg.experiment {
        Experiment::Trace => ctx.trace()?,
        Experiment::CharacterizePopulation => ctx.population()?,
        Experiment::CharacterizeCams => ctx.cams()?,
        Experiment::SweepPair => ctx.sweep(CircuitKind::Pair)?,
        Experiment::SweepTriplet => ctx.sweep(CircuitKind::Triplet)?,
        Experiment::SweepWeights => ctx.weights()?,
        Experiment::PermutationControl => ctx.permutation()?,
        Experiment::CalibrateMismatch => ctx.calibrate()?,
    };

    let mut files = stage.files.clone();
    files.push("manifest.json".into());
    files.sort();
    let mut effective_cfg = cfg.clone();
    effective_cfg.output_dir = None;
    let manifest = Manifest {
        code_version: CODE_VERSION,
        schema_version: config::SCHEMA_VERSION,
        experiment: cfg.experiment,
        seeds: json!({
            "run": seed,
            "mismatch": mismatch.seed,
            "probe": derive_seed(seed, STREAM_PROBE, 0),
            "sweep": derive_seed(seed, STREAM_SWEEP, 0),
            "cam_pairs": derive_seed(seed, STREAM_CAMS, 0),
        }),
        config: &effective_cfg,
        mismatch,
        effective: effective_parameters(&fabric, &used_cores),
        results: &results,
        files: &files,
    };
    let mut w = stage.file("manifest.json")?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| RunError::Runtime(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    drop(w);
    stage.commit(out)?;
    Ok(RunSummary {
        experiment: cfg.experiment,
        files,
        results,
    })
}

/// Nominal neuron template and synapse calibration, and the bias codes,
/// currents and derived filter constants of every core the run touched.
fn effective_parameters(fabric: &Fabric, cores: &[CoreId]) -> Value {
    use crate::fabric::{current_to_tau, BiasName};
    let cal = fabric.synapse_calibration();
    let mut per_core = serde_json::Map::new();
    for &core in cores {
        let set = fabric.core_biases(core);
        let biases: serde_json::Map<String, Value> = set
            .iter()
            .map(|(name, code)| {
                (
                    name.to_string(),
                    json!({
                        "coarse": code.coarse,
                        "fine": code.fine,
                        "level": code.level,
                        "current_a": set.current(name),
                    }),
                )
            })
            .collect();
        let tau = |n: BiasName| current_to_tau(set.current(n), cal.c_syn, cal.u_t);
        per_core.insert(
            core.to_string(),
            json!({
                "biases": biases,
                "nominal": {
                    "tau_exc_slow_s": tau(BiasName::NpdpieTauSP),
                    "tau_inh_fast_s": tau(BiasName::NpdpiiTauFP),
                    "w_exc_slow_a": cal.weight_gain.exc_slow * set.current(BiasName::PsWeightExcSN),
                    "w_inh_fast_a": cal.weight_gain.inh_subtractive * set.current(BiasName::PsWeightInhFN),
                    "i_dc_a": set.current(BiasName::IfDcP),
                },
            }),
        );
    }
    json!({
        "neuron_template": fabric.neuron_template(),
        "synapse_calibration": cal,
        "features": fabric.features(),
        "cores": per_core,
    })
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    fabric: &'a Fabric,
    exec: &'a Executor,
    stage: &'a mut Staging,
}

type Outcome = Result<(Value, Vec<CoreId>), RunError>;

/// The configured circuit: fixed slots or an off-line selection.
pub fn resolve_circuit(
    cfg: &RunConfig,
    fabric: &Fabric,
    kind: CircuitKind,
    exec: &Executor,
) -> Result<(CircuitSpec, Value), RunError> {
    let dt = cfg.sweep.dt;
    match kind {
        CircuitKind::Pair => {
            let p = &cfg.pair;
            if let Some([a, b]) = p.slots {
                let spec = CircuitSpec::pair(p.neuron, a, b).with_weights(p.weights);
                return Ok((spec, json!({ "selected": false })));
            }
            let cands: Vec<Candidate> = p
                .candidates
                .iter()
                .map(|&(e, i)| Candidate {
                    exc_slot: e,
                    inh_slot: Some(i),
                })
                .collect();
            let sel = select_synapses(
                fabric,
                p.neuron,
                CircuitKind::Pair,
                &cands,
                0,
                LatencyProbe::ExcOnly,
                p.target_isi,
                dt,
                exec,
            )?;
            let info = json!({
                "selected": true,
                "latencies_s": sel.latencies,
                "residual_s": sel.residual,
            });
            Ok((sel.spec.with_weights(p.weights), info))
        }
        CircuitKind::Triplet => {
            let t = &cfg.triplet;
            if let Some(exc) = t.exc_slots {
                let spec = CircuitSpec::triplet(t.neuron, exc, t.inh_slot).with_weights(t.weights);
                return Ok((spec, json!({ "selected": false })));
            }
            let cands: Vec<Candidate> = t
                .candidates
                .iter()
                .map(|&e| Candidate {
                    exc_slot: e,
                    inh_slot: None,
                })
                .collect();
            let sel = select_synapses(
                fabric,
                t.neuron,
                CircuitKind::Triplet,
                &cands,
                t.inh_slot,
                t.probe,
                t.target_isi,
                dt,
                exec,
            )?;
            let info = json!({
                "selected": true,
                "latencies_s": sel.latencies,
                "residual_s": sel.residual,
            });
            Ok((sel.spec.with_weights(t.weights), info))
        }
    }
}

/// Sweep settings of a run with master seed `seed`.
pub fn sweep_options(cfg: &RunConfig, seed: u64) -> SweepOptions {
    let s = &cfg.sweep;
    SweepOptions {
        dt: s.dt,
        current_noise: s.current_noise,
        seed: derive_seed(seed, STREAM_SWEEP, 0),
        mode: s.mode,
        trial_gap: s.trial_gap,
    }
}

fn isi_label(isi: f64) -> String {
    format!("{:05}us", (isi * 1e6).round() as u64)
}

impl Ctx<'_> {
    fn probe_options(&self, measurement_noise: f64) -> ProbeOptions {
        let mut o = ProbeOptions {
            measurement_noise,
            seed: derive_seed(self.seed, STREAM_PROBE, 0),
            ..ProbeOptions::default()
        };
        o.sim.dt = self.cfg.sweep.dt;
        o
    }

    fn sweep_options(&self) -> SweepOptions {
        sweep_options(self.cfg, self.seed)
    }

    fn grid(&self) -> Vec<f64> {
        isi_grid(self.cfg.sweep.isi_max, self.cfg.sweep.isi_step)
    }

    fn write_pattern(&mut self, name: &str, p: &Pattern) -> Result<(), RunError> {
        let w = self.stage.file(name)?;
        p.write_csv(w)?;
        Ok(())
    }

    fn write_delays(&mut self, name: &str, records: &[DelayRecord]) -> Result<(), RunError> {
        delaylab::write_delays_csv(records, self.stage.file(name)?)?;
        Ok(())
    }

    fn write_histogram(&mut self, name: &str, records: &[DelayRecord], bw: f64) -> Result<Value, RunError> {
        let delays: Vec<f64> = records.iter().filter_map(|r| r.measurement().map(|m| m.delay)).collect();
        let summary = summarize(records, bw, MODE_PROMINENCE);
        if let Some(report) = crate::stats::detect_modes(&delays, bw, MODE_PROMINENCE) {
            delaylab::write_histogram_csv(&report, self.stage.file(name)?)?;
        }
        let failures: Vec<Value> = records
            .iter()
            .filter_map(|r| {
                r.result.as_ref().err().map(|e| {
                    json!({
                        "neuron": r.element.neuron.global_index(),
                        "exc_slot": r.element.exc_slot.slot,
                        "inh_slot": r.element.inh_slot.slot,
                        "error": e.to_string(),
                    })
                })
            })
            .collect();
        Ok(json!({ "summary": summary, "failures": failures }))
    }

    fn write_tuning(&mut self, name: &str, curve: &TuningCurve) -> Result<(), RunError> {
        curve.write_csv(self.stage.file(name)?)?;
        Ok(())
    }

    fn trace(&mut self) -> Outcome {
        let t = &self.cfg.trace;
        let mut f = self.fabric.clone();
        f.clear_neuron(t.neuron);
        let element = build_delay_element(&mut f, t.neuron, t.exc_slot, t.inh_slot, CHARACTERIZATION_TAG)?;
        let opts = self.probe_options(t.measurement_noise);
        let mut trace = if t.subthreshold {
            probe_element_subthreshold(&f, &element, &opts)?
        } else {
            probe_element(&f, &element, &opts)?
        };
        if let Some(bits) = t.quantize_bits {
            let p = f.neuron_params(t.neuron);
            trace = delaylab::quantize_trace(&trace, bits, p.v_rail_lo, p.v_rail_hi);
        }
        let record = DelayRecord {
            element,
            result: delaylab::measure_delay(&trace),
        };
        let (tau_exc, tau_inh) = element.time_constants(&f)?;
        trace.write_csv(self.stage.file(&format!("trace_{}.csv", t.id))?)?;
        self.write_delays("delays.csv", std::slice::from_ref(&record))?;
        self.write_pattern("pattern_single.csv", &gen_single(CHARACTERIZATION_TAG))?;
        let measurement = match &record.result {
            Ok(m) => serde_json::to_value(m).unwrap_or(Value::Null),
            Err(e) => json!({ "error": e.to_string() }),
        };
        Ok((
            json!({
                "neuron": t.neuron,
                "tau_exc_s": tau_exc,
                "tau_inh_s": tau_inh,
                "spike_times_s": trace.spike_times,
                "measurement": measurement,
            }),
            vec![t.neuron.core_id()],
        ))
    }

    fn population(&mut self) -> Outcome {
        let p = &self.cfg.population;
        let mut f = self.fabric.clone();
        for n in p.core.neurons() {
            f.clear_neuron(n);
        }
        let elements = setup_population(&mut f, p.core, p.exc_slot, p.inh_slot, CHARACTERIZATION_TAG)?;
        let records = characterize_population(&f, &elements, &self.probe_options(p.measurement_noise), self.exec);
        self.write_delays("delays.csv", &records)?;
        self.write_pattern("pattern_single.csv", &gen_single(CHARACTERIZATION_TAG))?;
        let results = self.write_histogram("histogram.csv", &records, p.bin_width)?;
        Ok((results, vec![p.core]))
    }

    fn cams(&mut self) -> Outcome {
        let c = &self.cfg.cams;
        let pairs = delaylab::cam_slot_pairs(c.n_pairs, derive_seed(self.seed, STREAM_CAMS, 0))?;
        let records = characterize_cam_combinations(
            self.fabric,
            c.neuron,
            &pairs,
            CHARACTERIZATION_TAG,
            &self.probe_options(0.0),
            self.exec,
        )?;
        self.write_delays("delays.csv", &records)?;
        self.write_pattern("pattern_single.csv", &gen_single(CHARACTERIZATION_TAG))?;
        let results = self.write_histogram("histogram.csv", &records, c.bin_width)?;
        Ok((results, vec![c.neuron.core_id()]))
    }

    fn circuit(&self, kind: CircuitKind) -> Result<(CircuitSpec, Value), RunError> {
        resolve_circuit(self.cfg, self.fabric, kind, self.exec)
    }

    fn write_sweep_patterns(&mut self, name: &str, spec: &CircuitSpec, grid: &[f64]) -> Result<(), RunError> {
        for &isi in grid {
            let p = spec.pattern(isi)?;
            self.write_pattern(&format!("patterns/{name}_isi_{}.csv", isi_label(isi)), &p)?;
        }
        Ok(())
    }

    fn sweep(&mut self, kind: CircuitKind) -> Outcome {
        let (spec, selection) = self.circuit(kind)?;
        let grid = self.grid();
        let curve = run_isi_sweep(self.fabric, &spec, &grid, self.cfg.sweep.n_trials, &self.sweep_options(), self.exec)?;
        let name = match kind {
            CircuitKind::Pair => "pair",
            CircuitKind::Triplet => "triplet",
        };
        self.write_tuning(&format!("tuning_{name}.csv"), &curve)?;
        self.write_sweep_patterns(name, &spec, &grid)?;
        Ok((
            json!({ "circuit": spec, "selection": selection, "curve": curve }),
            vec![spec.neuron.core_id()],
        ))
    }

    fn weights(&mut self) -> Outcome {
        let w = &self.cfg.weight_sweep;
        let (spec, selection) = self.circuit(w.circuit)?;
        let grid = self.grid();
        let curves = sweep_weights(
            self.fabric,
            &spec,
            w.which,
            &w.fine_values,
            &grid,
            self.cfg.sweep.n_trials,
            &self.sweep_options(),
            self.exec,
        )?;
        let name = match w.circuit {
            CircuitKind::Pair => "pair",
            CircuitKind::Triplet => "triplet",
        };
        let which = match w.which {
            crate::experiments::WeightKind::Excitatory => "exc",
            crate::experiments::WeightKind::Inhibitory => "inh",
        };
        let mut totals = Vec::new();
        for (fine, curve) in &curves {
            self.write_tuning(&format!("tuning_{name}_{which}_fine{fine:03}.csv"), curve)?;
            totals.push(json!({ "fine": fine, "total_mean_spikes": curve.total() }));
        }
        self.write_sweep_patterns(name, &spec, &grid)?;
        Ok((
            json!({ "circuit": spec, "selection": selection, "totals": totals }),
            vec![spec.neuron.core_id()],
        ))
    }

    fn permutation(&mut self) -> Outcome {
        let (spec, selection) = self.circuit(CircuitKind::Triplet)?;
        let grid = self.grid();
        let derangement = self.cfg.triplet.derangement;
        let (selected, permuted) = permutation_control(
            self.fabric,
            &spec,
            &derangement,
            &grid,
            self.cfg.sweep.n_trials,
            &self.sweep_options(),
            self.exec,
        )?;
        self.write_tuning("tuning_selected.csv", &selected)?;
        self.write_tuning("tuning_permuted.csv", &permuted)?;
        self.write_sweep_patterns("triplet", &spec, &grid)?;
        let permuted_spec = spec.permuted(&derangement)?;
        Ok((
            json!({
                "circuit": spec,
                "permuted_circuit": permuted_spec,
                "derangement": derangement,
                "selection": selection,
                "selected_range": selected.max() - selected.min(),
                "permuted_range": permuted.max() - permuted.min(),
            }),
            vec![spec.neuron.core_id()],
        ))
    }

    fn calibrate(&mut self) -> Outcome {
        let cal = &self.cfg.calibration;
        let setup = CalibrationSetup {
            core: self.cfg.population.core,
            exc_slot: self.cfg.population.exc_slot,
            inh_slot: self.cfg.population.inh_slot,
            cam_neuron: self.cfg.cams.neuron,
            n_pairs: self.cfg.cams.n_pairs,
            bin_width: self.cfg.population.bin_width,
        };
        let targets = CalibrationTargets {
            std: cal.target_std,
            mode: cal.target_mode,
            spiking_fraction: cal.target_spiking_fraction,
        };
        let seeds: Vec<u64> = (0..cal.n_seeds)
            .map(|k| if k == 0 { self.seed } else { derive_seed(self.seed, STREAM_CALIBRATION, k) })
            .collect();
        let cfg = self.cfg;
        let mut build_error = None;
        let points = delaylab::calibrate_mismatch(
            |mm| match build_fabric(cfg, mm) {
                Ok(f) => f,
                Err(e) => {
                    build_error.get_or_insert(e);
                    Fabric::with_mismatch(mm)
                }
            },
            &cal.cv_neuron_grid,
            &cal.cv_cam_grid,
            &seeds,
            &setup,
            &targets,
            &self.probe_options(0.0),
            self.exec,
        );
        if let Some(e) = build_error {
            return Err(e);
        }
        let points = points?;
        delaylab::write_calibration_csv(&points, self.stage.file("calibration.csv")?)?;
        let best = best_point(&points).ok_or_else(|| RunError::Runtime("empty calibration grid".into()))?;
        Ok((
            json!({
                "fitted": { "cv_neuron": best.cv_neuron, "cv_cam": best.cv_cam },
                "best": best,
                "seeds": seeds,
                "targets": targets,
                "setup": setup,
            }),
            vec![setup.core, setup.cam_neuron.core_id()],
        ))
    }
}

