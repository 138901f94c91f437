//! Feature-detection studies: pair and triplet ISI sweeps, weight sweeps,
//! off-line synapse selection and the permutation control.
//!
//! A circuit lives on one neuron. Each sweep point is a set of independent
//! trials over an immutable fabric snapshot; aggregation follows grid order
//! so the worker count never changes a result.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::delaylab::{self, DelayError};
use crate::exec::Executor;
use crate::fabric::mismatch::derive_seed;
use crate::fabric::{Address, BiasCode, BiasName, Fabric, FabricError, SourceTag, SynapseType};
use crate::sim::{simulate, SimError, SimOptions, TrialResult};
use crate::stimulus::{
    gen_pair, gen_single, gen_triplet, repeat_pattern, Pattern, StimulusError, DEFAULT_TRIAL_GAP,
    RESPONSE_TAIL,
};

/// First virtual tag used for circuit inputs; above every physical neuron.
pub const INPUT_TAG_BASE: u32 = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error("stimulus: {0}")]
    Stimulus(String),
    #[error("need {needed} candidates, got {got}")]
    InsufficientCandidates { needed: usize, got: usize },
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("permutation {0:?} is not a derangement")]
    NotADerangement(Vec<usize>),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

impl From<StimulusError> for ExperimentError {
    fn from(e: StimulusError) -> Self {
        ExperimentError::Stimulus(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurve {
    pub isis: Vec<f64>,
    pub mean_spikes: Vec<f64>,
    pub std_spikes: Vec<f64>,
    pub n_trials: usize,
}

impl TuningCurve {
    pub fn total(&self) -> f64 {
        self.mean_spikes.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.mean_spikes.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.mean_spikes.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Index of the largest mean; the first on ties.
    pub fn argmax(&self) -> usize {
        let m = self.max();
        self.mean_spikes.iter().position(|&x| x == m).unwrap_or(0)
    }

    /// `isi_s,mean_spikes,std_spikes,n_trials`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["isi_s", "mean_spikes", "std_spikes", "n_trials"])?;
        for k in 0..self.isis.len() {
            wtr.write_record([
                format!("{:.6e}", self.isis[k]),
                format!("{:.6}", self.mean_spikes[k]),
                format!("{:.6}", self.std_spikes[k]),
                self.n_trials.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitKind {
    Pair,
    Triplet,
}

impl CircuitKind {
    fn n_exc(self) -> usize {
        match self {
            CircuitKind::Pair => 2,
            CircuitKind::Triplet => 3,
        }
    }

    fn n_inh(self) -> usize {
        match self {
            CircuitKind::Pair => 2,
            CircuitKind::Triplet => 1,
        }
    }
}

/// Fine-value overrides of the weight biases on the circuit's core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WeightOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exc_fine: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inh_fine: Option<u8>,
}

/// Slot assignment of a circuit.
///
/// Pair: `exc_slots[k]` and `inh_slots[k]` form the delay element of input
/// k. Triplet: `exc_slots` in input order, one inhibitory slot driven
/// together with the first input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub kind: CircuitKind,
    pub neuron: Address,
    pub exc_slots: Vec<u8>,
    pub inh_slots: Vec<u8>,
    #[serde(default)]
    pub weights: WeightOverrides,
}

impl CircuitSpec {
    pub fn pair(neuron: Address, first: (u8, u8), second: (u8, u8)) -> Self {
        Self {
            kind: CircuitKind::Pair,
            neuron,
            exc_slots: vec![first.0, second.0],
            inh_slots: vec![first.1, second.1],
            weights: WeightOverrides::default(),
        }
    }

    pub fn triplet(neuron: Address, exc: [u8; 3], inh: u8) -> Self {
        Self {
            kind: CircuitKind::Triplet,
            neuron,
            exc_slots: exc.to_vec(),
            inh_slots: vec![inh],
            weights: WeightOverrides::default(),
        }
    }

    pub fn with_weights(mut self, weights: WeightOverrides) -> Self {
        self.weights = weights;
        self
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        self.neuron.check()?;
        if self.exc_slots.len() != self.kind.n_exc() || self.inh_slots.len() != self.kind.n_inh() {
            return Err(ExperimentError::InvalidCircuit(format!(
                "{:?} needs {} excitatory and {} inhibitory slots",
                self.kind,
                self.kind.n_exc(),
                self.kind.n_inh()
            )));
        }
        let mut all: Vec<u8> = self.exc_slots.iter().chain(&self.inh_slots).copied().collect();
        if all.iter().any(|&s| s >= crate::fabric::CAM_SLOTS) {
            return Err(ExperimentError::InvalidCircuit("slot index >= 64".into()));
        }
        all.sort_unstable();
        all.dedup();
        if all.len() != self.kind.n_exc() + self.kind.n_inh() {
            return Err(ExperimentError::InvalidCircuit("slots must be distinct".into()));
        }
        Ok(())
    }

    /// Input tags: one per input channel, plus the inhibitory tag of a
    /// triplet last.
    pub fn input_tags(&self) -> Vec<SourceTag> {
        let n = match self.kind {
            CircuitKind::Pair => 2,
            CircuitKind::Triplet => 4,
        };
        (0..n).map(|k| SourceTag(INPUT_TAG_BASE + k)).collect()
    }

    /// Stimulus for one ISI.
    pub fn pattern(&self, isi: f64) -> Result<Pattern, ExperimentError> {
        let t = self.input_tags();
        Ok(match self.kind {
            CircuitKind::Pair => gen_pair(isi, t[0], t[1])?,
            CircuitKind::Triplet => gen_triplet(isi, (t[0], t[1], t[2]), t[3])?,
        })
    }

    /// Apply `perm` to the excitatory input order.
    pub fn permuted(&self, perm: &[usize]) -> Result<CircuitSpec, ExperimentError> {
        let n = self.exc_slots.len();
        let mut seen = vec![false; n];
        let valid = perm.len() == n && perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true));
        if !valid || perm.iter().enumerate().any(|(i, &p)| i == p) {
            return Err(ExperimentError::NotADerangement(perm.to_vec()));
        }
        let mut out = self.clone();
        out.exc_slots = perm.iter().map(|&p| self.exc_slots[p]).collect();
        if self.kind == CircuitKind::Pair {
            out.inh_slots = perm.iter().map(|&p| self.inh_slots[p]).collect();
        }
        Ok(out)
    }
}

/// Rotate-left-by-one derangement of `n` items.
pub fn rotation_derangement(n: usize) -> Vec<usize> {
    (0..n).map(|i| (i + 1) % n).collect()
}

/// Fabric snapshot with the circuit installed on its neuron: other entries
/// of the neuron removed, weight overrides applied to its core.
pub fn install_circuit(fabric: &Fabric, spec: &CircuitSpec) -> Result<Fabric, ExperimentError> {
    spec.check()?;
    let mut f = fabric.clone();
    let n = spec.neuron;
    f.clear_neuron(n);
    let tags = spec.input_tags();
    match spec.kind {
        CircuitKind::Pair => {
            for k in 0..2 {
                f.configure_connection(n, spec.exc_slots[k], tags[k], SynapseType::ExcSlow)?;
                f.configure_connection(n, spec.inh_slots[k], tags[k], SynapseType::InhSubtractive)?;
            }
        }
        CircuitKind::Triplet => {
            for k in 0..3 {
                f.configure_connection(n, spec.exc_slots[k], tags[k], SynapseType::ExcSlow)?;
            }
            f.configure_connection(n, spec.inh_slots[0], tags[3], SynapseType::InhSubtractive)?;
        }
    }
    let core = n.core_id();
    for (fine, name) in [
        (spec.weights.exc_fine, BiasName::PsWeightExcSN),
        (spec.weights.inh_fine, BiasName::PsWeightInhFN),
    ] {
        if let Some(fine) = fine {
            let code = f.core_biases(core).get(name);
            f.set_bias(core, name, BiasCode { fine, ..code })?;
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Every trial starts from rest.
    #[default]
    Isolated,
    /// Trials run back to back in one simulation, separated by a gap.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub dt: f64,
    /// White current noise per step (A); 0 gives a deterministic engine.
    pub current_noise: f64,
    pub seed: u64,
    pub mode: TrialMode,
    /// Gap between trials in continuous mode (s).
    pub trial_gap: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            dt: crate::dynamics::DEFAULT_DT,
            current_noise: 0.0,
            seed: 0,
            mode: TrialMode::Isolated,
            trial_gap: DEFAULT_TRIAL_GAP,
        }
    }
}

fn trial_sim_options(opts: &SweepOptions, duration: f64, stream: u64) -> SimOptions {
    SimOptions {
        dt: opts.dt,
        duration,
        record_trace: false,
        current_noise: opts.current_noise,
        noise_seed: stream,
        ..SimOptions::default()
    }
}

/// Spike counts of `n_trials` presentations of `pattern`. Each trial counts
/// spikes within the pattern span plus the response tail.
pub fn count_trials(
    fabric: &Fabric,
    neuron: Address,
    pattern: &Pattern,
    n_trials: usize,
    opts: &SweepOptions,
    stream: u64,
) -> Result<Vec<usize>, ExperimentError> {
    let window = pattern.span() + RESPONSE_TAIL;
    match opts.mode {
        TrialMode::Isolated => (0..n_trials)
            .map(|k| {
                let seed = derive_seed(opts.seed, stream, k as u64);
                let r = simulate(fabric, neuron, pattern, &trial_sim_options(opts, window, seed))?;
                Ok(r.count_in(0.0, window))
            })
            .collect(),
        TrialMode::Continuous => {
            let window_pattern = Pattern::new(pattern.events().to_vec(), window)?;
            let rep = repeat_pattern(&window_pattern, n_trials, opts.trial_gap)?;
            let duration = rep.pattern.duration();
            let seed = derive_seed(opts.seed, stream, u64::MAX);
            let r: TrialResult =
                simulate(fabric, neuron, &rep.pattern, &trial_sim_options(opts, duration, seed))?;
            let mut counts = vec![0; n_trials];
            for &t in &r.spikes {
                if let Some(k) = rep.trial_of(t) {
                    if t < rep.starts[k] + window {
                        counts[k] += 1;
                    }
                }
            }
            Ok(counts)
        }
    }
}

fn mean_std(counts: &[usize]) -> (f64, f64) {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    (crate::stats::mean(&xs), crate::stats::std_dev(&xs))
}

/// Tuning curve of an installed circuit over an ISI grid.
pub fn run_isi_sweep_installed(
    fabric: &Fabric,
    spec: &CircuitSpec,
    isis: &[f64],
    n_trials: usize,
    opts: &SweepOptions,
    exec: &Executor,
) -> Result<TuningCurve, ExperimentError> {
    if isis.is_empty() || n_trials == 0 {
        return Err(ExperimentError::InvalidSweep("empty grid or zero trials".into()));
    }
    fabric.check_simulatable()?;
    let points: Vec<(usize, f64)> = isis.iter().copied().enumerate().collect();
    let counts = exec.try_map(&points, |&(k, isi)| {
        let pattern = spec.pattern(isi)?;
        count_trials(fabric, spec.neuron, &pattern, n_trials, opts, k as u64)
    })?;
    let (mean_spikes, std_spikes) = counts.iter().map(|c| mean_std(c)).unzip();
    Ok(TuningCurve {
        isis: isis.to_vec(),
        mean_spikes,
        std_spikes,
        n_trials,
    })
}

/// Install `spec` on a copy of `fabric` and sweep the ISI grid.
pub fn run_isi_sweep(
    fabric: &Fabric,
    spec: &CircuitSpec,
    isis: &[f64],
    n_trials: usize,
    opts: &SweepOptions,
    exec: &Executor,
) -> Result<TuningCurve, ExperimentError> {
    let f = install_circuit(fabric, spec)?;
    run_isi_sweep_installed(&f, spec, isis, n_trials, opts, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Excitatory,
    Inhibitory,
}

/// One tuning curve per fine value of the chosen weight bias.
pub fn sweep_weights(
    fabric: &Fabric,
    spec: &CircuitSpec,
    which: WeightKind,
    fine_values: &[u8],
    isis: &[f64],
    n_trials: usize,
    opts: &SweepOptions,
    exec: &Executor,
) -> Result<Vec<(u8, TuningCurve)>, ExperimentError> {
    fine_values
        .iter()
        .map(|&fine| {
            let mut s = spec.clone();
            match which {
                WeightKind::Excitatory => s.weights.exc_fine = Some(fine),
                WeightKind::Inhibitory => s.weights.inh_fine = Some(fine),
            }
            Ok((fine, run_isi_sweep(fabric, &s, isis, n_trials, opts, exec)?))
        })
        .collect()
}

/// Returns (selected order, deranged order) tuning curves under the same
/// seeds. `derangement[i]` is the original input moved to position i.
pub fn permutation_control(
    fabric: &Fabric,
    spec: &CircuitSpec,
    derangement: &[usize],
    isis: &[f64],
    n_trials: usize,
    opts: &SweepOptions,
    exec: &Executor,
) -> Result<(TuningCurve, TuningCurve), ExperimentError> {
    if spec.kind != CircuitKind::Triplet {
        return Err(ExperimentError::InvalidCircuit("permutation control needs a triplet".into()));
    }
    let permuted = spec.permuted(derangement)?;
    Ok((
        run_isi_sweep(fabric, spec, isis, n_trials, opts, exec)?,
        run_isi_sweep(fabric, &permuted, isis, n_trials, opts, exec)?,
    ))
}

/// A selectable input channel: an excitatory slot, optionally with the
/// inhibitory slot that forms its delay element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub exc_slot: u8,
    pub inh_slot: Option<u8>,
}

/// How a candidate's latency is probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyProbe {
    /// The candidate's excitatory slot alone.
    ExcOnly,
    /// The candidate's excitatory slot together with the given inhibitory
    /// slot (a candidate's own inhibitory slot takes precedence).
    WithInhibition(u8),
}

/// Time of the membrane maximum (or first spike) after one input spike.
pub fn response_latency(
    fabric: &Fabric,
    neuron: Address,
    exc_slot: u8,
    inh_slot: Option<u8>,
    dt: f64,
) -> Result<f64, ExperimentError> {
    let mut f = fabric.clone();
    f.clear_neuron(neuron);
    let tag = SourceTag(INPUT_TAG_BASE + 100);
    f.configure_connection(neuron, exc_slot, tag, SynapseType::ExcSlow)?;
    if let Some(i) = inh_slot {
        f.configure_connection(neuron, i, tag, SynapseType::InhSubtractive)?;
    }
    let opts = SimOptions {
        dt,
        record_trace: true,
        duration: 0.1,
        ..SimOptions::default()
    };
    let r = simulate(&f, neuron, &gen_single(tag), &opts)?;
    if let Some(&t) = r.spikes.iter().find(|&&t| t >= 0.0) {
        return Ok(t);
    }
    let tr = r.trace.expect("trace requested");
    let start = (-tr.t0 / tr.dt).round() as usize;
    let k = (start..tr.samples.len())
        .max_by(|&a, &b| tr.samples[a].total_cmp(&tr.samples[b]).then(b.cmp(&a)))
        .unwrap_or(start);
    Ok(tr.time(k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub spec: CircuitSpec,
    /// Latency of each chosen input, in input order (s).
    pub latencies: Vec<f64>,
    /// Σ_i |(L_0 − L_i) − i·target| of the chosen order (s).
    pub residual: f64,
}

/// Choose the ordered subset of `latencies` whose peaks best line up for
/// inputs spaced by `target_isi`. Returns candidate indices in input order
/// and the residual. The first input takes the longest latency; among
/// equal residuals the lexicographically smallest index tuple wins.
pub fn select_by_latency(
    latencies: &[f64],
    k: usize,
    target_isi: f64,
) -> Result<(Vec<usize>, f64), ExperimentError> {
    if latencies.len() < k || k == 0 {
        return Err(ExperimentError::InsufficientCandidates {
            needed: k,
            got: latencies.len(),
        });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut idx = vec![0usize; k];
    fn rec(
        depth: usize,
        idx: &mut Vec<usize>,
        lat: &[f64],
        t: f64,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if depth == idx.len() {
            let l0 = lat[idx[0]];
            let r: f64 = idx
                .iter()
                .enumerate()
                .map(|(i, &c)| ((l0 - lat[c]) - i as f64 * t).abs())
                .sum();
            if best.as_ref().is_none_or(|(_, b)| r < *b) {
                *best = Some((idx.clone(), r));
            }
            return;
        }
        for c in 0..lat.len() {
            if idx[..depth].contains(&c) {
                continue;
            }
            if depth > 0 && lat[c] > lat[idx[depth - 1]] {
                continue;
            }
            idx[depth] = c;
            rec(depth + 1, idx, lat, t, best);
        }
    }
    rec(0, &mut idx, latencies, target_isi, &mut best);
    Ok(best.expect("at least one ordering"))
}

/// Off-line selection: probe every candidate's latency, then pick the order
/// whose latency differences best match `target_isi`.
pub fn select_synapses(
    fabric: &Fabric,
    neuron: Address,
    kind: CircuitKind,
    candidates: &[Candidate],
    triplet_inh_slot: u8,
    probe: LatencyProbe,
    target_isi: f64,
    dt: f64,
    exec: &Executor,
) -> Result<Selection, ExperimentError> {
    let needed = kind.n_exc();
    if candidates.len() < needed {
        return Err(ExperimentError::InsufficientCandidates {
            needed,
            got: candidates.len(),
        });
    }
    if kind == CircuitKind::Pair && candidates.iter().any(|c| c.inh_slot.is_none()) {
        return Err(ExperimentError::InvalidCircuit("pair candidates need an inhibitory slot".into()));
    }
    let latencies = exec.try_map(candidates, |c| {
        let inh = match (c.inh_slot, probe) {
            (Some(i), _) => Some(i),
            (None, LatencyProbe::WithInhibition(i)) => Some(i),
            (None, LatencyProbe::ExcOnly) => None,
        };
        response_latency(fabric, neuron, c.exc_slot, inh, dt)
    })?;
    let (order, residual) = select_by_latency(&latencies, needed, target_isi)?;
    let chosen: Vec<Candidate> = order.iter().map(|&i| candidates[i]).collect();
    let spec = match kind {
        CircuitKind::Pair => CircuitSpec::pair(
            neuron,
            (chosen[0].exc_slot, chosen[0].inh_slot.unwrap()),
            (chosen[1].exc_slot, chosen[1].inh_slot.unwrap()),
        ),
        CircuitKind::Triplet => CircuitSpec::triplet(
            neuron,
            [chosen[0].exc_slot, chosen[1].exc_slot, chosen[2].exc_slot],
            triplet_inh_slot,
        ),
    };
    spec.check()?;
    Ok(Selection {
        spec,
        latencies: order.iter().map(|&i| latencies[i]).collect(),
        residual,
    })
}

/// Delay elements on `neuron` for every listed (exc, inh) pair, measured
/// with the FDHM rule. Convenience for choosing pair candidates.
pub fn candidate_delays(
    fabric: &Fabric,
    neuron: Address,
    pairs: &[(u8, u8)],
    exec: &Executor,
) -> Result<Vec<delaylab::DelayRecord>, ExperimentError> {
    Ok(delaylab::characterize_cam_combinations(
        fabric,
        neuron,
        pairs,
        SourceTag(INPUT_TAG_BASE + 101),
        &delaylab::ProbeOptions::default(),
        exec,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_arithmetic() {
        let (order, r) = select_by_latency(&[10e-3, 20e-3, 15e-3], 3, 5e-3).unwrap();
        assert_eq!(order, vec![1, 2, 0]);
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn equal_latencies_residual() {
        let t = 4e-3;
        let (order, r) = select_by_latency(&[7e-3; 5], 3, t).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
        assert!((r - 3.0 * t).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_gives_residual() {
        let (_, r) = select_by_latency(&[10e-3, 11e-3], 2, 5e-3).unwrap();
        assert!((r - 4e-3).abs() < 1e-12);
    }

    #[test]
    fn too_few_candidates() {
        assert!(matches!(
            select_by_latency(&[1e-3, 2e-3], 3, 1e-3),
            Err(ExperimentError::InsufficientCandidates { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn derangement_rules() {
        let spec = CircuitSpec::triplet(Address::new(0, 0, 0).unwrap(), [1, 2, 3], 4);
        assert!(matches!(spec.permuted(&[0, 1, 2]), Err(ExperimentError::NotADerangement(_))));
        assert!(spec.permuted(&[1, 0, 2]).is_err());
        assert!(spec.permuted(&[1, 1, 0]).is_err());
        assert_eq!(spec.permuted(&rotation_derangement(3)).unwrap().exc_slots, vec![2, 3, 1]);
    }

    #[test]
    fn circuit_checks() {
        let a = Address::new(0, 0, 0).unwrap();
        assert!(CircuitSpec::triplet(a, [1, 2, 2], 4).check().is_err());
        assert!(CircuitSpec::triplet(a, [1, 2, 64], 4).check().is_err());
        assert!(CircuitSpec::pair(a, (0, 1), (2, 3)).check().is_ok());
    }
}
