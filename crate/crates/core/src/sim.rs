//! Clock-driven simulation of one neuron and its CAM-connected synapses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    dpi_inject_spike, dpi_step, net_synaptic_current, step_neuron, DpiParams, DpiState,
    DynamicsError, NeuronParams, NeuronState, DEFAULT_DT,
};
use crate::fabric::{Address, Fabric, FabricError, SynapseType};
use crate::stimulus::Pattern;

/// Pre-stimulus settling and baseline window (s).
pub const DEFAULT_LEAD: f64 = 5e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid simulation options: {0}")]
    Options(String),
}

/// Uniformly sampled membrane potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembraneTrace {
    pub dt: f64,
    /// Time of the first sample relative to stimulus onset (s).
    pub t0: f64,
    pub samples: Vec<f64>,
    /// Spike times relative to stimulus onset (s).
    pub spike_times: Vec<f64>,
}

impl MembraneTrace {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t_s", "V_volts"])?;
        for (k, v) in self.samples.iter().enumerate() {
            wtr.write_record([format!("{:.6e}", self.time(k)), format!("{v:.9e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    /// Settling time simulated before the first event (s).
    pub lead: f64,
    /// Simulated time after stimulus onset (s).
    pub duration: f64,
    pub record_trace: bool,
    /// Standard deviation of a white current noise added each step (A).
    pub current_noise: f64,
    /// Seed of the noise stream.
    pub noise_seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            lead: DEFAULT_LEAD,
            duration: 0.1,
            record_trace: false,
            current_noise: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Spike times relative to stimulus onset (s).
    pub spikes: Vec<f64>,
    pub trace: Option<MembraneTrace>,
}

impl TrialResult {
    pub fn count_in(&self, from: f64, to: f64) -> usize {
        self.spikes.iter().filter(|&&t| t >= from && t < to).count()
    }
}

struct SynapseInstance {
    slot: u8,
    syn_type: SynapseType,
    params: DpiParams,
    state: DpiState,
}

/// Simulate `neuron` with the parameters the fabric assigns it.
pub fn simulate(
    fabric: &Fabric,
    neuron: Address,
    pattern: &Pattern,
    opts: &SimOptions,
) -> Result<TrialResult, SimError> {
    simulate_with_params(fabric, neuron, &fabric.neuron_params(neuron), pattern, opts)
}

/// Simulate `neuron` with explicit neuron parameters; synapses still come
/// from the fabric.
pub fn simulate_with_params(
    fabric: &Fabric,
    neuron: Address,
    params: &NeuronParams,
    pattern: &Pattern,
    opts: &SimOptions,
) -> Result<TrialResult, SimError> {
    if !(opts.dt > 0.0) || !(opts.lead >= 0.0) || !(opts.duration > 0.0) {
        return Err(SimError::Options(format!("{opts:?}")));
    }
    fabric.check_simulatable()?;
    params.validate()?;

    let mut synapses = Vec::new();
    for entry in fabric.slots(neuron) {
        let p = fabric.slot_dpi_params(neuron, entry.slot)?;
        p.validate()?;
        if !p.in_linear_regime() {
            log::debug!(
                "neuron {neuron} slot {}: w_syn {:.3e} A below 10 x I_tau {:.3e} A",
                entry.slot,
                p.w_syn,
                p.i_tau
            );
        }
        synapses.push(SynapseInstance {
            slot: entry.slot,
            syn_type: entry.syn_type,
            params: p,
            state: DpiState::default(),
        });
    }

    // Event delivery on the step grid: step index of each routed spike.
    let mut deliveries: Vec<(usize, usize)> = Vec::new();
    for ev in pattern.events() {
        let step = ((ev.t + opts.lead) / opts.dt).round() as usize;
        for (addr, slot) in fabric.route_spike(ev.tag) {
            if addr != neuron {
                continue;
            }
            if let Some(idx) = synapses.iter().position(|s| s.slot == slot) {
                deliveries.push((step, idx));
            }
        }
    }
    deliveries.sort_unstable();

    let n_steps = ((opts.lead + opts.duration) / opts.dt).round() as usize;
    let mut state = NeuronState::at_rest(params, params.i_dc);
    let mut spikes = Vec::new();
    let mut samples = if opts.record_trace {
        Vec::with_capacity(n_steps + 1)
    } else {
        Vec::new()
    };
    if opts.record_trace {
        samples.push(state.v);
    }
    let mut noise = if opts.current_noise > 0.0 {
        let dist = Normal::new(0.0, opts.current_noise)
            .map_err(|e| SimError::Options(e.to_string()))?;
        Some((ChaCha8Rng::seed_from_u64(opts.noise_seed), dist))
    } else {
        None
    };

    let mut next = 0;
    for k in 0..n_steps {
        while next < deliveries.len() && deliveries[next].0 <= k {
            let syn = &mut synapses[deliveries[next].1];
            syn.state = dpi_inject_spike(&syn.state, &syn.params);
            next += 1;
        }

        let (mut exc_slow, mut exc_fast, mut inh) = (0.0, 0.0, 0.0);
        for syn in &synapses {
            match syn.syn_type {
                SynapseType::ExcSlow => exc_slow += syn.state.i_out,
                SynapseType::ExcFast => exc_fast += syn.state.i_out,
                SynapseType::InhSubtractive => inh += syn.state.i_out,
                SynapseType::InhShunting => unreachable!("rejected by check_simulatable"),
            }
        }
        let mut i_in = net_synaptic_current(exc_slow, exc_fast, inh) + params.i_dc;
        if let Some((rng, dist)) = noise.as_mut() {
            i_in += dist.sample(rng);
        }

        let (s, spiked) = step_neuron(&state, params, i_in, opts.dt)?;
        state = s;
        if spiked {
            spikes.push((k + 1) as f64 * opts.dt - opts.lead);
        }
        for syn in synapses.iter_mut() {
            if syn.state.i_out > 0.0 || syn.state.pulse_remaining > 0.0 {
                syn.state = dpi_step(&syn.state, &syn.params, opts.dt)?;
            }
        }
        if opts.record_trace {
            samples.push(state.v);
        }
    }

    let trace = opts.record_trace.then(|| MembraneTrace {
        dt: opts.dt,
        t0: -opts.lead,
        samples,
        spike_times: spikes.clone(),
    });
    Ok(TrialResult { spikes, trace })
}
