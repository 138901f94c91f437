//! Numerical kernels for the AdEx point neuron and the DPI synapse filter.
//!
//! Everything here is a pure state-in/state-out function. Units are SI
//! throughout (volts, amperes, farads, siemens, seconds).
//!
//! The neuron is integrated with an explicit midpoint (RK2) step. The DPI
//! filter is first order and linear for a piecewise-constant input, so
//! `dpi_step` uses the exact exponential solution on every constant-input
//! segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default integration step (10 µs).
pub const DEFAULT_DT: f64 = 1e-5;
/// Largest step accepted by [`step_neuron`].
pub const DT_MAX: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid step size {0} s")]
    InvalidStep(f64),
    #[error("non-finite value in {0}")]
    NumericalDomain(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Which form of the membrane equation to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdexMode {
    /// Exponential term and adaptation current both active.
    #[default]
    Full,
    /// Exponential term and adaptation dropped; a leaky integrator.
    Subthreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronParams {
    /// Membrane capacitance (F).
    pub c: f64,
    /// Leak conductance (S).
    pub g_l: f64,
    /// Leak reversal potential (V).
    pub e_l: f64,
    /// Spike threshold (V).
    pub v_t: f64,
    /// Slope factor (V).
    pub delta_t: f64,
    /// Adaptation time constant (s).
    pub tau_w: f64,
    /// Subthreshold adaptation (S).
    pub a: f64,
    /// Spike-triggered adaptation increment (A).
    pub b: f64,
    /// Reset potential (V).
    pub v_r: f64,
    /// Spike-detection ceiling (V).
    pub v_cut: f64,
    /// Refractory period (s).
    pub t_refr: f64,
    /// Constant injected current (A).
    pub i_dc: f64,
    pub v_rail_lo: f64,
    pub v_rail_hi: f64,
    pub mode: AdexMode,
}

impl Default for NeuronParams {
    fn default() -> Self {
        let v_t = 0.38;
        let delta_t = 0.005;
        Self {
            c: 2e-12,
            g_l: 1e-9,
            e_l: 0.3,
            v_t,
            delta_t,
            tau_w: 0.3,
            a: 0.0,
            b: 1e-10,
            v_r: 0.3,
            v_cut: v_t + 5.0 * delta_t,
            t_refr: 5e-3,
            i_dc: 0.0,
            v_rail_lo: 0.0,
            v_rail_hi: 1.8,
            mode: AdexMode::Full,
        }
    }
}

impl NeuronParams {
    /// Membrane time constant C / g_L.
    pub fn tau_m(&self) -> f64 {
        self.c / self.g_l
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.c,
            self.g_l,
            self.e_l,
            self.v_t,
            self.delta_t,
            self.tau_w,
            self.a,
            self.b,
            self.v_r,
            self.v_cut,
            self.t_refr,
            self.i_dc,
            self.v_rail_lo,
            self.v_rail_hi,
        ];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NumericalDomain("neuron parameters"));
        }
        let bad = |msg: &str| Err(DynamicsError::InvalidParams(msg.to_string()));
        if self.c <= 0.0 {
            return bad("C must be positive");
        }
        if self.g_l <= 0.0 {
            return bad("g_L must be positive");
        }
        if self.delta_t <= 0.0 {
            return bad("Delta_T must be positive");
        }
        if self.tau_w <= 0.0 {
            return bad("tau_w must be positive");
        }
        if self.t_refr < 0.0 {
            return bad("t_refr must be non-negative");
        }
        if !(self.v_rail_lo <= self.e_l
            && self.e_l <= self.v_t
            && self.v_t < self.v_cut
            && self.v_cut <= self.v_rail_hi)
        {
            return bad("require V_rail_lo <= E_L <= V_T < V_cut <= V_rail_hi");
        }
        if !(self.v_rail_lo <= self.v_r && self.v_r <= self.v_t) {
            return bad("require V_rail_lo <= V_r <= V_T");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    /// Membrane potential (V).
    pub v: f64,
    /// Adaptation current (A).
    pub w: f64,
    /// Time since the last spike (s); infinite before the first spike.
    pub t_since_spike: f64,
}

impl NeuronState {
    pub fn new(v: f64) -> Self {
        Self {
            v,
            w: 0.0,
            t_since_spike: f64::INFINITY,
        }
    }

    /// Resting state for a constant drive `i_in` (which includes `i_dc`).
    ///
    /// Solves for the stable fixed point below threshold by Newton
    /// iteration started at the linear solution. Falls back to the linear
    /// solution if the drive is suprathreshold.
    pub fn at_rest(params: &NeuronParams, i_in: f64) -> Self {
        let g = params.g_l;
        let linear = params.e_l + i_in / g;
        let mut v = linear.min(params.v_t);
        if params.mode == AdexMode::Full {
            for _ in 0..50 {
                let e = ((v - params.v_t) / params.delta_t).exp();
                let f = -g * (v - params.e_l) + g * params.delta_t * e + i_in;
                let df = -g + g * e;
                if df >= 0.0 {
                    v = linear;
                    break;
                }
                let next = v - f / df;
                if (next - v).abs() < 1e-15 {
                    v = next;
                    break;
                }
                v = next;
            }
        } else {
            v = linear;
        }
        let v = v.clamp(params.v_rail_lo, params.v_rail_hi);
        let w = match params.mode {
            AdexMode::Full => params.a * (v - params.e_l),
            AdexMode::Subthreshold => 0.0,
        };
        Self {
            v,
            w,
            t_since_spike: f64::INFINITY,
        }
    }
}

/// Right-hand sides (dV/dt, dw/dt) of the AdEx equations.
///
/// `i_syn` is the total input current, synaptic plus `i_dc`. With
/// `simplified` set, the exponential term is dropped and w is treated as 0.
pub fn adex_derivatives(
    state: &NeuronState,
    params: &NeuronParams,
    i_syn: f64,
    simplified: bool,
) -> Result<(f64, f64)> {
    if !state.v.is_finite() || !state.w.is_finite() || !i_syn.is_finite() {
        return Err(DynamicsError::NumericalDomain("adex_derivatives input"));
    }
    let leak = -params.g_l * (state.v - params.e_l);
    let (dv, dw) = if simplified {
        ((leak + i_syn) / params.c, 0.0)
    } else {
        let exp_term = params.g_l * params.delta_t * ((state.v - params.v_t) / params.delta_t).exp();
        let dv = (leak + exp_term - state.w + i_syn) / params.c;
        let dw = (params.a * (state.v - params.e_l) - state.w) / params.tau_w;
        (dv, dw)
    };
    if !dv.is_finite() || !dw.is_finite() {
        return Err(DynamicsError::NumericalDomain("adex_derivatives output"));
    }
    Ok((dv, dw))
}

/// Spike reset: V to V_r, w incremented by b, refractory clock restarted.
pub fn apply_spike_reset(state: &NeuronState, params: &NeuronParams) -> NeuronState {
    NeuronState {
        v: params.v_r,
        w: state.w + params.b,
        t_since_spike: 0.0,
    }
}

/// Advance the neuron by one step of length `dt` under a constant input
/// current (synaptic plus `i_dc`). Returns the new state and whether a spike
/// was emitted during the step.
pub fn step_neuron(
    state: &NeuronState,
    params: &NeuronParams,
    i_syn: f64,
    dt: f64,
) -> Result<(NeuronState, bool)> {
    if !(dt > 0.0 && dt <= DT_MAX) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let simplified = params.mode == AdexMode::Subthreshold;

    if state.t_since_spike < params.t_refr {
        // Refractory: V pinned at reset, adaptation keeps relaxing.
        let w = if simplified {
            state.w
        } else {
            let w_inf = params.a * (params.v_r - params.e_l);
            w_inf + (state.w - w_inf) * (-dt / params.tau_w).exp()
        };
        let next = NeuronState {
            v: params.v_r,
            w,
            t_since_spike: state.t_since_spike + dt,
        };
        return Ok((next, false));
    }

    if state.v >= params.v_cut {
        return Ok((apply_spike_reset(state, params), true));
    }

    let (k1v, k1w) = adex_derivatives(state, params, i_syn, simplified)?;
    let mid = NeuronState {
        v: state.v + 0.5 * dt * k1v,
        w: state.w + 0.5 * dt * k1w,
        t_since_spike: state.t_since_spike,
    };
    // Past V_cut the exponential only matters for detection, so the
    // midpoint is capped there to keep the slope finite.
    let mid = NeuronState {
        v: mid.v.min(params.v_cut),
        ..mid
    };
    let (k2v, k2w) = adex_derivatives(&mid, params, i_syn, simplified)?;
    let v = state.v + dt * k2v;
    let w = state.w + dt * k2w;
    if !v.is_finite() || !w.is_finite() {
        return Err(DynamicsError::NumericalDomain("neuron state"));
    }
    let next = NeuronState {
        v,
        w,
        t_since_spike: state.t_since_spike + dt,
    };
    if next.v >= params.v_cut {
        return Ok((apply_spike_reset(&next, params), true));
    }
    let next = NeuronState {
        v: next.v.clamp(params.v_rail_lo, params.v_rail_hi),
        ..next
    };
    Ok((next, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Excitatory,
    InhibitorySubtractive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpiParams {
    /// Filter time constant (s).
    pub tau: f64,
    /// Leakage current (A).
    pub i_tau: f64,
    /// Gain-control current (A).
    pub i_th: f64,
    /// Input pulse amplitude (A).
    pub w_syn: f64,
    /// Input pulse width (s).
    pub t_pulse: f64,
    pub polarity: Polarity,
}

impl DpiParams {
    /// Steady-state gain I_th / I_tau.
    pub fn gain(&self) -> f64 {
        self.i_th / self.i_tau
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau > 0.0
            && self.i_tau > 0.0
            && self.i_th > 0.0
            && self.w_syn >= 0.0
            && self.t_pulse > 0.0
            && [self.tau, self.i_tau, self.i_th, self.w_syn, self.t_pulse]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidParams(format!("{self:?}")))
        }
    }

    /// The linear filter approximation assumes the input current dominates
    /// the leak current.
    pub fn in_linear_regime(&self) -> bool {
        self.w_syn >= 10.0 * self.i_tau
    }

    /// Output current at the end of one isolated input pulse from rest.
    pub fn pulse_peak(&self) -> f64 {
        self.gain() * self.w_syn * (1.0 - (-self.t_pulse / self.tau).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DpiState {
    /// Output current (A).
    pub i_out: f64,
    /// Remaining active-pulse time (s).
    pub pulse_remaining: f64,
}

#[inline]
fn relax(i: f64, target: f64, h: f64, tau: f64) -> f64 {
    target + (i - target) * (-h / tau).exp()
}

/// Integrate `tau dI/dt + I = (I_th/I_tau) I_in` over `dt`, where the input
/// is `w_syn` while a pulse is active and zero otherwise.
pub fn dpi_step(state: &DpiState, params: &DpiParams, dt: f64) -> Result<DpiState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let mut i = state.i_out;
    let mut remaining = state.pulse_remaining;
    let mut left = dt;
    if remaining > 0.0 {
        let seg = remaining.min(left);
        i = relax(i, params.gain() * params.w_syn, seg, params.tau);
        remaining -= seg;
        left -= seg;
        if remaining < 1e-15 {
            remaining = 0.0;
        }
    }
    if left > 0.0 {
        i = relax(i, 0.0, left, params.tau);
    }
    if !i.is_finite() {
        return Err(DynamicsError::NumericalDomain("dpi output"));
    }
    Ok(DpiState {
        i_out: i.max(0.0),
        pulse_remaining: remaining,
    })
}

/// Start (or extend) the input pulse. Overlapping pulses do not stack.
pub fn dpi_inject_spike(state: &DpiState, params: &DpiParams) -> DpiState {
    DpiState {
        i_out: state.i_out,
        pulse_remaining: params.t_pulse,
    }
}

/// Summed postsynaptic current; subtractive inhibition enters with a minus
/// sign and the result may be negative.
pub fn net_synaptic_current(exc_slow: f64, exc_fast: f64, inh_sub: f64) -> f64 {
    exc_slow + exc_fast - inh_sub
}
