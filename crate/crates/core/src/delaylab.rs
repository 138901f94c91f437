//! Disynaptic delay elements: construction, FDHM delay measurement and
//! population/CAM-combination characterization.
//!
//! A delay element is one slow excitatory and one fast subtractive
//! inhibitory synapse on the same neuron, both listening to the same input
//! tag. A single input spike first pulls the membrane below rest; the
//! inhibition decays faster than the excitation, so the net current turns
//! positive and the membrane peaks after a delay set by the two time
//! constants.
//!
//! The delay runs from the half-depth crossing of the inhibitory dip to
//! the maximum of the rebound, or to the first spike if the rebound fires
//! the neuron.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::exec::Executor;
use crate::fabric::mismatch::derive_seed;
use crate::fabric::{Address, CamSlot, CoreId, Fabric, FabricError, SourceTag, SynapseType, CAM_SLOTS};
use crate::sim::{simulate, simulate_with_params, MembraneTrace, SimError, SimOptions};
use crate::stimulus::gen_single;

/// Length of the baseline window at the start of a trace (s).
pub const BASELINE_WINDOW: f64 = 5e-3;
/// Noise floor in units of the baseline standard deviation.
pub const NOISE_FLOOR_SIGMAS: f64 = 4.0;
/// Smallest deflection treated as a response on a noiseless trace (V).
pub const MIN_DEFLECTION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("degenerate delay element on {neuron}: tau_exc {tau_exc:.3e} s <= tau_inh {tau_inh:.3e} s")]
    DegenerateDelayElement {
        neuron: Address,
        tau_exc: f64,
        tau_inh: f64,
    },
    #[error("no inhibitory dip above the noise floor")]
    NoInhibitionDetected,
    #[error("no rebound above baseline and no spike")]
    NoReboundDetected,
    #[error("requested {requested} slot pairs, only {available} available")]
    TooManyPairs { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayElement {
    pub neuron: Address,
    pub exc_slot: CamSlot,
    pub inh_slot: CamSlot,
    pub input_tag: SourceTag,
}

impl DelayElement {
    /// Effective (tau_exc, tau_inh) after mismatch.
    pub fn time_constants(&self, fabric: &Fabric) -> Result<(f64, f64), FabricError> {
        Ok((
            fabric.slot_dpi_params(self.neuron, self.exc_slot.slot)?.tau,
            fabric.slot_dpi_params(self.neuron, self.inh_slot.slot)?.tau,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    /// Keep the element even when tau_exc <= tau_inh.
    pub force: bool,
    pub exc_type: SynapseType,
    pub inh_type: SynapseType,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            force: false,
            exc_type: SynapseType::ExcSlow,
            inh_type: SynapseType::InhSubtractive,
        }
    }
}

pub fn build_delay_element(
    fabric: &mut Fabric,
    neuron: Address,
    exc_slot: u8,
    inh_slot: u8,
    input_tag: SourceTag,
) -> Result<DelayElement, DelayError> {
    build_delay_element_with(fabric, neuron, exc_slot, inh_slot, input_tag, BuildOptions::default())
}

/// Register both CAM entries. A degenerate element is rolled back unless
/// `opts.force` is set, in which case it is kept and only logged.
pub fn build_delay_element_with(
    fabric: &mut Fabric,
    neuron: Address,
    exc_slot: u8,
    inh_slot: u8,
    input_tag: SourceTag,
    opts: BuildOptions,
) -> Result<DelayElement, DelayError> {
    for slot in [exc_slot, inh_slot] {
        if fabric.slot(neuron, slot).is_some() {
            return Err(FabricError::SlotOccupied { neuron, slot }.into());
        }
    }
    let exc = fabric.configure_connection(neuron, exc_slot, input_tag, opts.exc_type)?;
    let inh = match fabric.configure_connection(neuron, inh_slot, input_tag, opts.inh_type) {
        Ok(e) => e,
        Err(e) => {
            fabric.disconnect(neuron, exc_slot)?;
            return Err(e.into());
        }
    };
    let element = DelayElement {
        neuron,
        exc_slot: exc,
        inh_slot: inh,
        input_tag,
    };
    let taus = element.time_constants(fabric);
    let (tau_exc, tau_inh) = match taus {
        Ok(t) => t,
        Err(e) => {
            fabric.disconnect(neuron, exc_slot)?;
            fabric.disconnect(neuron, inh_slot)?;
            return Err(e.into());
        }
    };
    if tau_exc <= tau_inh {
        let err = DelayError::DegenerateDelayElement {
            neuron,
            tau_exc,
            tau_inh,
        };
        if !opts.force {
            fabric.disconnect(neuron, exc_slot)?;
            fabric.disconnect(neuron, inh_slot)?;
            return Err(err);
        }
        log::warn!("{err}; kept");
    }
    Ok(element)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayMeasurement {
    pub onset: f64,
    pub peak_time: f64,
    pub delay: f64,
    pub spiked: bool,
    pub baseline: f64,
    pub dip_depth: f64,
    pub rebound_height: f64,
}

fn index_at(trace: &MembraneTrace, t: f64) -> usize {
    (((t - trace.t0) / trace.dt).ceil().max(0.0) as usize).min(trace.samples.len())
}

/// FDHM delay of a single-spike response.
pub fn measure_delay(trace: &MembraneTrace) -> Result<DelayMeasurement, DelayError> {
    let v = &trace.samples;
    if v.is_empty() {
        return Err(DelayError::NoInhibitionDetected);
    }
    let stim = index_at(trace, 0.0);
    let base_end = index_at(trace, trace.t0 + BASELINE_WINDOW).min(stim).max(1);
    let window = &v[..base_end];
    let baseline = crate::stats::mean(window);
    let floor = (NOISE_FLOOR_SIGMAS * crate::stats::std_dev(window)).max(MIN_DEFLECTION);

    let first_spike = trace.spike_times.iter().copied().find(|&t| t >= 0.0);
    let search_end = first_spike.map_or(v.len(), |t| index_at(trace, t).min(v.len()));
    let stim = stim.min(v.len() - 1);
    if search_end <= stim {
        return Err(DelayError::NoInhibitionDetected);
    }

    let (k_min, v_min) = v[stim..search_end]
        .iter()
        .enumerate()
        .fold((stim, f64::INFINITY), |(km, vm), (k, &x)| {
            if x < vm {
                (stim + k, x)
            } else {
                (km, vm)
            }
        });
    let dip_depth = baseline - v_min;
    if dip_depth <= floor {
        return Err(DelayError::NoInhibitionDetected);
    }

    let half = baseline - 0.5 * dip_depth;
    let k_cross = (stim..=k_min)
        .find(|&k| v[k] <= half)
        .expect("the minimum itself is below half depth");
    let onset = if k_cross == 0 || v[k_cross - 1] <= half {
        trace.time(k_cross)
    } else {
        let (a, b) = (v[k_cross - 1], v[k_cross]);
        trace.time(k_cross - 1) + trace.dt * (a - half) / (a - b)
    };

    let after = &v[k_min..search_end];
    let (k_max, v_max) = after
        .iter()
        .enumerate()
        .fold((k_min, f64::NEG_INFINITY), |(km, vm), (k, &x)| {
            if x > vm {
                (k_min + k, x)
            } else {
                (km, vm)
            }
        });
    let rebound_height = v_max - baseline;

    let (peak_time, spiked) = match first_spike {
        Some(t) if t >= onset => (t, true),
        _ => {
            if rebound_height <= floor {
                return Err(DelayError::NoReboundDetected);
            }
            (trace.time(k_max), false)
        }
    };
    Ok(DelayMeasurement {
        onset,
        peak_time,
        delay: peak_time - onset,
        spiked,
        baseline,
        dip_depth,
        rebound_height,
    })
}

/// Copy of `trace` with additive Gaussian measurement noise.
pub fn add_measurement_noise(trace: &MembraneTrace, sigma: f64, seed: u64) -> MembraneTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    MembraneTrace {
        samples: trace.samples.iter().map(|v| v + dist.sample(&mut rng)).collect(),
        ..trace.clone()
    }
}

/// Copy of `trace` rounded to a `bits`-bit converter spanning `[lo, hi]`.
pub fn quantize_trace(trace: &MembraneTrace, bits: u32, lo: f64, hi: f64) -> MembraneTrace {
    let levels = ((1u64 << bits) - 1) as f64;
    let step = (hi - lo) / levels;
    MembraneTrace {
        samples: trace
            .samples
            .iter()
            .map(|v| lo + (((v - lo) / step).round().clamp(0.0, levels)) * step)
            .collect(),
        ..trace.clone()
    }
}

/// Measurement settings shared by the characterization routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub sim: SimOptions,
    /// Optional trace noise (V); 0 disables.
    pub measurement_noise: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            sim: SimOptions {
                record_trace: true,
                duration: 0.1,
                ..SimOptions::default()
            },
            measurement_noise: 0.0,
            seed: 0,
        }
    }
}

/// Stimulate one element with a single spike and return its trace.
pub fn probe_element(
    fabric: &Fabric,
    element: &DelayElement,
    opts: &ProbeOptions,
) -> Result<MembraneTrace, DelayError> {
    let sim = SimOptions {
        record_trace: true,
        noise_seed: derive_seed(opts.seed, 0x5349, element.neuron.global_index() as u64),
        ..opts.sim
    };
    let r = simulate(fabric, element.neuron, &gen_single(element.input_tag), &sim)?;
    let trace = r.trace.expect("trace requested");
    Ok(noisy(trace, element, opts))
}

/// Like [`probe_element`] with spiking disabled by raising the threshold
/// out of reach.
pub fn probe_element_subthreshold(
    fabric: &Fabric,
    element: &DelayElement,
    opts: &ProbeOptions,
) -> Result<MembraneTrace, DelayError> {
    let mut params = fabric.neuron_params(element.neuron);
    params.v_t = params.v_rail_hi - 6.0 * params.delta_t;
    params.v_cut = params.v_rail_hi;
    let sim = SimOptions {
        record_trace: true,
        noise_seed: derive_seed(opts.seed, 0x5349, element.neuron.global_index() as u64),
        ..opts.sim
    };
    let r = simulate_with_params(fabric, element.neuron, &params, &gen_single(element.input_tag), &sim)?;
    Ok(noisy(r.trace.expect("trace requested"), element, opts))
}

fn noisy(trace: MembraneTrace, element: &DelayElement, opts: &ProbeOptions) -> MembraneTrace {
    if opts.measurement_noise > 0.0 {
        let seed = derive_seed(
            opts.seed,
            0x4d45,
            ((element.neuron.global_index() as u64) << 16)
                | ((element.exc_slot.slot as u64) << 8)
                | element.inh_slot.slot as u64,
        );
        add_measurement_noise(&trace, opts.measurement_noise, seed)
    } else {
        trace
    }
}

/// One row of a characterization run.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayRecord {
    pub element: DelayElement,
    pub result: Result<DelayMeasurement, DelayError>,
}

impl DelayRecord {
    pub fn measurement(&self) -> Option<&DelayMeasurement> {
        self.result.as_ref().ok()
    }
}

/// One delay element per neuron of `core`, all on the same input tag.
pub fn setup_population(
    fabric: &mut Fabric,
    core: CoreId,
    exc_slot: u8,
    inh_slot: u8,
    input_tag: SourceTag,
) -> Result<Vec<DelayElement>, DelayError> {
    let opts = BuildOptions {
        force: true,
        ..BuildOptions::default()
    };
    core.neurons()
        .map(|n| build_delay_element_with(fabric, n, exc_slot, inh_slot, input_tag, opts))
        .collect()
}

/// Measure every element in isolation. Results follow element order;
/// per-element failures are kept as tagged entries.
pub fn characterize_population(
    fabric: &Fabric,
    elements: &[DelayElement],
    opts: &ProbeOptions,
    exec: &Executor,
) -> Vec<DelayRecord> {
    exec.map(elements, |e| DelayRecord {
        element: *e,
        result: probe_element(fabric, e, opts).and_then(|t| measure_delay(&t)),
    })
}

/// `n` distinct ordered (exc_slot, inh_slot) pairs, drawn deterministically
/// from all pairs of different slots.
pub fn cam_slot_pairs(n: usize, seed: u64) -> Result<Vec<(u8, u8)>, DelayError> {
    let mut all: Vec<(u8, u8)> = (0..CAM_SLOTS)
        .flat_map(|e| (0..CAM_SLOTS).filter(move |&i| i != e).map(move |i| (e, i)))
        .collect();
    if n > all.len() {
        return Err(DelayError::TooManyPairs {
            requested: n,
            available: all.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x43414d, 0));
    all.shuffle(&mut rng);
    all.truncate(n);
    Ok(all)
}

/// Rebuild the element on `neuron` for each slot pair and measure it.
/// Other CAM entries of the neuron are removed for the duration.
pub fn characterize_cam_combinations(
    fabric: &Fabric,
    neuron: Address,
    pairs: &[(u8, u8)],
    input_tag: SourceTag,
    opts: &ProbeOptions,
    exec: &Executor,
) -> Result<Vec<DelayRecord>, DelayError> {
    let mut base = fabric.clone();
    base.clear_neuron(neuron);
    let build = BuildOptions {
        force: true,
        ..BuildOptions::default()
    };
    exec.try_map(pairs, |&(e, i)| {
        let mut f = base.clone();
        let element = build_delay_element_with(&mut f, neuron, e, i, input_tag, build)?;
        Ok(DelayRecord {
            element,
            result: probe_element(&f, &element, opts).and_then(|t| measure_delay(&t)),
        })
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6e}"))
}

/// `neuron,exc_slot,inh_slot,onset_s,peak_s,delay_s,spiked`; failed
/// measurements leave the numeric fields empty.
pub fn write_delays_csv<W: Write>(records: &[DelayRecord], w: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["neuron", "exc_slot", "inh_slot", "onset_s", "peak_s", "delay_s", "spiked"])?;
    for r in records {
        let m = r.measurement();
        wtr.write_record([
            r.element.neuron.global_index().to_string(),
            r.element.exc_slot.slot.to_string(),
            r.element.inh_slot.slot.to_string(),
            fmt_opt(m.map(|m| m.onset)),
            fmt_opt(m.map(|m| m.peak_time)),
            fmt_opt(m.map(|m| m.delay)),
            m.map_or_else(String::new, |m| m.spiked.to_string()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Summary of a set of delay records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelaySummary {
    pub n: usize,
    pub n_measured: usize,
    pub spiking_fraction: f64,
    pub mean: f64,
    pub std: f64,
    pub n_modes: usize,
    pub main_mode: Option<f64>,
}

pub fn summarize(records: &[DelayRecord], bin_width: f64, rel_prominence: f64) -> DelaySummary {
    let measured: Vec<&DelayMeasurement> = records.iter().filter_map(DelayRecord::measurement).collect();
    let delays: Vec<f64> = measured.iter().map(|m| m.delay).collect();
    let modes = crate::stats::detect_modes(&delays, bin_width, rel_prominence);
    DelaySummary {
        n: records.len(),
        n_measured: measured.len(),
        spiking_fraction: if measured.is_empty() {
            0.0
        } else {
            measured.iter().filter(|m| m.spiked).count() as f64 / measured.len() as f64
        },
        mean: crate::stats::mean(&delays),
        std: crate::stats::std_dev(&delays),
        n_modes: modes.as_ref().map_or(0, |r| r.n_modes()),
        main_mode: modes.and_then(|r| r.main_mode()),
    }
}

/// Relative prominence a histogram peak needs to count as a mode.
pub const MODE_PROMINENCE: f64 = 0.2;
/// Input tag of population and CAM-combination elements.
pub const CHARACTERIZATION_TAG: SourceTag = SourceTag(4000);

/// Layout of the population and CAM-combination runs used to score a
/// mismatch setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSetup {
    pub core: CoreId,
    pub exc_slot: u8,
    pub inh_slot: u8,
    pub cam_neuron: Address,
    pub n_pairs: usize,
    pub bin_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Population delay standard deviation (s).
    pub std: f64,
    /// Location of the population's main histogram mode (s).
    pub mode: f64,
    pub spiking_fraction: f64,
}

/// Seed-averaged statistics of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub cv_neuron: f64,
    pub cv_cam: f64,
    pub std: f64,
    pub main_mode: f64,
    pub spiking_fraction: f64,
    pub population_modes: f64,
    pub cam_modes: f64,
    pub loss: f64,
}

/// Population and CAM-combination runs on a fresh fabric.
pub fn characterize_setup(
    fabric: &Fabric,
    setup: &CalibrationSetup,
    opts: &ProbeOptions,
    exec: &Executor,
) -> Result<(Vec<DelayRecord>, Vec<DelayRecord>), DelayError> {
    let mut f = fabric.clone();
    let elements = setup_population(&mut f, setup.core, setup.exc_slot, setup.inh_slot, CHARACTERIZATION_TAG)?;
    let population = characterize_population(&f, &elements, opts, exec);
    let pairs = cam_slot_pairs(setup.n_pairs, fabric.mismatch().seed)?;
    let cams = characterize_cam_combinations(fabric, setup.cam_neuron, &pairs, CHARACTERIZATION_TAG, opts, exec)?;
    Ok((population, cams))
}

/// Grid search over mismatch spreads. The loss adds the relative errors of
/// the population spread and main mode, the spiking-fraction error, the
/// distance of the population from one mode and the CAM distribution's
/// shortfall from two.
pub fn calibrate_mismatch<F>(
    mut make_fabric: F,
    cv_neuron: &[f64],
    cv_cam: &[f64],
    seeds: &[u64],
    setup: &CalibrationSetup,
    targets: &CalibrationTargets,
    opts: &ProbeOptions,
    exec: &Executor,
) -> Result<Vec<CalibrationPoint>, DelayError>
where
    F: FnMut(crate::fabric::MismatchConfig) -> Fabric,
{
    let mut out = Vec::with_capacity(cv_neuron.len() * cv_cam.len());
    for &cn in cv_neuron {
        for &cc in cv_cam {
            let mut acc = [0.0; 6];
            for &seed in seeds {
                let fabric = make_fabric(crate::fabric::MismatchConfig {
                    cv_neuron: cn,
                    cv_cam: cc,
                    seed,
                });
                let (pop, cams) = characterize_setup(&fabric, setup, opts, exec)?;
                let p = summarize(&pop, setup.bin_width, MODE_PROMINENCE);
                let c = summarize(&cams, setup.bin_width, MODE_PROMINENCE);
                let mode = p.main_mode.unwrap_or(0.0);
                let loss = (p.std - targets.std).abs() / targets.std
                    + (mode - targets.mode).abs() / targets.mode
                    + (p.spiking_fraction - targets.spiking_fraction).abs()
                    + (p.n_modes as f64 - 1.0).abs()
                    + (2.0 - c.n_modes as f64).max(0.0);
                for (a, x) in acc.iter_mut().zip([p.std, mode, p.spiking_fraction, p.n_modes as f64, c.n_modes as f64, loss]) {
                    *a += x;
                }
            }
            let n = seeds.len().max(1) as f64;
            out.push(CalibrationPoint {
                cv_neuron: cn,
                cv_cam: cc,
                std: acc[0] / n,
                main_mode: acc[1] / n,
                spiking_fraction: acc[2] / n,
                population_modes: acc[3] / n,
                cam_modes: acc[4] / n,
                loss: acc[5] / n,
            });
        }
    }
    Ok(out)
}

/// Lowest-loss point; the first wins ties.
pub fn best_point(points: &[CalibrationPoint]) -> Option<&CalibrationPoint> {
    points.iter().reduce(|a, b| if b.loss < a.loss { b } else { a })
}

pub fn write_calibration_csv<W: Write>(points: &[CalibrationPoint], w: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "cv_neuron",
        "cv_cam",
        "std_s",
        "main_mode_s",
        "spiking_fraction",
        "population_modes",
        "cam_modes",
        "loss",
    ])?;
    for p in points {
        wtr.write_record([
            format!("{}", p.cv_neuron),
            format!("{}", p.cv_cam),
            format!("{:.6e}", p.std),
            format!("{:.6e}", p.main_mode),
            format!("{:.6}", p.spiking_fraction),
            format!("{:.3}", p.population_modes),
            format!("{:.3}", p.cam_modes),
            format!("{:.6}", p.loss),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Histogram of measured delays with its smoothed profile:
/// `bin_center_s,count,smoothed`.
pub fn write_histogram_csv<W: Write>(report: &crate::stats::ModeReport, w: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["bin_center_s", "count", "smoothed"])?;
    for (k, (&c, &s)) in report.histogram.counts.iter().zip(&report.smoothed).enumerate() {
        wtr.write_record([
            format!("{:.6e}", report.histogram.center(k)),
            c.to_string(),
            format!("{s:.6}"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
