//! Chip topology: addresses, CAM fan-in, per-core biases, device mismatch.

mod address;
pub mod bias;
pub mod mismatch;

pub use address::{Address, CoreId, SourceTag, CAM_SLOTS, CHIPS, CORES_PER_CHIP, NEURONS_PER_CORE};
pub use bias::{bias_to_current, current_to_tau, BiasCode, BiasName, CoreBiasSet, CurrentLevel};
pub use mismatch::{sample_mismatch, MismatchConfig, MismatchKey};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::dynamics::{DpiParams, NeuronParams, Polarity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("invalid address: {0}")]
    InvalidAddress(String),
    #[error("CAM slot {slot} of neuron {neuron} is already occupied")]
    SlotOccupied { neuron: Address, slot: u8 },
    #[error("neuron {neuron}: CAM slot {slot} exceeds the {CAM_SLOTS}-entry CAM")]
    CapacityExceeded { neuron: Address, slot: u8 },
    #[error("CAM slot {slot} of neuron {neuron} is empty")]
    SlotEmpty { neuron: Address, slot: u8 },
    #[error("synapse type {0:?} is not supported by the simulator")]
    UnsupportedSynapseType(SynapseType),
    #[error("unsupported bias feature: {0}")]
    UnsupportedBias(String),
    #[error("invalid bias: {0}")]
    InvalidBias(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SynapseType {
    ExcFast,
    ExcSlow,
    InhSubtractive,
    InhShunting,
}

impl SynapseType {
    pub const ALL: [SynapseType; 4] = [
        SynapseType::ExcFast,
        SynapseType::ExcSlow,
        SynapseType::InhSubtractive,
        SynapseType::InhShunting,
    ];

    fn biases(self) -> Result<(BiasName, BiasName, BiasName, Polarity), FabricError> {
        use BiasName::*;
        match self {
            SynapseType::ExcSlow => Ok((NpdpieTauSP, NpdpieThrSP, PsWeightExcSN, Polarity::Excitatory)),
            SynapseType::ExcFast => Ok((NpdpieTauFP, NpdpieThrFP, PsWeightExcFN, Polarity::Excitatory)),
            SynapseType::InhSubtractive => Ok((
                NpdpiiTauFP,
                NpdpiiThrFP,
                PsWeightInhFN,
                Polarity::InhibitorySubtractive,
            )),
            SynapseType::InhShunting => Err(FabricError::UnsupportedSynapseType(self)),
        }
    }

    /// Bias parameter holding this type's weight.
    pub fn weight_bias(self) -> BiasName {
        match self {
            SynapseType::ExcSlow => BiasName::PsWeightExcSN,
            SynapseType::ExcFast => BiasName::PsWeightExcFN,
            SynapseType::InhSubtractive => BiasName::PsWeightInhFN,
            SynapseType::InhShunting => BiasName::PsWeightInhSN,
        }
    }
}

/// One occupied CAM word.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamSlot {
    pub slot: u8,
    pub source_tag: SourceTag,
    pub syn_type: SynapseType,
    pub mismatch_factor: f64,
}

/// Current gain of the converter between the weight bias and the synapse
/// input, per synapse type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightGains {
    pub exc_slow: f64,
    pub exc_fast: f64,
    pub inh_subtractive: f64,
}

/// Constants mapping bias currents onto filter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynapseCalibration {
    /// Synaptic capacitance (F).
    pub c_syn: f64,
    /// Thermal voltage (V).
    pub u_t: f64,
    /// Input pulse width (s).
    pub t_pulse: f64,
    pub weight_gain: WeightGains,
}

impl Default for WeightGains {
    fn default() -> Self {
        Self {
            exc_slow: 3.9e10,
            exc_fast: 3.9e10,
            inh_subtractive: 3.1e8,
        }
    }
}

impl Default for SynapseCalibration {
    fn default() -> Self {
        Self {
            c_syn: 1.25e-9,
            u_t: bias::U_T,
            t_pulse: 1e-5,
            weight_gain: WeightGains::default(),
        }
    }
}

impl SynapseCalibration {
    fn gain(&self, syn_type: SynapseType) -> f64 {
        match syn_type {
            SynapseType::ExcSlow => self.weight_gain.exc_slow,
            SynapseType::ExcFast => self.weight_gain.exc_fast,
            SynapseType::InhSubtractive => self.weight_gain.inh_subtractive,
            SynapseType::InhShunting => 0.0,
        }
    }
}

/// Filter parameters of one synapse instance. Nominal values come from the
/// core biases; mismatch multiplies the time constant and the weight.
pub fn effective_dpi_params(
    core_biases: &CoreBiasSet,
    syn_type: SynapseType,
    neuron_mm: f64,
    cam_mm: f64,
    cal: &SynapseCalibration,
) -> Result<DpiParams, FabricError> {
    let (tau_bias, thr_bias, weight_bias, polarity) = syn_type.biases()?;
    let i_tau = core_biases.current(tau_bias);
    let scale = neuron_mm * cam_mm;
    Ok(DpiParams {
        tau: current_to_tau(i_tau, cal.c_syn, cal.u_t) * scale,
        i_tau,
        i_th: core_biases.current(thr_bias),
        w_syn: cal.gain(syn_type) * core_biases.current(weight_bias) * scale,
        t_pulse: cal.t_pulse,
        polarity,
    })
}

/// Feature switches for circuits the simulator does not model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureFlags {
    pub nmda_gating: bool,
}

/// The configured system: per-core biases, mismatch, and CAM contents.
///
/// Built single-threaded, then shared read-only between trial workers.
#[derive(Debug, Clone)]
pub struct Fabric {
    core_biases: BTreeMap<CoreId, CoreBiasSet>,
    mismatch: MismatchConfig,
    synapse_cal: SynapseCalibration,
    neuron_template: NeuronParams,
    features: FeatureFlags,
    cams: BTreeMap<Address, Vec<Option<CamSlot>>>,
    tag_index: BTreeMap<SourceTag, BTreeSet<(Address, u8)>>,
}

impl Fabric {
    pub fn new(
        mismatch: MismatchConfig,
        synapse_cal: SynapseCalibration,
        neuron_template: NeuronParams,
    ) -> Self {
        let mut core_biases = BTreeMap::new();
        for chip in 0..CHIPS {
            for core in 0..CORES_PER_CHIP {
                core_biases.insert(CoreId { chip, core }, CoreBiasSet::default());
            }
        }
        Self {
            core_biases,
            mismatch,
            synapse_cal,
            neuron_template,
            features: FeatureFlags::default(),
            cams: BTreeMap::new(),
            tag_index: BTreeMap::new(),
        }
    }

    pub fn with_mismatch(mismatch: MismatchConfig) -> Self {
        Self::new(mismatch, SynapseCalibration::default(), NeuronParams::default())
    }

    pub fn mismatch(&self) -> &MismatchConfig {
        &self.mismatch
    }

    pub fn synapse_calibration(&self) -> &SynapseCalibration {
        &self.synapse_cal
    }

    pub fn neuron_template(&self) -> &NeuronParams {
        &self.neuron_template
    }

    pub fn features(&self) -> FeatureFlags {
        self.features
    }

    pub fn set_features(&mut self, features: FeatureFlags) {
        self.features = features;
    }

    pub fn core_biases(&self, core: CoreId) -> &CoreBiasSet {
        &self.core_biases[&core]
    }

    pub fn set_core_biases(&mut self, core: CoreId, biases: CoreBiasSet) -> Result<(), FabricError> {
        biases.check()?;
        self.core_biases.insert(core, biases);
        Ok(())
    }

    /// Change one bias code of one core.
    pub fn set_bias(&mut self, core: CoreId, name: BiasName, code: BiasCode) -> Result<(), FabricError> {
        code.check()?;
        self.core_biases
            .get_mut(&core)
            .expect("all cores present")
            .set(name, code);
        Ok(())
    }

    /// Register a CAM entry on `dst`.
    pub fn configure_connection(
        &mut self,
        dst: Address,
        slot: u8,
        source_tag: SourceTag,
        syn_type: SynapseType,
    ) -> Result<CamSlot, FabricError> {
        dst.check()?;
        if slot >= CAM_SLOTS {
            return Err(FabricError::CapacityExceeded { neuron: dst, slot });
        }
        let cam = self
            .cams
            .entry(dst)
            .or_insert_with(|| vec![None; CAM_SLOTS as usize]);
        if cam[slot as usize].is_some() {
            return Err(FabricError::SlotOccupied { neuron: dst, slot });
        }
        let entry = CamSlot {
            slot,
            source_tag,
            syn_type,
            mismatch_factor: sample_mismatch(&self.mismatch, MismatchKey::Slot(dst, slot)),
        };
        cam[slot as usize] = Some(entry);
        self.tag_index.entry(source_tag).or_default().insert((dst, slot));
        Ok(entry)
    }

    /// Register on the lowest free slot.
    pub fn connect(
        &mut self,
        dst: Address,
        source_tag: SourceTag,
        syn_type: SynapseType,
    ) -> Result<CamSlot, FabricError> {
        let slot = self
            .cams
            .get(&dst)
            .and_then(|cam| cam.iter().position(Option::is_none))
            .unwrap_or(if self.cams.contains_key(&dst) {
                CAM_SLOTS as usize
            } else {
                0
            });
        self.configure_connection(dst, slot as u8, source_tag, syn_type)
    }

    pub fn disconnect(&mut self, dst: Address, slot: u8) -> Result<CamSlot, FabricError> {
        let entry = self
            .cams
            .get_mut(&dst)
            .and_then(|cam| cam.get_mut(slot as usize))
            .and_then(Option::take)
            .ok_or(FabricError::SlotEmpty { neuron: dst, slot })?;
        if let Some(set) = self.tag_index.get_mut(&entry.source_tag) {
            set.remove(&(dst, slot));
            if set.is_empty() {
                self.tag_index.remove(&entry.source_tag);
            }
        }
        Ok(entry)
    }

    /// Remove every CAM entry of a neuron.
    pub fn clear_neuron(&mut self, dst: Address) {
        let slots: Vec<u8> = self.slots(dst).map(|s| s.slot).collect();
        for slot in slots {
            let _ = self.disconnect(dst, slot);
        }
        self.cams.remove(&dst);
    }

    pub fn slot(&self, dst: Address, slot: u8) -> Option<&CamSlot> {
        self.cams.get(&dst)?.get(slot as usize)?.as_ref()
    }

    /// Occupied slots of a neuron in slot order.
    pub fn slots(&self, dst: Address) -> impl Iterator<Item = &CamSlot> + '_ {
        self.cams.get(&dst).into_iter().flatten().flatten()
    }

    /// Neurons with at least one CAM entry.
    pub fn configured_neurons(&self) -> impl Iterator<Item = Address> + '_ {
        self.cams
            .iter()
            .filter(|(_, cam)| cam.iter().any(Option::is_some))
            .map(|(a, _)| *a)
    }

    /// Every (neuron, slot) whose CAM holds `tag`, ordered by address then slot.
    pub fn route_spike(&self, tag: SourceTag) -> Vec<(Address, u8)> {
        self.tag_index
            .get(&tag)
            .map(|set| set.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn neuron_mismatch(&self, dst: Address) -> f64 {
        sample_mismatch(&self.mismatch, MismatchKey::Neuron(dst))
    }

    /// Neuron parameters after mismatch. The DC current comes from the
    /// core's `IF_DC_P` bias.
    pub fn neuron_params(&self, dst: Address) -> NeuronParams {
        let t = &self.neuron_template;
        NeuronParams {
            c: t.c * sample_mismatch(&self.mismatch, MismatchKey::NeuronCapacitance(dst)),
            g_l: t.g_l * sample_mismatch(&self.mismatch, MismatchKey::NeuronLeak(dst)),
            i_dc: self.core_biases(dst.core_id()).current(BiasName::IfDcP),
            ..*t
        }
    }

    /// Filter parameters for an occupied slot.
    pub fn slot_dpi_params(&self, dst: Address, slot: u8) -> Result<DpiParams, FabricError> {
        let entry = self
            .slot(dst, slot)
            .ok_or(FabricError::SlotEmpty { neuron: dst, slot })?;
        effective_dpi_params(
            self.core_biases(dst.core_id()),
            entry.syn_type,
            self.neuron_mismatch(dst),
            entry.mismatch_factor,
            &self.synapse_cal,
        )
    }

    /// Reject configurations that use circuits the simulator does not model.
    pub fn check_simulatable(&self) -> Result<(), FabricError> {
        if self.features.nmda_gating {
            return Err(FabricError::UnsupportedBias("NMDA gating".into()));
        }
        for cam in self.cams.values() {
            for entry in cam.iter().flatten() {
                if entry.syn_type == SynapseType::InhShunting {
                    return Err(FabricError::UnsupportedSynapseType(entry.syn_type));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(n: u16) -> Address {
        Address::new(0, 0, n).unwrap()
    }

    fn fabric() -> Fabric {
        Fabric::with_mismatch(MismatchConfig::default())
    }

    #[test]
    fn first_entry_goes_to_slot_zero() {
        let mut f = fabric();
        let e = f.connect(addr(0), SourceTag(5000), SynapseType::ExcSlow).unwrap();
        assert_eq!(e.slot, 0);
    }

    #[test]
    fn sixty_fifth_entry_rejected() {
        let mut f = fabric();
        for i in 0..64 {
            f.connect(addr(1), SourceTag(i), SynapseType::ExcSlow).unwrap();
        }
        assert!(matches!(
            f.connect(addr(1), SourceTag(99), SynapseType::ExcSlow),
            Err(FabricError::CapacityExceeded { .. })
        ));
        assert!(matches!(
            f.configure_connection(addr(2), 64, SourceTag(1), SynapseType::ExcSlow),
            Err(FabricError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn duplicate_slot_rejected() {
        let mut f = fabric();
        f.configure_connection(addr(0), 3, SourceTag(1), SynapseType::ExcSlow)
            .unwrap();
        assert!(matches!(
            f.configure_connection(addr(0), 3, SourceTag(2), SynapseType::ExcSlow),
            Err(FabricError::SlotOccupied { .. })
        ));
    }

    #[test]
    fn shunting_accepted_but_not_simulatable() {
        let mut f = fabric();
        f.configure_connection(addr(0), 0, SourceTag(1), SynapseType::InhShunting)
            .unwrap();
        assert!(matches!(
            f.check_simulatable(),
            Err(FabricError::UnsupportedSynapseType(SynapseType::InhShunting))
        ));
        let mut g = fabric();
        g.set_features(FeatureFlags { nmda_gating: true });
        assert!(matches!(g.check_simulatable(), Err(FabricError::UnsupportedBias(_))));
    }

    #[test]
    fn routing_examples() {
        let mut f = fabric();
        assert!(f.route_spike(SourceTag(7)).is_empty());
        f.configure_connection(addr(5), 0, SourceTag(7), SynapseType::ExcSlow)
            .unwrap();
        f.configure_connection(addr(2), 0, SourceTag(7), SynapseType::ExcSlow)
            .unwrap();
        f.configure_connection(addr(2), 9, SourceTag(7), SynapseType::InhSubtractive)
            .unwrap();
        f.configure_connection(addr(2), 4, SourceTag(8), SynapseType::ExcSlow)
            .unwrap();
        assert_eq!(
            f.route_spike(SourceTag(7)),
            vec![(addr(2), 0), (addr(2), 9), (addr(5), 0)]
        );
        f.disconnect(addr(2), 9).unwrap();
        assert_eq!(f.route_spike(SourceTag(7)), vec![(addr(2), 0), (addr(5), 0)]);
    }

    #[test]
    fn nominal_params_without_mismatch() {
        let set = CoreBiasSet::default();
        let cal = SynapseCalibration::default();
        let p = effective_dpi_params(&set, SynapseType::ExcSlow, 1.0, 1.0, &cal).unwrap();
        let i_tau = set.current(BiasName::NpdpieTauSP);
        assert_eq!(p.i_tau, i_tau);
        assert_eq!(p.tau, current_to_tau(i_tau, cal.c_syn, cal.u_t));
        assert_eq!(p.i_th, set.current(BiasName::NpdpieThrSP));
        assert_eq!(p.polarity, Polarity::Excitatory);

        let scaled = effective_dpi_params(&set, SynapseType::ExcSlow, 1.0, 1.2, &cal).unwrap();
        assert!((scaled.tau / p.tau - 1.2).abs() < 1e-12);
        assert!((scaled.w_syn / p.w_syn - 1.2).abs() < 1e-12);
        assert_eq!(scaled.i_th, p.i_th);
    }

    #[test]
    fn slots_on_one_neuron_differ() {
        let mut f = fabric();
        f.configure_connection(addr(0), 0, SourceTag(1), SynapseType::ExcSlow)
            .unwrap();
        f.configure_connection(addr(0), 1, SourceTag(1), SynapseType::ExcSlow)
            .unwrap();
        let a = f.slot_dpi_params(addr(0), 0).unwrap();
        let b = f.slot_dpi_params(addr(0), 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let build = || {
            let mut f = fabric();
            for n in 0..8 {
                for s in 0..8 {
                    f.configure_connection(addr(n), s, SourceTag(s as u32), SynapseType::ExcSlow)
                        .unwrap();
                }
            }
            f
        };
        let (a, b) = (build(), build());
        for n in 0..8 {
            assert_eq!(a.neuron_params(addr(n)), b.neuron_params(addr(n)));
            for s in 0..8 {
                assert_eq!(
                    a.slot_dpi_params(addr(n), s).unwrap(),
                    b.slot_dpi_params(addr(n), s).unwrap()
                );
            }
        }
    }
}
