//! Per-core bias generator: coarse/fine codes and their mapping to currents.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::FabricError;

/// Smallest coarse-range current (A).
pub const I_FLOOR: f64 = 0.5e-12;
/// Ratio between successive coarse ranges.
pub const COARSE_RATIO: f64 = 8.0;
/// Extra division applied by the low current level.
pub const LOW_LEVEL_DIVISOR: f64 = 16.0;
/// Subthreshold slope factor used by the time-constant relation.
pub const KAPPA: f64 = 0.7;
/// Thermal voltage (V).
pub const U_T: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurrentLevel {
    H,
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasCode {
    pub coarse: u8,
    pub fine: u8,
    pub level: CurrentLevel,
}

impl BiasCode {
    pub const fn new(coarse: u8, fine: u8, level: CurrentLevel) -> Self {
        Self { coarse, fine, level }
    }

    pub const fn high(coarse: u8, fine: u8) -> Self {
        Self::new(coarse, fine, CurrentLevel::H)
    }

    pub fn check(&self) -> Result<(), FabricError> {
        if self.coarse > 7 {
            return Err(FabricError::InvalidBias(format!(
                "coarse value {} outside 0..=7",
                self.coarse
            )));
        }
        Ok(())
    }
}

/// Bias code to current: `I_FLOOR * 8^coarse * (fine + 1) / 256`, further
/// divided by 16 at the low current level.
pub fn bias_to_current(code: BiasCode) -> f64 {
    let level = match code.level {
        CurrentLevel::H => 1.0,
        CurrentLevel::L => 1.0 / LOW_LEVEL_DIVISOR,
    };
    I_FLOOR * COARSE_RATIO.powi(code.coarse as i32) * (code.fine as f64 + 1.0) / 256.0 * level
}

/// Log-domain time constant `C * U_T / (kappa * I)`.
pub fn current_to_tau(i_tau_bias: f64, c_syn: f64, u_t: f64) -> f64 {
    c_syn * u_t / (KAPPA * i_tau_bias)
}

macro_rules! bias_names {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// The 25 per-core bias parameters.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum BiasName {
            $($variant),*
        }

        impl BiasName {
            pub const ALL: [BiasName; 25] = [$(BiasName::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(BiasName::$variant => $name),*
                }
            }
        }

        impl FromStr for BiasName {
            type Err = FabricError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(BiasName::$variant),)*
                    other => Err(FabricError::InvalidBias(format!("unknown bias parameter {other}"))),
                }
            }
        }
    };
}

bias_names! {
    IfAhtauN => "IF_AHTAU_N",
    IfAhthrN => "IF_AHTHR_N",
    IfAhwP => "IF_AHW_P",
    IfBufP => "IF_BUF_P",
    IfCascN => "IF_CASC_N",
    IfDcP => "IF_DC_P",
    IfNmdaN => "IF_NMDA_N",
    IfRfrN => "IF_RFR_N",
    IfTau1N => "IF_TAU1_N",
    IfTau2N => "IF_TAU2_N",
    IfThrN => "IF_THR_N",
    NpdpieTauSP => "NPDPIE_TAU_S_P",
    NpdpieThrSP => "NPDPIE_THR_S_P",
    NpdpiiTauFP => "NPDPII_TAU_F_P",
    NpdpiiThrFP => "NPDPII_THR_F_P",
    PsWeightExcSN => "PS_WEIGHT_EXC_S_N",
    PsWeightInhFN => "PS_WEIGHT_INH_F_N",
    PulsePwlkP => "PULSE_PWLK_P",
    R2rP => "R2R_P",
    // Not used by the delay-element configuration.
    NpdpieTauFP => "NPDPIE_TAU_F_P",
    NpdpieThrFP => "NPDPIE_THR_F_P",
    PsWeightExcFN => "PS_WEIGHT_EXC_F_N",
    NpdpiiTauSP => "NPDPII_TAU_S_P",
    NpdpiiThrSP => "NPDPII_THR_S_P",
    PsWeightInhSN => "PS_WEIGHT_INH_S_N",
}

impl fmt::Display for BiasName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl BiasName {
    fn index(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).unwrap()
    }

    /// True for the six parameters that are carried but not part of the
    /// delay-element configuration.
    pub fn is_placeholder(self) -> bool {
        self.index() >= 19
    }
}

/// One value for every bias parameter of a core.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreBiasSet {
    codes: [BiasCode; 25],
}

impl CoreBiasSet {
    /// Bias values of the disynaptic delay-element configuration.
    pub fn delay_element_defaults() -> Self {
        use BiasName::*;
        let h = BiasCode::high;
        let l = |c, f| BiasCode::new(c, f, CurrentLevel::L);
        let mut set = Self {
            codes: [h(0, 0); 25],
        };
        let table = [
            (IfAhtauN, l(7, 35)),
            (IfAhthrN, h(7, 1)),
            (IfAhwP, h(7, 1)),
            (IfBufP, h(3, 80)),
            (IfCascN, h(7, 1)),
            (IfDcP, h(1, 30)),
            (IfNmdaN, h(1, 213)),
            (IfRfrN, h(4, 40)),
            (IfTau1N, l(5, 39)),
            (IfTau2N, h(0, 15)),
            (IfThrN, h(6, 135)),
            (NpdpieTauSP, h(5, 70)),
            (NpdpieThrSP, h(0, 210)),
            (NpdpiiTauFP, h(5, 100)),
            (NpdpiiThrFP, h(3, 60)),
            (PsWeightExcSN, h(0, 140)),
            (PsWeightInhFN, h(0, 150)),
            (PulsePwlkP, h(5, 40)),
            (R2rP, h(4, 85)),
            // Fast excitatory mirrors the slow one; shunting is never simulated.
            (NpdpieTauFP, h(5, 70)),
            (NpdpieThrFP, h(0, 210)),
            (PsWeightExcFN, h(0, 0)),
            (NpdpiiTauSP, h(5, 100)),
            (NpdpiiThrSP, h(3, 60)),
            (PsWeightInhSN, h(0, 0)),
        ];
        for (name, code) in table {
            set.set(name, code);
        }
        set
    }

    pub fn get(&self, name: BiasName) -> BiasCode {
        self.codes[name.index()]
    }

    pub fn set(&mut self, name: BiasName, code: BiasCode) {
        self.codes[name.index()] = code;
    }

    pub fn current(&self, name: BiasName) -> f64 {
        bias_to_current(self.get(name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (BiasName, BiasCode)> + '_ {
        BiasName::ALL.iter().map(move |&n| (n, self.get(n)))
    }

    pub fn check(&self) -> Result<(), FabricError> {
        for (name, code) in self.iter() {
            code.check()
                .map_err(|e| FabricError::InvalidBias(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Overlay a partial map of codes on top of this set.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, BiasCode>) -> Result<Self, FabricError> {
        let mut out = self.clone();
        for (name, code) in overrides {
            out.set(name.parse()?, *code);
        }
        Ok(out)
    }
}

impl Default for CoreBiasSet {
    fn default() -> Self {
        Self::delay_element_defaults()
    }
}

impl Serialize for CoreBiasSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, BiasCode> = self.iter().map(|(n, c)| (n.as_str(), c)).collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CoreBiasSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, BiasCode>::deserialize(deserializer)?;
        let mut set = CoreBiasSet::default();
        let mut seen = 0;
        for (name, code) in map {
            let name: BiasName = name.parse().map_err(serde::de::Error::custom)?;
            set.set(name, code);
            seen += 1;
        }
        if seen != 25 {
            return Err(serde::de::Error::custom(format!(
                "expected all 25 bias parameters, got {seen}"
            )));
        }
        Ok(set)
    }
}
