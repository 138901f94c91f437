use serde::{Deserialize, Serialize};
use std::fmt;

use super::FabricError;

pub const CHIPS: u8 = 4;
pub const CORES_PER_CHIP: u8 = 4;
pub const NEURONS_PER_CORE: u16 = 256;
pub const CAM_SLOTS: u8 = 64;

/// A core on one of the chips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoreId {
    pub chip: u8,
    pub core: u8,
}

impl CoreId {
    pub fn new(chip: u8, core: u8) -> Result<Self, FabricError> {
        if chip >= CHIPS || core >= CORES_PER_CHIP {
            return Err(FabricError::InvalidAddress(format!("chip {chip}, core {core}")));
        }
        Ok(Self { chip, core })
    }

    pub fn neuron(self, neuron: u16) -> Result<Address, FabricError> {
        Address::new(self.chip, self.core, neuron)
    }

    /// All neurons of this core in index order.
    pub fn neurons(self) -> impl Iterator<Item = Address> {
        (0..NEURONS_PER_CORE).map(move |neuron| Address {
            chip: self.chip,
            core: self.core,
            neuron,
        })
    }
}

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.chip, self.core)
    }
}

/// Physical neuron address. Ordering is (chip, core, neuron).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Address {
    pub chip: u8,
    pub core: u8,
    pub neuron: u16,
}

impl Address {
    pub fn new(chip: u8, core: u8, neuron: u16) -> Result<Self, FabricError> {
        let a = Self { chip, core, neuron };
        a.check()?;
        Ok(a)
    }

    pub fn check(&self) -> Result<(), FabricError> {
        if self.chip >= CHIPS || self.core >= CORES_PER_CHIP || self.neuron >= NEURONS_PER_CORE {
            return Err(FabricError::InvalidAddress(self.to_string()));
        }
        Ok(())
    }

    pub fn core_id(&self) -> CoreId {
        CoreId {
            chip: self.chip,
            core: self.core,
        }
    }

    /// Flat index over the whole system, 0..4096.
    pub fn global_index(&self) -> u32 {
        (self.chip as u32 * CORES_PER_CHIP as u32 + self.core as u32) * NEURONS_PER_CORE as u32
            + self.neuron as u32
    }

    /// The source tag under which this neuron's own spikes are routed.
    pub fn tag(&self) -> SourceTag {
        SourceTag(self.global_index())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.chip, self.core, self.neuron)
    }
}

/// Presynaptic source identifier matched by the CAMs. Physical neurons use
/// their global index; stimulus channels are virtual tags in the same space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceTag(pub u32);

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_enforced() {
        assert!(Address::new(3, 3, 255).is_ok());
        assert!(Address::new(4, 0, 0).is_err());
        assert!(Address::new(0, 4, 0).is_err());
        assert!(Address::new(0, 0, 256).is_err());
    }

    #[test]
    fn global_index_is_dense() {
        let last = Address::new(3, 3, 255).unwrap();
        assert_eq!(last.global_index(), 4095);
        assert_eq!(CoreId::new(1, 2).unwrap().neurons().count(), 256);
    }
}
