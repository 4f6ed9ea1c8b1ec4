//! Two-dimensional resource arithmetic (vcpus, memory).

use alloc::string::String;
use core::fmt;
use core::iter::Sum;
use core::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A capacity or demand: whole vcpus and megabytes of memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceVector {
    pub vcpus: u64,
    pub memory_mb: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector { vcpus: 0, memory_mb: 0 };

    pub const fn new(vcpus: u64, memory_mb: u64) -> Self {
        Self { vcpus, memory_mb }
    }

    pub fn is_zero(&self) -> bool {
        self.vcpus == 0 && self.memory_mb == 0
    }

    /// True iff `self <= other` in every component.
    pub fn fits_in(&self, other: &ResourceVector) -> bool {
        self.vcpus <= other.vcpus && self.memory_mb <= other.memory_mb
    }

    pub fn checked_sub(&self, other: &ResourceVector) -> Result<ResourceVector> {
        match (
            self.vcpus.checked_sub(other.vcpus),
            self.memory_mb.checked_sub(other.memory_mb),
        ) {
            (Some(vcpus), Some(memory_mb)) => Ok(ResourceVector { vcpus, memory_mb }),
            _ => Err(Error::ResourceUnderflow { have: *self, take: *other }),
        }
    }

    /// Component-wise subtraction clamped at zero.
    pub fn saturating_sub(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            vcpus: self.vcpus.saturating_sub(other.vcpus),
            memory_mb: self.memory_mb.saturating_sub(other.memory_mb),
        }
    }

    pub fn memory_gb(&self) -> f64 {
        self.memory_mb as f64 / 1024.0
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        rv_add(self, rhs)
    }
}

impl Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, rv_add)
    }
}

impl<'a> Sum<&'a ResourceVector> for ResourceVector {
    fn sum<I: Iterator<Item = &'a ResourceVector>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} vcpus, {} MB)", self.vcpus, self.memory_mb)
    }
}

pub fn rv_add(a: ResourceVector, b: ResourceVector) -> ResourceVector {
    ResourceVector {
        vcpus: a.vcpus + b.vcpus,
        memory_mb: a.memory_mb + b.memory_mb,
    }
}

pub fn rv_fits(demand: &ResourceVector, free: &ResourceVector) -> bool {
    demand.fits_in(free)
}

/// A named instance size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flavor {
    pub name: String,
    pub size: ResourceVector,
}

impl Flavor {
    pub fn new(name: impl Into<String>, size: ResourceVector) -> Result<Self> {
        let name = name.into();
        if size.is_zero() {
            return Err(Error::InvalidFlavor(name));
        }
        Ok(Flavor { name, size })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const fn rv(v: u64, m: u64) -> ResourceVector {
        ResourceVector::new(v, m)
    }

    #[test]
    fn add_examples() {
        assert_eq!(rv_add(rv(4, 8192), rv(2, 4096)), rv(6, 12288));
        assert_eq!(rv_add(rv(0, 0), rv(5, 1024)), rv(5, 1024));
        assert_eq!(rv_add(rv(1, 1), rv(1, 1)), rv(2, 2));
    }

    #[test]
    fn fits_examples() {
        assert!(rv_fits(&rv(2, 2048), &rv(4, 4096)));
        assert!(rv_fits(&rv(4, 4096), &rv(4, 4096)));
        assert!(!rv_fits(&rv(5, 1024), &rv(4, 4096)));
    }

    #[test]
    fn checked_sub_rejects_underflow() {
        assert_eq!(rv(4, 10).checked_sub(&rv(1, 10)).unwrap(), rv(3, 0));
        assert!(rv(4, 10).checked_sub(&rv(5, 1)).is_err());
        assert!(rv(4, 10).checked_sub(&rv(1, 11)).is_err());
    }

    #[test]
    fn zero_flavor_rejected() {
        assert!(Flavor::new("empty", ResourceVector::ZERO).is_err());
        assert!(Flavor::new("mem-only", rv(0, 512)).is_ok());
    }

    proptest! {
        #[test]
        fn add_then_sub_roundtrips(a in 0u64..1 << 40, b in 0u64..1 << 40, c in 0u64..1 << 40, d in 0u64..1 << 40) {
            let x = rv(a, b);
            let y = rv(c, d);
            prop_assert_eq!((x + y).checked_sub(&y).unwrap(), x);
            prop_assert!(rv_fits(&x, &(x + y)));
            prop_assert_eq!(x + y, y + x);
        }
    }
}
