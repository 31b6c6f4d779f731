//! Scalar abstraction: every score, threshold, and model parameter in this
//! crate is generic over a floating-point type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar: f32 or f64.
///
/// Random draws and config files always flow through `f64` and are narrowed
/// once at the boundary, so a run's arithmetic stays entirely in `T`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Narrow an `f64` into this scalar type, rounding if needed.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any float scalar")
    }

    /// Widen to `f64` for reporting and fits.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
