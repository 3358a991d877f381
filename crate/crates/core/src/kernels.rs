//! Compactly supported kernels on `[0, ∞)` with `K(0) = 1` and `K(u) = 0`
//! for `u ≥ 1`. The same type serves the location, adaptation and memory
//! roles.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    Uniform,
    Triangle,
    Epanechnikov,
    /// Flat at 1 up to `knee`, then linear down to 0 at `u = 1`.
    Plateau { knee: f64 },
}

impl Kernel {
    pub fn plateau(knee: f64) -> Result<Self> {
        if knee > 0.0 && knee < 1.0 {
            Ok(Kernel::Plateau { knee })
        } else {
            Err(Error::InvalidKernel(format!("plateau:{knee}")))
        }
    }

    /// Checked evaluation.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if u < 0.0 || u.is_nan() {
            return Err(Error::NegativeKernelArgument(u));
        }
        Ok(self.weight(u))
    }

    /// Evaluation for `u ≥ 0`. Anything not strictly inside the support,
    /// including `+∞`, maps to 0.
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        if !(u < 1.0) {
            return 0.0;
        }
        match *self {
            Kernel::Uniform => 1.0,
            Kernel::Triangle => 1.0 - u,
            Kernel::Epanechnikov => 1.0 - u * u,
            Kernel::Plateau { knee } => {
                if u <= knee {
                    1.0
                } else {
                    (1.0 - u) / (1.0 - knee)
                }
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Uniform => f.write_str("uniform"),
            Kernel::Triangle => f.write_str("triangle"),
            Kernel::Epanechnikov => f.write_str("epanechnikov"),
            Kernel::Plateau { knee } => write!(f, "plateau:{knee}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "uniform" => Ok(Kernel::Uniform),
            "triangle" => Ok(Kernel::Triangle),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "plateau" => Kernel::plateau(0.5),
            other => match other.strip_prefix("plateau:") {
                Some(knee) => {
                    let knee = knee.parse().map_err(|_| Error::InvalidKernel(s.into()))?;
                    Kernel::plateau(knee)
                }
                None => Err(Error::InvalidKernel(s.into())),
            },
        }
    }
}
