//! Closed-form data presets for sources and fluxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function of `(x, y)` selected by name rather than parsed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScalarFn {
    Constant { value: f64 },
    /// `a0 + ax * x + ay * y`.
    Affine { a0: f64, ax: f64, ay: f64 },
    /// `amplitude * exp(-((x - x0)^2 + (y - y0)^2) / width^2)`.
    Gaussian { amplitude: f64, x0: f64, y0: f64, width: f64 },
}

impl Default for ScalarFn {
    fn default() -> Self {
        ScalarFn::Constant { value: 0.0 }
    }
}

impl ScalarFn {
    pub fn constant(value: f64) -> Self {
        ScalarFn::Constant { value }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            ScalarFn::Constant { value } => finite("value", value),
            ScalarFn::Affine { a0, ax, ay } => {
                finite("a0", a0)?;
                finite("ax", ax)?;
                finite("ay", ay)
            }
            ScalarFn::Gaussian { amplitude, x0, y0, width } => {
                finite("amplitude", amplitude)?;
                finite("x0", x0)?;
                finite("y0", y0)?;
                if !(width > 0.0 && width.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "width must be positive, got {width}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            ScalarFn::Constant { value } => value,
            ScalarFn::Affine { a0, ax, ay } => a0 + ax * x + ay * y,
            ScalarFn::Gaussian { amplitude, x0, y0, width } => {
                let r2 = (x - x0).powi(2) + (y - y0).powi(2);
                amplitude * (-r2 / (width * width)).exp()
            }
        }
    }

    /// `Some(c)` when the function is identically `c`.
    pub fn as_constant(&self) -> Option<f64> {
        match *self {
            ScalarFn::Constant { value } => Some(value),
            ScalarFn::Affine { a0, ax: 0.0, ay: 0.0 } => Some(a0),
            _ => None,
        }
    }
}
