use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

/// Closed-form position trajectory on `t ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Motion {
    Static,
    /// `p(t) = p₀ + u t`
    Linear { velocity: [f64; 3] },
    /// `p(t) = p₀ + A sin(ωt + φ)`
    Sinusoidal {
        amplitude: [f64; 3],
        omega: f64,
        phase: f64,
    },
    /// Rotation of `p₀` about the line through `center` along `axis` by angle `ωt`.
    Circular {
        center: [f64; 3],
        axis: [f64; 3],
        omega: f64,
    },
}

impl Motion {
    pub fn is_static(&self) -> bool {
        matches!(self, Motion::Static)
    }

    /// Position at `t` for anchor `p₀`.
    pub fn position(&self, anchor: &Vector3<f64>, t: f64) -> Vector3<f64> {
        match *self {
            Motion::Static => *anchor,
            Motion::Linear { velocity } => anchor + Vector3::from(velocity) * t,
            Motion::Sinusoidal { amplitude, omega, phase } => {
                anchor + Vector3::from(amplitude) * (omega * t + phase).sin()
            }
            Motion::Circular { center, axis, omega } => {
                let c = Vector3::from(center);
                let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), omega * t);
                c + r * (anchor - c)
            }
        }
    }
}
