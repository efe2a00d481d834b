//! Prescribed motions of the spatial domain.
//!
//! Each map takes a reference spatial position and a time and returns the
//! displaced position. Interior nodes are moved by explicit blending between
//! moving and fixed boundaries, so a map is fully described by a handful of
//! scalars and can be re-evaluated anywhere (for example to obtain wall
//! velocities for no-slip conditions on moving boundaries).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeformationMap {
    Identity,
    ValvePlug(ValvePlugMotion),
    ChannelNarrowing(ChannelNarrowing),
    Analytic(AxisStretch),
}

/// Rigid plug translating along x, with piecewise-constant speed:
/// at rest before `schedule_s[0]`, `speed_m_s` until `schedule_s[1]`, at rest
/// until `schedule_s[2]`, `-speed_m_s` until `schedule_s[3]`, at rest after.
///
/// Nodes are displaced by `D(t) φ(x) g(y)` along x, where `φ` and `g` are
/// one on the plug's extent and fall linearly to zero at the casing walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValvePlugMotion {
    pub speed_m_s: f64,
    pub schedule_s: [f64; 4],
    pub plug_min_m: [f64; 2],
    pub plug_max_m: [f64; 2],
    pub casing_min_m: [f64; 2],
    pub casing_max_m: [f64; 2],
}

/// Walls of a planar channel pinched toward the centerline following
/// `y(t) = ±[0.2 + 0.2 (cos(π t) + 1)] r_0` inside the clamp region, blended
/// linearly to the undeformed radius over `transition_m` on both sides.
/// Interior nodes scale with their distance from the centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNarrowing {
    pub radius_m: f64,
    #[serde(default)]
    pub center_y_m: f64,
    pub clamp_center_x_m: f64,
    pub clamp_half_length_m: f64,
    pub transition_m: f64,
}

/// `x[axis] ← x[axis] (1 + rate t)`; handy for tests and simple dilations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisStretch {
    pub axis: usize,
    pub rate_per_s: f64,
}

fn blend(v: f64, lo_wall: f64, lo: f64, hi: f64, hi_wall: f64) -> f64 {
    if v <= lo_wall || v >= hi_wall {
        0.0
    } else if v < lo {
        (v - lo_wall) / (lo - lo_wall)
    } else if v <= hi {
        1.0
    } else {
        (hi_wall - v) / (hi_wall - hi)
    }
}

impl ValvePlugMotion {
    /// Plug displacement along x at time t.
    pub fn displacement(&self, t: f64) -> f64 {
        let [t0, t1, t2, t3] = self.schedule_s;
        let s = self.speed_m_s;
        if t < t0 {
            0.0
        } else if t < t1 {
            s * (t - t0)
        } else if t < t2 {
            s * (t1 - t0)
        } else if t < t3 {
            s * (t1 - t0) - s * (t - t2)
        } else {
            s * (t1 - t0) - s * (t3 - t2)
        }
    }

    /// Plug speed along x; at a breakpoint the mean of both one-sided limits.
    pub fn speed(&self, t: f64) -> f64 {
        let one_sided = |t: f64, right: bool| {
            let [t0, t1, t2, t3] = self.schedule_s;
            let inside = |a: f64, b: f64| if right { t >= a && t < b } else { t > a && t <= b };
            if inside(t0, t1) {
                self.speed_m_s
            } else if inside(t2, t3) {
                -self.speed_m_s
            } else {
                0.0
            }
        };
        0.5 * (one_sided(t, true) + one_sided(t, false))
    }

    fn weight(&self, x: &[f64]) -> f64 {
        blend(x[0], self.casing_min_m[0], self.plug_min_m[0], self.plug_max_m[0], self.casing_max_m[0])
            * blend(x[1], self.casing_min_m[1], self.plug_min_m[1], self.plug_max_m[1], self.casing_max_m[1])
    }
}

impl ChannelNarrowing {
    /// Wall distance from the centerline inside the clamp region.
    pub fn wall_position(&self, t: f64) -> f64 {
        (0.2 + 0.2 * ((PI * t).cos() + 1.0)) * self.radius_m
    }

    fn wall_speed(&self, t: f64) -> f64 {
        -0.2 * PI * (PI * t).sin() * self.radius_m
    }

    fn clamp_weight(&self, x: f64) -> f64 {
        let c = self.clamp_center_x_m;
        let l = self.clamp_half_length_m;
        blend(x, c - l - self.transition_m, c - l, c + l, c + l + self.transition_m)
    }
}

impl DeformationMap {
    /// Displaced position of the reference point `x` at time `t`.
    pub fn apply(&self, x: &[f64], t: f64) -> Vec<f64> {
        match self {
            DeformationMap::Identity => x.to_vec(),
            DeformationMap::ValvePlug(m) => {
                let mut out = x.to_vec();
                out[0] += m.displacement(t) * m.weight(x);
                out
            }
            DeformationMap::ChannelNarrowing(m) => {
                let mut out = x.to_vec();
                let w = m.clamp_weight(x[0]);
                let wall = m.radius_m + w * (m.wall_position(t) - m.radius_m);
                out[1] = m.center_y_m + (x[1] - m.center_y_m) * wall / m.radius_m;
                out
            }
            DeformationMap::Analytic(m) => {
                let mut out = x.to_vec();
                out[m.axis] *= 1.0 + m.rate_per_s * t;
                out
            }
        }
    }

    /// Velocity of the material point that sits at reference position `x`.
    pub fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut v = vec![0.0; x.len()];
        match self {
            DeformationMap::Identity => {}
            DeformationMap::ValvePlug(m) => v[0] = m.speed(t) * m.weight(x),
            DeformationMap::ChannelNarrowing(m) => {
                let w = m.clamp_weight(x[0]);
                v[1] = (x[1] - m.center_y_m) / m.radius_m * w * m.wall_speed(t);
            }
            DeformationMap::Analytic(m) => v[m.axis] = x[m.axis] * m.rate_per_s,
        }
        v
    }

    /// Checks that the map can act on points of the given spatial dimension.
    pub fn check_dimension(&self, spatial_dim: usize) -> Result<()> {
        let needed = match self {
            DeformationMap::Identity => 1,
            DeformationMap::ValvePlug(_) | DeformationMap::ChannelNarrowing(_) => 2,
            DeformationMap::Analytic(m) => m.axis + 1,
        };
        if spatial_dim < needed {
            return Err(Error::InvalidArgument(format!("deformation needs spatial dimension >= {needed}, mesh has {spatial_dim}")));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, DeformationMap::Identity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plug() -> ValvePlugMotion {
        ValvePlugMotion {
            speed_m_s: -0.0625,
            schedule_s: [0.3, 0.7, 1.1, 1.5],
            plug_min_m: [0.05, 0.0375],
            plug_max_m: [0.0995, 0.0875],
            casing_min_m: [0.0, 0.0],
            casing_max_m: [0.1, 0.125],
        }
    }

    #[test]
    fn plug_schedule() {
        let m = plug();
        assert_eq!(m.displacement(0.0), 0.0);
        assert_eq!(m.displacement(0.29), 0.0);
        assert!((m.displacement(0.7) + 0.025).abs() < 1e-15);
        assert!((m.displacement(0.9) + 0.025).abs() < 1e-15);
        assert!((m.displacement(1.3) + 0.0125).abs() < 1e-15);
        assert!(m.displacement(1.5).abs() < 1e-15);
        assert!(m.displacement(1.8).abs() < 1e-15);
        assert_eq!(m.speed(0.5), -0.0625);
        assert_eq!(m.speed(1.2), 0.0625);
        assert_eq!(m.speed(0.3), -0.03125);
        assert_eq!(m.speed(1.6), 0.0);
    }

    #[test]
    fn plug_face_moves_rigidly() {
        let map = DeformationMap::ValvePlug(plug());
        let x = map.apply(&[0.0995, 0.06], 0.7);
        assert!((x[0] - (0.0995 - 0.025)).abs() < 1e-15);
        assert_eq!(x[1], 0.06);
        // casing walls are fixed
        assert_eq!(map.apply(&[0.1, 0.06], 0.7)[0], 0.1);
        assert_eq!(map.apply(&[0.07, 0.125], 0.7)[0], 0.07);
        assert_eq!(map.velocity(&[0.07, 0.06], 0.5), vec![-0.0625, 0.0]);
    }

    #[test]
    fn narrowing_law() {
        let r0 = 5e-3;
        let map = DeformationMap::ChannelNarrowing(ChannelNarrowing {
            radius_m: r0,
            center_y_m: 0.0,
            clamp_center_x_m: 0.0,
            clamp_half_length_m: 0.01,
            transition_m: 0.005,
        });
        let x = map.apply(&[0.0, r0], 1.0);
        assert!(x[0] == 0.0);
        assert!((x[1] - 0.2 * r0).abs() < 1e-15);
        let x = map.apply(&[0.0, -r0], 1.0);
        assert!((x[1] + 0.2 * r0).abs() < 1e-15);
        // outside the clamp and transition the wall stays put
        assert_eq!(map.apply(&[0.03, r0], 0.5), vec![0.03, r0]);
        // wall speed matches ∓π sin(πt)·1e-3 m/s
        let v = map.velocity(&[0.0, r0], 0.5);
        assert!((v[1] + PI * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn identity_is_exact() {
        let m = DeformationMap::Identity;
        let x = [0.123456789, -1e-300];
        assert_eq!(m.apply(&x, 3.0), x.to_vec());
    }
}
