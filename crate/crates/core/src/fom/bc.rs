//! Named boundary-condition library.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a boundary condition is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct NodeContext<'a> {
    /// Current (deformed) spatial position.
    pub x: &'a [f64],
    pub t: f64,
    /// Velocity of the prescribed domain motion at this node.
    pub mesh_velocity: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryCondition {
    NoSlip,
    /// `v = a ξ (ξ - W) sqrt(min(t / T, 1))` with `ξ = x - x_start`; `u = 0`.
    ValveInflow {
        amplitude_per_m_s: f64,
        x_start_m: f64,
        width_m: f64,
        ramp_time_s: f64,
        #[serde(default)]
        parametrized: bool,
    },
    /// `u = U (1 - (y - y_c)² / r²) sqrt(min(t / T, 1))`; `v = 0`.
    ArteryInflow {
        amplitude_m_s: f64,
        radius_m: f64,
        #[serde(default)]
        center_y_m: f64,
        ramp_time_s: f64,
        #[serde(default)]
        parametrized: bool,
    },
    /// Fixes one velocity component to zero; the other is left free.
    ParallelOutflow {
        component: usize,
    },
    /// Velocity of the prescribed domain motion.
    WallMotion,
    /// `u_i = value_i + Σ_j gradient_ij x_j + time_rate_i t`.
    Affine {
        value: Vec<f64>,
        #[serde(default)]
        gradient: Vec<Vec<f64>>,
        #[serde(default)]
        time_rate: Vec<f64>,
    },
    /// `u_c = 4 U (y - y_0)(y_1 - y) / (y_1 - y_0)²` on component `component`.
    Parabolic {
        amplitude_m_s: f64,
        y_range_m: [f64; 2],
        #[serde(default)]
        component: usize,
    },
    /// Constant traction `h` on a Neumann boundary.
    Traction {
        value: Vec<f64>,
    },
}

impl BoundaryCondition {
    pub fn is_neumann(&self) -> bool {
        matches!(self, BoundaryCondition::Traction { .. })
    }

    /// Whether the condition is scaled by the inflow parameter.
    pub fn is_parametrized(&self) -> bool {
        matches!(
            self,
            BoundaryCondition::ValveInflow { parametrized: true, .. } | BoundaryCondition::ArteryInflow { parametrized: true, .. }
        )
    }

    /// Base amplitude of an inflow condition, in the units of its parameter.
    pub fn inflow_amplitude(&self) -> Option<f64> {
        match self {
            BoundaryCondition::ValveInflow { amplitude_per_m_s, .. } => Some(*amplitude_per_m_s),
            BoundaryCondition::ArteryInflow { amplitude_m_s, .. } => Some(*amplitude_m_s),
            _ => None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{m} in {self:?}")));
        match self {
            BoundaryCondition::ValveInflow { width_m, ramp_time_s, .. } if d != 2 || *width_m <= 0.0 || *ramp_time_s <= 0.0 => {
                bad("valve inflow needs d = 2, positive width and ramp time")
            }
            BoundaryCondition::ArteryInflow { radius_m, ramp_time_s, .. } if d != 2 || *radius_m <= 0.0 || *ramp_time_s <= 0.0 => {
                bad("artery inflow needs d = 2, positive radius and ramp time")
            }
            BoundaryCondition::ParallelOutflow { component } if *component >= d => bad("component out of range"),
            BoundaryCondition::Affine { value, gradient, time_rate } => {
                if value.len() != d
                    || !(gradient.is_empty() || (gradient.len() == d && gradient.iter().all(|r| r.len() == d)))
                    || !(time_rate.is_empty() || time_rate.len() == d)
                {
                    return bad("affine data must match the spatial dimension");
                }
                Ok(())
            }
            BoundaryCondition::Parabolic { component, y_range_m, .. } if *component >= d || d != 2 || y_range_m[1] <= y_range_m[0] => {
                bad("parabolic profile needs d = 2 and an increasing range")
            }
            BoundaryCondition::Traction { value } if value.len() != d => bad("traction must have d components"),
            _ => Ok(()),
        }
    }

    /// Prescribed value of each velocity component; `None` leaves it free.
    pub fn values(&self, ctx: &NodeContext<'_>, d: usize) -> Vec<Option<f64>> {
        let ramp = |t: f64, t_r: f64| (t / t_r).clamp(0.0, 1.0).sqrt();
        match self {
            BoundaryCondition::NoSlip => vec![Some(0.0); d],
            BoundaryCondition::ValveInflow { amplitude_per_m_s, x_start_m, width_m, ramp_time_s, .. } => {
                let xi = ctx.x[0] - x_start_m;
                vec![Some(0.0), Some(amplitude_per_m_s * xi * (xi - width_m) * ramp(ctx.t, *ramp_time_s))]
            }
            BoundaryCondition::ArteryInflow { amplitude_m_s, radius_m, center_y_m, ramp_time_s, .. } => {
                let s = (ctx.x[1] - center_y_m) / radius_m;
                vec![Some(amplitude_m_s * (1.0 - s * s) * ramp(ctx.t, *ramp_time_s)), Some(0.0)]
            }
            BoundaryCondition::ParallelOutflow { component } => (0..d).map(|c| (c == *component).then_some(0.0)).collect(),
            BoundaryCondition::WallMotion => ctx.mesh_velocity.iter().map(|&v| Some(v)).collect(),
            BoundaryCondition::Affine { value, gradient, time_rate } => (0..d)
                .map(|i| {
                    let mut u = value[i];
                    if let Some(row) = gradient.get(i) {
                        u += row.iter().zip(ctx.x).map(|(g, x)| g * x).sum::<f64>();
                    }
                    u += time_rate.get(i).copied().unwrap_or(0.0) * ctx.t;
                    Some(u)
                })
                .collect(),
            BoundaryCondition::Parabolic { amplitude_m_s, y_range_m, component } => {
                let [y0, y1] = *y_range_m;
                let u = 4.0 * amplitude_m_s * (ctx.x[1] - y0) * (y1 - ctx.x[1]) / ((y1 - y0) * (y1 - y0));
                (0..d).map(|c| Some(if c == *component { u } else { 0.0 })).collect()
            }
            BoundaryCondition::Traction { .. } => vec![None; d],
        }
    }

    /// Number of velocity components the condition prescribes.
    pub fn constrained_components(&self, d: usize) -> usize {
        match self {
            BoundaryCondition::ParallelOutflow { .. } => 1,
            BoundaryCondition::Traction { .. } => 0,
            _ => d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: &[f64], t: f64) -> NodeContext<'_> {
        NodeContext { x, t, mesh_velocity: &[0.0, 0.0] }
    }

    #[test]
    fn valve_inflow_midpoint() {
        let bc = BoundaryCondition::ValveInflow {
            amplitude_per_m_s: 640.0,
            x_start_m: 0.0,
            width_m: 0.025,
            ramp_time_s: 1.8,
            parametrized: false,
        };
        let v = bc.values(&at(&[0.0125, 0.125], 1.8), 2);
        assert_eq!(v[0], Some(0.0));
        assert!((v[1].unwrap() + 0.1).abs() < 1e-15);
        assert_eq!(bc.values(&at(&[0.0125, 0.125], 0.0), 2)[1], Some(0.0));
    }

    #[test]
    fn artery_inflow_centerline() {
        let bc =
            BoundaryCondition::ArteryInflow { amplitude_m_s: 0.1, radius_m: 5e-3, center_y_m: 0.0, ramp_time_s: 0.2, parametrized: true };
        for t in [0.2, 0.5, 1.0] {
            assert!((bc.values(&at(&[-0.03, 0.0], t), 2)[0].unwrap() - 0.1).abs() < 1e-15);
        }
        assert!((bc.values(&at(&[-0.03, 0.0], 0.05), 2)[0].unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(bc.values(&at(&[-0.03, 5e-3], 0.5), 2)[0], Some(0.0));
    }

    #[test]
    fn parallel_outflow_leaves_one_component_free() {
        let bc = BoundaryCondition::ParallelOutflow { component: 0 };
        assert_eq!(bc.values(&at(&[0.0, 0.0], 0.3), 2), vec![Some(0.0), None]);
        assert_eq!(bc.constrained_components(2), 1);
    }

    #[test]
    fn affine_couette() {
        let bc = BoundaryCondition::Affine { value: vec![0.0, 0.0], gradient: vec![vec![0.0, 1.0], vec![0.0, 0.0]], time_rate: vec![] };
        bc.validate(2).unwrap();
        assert_eq!(bc.values(&at(&[0.3, 0.7], 0.2), 2), vec![Some(0.7), Some(0.0)]);
    }
}
