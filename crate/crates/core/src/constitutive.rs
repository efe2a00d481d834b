//! Carreau-Yasuda viscosity, shear rate and parameter semantics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarreauYasudaParams {
    pub eta0_pa_s: f64,
    pub eta_inf_pa_s: f64,
    pub lambda_s: f64,
    pub a: f64,
    pub n: f64,
    pub rho_kg_m3: f64,
}

impl CarreauYasudaParams {
    /// Polycarbonate melt.
    pub fn pc_melt() -> Self {
        CarreauYasudaParams { eta0_pa_s: 270.0, eta_inf_pa_s: 0.0, lambda_s: 1.2e-3, a: 1.0, n: 0.775, rho_kg_m3: 1200.0 }
    }

    pub fn blood() -> Self {
        CarreauYasudaParams { eta0_pa_s: 0.056, eta_inf_pa_s: 0.00345, lambda_s: 1.902, a: 1.25, n: 0.22, rho_kg_m3: 1058.0 }
    }

    /// Same fluid with `n = 1`, i.e. constant viscosity `η_0`.
    pub fn newtonian(eta_pa_s: f64, rho_kg_m3: f64) -> Self {
        CarreauYasudaParams { eta0_pa_s: eta_pa_s, eta_inf_pa_s: 0.0, lambda_s: 0.0, a: 1.0, n: 1.0, rho_kg_m3 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.eta0_pa_s, self.eta_inf_pa_s, self.lambda_s, self.a, self.n, self.rho_kg_m3].iter().all(|v| v.is_finite());
        if !finite
            || self.eta0_pa_s < self.eta_inf_pa_s
            || self.eta_inf_pa_s < 0.0
            || self.lambda_s < 0.0
            || self.a <= 0.0
            || self.rho_kg_m3 <= 0.0
        {
            return Err(Error::Parameter(format!("invalid Carreau-Yasuda parameters {self:?}")));
        }
        Ok(())
    }
}

/// `sqrt(2 ε:ε)` for a row-major `d × d` gradient `∂u_i/∂x_j`.
pub fn shear_rate(grad_u: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let e = 0.5 * (grad_u[i * d + j] + grad_u[j * d + i]);
            s += e * e;
        }
    }
    (2.0 * s).sqrt()
}

pub fn viscosity(gamma_dot: f64, p: &CarreauYasudaParams) -> f64 {
    let lg = p.lambda_s * gamma_dot;
    p.eta_inf_pa_s + (p.eta0_pa_s - p.eta_inf_pa_s) * (1.0 + lg.powf(p.a)).powf((p.n - 1.0) / p.a)
}

/// What a parameter component changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterRole {
    /// Characteristic time λ of the viscosity model.
    Lambda,
    /// Power-law index n.
    PowerIndex,
    /// Amplitude of the parametrized inflow, in m/s.
    InflowAmplitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterComponent {
    pub name: String,
    pub role: ParameterRole,
    pub min: f64,
    pub max: f64,
}

/// Ordered parameter components with their admissible box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub components: Vec<ParameterComponent>,
}

/// A sample `μ`, ordered like its [`ParameterSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Constant body force `f` (m/s²); enters the forms as `ρ f`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BodyForce(pub Vec<f64>);

impl BodyForce {
    pub fn component(&self, c: usize) -> f64 {
        self.0.get(c).copied().unwrap_or(0.0)
    }
}

/// Material and boundary data after applying `μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effective {
    pub material: CarreauYasudaParams,
    /// Multiplier on the parametrized inflow relative to its base amplitude.
    pub inflow_scale: f64,
}

impl ParameterSpace {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn center(&self) -> ParameterVector {
        ParameterVector(self.components.iter().map(|c| 0.5 * (c.min + c.max)).collect())
    }

    pub fn lower(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.min).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.max).collect()
    }

    /// Box `[(1-r) c, (1+r) c]` around each center value.
    pub fn relative_box(center: &[(&str, ParameterRole, f64)], r: f64) -> Self {
        ParameterSpace {
            components: center
                .iter()
                .map(|&(name, role, c)| ParameterComponent {
                    name: name.to_owned(),
                    role,
                    min: (c * (1.0 - r)).min(c * (1.0 + r)),
                    max: (c * (1.0 - r)).max(c * (1.0 + r)),
                })
                .collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.components.iter().position(|c| c.name == name).ok_or_else(|| Error::Parameter(format!("unknown parameter component `{name}`")))
    }

    pub fn check(&self, mu: &ParameterVector) -> Result<()> {
        if mu.0.len() != self.dim() {
            return Err(Error::Parameter(format!("expected {} parameter components, got {}", self.dim(), mu.0.len())));
        }
        for (c, &v) in self.components.iter().zip(&mu.0) {
            let slack = 1e-12 * c.max.abs().max(c.min.abs());
            if !v.is_finite() || v < c.min - slack || v > c.max + slack {
                return Err(Error::Parameter(format!("{} = {v} outside [{}, {}]", c.name, c.min, c.max)));
            }
        }
        Ok(())
    }

    /// Overrides λ and n, or scales the inflow, according to each component's role.
    pub fn apply(&self, base: &CarreauYasudaParams, base_inflow_m_s: f64, mu: &ParameterVector) -> Result<Effective> {
        self.check(mu)?;
        let mut eff = Effective { material: *base, inflow_scale: 1.0 };
        for (c, &v) in self.components.iter().zip(&mu.0) {
            match c.role {
                ParameterRole::Lambda => eff.material.lambda_s = v,
                ParameterRole::PowerIndex => eff.material.n = v,
                ParameterRole::InflowAmplitude => {
                    if base_inflow_m_s == 0.0 {
                        return Err(Error::Parameter("inflow amplitude parameter on a case without inflow".into()));
                    }
                    eff.inflow_scale = v / base_inflow_m_s;
                }
            }
        }
        eff.material.validate()?;
        Ok(eff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valve_space() -> ParameterSpace {
        ParameterSpace::relative_box(&[("lambda", ParameterRole::Lambda, 1.2e-3), ("n", ParameterRole::PowerIndex, 0.775)], 0.05)
    }

    #[test]
    fn shear_rate_by_hand() {
        assert_eq!(shear_rate(&[0.0; 4], 2), 0.0);
        assert!((shear_rate(&[0.0, 1.0, 0.0, 0.0], 2) - 1.0).abs() < 1e-15);
        assert!((shear_rate(&[1.0, 0.0, 0.0, -1.0], 2) - 2.0).abs() < 1e-15);
        assert!((shear_rate(&[3.0], 1) - 3.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn viscosity_limits() {
        let pc = CarreauYasudaParams::pc_melt();
        assert_eq!(viscosity(0.0, &pc), 270.0);
        let newt = CarreauYasudaParams { n: 1.0, ..pc };
        for g in [0.0, 1.0, 1e3, 1e8] {
            assert_eq!(viscosity(g, &newt), 270.0);
        }
    }

    #[test]
    fn blood_at_100_per_second() {
        // 0.00345 + 0.05255 (1 + 190.2^1.25)^(-0.624), evaluated in extended precision
        let eta = viscosity(100.0, &CarreauYasudaParams::blood());
        let expected = 0.004325800368739063;
        assert!(((eta - expected) / expected).abs() < 1e-12, "{eta}");
    }

    #[test]
    fn valve_parameter_application() {
        let space = valve_space();
        let base = CarreauYasudaParams::pc_melt();
        let eff = space.apply(&base, 0.0, &space.center()).unwrap();
        assert!((eff.material.lambda_s - base.lambda_s).abs() < 1e-18);
        assert!((eff.material.n - base.n).abs() < 1e-15);
        let corner = ParameterVector(vec![1.05 * 1.2e-3, 0.95 * 0.775]);
        let eff = space.apply(&base, 0.0, &corner).unwrap();
        assert!((eff.material.lambda_s - 1.26e-3).abs() < 1e-18);
        assert!((eff.material.n - 0.73625).abs() < 1e-15);
        assert_eq!(eff.material.eta0_pa_s, 270.0);
        assert!(space.apply(&base, 0.0, &ParameterVector(vec![2e-3, 0.775])).is_err());
        assert!(space.apply(&base, 0.0, &ParameterVector(vec![1.2e-3])).is_err());
    }

    #[test]
    fn artery_inflow_scaling() {
        let space = ParameterSpace::relative_box(&[("u_in", ParameterRole::InflowAmplitude, 0.1)], 0.05);
        let eff = space.apply(&CarreauYasudaParams::blood(), 0.1, &ParameterVector(vec![0.95 * 0.1])).unwrap();
        assert!((eff.inflow_scale * 0.1 - 0.095).abs() < 1e-15);
        assert!(space.index_of("u_in").is_ok());
        assert!(space.index_of("lambda").is_err());
    }
}
