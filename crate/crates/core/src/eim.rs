//! Empirical interpolation of element-wise fields (viscosity and the
//! stabilization parameter).
//!
//! Fields are constant per element for P1 velocity, so interpolation points
//! are elements ("magic elements") and basis functions are element vectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldTag {
    Eta,
    Tau,
}

impl std::fmt::Display for FieldTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FieldTag::Eta => "eta",
            FieldTag::Tau => "tau",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EimOptions {
    pub tol_eta: f64,
    pub tol_tau: f64,
    pub q_max: usize,
}

impl Default for EimOptions {
    fn default() -> Self {
        EimOptions { tol_eta: 1e-12, tol_tau: 1e-12, q_max: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EimApproximation {
    pub tag: FieldTag,
    /// `h_q`, one value per element.
    pub basis: Vec<Vec<f64>>,
    pub magic: Vec<usize>,
    /// `t[i][q] = h_q(m_i)`; unit lower-triangular.
    pub t: Vec<Vec<f64>>,
    /// Maximum relative training error before each step and after the last.
    pub history: Vec<f64>,
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

impl EimApproximation {
    pub fn q(&self) -> usize {
        self.magic.len()
    }

    /// Solves `T c = values` by forward substitution.
    pub fn coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.q() {
            return Err(Error::Dimension(format!("{} magic values for Q = {}", values.len(), self.q())));
        }
        Ok(forward(&self.t, values, self.q()))
    }

    /// `Σ c_q h_q` over all elements.
    pub fn interpolate(&self, c: &[f64]) -> Vec<f64> {
        let n = self.basis.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (h, &cq) in self.basis.iter().zip(c) {
            for (o, v) in out.iter_mut().zip(h) {
                *o += cq * v;
            }
        }
        out
    }

    /// The first `q` terms, identical to a greedy run with `Q_max = q`.
    pub fn truncated(&self, q: usize) -> EimApproximation {
        let q = q.min(self.q());
        EimApproximation {
            tag: self.tag,
            basis: self.basis[..q].to_vec(),
            magic: self.magic[..q].to_vec(),
            t: self.t[..q].iter().map(|r| r[..q].to_vec()).collect(),
            history: self.history[..=q].to_vec(),
        }
    }

    pub fn final_error(&self) -> f64 {
        *self.history.last().unwrap_or(&f64::NAN)
    }
}

/// Forward substitution with the lower-triangular `t`.
pub fn forward(t: &[Vec<f64>], values: &[f64], q: usize) -> Vec<f64> {
    let mut c = vec![0.0; q];
    for i in 0..q {
        let s: f64 = (0..i).map(|k| t[i][k] * c[k]).sum();
        c[i] = (values[i] - s) / t[i][i];
    }
    c
}

/// Greedy EIM on sample columns (one per training snapshot). Errors are
/// relative to the largest column max-norm, so the history starts at 1.
pub fn eim_greedy(tag: FieldTag, samples: &[Vec<f64>], tol: f64, q_max: usize) -> Result<EimApproximation> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("EIM tolerance must be positive, got {tol}")));
    }
    let ne = samples.first().map_or(0, Vec::len);
    if ne == 0 || samples.iter().any(|s| s.len() != ne) {
        return Err(Error::Dimension("EIM samples must be non-empty and equally long".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { element: 0 });
    }
    let scale = samples.iter().map(|s| inf_norm(s)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::InvalidArgument("all EIM samples are zero".into()));
    }
    let mut approx = EimApproximation { tag, basis: Vec::new(), magic: Vec::new(), t: Vec::new(), history: Vec::new() };
    loop {
        let q = approx.q();
        let residuals: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| {
                let vals: Vec<f64> = approx.magic.iter().map(|&m| s[m]).collect();
                let c = forward(&approx.t, &vals, q);
                let mut r = s.clone();
                for (h, cq) in approx.basis.iter().zip(&c) {
                    for (x, v) in r.iter_mut().zip(h) {
                        *x -= cq * v;
                    }
                }
                r
            })
            .collect();
        let (j, err) = argmax(residuals.iter().map(|r| inf_norm(r) / scale));
        approx.history.push(err);
        if err <= tol || q >= q_max || err == 0.0 {
            break;
        }
        let r = &residuals[j];
        let (m, _) = argmax(r.iter().map(|v| v.abs()));
        let pivot = r[m];
        let mut h: Vec<f64> = r.iter().map(|v| v / pivot).collect();
        // the residual vanishes at earlier magic elements up to roundoff
        for &mi in &approx.magic {
            h[mi] = 0.0;
        }
        h[m] = 1.0;
        for row in approx.t.iter_mut() {
            row.push(0.0);
        }
        approx.t.push(approx.basis.iter().map(|b| b[m]).chain([1.0]).collect());
        approx.magic.push(m);
        approx.basis.push(h);
    }
    Ok(approx)
}
