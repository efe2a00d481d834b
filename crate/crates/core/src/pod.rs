//! Proper orthogonal decomposition by the method of snapshots.

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Eigenvalues below this fraction of the largest are treated as zero, that
/// is singular values below 1e-8 of the largest. Snapshots carry nonlinear
/// solver error of about that size, so weaker modes are noise and degrade
/// the reduced model.
pub const RANK_CUTOFF: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerProduct {
    /// H¹ seminorm for velocity, L² for pressure.
    #[default]
    Energy,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Smallest N whose retained energy reaches the threshold.
    Energy(f64),
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodOptions {
    pub energy_threshold: f64,
    pub max_velocity_modes: Option<usize>,
    pub max_pressure_modes: Option<usize>,
    pub inner_product: InnerProduct,
}

impl Default for PodOptions {
    fn default() -> Self {
        PodOptions { energy_threshold: 1.0 - 1e-8, max_velocity_modes: None, max_pressure_modes: None, inner_product: InnerProduct::Energy }
    }
}

/// `⟨a, b⟩` in the Gram matrix, or Euclidean when `gram` is `None`.
pub fn inner(gram: Option<&CsrMatrix>, a: &[f64], b: &[f64]) -> f64 {
    match gram {
        Some(g) => g.bilinear(a, b),
        None => a.iter().zip(b).map(|(x, y)| x * y).sum(),
    }
}

pub fn norm(gram: Option<&CsrMatrix>, a: &[f64]) -> f64 {
    inner(gram, a, a).max(0.0).sqrt()
}

#[derive(Debug, Clone)]
pub struct Pod {
    pub modes: Vec<Vec<f64>>,
    /// All correlation eigenvalues, descending, negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
}

impl Pod {
    /// Eigenvalues divided by the largest.
    pub fn normalized_spectrum(&self) -> Vec<f64> {
        normalized(&self.eigenvalues)
    }
}

pub fn normalized(eigenvalues: &[f64]) -> Vec<f64> {
    let max = eigenvalues.first().copied().unwrap_or(0.0);
    eigenvalues.iter().map(|l| if max > 0.0 { l / max } else { 0.0 }).collect()
}

/// Number of modes retaining `threshold` of the total energy.
pub fn energy_count(eigenvalues: &[f64], threshold: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc / total >= threshold {
            return k + 1;
        }
    }
    eigenvalues.len()
}

pub fn compute_pod(snapshots: &[Vec<f64>], gram: Option<&CsrMatrix>, truncation: Truncation) -> Result<Pod> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("POD needs at least one snapshot".into()));
    }
    if let Truncation::Energy(t) = truncation {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidArgument(format!("energy threshold {t} outside (0, 1]")));
        }
    }
    let n = snapshots.len();
    let len = snapshots[0].len();
    if snapshots.iter().any(|s| s.len() != len) {
        return Err(Error::Dimension("snapshots differ in length".into()));
    }
    // S = Q R with Q orthonormal in the gram inner product, then R = U Σ Vᵀ.
    // The correlation matrix is RᵀR, so λ = σ² and the modes are Q U, but the
    // spectrum is resolved far below the square root of machine precision.
    let mut q: Vec<Vec<f64>> = snapshots.to_vec();
    let mut r = Mat::<f64>::zeros(n, n);
    for k in 0..n {
        let original = norm(gram, &q[k]);
        for _ in 0..2 {
            let wk = match gram {
                Some(g) => g.matvec(&q[k]),
                None => q[k].clone(),
            };
            let c: Vec<f64> = q[..k].par_iter().map(|qj| qj.iter().zip(&wk).map(|(a, b)| a * b).sum()).collect();
            let (head, tail) = q.split_at_mut(k);
            for (j, cj) in c.iter().enumerate() {
                r[(j, k)] += cj;
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= cj * y;
                }
            }
        }
        let nk = norm(gram, &q[k]);
        r[(k, k)] = nk;
        if nk > f64::EPSILON * original && nk.is_finite() {
            q[k].iter_mut().for_each(|x| *x /= nk);
        } else {
            r[(k, k)] = 0.0;
            q[k].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let svd = r.svd().map_err(|e| Error::SingularSystem(format!("snapshot SVD failed: {e:?}")))?;
    let sigma = svd.S().column_vector();
    let u = svd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| sigma[k] * sigma[k]).collect();
    let lmax = eigenvalues[0];
    let rank = eigenvalues.iter().take_while(|&&l| lmax > 0.0 && l > RANK_CUTOFF * lmax).count();
    let keep = match truncation {
        Truncation::Energy(t) => energy_count(&eigenvalues[..rank], t),
        Truncation::Fixed(k) => k.min(rank),
    };
    let mut modes: Vec<Vec<f64>> = order[..keep]
        .par_iter()
        .map(|&k| {
            let mut m = vec![0.0; len];
            for (i, qi) in q.iter().enumerate() {
                let c = u[(i, k)];
                for (x, y) in m.iter_mut().zip(qi) {
                    *x += c * y;
                }
            }
            m
        })
        .collect();
    orthonormalize(&mut modes, gram)?;
    Ok(Pod { modes, eigenvalues })
}

/// Modified Gram-Schmidt, applied twice.
pub fn orthonormalize(cols: &mut [Vec<f64>], gram: Option<&CsrMatrix>) -> Result<()> {
    for _ in 0..2 {
        for k in 0..cols.len() {
            for j in 0..k {
                let c = inner(gram, &cols[j], &cols[k]);
                let (head, tail) = cols.split_at_mut(k);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= c * y;
                }
            }
            let nk = norm(gram, &cols[k]);
            if !(nk > 0.0) || !nk.is_finite() {
                return Err(Error::SingularSystem(format!("basis column {k} is linearly dependent")));
            }
            cols[k].iter_mut().for_each(|x| *x /= nk);
        }
    }
    Ok(())
}

/// Coefficients of the orthogonal projection onto orthonormal `cols`.
pub fn project(cols: &[Vec<f64>], gram: Option<&CsrMatrix>, x: &[f64]) -> Vec<f64> {
    let wx = match gram {
        Some(g) => g.matvec(x),
        None => x.to_vec(),
    };
    cols.iter().map(|c| c.iter().zip(&wx).map(|(a, b)| a * b).sum()).collect()
}

pub fn combine(cols: &[Vec<f64>], coeffs: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (c, &a) in cols.iter().zip(coeffs) {
        for (o, v) in out.iter_mut().zip(c) {
            *o += a * v;
        }
    }
    out
}

/// `‖x - P x‖` for the orthogonal projector onto orthonormal `cols`.
pub fn projection_error(cols: &[Vec<f64>], gram: Option<&CsrMatrix>, x: &[f64]) -> f64 {
    let px = combine(cols, &project(cols, gram, x), x.len());
    let r: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
    norm(gram, &r)
}

/// `Z_v = [lifts | velocity modes]` on the full nodal velocity space and
/// `Z_p` on pressure DOFs, with their POD spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedBasis {
    pub lifts: Vec<Vec<f64>>,
    pub velocity_modes: Vec<Vec<f64>>,
    pub pressure_modes: Vec<Vec<f64>>,
    pub velocity_spectrum: Vec<f64>,
    pub pressure_spectrum: Vec<f64>,
    pub inner_product: InnerProduct,
}

impl ReducedBasis {
    pub fn n_lifts(&self) -> usize {
        self.lifts.len()
    }

    /// `N_u`, lifts included.
    pub fn n_u(&self) -> usize {
        self.lifts.len() + self.velocity_modes.len()
    }

    pub fn n_p(&self) -> usize {
        self.pressure_modes.len()
    }

    /// Column `j` of `Z_v`.
    pub fn z_v(&self, j: usize) -> &[f64] {
        if j < self.lifts.len() {
            &self.lifts[j]
        } else {
            &self.velocity_modes[j - self.lifts.len()]
        }
    }

    pub fn z_v_columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_u()).map(|j| self.z_v(j))
    }

    /// Leading `n_modes` velocity and `n_p` pressure modes.
    pub fn truncated(&self, n_modes: usize, n_p: usize) -> Result<ReducedBasis> {
        if n_modes > self.velocity_modes.len() || n_p > self.pressure_modes.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n_modes} velocity / {n_p} pressure modes, basis has {} / {}",
                self.velocity_modes.len(),
                self.pressure_modes.len()
            )));
        }
        Ok(ReducedBasis {
            lifts: self.lifts.clone(),
            velocity_modes: self.velocity_modes[..n_modes].to_vec(),
            pressure_modes: self.pressure_modes[..n_p].to_vec(),
            velocity_spectrum: self.velocity_spectrum.clone(),
            pressure_spectrum: self.pressure_spectrum.clone(),
            inner_product: self.inner_product,
        })
    }
}

/// Condition number of the Gram matrix of `Z_v`; lifts may be nearly
/// dependent on the modes, which is allowed but worth knowing.
pub fn velocity_gram_condition(basis: &ReducedBasis, k: &CsrMatrix) -> f64 {
    let n = basis.n_u();
    let kz: Vec<Vec<f64>> = basis.z_v_columns().map(|c| k.matvec(c)).collect();
    let g = Mat::<f64>::from_fn(n, n, |i, j| basis.z_v(i).iter().zip(&kz[j]).map(|(a, b)| a * b).sum());
    match g.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) if !ev.is_empty() => {
            let (lo, hi) = (ev[0], ev[ev.len() - 1]);
            if lo > 0.0 {
                hi / lo
            } else {
                f64::INFINITY
            }
        }
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_snapshots_have_one_mode() {
        let s = vec![vec![1.0, 2.0, 3.0]; 4];
        let pod = compute_pod(&s, None, Truncation::Energy(1.0)).unwrap();
        assert_eq!(pod.modes.len(), 1);
        assert_eq!(pod.normalized_spectrum().iter().filter(|&&l| l > 1e-12).count(), 1);
        assert!(projection_error(&pod.modes, None, &s[0]) < 1e-12);
    }

    #[test]
    fn orthonormal_pair_has_equal_eigenvalues() {
        let s = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let pod = compute_pod(&s, None, Truncation::Fixed(2)).unwrap();
        assert!((pod.eigenvalues[0] - pod.eigenvalues[1]).abs() < 1e-14);
        for x in [[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]] {
            let px = combine(&pod.modes, &project(&pod.modes, None, &x), 3);
            let expect = [x[0], x[1], 0.0];
            assert!(px.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn energy_count_counts() {
        assert_eq!(energy_count(&[3.0, 1.0, 0.0], 0.75), 1);
        assert_eq!(energy_count(&[3.0, 1.0, 0.0], 0.76), 2);
        assert!(compute_pod(&[vec![1.0]], None, Truncation::Energy(1.5)).is_err());
        assert!(compute_pod(&[], None, Truncation::Energy(0.5)).is_err());
    }
}
