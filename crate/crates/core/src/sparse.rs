//! Compressed sparse row matrices with a fixed pattern.
//!
//! Finite element operators are assembled many times on the same pattern
//! (once per Picard iterate, once per EIM term), so the pattern and the map
//! from element-local entries to stored values are computed once.

use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Pattern {
    /// Builds the pattern of all `(row, col)` pairs and returns, for each
    /// pair in input order, the index of its stored value.
    pub fn from_pairs(nrows: usize, ncols: usize, pairs: &[(usize, usize)]) -> (Pattern, Vec<usize>) {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_unstable_by_key(|&k| pairs[k]);
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::new();
        let mut slots = vec![0usize; pairs.len()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let p = pairs[k];
            debug_assert!(p.0 < nrows && p.1 < ncols);
            if last != Some(p) {
                indices.push(p.1);
                indptr[p.0 + 1] += 1;
                last = Some(p);
            }
            slots[k] = indices.len() - 1;
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        (Pattern { nrows, ncols, indptr, indices }, slots)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Index of the stored entry `(row, col)`, if present.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.indptr[row]..self.indptr[row + 1];
        self.indices[range.clone()].binary_search(&col).ok().map(|k| range.start + k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub pattern: std::sync::Arc<Pattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: std::sync::Arc<Pattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        CsrMatrix { pattern, values }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let pairs: Vec<(usize, usize)> = triplets.iter().map(|t| (t.0, t.1)).collect();
        let (pattern, slots) = Pattern::from_pairs(nrows, ncols, &pairs);
        let mut values = vec![0.0; pattern.nnz()];
        for (t, s) in triplets.iter().zip(slots) {
            values[s] += t.2;
        }
        CsrMatrix { pattern: std::sync::Arc::new(pattern), values }
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |k| self.values[k])
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.indptr[r]..p.indptr[r + 1] {
                s += self.values[k] * x[p.indices[k]];
            }
            *yr = s;
        }
    }

    /// `y = Aᵀ x`
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; self.ncols()];
        for (r, &xr) in x.iter().enumerate() {
            for k in p.indptr[r]..p.indptr[r + 1] {
                y[p.indices[k]] += self.values[k] * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let p = &self.pattern;
        let mut t = Vec::with_capacity(p.nnz());
        for r in 0..p.nrows {
            for k in p.indptr[r]..p.indptr[r + 1] {
                t.push((p.indices[k], r, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(p.ncols, p.nrows, &t)
    }

    /// Submatrix on the given rows and columns (`None` drops the index).
    pub fn extract(&self, row_map: &[Option<usize>], nrows: usize, col_map: &[Option<usize>], ncols: usize) -> CsrMatrix {
        let p = &self.pattern;
        let mut t = Vec::new();
        for r in 0..p.nrows {
            let Some(rr) = row_map[r] else { continue };
            for k in p.indptr[r]..p.indptr[r + 1] {
                if let Some(cc) = col_map[p.indices[k]] {
                    t.push((rr, cc, self.values[k]));
                }
            }
        }
        CsrMatrix::from_triplets(nrows, ncols, &t)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let mut worst: f64 = 0.0;
        for r in 0..p.nrows {
            for k in p.indptr[r]..p.indptr[r + 1] {
                worst = worst.max((self.values[k] - self.get(p.indices[k], r)).abs());
            }
        }
        worst / self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// A square matrix stored column-major for faer, with the map from each
/// contributing source entry to its value slot.
pub struct ColumnPattern {
    pub symbolic: SymbolicSparseColMat<usize>,
    pub n: usize,
}

impl ColumnPattern {
    /// `pairs` are `(row, col)`; returns the structure and the slot of each pair.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<(ColumnPattern, Vec<usize>)> {
        let swapped: Vec<(usize, usize)> = pairs.iter().map(|&(r, c)| (c, r)).collect();
        let (p, slots) = Pattern::from_pairs(n, n, &swapped);
        let symbolic = SymbolicSparseColMat::new_checked(n, n, p.indptr, None, p.indices);
        Ok((ColumnPattern { symbolic, n }, slots))
    }

    pub fn matrix<'a>(&'a self, values: &'a [f64]) -> Result<SparseColMatRef<'a, usize, f64>> {
        if values.len() != self.symbolic.compute_nnz() {
            return Err(Error::Dimension("value count does not match the pattern".into()));
        }
        Ok(SparseColMatRef::new(self.symbolic.as_ref(), values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_transpose_works() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (1, 0, 2.0), (0, 2, 3.0), (0, 0, -1.0)]);
        assert_eq!(a.pattern.nnz(), 3);
        assert_eq!(a.get(0, 2), 4.0);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 2.0]);
        assert_eq!(a.matvec_transpose(&[1.0, 1.0]), a.transpose().matvec(&[1.0, 1.0]));
        assert_eq!(a.bilinear(&[1.0, 0.0], &[0.0, 0.0, 2.0]), 8.0);
    }

    #[test]
    fn extraction() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0), (0, 2, 5.0)]);
        let map = [Some(0), None, Some(1)];
        let b = a.extract(&map, 2, &map, 2);
        assert_eq!(b.get(0, 1), 5.0);
        assert_eq!(b.get(1, 1), 3.0);
        assert_eq!(b.pattern.nnz(), 3);
    }
}
