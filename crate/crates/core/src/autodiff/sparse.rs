/// Fixed sparse linear map in compressed-row form, applied by
/// [`crate::autodiff::Tape::sparse`] along the last tensor axis.
///
/// Used for image resampling, blur and augmentation warps, all of which are
/// linear in pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_start: Vec<usize>,
    col_index: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, weight)` lists.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut col_index = Vec::new();
        let mut values = Vec::new();
        row_start.push(0);
        for row in &rows {
            for &(c, w) in row {
                assert!(c < cols, "column {c} out of range {cols}");
                col_index.push(c);
                values.push(w);
            }
            row_start.push(col_index.len());
        }
        SparseMatrix {
            rows: rows.len(),
            cols,
            row_start,
            col_index,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[r]..self.row_start[r + 1];
        self.col_index[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self * other` (apply `other` first, then `self`).
    pub fn compose(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut acc = vec![0.0; other.cols];
        let mut touched = Vec::new();
        let rows = (0..self.rows)
            .map(|r| {
                for (mid, w) in self.row(r) {
                    for (c, w2) in other.row(mid) {
                        if acc[c] == 0.0 {
                            touched.push(c);
                        }
                        acc[c] += w * w2;
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                let row: Vec<(usize, f64)> = touched.iter().map(|&c| (c, acc[c])).collect();
                for &c in &touched {
                    acc[c] = 0.0;
                }
                touched.clear();
                row
            })
            .collect();
        SparseMatrix::from_rows(other.cols, rows)
    }

    /// Applies the map to one vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, w)| w * x[c]).sum())
            .collect()
    }

    /// Accumulates `selfᵀ g` into `out`.
    pub fn apply_transpose_into(&self, g: &[f64], out: &mut [f64]) {
        for (r, &gr) in g.iter().enumerate().take(self.rows) {
            if gr == 0.0 {
                continue;
            }
            for (c, w) in self.row(r) {
                out[c] += w * gr;
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows = vec![Vec::new(); self.cols];
        for r in 0..self.rows {
            for (c, w) in self.row(r) {
                rows[c].push((r, w));
            }
        }
        SparseMatrix::from_rows(self.rows, rows)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &SparseMatrix) -> SparseMatrix {
        let mut rows = Vec::with_capacity(self.rows * other.rows);
        for i in 0..self.rows {
            for k in 0..other.rows {
                let mut row = Vec::new();
                for (j, a) in self.row(i) {
                    row.extend(other.row(k).map(|(l, b)| (j * other.cols + l, a * b)));
                }
                rows.push(row);
            }
        }
        SparseMatrix::from_rows(self.cols * other.cols, rows)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, w)| w).sum()).collect()
    }
}
