/// Compressed sparse rows; column indices within a row are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        for r in &rows {
            for &(j, v) in r {
                debug_assert!(j < n_cols);
                indices.push(j);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n_rows: rows.len(), n_cols, indptr, indices, data }
    }

    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column-compressed copy restricted to `rows`, renumbered in the given order.
    pub fn to_csc_rows(&self, rows: &[usize]) -> CscMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &i in rows {
            for &j in &self.indices[self.indptr[i]..self.indptr[i + 1]] {
                counts[j + 1] += 1;
            }
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let nnz = counts[self.n_cols];
        let mut next = counts.clone();
        let mut row_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        for (new_i, &i) in rows.iter().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k];
                row_idx[next[j]] = new_i;
                values[next[j]] = self.data[k];
                next[j] += 1;
            }
        }
        CscMatrix { n_rows: rows.len(), n_cols: self.n_cols, col_ptr: counts, row_idx, values }
    }

    pub fn to_csc(&self) -> CscMatrix {
        let all: Vec<usize> = (0..self.n_rows).collect();
        self.to_csc_rows(&all)
    }

    /// Dense copy of column `j` over `rows`.
    pub fn dense_column(&self, j: usize, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                let (a, b) = (self.indptr[i], self.indptr[i + 1]);
                match self.indices[a..b].binary_search(&j) {
                    Ok(k) => self.data[a + k],
                    Err(_) => 0.0,
                }
            })
            .collect()
    }
}

/// Compressed sparse columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }
}
