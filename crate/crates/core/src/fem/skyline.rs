//! Symmetric skyline (variable band) storage with in-place `LDLᵀ` factorization.

/// Upper triangle stored column by column from each column's first non-zero row.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPivot {
    pub equation: usize,
    pub pivot: f64,
}

impl SkylineMatrix {
    /// `first[j]` is the smallest row index with a non-zero entry in column `j` (≤ j).
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (j, &f) in first.iter().enumerate() {
            assert!(f <= j, "skyline profile above the diagonal");
            start.push(total);
            total += j - f + 1;
        }
        start.push(total);
        Self { first, start, values: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` to entry `(i, j)`; entries below the diagonal map onto their mirror.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(i >= self.first[j], "entry outside profile");
        self.values[self.start[j] + i - self.first[j]] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if i < self.first[j] {
            0.0
        } else {
            self.values[self.start[j] + i - self.first[j]]
        }
    }

    fn column(&self, j: usize) -> &[f64] {
        &self.values[self.start[j]..self.start[j + 1]]
    }

    /// Replaces the matrix by its factors: `D` on the diagonal, `Lᵀ` above it.
    pub fn factorize(&mut self) -> Result<(), ZeroPivot> {
        let n = self.dim();
        let scale = (0..n).map(|j| self.get(j, j).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for j in 0..n {
            let fj = self.first[j];
            let sj = self.start[j];
            // g_ij = k_ij − Σ_r l_ri g_rj over the shared profile.
            for i in fj + 1..j {
                let fi = self.first[i];
                let r0 = fi.max(fj);
                if r0 < i {
                    let si = self.start[i];
                    let (head, tail) = self.values.split_at_mut(sj);
                    let col_i = &head[si + r0 - fi..si + i - fi];
                    let col_j = &tail[r0 - fj..i - fj];
                    let dot: f64 = col_i.iter().zip(col_j.iter()).map(|(a, b)| a * b).sum();
                    tail[i - fj] -= dot;
                }
            }
            // l_ij = g_ij / d_i and d_j = k_jj − Σ l_ij g_ij.
            let mut diag = self.values[sj + j - fj];
            for i in fj..j {
                let d_i = self.values[self.start[i] + i - self.first[i]];
                let g = self.values[sj + i - fj];
                let l = g / d_i;
                diag -= l * g;
                self.values[sj + i - fj] = l;
            }
            if !(diag.abs() > 1e-14 * scale) || !diag.is_finite() {
                return Err(ZeroPivot { equation: j, pivot: diag });
            }
            self.values[sj + j - fj] = diag;
        }
        Ok(())
    }

    /// Solves `A x = b` in place using the factors from [`factorize`](Self::factorize).
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for j in 0..n {
            let fj = self.first[j];
            let col = self.column(j);
            let dot: f64 = col[..j - fj].iter().zip(&b[fj..j]).map(|(l, x)| l * x).sum();
            b[j] -= dot;
        }
        for j in 0..n {
            b[j] /= self.column(j)[j - self.first[j]];
        }
        for j in (0..n).rev() {
            let fj = self.first[j];
            let xj = b[j];
            let col = &self.values[self.start[j]..self.start[j] + j - fj];
            for (bi, l) in b[fj..j].iter_mut().zip(col) {
                *bi -= l * xj;
            }
        }
    }

    /// Count of negative pivots after factorization (Sylvester inertia).
    pub fn negative_pivots(&self) -> usize {
        (0..self.dim()).filter(|&j| self.column(j)[j - self.first[j]] < 0.0).count()
    }
}
