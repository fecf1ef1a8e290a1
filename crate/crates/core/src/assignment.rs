//! Exact and entropic assignment between two equally sized sets.
//!
//! Rows index ground-truth molecules and columns index predicted molecules.
//! A [`Permutation`] maps row `i` to column `sigma(i)`.

use crate::error::{Error, Result};

/// Square cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("cost matrix must be at least 1x1"));
        }
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "cost matrix of size {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("cost matrix must be square"));
        }
        CostMatrix::new(n, rows.concat())
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix::new(n, data)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> CostMatrix {
        let n = self.n;
        CostMatrix {
            n,
            data: (0..n * n).map(|k| self.data[(k % n) * n + k / n]).collect(),
        }
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.data.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("cost matrix contains non-finite entries"))
        }
    }

    /// `sum_i C[i][sigma(i)]`, accumulated in row order.
    pub fn assignment_cost(&self, perm: &Permutation) -> f64 {
        perm.0.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// A bijection on `0..n`, stored as `sigma[row] = column`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || seen[j] {
                return Err(Error::invalid(format!("{map:?} is not a permutation")));
            }
            seen[j] = true;
        }
        Ok(Permutation(map))
    }

    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }
}

/// Shortest-augmenting-path Hungarian method. Returns the row-to-column
/// matching and the dual potentials `(u, v)`.
fn hungarian(cost: &CostMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.size();
    // 1-based internally; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0; n];
    for j in 1..=n {
        sigma[owner[j] - 1] = j - 1;
    }
    (sigma, u[1..].to_vec(), v[1..].to_vec())
}

/// Among the perfect matchings of the tight-edge graph (all of which are
/// optimal), pick the lexicographically smallest.
fn lexicographic_min(tight: &[Vec<bool>], sigma: &mut [usize]) {
    let n = sigma.len();
    let mut owner = vec![0; n];
    for (i, &j) in sigma.iter().enumerate() {
        owner[j] = i;
    }
    for i in 0..n {
        for j in 0..sigma[i] {
            if !tight[i][j] || owner[j] < i {
                continue;
            }
            // alternating path: row owner[j] must move to a free-able column,
            // ending at sigma[i] which row i gives up
            let target = sigma[i];
            let start = owner[j];
            let mut prev_row = vec![usize::MAX; n]; // indexed by column
            let mut queue = std::collections::VecDeque::from([start]);
            let mut seen_col = vec![false; n];
            seen_col[j] = true;
            let mut found = None;
            'bfs: while let Some(x) = queue.pop_front() {
                for y in 0..n {
                    if !tight[x][y] || seen_col[y] {
                        continue;
                    }
                    if y == target {
                        prev_row[y] = x;
                        found = Some(y);
                        break 'bfs;
                    }
                    if owner[y] > i {
                        seen_col[y] = true;
                        prev_row[y] = x;
                        queue.push_back(owner[y]);
                    }
                }
            }
            if let Some(mut col) = found {
                // walk back: each row on the path takes the column it reached
                loop {
                    let row = prev_row[col];
                    let old = sigma[row];
                    sigma[row] = col;
                    owner[col] = row;
                    if row == start {
                        break;
                    }
                    col = old;
                }
                sigma[i] = j;
                owner[j] = i;
                break;
            }
        }
    }
}

/// Exact minimum-cost assignment. Ties are broken towards the
/// lexicographically smallest permutation.
pub fn lsa_solve(cost: &CostMatrix) -> Result<(Permutation, f64)> {
    cost.ensure_finite()?;
    let n = cost.size();
    let (mut sigma, u, v) = hungarian(cost);
    let scale = cost.as_slice().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-11 * (1.0 + scale);
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost.get(i, j) - u[i] - v[j] <= tol).collect())
        .collect();
    lexicographic_min(&tight, &mut sigma);
    let perm = Permutation(sigma);
    let total = cost.assignment_cost(&perm);
    Ok((perm, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Stop once every row and column sum is within `tol` of 1.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-6,
            max_iters: 1000,
        }
    }
}

/// Doubly stochastic soft assignment with unit row and column mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    data: Vec<f64>,
    pub reg: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TransportPlan {
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for row in self.data.chunks(self.n) {
            for (acc, p) in s.iter_mut().zip(row) {
                *acc += p;
            }
        }
        s
    }

    pub fn max_marginal_error(&self) -> f64 {
        self.row_sums()
            .into_iter()
            .chain(self.col_sums())
            .fold(0.0, |m, s| m.max((s - 1.0).abs()))
    }

    /// `<P, C>` accumulated in row-major order.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        self.data.iter().zip(cost.as_slice()).map(|(p, c)| p * c).sum()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Duals {
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Duals {
    fn update_rows(&mut self, c: &[f64], n: usize, reg: f64) {
        for i in 0..n {
            let row = &c[i * n..(i + 1) * n];
            let g = &self.g;
            self.f[i] = -reg * log_sum_exp((0..n).map(|j| (g[j] - row[j]) / reg));
        }
    }

    fn update_cols(&mut self, c: &[f64], n: usize, reg: f64) {
        for j in 0..n {
            let f = &self.f;
            self.g[j] = -reg * log_sum_exp((0..n).map(|i| (f[i] - c[i * n + j]) / reg));
        }
    }

    fn plan(&self, c: &[f64], n: usize, reg: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                p.push(((self.f[i] + self.g[j] - c[i * n + j]) / reg).exp());
            }
        }
        p
    }

    /// Row-sum violation; columns are exact right after a column update.
    fn row_error(&self, c: &[f64], n: usize, reg: f64) -> f64 {
        (0..n)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| ((self.f[i] + self.g[j] - c[i * n + j]) / reg).exp())
                    .sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Alternating log-domain updates (rows first) with geometric annealing of
/// the regularization from the cost range down to `reg`.
fn sinkhorn_rows_first(c: &[f64], n: usize, reg: f64, opts: &SinkhornOptions) -> (Vec<f64>, usize, bool) {
    let (lo, hi) = c
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut duals = Duals {
        f: vec![0.0; n],
        g: vec![0.0; n],
    };
    let mut iterations = 0;
    let mut stage_reg = (hi - lo).max(reg);
    // intermediate stages only need a rough fixed point to warm-start the next
    while stage_reg > reg && iterations < opts.max_iters {
        for _ in 0..10 {
            duals.update_rows(c, n, stage_reg);
            duals.update_cols(c, n, stage_reg);
            iterations += 1;
            if duals.row_error(c, n, stage_reg) < 1e-2 || iterations >= opts.max_iters {
                break;
            }
        }
        stage_reg = (stage_reg * 0.5).max(reg);
    }
    let mut converged = false;
    while iterations < opts.max_iters {
        duals.update_rows(c, n, reg);
        duals.update_cols(c, n, reg);
        iterations += 1;
        if duals.row_error(c, n, reg) < opts.tol {
            converged = true;
            break;
        }
    }
    (duals.plan(c, n, reg), iterations, converged)
}

/// Projects a nearly doubly stochastic matrix onto exact unit marginals
/// (scale down overfull rows, then columns, then spread the deficit).
fn round_to_marginals(p: &mut [f64], n: usize) {
    for row in p.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        if s > 1.0 {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| p[i * n + j]).sum();
        if s > 1.0 {
            (0..n).for_each(|i| p[i * n + j] /= s);
        }
    }
    let err_r: Vec<f64> = p.chunks(n).map(|r| (1.0 - r.iter().sum::<f64>()).max(0.0)).collect();
    let err_c: Vec<f64> = (0..n)
        .map(|j| (1.0 - (0..n).map(|i| p[i * n + j]).sum::<f64>()).max(0.0))
        .collect();
    let mass: f64 = err_r.iter().sum();
    if mass > 0.0 {
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] += err_r[i] * err_c[j] / mass;
            }
        }
    }
}

/// Entropic assignment with the default stopping rule.
pub fn sinkhorn(cost: &CostMatrix, reg: f64) -> Result<TransportPlan> {
    sinkhorn_with(cost, reg, &SinkhornOptions::default())
}

/// Approximately solves `min <P,C> + reg sum P log P` over matrices with unit
/// row and column sums.
///
/// The plan is the average of a rows-first and a columns-first run, each
/// projected onto exact marginals, so solving the transposed problem yields
/// exactly the transposed plan.
pub fn sinkhorn_with(cost: &CostMatrix, reg: f64, opts: &SinkhornOptions) -> Result<TransportPlan> {
    if !(reg > 0.0) || !reg.is_finite() {
        return Err(Error::invalid(format!("Sinkhorn regularization must be positive, got {reg}")));
    }
    cost.ensure_finite()?;
    let n = cost.size();
    let ct = cost.transpose();
    let (mut a, it_a, ok_a) = sinkhorn_rows_first(cost.as_slice(), n, reg, opts);
    let (mut b, it_b, ok_b) = sinkhorn_rows_first(ct.as_slice(), n, reg, opts);
    round_to_marginals(&mut a, n);
    round_to_marginals(&mut b, n);
    let data = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            0.5 * (a[k] + b[j * n + i])
        })
        .collect();
    if !(ok_a && ok_b) {
        log::warn!("Sinkhorn did not reach tolerance {} in {} iterations", opts.tol, opts.max_iters);
    }
    Ok(TransportPlan {
        n,
        data,
        reg,
        iterations: it_a.max(it_b),
        converged: ok_a && ok_b,
    })
}

/// Hard assignment from a soft plan: maximum-likelihood permutation under
/// `-log(P + 1e-300)`.
pub fn plan_round(plan: &TransportPlan) -> Permutation {
    let n = plan.size();
    let neg_log = CostMatrix {
        n,
        data: plan.as_slice().iter().map(|p| -(p + 1e-300).ln()).collect(),
    };
    lsa_solve(&neg_log).expect("negative log of a finite plan is finite").0
}

/// `0.05 * median(C)`, falling back to `0.05 * (mean(C) + 1e-12)` when the
/// median is zero.
pub fn default_reg(cost: &CostMatrix) -> f64 {
    let mut v = cost.as_slice().to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    let median = if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    };
    if median != 0.0 {
        0.05 * median
    } else {
        let mean = v.iter().sum::<f64>() / k as f64;
        0.05 * (mean + 1e-12)
    }
}
