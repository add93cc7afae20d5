//! Dense two-phase simplex with Bland's rule and basis duals.
//!
//! Sized for pricing and region LPs with at most a few hundred rows.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    rel: Relation,
    rhs: f64,
}

/// `min cᵀx` subject to rows and per-variable bounds (infinite allowed).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    c: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// `∂ objective / ∂ rhs` for every row, in insertion order.
    pub duals: Vec<f64>,
    /// Some basic variable sits at zero in the optimal basis, so the
    /// duals need not be unique.
    pub degenerate: bool,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lo + s`
    Shifted { col: usize, lo: f64 },
    /// `x = hi − s`
    Mirrored { col: usize, hi: f64 },
    /// `x = s⁺ − s⁻`
    Split { pos: usize, neg: usize },
}

impl LinearProgram {
    /// `n` variables, zero objective, bounds `[0, ∞)`.
    pub fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn var_count(&self) -> usize {
        self.c.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.c.len(), "objective length");
        self.c = c;
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> usize {
        assert_eq!(coeffs.len(), self.c.len(), "row length");
        self.rows.push(Row { coeffs, rel, rhs });
        self.rows.len() - 1
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) {
        self.rows[row].rhs = rhs;
    }

    pub fn minimize(&self) -> Result<LpSolution> {
        for j in 0..self.c.len() {
            if self.lower[j] > self.upper[j] {
                return Err(Error::Infeasible);
            }
        }
        let mut maps = Vec::with_capacity(self.c.len());
        let mut ncols = 0;
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..self.c.len() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            let map = if lo.is_finite() {
                if hi.is_finite() {
                    bound_rows.push((ncols, hi - lo));
                }
                VarMap::Shifted { col: ncols, lo }
            } else if hi.is_finite() {
                VarMap::Mirrored { col: ncols, hi }
            } else {
                ncols += 1;
                VarMap::Split {
                    pos: ncols - 1,
                    neg: ncols,
                }
            };
            ncols += 1;
            maps.push(map);
        }

        // Standard-form rows over structural columns.
        let mut std_rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
        for row in &self.rows {
            let mut a = vec![0.0; ncols];
            let mut rhs = row.rhs;
            for (j, &v) in row.coeffs.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                match maps[j] {
                    VarMap::Shifted { col, lo } => {
                        a[col] += v;
                        rhs -= v * lo;
                    }
                    VarMap::Mirrored { col, hi } => {
                        a[col] -= v;
                        rhs -= v * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        a[pos] += v;
                        a[neg] -= v;
                    }
                }
            }
            std_rows.push((a, row.rel, rhs));
        }
        for &(col, width) in &bound_rows {
            let mut a = vec![0.0; ncols];
            a[col] = 1.0;
            std_rows.push((a, Relation::Le, width));
        }
        let mut cost = vec![0.0; ncols];
        for (j, &cj) in self.c.iter().enumerate() {
            match maps[j] {
                VarMap::Shifted { col, .. } => cost[col] += cj,
                VarMap::Mirrored { col, .. } => cost[col] -= cj,
                VarMap::Split { pos, neg } => {
                    cost[pos] += cj;
                    cost[neg] -= cj;
                }
            }
        }

        let mut tab = Tableau::build(&std_rows, ncols);
        let (primal, duals_std, degenerate, pivots) = tab.solve(&cost)?;

        let mut x = vec![0.0; self.c.len()];
        for (j, map) in maps.iter().enumerate() {
            x[j] = match *map {
                VarMap::Shifted { col, lo } => lo + primal[col],
                VarMap::Mirrored { col, hi } => hi - primal[col],
                VarMap::Split { pos, neg } => primal[pos] - primal[neg],
            };
        }
        let objective = self.c.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
        Ok(LpSolution {
            x,
            objective,
            duals: duals_std[..self.rows.len()].to_vec(),
            degenerate,
            pivots,
        })
    }
}

struct Tableau {
    /// Row-major `(m + 1) × (width + 1)`; row `m` is the reduced-cost row,
    /// the last column the right-hand side.
    t: Vec<f64>,
    m: usize,
    width: usize,
    structural: usize,
    /// First artificial column; artificials occupy `art..art + m`.
    art: usize,
    basis: Vec<usize>,
    flipped: Vec<bool>,
}

impl Tableau {
    fn build(rows: &[(Vec<f64>, Relation, f64)], ncols: usize) -> Self {
        let m = rows.len();
        let slack_count = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let art = ncols + slack_count;
        let width = art + m;
        let stride = width + 1;
        let mut t = vec![0.0; (m + 1) * stride];
        let mut flipped = vec![false; m];
        let mut next_slack = ncols;
        for (i, (a, rel, rhs)) in rows.iter().enumerate() {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            flipped[i] = sign < 0.0;
            let r = &mut t[i * stride..(i + 1) * stride];
            for (j, v) in a.iter().enumerate() {
                r[j] = sign * v;
            }
            match rel {
                Relation::Le => {
                    r[next_slack] = sign;
                    next_slack += 1;
                }
                Relation::Ge => {
                    r[next_slack] = -sign;
                    next_slack += 1;
                }
                Relation::Eq => {}
            }
            r[art + i] = 1.0;
            r[width] = sign * rhs;
        }
        Self {
            t,
            m,
            width,
            structural: art,
            art,
            basis: (art..art + m).collect(),
            flipped,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width)
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let stride = self.width + 1;
        let m = self.m;
        let mut obj = vec![0.0; stride];
        obj[..cost.len()].copy_from_slice(cost);
        for i in 0..m {
            let cb = cost.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..stride {
                    obj[j] -= cb * self.t[i * stride + j];
                }
            }
        }
        self.t[m * stride..].copy_from_slice(&obj);
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let stride = self.width + 1;
        let p = self.t[row * stride + col];
        for j in 0..stride {
            self.t[row * stride + j] /= p;
        }
        let pivot_row: Vec<f64> = self.t[row * stride..(row + 1) * stride].to_vec();
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let f = self.t[i * stride + col];
            if f == 0.0 {
                continue;
            }
            let r = &mut self.t[i * stride..(i + 1) * stride];
            for j in 0..stride {
                r[j] -= f * pivot_row[j];
            }
            r[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Bland's rule iterations over columns `< limit`.
    fn iterate(&mut self, limit: usize, pivots: &mut usize) -> Result<()> {
        loop {
            let entering = (0..limit).find(|&j| self.at(self.m, j) < -PIVOT_TOL);
            let Some(col) = entering else {
                return Ok(());
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, col);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Err(Error::Unbounded);
            };
            self.pivot(row, col);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::NotConverged {
                    what: "simplex",
                    iterations: *pivots,
                });
            }
        }
    }

    fn solve(&mut self, cost: &[f64]) -> Result<(Vec<f64>, Vec<f64>, bool, usize)> {
        let mut pivots = 0;
        let scale = (0..self.m).map(|i| self.rhs(i).abs()).fold(1.0, f64::max);

        // Phase 1: minimize the sum of artificials.
        let mut phase1 = vec![0.0; self.width];
        for c in phase1.iter_mut().skip(self.art) {
            *c = 1.0;
        }
        self.set_costs(&phase1);
        self.iterate(self.width, &mut pivots)?;
        let infeas = -self.at(self.m, self.width);
        if infeas > 1e-8 * scale {
            return Err(Error::Infeasible);
        }
        // Drive zero-level artificials out where possible.
        for i in 0..self.m {
            if self.basis[i] >= self.art {
                if let Some(col) = (0..self.structural).find(|&j| self.at(i, j).abs() > 1e-7) {
                    self.pivot(i, col);
                    pivots += 1;
                }
            }
        }

        // Phase 2.
        let mut full = vec![0.0; self.width];
        full[..cost.len()].copy_from_slice(cost);
        self.set_costs(&full);
        self.iterate(self.structural, &mut pivots)?;

        let mut primal = vec![0.0; self.structural];
        let mut degenerate = false;
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.structural {
                let v = self.rhs(i).max(0.0);
                primal[b] = v;
                if v <= 1e-9 * scale {
                    degenerate = true;
                }
            }
        }
        let duals = (0..self.m)
            .map(|i| {
                let y = -self.at(self.m, self.art + i);
                if self.flipped[i] {
                    -y
                } else {
                    y
                }
            })
            .collect();
        Ok((primal, duals, degenerate, pivots))
    }
}
