//! Dense two-phase primal simplex with upper-bounded variables.
//!
//! Solves `min c'x  s.t.  Ax = b,  0 <= x <= u` where `u` may be infinite.
//! Nonbasic variables always sit at zero in the working coordinates: a
//! variable resting at its upper bound is replaced by its complement
//! `u - x`, which flips the sign of its column.
//!
//! Pricing is Dantzig (most negative reduced cost). After a run of
//! degenerate pivots the solver switches to Bland's rule (lowest eligible
//! index enters, lowest basic index leaves among ratio ties) until the
//! objective moves again, which rules out cycling.

/// Upper bound meaning "unbounded above".
pub const UNBOUNDED: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Reduced costs above `-reduced_cost_tol` count as optimal.
    pub reduced_cost_tol: f64,
    /// Smallest pivot magnitude accepted in the ratio test.
    pub pivot_tol: f64,
    /// Allowed residual `|Ax - b|` and bound violation at the end.
    pub feasibility_tol: f64,
    /// Iterations allowed per variable (structural plus artificial).
    pub iterations_per_variable: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_streak: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            reduced_cost_tol: 1e-9,
            pivot_tol: 1e-9,
            feasibility_tol: 1e-9,
            iterations_per_variable: 50,
            degenerate_streak: 50,
        }
    }
}

/// A linear program in equality form with bounded variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub upper: Vec<f64>,
    /// Sparse rows as `(column, coefficient)` pairs.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    NumericFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub message: Option<String>,
}

impl SimplexResult {
    fn failure(status: LpStatus, n: usize, iterations: usize, msg: impl Into<String>) -> Self {
        Self {
            status,
            x: vec![0.0; n],
            objective: f64::NAN,
            iterations,
            message: Some(msg.into()),
        }
    }
}

struct Tableau {
    m: usize,
    ncol: usize,
    // row-major, width ncol + 1; last entry is the basic value
    a: Vec<f64>,
    reduced: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    flipped: Vec<bool>,
    upper: Vec<f64>,
    // columns never allowed to enter
    frozen: Vec<bool>,
}

enum Step {
    Optimal,
    Continue,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn width(&self) -> usize {
        self.ncol + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width() + j]
    }

    #[inline]
    fn beta(&self, i: usize) -> f64 {
        self.a[i * self.width() + self.ncol]
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let eff = |j: usize| if self.flipped[j] { -cost[j] } else { cost[j] };
        let mut d: Vec<f64> = (0..self.ncol).map(eff).collect();
        for i in 0..self.m {
            let cb = eff(self.basis[i]);
            if cb == 0.0 {
                continue;
            }
            let row = &self.a[i * self.width()..i * self.width() + self.ncol];
            for (dj, aij) in d.iter_mut().zip(row) {
                *dj -= cb * aij;
            }
        }
        for i in 0..self.m {
            d[self.basis[i]] = 0.0;
        }
        self.reduced = d;
    }

    fn complement(&mut self, j: usize) {
        let u = self.upper[j];
        let w = self.width();
        let ncol = self.ncol;
        for i in 0..self.m {
            let idx = i * w + j;
            let aij = self.a[idx];
            if aij != 0.0 {
                self.a[i * w + ncol] -= aij * u;
                self.a[idx] = -aij;
            }
        }
        self.reduced[j] = -self.reduced[j];
        self.flipped[j] = !self.flipped[j];
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.width();
        let piv = self.a[r * w + j];
        {
            let row = &mut self.a[r * w..(r + 1) * w];
            let inv = 1.0 / piv;
            for x in row.iter_mut() {
                *x *= inv;
            }
            row[j] = 1.0;
        }
        let pivot_row: Vec<f64> = self.a[r * w..(r + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&k| pivot_row[k] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * w + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.a[i * w..(i + 1) * w];
            for &k in &nz {
                row[k] -= f * pivot_row[k];
            }
            row[j] = 0.0;
        }
        let dj = self.reduced[j];
        if dj != 0.0 {
            for &k in &nz {
                if k < self.ncol {
                    self.reduced[k] -= dj * pivot_row[k];
                }
            }
            self.reduced[j] = 0.0;
        }
        let old = self.basis[r];
        self.is_basic[old] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    /// One pricing + ratio test + update. Returns the step length taken.
    fn iterate(&mut self, opts: &SimplexOptions, bland: bool, step_len: &mut f64) -> Step {
        let mut enter = None;
        let mut best = -opts.reduced_cost_tol;
        for j in 0..self.ncol {
            if self.is_basic[j] || self.frozen[j] || self.upper[j] == 0.0 {
                continue;
            }
            let dj = self.reduced[j];
            if dj < best {
                enter = Some(j);
                if bland {
                    break;
                }
                best = dj;
            }
        }
        let Some(j) = enter else {
            return Step::Optimal;
        };

        let mut theta = self.upper[j];
        let mut leave: Option<(usize, bool)> = None;
        let mut leave_piv = 0.0;
        for i in 0..self.m {
            let aij = self.at(i, j);
            let (ratio, to_upper) = if aij > opts.pivot_tol {
                (self.beta(i) / aij, false)
            } else if aij < -opts.pivot_tol && self.upper[self.basis[i]].is_finite() {
                ((self.upper[self.basis[i]] - self.beta(i)) / -aij, true)
            } else {
                continue;
            };
            let ratio = ratio.max(0.0);
            let better = match leave {
                None => ratio < theta,
                Some((r, _)) => {
                    if ratio < theta - 1e-12 {
                        true
                    } else if ratio <= theta + 1e-12 {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            aij.abs() > leave_piv
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                theta = ratio;
                leave = Some((i, to_upper));
                leave_piv = aij.abs();
            }
        }

        match leave {
            None if theta.is_infinite() => Step::Unbounded,
            None => {
                // entering variable runs to its own upper bound
                *step_len = theta;
                self.complement(j);
                Step::Continue
            }
            Some((r, to_upper)) => {
                *step_len = theta;
                let old = self.basis[r];
                self.pivot(r, j);
                if to_upper {
                    self.complement(old);
                }
                Step::Continue
            }
        }
    }

    fn run(
        &mut self,
        opts: &SimplexOptions,
        cap: usize,
        iterations: &mut usize,
    ) -> Result<(), LpStatus> {
        let mut streak = 0usize;
        loop {
            if *iterations >= cap {
                return Err(LpStatus::NumericFailure);
            }
            *iterations += 1;
            let mut step = 0.0;
            match self.iterate(opts, streak >= opts.degenerate_streak, &mut step) {
                Step::Optimal => return Ok(()),
                Step::Unbounded => return Err(LpStatus::NumericFailure),
                Step::Continue => {
                    if step <= 1e-12 {
                        streak += 1;
                    } else {
                        streak = 0;
                    }
                }
            }
        }
    }
}

/// Solves `lp`. Infeasible and unfinished solves are reported through
/// [`LpStatus`], never as optimal.
pub fn solve(lp: &LinearProgram, opts: &SimplexOptions) -> SimplexResult {
    let n = lp.cost.len();
    let m = lp.rows.len();
    assert_eq!(lp.upper.len(), n, "one upper bound per variable");
    assert_eq!(lp.rhs.len(), m, "one right-hand side per row");

    let ncol = n + m;
    let w = ncol + 1;
    let mut a = vec![0.0; m * w];
    for (i, row) in lp.rows.iter().enumerate() {
        let sign = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for &(j, v) in row {
            a[i * w + j] += sign * v;
        }
        a[i * w + n + i] = 1.0;
        a[i * w + ncol] = sign * lp.rhs[i];
    }
    let mut upper = lp.upper.clone();
    upper.extend(std::iter::repeat(UNBOUNDED).take(m));
    let mut tab = Tableau {
        m,
        ncol,
        a,
        reduced: vec![0.0; ncol],
        basis: (n..ncol).collect(),
        is_basic: (0..ncol).map(|j| j >= n).collect(),
        flipped: vec![false; ncol],
        upper,
        frozen: vec![false; ncol],
    };
    let cap = opts.iterations_per_variable * ncol.max(1);
    let mut iterations = 0;

    // phase 1: minimize the sum of artificials
    let mut phase1 = vec![0.0; ncol];
    phase1[n..].iter_mut().for_each(|c| *c = 1.0);
    tab.set_costs(&phase1);
    if let Err(status) = tab.run(opts, cap, &mut iterations) {
        return SimplexResult::failure(status, n, iterations, "phase 1 did not terminate");
    }
    let infeasibility: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= n)
        .map(|i| tab.beta(i))
        .sum();
    let scale = 1.0 + lp.rhs.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if infeasibility > 1e-7 * scale {
        return SimplexResult::failure(
            LpStatus::Infeasible,
            n,
            iterations,
            format!("phase 1 ended with infeasibility {infeasibility:e}"),
        );
    }

    // drive remaining artificials out of the basis
    for i in 0..m {
        if tab.basis[i] < n {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if tab.is_basic[j] {
                continue;
            }
            let v = tab.at(i, j).abs();
            if v > opts.pivot_tol && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            tab.pivot(i, j);
        }
        // otherwise the row is redundant; its artificial stays basic at zero
    }
    for j in n..ncol {
        tab.frozen[j] = true;
        tab.upper[j] = 0.0;
    }

    let mut phase2 = lp.cost.clone();
    phase2.extend(std::iter::repeat(0.0).take(m));
    tab.set_costs(&phase2);
    if let Err(status) = tab.run(opts, cap, &mut iterations) {
        return SimplexResult::failure(
            status,
            n,
            iterations,
            "phase 2 did not terminate within the iteration budget",
        );
    }

    let mut y = vec![0.0; ncol];
    for i in 0..m {
        y[tab.basis[i]] = tab.beta(i);
    }
    let mut x = vec![0.0; n];
    for j in 0..n {
        let v = if tab.flipped[j] {
            tab.upper[j] - y[j]
        } else {
            y[j]
        };
        if v < -opts.feasibility_tol || v > tab.upper[j] + opts.feasibility_tol {
            return SimplexResult::failure(
                LpStatus::NumericFailure,
                n,
                iterations,
                format!("variable {j} = {v:e} violates its bounds"),
            );
        }
        x[j] = v.clamp(0.0, tab.upper[j]);
    }
    let artificial: f64 = (n..ncol).map(|j| y[j].abs()).sum();
    for (i, row) in lp.rows.iter().enumerate() {
        let lhs: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
        let resid = (lhs - lp.rhs[i]).abs();
        if resid > opts.feasibility_tol * scale || artificial > opts.feasibility_tol * scale {
            return SimplexResult::failure(
                LpStatus::NumericFailure,
                n,
                iterations,
                format!("row {i} residual {resid:e} after phase 2"),
            );
        }
    }
    let objective = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    SimplexResult {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations,
        message: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(
        cost: Vec<f64>,
        upper: Vec<f64>,
        rows: Vec<Vec<(usize, f64)>>,
        rhs: Vec<f64>,
    ) -> LinearProgram {
        LinearProgram {
            cost,
            upper,
            rows,
            rhs,
        }
    }

    #[test]
    fn small_textbook_problem() {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3  (slacks s1, s2)
        let p = lp(
            vec![-3.0, -2.0, 0.0, 0.0],
            vec![3.0, UNBOUNDED, UNBOUNDED, UNBOUNDED],
            vec![
                vec![(0, 1.0), (1, 1.0), (2, 1.0)],
                vec![(0, 1.0), (1, 3.0), (3, 1.0)],
            ],
            vec![4.0, 6.0],
        );
        let r = solve(&p, &SimplexOptions::default());
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective + 11.0).abs() < 1e-9, "{r:?}");
        assert!((r.x[0] - 3.0).abs() < 1e-9 && (r.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        // x + y = 3 with x, y <= 1
        let p = lp(
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![vec![(0, 1.0), (1, 1.0)]],
            vec![3.0],
        );
        assert_eq!(
            solve(&p, &SimplexOptions::default()).status,
            LpStatus::Infeasible
        );
    }

    #[test]
    fn handles_redundant_rows_and_negative_rhs() {
        // x - y = -1 twice, min x + y, y <= 5
        let p = lp(
            vec![1.0, 1.0],
            vec![UNBOUNDED, 5.0],
            vec![vec![(0, 1.0), (1, -1.0)], vec![(0, 2.0), (1, -2.0)]],
            vec![-1.0, -2.0],
        );
        let r = solve(&p, &SimplexOptions::default());
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-9);
        assert!((r.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upper_bounds_bind() {
        // min -x - y, x + y + s = 10, x <= 2, y <= 3
        let p = lp(
            vec![-1.0, -1.0, 0.0],
            vec![2.0, 3.0, UNBOUNDED],
            vec![vec![(0, 1.0), (1, 1.0), (2, 1.0)]],
            vec![10.0],
        );
        let r = solve(&p, &SimplexOptions::default());
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective + 5.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_is_not_reported_optimal() {
        let p = lp(
            vec![-1.0, 0.0],
            vec![UNBOUNDED, UNBOUNDED],
            vec![vec![(0, 1.0), (1, -1.0)]],
            vec![0.0],
        );
        assert_eq!(
            solve(&p, &SimplexOptions::default()).status,
            LpStatus::NumericFailure
        );
    }

    #[test]
    fn iteration_cap_is_reported() {
        let p = lp(
            vec![-3.0, -2.0, 0.0, 0.0],
            vec![3.0, UNBOUNDED, UNBOUNDED, UNBOUNDED],
            vec![
                vec![(0, 1.0), (1, 1.0), (2, 1.0)],
                vec![(0, 1.0), (1, 3.0), (3, 1.0)],
            ],
            vec![4.0, 6.0],
        );
        let opts = SimplexOptions {
            iterations_per_variable: 0,
            ..SimplexOptions::default()
        };
        let r = solve(&p, &opts);
        assert_eq!(r.status, LpStatus::NumericFailure);
        assert!(r.objective.is_nan());
    }
}
