//! Small conic-program builder over Clarabel, with a plain-text listing.
//!
//! Listing format, one record per line:
//!
//! ```text
//! conic-program <n_vars> <n_rows>
//! var <index> <name>
//! objective <index> <coef>          (linear term, repeated)
//! cone zero|nonneg|soc <dim>        (blocks in row order)
//! row <row> <b> [<index> <coef>]... (encodes A x + s = b, s in the cone)
//! ```

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

/// Sparse affine expression `c + Σ coef · x[index]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(i: usize, coef: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(i, coef)],
        }
    }

    pub fn add(mut self, i: usize, coef: f64) -> Self {
        self.terms.push((i, coef));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Zero,
    Nonneg,
    Soc,
}

/// `(b, a)` with sparse `a`.
type Row = (f64, Vec<(usize, f64)>);

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    objective: Vec<f64>,
    /// Rows as `(b, a)` meaning `b − a·x` lies in the cone.
    zero: Vec<Row>,
    nonneg: Vec<Row>,
    soc: Vec<Vec<Row>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConicTolerances {
    pub feasibility: f64,
    pub gap: f64,
    pub max_iter: u32,
}

impl Default for ConicTolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            gap: 1e-9,
            max_iter: 200,
        }
    }
}

fn neg(e: &Affine) -> Row {
    // e(x) = c + a·x = b − A x with b = c, A = −a
    (e.constant, e.terms.iter().map(|&(i, c)| (i, -c)).collect())
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.objective.push(0.0);
        self.names.len() - 1
    }

    pub fn var_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn row_count(&self) -> usize {
        self.zero.len() + self.nonneg.len() + self.soc.iter().map(Vec::len).sum::<usize>()
    }

    /// Adds `coef · x[i]` to the minimized objective.
    pub fn add_objective(&mut self, i: usize, coef: f64) {
        self.objective[i] += coef;
    }

    pub fn add_objective_expr(&mut self, e: &Affine) {
        for &(i, c) in &e.terms {
            self.objective[i] += c;
        }
    }

    /// `e(x) = 0`.
    pub fn eq(&mut self, e: Affine) {
        self.zero.push(neg(&e));
    }

    /// `e(x) ≥ 0`.
    pub fn nonneg(&mut self, e: Affine) {
        self.nonneg.push(neg(&e));
    }

    /// `lo ≤ x[i] ≤ hi`.
    pub fn bound(&mut self, i: usize, lo: f64, hi: f64) {
        self.nonneg(Affine::var(i, 1.0).plus_const(-lo));
        self.nonneg(Affine::var(i, -1.0).plus_const(hi));
    }

    /// `es[0](x) ≥ ‖(es[1](x), …)‖₂`.
    pub fn soc(&mut self, es: &[Affine]) {
        self.soc.push(es.iter().map(neg).collect());
    }

    fn ordered(&self) -> Vec<(Block, &Row)> {
        let mut rows: Vec<_> = self.zero.iter().map(|r| (Block::Zero, r)).collect();
        rows.extend(self.nonneg.iter().map(|r| (Block::Nonneg, r)));
        for c in &self.soc {
            rows.extend(c.iter().map(|r| (Block::Soc, r)));
        }
        rows
    }

    fn cones(&self) -> Vec<(Block, usize)> {
        let mut cones = Vec::new();
        if !self.zero.is_empty() {
            cones.push((Block::Zero, self.zero.len()));
        }
        if !self.nonneg.is_empty() {
            cones.push((Block::Nonneg, self.nonneg.len()));
        }
        cones.extend(self.soc.iter().map(|c| (Block::Soc, c.len())));
        cones
    }

    pub fn solve(&self, tol: ConicTolerances) -> Result<ConicSolution> {
        let n = self.var_count();
        let rows = self.ordered();
        let m = rows.len();
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        for (r, (_, (bi, a))) in rows.iter().enumerate() {
            b.push(*bi);
            for &(j, c) in a {
                ii.push(r);
                jj.push(j);
                vv.push(c);
            }
        }
        let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
        let p = CscMatrix::zeros((n, n));
        let cones: Vec<SupportedConeT<f64>> = self
            .cones()
            .into_iter()
            .map(|(k, d)| match k {
                Block::Zero => SupportedConeT::ZeroConeT(d),
                Block::Nonneg => SupportedConeT::NonnegativeConeT(d),
                Block::Soc => SupportedConeT::SecondOrderConeT(d),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(tol.feasibility)
            .tol_gap_abs(tol.gap)
            .tol_gap_rel(tol.gap)
            .max_iter(tol.max_iter)
            .build()
            .map_err(|e| Error::Solver(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &self.objective, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("problem setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(ConicSolution {
                x: sol.x.clone(),
                objective: sol.obj_val,
                dual_objective: sol.obj_val_dual,
                iterations: sol.iterations,
            }),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Err(Error::Infeasible("conic relaxation is infeasible".into()))
            }
            s => Err(Error::Solver(format!("conic solve ended with {s:?}"))),
        }
    }

    pub fn listing(&self) -> String {
        let rows = self.ordered();
        let mut s = format!("conic-program {} {}\n", self.var_count(), rows.len());
        for (i, name) in self.names.iter().enumerate() {
            let _ = writeln!(s, "var {i} {name}");
        }
        for (i, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = writeln!(s, "objective {i} {c:e}");
            }
        }
        for (k, d) in self.cones() {
            let kind = match k {
                Block::Zero => "zero",
                Block::Nonneg => "nonneg",
                Block::Soc => "soc",
            };
            let _ = writeln!(s, "cone {kind} {d}");
        }
        for (r, (_, (b, a))) in rows.iter().enumerate() {
            let _ = write!(s, "row {r} {b:e}");
            for &(j, c) in a {
                let _ = write!(s, " {j} {c:e}");
            }
            s.push('\n');
        }
        s
    }
}
