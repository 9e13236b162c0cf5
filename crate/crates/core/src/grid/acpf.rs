//! Newton-Raphson AC power flow in rectangular voltage coordinates.
//!
//! Injections follow the consumption-positive convention: a bus with load `P`
//! satisfies `Re(V · conj(Y V))_i + P_i = 0`, so generation enters with a
//! negative sign. The slack bus entry of an [`InjectionVector`] is ignored and
//! the grid draw is reported as [`VoltageSolution::slack_p`].

use crate::error::{Error, Result};
use crate::grid::linalg::Dense;
use crate::grid::network::{NetworkModel, VoltageLimits};
use crate::scalar::Scalar;

/// Bus admittance matrix split into conductance and susceptance parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Admittance<T> {
    pub g: Dense<T>,
    pub b: Dense<T>,
}

/// Builds `Y = G + jB` from branch series impedances (no shunts).
pub fn build_admittance<T: Scalar>(network: &NetworkModel<T>) -> Admittance<T> {
    let n = network.bus_count();
    let mut g = Dense::zeros(n, n);
    let mut b = Dense::zeros(n, n);
    for br in network.branches() {
        let den = br.r * br.r + br.x * br.x;
        let (gy, by) = (br.r / den, -br.x / den);
        let (i, j) = (br.from, br.to);
        g.add(i, j, -gy);
        g.add(j, i, -gy);
        b.add(i, j, -by);
        b.add(j, i, -by);
        g.add(i, i, gy);
        g.add(j, j, gy);
        b.add(i, i, by);
        b.add(j, j, by);
    }
    Admittance { g, b }
}

/// Per-bus net consumption in per-unit (load minus generation plus storage charging).
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector<T> {
    pub p: Vec<T>,
    pub q: Vec<T>,
}

impl<T: Scalar> InjectionVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![T::zero(); n],
            q: vec![T::zero(); n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.p.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution<T> {
    pub v_re: Vec<T>,
    pub v_im: Vec<T>,
    /// Active power supplied by the grid at the slack bus (p.u.).
    pub slack_p: T,
    pub slack_q: T,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: T,
}

impl<T: Scalar> VoltageSolution<T> {
    pub fn magnitudes(&self) -> Vec<T> {
        self.v_re
            .iter()
            .zip(&self.v_im)
            .map(|(&e, &f)| (e * e + f * f).sqrt())
            .collect()
    }

    #[inline]
    pub fn magnitude(&self, bus: usize) -> T {
        let (e, f) = (self.v_re[bus], self.v_im[bus]);
        (e * e + f * f).sqrt()
    }

    /// Total series `|I|² r` losses (p.u.).
    pub fn losses(&self, network: &NetworkModel<T>) -> T {
        network
            .branches()
            .iter()
            .map(|br| {
                let de = self.v_re[br.from] - self.v_re[br.to];
                let df = self.v_im[br.from] - self.v_im[br.to];
                let i2 = (de * de + df * df) / (br.r * br.r + br.x * br.x);
                i2 * br.r
            })
            .fold(T::zero(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcpfOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for AcpfOptions<T> {
    fn default() -> Self {
        let tol = T::lit(1e-8).max(T::epsilon() * T::lit(1e3));
        Self { tol, max_iter: 50 }
    }
}

/// Immutable solver: network, admittance, and index maps built once.
#[derive(Debug, Clone)]
pub struct AcpfSolver<T> {
    network: NetworkModel<T>,
    y: Admittance<T>,
    pq: Vec<usize>,
    pos: Vec<Option<usize>>,
    opts: AcpfOptions<T>,
}

impl<T: Scalar> AcpfSolver<T> {
    pub fn new(network: NetworkModel<T>) -> Self {
        Self::with_options(network, AcpfOptions::default())
    }

    pub fn with_options(network: NetworkModel<T>, opts: AcpfOptions<T>) -> Self {
        let y = build_admittance(&network);
        let slack = network.slack_bus();
        let pq: Vec<usize> = (0..network.bus_count()).filter(|&i| i != slack).collect();
        let mut pos = vec![None; network.bus_count()];
        for (k, &i) in pq.iter().enumerate() {
            pos[i] = Some(k);
        }
        Self {
            network,
            y,
            pq,
            pos,
            opts,
        }
    }

    #[inline]
    pub fn network(&self) -> &NetworkModel<T> {
        &self.network
    }

    #[inline]
    pub fn admittance(&self) -> &Admittance<T> {
        &self.y
    }

    #[inline]
    pub fn options(&self) -> AcpfOptions<T> {
        self.opts
    }

    /// Solves from a flat start at the slack reference.
    pub fn solve(&self, inj: &InjectionVector<T>) -> Result<VoltageSolution<T>> {
        let n = self.network.bus_count();
        let e = vec![self.network.v_slack(); n];
        let f = vec![T::zero(); n];
        self.iterate(inj, e, f)
    }

    /// Solves from the voltages of a previous solution.
    pub fn solve_warm(
        &self,
        inj: &InjectionVector<T>,
        warm: &VoltageSolution<T>,
    ) -> Result<VoltageSolution<T>> {
        let n = self.network.bus_count();
        if warm.v_re.len() != n || warm.v_im.len() != n {
            return Err(Error::Shape("warm start length differs from bus count".into()));
        }
        let mut e = warm.v_re.clone();
        let mut f = warm.v_im.clone();
        let s = self.network.slack_bus();
        e[s] = self.network.v_slack();
        f[s] = T::zero();
        self.iterate(inj, e, f)
    }

    fn currents(&self, e: &[T], f: &[T], a: &mut [T], b: &mut [T]) {
        let n = e.len();
        for i in 0..n {
            let (gr, br) = (self.y.g.row(i), self.y.b.row(i));
            let (mut ai, mut bi) = (T::zero(), T::zero());
            for j in 0..n {
                let (g, bb) = (gr[j], br[j]);
                if g == T::zero() && bb == T::zero() {
                    continue;
                }
                ai += g * e[j] - bb * f[j];
                bi += g * f[j] + bb * e[j];
            }
            a[i] = ai;
            b[i] = bi;
        }
    }

    fn iterate(
        &self,
        inj: &InjectionVector<T>,
        mut e: Vec<T>,
        mut f: Vec<T>,
    ) -> Result<VoltageSolution<T>> {
        let n = self.network.bus_count();
        if inj.p.len() != n || inj.q.len() != n {
            return Err(Error::Shape(format!(
                "injection length {} / {} differs from bus count {n}",
                inj.p.len(),
                inj.q.len()
            )));
        }
        let m = self.pq.len();
        let slack = self.network.slack_bus();
        let mut a = vec![T::zero(); n];
        let mut b = vec![T::zero(); n];
        let mut resid = vec![T::zero(); 2 * m];
        let mut jac = Dense::zeros(2 * m, 2 * m);
        let mut iterations = 0;
        let mut converged = false;
        let mut max_residual = T::infinity();

        for it in 0..=self.opts.max_iter {
            self.currents(&e, &f, &mut a, &mut b);
            max_residual = T::zero();
            for (k, &i) in self.pq.iter().enumerate() {
                let p_calc = e[i] * a[i] + f[i] * b[i];
                let q_calc = f[i] * a[i] - e[i] * b[i];
                resid[k] = p_calc + inj.p[i];
                resid[m + k] = q_calc + inj.q[i];
                max_residual = max_residual.max(resid[k].abs()).max(resid[m + k].abs());
            }
            iterations = it;
            if !max_residual.is_finite() {
                break;
            }
            if max_residual < self.opts.tol {
                converged = true;
                break;
            }
            if it == self.opts.max_iter {
                break;
            }
            jac.fill(T::zero());
            for (k, &i) in self.pq.iter().enumerate() {
                let (gr, br) = (self.y.g.row(i), self.y.b.row(i));
                for j in 0..n {
                    let Some(l) = self.pos[j] else { continue };
                    let (g, bb) = (gr[j], br[j]);
                    if j == i {
                        jac.set(k, l, a[i] + e[i] * g + f[i] * bb);
                        jac.set(k, m + l, b[i] - e[i] * bb + f[i] * g);
                        jac.set(m + k, l, f[i] * g - b[i] - e[i] * bb);
                        jac.set(m + k, m + l, a[i] - f[i] * bb - e[i] * g);
                    } else if g != T::zero() || bb != T::zero() {
                        jac.set(k, l, e[i] * g + f[i] * bb);
                        jac.set(k, m + l, f[i] * g - e[i] * bb);
                        jac.set(m + k, l, f[i] * g - e[i] * bb);
                        jac.set(m + k, m + l, -f[i] * bb - e[i] * g);
                    }
                }
            }
            let mut dx: Vec<T> = resid.iter().map(|&r| -r).collect();
            jac.solve_in_place(&mut dx)?;
            for (k, &i) in self.pq.iter().enumerate() {
                e[i] += dx[k];
                f[i] += dx[m + k];
            }
        }

        let slack_p = e[slack] * a[slack] + f[slack] * b[slack];
        let slack_q = f[slack] * a[slack] - e[slack] * b[slack];
        Ok(VoltageSolution {
            v_re: e,
            v_im: f,
            slack_p,
            slack_q,
            converged,
            iterations,
            max_residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation<T> {
    pub bus: usize,
    pub magnitude: T,
    pub side: LimitSide,
}

impl<T: Scalar> Violation<T> {
    /// Distance outside the violated limit (p.u.).
    pub fn excess(&self, limits: &VoltageLimits<T>) -> T {
        match self.side {
            LimitSide::Lower => limits.lower - self.magnitude,
            LimitSide::Upper => self.magnitude - limits.upper,
        }
    }
}

/// Lists buses outside `[lower, upper]`; boundaries count as inside.
pub fn violation_report<T: Scalar>(
    sol: &VoltageSolution<T>,
    limits: &VoltageLimits<T>,
) -> Result<Vec<Violation<T>>> {
    if !sol.converged {
        return Err(Error::Contract(
            "violation report requested for a non-converged solution".into(),
        ));
    }
    Ok(violations_of(&sol.magnitudes(), limits, 0..sol.v_re.len()))
}

/// Violations among `buses` for precomputed magnitudes.
pub fn violations_of<T: Scalar>(
    magnitudes: &[T],
    limits: &VoltageLimits<T>,
    buses: impl IntoIterator<Item = usize>,
) -> Vec<Violation<T>> {
    buses
        .into_iter()
        .filter_map(|bus| {
            let v = magnitudes[bus];
            if v < limits.lower {
                Some(Violation {
                    bus,
                    magnitude: v,
                    side: LimitSide::Lower,
                })
            } else if v > limits.upper {
                Some(Violation {
                    bus,
                    magnitude: v,
                    side: LimitSide::Upper,
                })
            } else {
                None
            }
        })
        .collect()
}
