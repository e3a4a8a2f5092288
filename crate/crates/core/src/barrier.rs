//! Log-barrier interior-point solver for min-cost circulations.
//!
//! For a barrier weight `mu` the solver minimizes
//!
//! ```text
//! c^T f - mu * sum_e [ ln(f_e - l_e) + ln(u_e - f_e) ]   subject to  B^T f = 0
//! ```
//!
//! by Newton's method on the KKT system. The objective is strictly convex on
//! the open box, so the minimizer is unique. The start may violate
//! conservation; the primal residual is then driven to zero inside the
//! iteration (infeasible-start Newton with a residual-norm line search),
//! after which steps are damped by a backtracking line search on the barrier
//! objective. Every step is cut so that no coordinate moves more than 99% of
//! the way to its bound. The default start is already conserving.
//!
//! The outer loop shrinks `mu` geometrically until `mu <= eps / (2m)`, which
//! bounds the sub-optimality of the final circulation by `eps`.
//!
//! The linear algebra eliminates the flow step through the diagonal Hessian,
//! leaving a weighted graph Laplacian in the node potentials. One node per
//! connected component is grounded (its potential fixed at zero) and the
//! rest is solved by conjugate gradients preconditioned with a dense
//! Cholesky factor.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::CirculationProblem;
use crate::linalg::{pcg, SymMatrix};
use crate::maxflow::{FlowSolution, SolverKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierConfig {
    /// Target sub-optimality of the final circulation's cost.
    pub eps: f64,
    /// Initial barrier weight.
    pub mu0: f64,
    /// Multiplier applied to `mu` after every centering.
    pub shrink: f64,
    /// Tolerance on the scaled KKT residual of each centering.
    pub newton_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            mu0: 1.0,
            shrink: 0.1,
            newton_tol: 1e-10,
            max_outer: 64,
            max_inner: 200,
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("eps must be positive"));
        }
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(Error::invalid("mu0 must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink must lie strictly between 0 and 1"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::invalid("newton_tol must be positive"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }

    /// Largest final barrier weight allowed for `edges` edges: `eps / (2m)`.
    pub fn mu_target(&self, edges: usize) -> f64 {
        self.eps / (2.0 * edges.max(1) as f64)
    }
}

/// One completed centering of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterStep {
    pub mu: f64,
    /// `c^T f` at the centered point.
    pub cost: f64,
    pub newton_steps: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BarrierSolver {
    config: BarrierConfig,
}

const BOUNDARY_FRACTION: f64 = 0.99;
const ARMIJO: f64 = 0.01;
const BACKTRACK: f64 = 0.5;
/// Below this scaled Newton decrement the full step is taken without a line search.
const QUADRATIC_REGION: f64 = 0.25;
const PCG_TOL: f64 = 1e-15;
const PCG_MAX_ITER: usize = 50;

impl BarrierSolver {
    pub fn new(config: BarrierConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &BarrierConfig {
        &self.config
    }

    /// A strictly interior starting flow.
    ///
    /// When every lower bound is zero this is a conserving flow: each edge
    /// that lies on a directed cycle gets a positive share of one cycle
    /// through it, scaled so that no edge exceeds half its capacity. Other
    /// edges, and problems with nonzero lower bounds, get the box midpoint.
    pub fn interior_start(problem: &CirculationProblem) -> Vec<f64> {
        let mut f: Vec<f64> = problem
            .edges()
            .iter()
            .map(|e| 0.5 * (e.lower + e.upper))
            .collect();
        if problem.edges().iter().all(|e| e.lower == 0.0) {
            let keep = cyclic_edges(problem);
            if let Some(cover) = cycle_cover(problem, &keep) {
                for ((x, c), &k) in f.iter_mut().zip(cover).zip(&keep) {
                    if k {
                        *x = c;
                    }
                }
            }
        }
        f
    }

    pub fn solve(&self, problem: &CirculationProblem) -> Result<FlowSolution> {
        self.solve_from(problem, &Self::interior_start(problem))
    }

    pub fn solve_from(&self, problem: &CirculationProblem, f0: &[f64]) -> Result<FlowSolution> {
        self.solve_traced(problem, f0).map(|(sol, _)| sol)
    }

    /// Full outer loop from `f0`, returning every centering as well.
    ///
    /// Edges that lie on no directed cycle carry zero flow in every
    /// circulation; they are fixed at zero and left out of the barrier.
    pub fn solve_traced(
        &self,
        problem: &CirculationProblem,
        f0: &[f64],
    ) -> Result<(FlowSolution, Vec<OuterStep>)> {
        check_interior(problem, f0)?;
        let target = self.config.mu_target(problem.edge_count());
        let mut support = Support::of(problem, f0)?;
        let reduced = support.problem.as_ref().unwrap_or(problem);
        let mut state = Newton::new(reduced, core::mem::take(&mut support.start));
        let mut mu = self.config.mu0;
        let mut trace = Vec::new();
        for _ in 0..self.config.max_outer {
            let (steps, residual) = state.center(mu, &self.config)?;
            trace.push(OuterStep {
                mu,
                cost: reduced.cost(&state.f),
                newton_steps: steps,
                kkt_residual: residual,
            });
            if mu <= target {
                let f = support.expand(state.f);
                return Ok((finish(problem, f, mu), trace));
            }
            mu *= self.config.shrink;
        }
        Err(Error::NoConvergence {
            iterations: self.config.max_outer,
            residual: mu,
        })
    }

    /// Minimize the barrier objective for a single fixed `mu`.
    pub fn solve_at_mu(
        &self,
        problem: &CirculationProblem,
        f0: &[f64],
        mu: f64,
    ) -> Result<FlowSolution> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid("mu must be positive"));
        }
        check_interior(problem, f0)?;
        let mut support = Support::of(problem, f0)?;
        let reduced = support.problem.as_ref().unwrap_or(problem);
        let mut state = Newton::new(reduced, core::mem::take(&mut support.start));
        state.center(mu, &self.config)?;
        let f = support.expand(state.f);
        Ok(finish(problem, f, mu))
    }
}

/// The edges the barrier actually works on.
struct Support {
    /// `None` when every edge is kept.
    problem: Option<CirculationProblem>,
    kept: Vec<usize>,
    total: usize,
    start: Vec<f64>,
}

impl Support {
    fn of(problem: &CirculationProblem, f0: &[f64]) -> Result<Self> {
        let keep = cyclic_edges(problem);
        if keep.iter().all(|&k| k) {
            return Ok(Self {
                problem: None,
                kept: (0..problem.edge_count()).collect(),
                total: problem.edge_count(),
                start: f0.to_vec(),
            });
        }
        for (i, (e, &k)) in problem.edges().iter().zip(&keep).enumerate() {
            if !k && !(e.lower <= 0.0 && e.upper >= 0.0) {
                return Err(Error::invalid(alloc::format!(
                    "no feasible circulation: edge {i} lies on no cycle but must carry flow"
                )));
            }
        }
        let kept: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        let edges = kept.iter().map(|&i| problem.edges()[i]).collect();
        Ok(Self {
            problem: Some(CirculationProblem::new(problem.node_count(), edges)?),
            start: kept.iter().map(|&i| f0[i]).collect(),
            kept,
            total: problem.edge_count(),
        })
    }

    fn expand(&self, f: Vec<f64>) -> Vec<f64> {
        if self.problem.is_none() {
            return f;
        }
        let mut out = vec![0.0; self.total];
        for (&i, x) in self.kept.iter().zip(f) {
            out[i] = x;
        }
        out
    }
}

/// Whether each edge lies on a directed cycle, i.e. joins two nodes of the
/// same strongly connected component.
fn cyclic_edges(problem: &CirculationProblem) -> Vec<bool> {
    let n = problem.node_count();
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in problem.edges() {
        fwd[e.tail].push(e.head);
        rev[e.head].push(e.tail);
    }
    // Kosaraju: finishing order on the graph, then components on the reverse.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = fwd[v].get(*next) {
                *next += 1;
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    for (label, &root) in order.iter().rev().enumerate() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = label;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &w in &rev[v] {
                if comp[w] == usize::MAX {
                    comp[w] = label;
                    stack.push(w);
                }
            }
        }
    }
    problem
        .edges()
        .iter()
        .map(|e| comp[e.tail] == comp[e.head])
        .collect()
}

/// Conserving flow that is positive on every kept edge and at most half of
/// each capacity. Requires zero lower bounds.
fn cycle_cover(problem: &CirculationProblem, keep: &[bool]) -> Option<Vec<f64>> {
    let edges = problem.edges();
    let n = problem.node_count();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        if keep[i] {
            out[e.tail].push(i);
        }
    }
    // parent[b][v]: edge used to reach v in a BFS from b, kept per head.
    let mut parents: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    let mut count = vec![0usize; edges.len()];
    for (i, e) in edges.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let parent = parents[e.head].get_or_insert_with(|| {
            let mut parent = vec![usize::MAX; n];
            let mut queue = alloc::collections::VecDeque::from([e.head]);
            let mut reached = vec![false; n];
            reached[e.head] = true;
            while let Some(v) = queue.pop_front() {
                for &j in &out[v] {
                    let w = edges[j].head;
                    if !reached[w] {
                        reached[w] = true;
                        parent[w] = j;
                        queue.push_back(w);
                    }
                }
            }
            parent
        });
        let mut cycle = vec![i];
        let mut v = e.tail;
        while v != e.head {
            let j = parent[v];
            if j == usize::MAX {
                return None;
            }
            cycle.push(j);
            v = edges[j].tail;
        }
        for &j in &cycle {
            count[j] += 1;
        }
        cycles.push(cycle);
    }
    let mut f = vec![0.0; edges.len()];
    for cycle in &cycles {
        let amount = cycle
            .iter()
            .map(|&j| edges[j].upper / (2.0 * count[j] as f64))
            .fold(f64::INFINITY, f64::min);
        for &j in cycle {
            f[j] += amount;
        }
    }
    Some(f)
}

fn check_interior(problem: &CirculationProblem, f0: &[f64]) -> Result<()> {
    if f0.len() != problem.edge_count() {
        return Err(Error::shape(alloc::format!(
            "starting flow has {} entries for {} edges",
            f0.len(),
            problem.edge_count()
        )));
    }
    for (edge, (e, &f)) in problem.edges().iter().zip(f0).enumerate() {
        if !(f > e.lower && f < e.upper) {
            return Err(Error::NotInterior { edge });
        }
    }
    Ok(())
}

fn finish(problem: &CirculationProblem, f: Vec<f64>, mu: f64) -> FlowSolution {
    let residual = problem
        .incidence()
        .transpose_mul(&f)
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    FlowSolution {
        value: -problem.cost(&f),
        per_edge: f,
        solver: SolverKind::Barrier,
        residual,
        mu_final: Some(mu),
    }
}

struct Newton<'a> {
    problem: &'a CirculationProblem,
    f: Vec<f64>,
    /// Node potentials (dual of the conservation constraints).
    nu: Vec<f64>,
    /// Row of each node in the reduced Laplacian, `usize::MAX` if grounded.
    row: Vec<usize>,
    rows: usize,
}

struct Direction {
    df: Vec<f64>,
    nu_next: Vec<f64>,
    grad: Vec<f64>,
    /// `max(max_e sqrt(h_e)|df_e|, ||B^T f||_inf / (1 + ||f||_inf))`
    kkt: f64,
    /// Newton decrement of the barrier objective divided by `mu`.
    decrement: f64,
    primal: f64,
}

impl<'a> Newton<'a> {
    fn new(problem: &'a CirculationProblem, f: Vec<f64>) -> Self {
        // The smallest node of every connected component is grounded.
        let n = problem.node_count();
        let mut dsu = DisjointSets::new(n);
        for e in problem.edges() {
            dsu.union(e.tail, e.head);
        }
        let mut grounded = vec![false; n];
        let mut row = vec![usize::MAX; n];
        let mut rows = 0;
        for v in 0..n {
            let root = dsu.find(v);
            if !grounded[root] {
                grounded[root] = true;
            } else {
                row[v] = rows;
                rows += 1;
            }
        }
        Self {
            row,
            rows,
            nu: vec![0.0; n],
            problem,
            f,
        }
    }

    fn center(&mut self, mu: f64, config: &BarrierConfig) -> Result<(usize, f64)> {
        let mut last = f64::INFINITY;
        for step in 0..config.max_inner {
            let dir = self.direction(mu)?;
            last = dir.kkt;
            let t_max = self.max_step(&dir.df);
            if dir.kkt <= config.newton_tol {
                self.apply(&dir, t_max.min(1.0));
                return Ok((step + 1, dir.kkt));
            }
            let feasible = dir.primal <= 1e-12;
            let t = if feasible && dir.decrement < QUADRATIC_REGION {
                Some(t_max.min(1.0))
            } else if feasible {
                self.objective_search(mu, &dir, t_max.min(1.0))
            } else {
                self.residual_search(mu, &dir, t_max.min(1.0))
            };
            match t {
                Some(t) => self.apply(&dir, t),
                None => {
                    return Err(Error::NoConvergence {
                        iterations: step + 1,
                        residual: dir.kkt,
                    })
                }
            }
        }
        Err(Error::NoConvergence {
            iterations: config.max_inner,
            residual: last,
        })
    }

    fn gradient_hessian(&self, f: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
        self.problem
            .edges()
            .iter()
            .zip(f)
            .map(|(e, &x)| {
                let lo = x - e.lower;
                let hi = e.upper - x;
                (
                    e.cost - mu / lo + mu / hi,
                    mu / (lo * lo) + mu / (hi * hi),
                )
            })
            .unzip()
    }

    fn net_inflow(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.node_count()];
        for (e, &xe) in self.problem.edges().iter().zip(x) {
            out[e.tail] -= xe;
            out[e.head] += xe;
        }
        out
    }

    fn direction(&self, mu: f64) -> Result<Direction> {
        let (grad, hess) = self.gradient_hessian(&self.f, mu);
        let rp = self.net_inflow(&self.f);
        let row = &self.row;
        let free = |v: usize| row[v] != usize::MAX;

        // Reduced Laplacian A H^-1 A^T over the non-grounded nodes.
        let mut lap = SymMatrix::zeros(self.rows);
        // Solving for the dual increment keeps the rounding error proportional
        // to the current dual residual instead of to the multipliers.
        let mut scaled = Vec::with_capacity(grad.len());
        for (e, (&g, &h)) in self.problem.edges().iter().zip(grad.iter().zip(&hess)) {
            let w = 1.0 / h;
            scaled.push((g + self.nu[e.head] - self.nu[e.tail]) * w);
            let (a, b) = (e.tail, e.head);
            if free(a) {
                lap.add(row[a], row[a], w);
            }
            if free(b) {
                lap.add(row[b], row[b], w);
            }
            if free(a) && free(b) {
                lap.add(row[a], row[b], -w);
                lap.add(row[b], row[a], -w);
            }
        }
        let ahg = self.net_inflow(&scaled);
        let mut rhs = vec![0.0; self.rows];
        for v in (0..row.len()).filter(|&v| free(v)) {
            rhs[row[v]] = rp[v] - ahg[v];
        }
        let chol = lap.cholesky()?;
        let weights: Vec<f64> = hess.iter().map(|h| 1.0 / h).collect();
        let apply = |x: &[f64]| self.reduced_laplacian(&weights, x);
        let x0 = chol.solve(&rhs);
        let reduced = pcg(apply, |r| chol.solve(r), &rhs, x0, PCG_TOL, PCG_MAX_ITER);
        let mut nu_next = self.nu.clone();
        for v in (0..row.len()).filter(|&v| free(v)) {
            nu_next[v] += reduced[row[v]];
        }

        let mut df: Vec<f64> = self
            .problem
            .edges()
            .iter()
            .zip(grad.iter().zip(&hess))
            .map(|(e, (&g, &h))| -(g + nu_next[e.head] - nu_next[e.tail]) / h)
            .collect();
        // Rounding in the dual residual is amplified by the largest weights;
        // route what is left of B df + rp through the stiffest tree instead.
        let mut excess = self.net_inflow(&df);
        excess.iter_mut().zip(&rp).for_each(|(x, r)| *x += r);
        for (d, c) in df.iter_mut().zip(self.tree_route(&weights, excess)) {
            *d += c;
        }
        let mut kkt = 0.0f64;
        let mut decrement = 0.0f64;
        for (&d, &h) in df.iter().zip(&hess) {
            kkt = kkt.max(libm::sqrt(h) * d.abs());
            decrement += h * d * d;
        }
        let fmax = self.f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let primal = rp.iter().fold(0.0f64, |m, x| m.max(x.abs())) / (1.0 + fmax);
        Ok(Direction {
            df,
            nu_next,
            grad,
            kkt: kkt.max(primal),
            primal,
            decrement: libm::sqrt(decrement / mu),
        })
    }

    /// `B W B^T x` over the non-grounded nodes, accumulated edge by edge so
    /// that potential differences are formed before they are weighted.
    fn reduced_laplacian(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let row = &self.row;
        let pot = |v: usize| if row[v] == usize::MAX { 0.0 } else { x[row[v]] };
        let mut out = vec![0.0; x.len()];
        for (e, &w) in self.problem.edges().iter().zip(weights) {
            let flow = w * (pot(e.head) - pot(e.tail));
            if row[e.head] != usize::MAX {
                out[row[e.head]] += flow;
            }
            if row[e.tail] != usize::MAX {
                out[row[e.tail]] -= flow;
            }
        }
        out
    }

    /// Largest step keeping every coordinate within 99% of its distance to
    /// the bounds.
    fn max_step(&self, df: &[f64]) -> f64 {
        let mut t = f64::INFINITY;
        for ((e, &x), &d) in self.problem.edges().iter().zip(&self.f).zip(df) {
            if d < 0.0 {
                t = t.min(BOUNDARY_FRACTION * (x - e.lower) / -d);
            } else if d > 0.0 {
                t = t.min(BOUNDARY_FRACTION * (e.upper - x) / d);
            }
        }
        t
    }

    fn apply(&mut self, dir: &Direction, t: f64) {
        for (x, d) in self.f.iter_mut().zip(&dir.df) {
            *x += t * d;
        }
        for (v, next) in self.nu.iter_mut().zip(&dir.nu_next) {
            *v += t * (next - *v);
        }
        self.restore_conservation();
    }

    /// Route the conservation residual along a maximum-slack spanning tree.
    ///
    /// The correction is kept only if every touched edge moves by less than
    /// half of its slack.
    fn restore_conservation(&mut self) {
        let slack: Vec<f64> = self
            .problem
            .edges()
            .iter()
            .zip(&self.f)
            .map(|(e, &x)| (x - e.lower).min(e.upper - x))
            .collect();
        let correction = self.tree_route(&slack, self.net_inflow(&self.f));
        if correction
            .iter()
            .zip(&slack)
            .all(|(c, s)| c.abs() < 0.5 * s)
        {
            for (x, c) in self.f.iter_mut().zip(correction) {
                *x += c;
            }
        }
    }

    /// Edge values whose net inflow cancels `net`, supported on the spanning
    /// forest that maximizes `key`.
    fn tree_route(&self, key: &[f64], mut net: Vec<f64>) -> Vec<f64> {
        let edges = self.problem.edges();
        let n = self.problem.node_count();
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));

        let mut dsu = DisjointSets::new(n);
        let mut tree: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &e in &order {
            let (a, b) = (edges[e].tail, edges[e].head);
            if dsu.union(a, b) {
                tree[a].push(e);
                tree[b].push(e);
            }
        }

        let mut correction = vec![0.0; edges.len()];
        let mut seen = vec![false; n];
        for root in 0..n {
            if seen[root] {
                continue;
            }
            // BFS order with the tree edge leading to each node.
            seen[root] = true;
            let mut visit = vec![(root, usize::MAX)];
            let mut head = 0;
            while head < visit.len() {
                let (v, _) = visit[head];
                head += 1;
                for &e in &tree[v] {
                    let w = if edges[e].tail == v { edges[e].head } else { edges[e].tail };
                    if !seen[w] {
                        seen[w] = true;
                        visit.push((w, e));
                    }
                }
            }
            for &(v, e) in visit.iter().skip(1).rev() {
                let excess = net[v];
                let (delta, parent) = if edges[e].head == v {
                    (-excess, edges[e].tail)
                } else {
                    (excess, edges[e].head)
                };
                correction[e] += delta;
                net[v] = 0.0;
                net[parent] += excess;
            }
        }
        correction
    }

    fn trial(&self, dir: &Direction, t: f64) -> Vec<f64> {
        self.f.iter().zip(&dir.df).map(|(x, d)| x + t * d).collect()
    }

    fn barrier_objective(&self, f: &[f64], mu: f64) -> f64 {
        self.problem
            .edges()
            .iter()
            .zip(f)
            .map(|(e, &x)| e.cost * x - mu * (libm::log(x - e.lower) + libm::log(e.upper - x)))
            .sum()
    }

    fn objective_search(&self, mu: f64, dir: &Direction, mut t: f64) -> Option<f64> {
        let phi = self.barrier_objective(&self.f, mu);
        let slope: f64 = dir.grad.iter().zip(&dir.df).map(|(g, d)| g * d).sum();
        // Rounding slack: near the minimizer decreases fall below one ulp.
        let slack = 16.0 * f64::EPSILON * (1.0 + phi.abs());
        while t > 1e-16 {
            let phi_t = self.barrier_objective(&self.trial(dir, t), mu);
            if phi_t <= phi + ARMIJO * t * slope.min(0.0) + slack {
                return Some(t);
            }
            t *= BACKTRACK;
        }
        None
    }

    fn residual_norm(&self, f: &[f64], nu: &[f64], mu: f64) -> f64 {
        let (grad, _) = self.gradient_hessian(f, mu);
        let dual: f64 = self
            .problem
            .edges()
            .iter()
            .zip(&grad)
            .map(|(e, g)| {
                let r = g + nu[e.head] - nu[e.tail];
                r * r
            })
            .sum();
        let primal: f64 = self.net_inflow(f).iter().map(|r| r * r).sum();
        libm::sqrt(dual + primal)
    }

    fn residual_search(&self, mu: f64, dir: &Direction, mut t: f64) -> Option<f64> {
        let r0 = self.residual_norm(&self.f, &self.nu, mu);
        while t > 1e-16 {
            let f = self.trial(dir, t);
            let nu: Vec<f64> = self
                .nu
                .iter()
                .zip(&dir.nu_next)
                .map(|(v, next)| v + t * (next - v))
                .collect();
            if self.residual_norm(&f, &nu, mu) <= (1.0 - ARMIJO * t) * r0 {
                return Some(t);
            }
            t *= BACKTRACK;
        }
        None
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CircEdge;

    fn two_cycle() -> CirculationProblem {
        CirculationProblem::new(
            2,
            vec![
                CircEdge {
                    tail: 0,
                    head: 1,
                    lower: 0.0,
                    upper: 1.0,
                    cost: 0.0,
                },
                CircEdge {
                    tail: 1,
                    head: 0,
                    lower: 0.0,
                    upper: 1.0,
                    cost: -1.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn boundary_start_is_rejected() {
        let solver = BarrierSolver::default();
        let err = solver.solve_at_mu(&two_cycle(), &[0.0, 0.5], 0.01).unwrap_err();
        assert_eq!(err, Error::NotInterior { edge: 0 });
    }

    #[test]
    fn zero_cost_cycle_sits_at_box_center() {
        let mut p = two_cycle();
        p = CirculationProblem::new(
            2,
            p.edges()
                .iter()
                .map(|e| CircEdge { cost: 0.0, ..*e })
                .collect(),
        )
        .unwrap();
        let sol = BarrierSolver::default()
            .solve_at_mu(&p, &[0.2, 0.9], 0.1)
            .unwrap();
        for f in sol.per_edge {
            assert!((f - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn config_validation() {
        let bad = BarrierConfig {
            shrink: 1.0,
            ..BarrierConfig::default()
        };
        assert!(BarrierSolver::new(bad).is_err());
        let bad = BarrierConfig {
            eps: -1.0,
            ..BarrierConfig::default()
        };
        assert!(BarrierSolver::new(bad).is_err());
        assert_eq!(BarrierConfig::default().mu_target(9), 1e-6 / 18.0);
    }
}
