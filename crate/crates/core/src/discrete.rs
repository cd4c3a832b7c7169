//! Exact discrete optimal transport with cost `‖x − y‖²/2`.
//!
//! The transportation problem is solved by the primal network simplex on the
//! bipartite graph of source and target atoms. A basis is a spanning tree of
//! `m₁ + m₂ − 1` cells; potentials `u_i + v_j = c_ij` on the tree give the
//! reduced costs used for pricing. Pricing scans blocks of cells for the most
//! negative reduced cost; after a run of degenerate pivots it switches to
//! Bland's smallest-index rule until the objective moves again.

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::power::shifted_cost;

/// Sparse optimal coupling on merged atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// `(i, j, mass)` with `mass > 0`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `Σ mass · ‖x_i − y_j‖²/2`.
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, m) in &self.entries {
            s[i] += m;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, m) in &self.entries {
            s[j] += m;
        }
        s
    }
}

/// Kantorovich potentials, shifted so that `min φ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl DualPair {
    pub fn value(&self, u1: &[f64], u2: &[f64]) -> f64 {
        let a: f64 = self.phi.iter().zip(u1).map(|(p, u)| p * u).sum();
        let b: f64 = self.psi.iter().zip(u2).map(|(p, u)| p * u).sum();
        a + b
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteOtOptions {
    /// Largest admissible `m₁ · m₂`.
    pub size_cap: usize,
    /// Merged atoms lighter than this are rejected.
    pub min_weight: f64,
}

impl Default for DiscreteOtOptions {
    fn default() -> Self {
        Self {
            size_cap: 4_000_000,
            min_weight: 1e-15,
        }
    }
}

/// Plan and potentials together with the merged measures they refer to.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub plan: TransportPlan,
    pub duals: DualPair,
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub pivots: usize,
}

impl DiscreteSolution {
    pub fn dual_value(&self) -> f64 {
        self.duals.value(self.source.weights(), self.target.weights())
    }

    /// `|primal − dual|`.
    pub fn duality_gap(&self) -> f64 {
        (self.plan.cost - self.dual_value()).abs()
    }
}

/// Optimal plan and potentials with default options.
pub fn solve_discrete(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<(TransportPlan, DualPair)> {
    let sol = solve_discrete_with(mu1, mu2, &DiscreteOtOptions::default())?;
    Ok((sol.plan, sol.duals))
}

pub fn solve_discrete_with(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    opts: &DiscreteOtOptions,
) -> Result<DiscreteSolution> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu1.dim(),
            found: mu2.dim(),
        });
    }
    let (source, _) = mu1.merge_duplicates();
    let (target, _) = mu2.merge_duplicates();
    let (m1, m2) = (source.len(), target.len());
    let entries = m1.saturating_mul(m2);
    if entries > opts.size_cap {
        return Err(Error::InstanceTooLarge {
            entries,
            cap: opts.size_cap,
        });
    }
    for &w in source.weights().iter().chain(target.weights()) {
        if w < opts.min_weight {
            return Err(Error::DegenerateWeights {
                weight: w,
                threshold: opts.min_weight,
            });
        }
    }

    let mut cost = vec![0.0; entries];
    for i in 0..m1 {
        for j in 0..m2 {
            cost[i * m2 + j] = shifted_cost(source.point(i), target.point(j), 0.0);
        }
    }
    let mut simplex = Simplex::new(m1, m2, &cost, source.weights(), target.weights());
    let pivots = simplex.run()?;
    let u = simplex.row_potentials();

    // tighten to a c-concave pair; optimal values are unchanged
    let psi = c_transform_dense(&cost, m1, m2, &u);
    let phi = c_transform_rows(&cost, m1, m2, &psi);
    let shift = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let phi: Vec<f64> = phi.iter().map(|p| p - shift).collect();
    let psi: Vec<f64> = psi.iter().map(|p| p + shift).collect();

    let mut plan_entries: Vec<(usize, usize, f64)> = simplex
        .basis
        .iter()
        .zip(&simplex.flow)
        .filter(|(_, &f)| f > 0.0)
        .map(|(&(i, j), &f)| (i, j, f))
        .collect();
    plan_entries.sort_by_key(|&(i, j, _)| (i, j));
    let plan_cost = plan_entries.iter().map(|&(i, j, f)| f * cost[i * m2 + j]).sum();
    Ok(DiscreteSolution {
        plan: TransportPlan {
            rows: m1,
            cols: m2,
            entries: plan_entries,
            cost: plan_cost,
        },
        duals: DualPair { phi, psi },
        source,
        target,
        pivots,
    })
}

/// `ψ_j = min_i c_ij − φ_i`, lowest `i` on ties.
fn c_transform_dense(cost: &[f64], m1: usize, m2: usize, phi: &[f64]) -> Vec<f64> {
    (0..m2)
        .map(|j| {
            (0..m1)
                .map(|i| cost[i * m2 + j] - phi[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn c_transform_rows(cost: &[f64], m1: usize, m2: usize, psi: &[f64]) -> Vec<f64> {
    (0..m1)
        .map(|i| {
            (0..m2)
                .map(|j| cost[i * m2 + j] - psi[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `φᶜ_j = min_i ‖x_i − y_j‖²/2 − φ_i` for flat point arrays.
pub fn discrete_c_transform(phi: &[f64], atoms1: &[f64], atoms2: &[f64], dim: usize) -> Vec<f64> {
    atoms2
        .chunks_exact(dim)
        .map(|y| {
            let mut best = f64::INFINITY;
            for (x, &p) in atoms1.chunks_exact(dim).zip(phi) {
                let v = shifted_cost(x, y, p);
                if v < best {
                    best = v;
                }
            }
            best
        })
        .collect()
}

/// Minimal uniform assignment cost by enumerating all permutations.
pub fn oracle_assignment(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<f64> {
    let m = mu1.len();
    if m != mu2.len() || m > 8 {
        return Err(Error::OracleSizeExceeded(format!("{} x {} atoms (need equal, at most 8)", m, mu2.len())));
    }
    let uniform = |mu: &DiscreteMeasure| mu.weights().iter().all(|&w| (w - 1.0 / m as f64).abs() <= 1e-12);
    if !uniform(mu1) || !uniform(mu2) {
        return Err(Error::OracleSizeExceeded("weights are not uniform".into()));
    }
    let cost: Vec<f64> = (0..m * m)
        .map(|k| shifted_cost(mu1.point(k / m), mu2.point(k % m), 0.0))
        .collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum::<f64>();
    // Heap's algorithm
    let mut c = vec![0usize; m];
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / m as f64)
}

struct Simplex<'a> {
    m1: usize,
    m2: usize,
    cost: &'a [f64],
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    // tree state, rebuilt after each pivot
    pot: Vec<f64>,
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
    is_basic: Vec<bool>,
    tol: f64,
    cursor: usize,
}

const NONE: usize = usize::MAX;

impl<'a> Simplex<'a> {
    fn new(m1: usize, m2: usize, cost: &'a [f64], a: &[f64], b: &[f64]) -> Self {
        // north-west corner start; always m1 + m2 - 1 cells forming a staircase tree
        let mut basis = Vec::with_capacity(m1 + m2 - 1);
        let mut flow = Vec::with_capacity(m1 + m2 - 1);
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]).max(0.0);
            basis.push((i, j));
            flow.push(x);
            ra[i] -= x;
            rb[j] -= x;
            if i == m1 - 1 && j == m2 - 1 {
                break;
            }
            if j == m2 - 1 || (i < m1 - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        // residual imbalance from rounding lands in the last cell
        let last = flow.len() - 1;
        flow[last] += ra[m1 - 1].min(rb[m2 - 1]).max(0.0);

        let mut is_basic = vec![false; m1 * m2];
        for &(i, j) in &basis {
            is_basic[i * m2 + j] = true;
        }
        let max_cost = cost.iter().fold(0.0f64, |s, c| s.max(c.abs()));
        let n = m1 + m2;
        Self {
            m1,
            m2,
            cost,
            basis,
            flow,
            pot: vec![0.0; n],
            parent: vec![NONE; n],
            parent_edge: vec![NONE; n],
            depth: vec![0; n],
            is_basic,
            tol: 1e-12 * (1.0 + max_cost),
            cursor: 0,
        }
    }

    fn rebuild_tree(&mut self) {
        let n = self.m1 + self.m2;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (e, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push(e);
            adj[self.m1 + j].push(e);
        }
        self.parent.iter_mut().for_each(|p| *p = NONE);
        self.parent[0] = 0;
        self.parent_edge[0] = NONE;
        self.depth[0] = 0;
        self.pot[0] = 0.0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &e in &adj[node] {
                let (i, j) = self.basis[e];
                let (row, col) = (i, self.m1 + j);
                let other = if node == row { col } else { row };
                if self.parent[other] != NONE {
                    continue;
                }
                self.parent[other] = node;
                self.parent_edge[other] = e;
                self.depth[other] = self.depth[node] + 1;
                let c = self.cost[i * self.m2 + j];
                self.pot[other] = c - self.pot[node];
                queue.push_back(other);
            }
        }
    }

    fn reduced(&self, k: usize) -> f64 {
        let (i, j) = (k / self.m2, k % self.m2);
        self.cost[k] - self.pot[i] - self.pot[self.m1 + j]
    }

    /// Most negative reduced cost within the first block that has one.
    fn price_block(&mut self) -> Option<usize> {
        let total = self.m1 * self.m2;
        let block = ((total as f64).sqrt() as usize).max(64).min(total);
        let mut scanned = 0;
        let mut best: Option<(f64, usize)> = None;
        while scanned < total {
            let end = (scanned + block).min(total);
            for _ in scanned..end {
                let k = self.cursor;
                self.cursor += 1;
                if self.cursor == total {
                    self.cursor = 0;
                }
                if self.is_basic[k] {
                    continue;
                }
                let r = self.reduced(k);
                if r < -self.tol && best.is_none_or(|(b, _)| r < b) {
                    best = Some((r, k));
                }
            }
            scanned = end;
            if best.is_some() {
                break;
            }
        }
        best.map(|(_, k)| k)
    }

    fn price_bland(&self) -> Option<usize> {
        (0..self.m1 * self.m2).find(|&k| !self.is_basic[k] && self.reduced(k) < -self.tol)
    }

    /// Tree edges on the cycle closed by entering cell `(i, j)`, ordered from
    /// column `j` to row `i`.
    fn cycle(&self, i: usize, j: usize) -> Vec<usize> {
        let (mut a, mut b) = (self.m1 + j, i);
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_a.push(self.parent_edge[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            from_b.push(self.parent_edge[b]);
            b = self.parent[b];
        }
        while a != b {
            from_a.push(self.parent_edge[a]);
            a = self.parent[a];
            from_b.push(self.parent_edge[b]);
            b = self.parent[b];
        }
        from_a.extend(from_b.into_iter().rev());
        from_a
    }

    fn run(&mut self) -> Result<usize> {
        let max_pivots = 50 * (self.m1 * self.m2) + 10_000;
        let mut degenerate_run = 0;
        let mut bland = false;
        for pivot in 0..max_pivots {
            self.rebuild_tree();
            let entering = if bland { self.price_bland() } else { self.price_block() };
            let Some(k) = entering else {
                return Ok(pivot);
            };
            let (i, j) = (k / self.m2, k % self.m2);
            let cycle = self.cycle(i, j);
            // odd positions (0-based even) lose mass
            let mut theta = f64::INFINITY;
            let mut leaving = NONE;
            for &e in cycle.iter().step_by(2) {
                let f = self.flow[e];
                let (bi, bj) = self.basis[e];
                let idx = bi * self.m2 + bj;
                let better = f < theta
                    || (f == theta && leaving != NONE && {
                        let (li, lj) = self.basis[leaving];
                        idx < li * self.m2 + lj
                    });
                if better {
                    theta = f;
                    leaving = e;
                }
            }
            for (pos, &e) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[e] -= theta;
                } else {
                    self.flow[e] += theta;
                }
            }
            let (li, lj) = self.basis[leaving];
            self.is_basic[li * self.m2 + lj] = false;
            self.is_basic[k] = true;
            self.basis[leaving] = (i, j);
            self.flow[leaving] = theta;

            if theta == 0.0 {
                degenerate_run += 1;
                if degenerate_run > 50 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
        Err(Error::NonConvergence {
            iterations: max_pivots,
            residual: f64::NAN,
        })
    }

    fn row_potentials(&mut self) -> Vec<f64> {
        self.rebuild_tree();
        self.pot[..self.m1].to_vec()
    }
}
