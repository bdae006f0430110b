//! Per-date universe selection as a binary program.
//!
//! Given candidate synthetic longs with predicted tradability `mu`, choose
//! exactly `p_univ` of them maximising `sum(mu)` subject to:
//!
//! - near-ATM closure: a non-ATM asset may be chosen only together with its
//!   same-maturity nearest neighbour that is closer to the spot;
//! - pairing: every maturity contributes either no assets or at least two
//!   (the linearised form `u_a <= v_M`, `2 v_M <= sum u` with binary `v_M`);
//! - far pairs: of two same-maturity neighbours whose strike gap exceeds
//!   `dk_max`, at most one is chosen.
//!
//! The solver is an exact depth-first branch and bound over the assets in
//! `(maturity, strike)` order, branching on 1 before 0 and keeping the first
//! optimum found, so ties resolve deterministically toward earlier assets.

use serde::{Deserialize, Serialize};

use crate::asset::SeriesKey;
use crate::time::TradingDate;

const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub series: SeriesKey,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseProblem {
    /// Candidates in `(maturity, strike)` order.
    pub candidates: Vec<Candidate>,
    pub p_univ: usize,
    pub dk_max: f64,
    pub spot: f64,
    /// Whether each candidate is a nearest-ATM asset of its maturity.
    pub atm: Vec<bool>,
    /// Same-maturity nearest neighbour closer to the spot, for non-ATM assets.
    pub n_atm: Vec<Option<usize>>,
    /// Far pairs `(i, j)` with `i < j`.
    pub far_pairs: Vec<(usize, usize)>,
    /// Maturity group index of each candidate.
    pub group: Vec<usize>,
    pub maturities: Vec<TradingDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseSolution {
    pub selected: Vec<SeriesKey>,
    pub cardinality: usize,
    pub objective: f64,
    /// Every `p_univ` value attempted, in order.
    pub trace: Vec<usize>,
    /// False when no universe of size at least two exists.
    pub feasible: bool,
}

/// Build the program for one date. Candidates are sorted and deduplicated
/// by series.
pub fn build_problem(mut candidates: Vec<Candidate>, p_univ: usize, dk_max: f64, spot: f64) -> UniverseProblem {
    candidates.sort_by(|a, b| a.series.cmp(&b.series));
    candidates.dedup_by(|a, b| a.series == b.series);
    let n = candidates.len();
    let mut maturities: Vec<TradingDate> = candidates.iter().map(|c| c.series.expiry).collect();
    maturities.dedup();
    let group: Vec<usize> = candidates
        .iter()
        .map(|c| maturities.binary_search(&c.series.expiry).unwrap())
        .collect();

    let dist = |i: usize| (spot - candidates[i].series.k()).abs();
    let mut atm = vec![false; n];
    let mut n_atm = vec![None; n];
    let mut far_pairs = Vec::new();
    for g in 0..maturities.len() {
        let idx: Vec<usize> = (0..n).filter(|&i| group[i] == g).collect();
        let best = idx.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
        for &i in &idx {
            if dist(i) == best {
                atm[i] = true;
                continue;
            }
            let ki = candidates[i].series.k();
            // ascending strike order makes the first minimum the lower strike
            let mut parent: Option<(f64, usize)> = None;
            for &j in &idx {
                if dist(j) < dist(i) {
                    let gap = (candidates[j].series.k() - ki).abs();
                    if parent.is_none_or(|(g0, _)| gap < g0) {
                        parent = Some((gap, j));
                    }
                }
            }
            n_atm[i] = parent.map(|(_, j)| j);
        }
        let nn: Vec<f64> = idx
            .iter()
            .map(|&i| {
                idx.iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (candidates[j].series.k() - candidates[i].series.k()).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        for (x, &i) in idx.iter().enumerate() {
            for (y, &j) in idx.iter().enumerate().skip(x + 1) {
                let gap = (candidates[j].series.k() - candidates[i].series.k()).abs();
                if gap == nn[x].max(nn[y]) && gap > dk_max {
                    far_pairs.push((i, j));
                }
            }
        }
    }
    UniverseProblem {
        candidates,
        p_univ,
        dk_max,
        spot,
        atm,
        n_atm,
        far_pairs,
        group,
        maturities,
    }
}

impl UniverseProblem {
    /// Check a selection (by candidate index mask) against every constraint
    /// except the cardinality.
    pub fn is_feasible_set(&self, chosen: &[bool]) -> bool {
        for (i, p) in self.n_atm.iter().enumerate() {
            if let Some(p) = p {
                if chosen[i] && !chosen[*p] {
                    return false;
                }
            }
        }
        if self.far_pairs.iter().any(|&(i, j)| chosen[i] && chosen[j]) {
            return false;
        }
        let mut counts = vec![0usize; self.maturities.len()];
        for (i, &c) in chosen.iter().enumerate() {
            if c {
                counts[self.group[i]] += 1;
            }
        }
        counts.iter().all(|&c| c == 0 || c >= 2)
    }

    pub fn objective(&self, chosen: &[bool]) -> f64 {
        chosen
            .iter()
            .zip(&self.candidates)
            .filter(|(c, _)| **c)
            .map(|(_, a)| a.mu)
            .sum()
    }
}

struct Search<'a> {
    prob: &'a UniverseProblem,
    p: usize,
    children: Vec<Vec<usize>>,
    far: Vec<Vec<usize>>,
    by_mu: Vec<usize>,
    assign: Vec<i8>,
    trail: Vec<usize>,
    selected: usize,
    free: usize,
    obj: f64,
    group_sel: Vec<usize>,
    group_free: Vec<usize>,
    best: Option<(f64, Vec<bool>)>,
}

impl<'a> Search<'a> {
    fn new(prob: &'a UniverseProblem, p: usize) -> Self {
        let n = prob.candidates.len();
        let mut children = vec![Vec::new(); n];
        for (i, par) in prob.n_atm.iter().enumerate() {
            if let Some(par) = par {
                children[*par].push(i);
            }
        }
        let mut far = vec![Vec::new(); n];
        for &(i, j) in &prob.far_pairs {
            far[i].push(j);
            far[j].push(i);
        }
        let mut by_mu: Vec<usize> = (0..n).collect();
        by_mu.sort_by(|&a, &b| prob.candidates[b].mu.total_cmp(&prob.candidates[a].mu).then(a.cmp(&b)));
        let mut group_free = vec![0; prob.maturities.len()];
        for &g in &prob.group {
            group_free[g] += 1;
        }
        Self {
            prob,
            p,
            children,
            far,
            by_mu,
            assign: vec![-1; n],
            trail: Vec::new(),
            selected: 0,
            free: n,
            obj: 0.0,
            group_sel: vec![0; prob.maturities.len()],
            group_free,
            best: None,
        }
    }

    fn set(&mut self, i: usize, v: i8) {
        self.assign[i] = v;
        self.trail.push(i);
        self.free -= 1;
        let g = self.prob.group[i];
        self.group_free[g] -= 1;
        if v == 1 {
            self.selected += 1;
            self.group_sel[g] += 1;
            self.obj += self.prob.candidates[i].mu;
        }
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let i = self.trail.pop().unwrap();
            let g = self.prob.group[i];
            if self.assign[i] == 1 {
                self.selected -= 1;
                self.group_sel[g] -= 1;
                self.obj -= self.prob.candidates[i].mu;
            }
            self.assign[i] = -1;
            self.free += 1;
            self.group_free[g] += 1;
        }
    }

    /// Assign and propagate implications; false on conflict.
    fn assign_propagate(&mut self, i: usize, v: i8) -> bool {
        let mut stack = vec![(i, v)];
        while let Some((k, val)) = stack.pop() {
            match self.assign[k] {
                x if x == val => continue,
                -1 => {}
                _ => return false,
            }
            self.set(k, val);
            let g = self.prob.group[k];
            if self.group_sel[g] == 1 && self.group_free[g] == 0 {
                return false;
            }
            if val == 1 {
                if let Some(par) = self.prob.n_atm[k] {
                    stack.push((par, 1));
                }
                for &j in &self.far[k] {
                    stack.push((j, 0));
                }
            } else {
                for &c in &self.children[k] {
                    stack.push((c, 0));
                }
            }
        }
        self.selected <= self.p && self.selected + self.free >= self.p
    }

    fn bound(&self) -> f64 {
        let mut need = self.p - self.selected;
        let mut b = self.obj;
        for &i in &self.by_mu {
            if need == 0 {
                break;
            }
            if self.assign[i] == -1 {
                b += self.prob.candidates[i].mu;
                need -= 1;
            }
        }
        b
    }

    fn dfs(&mut self, from: usize) {
        if let Some((best, _)) = &self.best {
            if self.bound() <= best + TOL {
                return;
            }
        }
        let n = self.assign.len();
        let next = (from..n).find(|&i| self.assign[i] == -1);
        let Some(i) = next else {
            if self.selected == self.p && self.group_sel.iter().all(|&c| c == 0 || c >= 2) {
                let better = self.best.as_ref().is_none_or(|(b, _)| self.obj > b + TOL);
                if better {
                    self.best = Some((self.obj, self.assign.iter().map(|&a| a == 1).collect()));
                }
            }
            return;
        };
        for v in [1i8, 0] {
            let mark = self.trail.len();
            if self.assign_propagate(i, v) {
                self.dfs(i + 1);
            }
            self.undo(mark);
        }
    }
}

/// Exact optimum for a fixed cardinality, as a candidate mask.
pub fn solve_fixed(prob: &UniverseProblem, p: usize) -> Option<(f64, Vec<bool>)> {
    if p > prob.candidates.len() {
        return None;
    }
    let mut s = Search::new(prob, p);
    s.dfs(0);
    s.best
}

/// Solve with fallback: if `p_univ` is infeasible, decrement until a
/// feasible size of at least two is found.
pub fn solve_universe(prob: &UniverseProblem) -> UniverseSolution {
    let mut trace = Vec::new();
    let mut p = prob.p_univ;
    while p >= 2 {
        trace.push(p);
        if let Some((objective, mask)) = solve_fixed(prob, p) {
            if trace.len() > 1 {
                log::debug!("universe size reduced to {p} (trace {trace:?})");
            }
            let selected: Vec<SeriesKey> = mask
                .iter()
                .zip(&prob.candidates)
                .filter(|(m, _)| **m)
                .map(|(_, c)| c.series)
                .collect();
            return UniverseSolution {
                cardinality: selected.len(),
                selected,
                objective,
                trace,
                feasible: true,
            };
        }
        p -= 1;
    }
    UniverseSolution {
        selected: Vec::new(),
        cardinality: 0,
        objective: 0.0,
        trace,
        feasible: false,
    }
}
