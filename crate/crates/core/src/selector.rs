//! Exact minimal-sum-of-radii subset selection.
//!
//! Given an `n1 × T` matrix `E` of normed residuals and a count `p1`, find
//! radii `r_0..r_{T-1}` with the smallest sum such that at least `p1` rows of
//! `E` are componentwise below `r`. Choosing the rows fixes the radii (they
//! are the columnwise maxima of the chosen rows), so the problem is a pure
//! selection problem.
//!
//! The solver follows the usual pipeline:
//!
//! 1. a cheap feasible selection (rows with the smallest residual sum),
//! 2. two reduction sets: rows that every optimum covers (`S1`) and rows
//!    no optimum can cover (`S2`),
//! 3. an exact branch-and-bound over the remaining rows.
//!
//! Ties between optima are broken towards the lexicographically smallest
//! sorted index set, so results are reproducible on data with ties.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use thiserror::Error;

/// Default branch-and-bound node budget.
pub const DEFAULT_NODE_LIMIT: u64 = 10_000_000;
/// Default cap on the number of subsets the brute-force oracle enumerates.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

// integer tolerance for the ceiling in `quantile_index`
const RANK_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("insufficient data: need n >= {required_n} for epsilon {epsilon} (have {n})")]
    InsufficientData { epsilon: f64, n: usize, required_n: usize },
    #[error("invalid epsilon {0}: must lie in (0, 1)")]
    InvalidEpsilon(f64),
    #[error("invalid selection problem: {0}")]
    InvalidProblem(String),
    #[error("enumeration of {subsets} subsets exceeds cap {cap}")]
    EnumerationCapExceeded { subsets: u128, cap: u128 },
    #[error("no subset of size p1 is feasible")]
    InfeasibleP,
}

/// `p = ceil((1 - epsilon) (n + 1))`, the rank of the conformal order statistic.
pub fn quantile_index(epsilon: f64, n: usize) -> Result<usize, SelectError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SelectError::InvalidEpsilon(epsilon));
    }
    if n == 0 {
        return Err(SelectError::InsufficientData { epsilon, n, required_n: minimal_n(epsilon) });
    }
    let p = raw_rank(epsilon, n);
    if p > n {
        return Err(SelectError::InsufficientData { epsilon, n, required_n: minimal_n(epsilon) });
    }
    Ok(p)
}

fn raw_rank(epsilon: f64, n: usize) -> usize {
    let x = (1.0 - epsilon) * (n as f64 + 1.0);
    // products such as 0.7 * 10 land a few ulps above the integer
    let p = (x - RANK_SLACK * x.max(1.0)).ceil();
    p.max(1.0) as usize
}

fn minimal_n(epsilon: f64) -> usize {
    let mut n = ((1.0 - epsilon) / epsilon).floor().max(1.0) as usize;
    while n > 1 && raw_rank(epsilon, n - 1) < n {
        n -= 1;
    }
    while raw_rank(epsilon, n) > n {
        n += 1;
    }
    n
}

/// The `n1 × T` matrix of normed residuals plus the required cover count.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    rows: usize,
    horizon: usize,
    // row-major
    data: Vec<f64>,
    p1: usize,
}

impl SelectionProblem {
    pub fn new(rows: &[Vec<f64>], p1: usize) -> Result<Self, SelectError> {
        let horizon = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(SelectError::InvalidProblem("ragged rows".into()));
        }
        Self::from_flat(rows.len(), horizon, rows.concat(), p1)
    }

    pub fn from_flat(rows: usize, horizon: usize, data: Vec<f64>, p1: usize) -> Result<Self, SelectError> {
        if rows == 0 || horizon == 0 {
            return Err(SelectError::InvalidProblem("need n1 >= 1 and T >= 1".into()));
        }
        if data.len() != rows * horizon {
            return Err(SelectError::InvalidProblem(format!(
                "expected {} entries, found {}",
                rows * horizon,
                data.len()
            )));
        }
        if p1 == 0 || p1 > rows {
            return Err(SelectError::InvalidProblem(format!("p1 = {p1} outside [1, {rows}]")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(SelectError::InvalidProblem(format!(
                "entry ({}, {}) = {} is not a finite nonnegative value",
                pos / horizon,
                pos % horizon,
                data[pos]
            )));
        }
        Ok(Self { rows, horizon, data, p1 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.data[i * self.horizon + t]
    }

    pub fn with_p1(&self, p1: usize) -> Result<Self, SelectError> {
        Self::from_flat(self.rows, self.horizon, self.data.clone(), p1)
    }

    /// Rows in the order given by `perm` (`perm[k]` is the old index of new row `k`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, SelectError> {
        if perm.len() != self.rows {
            return Err(SelectError::InvalidProblem("permutation length mismatch".into()));
        }
        let data = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::from_flat(self.rows, self.horizon, data, self.p1)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, SelectError> {
        let data = self.data.iter().map(|v| v * factor).collect();
        Self::from_flat(self.rows, self.horizon, data, self.p1)
    }

    /// Sum over time of the columnwise maxima of `subset`.
    pub fn subset_cost(&self, subset: &[usize]) -> f64 {
        radii_cost(&self.subset_radii(subset))
    }

    pub fn subset_radii(&self, subset: &[usize]) -> Vec<f64> {
        let mut r = vec![0.0f64; self.horizon];
        for &i in subset {
            for (rt, &v) in r.iter_mut().zip(self.row(i)) {
                *rt = rt.max(v);
            }
        }
        r
    }

    fn columnwise_max(&self) -> Vec<f64> {
        self.subset_radii(&(0..self.rows).collect::<Vec<_>>())
    }
}

/// Objective value: left-to-right sum of the radii.
pub fn radii_cost(radii: &[f64]) -> f64 {
    radii.iter().fold(0.0, |acc, r| acc + r)
}

/// Optimal radii together with the covered-row certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusProfile {
    pub radii: Vec<f64>,
    /// Covered rows, ascending.
    pub selected: Vec<usize>,
    pub cost: f64,
    pub provably_optimal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    /// Rows covered by every optimum (`S1`).
    pub always_covered: Vec<usize>,
    /// Rows no optimum covers (`S2`).
    pub never_covered: Vec<usize>,
    /// Remaining candidates (`S`).
    pub candidates: Vec<usize>,
    pub feasible_radii: Vec<f64>,
    pub coordinate_quantile: Vec<f64>,
}

/// Per-column `p1`-th smallest value (1-indexed).
pub fn coordinatewise_quantile(problem: &SelectionProblem) -> Vec<f64> {
    let mut column = Vec::with_capacity(problem.rows);
    (0..problem.horizon)
        .map(|t| {
            column.clear();
            column.extend((0..problem.rows).map(|i| problem.get(i, t)));
            let (_, kth, _) = column.select_nth_unstable_by(problem.p1 - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect()
}

/// Feasible selection from the `p1` rows with the smallest residual sums
/// (ties by ascending row index). Returns the radii and the chosen rows in
/// the order they were picked.
pub fn heuristic_feasible(problem: &SelectionProblem) -> (Vec<f64>, Vec<usize>) {
    let totals: Vec<f64> = (0..problem.rows).map(|i| radii_cost(problem.row(i))).collect();
    let mut order: Vec<usize> = (0..problem.rows).collect();
    order.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
    order.truncate(problem.p1);
    (problem.subset_radii(&order), order)
}

/// Reduction sets relative to a feasible radius vector.
pub fn compute_prune_sets(problem: &SelectionProblem, feasible_radii: &[f64]) -> PruneResult {
    let quantile = coordinatewise_quantile(problem);
    let mut always = Vec::new();
    let mut never = Vec::new();
    let mut rest = Vec::new();
    for i in 0..problem.rows {
        let row = problem.row(i);
        if row.iter().zip(&quantile).all(|(e, q)| e <= q) {
            always.push(i);
        } else if row.iter().zip(feasible_radii).all(|(e, r)| e > r) {
            never.push(i);
        } else {
            rest.push(i);
        }
    }
    PruneResult {
        always_covered: always,
        never_covered: never,
        candidates: rest,
        feasible_radii: feasible_radii.to_vec(),
        coordinate_quantile: quantile,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    pub prune: bool,
    pub node_limit: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { prune: true, node_limit: DEFAULT_NODE_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub nodes: u64,
    pub elapsed: Duration,
    pub always_covered: usize,
    pub never_covered: usize,
    /// Rows the branch-and-bound actually searched over.
    pub candidates: usize,
    /// The reduction alone determined the optimum.
    pub corner_case: bool,
    pub node_limit_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub profile: RadiusProfile,
    pub stats: SolveStats,
}

/// Solves the selection problem exactly.
///
/// Hitting the node limit is not an error: the best incumbent is returned
/// with `provably_optimal == false` and `stats.node_limit_hit` set.
pub fn solve_optimal_radii(problem: &SelectionProblem, options: &SolveOptions) -> Result<Solution, SelectError> {
    let start = Instant::now();
    let horizon = problem.horizon;
    let (feasible_radii, heuristic_rows) = heuristic_feasible(problem);

    let (candidates, floor, need, always, never) = if options.prune {
        let pruned = compute_prune_sets(problem, &feasible_radii);
        if pruned.always_covered.len() >= problem.p1 {
            let mut selected = pruned.always_covered[..problem.p1].to_vec();
            selected.sort_unstable();
            let radii = pruned.coordinate_quantile.clone();
            let stats = SolveStats {
                nodes: 0,
                elapsed: start.elapsed(),
                always_covered: pruned.always_covered.len(),
                never_covered: pruned.never_covered.len(),
                candidates: pruned.candidates.len(),
                corner_case: true,
                node_limit_hit: false,
            };
            let cost = radii_cost(&radii);
            return Ok(Solution { profile: RadiusProfile { radii, selected, cost, provably_optimal: true }, stats });
        }
        let floor = problem.subset_radii(&pruned.always_covered);
        let need = problem.p1 - pruned.always_covered.len();
        (pruned.candidates, floor, need, pruned.always_covered, pruned.never_covered)
    } else {
        ((0..problem.rows).collect(), vec![0.0; horizon], problem.p1, Vec::new(), Vec::new())
    };

    if candidates.len() < need {
        return Err(SelectError::InfeasibleP);
    }

    let mut search = Search::new(problem, &candidates, floor, need, options.node_limit);

    // seed the incumbent with the heuristic rows that survived the reduction
    let seed: Vec<usize> = heuristic_rows.iter().filter_map(|i| candidates.binary_search(i).ok()).collect();
    if seed.len() == need {
        search.offer_incumbent(&seed);
    }
    search.optimize();
    let mut best = search.incumbent.clone().ok_or(SelectError::InfeasibleP)?;
    let proven = !search.aborted;
    if proven {
        best = search.lexicographic_min(best);
    }

    let mut selected: Vec<usize> = always.clone();
    selected.extend(best.iter().map(|&l| candidates[l]));
    selected.sort_unstable();
    let radii = problem.subset_radii(&selected);
    let cost = radii_cost(&radii);
    let stats = SolveStats {
        nodes: search.nodes,
        elapsed: start.elapsed(),
        always_covered: always.len(),
        never_covered: never.len(),
        candidates: candidates.len(),
        corner_case: false,
        node_limit_hit: search.aborted,
    };
    Ok(Solution { profile: RadiusProfile { radii, selected, cost, provably_optimal: !search.aborted }, stats })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Free,
    In,
    Out,
}

enum Mode {
    Optimize,
    Decide { target: f64 },
}

/// Branch-and-bound over "which candidate rows stay uncovered".
///
/// At every node the rows still free split into riders (componentwise below
/// the current floor, so covering them is free) and heavy rows. Exactly
/// `budget` heavy rows have to be dropped. Two lower bounds are combined:
/// per column, dropping `budget` rows cannot push the radius below the
/// `(budget+1)`-th largest heavy value; and across columns, the total
/// reduction is at most the sum of the `budget` largest per-row gains,
/// where a row's gain collects the gaps between consecutive top values it
/// occupies in each column.
struct Search {
    horizon: usize,
    // candidate-local row-major values
    values: Vec<f64>,
    // per column: local rows sorted by value descending, index ascending
    col_order: Vec<Vec<usize>>,
    need: usize,
    status: Vec<Status>,
    floor: Vec<f64>,
    n_in: usize,
    n_out: usize,
    nodes: u64,
    node_limit: u64,
    aborted: bool,
    incumbent: Option<Vec<usize>>,
    incumbent_cost: f64,
    mode: Mode,
    witness: Option<Vec<usize>>,
    // scratch
    gain: Vec<f64>,
    touched: Vec<usize>,
}

impl Search {
    fn new(problem: &SelectionProblem, candidates: &[usize], floor: Vec<f64>, need: usize, node_limit: u64) -> Self {
        let horizon = problem.horizon;
        let m = candidates.len();
        let values: Vec<f64> = candidates.iter().flat_map(|&i| problem.row(i).iter().copied()).collect();
        let col_order = (0..horizon)
            .map(|t| {
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| values[b * horizon + t].total_cmp(&values[a * horizon + t]).then(a.cmp(&b)));
                order
            })
            .collect();
        Self {
            horizon,
            values,
            col_order,
            need,
            status: vec![Status::Free; m],
            floor,
            n_in: 0,
            n_out: 0,
            nodes: 0,
            node_limit,
            aborted: false,
            incumbent: None,
            incumbent_cost: f64::INFINITY,
            mode: Mode::Optimize,
            witness: None,
            gain: vec![0.0; m],
            touched: Vec::new(),
        }
    }

    fn value(&self, row: usize, t: usize) -> f64 {
        self.values[row * self.horizon + t]
    }

    fn cost_of(&self, local: &[usize], base: &[f64]) -> f64 {
        let mut r = base.to_vec();
        for &l in local {
            for (t, rt) in r.iter_mut().enumerate() {
                *rt = rt.max(self.value(l, t));
            }
        }
        radii_cost(&r)
    }

    fn offer_incumbent(&mut self, local: &[usize]) {
        let cost = self.cost_of(local, &self.floor.clone());
        if cost < self.incumbent_cost {
            self.incumbent_cost = cost;
            let mut set = local.to_vec();
            set.sort_unstable();
            self.incumbent = Some(set);
        }
    }

    fn optimize(&mut self) {
        self.mode = Mode::Optimize;
        self.node();
    }

    fn reset(&mut self, base_floor: &[f64]) {
        self.status.iter_mut().for_each(|s| *s = Status::Free);
        self.floor = base_floor.to_vec();
        self.n_in = 0;
        self.n_out = 0;
    }

    /// Smallest index set (in sorted lexicographic order) among selections
    /// whose cost equals the optimum found by `optimize`.
    fn lexicographic_min(&mut self, best: Vec<usize>) -> Vec<usize> {
        let m = self.status.len();
        let base_floor = self.floor.clone();
        let target = self.incumbent_cost;
        let mut forced = vec![None::<bool>; m];
        let mut current = self.cover_canonical(&best, &forced, &base_floor);
        let mut included = 0;
        for idx in 0..m {
            if included == self.need {
                forced[idx] = Some(false);
                continue;
            }
            if current.binary_search(&idx).is_ok() {
                forced[idx] = Some(true);
                included += 1;
                continue;
            }
            forced[idx] = Some(true);
            match self.decide(&forced, &base_floor, target) {
                Some(witness) => {
                    current = self.cover_canonical(&witness, &forced, &base_floor);
                    included += 1;
                }
                None => {
                    if self.aborted {
                        break;
                    }
                    forced[idx] = Some(false);
                }
            }
        }
        self.reset(&base_floor);
        current
    }

    /// Among rows covered by the radii of `set`, keep forced rows and fill
    /// up with the smallest remaining indices.
    fn cover_canonical(&self, set: &[usize], forced: &[Option<bool>], base_floor: &[f64]) -> Vec<usize> {
        let mut r = base_floor.to_vec();
        for &l in set {
            for (t, rt) in r.iter_mut().enumerate() {
                *rt = rt.max(self.value(l, t));
            }
        }
        let mut out: Vec<usize> = (0..forced.len()).filter(|&l| forced[l] == Some(true)).collect();
        for (l, f) in forced.iter().enumerate() {
            if out.len() >= self.need {
                break;
            }
            if f.is_none() && (0..self.horizon).all(|t| self.value(l, t) <= r[t]) {
                out.push(l);
            }
        }
        if out.len() < self.need {
            // the forced set was not produced by a feasible witness; keep `set`
            return set.to_vec();
        }
        out.sort_unstable();
        out
    }

    fn decide(&mut self, forced: &[Option<bool>], base_floor: &[f64], target: f64) -> Option<Vec<usize>> {
        self.reset(base_floor);
        for (l, f) in forced.iter().enumerate() {
            match f {
                Some(true) => {
                    self.status[l] = Status::In;
                    self.n_in += 1;
                    for t in 0..self.horizon {
                        self.floor[t] = self.floor[t].max(self.values[l * self.horizon + t]);
                    }
                }
                Some(false) => {
                    self.status[l] = Status::Out;
                    self.n_out += 1;
                }
                None => {}
            }
        }
        let m = self.status.len();
        if self.n_in > self.need || self.n_out > m - self.need {
            return None;
        }
        self.mode = Mode::Decide { target };
        self.witness = None;
        self.node();
        self.mode = Mode::Optimize;
        self.witness.take()
    }

    fn included(&self) -> Vec<usize> {
        (0..self.status.len()).filter(|&l| self.status[l] == Status::In).collect()
    }

    fn done(&self) -> bool {
        self.aborted || self.witness.is_some()
    }

    fn leaf(&mut self, selection: Vec<usize>, cost: f64) {
        match self.mode {
            Mode::Optimize => {
                if cost < self.incumbent_cost {
                    self.incumbent_cost = cost;
                    let mut s = selection;
                    s.sort_unstable();
                    self.incumbent = Some(s);
                }
            }
            Mode::Decide { target } => {
                if cost <= target {
                    let mut s = selection;
                    s.sort_unstable();
                    self.witness = Some(s);
                }
            }
        }
    }

    fn prunable(&self, bound: f64) -> bool {
        match self.mode {
            Mode::Optimize => bound >= self.incumbent_cost,
            Mode::Decide { target } => bound > target,
        }
    }

    fn node(&mut self) {
        if self.done() {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.aborted = true;
            return;
        }
        let horizon = self.horizon;
        let m = self.status.len();
        let need = self.need - self.n_in;

        let mut riders = Vec::new();
        let mut heavy = Vec::new();
        for l in 0..m {
            if self.status[l] != Status::Free {
                continue;
            }
            if (0..horizon).all(|t| self.value(l, t) <= self.floor[t]) {
                riders.push(l);
            } else {
                heavy.push(l);
            }
        }

        if riders.len() >= need {
            let mut sel = self.included();
            sel.extend(&riders[..need]);
            let cost = radii_cost(&self.floor);
            self.leaf(sel, cost);
            return;
        }
        let heavy_need = need - riders.len();
        let budget = heavy.len() - heavy_need;
        if budget == 0 {
            let mut sel = self.included();
            sel.extend(&riders);
            sel.extend(&heavy);
            let cost = self.cost_of(&heavy, &self.floor);
            self.leaf(sel, cost);
            return;
        }

        // bounds
        let mut col_bound = Vec::with_capacity(horizon);
        let mut top_sum = 0.0;
        let mut heuristic_radii = Vec::with_capacity(horizon);
        self.touched.clear();
        let mut collected: Vec<(usize, f64)> = Vec::with_capacity(budget + 1);
        let mut branch_fallback: Option<(f64, usize)> = None;
        for t in 0..horizon {
            let floor = self.floor[t];
            collected.clear();
            for &l in &self.col_order[t] {
                if self.status[l] != Status::Free {
                    continue;
                }
                let v = self.values[l * horizon + t];
                if v <= floor || collected.len() > budget {
                    break;
                }
                collected.push((l, v));
            }
            let top = collected.first().map(|c| c.1).unwrap_or(floor);
            top_sum += top;
            col_bound.push(if collected.len() > budget { collected[budget].1 } else { floor });
            if let Some(&(l, v)) = collected.first() {
                if branch_fallback.is_none_or(|(gap, _)| v - floor > gap) {
                    branch_fallback = Some((v - floor, l));
                }
            }
            for j in 0..collected.len().min(budget) {
                let next = collected.get(j + 1).map(|c| c.1).unwrap_or(floor);
                let (l, v) = collected[j];
                if self.gain[l] == 0.0 {
                    self.touched.push(l);
                }
                self.gain[l] += v - next;
            }
            heuristic_radii.push(top);
        }
        let mut gains: Vec<(f64, usize)> = self.touched.iter().map(|&l| (self.gain[l], l)).collect();
        for &l in &self.touched {
            self.gain[l] = 0.0;
        }
        gains.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let top_gain: f64 = gains.iter().take(budget).map(|g| g.0).sum();
        let slack = 2.0 * (horizon + budget + 4) as f64 * f64::EPSILON * top_sum;
        let shared_bound = top_sum - top_gain - slack;
        let bound = radii_cost(&col_bound).max(shared_bound);
        if self.prunable(bound) {
            return;
        }

        // primal heuristic: drop the `budget` rows with the largest gains
        let dropped: Vec<usize> = gains.iter().take(budget).map(|g| g.1).collect();
        if dropped.len() == budget {
            for (t, r) in heuristic_radii.iter_mut().enumerate() {
                let floor = self.floor[t];
                *r = self.col_order[t]
                    .iter()
                    .find(|&&l| self.status[l] == Status::Free && !dropped.contains(&l))
                    .map(|&l| self.values[l * horizon + t].max(floor))
                    .unwrap_or(floor);
            }
            let cost = radii_cost(&heuristic_radii);
            let improves = match self.mode {
                Mode::Optimize => cost < self.incumbent_cost,
                Mode::Decide { target } => cost <= target,
            };
            if improves {
                let mut sel = self.included();
                sel.extend(&riders);
                sel.extend(heavy.iter().filter(|l| !dropped.contains(l)));
                self.leaf(sel, cost);
                if self.done() || self.prunable(bound) {
                    return;
                }
            }
        }

        let branch = match gains.first() {
            Some(&(g, l)) if g > 0.0 => l,
            _ => match branch_fallback {
                Some((_, l)) => l,
                None => heavy[0],
            },
        };

        // drop branch
        self.status[branch] = Status::Out;
        self.n_out += 1;
        self.node();
        self.n_out -= 1;
        self.status[branch] = Status::Free;
        if self.done() {
            return;
        }

        // cover branch
        let saved = self.floor.clone();
        self.status[branch] = Status::In;
        self.n_in += 1;
        for t in 0..horizon {
            self.floor[t] = self.floor[t].max(self.values[branch * horizon + t]);
        }
        self.node();
        self.floor = saved;
        self.n_in -= 1;
        self.status[branch] = Status::Free;
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Exhaustive reference solver over all size-`p1` subsets.
pub fn brute_force_radii(problem: &SelectionProblem, cap: u128) -> Result<RadiusProfile, SelectError> {
    let (n, k) = (problem.rows, problem.p1);
    let subsets = binomial(n, k);
    if subsets > cap {
        return Err(SelectError::EnumerationCapExceeded { subsets, cap });
    }
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let cost = problem.subset_cost(&combo);
        // lexicographic enumeration: the first strict minimum wins ties
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, combo.clone()));
        }
        let mut i = k;
        loop {
            if i == 0 {
                let (cost, selected) = best.expect("at least one subset");
                let radii = problem.subset_radii(&selected);
                return Ok(RadiusProfile { radii, selected, cost, provably_optimal: true });
            }
            i -= 1;
            if combo[i] < n - k + i {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Writes the selection problem as a big-M mixed-integer program in CPLEX LP
/// format.
///
/// Variables are `r_t` (radii) and binaries `b_i` (row `i` covered). Each
/// `(i, t)` pair contributes `e_ti - r_t <= M_t (1 - b_i)` with `M_t` the
/// column maximum. With `pruned`, rows in `S1` become lower bounds on the
/// radii and rows in `S2` are dropped; if `|S1| >= p1` the radii are fixed
/// to the coordinatewise quantile.
pub fn export_milp(problem: &SelectionProblem, pruned: bool) -> String {
    let horizon = problem.horizon;
    let big_m = problem.columnwise_max();
    let mut out = String::new();
    let _ = writeln!(out, "\\ oscp selection n1={} T={} p1={} pruned={}", problem.rows, horizon, problem.p1, pruned);

    let (rows, floor, count, fixed) = if pruned {
        let (feasible, _) = heuristic_feasible(problem);
        let sets = compute_prune_sets(problem, &feasible);
        if sets.always_covered.len() >= problem.p1 {
            let _ = writeln!(
                out,
                "\\ |S1| = {} >= p1: radii fixed to the coordinatewise quantile",
                sets.always_covered.len()
            );
            (Vec::new(), Vec::new(), 0, Some(sets.coordinate_quantile))
        } else {
            let floor = problem.subset_radii(&sets.always_covered);
            let _ = writeln!(
                out,
                "\\ |S1| = {} |S2| = {} |S| = {}",
                sets.always_covered.len(),
                sets.never_covered.len(),
                sets.candidates.len()
            );
            let count = problem.p1 - sets.always_covered.len();
            (sets.candidates, floor, count, None)
        }
    } else {
        ((0..problem.rows).collect(), Vec::new(), problem.p1, None)
    };

    out.push_str("Minimize\n obj:");
    for t in 0..horizon {
        let _ = write!(out, " {}r_{t}", if t == 0 { "" } else { "+ " });
    }
    out.push_str("\nSubject To\n");
    if let Some(q) = &fixed {
        for (t, v) in q.iter().enumerate() {
            let _ = writeln!(out, " fix_{t}: r_{t} = {v}");
        }
    } else {
        for &i in &rows {
            for (t, m) in big_m.iter().enumerate() {
                // e - r <= M (1 - b)  <=>  -r + M b <= M - e
                let rhs = m - problem.get(i, t);
                let _ = writeln!(out, " cover_{i}_{t}: - r_{t} + {m} b_{i} <= {rhs}");
            }
        }
        for (t, f) in floor.iter().enumerate() {
            let _ = writeln!(out, " floor_{t}: r_{t} >= {f}");
        }
        out.push_str(" count:");
        for (k, &i) in rows.iter().enumerate() {
            let _ = write!(out, " {}b_{i}", if k == 0 { "" } else { "+ " });
        }
        let _ = writeln!(out, " = {count}");
    }
    out.push_str("Bounds\n");
    for t in 0..horizon {
        let _ = writeln!(out, " r_{t} >= 0");
    }
    if fixed.is_none() && !rows.is_empty() {
        out.push_str("Binaries\n");
        for &i in &rows {
            let _ = writeln!(out, " b_{i}");
        }
    }
    out.push_str("End\n");
    out
}
