//! Block coordinate descent driver shared by the joint solvers.
//!
//! A problem exposes its blocks, its cost and an exact per-block update.
//! The cyclic schedule sweeps all blocks in order; the maximum block
//! improvement (MBI) schedule tries every block from the same point and
//! commits only the one with the lowest resulting cost.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cyclic,
    Mbi,
}

pub trait BlockProblem: Clone {
    type Block: Copy + Eq + Debug + 'static;

    /// All blocks, in cyclic order.
    const BLOCKS: &'static [Self::Block];

    fn cost(&self) -> f64;

    /// Minimizes the cost over one block. Returns `false` when an inner
    /// solver stopped at its iteration cap.
    fn update(&mut self, block: Self::Block) -> Result<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    pub max_outer: usize,
    /// Relative cost change below which the run stops.
    pub tol: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BcdReport {
    /// Cost before the first cycle, then after every cycle (or MBI step).
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    /// Whether the relative-change criterion fired before `max_outer`.
    pub converged: bool,
    /// Inner solves that hit their iteration cap.
    pub unconverged_subproblems: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbiStep {
    pub chosen: usize,
    pub candidate_costs: Vec<f64>,
    pub unconverged_subproblems: usize,
}

/// One MBI step: every block is updated from the current point and the
/// lowest-cost candidate (earliest block on ties) is committed.
pub fn mbi_step<P: BlockProblem>(problem: &mut P) -> Result<MbiStep> {
    let mut best: Option<(usize, P)> = None;
    let mut costs = Vec::with_capacity(P::BLOCKS.len());
    let mut unconverged = 0;
    for (i, &block) in P::BLOCKS.iter().enumerate() {
        let mut trial = problem.clone();
        if !trial.update(block)? {
            unconverged += 1;
        }
        let c = trial.cost();
        if best
            .as_ref()
            .is_none_or(|_| costs.iter().all(|&prev| c < prev))
        {
            best = Some((i, trial));
        }
        costs.push(c);
    }
    let (chosen, state) = best.expect("at least one block");
    *problem = state;
    Ok(MbiStep {
        chosen,
        candidate_costs: costs,
        unconverged_subproblems: unconverged,
    })
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Runs the schedule until the relative cost change drops below `tol` or
/// `max_outer` cycles have been made.
pub fn run<P: BlockProblem>(problem: &mut P, opts: &BcdOptions) -> Result<BcdReport> {
    if !(opts.tol.is_finite() && opts.tol >= 0.0) {
        return Err(Error::Argument(format!(
            "tolerance must be >= 0, got {}",
            opts.tol
        )));
    }
    let mut report = BcdReport {
        cost_trace: vec![problem.cost()],
        ..Default::default()
    };
    while report.iterations < opts.max_outer {
        report.iterations += 1;
        match opts.schedule {
            Schedule::Cyclic => {
                for &block in P::BLOCKS {
                    if !problem.update(block)? {
                        report.unconverged_subproblems += 1;
                    }
                }
            }
            Schedule::Mbi => {
                report.unconverged_subproblems += mbi_step(problem)?.unconverged_subproblems;
            }
        }
        let cur = problem.cost();
        if !cur.is_finite() {
            return Err(Error::Numerical(format!("cost became {cur}")));
        }
        let prev = *report.cost_trace.last().expect("non-empty");
        report.cost_trace.push(cur);
        if cur == 0.0 || relative_change(prev, cur) < opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `(x − 1)² + (y − 2)² + (x − y)²` minimized one coordinate at a time.
    #[derive(Clone)]
    struct Quad {
        x: f64,
        y: f64,
    }

    impl BlockProblem for Quad {
        type Block = usize;
        const BLOCKS: &'static [usize] = &[0, 1];

        fn cost(&self) -> f64 {
            (self.x - 1.0).powi(2) + (self.y - 2.0).powi(2) + (self.x - self.y).powi(2)
        }

        fn update(&mut self, block: usize) -> Result<bool> {
            match block {
                0 => self.x = (1.0 + self.y) / 2.0,
                _ => self.y = (2.0 + self.x) / 2.0,
            }
            Ok(true)
        }
    }

    #[test]
    fn both_schedules_reach_the_minimum_monotonically() {
        for schedule in [Schedule::Cyclic, Schedule::Mbi] {
            let mut q = Quad { x: 10.0, y: -5.0 };
            let r = run(
                &mut q,
                &BcdOptions {
                    max_outer: 500,
                    tol: 1e-14,
                    schedule,
                },
            )
            .unwrap();
            assert!(r.converged);
            for w in r.cost_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!((q.x - 4.0 / 3.0).abs() < 1e-6 && (q.y - 5.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mbi_commits_the_best_candidate() {
        let mut q = Quad { x: 0.0, y: 10.0 };
        let step = mbi_step(&mut q).unwrap();
        let best = step
            .candidate_costs
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(step.candidate_costs[step.chosen], best);
        assert_eq!(q.cost(), best);
    }
}
