//! Build-order optimization: place-position set, feasibility criteria,
//! exact depth-first search with pruning, and a greedy baseline.
//!
//! A robot position `p` can build a brick when the brick (1) is unbuilt,
//! (2) is in reach (`|center + arm_shift − p| ≤ reach_radius`), (3) is fully
//! supported by the ground or previously built bricks, and (4) has its left
//! adjacent brick built. Positions are enumerated from the brick centers
//! shifted by the arm reach; plans minimize the position count, then the
//! travel between positions, lexicographically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Blueprint;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Place positions are brick centers shifted by this arm reach (m).
    pub arm_shift: f64,
    /// 1-D reach window radius around `p − arm_shift` (m).
    pub reach_radius: f64,
    /// Two bricks are left-adjacent when their edges are within this (m).
    pub adjacency_eps: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            arm_shift: 0.675,
            reach_radius: 0.675,
            adjacency_eps: 0.01,
        }
    }
}

/// One stop of the robot: a position and the bricks built from it, in build
/// order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanStep {
    pub position: f64,
    pub bricks: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildPlan {
    pub steps: Vec<PlanStep>,
    /// Number of positions, `|S|`.
    pub positions: usize,
    /// Total travel between consecutive positions (m), `d_S`.
    pub travel: f64,
}

impl BuildPlan {
    fn from_steps(steps: Vec<PlanStep>) -> BuildPlan {
        let travel = steps
            .windows(2)
            .map(|w| (w[1].position - w[0].position).abs())
            .sum();
        BuildPlan {
            positions: steps.len(),
            travel,
            steps,
        }
    }
}

const COVER_EPS: f64 = 1e-9;

struct PlanBrick {
    layer: usize,
    left: f64,
    right: f64,
    center: f64,
    /// Bricks in the layer below overlapping this footprint, ascending left.
    supports: Vec<usize>,
    /// Same-layer brick whose right edge touches this left edge.
    left_neighbor: Option<usize>,
}

struct WallModel {
    bricks: Vec<PlanBrick>,
    positions: Vec<f64>,
    all_mask: u128,
    reach: f64,
    arm_shift: f64,
}

impl WallModel {
    fn new(bp: &Blueprint, cfg: &PlannerConfig) -> Result<WallModel> {
        bp.validate()?;
        let count = bp.brick_count();
        if count > 128 {
            return Err(Error::Degenerate("plans support at most 128 bricks"));
        }
        let mut bricks: Vec<PlanBrick> = bp
            .bricks()
            .map(|(layer, e)| PlanBrick {
                layer,
                left: e.left_x,
                right: e.right_x(),
                center: e.center_x(),
                supports: Vec::new(),
                left_neighbor: None,
            })
            .collect();
        for i in 0..bricks.len() {
            let (layer, left, right) = (bricks[i].layer, bricks[i].left, bricks[i].right);
            for j in 0..bricks.len() {
                if bricks[j].layer + 1 == layer
                    && bricks[j].right > left + COVER_EPS
                    && bricks[j].left < right - COVER_EPS
                {
                    bricks[i].supports.push(j);
                }
                if bricks[j].layer == layer && (bricks[j].right - left).abs() <= cfg.adjacency_eps
                {
                    bricks[i].left_neighbor = Some(j);
                }
            }
        }
        let mut positions: Vec<f64> = bricks.iter().map(|b| b.center + cfg.arm_shift).collect();
        positions.sort_by(f64::total_cmp);
        positions.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        Ok(WallModel {
            bricks,
            positions,
            all_mask: if count == 128 {
                u128::MAX
            } else {
                (1u128 << count) - 1
            },
            reach: cfg.reach_radius,
            arm_shift: cfg.arm_shift,
        })
    }

    /// Every brick's footprint must be coverable by the layer below with
    /// everything built; otherwise no build order exists.
    fn statically_feasible(&self) -> bool {
        (0..self.bricks.len()).all(|i| self.supported(i, self.all_mask))
    }

    fn supported(&self, idx: usize, built: u128) -> bool {
        let b = &self.bricks[idx];
        if b.layer == 0 {
            return true;
        }
        let mut cover = b.left;
        for &s in &b.supports {
            if built & (1u128 << s) == 0 {
                continue;
            }
            let sup = &self.bricks[s];
            if sup.left > cover + COVER_EPS {
                return false; // gap before this support
            }
            cover = cover.max(sup.right);
            if cover >= b.right - COVER_EPS {
                return true;
            }
        }
        cover >= b.right - COVER_EPS
    }

    /// Fixpoint of the four build criteria at position `p`; returns the added
    /// mask and the bricks in build order.
    fn buildable(&self, mut built: u128, p: f64) -> (u128, Vec<usize>) {
        let mut added = Vec::new();
        loop {
            let mut progressed = false;
            for i in 0..self.bricks.len() {
                let bit = 1u128 << i;
                if built & bit != 0 {
                    continue;
                }
                let b = &self.bricks[i];
                if (b.center + self.arm_shift - p).abs() > self.reach {
                    continue;
                }
                if let Some(l) = b.left_neighbor {
                    if built & (1u128 << l) == 0 {
                        continue;
                    }
                }
                if !self.supported(i, built) {
                    continue;
                }
                built |= bit;
                added.push(i);
                progressed = true;
            }
            if !progressed {
                break;
            }
        }
        (built, added)
    }

    /// Admissible lower bound on positions still needed: minimum number of
    /// reach windows covering the unbuilt brick centers (1-D stabbing).
    fn cover_lower_bound(&self, built: u128) -> u32 {
        let mut count = 0;
        let mut window_end = f64::NEG_INFINITY;
        // positions are sorted by center + arm_shift; brick order by center
        // within a layer is ascending but across layers is not, so sort once
        let mut centers: Vec<f64> = (0..self.bricks.len())
            .filter(|i| built & (1u128 << i) == 0)
            .map(|i| self.bricks[i].center)
            .collect();
        centers.sort_by(f64::total_cmp);
        for c in centers {
            if c > window_end + 1e-12 {
                count += 1;
                window_end = c + 2.0 * self.reach;
            }
        }
        count
    }
}

fn built_mask(built: &[usize]) -> u128 {
    built.iter().fold(0u128, |m, &i| m | (1u128 << i))
}

/// The set of possible place positions: brick centers shifted by the arm
/// reach, deduplicated, ascending.
pub fn place_positions(bp: &Blueprint, cfg: &PlannerConfig) -> Result<Vec<f64>> {
    Ok(WallModel::new(bp, cfg)?.positions)
}

/// Bricks (canonical blueprint indices) buildable from `position` given the
/// already-built set, in build order.
pub fn buildable_set(
    bp: &Blueprint,
    built: &[usize],
    position: f64,
    cfg: &PlannerConfig,
) -> Result<Vec<usize>> {
    let model = WallModel::new(bp, cfg)?;
    Ok(model.buildable(built_mask(built), position).1)
}

struct Incumbent {
    count: u32,
    travel: f64,
    steps: Vec<PlanStep>,
}

struct Search<'a> {
    model: &'a WallModel,
    incumbent: Incumbent,
    /// Pareto-optimal (count, travel) seen per (built, last position).
    seen: std::collections::HashMap<(u128, u32), Vec<(u32, f64)>>,
    memo_budget: usize,
}

impl Search<'_> {
    fn candidates(&self, built: u128, last: Option<usize>) -> Vec<(usize, u128, Vec<usize>, f64)> {
        let mut cands = Vec::new();
        for (idx, &p) in self.model.positions.iter().enumerate() {
            let (new_built, added) = self.model.buildable(built, p);
            if added.is_empty() {
                continue;
            }
            let travel = last.map_or(0.0, |l| (p - self.model.positions[l]).abs());
            cands.push((idx, new_built, added, travel));
        }
        cands.sort_by(|a, b| {
            b.2.len()
                .cmp(&a.2.len())
                .then(a.3.total_cmp(&b.3))
                .then(a.0.cmp(&b.0))
        });
        cands
    }

    fn dominated(&mut self, key: (u128, u32), count: u32, travel: f64) -> bool {
        let entries = self.seen.entry(key).or_default();
        if entries
            .iter()
            .any(|&(c, t)| c <= count && t <= travel + 1e-12)
        {
            return true;
        }
        if self.memo_budget > 0 {
            entries.retain(|&(c, t)| !(count <= c && travel <= t + 1e-12));
            entries.push((count, travel));
            self.memo_budget -= 1;
        }
        false
    }

    fn dfs(
        &mut self,
        built: u128,
        last: Option<usize>,
        count: u32,
        travel: f64,
        steps: &mut Vec<PlanStep>,
    ) {
        for (idx, new_built, added, hop) in self.candidates(built, last) {
            let new_count = count + 1;
            let new_travel = travel + hop;
            let step = PlanStep {
                position: self.model.positions[idx],
                bricks: added,
            };
            if new_built == self.model.all_mask {
                if new_count < self.incumbent.count
                    || (new_count == self.incumbent.count
                        && new_travel < self.incumbent.travel - 1e-12)
                {
                    let mut solution = steps.clone();
                    solution.push(step);
                    self.incumbent = Incumbent {
                        count: new_count,
                        travel: new_travel,
                        steps: solution,
                    };
                }
                continue;
            }
            let bound = new_count + self.model.cover_lower_bound(new_built);
            if bound > self.incumbent.count
                || (bound == self.incumbent.count && new_travel >= self.incumbent.travel - 1e-12)
            {
                continue;
            }
            if self.dominated((new_built, idx as u32), new_count, new_travel) {
                continue;
            }
            steps.push(step);
            self.dfs(new_built, Some(idx), new_count, new_travel, steps);
            steps.pop();
        }
    }
}

/// Exact lexicographic optimum over `(positions, travel)` by depth-first
/// search, seeded with the greedy plan and pruned by an admissible
/// reach-cover bound plus Pareto dominance over visited states.
pub fn optimal_plan(bp: &Blueprint, cfg: &PlannerConfig) -> Result<BuildPlan> {
    let model = WallModel::new(bp, cfg)?;
    if model.bricks.is_empty() {
        return Ok(BuildPlan::from_steps(Vec::new()));
    }
    if !model.statically_feasible() {
        return Err(Error::Infeasible);
    }
    let greedy = greedy_with_model(&model)?;
    let mut search = Search {
        model: &model,
        incumbent: Incumbent {
            count: greedy.positions as u32,
            travel: greedy.travel,
            steps: greedy.steps,
        },
        seen: std::collections::HashMap::new(),
        memo_budget: 2_000_000,
    };
    search.dfs(0, None, 0, 0.0, &mut Vec::new());
    Ok(BuildPlan::from_steps(search.incumbent.steps))
}

/// Greedy baseline: repeatedly take the position building the most bricks,
/// ties broken by smaller travel from the current position, then smaller x.
pub fn greedy_plan(bp: &Blueprint, cfg: &PlannerConfig) -> Result<BuildPlan> {
    let model = WallModel::new(bp, cfg)?;
    if model.bricks.is_empty() {
        return Ok(BuildPlan::from_steps(Vec::new()));
    }
    if !model.statically_feasible() {
        return Err(Error::Infeasible);
    }
    greedy_with_model(&model)
}

fn greedy_with_model(model: &WallModel) -> Result<BuildPlan> {
    let mut built = 0u128;
    let mut last: Option<usize> = None;
    let mut steps = Vec::new();
    while built != model.all_mask {
        let mut best: Option<(usize, u128, Vec<usize>, f64)> = None;
        for (idx, &p) in model.positions.iter().enumerate() {
            let (new_built, added) = model.buildable(built, p);
            if added.is_empty() {
                continue;
            }
            let travel = last.map_or(0.0, |l| (p - model.positions[l]).abs());
            let better = match &best {
                None => true,
                Some((bidx, _, badded, btravel)) => {
                    added.len() > badded.len()
                        || (added.len() == badded.len()
                            && (travel < btravel - 1e-12
                                || ((travel - btravel).abs() <= 1e-12
                                    && model.positions[idx] < model.positions[*bidx])))
                }
            };
            if better {
                best = Some((idx, new_built, added, travel));
            }
        }
        let Some((idx, new_built, added, _)) = best else {
            return Err(Error::Infeasible);
        };
        debug_assert!(new_built != built, "greedy made no progress");
        built = new_built;
        steps.push(PlanStep {
            position: model.positions[idx],
            bricks: added,
        });
        last = Some(idx);
    }
    Ok(BuildPlan::from_steps(steps))
}

/// Re-simulate a plan through the build criteria; errors if any step builds
/// a different brick set than recorded or bricks remain at the end.
pub fn replay_plan(bp: &Blueprint, cfg: &PlannerConfig, plan: &BuildPlan) -> Result<()> {
    let model = WallModel::new(bp, cfg)?;
    let mut built = 0u128;
    for step in &plan.steps {
        let (new_built, added) = model.buildable(built, step.position);
        if added != step.bricks {
            return Err(Error::Degenerate("plan step does not replay"));
        }
        built = new_built;
    }
    if built != model.all_mask {
        return Err(Error::Degenerate("plan leaves bricks unbuilt"));
    }
    let recomputed: f64 = plan
        .steps
        .windows(2)
        .map(|w| (w[1].position - w[0].position).abs())
        .sum();
    if (recomputed - plan.travel).abs() > 1e-9 || plan.positions != plan.steps.len() {
        return Err(Error::Degenerate("plan metrics do not match the steps"));
    }
    Ok(())
}
