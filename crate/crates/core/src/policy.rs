//! Budget-constrained prescriptive trees.
//!
//! A tree partitions rows into segments; each leaf prescribes one action
//! level. Segment outcomes come from the standardized per-segment mean
//! `Q(segment, a)`. Leaf actions are chosen jointly to maximize the projected
//! mean outcome subject to the average cost per row staying within budget.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{
    covariate_bins, quantile_cuts, standardized_means, strata_ids, ActionLevel, CausalError,
    Prepared, COVARIATE_QUANTILE_BINS,
};
use crate::chart::{format_significant, AxisValue, ChartSpec, Series, TreeNode};
use crate::dataset::{ColumnData, DataTable, DatasetMetadata, Value};
use crate::par::*;

pub const MIN_LEAF_ROWS: usize = 5;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error("num_rules must be at least 1, got {0}")]
    TooFewRules(usize),
    #[error("average budget {budget} is below the cheapest action cost {minimum}")]
    InfeasibleBudget { budget: f64, minimum: f64 },
    #[error("action column `{0}` is not numeric and metadata has no cost for every level")]
    NonNumericActionWithoutCosts(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

/// Split test; rows satisfying it go to the `yes` branch. Missing cells fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    Threshold { column: String, threshold: f64 },
    Membership { column: String, values: Vec<String> },
}

impl Predicate {
    pub fn column(&self) -> &str {
        match self {
            Predicate::Threshold { column, .. } | Predicate::Membership { column, .. } => column,
        }
    }

    pub fn matches(&self, col: &ColumnData, row: usize) -> bool {
        match self {
            Predicate::Threshold { threshold, .. } => {
                matches!(col, ColumnData::Numeric(v) if v[row].is_some_and(|x| x <= *threshold))
            }
            Predicate::Membership { values, .. } => {
                col.get(row).is_some_and(|v| values.contains(&v.to_string()))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Predicate::Threshold { column, threshold } => {
                format!("{column} ≤ {}", format_significant(*threshold, 3))
            }
            Predicate::Membership { column, values } => {
                format!("{column} ∈ {{{}}}", values.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyNode {
    Split {
        predicate: Predicate,
        yes: Box<PolicyNode>,
        no: Box<PolicyNode>,
    },
    Leaf {
        action: ActionLevel,
        /// Rows of the training table reaching this leaf.
        coverage: usize,
    },
}

impl PolicyNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            PolicyNode::Split { yes, no, .. } => yes.leaf_count() + no.leaf_count(),
            PolicyNode::Leaf { .. } => 1,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            PolicyNode::Split { yes, no, .. } => 1 + yes.node_count() + no.node_count(),
            PolicyNode::Leaf { .. } => 1,
        }
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let PolicyNode::Split { predicate, yes, no } = self {
            out.push(predicate.column());
            yes.collect_columns(out);
            no.collect_columns(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub root: PolicyNode,
    /// Leaf count.
    pub num_rules: usize,
    pub action_column: String,
    /// Covariates used to standardize segment outcomes.
    pub features: Vec<String>,
    /// Average-cost-per-row constraint the tree was learned under.
    pub average_budget: f64,
}

impl PolicyTree {
    /// Leaves in depth-first order, `yes` branch first.
    pub fn leaves(&self) -> Vec<(&ActionLevel, usize)> {
        fn walk<'a>(n: &'a PolicyNode, out: &mut Vec<(&'a ActionLevel, usize)>) {
            match n {
                PolicyNode::Split { yes, no, .. } => {
                    walk(yes, out);
                    walk(no, out);
                }
                PolicyNode::Leaf { action, coverage } => out.push((action, *coverage)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.collect_columns(&mut out);
        out
    }

    /// Index (depth-first order) of the leaf reached by `row`.
    pub fn route(&self, table: &DataTable, row: usize) -> Result<usize, PolicyError> {
        let mut node = &self.root;
        let mut offset = 0;
        loop {
            match node {
                PolicyNode::Leaf { .. } => return Ok(offset),
                PolicyNode::Split { predicate, yes, no } => {
                    let col = table
                        .column(predicate.column())
                        .map_err(|_| PolicyError::UnknownColumn(predicate.column().into()))?;
                    if predicate.matches(col, row) {
                        node = yes;
                    } else {
                        offset += yes.leaf_count();
                        node = no;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub tree: PolicyTree,
    /// Expected mean outcome under the prescribed policy.
    pub projected_kpi: f64,
    /// Mean outcome under the historical policy.
    pub baseline_kpi: f64,
    /// Mean prescribed action cost per row.
    pub budget_used: f64,
    pub average_budget: f64,
    /// Fraction of rows prescribed each action level.
    pub action_distribution: IndexMap<String, f64>,
    pub within_budget: bool,
    /// Some segment lacked data for its prescribed action and used the
    /// enclosing segment's estimate.
    pub q_fallback: bool,
    pub n: usize,
}

impl OptimizationResult {
    pub fn distribution_chart(&self) -> ChartSpec {
        ChartSpec::Bar {
            title: format!("Prescribed {} distribution", self.tree.action_column),
            x_label: self.tree.action_column.clone(),
            y_label: "fraction of rows".into(),
            series: vec![Series {
                label: "optimized".into(),
                x: self
                    .action_distribution
                    .keys()
                    .map(|k| AxisValue::Text(k.clone()))
                    .collect(),
                y: self.action_distribution.values().copied().collect(),
                y_error: None,
            }],
        }
    }
}

/// Segment estimates: per-level Q and whether any entry was inherited.
#[derive(Debug, Clone)]
struct SegmentQ {
    q: Vec<Option<f64>>,
    inherited: Vec<bool>,
}

struct Ctx<'a> {
    prep: &'a Prepared,
    strata: Vec<u32>,
    split_cols: Vec<(String, &'a ColumnData)>,
    costs: Vec<f64>,
    n_total: usize,
}

impl Ctx<'_> {
    fn segment_q(&self, rows: &[usize], parent: Option<&SegmentQ>) -> SegmentQ {
        let own = standardized_means(
            rows,
            &self.prep.action,
            self.prep.n_levels(),
            &self.strata,
            &self.prep.y,
        );
        let mut inherited = vec![false; own.len()];
        let q = own
            .into_iter()
            .enumerate()
            .map(|(a, v)| match (v, parent) {
                (Some(v), _) => Some(v),
                (None, Some(p)) => {
                    inherited[a] = p.q[a].is_some();
                    p.q[a]
                }
                (None, None) => None,
            })
            .collect();
        SegmentQ { q, inherited }
    }

    /// Row-weighted best unconstrained outcome of a segment.
    fn unconstrained(&self, rows: usize, q: &SegmentQ) -> f64 {
        let best = q.q.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        rows as f64 / self.n_total as f64 * best
    }

    fn candidate_splits(&self, rows: &[usize]) -> Vec<(Predicate, Vec<usize>, Vec<usize>)> {
        let mut out = Vec::new();
        for (name, col) in &self.split_cols {
            let predicates: Vec<Predicate> = match col {
                ColumnData::Numeric(v) => {
                    let mut present: Vec<f64> = rows.iter().filter_map(|&r| v[r]).collect();
                    present.sort_by(f64::total_cmp);
                    let mut distinct = present.clone();
                    distinct.dedup();
                    if distinct.len() < 2 {
                        continue;
                    }
                    let thresholds: Vec<f64> = if distinct.len() <= COVARIATE_QUANTILE_BINS {
                        distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
                    } else {
                        let max = distinct[distinct.len() - 1];
                        quantile_cuts(&present, COVARIATE_QUANTILE_BINS)
                            .into_iter()
                            .filter(|&c| c < max)
                            .collect()
                    };
                    thresholds
                        .into_iter()
                        .map(|threshold| Predicate::Threshold {
                            column: name.clone(),
                            threshold,
                        })
                        .collect()
                }
                ColumnData::Boolean(_) => vec![Predicate::Membership {
                    column: name.clone(),
                    values: vec!["true".into()],
                }],
                ColumnData::Categorical(v) => {
                    let mut levels: Vec<&String> =
                        rows.iter().filter_map(|&r| v[r].as_ref()).collect();
                    levels.sort();
                    levels.dedup();
                    if levels.len() < 2 {
                        continue;
                    }
                    levels
                        .into_iter()
                        .map(|l| Predicate::Membership {
                            column: name.clone(),
                            values: vec![l.clone()],
                        })
                        .collect()
                }
            };
            for p in predicates {
                let (yes, no): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| p.matches(col, r));
                if yes.len() >= MIN_LEAF_ROWS && no.len() >= MIN_LEAF_ROWS {
                    out.push((p, yes, no));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct ArenaNode {
    rows: Vec<usize>,
    q: SegmentQ,
    split: Option<(Predicate, usize, usize)>,
}

#[derive(Debug, Clone)]
struct Arena {
    nodes: Vec<ArenaNode>,
}

struct SplitChoice {
    gain: f64,
    predicate: Predicate,
    yes: (Vec<usize>, SegmentQ),
    no: (Vec<usize>, SegmentQ),
}

impl Arena {
    fn leaves(&self) -> Vec<usize> {
        fn walk(a: &Arena, i: usize, out: &mut Vec<usize>) {
            match &a.nodes[i].split {
                Some((_, y, n)) => {
                    walk(a, *y, out);
                    walk(a, *n, out);
                }
                None => out.push(i),
            }
        }
        let mut out = Vec::new();
        walk(self, 0, &mut out);
        out
    }

    fn apply(&mut self, leaf: usize, choice: SplitChoice) {
        let y = self.nodes.len();
        self.nodes.push(ArenaNode {
            rows: choice.yes.0,
            q: choice.yes.1,
            split: None,
        });
        self.nodes.push(ArenaNode {
            rows: choice.no.0,
            q: choice.no.1,
            split: None,
        });
        self.nodes[leaf].split = Some((choice.predicate, y, y + 1));
    }

    fn to_node(&self, i: usize, actions: &HashMap<usize, ActionLevel>) -> PolicyNode {
        let n = &self.nodes[i];
        match &n.split {
            Some((p, y, no)) => PolicyNode::Split {
                predicate: p.clone(),
                yes: Box::new(self.to_node(*y, actions)),
                no: Box::new(self.to_node(*no, actions)),
            },
            None => PolicyNode::Leaf {
                action: actions[&i].clone(),
                coverage: n.rows.len(),
            },
        }
    }
}

fn best_split(ctx: &Ctx, node: &ArenaNode) -> Option<SplitChoice> {
    let parent_value = ctx.unconstrained(node.rows.len(), &node.q);
    let mut best: Option<SplitChoice> = None;
    for (predicate, yes, no) in ctx.candidate_splits(&node.rows) {
        let qy = ctx.segment_q(&yes, Some(&node.q));
        let qn = ctx.segment_q(&no, Some(&node.q));
        let gain = ctx.unconstrained(yes.len(), &qy) + ctx.unconstrained(no.len(), &qn)
            - parent_value;
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(SplitChoice {
                gain,
                predicate,
                yes: (yes, qy),
                no: (no, qn),
            });
        }
    }
    best
}

/// Best-first growth up to `num_rules` leaves; returns every intermediate tree.
fn grow(ctx: &Ctx, mut arena: Arena, num_rules: usize) -> Vec<Arena> {
    let mut snapshots = vec![arena.clone()];
    let mut cache: HashMap<usize, Option<SplitChoice>> = HashMap::new();
    while arena.leaves().len() < num_rules {
        let leaves = arena.leaves();
        for &l in &leaves {
            cache
                .entry(l)
                .or_insert_with(|| best_split(ctx, &arena.nodes[l]));
        }
        let pick = leaves
            .iter()
            .filter_map(|l| cache[l].as_ref().map(|c| (*l, c.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (l, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((l, g)),
            });
        let Some((leaf, _)) = pick else { break };
        let choice = cache.remove(&leaf).flatten().expect("cached split");
        arena.apply(leaf, choice);
        snapshots.push(arena.clone());
    }
    snapshots
}

/// One leaf as seen by the allocation step.
#[derive(Debug, Clone)]
pub struct LeafOption {
    pub rows: usize,
    /// Q per action level; `None` when the level is unavailable.
    pub q: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub actions: Vec<usize>,
    /// Σ (rows_ℓ / N) · Q(ℓ, a_ℓ), accumulated in leaf order.
    pub value: f64,
    /// Σ rows_ℓ · cost(a_ℓ), accumulated in leaf order.
    pub cost_sum: f64,
}

/// Exact multiple-choice knapsack over leaves: one action per leaf,
/// maximizing the weighted outcome subject to `cost_sum / n_total ≤ budget`.
/// Keeps the Pareto frontier of (cost, value) partial assignments.
pub fn allocate(leaves: &[LeafOption], costs: &[f64], n_total: usize, budget: f64) -> Option<Allocation> {
    #[derive(Clone, Copy)]
    struct State {
        cost: f64,
        value: f64,
        prev: usize,
        action: usize,
    }
    let nonneg = costs.iter().all(|&c| c >= 0.0);
    let n = n_total as f64;
    let mut layers: Vec<Vec<State>> = vec![vec![State {
        cost: 0.0,
        value: 0.0,
        prev: usize::MAX,
        action: usize::MAX,
    }]];
    for leaf in leaves {
        let w = leaf.rows as f64 / n;
        let prev = layers.last().expect("initial layer");
        let mut next = Vec::with_capacity(prev.len() * costs.len());
        for (si, s) in prev.iter().enumerate() {
            for (a, q) in leaf.q.iter().enumerate() {
                let Some(q) = q else { continue };
                let cost = s.cost + leaf.rows as f64 * costs[a];
                if nonneg && cost / n > budget {
                    continue;
                }
                next.push(State {
                    cost,
                    value: s.value + w * q,
                    prev: si,
                    action: a,
                });
            }
        }
        next.sort_by(|x, y| x.cost.total_cmp(&y.cost).then(y.value.total_cmp(&x.value)));
        let mut frontier: Vec<State> = Vec::new();
        for s in next {
            if frontier.last().is_none_or(|f| s.value > f.value) {
                frontier.push(s);
            }
        }
        if frontier.is_empty() {
            return None;
        }
        layers.push(frontier);
    }
    let last = layers.last().expect("layer");
    let (mut idx, best) = last
        .iter()
        .enumerate()
        .filter(|(_, s)| s.cost / n <= budget)
        .max_by(|a, b| a.1.value.total_cmp(&b.1.value).then(b.1.cost.total_cmp(&a.1.cost)))?;
    let (value, cost_sum) = (best.value, best.cost);
    let mut actions = vec![0; leaves.len()];
    for depth in (1..layers.len()).rev() {
        let s = layers[depth][idx];
        actions[depth - 1] = s.action;
        idx = s.prev;
    }
    Some(Allocation {
        actions,
        value,
        cost_sum,
    })
}

fn split_columns<'a>(table: &'a DataTable, meta: &DatasetMetadata) -> Vec<(String, &'a ColumnData)> {
    let mut names = meta.covariate_names();
    names.sort();
    names
        .into_iter()
        .filter_map(|n| table.column(&n).ok().map(|c| (n, c)))
        .collect()
}

/// Learn a prescriptive tree with at most `num_rules` leaves.
///
/// Candidate trees are the root alone plus, for every admissible root split,
/// the sequence of trees obtained by best-first growth on unconstrained gain.
/// Each candidate gets an exact budget-constrained action allocation; the
/// best objective wins (ties: fewer leaves, then enumeration order). The
/// candidate set does not depend on the budget, so the result is monotone in
/// it, and at `num_rules ≤ 2` every single split is considered.
pub fn learn_policy(
    table: &DataTable,
    meta: &DatasetMetadata,
    features: &[String],
    num_rules: usize,
    average_budget: f64,
) -> Result<OptimizationResult, PolicyError> {
    if num_rules < 1 {
        return Err(PolicyError::TooFewRules(num_rules));
    }
    let prep = Prepared::new(table, meta)?;
    if !prep.binning.has_costs(meta) {
        return Err(PolicyError::NonNumericActionWithoutCosts(meta.action_column.clone()));
    }
    let bins = covariate_bins(table, meta, features)?;
    let ctx = Ctx {
        prep: &prep,
        strata: strata_ids(table, &bins)?,
        split_cols: split_columns(table, meta),
        costs: prep.binning.levels().iter().map(|l| l.value).collect(),
        n_total: prep.rows.len(),
    };
    let root_q = ctx.segment_q(&prep.rows, None);
    let minimum = root_q
        .q
        .iter()
        .zip(&ctx.costs)
        .filter(|(q, _)| q.is_some())
        .map(|(_, &c)| c)
        .fold(f64::INFINITY, f64::min);
    let root = Arena {
        nodes: vec![ArenaNode {
            rows: prep.rows.clone(),
            q: root_q,
            split: None,
        }],
    };

    let mut candidates = vec![root.clone()];
    if num_rules >= 2 {
        let seeded: Vec<Vec<Arena>> = ctx
            .candidate_splits(&prep.rows)
            .into_par_iter()
            .map(|(predicate, yes, no)| {
                let node = &root.nodes[0];
                let qy = ctx.segment_q(&yes, Some(&node.q));
                let qn = ctx.segment_q(&no, Some(&node.q));
                let mut arena = root.clone();
                arena.apply(
                    0,
                    SplitChoice {
                        gain: 0.0,
                        predicate,
                        yes: (yes, qy),
                        no: (no, qn),
                    },
                );
                grow(&ctx, arena, num_rules)
            })
            .collect();
        candidates.extend(seeded.into_iter().flatten());
    }

    let allocations: Vec<Option<Allocation>> = candidates
        .par_iter()
        .map(|arena| {
            let leaves: Vec<LeafOption> = arena
                .leaves()
                .iter()
                .map(|&l| LeafOption {
                    rows: arena.nodes[l].rows.len(),
                    q: arena.nodes[l].q.q.clone(),
                })
                .collect();
            allocate(&leaves, &ctx.costs, ctx.n_total, average_budget)
        })
        .collect();

    let mut best: Option<(usize, &Allocation, usize)> = None;
    for (i, alloc) in allocations.iter().enumerate() {
        let Some(alloc) = alloc else { continue };
        let leaves = alloc.actions.len();
        let better = match best {
            None => true,
            Some((_, b, bl)) => alloc.value > b.value || (alloc.value == b.value && leaves < bl),
        };
        if better {
            best = Some((i, alloc, leaves));
        }
    }
    let Some((i, alloc, _)) = best else {
        return Err(PolicyError::InfeasibleBudget {
            budget: average_budget,
            minimum,
        });
    };
    let arena = &candidates[i];
    let actions: HashMap<usize, ActionLevel> = arena
        .leaves()
        .into_iter()
        .zip(&alloc.actions)
        .map(|(l, &a)| (l, prep.binning.levels()[a].clone()))
        .collect();
    let tree = PolicyTree {
        root: arena.to_node(0, &actions),
        num_rules: alloc.actions.len(),
        action_column: meta.action_column.clone(),
        features: features.to_vec(),
        average_budget,
    };
    evaluate_policy(&tree, table, meta)
}

/// Re-score a tree on `table`: route rows, recompute segment estimates and
/// report the projected outcome, cost per row and prescribed distribution.
pub fn evaluate_policy(
    tree: &PolicyTree,
    table: &DataTable,
    meta: &DatasetMetadata,
) -> Result<OptimizationResult, PolicyError> {
    for c in tree.columns() {
        if !table.has_column(c) {
            return Err(PolicyError::UnknownColumn(c.to_string()));
        }
    }
    let prep = Prepared::new(table, meta)?;
    let bins = covariate_bins(table, meta, &tree.features)?;
    let ctx = Ctx {
        prep: &prep,
        strata: strata_ids(table, &bins)?,
        split_cols: Vec::new(),
        costs: Vec::new(),
        n_total: prep.rows.len(),
    };
    let baseline_kpi = prep.mean_outcome(&prep.rows);

    struct LeafEval {
        action: ActionLevel,
        rows: usize,
        q: f64,
        inherited: bool,
    }
    fn walk(
        ctx: &Ctx,
        table: &DataTable,
        node: &PolicyNode,
        rows: Vec<usize>,
        parent: Option<&SegmentQ>,
        fallback: f64,
        out: &mut Vec<LeafEval>,
    ) {
        let q = ctx.segment_q(&rows, parent);
        match node {
            PolicyNode::Split { predicate, yes, no } => {
                let col = table.column(predicate.column()).expect("checked column");
                let (y, n): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| predicate.matches(col, r));
                walk(ctx, table, yes, y, Some(&q), fallback, out);
                walk(ctx, table, no, n, Some(&q), fallback, out);
            }
            PolicyNode::Leaf { action, .. } => {
                let level = ctx
                    .prep
                    .binning
                    .levels()
                    .iter()
                    .position(|l| l.label == action.label);
                let (value, inherited) = match level.and_then(|a| q.q[a].map(|v| (v, q.inherited[a]))) {
                    Some(v) => v,
                    None => (fallback, true),
                };
                out.push(LeafEval {
                    action: action.clone(),
                    rows: rows.len(),
                    q: value,
                    inherited,
                });
            }
        }
    }
    let mut leaves = Vec::new();
    walk(&ctx, table, &tree.root, prep.rows.clone(), None, baseline_kpi, &mut leaves);

    let n = prep.rows.len() as f64;
    let mut value = 0.0;
    let mut cost_sum = 0.0;
    for l in &leaves {
        value += l.rows as f64 / n * l.q;
        cost_sum += l.rows as f64 * l.action.value;
    }
    let budget_used = cost_sum / n;

    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for level in prep.binning.levels() {
        if leaves.iter().any(|l| l.action.label == level.label) {
            counts.insert(level.label.clone(), 0);
        }
    }
    for l in &leaves {
        *counts.entry(l.action.label.clone()).or_insert(0) += l.rows;
    }
    let action_distribution = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n))
        .collect();

    let mut tree = tree.clone();
    set_coverage(&mut tree.root, &mut leaves.iter().map(|l| l.rows));
    Ok(OptimizationResult {
        projected_kpi: value,
        baseline_kpi,
        budget_used,
        average_budget: tree.average_budget,
        within_budget: budget_used <= tree.average_budget + 1e-9,
        q_fallback: leaves.iter().any(|l| l.inherited),
        action_distribution,
        n: prep.rows.len(),
        tree,
    })
}

fn set_coverage(node: &mut PolicyNode, counts: &mut impl Iterator<Item = usize>) {
    match node {
        PolicyNode::Split { yes, no, .. } => {
            set_coverage(yes, counts);
            set_coverage(no, counts);
        }
        PolicyNode::Leaf { coverage, .. } => *coverage = counts.next().unwrap_or(0),
    }
}

/// Tree chart with predicate labels on internal nodes and yes/no edges.
pub fn render_tree(tree: &PolicyTree) -> ChartSpec {
    fn node(n: &PolicyNode, edge: &str, action_column: &str) -> TreeNode {
        match n {
            PolicyNode::Split { predicate, yes, no } => TreeNode {
                label: predicate.label(),
                edge: edge.into(),
                children: vec![
                    node(yes, "yes", action_column),
                    node(no, "no", action_column),
                ],
                leaf_action: None,
            },
            PolicyNode::Leaf { action, coverage } => TreeNode {
                label: format!("{action_column} = {} ({coverage} rows)", action.label),
                edge: edge.into(),
                children: Vec::new(),
                leaf_action: Some(action.label.clone()),
            },
        }
    }
    ChartSpec::Tree {
        title: format!("Prescriptive tree for {}", tree.action_column),
        root: node(&tree.root, "", &tree.action_column),
    }
}

/// Convenience: the prescribed action for each row of `table`.
pub fn prescribe(tree: &PolicyTree, table: &DataTable) -> Result<Vec<Value>, PolicyError> {
    let leaves = tree.leaves();
    (0..table.row_count())
        .map(|r| {
            let i = tree.route(table, r)?;
            let a = leaves[i].0;
            Ok(crate::dataset::parse_number(&a.label)
                .map(Value::Number)
                .unwrap_or_else(|| Value::Text(a.label.clone())))
        })
        .collect()
}
