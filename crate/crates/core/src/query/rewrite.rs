//! Decomposition of a global plan into per-contractor fetches plus the
//! assembly evaluated at the coordinator.

use crate::dsl::Expr;

use super::eval::fingerprint;
use super::plan::{QueryPlan, RestViewDef};
use super::planner::push_down;

#[derive(Clone, Debug, PartialEq)]
pub struct Subquery {
    pub url: String,
    pub view: RestViewDef,
    /// `$n`-form predicate evaluated by the contractor.
    pub pushed: Option<Expr>,
    pub fingerprint: String,
    /// The fetch as a plan node (a `RestGet`).
    pub plan: QueryPlan,
}

#[derive(Clone, Debug)]
pub struct Rewritten {
    pub subqueries: Vec<Subquery>,
    pub assembly: QueryPlan,
}

/// Pushes single-view predicates into the REST fetches and lists the
/// distinct fetches in plan order.
pub fn rewrite_over_views(plan: QueryPlan) -> Rewritten {
    decompose(push_down(plan, true))
}

/// The same decomposition with every predicate left at the coordinator.
pub fn rewrite_without_pushdown(plan: QueryPlan) -> Rewritten {
    decompose(plan)
}

fn decompose(assembly: QueryPlan) -> Rewritten {
    let mut subqueries: Vec<Subquery> = Vec::new();
    for leaf in assembly.rest_leaves() {
        let QueryPlan::RestGet { view, pushed, .. } = leaf else { continue };
        let fp = fingerprint(view, pushed.as_ref());
        if subqueries.iter().any(|s| s.fingerprint == fp) {
            continue;
        }
        subqueries.push(Subquery {
            url: view.url.clone(),
            view: view.clone(),
            pushed: pushed.clone(),
            fingerprint: fp,
            plan: leaf.clone(),
        });
    }
    Rewritten { subqueries, assembly }
}
