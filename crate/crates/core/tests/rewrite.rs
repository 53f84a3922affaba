//! Shipping predicates to contractors must not change a global result.

use std::collections::HashMap;

use proptest::prelude::*;

use livefed::dsl::parse_query;
use livefed::query::{
    bind, build, evaluate_assembly, rewrite_over_views, rewrite_without_pushdown, Catalog, Fragment, Relation,
    RestViewDef, Rewritten,
};
use livefed::readcheck::{ReadCheckEntry, ReadCheckVector};
use livefed::{ColumnType, Value};

const VIEWS: [(&str, &[&str]); 3] = [("R", &["id", "a", "b"]), ("S", &["id", "a"]), ("T", &["id", "b", "c"])];

struct Views;

impl Catalog for Views {
    fn relation(&self, name: &str) -> Option<Relation> {
        let (n, cols) = VIEWS.iter().find(|(n, _)| n.eq_ignore_ascii_case(name))?;
        Some(Relation::Rest(RestViewDef {
            name: n.to_string(),
            columns: cols.iter().map(|c| (c.to_string(), ColumnType::Int)).collect(),
            url: format!("http://src:1/Db/Db/{n}"),
            uri_type: None,
        }))
    }
}

/// What a contractor returns for each fetch: its rows, filtered by the
/// shipped predicate when there is one.
fn fragments(rw: &Rewritten, data: &HashMap<&str, Vec<Vec<Value>>>) -> HashMap<String, Fragment> {
    let mut out = HashMap::new();
    for sq in &rw.subqueries {
        let schema = sq.view.schema(&sq.view.name);
        let test = sq.pushed.as_ref().map(|p| bind(p, &schema).unwrap().0);
        let rows: Vec<Vec<Value>> = data[sq.view.name.as_str()]
            .iter()
            .filter(|r| test.as_ref().is_none_or(|t| t.test(r).unwrap()))
            .cloned()
            .collect();
        let lineage = rows
            .iter()
            .map(|r| ReadCheckVector::from_entries([ReadCheckEntry::Absent(format!("{}{}", sq.view.name, r[0]))]))
            .collect();
        out.insert(sq.fingerprint.clone(), Fragment { rows, lineage });
    }
    out
}

fn cell() -> impl Strategy<Value = Value> {
    prop_oneof![1 => Just(Value::Null), 6 => (0i64..4).prop_map(Value::Int)]
}

fn table(width: usize) -> impl Strategy<Value = Vec<Vec<Value>>> {
    prop::collection::vec(prop::collection::vec(cell(), width - 1), 0..7).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.insert(0, Value::Int(i as i64));
                r
            })
            .collect()
    })
}

fn predicate(q: &'static str, cols: &'static [&'static str]) -> impl Strategy<Value = String> {
    let atom = (prop::sample::select(cols), 0i64..4, 0usize..5).prop_map(move |(c, n, k)| match k {
        0 => format!("{q}.{c} = {n}"),
        1 => format!("{q}.{c} < {n}"),
        2 => format!("{q}.{c} is null"),
        3 => format!("not ({q}.{c} >= {n})"),
        _ => format!("{q}.{c} in ({n}, null)"),
    });
    prop::collection::vec(atom, 1..3).prop_map(|a| a.join(" and "))
}

fn query() -> impl Strategy<Value = String> {
    prop_oneof![
        predicate("R", VIEWS[0].1).prop_map(|p| format!("select * from R where {p}")),
        (predicate("R", VIEWS[0].1), predicate("S", VIEWS[1].1))
            .prop_map(|(p, q)| format!("select * from R join S on R.id = S.a where {p} and {q}")),
        // Shared columns of a natural join keep the left qualifier.
        (predicate("R", VIEWS[0].1), predicate("T", &["c"]))
            .prop_map(|(p, q)| format!("select * from R natural join T where {p} or {q}")),
        (predicate("S", VIEWS[1].1), predicate("T", VIEWS[2].1))
            .prop_map(|(p, q)| format!("select S.a, count(*) as n from S join T on S.id = T.id where {p} and {q} group by S.a")),
        (predicate("R", VIEWS[0].1), predicate("S", VIEWS[1].1))
            .prop_map(|(p, q)| format!("select id, a from R where {p} union select id, a from S where {q}")),
        (predicate("R", VIEWS[0].1), predicate("T", VIEWS[2].1))
            .prop_map(|(p, q)| format!("select R.id, T.c from R join T on R.b = T.b and R.a = T.c where {p} and not ({q})")),
    ]
}

fn sorted(mut rows: Vec<Vec<Value>>) -> Vec<String> {
    let mut out: Vec<String> = rows.drain(..).map(|r| format!("{r:?}")).collect();
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn pushdown_preserves_results(r in table(3), s in table(2), t in table(3), text in query()) {
        let data = HashMap::from([("R", r), ("S", s), ("T", t)]);
        let plan = build(&parse_query(&text).unwrap(), &Views).unwrap();
        let pushed = rewrite_over_views(plan.clone());
        let plain = rewrite_without_pushdown(plan);
        prop_assert!(plain.subqueries.iter().all(|s| s.pushed.is_none()));
        let a = evaluate_assembly(&pushed.assembly, &fragments(&pushed, &data)).unwrap();
        let b = evaluate_assembly(&plain.assembly, &fragments(&plain, &data)).unwrap();
        prop_assert_eq!(&a.result.columns, &b.result.columns);
        prop_assert_eq!(sorted(a.result.rows), sorted(b.result.rows), "{}", text);
    }
}

#[test]
fn single_source_conjuncts_are_shipped() {
    let plan = build(&parse_query("select * from R join S on R.id = S.a where R.a = 1 and S.id < 2").unwrap(), &Views).unwrap();
    let rw = rewrite_over_views(plan);
    assert!(rw.subqueries.iter().all(|s| s.pushed.is_some()), "{:?}", rw.subqueries);
}
