//! Property tests over table conversion, markup parsing, metrics and model
//! response parsing.

use proptest::prelude::*;
use tablekit::gateway::{parse_plans_response, parse_reflection_response};
use tablekit::imaging::ToolId;
use tablekit::table::{
    logical_to_matrix, markup_to_logical, matrix_to_markup, parse_markup, AttributeStyle, LogicalCell, LogicalTable,
    MarkupTree, ParseMode,
};
use tablekit::teds::{edit_distance, micro_f1, teds, to_ordered_tree, CostModel, TedsMode};

/// Packs cells row-major into a `rows` x `cols` grid. Each free slot takes
/// the next proposed span, shrunk until it fits.
fn pack(rows: usize, cols: usize, spans: &[(usize, usize)], texts: &[String]) -> LogicalTable {
    let mut used = vec![vec![false; cols]; rows];
    let mut cells = Vec::new();
    let mut k = 0;
    for r in 0..rows {
        for c in 0..cols {
            if used[r][c] {
                continue;
            }
            let (want_rs, want_cs) = spans[k % spans.len()];
            let mut cs = 1;
            while cs < want_cs && c + cs < cols && !used[r][c + cs] {
                cs += 1;
            }
            let mut rs = 1;
            while rs < want_rs && r + rs < rows && (c..c + cs).all(|x| !used[r + rs][x]) {
                rs += 1;
            }
            for row in used.iter_mut().skip(r).take(rs) {
                row[c..c + cs].iter_mut().for_each(|u| *u = true);
            }
            cells.push(LogicalCell::new(r, r + rs - 1, c, c + cs - 1, texts[k % texts.len()].clone()).unwrap());
            k += 1;
        }
    }
    LogicalTable::new("p", cells).sorted()
}

fn layout() -> impl Strategy<Value = LogicalTable> {
    (
        1usize..=8,
        1usize..=8,
        prop::collection::vec((1usize..=3, 1usize..=3), 1..16),
        prop::collection::vec("[a-z0-9<>&\"']{0,6}", 1..16),
    )
        .prop_map(|(r, c, spans, texts)| pack(r, c, &spans, &texts))
}

fn tree_of(t: &LogicalTable) -> MarkupTree {
    let markup = matrix_to_markup(&logical_to_matrix(t).unwrap());
    parse_markup(markup.as_str(), ParseMode::Strict).unwrap().tree
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn layouts_round_trip_through_markup(t in layout()) {
        let back = markup_to_logical(&tree_of(&t), "p").unwrap().sorted();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn serialized_markup_parses_back(t in layout(), compact in any::<bool>()) {
        let tree = tree_of(&t);
        let style = if compact { AttributeStyle::Compact } else { AttributeStyle::Explicit };
        let again = parse_markup(tree.to_markup(style).as_str(), ParseMode::Strict).unwrap().tree;
        prop_assert_eq!(again, tree);
    }

    #[test]
    fn teds_is_bounded_and_symmetric(a in layout(), b in layout()) {
        let (ta, tb) = (tree_of(&a), tree_of(&b));
        for mode in [TedsMode::Full, TedsMode::StructOnly] {
            let ab = teds(&ta, &tb, mode).value;
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - teds(&tb, &ta, mode).value).abs() < 1e-12);
        }
        prop_assert_eq!(teds(&ta, &ta, TedsMode::Full).value, 1.0);
        prop_assert!(teds(&ta, &tb, TedsMode::StructOnly).value >= teds(&ta, &tb, TedsMode::Full).value - 1e-12);
    }

    #[test]
    fn edit_distance_obeys_the_triangle_inequality(a in layout(), b in layout(), c in layout()) {
        let cost = CostModel::new(TedsMode::Full);
        let [ta, tb, tc] = [&a, &b, &c].map(|t| to_ordered_tree(&tree_of(t)));
        let ac = edit_distance(&ta, &tc, &cost);
        prop_assert!(ac <= edit_distance(&ta, &tb, &cost) + edit_distance(&tb, &tc, &cost) + 1e-9);
    }

    #[test]
    fn micro_f1_is_bounded_and_symmetric(
        p in prop::collection::vec("[abc]", 0..6),
        g in prop::collection::vec("[abc]", 0..6),
    ) {
        let f = micro_f1(&p, &g);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, micro_f1(&g, &p));
        prop_assert_eq!(micro_f1(&p, &p), 1.0);
    }

    #[test]
    fn plan_parsing_respects_limits(raw in ".{0,200}", max_len in 1usize..5, max_plans in 1usize..4) {
        let parsed = parse_plans_response(&raw, max_len, max_plans, &ToolId::ALL);
        prop_assert!(!parsed.plans.is_empty() && parsed.plans.len() <= max_plans);
        prop_assert!(parsed.plans.iter().all(|p| p.len() <= max_len));
    }

    #[test]
    fn plan_parsing_reads_numbered_lines(
        plans in prop::collection::vec(prop::collection::vec(0usize..5, 1..4), 1..4),
    ) {
        let text: String = plans
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let names: Vec<&str> = p.iter().map(|&t| ToolId::ALL[t].as_str()).collect();
                format!("{}. {}\n", i + 1, names.join(" -> "))
            })
            .collect();
        let parsed = parse_plans_response(&text, 4, 3, &ToolId::ALL);
        for plan in &parsed.plans {
            prop_assert!(plan.steps.windows(2).all(|w| w[0] != w[1]));
        }
        let mut first: Vec<ToolId> = plans[0].iter().map(|&t| ToolId::ALL[t]).collect();
        first.dedup();
        prop_assert_eq!(&parsed.plans[0].steps, &first);
    }

    #[test]
    fn reflection_verdict_is_binary(raw in ".{0,80}") {
        let r = parse_reflection_response(&raw);
        prop_assert!(r.gamma <= 1);
        prop_assert!(r.parsed || r.gamma == 0);
    }
}
