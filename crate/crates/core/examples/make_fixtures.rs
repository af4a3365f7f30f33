//! Regenerates the small dataset fixtures under `fixtures/`:
//! a PubTabNet-style annotation file, a SciTSR-style directory, a markup
//! corpus for metric checks, and the spanning-header ground truth.
//!
//! Run with `cargo run --example make_fixtures`.

use std::fs;
use std::path::Path;

use serde_json::json;
use tablekit::imaging::synth::{random_table, render_table, RenderStyle};
use tablekit::table::{logical_to_matrix, matrix_to_markup, GroundTruthRecord, LogicalCell, LogicalTable, MatrixEntry};

fn structure_tokens(table: &LogicalTable) -> Vec<String> {
    let matrix = logical_to_matrix(table).expect("valid layout");
    let mut tokens = vec!["<thead>".to_string()];
    for (r, row) in matrix.rows.iter().enumerate() {
        if r == 1 {
            tokens.push("</thead>".into());
            tokens.push("<tbody>".into());
        }
        tokens.push("<tr>".into());
        for entry in row {
            if let MatrixEntry::Anchor { rowspan, colspan, .. } = entry {
                if *rowspan == 1 && *colspan == 1 {
                    tokens.push("<td>".into());
                } else {
                    tokens.push("<td".into());
                    if *rowspan > 1 {
                        tokens.push(format!(" rowspan=\"{rowspan}\""));
                    }
                    if *colspan > 1 {
                        tokens.push(format!(" colspan=\"{colspan}\""));
                    }
                    tokens.push(">".into());
                }
                tokens.push("</td>".into());
            }
        }
        tokens.push("</tr>".into());
    }
    tokens.push(if matrix.rows.len() > 1 { "</tbody>" } else { "</thead>" }.into());
    tokens
}

fn pubtabnet(dir: &Path) {
    fs::create_dir_all(dir.join("val")).unwrap();
    let mut lines = Vec::new();
    for i in 0..5 {
        let id = format!("ptn_{i}");
        let table = random_table(&id, 3 + i % 3, 3 + i % 2, 0.3, 100 + i as u64);
        render_table(&table, &id, &RenderStyle::default())
            .unwrap()
            .save(dir.join("val").join(format!("{id}.png")))
            .unwrap();
        let cells: Vec<_> = table
            .cells
            .iter()
            .map(|c| json!({ "tokens": c.content.chars().map(String::from).collect::<Vec<_>>() }))
            .collect();
        let line = json!({
            "filename": format!("{id}.png"),
            "split": "val",
            "imgid": i,
            "html": { "structure": { "tokens": structure_tokens(&table) }, "cells": cells },
        });
        lines.push(line.to_string());
    }
    fs::write(dir.join("annotations.jsonl"), lines.join("\n") + "\n").unwrap();
}

fn scitsr(dir: &Path) {
    fs::create_dir_all(dir.join("structure")).unwrap();
    fs::create_dir_all(dir.join("img")).unwrap();
    for i in 0..3 {
        let id = format!("sci_{i}");
        let table = random_table(&id, 4, 3 + i, 0.25, 200 + i as u64);
        render_table(&table, &id, &RenderStyle::default())
            .unwrap()
            .save(dir.join("img").join(format!("{id}.png")))
            .unwrap();
        let cells: Vec<_> = table
            .cells
            .iter()
            .enumerate()
            .map(|(k, c)| {
                json!({
                    "id": k,
                    "tex": c.content,
                    "content": c.content.split_whitespace().collect::<Vec<_>>(),
                    "start_row": c.start_row,
                    "end_row": c.end_row,
                    "start_col": c.start_col,
                    "end_col": c.end_col,
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&json!({ "cells": cells })).unwrap();
        fs::write(dir.join("structure").join(format!("{id}.json")), text + "\n").unwrap();
    }
}

fn markup_corpus(path: &Path) {
    let mut lines = Vec::new();
    for i in 0..60u64 {
        let rows = 1 + (i % 6) as usize;
        let cols = 1 + (i / 6 % 5) as usize;
        let table = random_table(&format!("m{i:02}"), rows, cols, 0.3, 300 + i);
        let markup = matrix_to_markup(&logical_to_matrix(&table).unwrap());
        lines.push(json!({ "id": table.id, "markup": markup.as_str() }).to_string());
    }
    for (id, markup) in [
        ("empty_cell", "<table><tr><td></td><td>x</td></tr></table>"),
        ("escaped", "<table><tr><td>a &lt; b &amp; c</td></tr></table>"),
        (
            "sections",
            "<table><thead><tr><td>h</td></tr></thead><tbody><tr><td>1</td></tr></tbody></table>",
        ),
    ] {
        lines.push(json!({ "id": id, "markup": markup }).to_string());
    }
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn spanning_header(path: &Path) {
    let table = LogicalTable::new(
        "spanning_header",
        vec![
            LogicalCell::new(0, 0, 0, 1, "A").unwrap(),
            LogicalCell::new(1, 1, 0, 0, "B").unwrap(),
            LogicalCell::new(1, 1, 1, 1, "C").unwrap(),
        ],
    );
    let rec = GroundTruthRecord::from_table(&table, "spanning_header.png");
    fs::write(path, serde_json::to_string(&rec).unwrap() + "\n").unwrap();
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    pubtabnet(&root.join("pubtabnet_mini"));
    scitsr(&root.join("scitsr_mini"));
    markup_corpus(&root.join("markup_corpus.jsonl"));
    spanning_header(&root.join("spanning_header.jsonl"));
    println!("fixtures written to {}", root.display());
}
