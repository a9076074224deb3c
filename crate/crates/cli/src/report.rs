//! Text renderings of evaluation reports.

use std::collections::BTreeSet;
use std::fmt::Write;

use a3d::inference::EvalReport;

/// Column-aligned accuracy table, one row per named report.
pub fn table(rows: &[(String, EvalReport)]) -> String {
    let splits: BTreeSet<u8> = rows.iter().flat_map(|(_, r)| r.per_split.keys().copied()).collect();
    let mut header = vec!["pipeline".to_string()];
    header.extend(splits.iter().map(|s| format!("split{s}")));
    header.extend(["mean".to_string(), "routed_to_p2".to_string(), "samples".to_string()]);

    let mut cells: Vec<Vec<String>> = vec![header];
    for (name, r) in rows {
        let mut row = vec![name.clone()];
        row.extend(splits.iter().map(|s| r.per_split.get(s).map_or("-".into(), |a| format!("{a:.4}"))));
        row.push(format!("{:.4}", r.mean));
        row.push(r.routed_to_p2.map_or("-".into(), |f| format!("{f:.4}")));
        row.push(r.num_samples.to_string());
        cells.push(row);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// `metric<TAB>split<TAB>value` lines with full-precision values.
pub fn metrics(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    for (name, r) in rows {
        for (s, a) in &r.per_split {
            let _ = writeln!(out, "{name}.accuracy\t{s}\t{a}");
        }
        let _ = writeln!(out, "{name}.accuracy\tmean\t{}", r.mean);
        if let Some(f) = r.routed_to_p2 {
            let _ = writeln!(out, "{name}.routed_to_p2\tall\t{f}");
        }
        let _ = writeln!(out, "{name}.samples\tall\t{}", r.num_samples);
    }
    out
}

/// Reads a value back out of [`metrics`] output.
pub fn lookup(metrics: &str, metric: &str, split: &str) -> Option<f64> {
    metrics.lines().find_map(|l| {
        let mut f = l.split('\t');
        (f.next() == Some(metric) && f.next() == Some(split)).then(|| f.next()?.parse().ok())?
    })
}
