//! Renders reports in the layout of the accuracy, training-time and
//! independent-vs-mixed tables, or as CSV / JSON.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::gain::tt_reduction_pct;
use super::report::{average_row, ExperimentReport, ReportRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

pub fn emit_tables(report: &ExperimentReport, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        TableFormat::Csv => to_csv(&report.rows),
        TableFormat::Text => Ok(to_text(report)),
    }
}

const CSV_HEADER: [&str; 25] = [
    "label",
    "mixed",
    "backbone",
    "n_classes",
    "f",
    "train_per_class",
    "ta_baseline",
    "ta_proposed",
    "ta_baseline_sd",
    "ta_proposed_sd",
    "gain_pp",
    "gain_rel_pct",
    "tt_baseline_s",
    "tt_proposed_s",
    "tt_reduction_pct",
    "tt_speedup",
    "epochs_baseline",
    "epochs_proposed",
    "params_baseline",
    "params_proposed",
    "similarity_pct",
    "repeats",
    "threads",
    "average",
    "format",
];

fn d1(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

fn int(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_record(r: &ReportRow, average: bool) -> Vec<String> {
    vec![
        r.label.clone(),
        r.mixed.to_string(),
        r.backbone.clone(),
        r.n_classes.to_string(),
        r.f.to_string(),
        r.train_per_class.to_string(),
        d1(r.ta_baseline),
        d1(r.ta_proposed),
        d1(r.ta_baseline_sd),
        d1(r.ta_proposed_sd),
        d1(r.gain_pp),
        d1(r.gain_rel_pct),
        d1(r.tt_baseline_s),
        d1(r.tt_proposed_s),
        d1(r.tt_reduction_pct),
        d1(r.tt_speedup),
        d1(r.epochs_baseline),
        d1(r.epochs_proposed),
        int(r.params_baseline),
        int(r.params_proposed),
        d1(r.similarity_pct),
        r.repeats.to_string(),
        r.threads.to_string(),
        average.to_string(),
        "d1".into(),
    ]
}

/// One line per row plus a trailing overall average; measured values at one decimal.
fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(csv_record(r, false))?;
    }
    let refs: Vec<&ReportRow> = rows.iter().collect();
    if !refs.is_empty() {
        w.write_record(csv_record(&average_row(&refs), true))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Reads rows written by the CSV emitter (the average line is skipped).
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let avg_col = headers
        .iter()
        .position(|h| h == "average")
        .ok_or_else(|| Error::Validation("csv report lacks an `average` column".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(avg_col) == Some("true") {
            continue;
        }
        out.push(rec.deserialize(Some(&headers))?);
    }
    Ok(out)
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.prec$}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.1}%"))
}

fn render(out: &mut String, title: &str, header: &[String], body: &[Vec<String>]) {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = (0..cols)
            .map(|i| {
                let c = cells.get(i).map(String::as_str).unwrap_or("");
                if i < 2 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        format!("| {} |", parts.join(" | "))
    };
    let rule = format!("+{}+", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("+"));
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "{}", line(header));
    let _ = writeln!(out, "{}", rule.replace('-', "="));
    for row in body {
        if row.first().is_some_and(|c| c == "Average" || c.starts_with("TT ")) {
            let _ = writeln!(out, "{rule}");
        }
        let _ = writeln!(out, "{}", line(row));
    }
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out);
}

fn ordered<T: Clone + PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn to_text(report: &ExperimentReport) -> String {
    let rows = &report.rows;
    let mut out = String::new();
    let sizes: BTreeSet<usize> = rows.iter().map(|r| r.train_per_class).collect();
    let class_counts: BTreeSet<usize> = rows.iter().map(|r| r.n_classes).collect();

    // Accuracy tables, one per training-set size.
    for &size in &sizes {
        let in_table: Vec<&ReportRow> = rows.iter().filter(|r| r.train_per_class == size).collect();
        let counts: Vec<usize> = class_counts
            .iter()
            .copied()
            .filter(|n| in_table.iter().any(|r| r.n_classes == *n))
            .collect();
        let mut header = vec!["Species".to_string(), "CNN".into(), "Similarity".into()];
        for n in &counts {
            header.extend([
                format!("{n}c Baseline"),
                format!("{n}c P"),
                format!("{n}c Gain(pp)"),
                format!("{n}c Gain(rel)"),
            ]);
        }
        let keys = ordered(in_table.iter().map(|r| (r.label.clone(), r.backbone.clone())));
        let mut body = Vec::new();
        let mut sims = Vec::new();
        for (label, backbone) in &keys {
            let group: Vec<&&ReportRow> = in_table
                .iter()
                .filter(|r| &r.label == label && &r.backbone == backbone)
                .collect();
            let sim = group.iter().find_map(|r| r.similarity_pct);
            sims.extend(sim);
            let mut line = vec![label.clone(), backbone.clone(), cell(sim, 1)];
            for n in &counts {
                match group.iter().find(|r| r.n_classes == *n) {
                    Some(r) => line.extend([
                        cell(r.ta_baseline, 1),
                        cell(r.ta_proposed, 1),
                        cell(r.gain_pp, 1),
                        pct(r.gain_rel_pct),
                    ]),
                    None => line.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            body.push(line);
        }
        let sim_avg = (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64);
        let mut avg_line = vec!["Average".to_string(), String::new(), cell(sim_avg, 1)];
        for n in &counts {
            let of_n: Vec<&ReportRow> = in_table.iter().copied().filter(|r| r.n_classes == *n).collect();
            let a = average_row(&of_n);
            avg_line.extend([
                cell(a.ta_baseline, 1),
                cell(a.ta_proposed, 1),
                cell(a.gain_pp, 1),
                pct(a.gain_rel_pct),
            ]);
        }
        body.push(avg_line);
        render(
            &mut out,
            &format!("TA (%) of the proposed approach (P) against the baseline, {size} training images per class"),
            &header,
            &body,
        );
    }

    // Training time: backbone × class count against training-set size.
    let backbones = ordered(rows.iter().map(|r| r.backbone.clone()));
    let mut header = vec!["CNN".to_string(), "Classes".into()];
    for s in &sizes {
        header.extend([format!("{s} Baseline"), format!("{s} P")]);
    }
    let mean_tt = |rs: &[&ReportRow], get: fn(&ReportRow) -> Option<f64>| {
        let v: Vec<f64> = rs.iter().filter_map(|r| get(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut body = Vec::new();
    for b in &backbones {
        let of_b: Vec<&ReportRow> = rows.iter().filter(|r| &r.backbone == b).collect();
        let counts = ordered(class_counts.iter().copied().filter(|n| of_b.iter().any(|r| r.n_classes == *n)));
        for n in &counts {
            let mut line = vec![b.clone(), n.to_string()];
            for s in &sizes {
                let rs: Vec<&ReportRow> = of_b
                    .iter()
                    .copied()
                    .filter(|r| r.n_classes == *n && r.train_per_class == *s)
                    .collect();
                line.push(cell(mean_tt(&rs, |r| r.tt_baseline_s), 2));
                line.push(cell(mean_tt(&rs, |r| r.tt_proposed_s), 2));
            }
            body.push(line);
        }
        let mut avg = vec!["Average".to_string(), b.clone()];
        let mut reduction = vec!["TT reduction".to_string(), b.clone()];
        let mut speedup = vec!["TT speedup".to_string(), b.clone()];
        for s in &sizes {
            let rs: Vec<&ReportRow> = of_b.iter().copied().filter(|r| r.train_per_class == *s).collect();
            let (tb, tp) = (mean_tt(&rs, |r| r.tt_baseline_s), mean_tt(&rs, |r| r.tt_proposed_s));
            avg.extend([cell(tb, 2), cell(tp, 2)]);
            let red = tb.zip(tp).and_then(|(b, p)| tt_reduction_pct(b, p));
            let spd = tb.zip(tp).and_then(|(b, p)| (p > 0.0).then(|| b / p));
            reduction.extend([pct(red), String::new()]);
            speedup.extend([spd.map_or_else(|| "n/a".into(), |x| format!("{x:.1}x")), String::new()]);
        }
        body.extend([avg, reduction, speedup]);
    }
    render(
        &mut out,
        "Transfer learning TT (s) of the proposed approach (P) against the baseline",
        &header,
        &body,
    );

    // Independent species against the mixed selection, at three classes per species.
    let mixed: Vec<&ReportRow> = rows.iter().filter(|r| r.mixed).collect();
    let indep: Vec<&ReportRow> = rows.iter().filter(|r| !r.mixed && r.n_classes == 3).collect();
    if !mixed.is_empty() && !indep.is_empty() {
        let header: Vec<String> = ["Species", "CNN", "Baseline", "P", "Gain(pp)", "Gain(rel)"]
            .map(String::from)
            .to_vec();
        let mut body = Vec::new();
        for (name, set) in [("Indep. (avg)", &indep), ("Mixed", &mixed)] {
            for b in &backbones {
                let of_b: Vec<&ReportRow> = set.iter().copied().filter(|r| &r.backbone == b).collect();
                if of_b.is_empty() {
                    continue;
                }
                let a = average_row(&of_b);
                body.push(vec![
                    name.to_string(),
                    b.clone(),
                    cell(a.ta_baseline, 1),
                    cell(a.ta_proposed, 1),
                    cell(a.gain_pp, 1),
                    pct(a.gain_rel_pct),
                ]);
            }
        }
        render(
            &mut out,
            "TA (%) training each species independently or mixed",
            &header,
            &body,
        );
    }

    if !report.notes.is_empty() {
        let _ = writeln!(out, "Notes:");
        for n in &report.notes {
            let _ = writeln!(out, "  - {n}");
        }
    }
    let _ = writeln!(out, "threads: {}  seed: {}", report.threads, report.seed);
    out
}

#[cfg(test)]
mod tests {
    use super::super::report::tests::row;
    use super::*;

    fn report(rows: Vec<ReportRow>) -> ExperimentReport {
        ExperimentReport {
            rows,
            seed: 1,
            threads: 1,
            notes: vec![],
        }
    }

    #[test]
    fn one_row_and_identical_average() {
        let rep = report(vec![row("Bird", 3, 91.0, 92.1, 990.0, 15.0)]);
        let text = emit_tables(&rep, TableFormat::Text).unwrap();
        let bird = text.lines().find(|l| l.starts_with("| Bird")).unwrap();
        let avg = text.lines().find(|l| l.starts_with("| Average ")).unwrap();
        let nums = |l: &str| l.split('|').skip(3).map(str::trim).map(String::from).collect::<Vec<_>>();
        assert_eq!(nums(bird), nums(avg));
        assert!(text.contains("98.5%"), "{text}");
    }

    #[test]
    fn csv_round_trip_at_one_decimal() {
        let mut a = row("Bird", 3, 91.04, 92.06, 990.0, 15.0);
        a.similarity_pct = None;
        let rep = report(vec![a.clone(), row("Fruit", 4, 80.5, 81.8, 1110.0, 16.0)]);
        let csv = emit_tables(&rep, TableFormat::Csv).unwrap();
        let back = parse_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        let r = &back[0];
        assert_eq!(r.label, "Bird");
        assert_eq!(r.ta_baseline, Some(91.0));
        assert_eq!(r.ta_proposed, Some(92.1));
        assert_eq!(r.similarity_pct, None);
        assert_eq!(r.params_proposed, a.params_proposed);
        assert_eq!(r.n_classes, 3);
    }

    #[test]
    fn json_is_lossless() {
        let mut r = row("Pepper", 5, 61.123456789, 64.2, 0.123456789, 0.001);
        r.f = 0.2;
        let rep = report(vec![r]);
        let json = emit_tables(&rep, TableFormat::Json).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn mixed_section_appears_with_both_kinds() {
        let mut m = row("Mixed", 12, 71.1, 72.9, 10.0, 1.0);
        m.mixed = true;
        let rep = report(vec![row("Bird", 3, 91.0, 92.1, 9.0, 1.0), m]);
        let text = emit_tables(&rep, TableFormat::Text).unwrap();
        assert!(text.contains("Indep. (avg)"));
    }
}
