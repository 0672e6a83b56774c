//! CSV and plain-text renderings. Percentages are printed with two decimals.
//!
//! CSV schemas:
//! - performance: `emotion,male,female,average`, closed by a
//!   `grand_average,,,<value>` row
//! - confusion: `predicted,<true class>...`, one row per predicted class
//! - sweep: `alpha,<emotion>...,average,emotion_accuracy`
//! - ttest: `method,mean1,sd1,n1,mean2,sd2,n2,t_value,critical_value_0_05,significant`

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::Emotion;

use super::{AlphaSweep, ConfusionMatrix, PerformanceTable, SampleSummary, TTestResult};

const GRAND_AVERAGE: &str = "grand_average";

fn pct(x: f64) -> String {
    format!("{x:.2}")
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing CSV to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing CSV to memory")).expect("CSV is UTF-8")
}

pub fn performance_csv(table: &PerformanceTable) -> String {
    let mut rows = vec![vec!["emotion".into(), "male".into(), "female".into(), "average".into()]];
    for r in &table.rows {
        rows.push(vec![r.emotion.to_string(), pct(r.male), pct(r.female), pct(r.average)]);
    }
    rows.push(vec![GRAND_AVERAGE.into(), String::new(), String::new(), pct(table.grand_average)]);
    csv_string(rows)
}

/// Reads a performance CSV back; the grand-average row is recomputed.
pub fn read_performance_csv(text: &str) -> Result<PerformanceTable> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut cells = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        if field(0) == GRAND_AVERAGE {
            continue;
        }
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad percentage {:?}", field(i))))
        };
        cells.push((field(0).parse::<Emotion>()?, num(1)?, num(2)?));
    }
    if cells.is_empty() {
        return Err(Error::Parse("performance report has no rows".into()));
    }
    PerformanceTable::from_cells(&cells)
}

pub fn performance_text(table: &PerformanceTable, title: &str) -> String {
    let mut out = format!("{title}\n");
    writeln!(out, "{:<12}{:>9}{:>9}{:>9}", "emotion", "male", "female", "average").unwrap();
    for r in &table.rows {
        writeln!(
            out,
            "{:<12}{:>9}{:>9}{:>9}",
            r.emotion.name(),
            pct(r.male),
            pct(r.female),
            pct(r.average)
        )
        .unwrap();
    }
    writeln!(out, "{:<12}{:>27}", "average", pct(table.grand_average)).unwrap();
    let s = table.summary();
    let (cell_mean, cell_sd) = table.cell_summary();
    writeln!(
        out,
        "summary: mean {} SD {} over per-emotion averages (n = {} cells); cell SD {} (cell mean {})",
        pct(s.mean),
        pct(s.sd),
        s.n,
        pct(cell_sd),
        pct(cell_mean)
    )
    .unwrap();
    out
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut header = vec!["predicted".to_string()];
    header.extend(cm.classes.iter().cloned());
    let mut rows = vec![header];
    for (p, row) in cm.percent.iter().enumerate() {
        let mut r = vec![cm.classes[p].clone()];
        r.extend(row.iter().map(|&x| pct(x)));
        rows.push(r);
    }
    csv_string(rows)
}

pub fn confusion_text(cm: &ConfusionMatrix, title: &str) -> String {
    let mut out = format!("{title}\n(columns: true class, rows: predicted class, %)\n");
    write!(out, "{:<12}", "").unwrap();
    for c in &cm.classes {
        write!(out, "{c:>11}").unwrap();
    }
    out.push('\n');
    for (p, row) in cm.percent.iter().enumerate() {
        write!(out, "{:<12}", cm.classes[p]).unwrap();
        for &x in row {
            write!(out, "{:>11}", pct(x)).unwrap();
        }
        out.push('\n');
    }
    write!(out, "{:<12}", "n").unwrap();
    for n in &cm.column_totals {
        write!(out, "{n:>11}").unwrap();
    }
    out.push('\n');
    out
}

pub fn sweep_csv(sweep: &AlphaSweep) -> String {
    let emotions: Vec<Emotion> = sweep
        .points
        .first()
        .map(|p| p.per_emotion.iter().map(|e| e.0).collect())
        .unwrap_or_default();
    let mut header = vec!["alpha".to_string()];
    header.extend(emotions.iter().map(|e| e.to_string()));
    header.push("average".into());
    header.push("emotion_accuracy".into());
    let mut rows = vec![header];
    for p in &sweep.points {
        let mut r = vec![format!("{:.1}", p.alpha)];
        r.extend(p.per_emotion.iter().map(|e| pct(e.1)));
        r.push(pct(p.average));
        r.push(p.emotion_accuracy.map(pct).unwrap_or_default());
        rows.push(r);
    }
    csv_string(rows)
}

pub fn sweep_text(sweep: &AlphaSweep) -> String {
    let mut out = format!("alpha sweep ({})\n", sweep.approach);
    writeln!(out, "{:>6}{:>10}{:>10}", "alpha", "average", "emotion").unwrap();
    for p in &sweep.points {
        writeln!(
            out,
            "{:>6.1}{:>10}{:>10}",
            p.alpha,
            pct(p.average),
            p.emotion_accuracy.map(pct).unwrap_or_else(|| "-".into())
        )
        .unwrap();
    }
    out
}

pub fn ttest_csv(r: &TTestResult) -> String {
    let s = |x: &SampleSummary| vec![x.mean.to_string(), x.sd.to_string(), x.n.to_string()];
    let mut row = vec![r.method.to_string()];
    row.extend(s(&r.first));
    row.extend(s(&r.second));
    row.push(format!("{:.4}", r.t_value));
    row.push(r.critical_value_0_05.to_string());
    row.push(r.significant().to_string());
    csv_string(vec![
        "method,mean1,sd1,n1,mean2,sd2,n2,t_value,critical_value_0_05,significant"
            .split(',')
            .map(String::from)
            .collect(),
        row,
    ])
}

/// The summaries (78.25, 7.64, 12) and (83.75, 7.55, 12) were published
/// with t = 3.618, which neither formula reproduces.
fn is_reference_pair(r: &TTestResult) -> bool {
    let close = |s: &SampleSummary, m: f64, sd: f64| {
        (s.mean - m).abs() < 0.005 && (s.sd - sd).abs() < 0.005 && s.n == 12
    };
    close(&r.first, 78.25, 7.64) && close(&r.second, 83.75, 7.55)
}

pub fn ttest_text(r: &TTestResult) -> String {
    let mut out = String::new();
    writeln!(out, "t test ({}), second minus first", r.method).unwrap();
    for (name, s) in [("first", r.first), ("second", r.second)] {
        writeln!(out, "  {name:<7} mean {:.2}  SD {:.2}  n {}", s.mean, s.sd, s.n).unwrap();
    }
    writeln!(
        out,
        "  t = {:.4}; one-sided 5% critical value {}; {}",
        r.t_value,
        r.critical_value_0_05,
        if r.significant() { "significant" } else { "not significant" }
    )
    .unwrap();
    if is_reference_pair(r) {
        out.push_str(
            "  note: t = 3.618 has been reported for these two summaries; neither the Welch \
             nor the pooled two-sample formula reproduces it (both give about 1.77), so the \
             value above is computed from the stated means, SDs and n only.\n",
        );
    }
    out
}
