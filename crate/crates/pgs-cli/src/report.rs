//! Results-CSV parsing and the per-task, per-method summary table.

use anyhow::{bail, Context, Result};
use pgs_core::search::RESULTS_HEADER;
use pgs_core::stats;

/// One results row; config columns stay verbatim so grouping and labels
/// reproduce the file's own spelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub task: String,
    pub method: String,
    pub p: String,
    pub epochs: String,
    pub t_test: String,
    pub m_traj: String,
    pub seed: String,
    pub score100: f64,
    pub d_best: f64,
}

/// Parse a results CSV: the exact header, `# …` comment lines anywhere, one
/// row per line. Malformed rows are errors, an empty body is not.
pub fn parse(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(header) if header == RESULTS_HEADER => {}
        Some(header) => bail!("unexpected results header {header:?}"),
    }
    let mut rows = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != RESULTS_HEADER.split(',').count() {
            bail!("expected {} columns, got {}: {line:?}", RESULTS_HEADER.split(',').count(), cols.len());
        }
        let num = |i: usize| -> Result<f64> {
            cols[i].parse::<f64>().with_context(|| format!("bad number {:?} in {line:?}", cols[i]))
        };
        // Validate every numeric column even where only two feed the table.
        for i in 7..cols.len() {
            num(i)?;
        }
        rows.push(Row {
            task: cols[0].into(),
            method: cols[1].into(),
            p: cols[2].into(),
            epochs: cols[3].into(),
            t_test: cols[4].into(),
            m_traj: cols[5].into(),
            seed: cols[6].into(),
            score100: num(7)?,
            d_best: num(9)?,
        });
    }
    Ok(rows)
}

/// Configuration identity of one table line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Variant {
    method: String,
    p: String,
    epochs: String,
    t_test: String,
    m_traj: String,
}

impl Variant {
    fn of(r: &Row) -> Variant {
        Variant {
            method: r.method.clone(),
            p: r.p.clone(),
            epochs: r.epochs.clone(),
            t_test: r.t_test.clone(),
            m_traj: r.m_traj.clone(),
        }
    }

    /// Label: the method name, qualified by whichever config fields differ
    /// from the method's other variants in this table.
    fn label(&self, peers: &[&Variant]) -> String {
        type Field = (&'static str, fn(&Variant) -> &str);
        let fields: [Field; 4] = [
            ("p", |v| &v.p),
            ("epochs", |v| &v.epochs),
            ("T", |v| &v.t_test),
            ("m", |v| &v.m_traj),
        ];
        let mut label = self.method.clone();
        let mut quals = Vec::new();
        for (name, get) in fields {
            if peers.iter().any(|o| get(o) != get(self)) {
                quals.push(format!("{name}={}", get(self)));
            }
        }
        if !quals.is_empty() {
            label.push_str(&format!("[{}]", quals.join(" ")));
        }
        label
    }
}

fn push_unique<T: PartialEq + Clone>(xs: &mut Vec<T>, x: &T) {
    if !xs.contains(x) {
        xs.push(x.clone());
    }
}

/// Render the per-seed rows (aggregate rows are recomputed, not reused) as a
/// task-by-method table of `mean ± std` score100 values, the best method per
/// task starred, with the dataset-best row at the bottom. `None` when the
/// file has no per-seed rows to summarize.
pub fn render(rows: &[Row]) -> Option<String> {
    let seed_rows: Vec<&Row> = rows.iter().filter(|r| r.seed != "agg").collect();
    if seed_rows.is_empty() {
        return None;
    }
    let mut tasks: Vec<String> = Vec::new();
    let mut variants: Vec<Variant> = Vec::new();
    for r in &seed_rows {
        push_unique(&mut tasks, &r.task);
        push_unique(&mut variants, &Variant::of(r));
    }

    let scores = |v: &Variant, task: &str| -> Vec<f64> {
        seed_rows
            .iter()
            .filter(|r| r.task == *task && Variant::of(r) == *v)
            .map(|r| r.score100)
            .collect()
    };
    // Best mean per task, to star.
    let best: Vec<Option<f64>> = tasks
        .iter()
        .map(|t| {
            variants
                .iter()
                .map(|v| scores(v, t))
                .filter(|s| !s.is_empty())
                .map(|s| stats::mean(&s))
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        })
        .collect();

    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["method".to_string()];
    header.extend(tasks.iter().cloned());
    table.push(header);
    for v in &variants {
        let peers: Vec<&Variant> = variants.iter().filter(|o| o.method == v.method).collect();
        let mut line = vec![v.label(&peers)];
        for (ti, task) in tasks.iter().enumerate() {
            let s = scores(v, task);
            if s.is_empty() {
                line.push("-".into());
                continue;
            }
            let mean = stats::mean(&s);
            let star = if Some(mean) == best[ti] { " *" } else { "" };
            line.push(format!("{:.3} ± {:.3}{star}", mean, stats::std_dev(&s)));
        }
        table.push(line);
    }
    let mut d_line = vec!["d_best".to_string()];
    for task in &tasks {
        let d: Vec<f64> =
            seed_rows.iter().filter(|r| r.task == *task).map(|r| r.d_best).collect();
        d_line.push(format!("{:.3}", stats::mean(&d)));
    }
    table.push(d_line);

    let n_cols = table[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<width$}", width = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Some(out)
}
