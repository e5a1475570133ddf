//! Text rendering of a run's summary.csv: per-formula tables with the
//! Mean(sd) / AvBias / MSE triplet per method and a best-|AvBias| marker.

use std::fmt::Write as _;

struct MethodColumns {
    name: String,
    mean: usize,
    sd: usize,
    avbias: usize,
    mse: usize,
}

struct Row<'a> {
    formula: &'a str,
    coefficient: &'a str,
    truth: f64,
    /// Per method: (mean, sd, avbias, mse), None when the method was
    /// excluded for this coefficient.
    cells: Vec<Option<(f64, f64, f64, f64)>>,
}

fn parse_cell(field: &str, file: &str, line: usize) -> Result<Option<f64>, String> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| format!("{file} line {line}: cannot parse numeric cell `{field}`"))
}

fn format_3dp(x: f64) -> String {
    format!("{:.3}", (x * 1000.0).round() / 1000.0)
}

/// Render the summary CSV text as a report. Errors name the file.
pub fn render_summary(text: &str, file: &str) -> Result<String, String> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format!("{file}: empty summary"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "formula" || columns[1] != "coefficient" {
        return Err(format!(
            "{file}: unexpected header `{header}` (expected formula,coefficient,truth,...)"
        ));
    }

    // discover per-method column groups from `<m>_mean` markers
    let mut methods: Vec<MethodColumns> = Vec::new();
    for (idx, column) in columns.iter().enumerate() {
        if let Some(name) = column.strip_suffix("_mean") {
            let expect = |suffix: &str, offset: usize| -> Result<usize, String> {
                let want = format!("{name}_{suffix}");
                if columns.get(idx + offset) == Some(&want.as_str()) {
                    Ok(idx + offset)
                } else {
                    Err(format!("{file}: column `{want}` missing after `{column}`"))
                }
            };
            methods.push(MethodColumns {
                name: name.to_ascii_uppercase(),
                mean: idx,
                sd: expect("sd", 1)?,
                avbias: expect("avbias", 2)?,
                mse: expect("mse", 3)?,
            });
        }
    }
    if methods.is_empty() {
        return Err(format!("{file}: no `<method>_mean` columns found"));
    }

    let mut rows: Vec<Row> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != columns.len() {
            return Err(format!(
                "{file} line {line}: expected {} fields, found {}",
                columns.len(),
                fields.len()
            ));
        }
        let truth = parse_cell(fields[2], file, line)?
            .ok_or_else(|| format!("{file} line {line}: empty truth cell"))?;
        let mut cells = Vec::with_capacity(methods.len());
        for method in &methods {
            let mean = parse_cell(fields[method.mean], file, line)?;
            let sd = parse_cell(fields[method.sd], file, line)?;
            let avbias = parse_cell(fields[method.avbias], file, line)?;
            let mse = parse_cell(fields[method.mse], file, line)?;
            cells.push(match (mean, sd, avbias, mse) {
                (Some(m), Some(s), Some(a), Some(e)) => Some((m, s, a, e)),
                _ => None,
            });
        }
        rows.push(Row { formula: fields[0], coefficient: fields[1], truth, cells });
    }
    if rows.is_empty() {
        return Err(format!("{file}: no summary rows"));
    }

    let mut out = String::new();
    let formulas: Vec<&str> = {
        let mut seen = Vec::new();
        for row in &rows {
            if !seen.contains(&row.formula) {
                seen.push(row.formula);
            }
        }
        seen
    };
    for formula in formulas {
        let _ = writeln!(out, "model: {formula}");
        let _ = write!(out, "{:<16} {:>8}", "coefficient", "truth");
        for method in &methods {
            let _ = write!(
                out,
                "  {:>16} {:>8} {:>8}",
                format!("{} mean(sd)", method.name),
                "avbias",
                "mse"
            );
        }
        let _ = writeln!(out, "  {:>5}", "best");
        for row in rows.iter().filter(|r| r.formula == formula) {
            let _ = write!(out, "{:<16} {:>8}", row.coefficient, format_3dp(row.truth));
            let mut best: Option<(usize, f64)> = None;
            for (k, cell) in row.cells.iter().enumerate() {
                match cell {
                    Some((mean, sd, avbias, mse)) => {
                        let _ = write!(
                            out,
                            "  {:>16} {:>8} {:>8}",
                            format!("{}({})", format_3dp(*mean), format_3dp(*sd)),
                            format_3dp(*avbias),
                            format_3dp(*mse)
                        );
                        if best.is_none() || avbias.abs() < best.unwrap().1 {
                            best = Some((k, avbias.abs()));
                        }
                    }
                    None => {
                        let _ = write!(out, "  {:>16} {:>8} {:>8}", "-", "-", "-");
                    }
                }
            }
            let best_name = best.map(|(k, _)| methods[k].name.as_str()).unwrap_or("-");
            let _ = writeln!(out, "  {best_name:>5}");
        }
        let _ = writeln!(out);
    }
    Ok(out)
}
