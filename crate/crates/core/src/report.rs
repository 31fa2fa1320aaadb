//! Text and SVG renderings of fitted models and prediction tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mfp::{FpModel, PredictionRecord};

pub const PREDICTIONS_HEADER: &str = "soh-predictions v1";
const COLUMNS: &str = "cycle\tdelta\tpredicted\tlow\thigh\tobserved\tflags";

/// R-style p-value: fixed point above 1e-3, scientific below, floored at 2e-16.
pub fn format_p_value(p: f64) -> String {
    if p.is_nan() {
        return "NA".into();
    }
    if p < 2e-16 {
        return "<2e-16".into();
    }
    if p >= 1e-3 {
        return format!("{p:.4}");
    }
    let s = format!("{p:.2e}");
    match s.split_once('e') {
        Some((m, e)) => {
            let e: i32 = e.parse().unwrap_or(0);
            format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
        }
        None => s,
    }
}

/// Coefficient table with R² and adjusted R² on the first row.
pub fn summary_table(model: &FpModel, title: &str) -> String {
    let fit = &model.fit;
    let width = fit.labels.iter().map(String::len).max().unwrap_or(0).max(12);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<width$} {:>10} {:>10} {:>10} {:>7} {:>7}",
        "", "Covariate", "Est", "Std err", "p-value", "R2", "R2_adj"
    );
    for (i, label) in fit.labels.iter().enumerate() {
        let (name, r2, r2a) = if i == 0 {
            (title.to_string(), format!("{:.3}", fit.r2), format!("{:.3}", fit.r2_adj))
        } else {
            (String::new(), String::new(), String::new())
        };
        let _ = writeln!(
            out,
            "{name:<8} {label:<width$} {:>10.4} {:>10.4} {:>10} {r2:>7} {r2a:>7}",
            fit.coefficients[i],
            fit.std_errors[i],
            format_p_value(fit.p_values[i]),
        );
    }
    let excluded: Vec<&str> = model
        .terms
        .iter()
        .filter(|(_, t)| !t.is_included())
        .map(|(n, _)| n.as_str())
        .collect();
    if !excluded.is_empty() {
        let _ = writeln!(out, "excluded: {}", excluded.join(", "));
    }
    let _ = writeln!(out, "n = {}, residual df = {}, AIC = {:.3}", fit.n, fit.df_residual, fit.aic);
    out
}

/// Per-cell prediction table as written by `soh predict`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub cell_id: String,
    pub nominal_capacity: f64,
    pub level: f64,
    pub records: Vec<PredictionRecord>,
}

impl PredictionTable {
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# {PREDICTIONS_HEADER} cell_id={} nominal_capacity={} level={}\n{COLUMNS}\n",
            self.cell_id, self.nominal_capacity, self.level
        );
        for r in &self.records {
            let observed = r.observed_capacity.map_or_else(|| "NA".to_string(), |v| v.to_string());
            let flags = if r.flags.is_empty() { "-".to_string() } else { r.flags.join(",") };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{observed}\t{flags}",
                r.cycle_index, r.delta, r.predicted_capacity, r.interval_low, r.interval_high
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let perr = |line: usize, m: String| Error::Parse { line, message: m };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| perr(1, "empty prediction table".into()))?;
        let rest = head
            .strip_prefix("# ")
            .and_then(|h| h.strip_prefix(PREDICTIONS_HEADER))
            .ok_or_else(|| perr(1, format!("expected `# {PREDICTIONS_HEADER}` header")))?;
        let (mut cell_id, mut nominal, mut level) = (None, None, None);
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(1, format!("malformed header field `{kv}`")))?;
            let num = || v.parse::<f64>().map_err(|_| perr(1, format!("invalid {k} `{v}`")));
            match k {
                "cell_id" => cell_id = Some(v.to_string()),
                "nominal_capacity" => nominal = Some(num()?),
                "level" => level = Some(num()?),
                _ => return Err(perr(1, format!("unknown header field `{k}`"))),
            }
        }
        let cell_id = cell_id.ok_or_else(|| perr(1, "header lacks cell_id".into()))?;
        match lines.next() {
            Some((_, l)) if l == COLUMNS => {}
            Some((n, _)) => return Err(perr(n, "unexpected column header".into())),
            None => return Err(perr(2, "missing column header".into())),
        }
        let mut records = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(perr(n, format!("expected 7 fields, found {}", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| perr(n, format!("invalid number `{}`", f[i])));
            records.push(PredictionRecord {
                cell_id: cell_id.clone(),
                cycle_index: f[0].parse().map_err(|_| perr(n, format!("invalid cycle `{}`", f[0])))?,
                delta: num(1)?,
                predicted_capacity: num(2)?,
                interval_low: num(3)?,
                interval_high: num(4)?,
                observed_capacity: if f[5] == "NA" { None } else { Some(num(5)?) },
                flags: if f[6] == "-" { Vec::new() } else { f[6].split(',').map(str::to_string).collect() },
            });
        }
        Ok(PredictionTable {
            cell_id,
            nominal_capacity: nominal.ok_or_else(|| perr(1, "header lacks nominal_capacity".into()))?,
            level: level.ok_or_else(|| perr(1, "header lacks level".into()))?,
            records,
        })
    }

    /// Predicted and observed capacities of the rows that have an observation.
    pub fn observed_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        self.records
            .iter()
            .filter_map(|r| r.observed_capacity.map(|o| (r.predicted_capacity, o)))
            .unzip()
    }
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 50.0);

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(t);
        t += step;
    }
    out
}

/// Observed against predicted capacity, with the prediction interval shaded.
pub fn prediction_plot_svg(table: &PredictionTable) -> String {
    let recs = &table.records;
    let (l, r, t, b) = MARGIN;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if recs.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let x0 = recs.iter().map(|r| r.cycle_index).min().unwrap_or(0) as f64;
    let x1 = (recs.iter().map(|r| r.cycle_index).max().unwrap_or(0) as f64).max(x0 + 1.0);
    let ys = recs
        .iter()
        .flat_map(|r| [r.interval_low, r.interval_high].into_iter().chain(r.observed_capacity));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    y0 -= pad;
    y1 += pad;
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (SVG_W - l - r);
    let py = |y: f64| SVG_H - b - (y - y0) / (y1 - y0) * (SVG_H - t - b);

    let _ = writeln!(
        out,
        "<g stroke=\"black\" fill=\"none\"><line x1=\"{l}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/><line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{}\"/></g>",
        SVG_H - b,
        SVG_W - r,
        SVG_H - b,
        SVG_H - b
    );
    let _ = writeln!(out, "<g font-family=\"sans-serif\" font-size=\"11\">");
    for v in nice_ticks(x0, x1) {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v}</text>", px(v), SVG_H - b + 15.0);
    }
    for v in nice_ticks(y0, y1) {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
            l - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">reference cycle</text>",
        (l + SVG_W - r) / 2.0,
        SVG_H - 8.0
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(14 {:.1}) rotate(-90)\" text-anchor=\"middle\">capacity (Ah)</text>",
        (t + SVG_H - b) / 2.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\">{}</text>",
        l + 8.0,
        t + 12.0,
        table.cell_id
    );
    out.push_str("</g>\n");

    let mut band: Vec<String> = recs
        .iter()
        .map(|r| format!("{:.2},{:.2}", px(r.cycle_index as f64), py(r.interval_high)))
        .collect();
    band.extend(
        recs.iter()
            .rev()
            .map(|r| format!("{:.2},{:.2}", px(r.cycle_index as f64), py(r.interval_low))),
    );
    let _ = writeln!(out, "<polygon points=\"{}\" fill=\"#c8c8c8\" stroke=\"none\"/>", band.join(" "));

    let line = |pts: Vec<(f64, f64)>| -> String {
        pts.iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let observed: Vec<(f64, f64)> = recs
        .iter()
        .filter_map(|r| r.observed_capacity.map(|o| (r.cycle_index as f64, o)))
        .collect();
    let predicted: Vec<(f64, f64)> = recs.iter().map(|r| (r.cycle_index as f64, r.predicted_capacity)).collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
        line(observed)
    );
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>",
        line(predicted)
    );
    let (lx, ly) = (SVG_W - r - 130.0, t + 8.0);
    let _ = writeln!(
        out,
        "<g font-family=\"sans-serif\" font-size=\"11\">\
         <line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"black\" stroke-width=\"1.5\"/>\
         <text x=\"{}\" y=\"{}\">observed</text>\
         <line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>\
         <text x=\"{}\" y=\"{}\">predicted</text>\
         <rect x=\"{lx}\" y=\"{}\" width=\"24\" height=\"8\" fill=\"#c8c8c8\"/>\
         <text x=\"{}\" y=\"{}\">{:.0}% interval</text></g>",
        lx + 24.0,
        lx + 30.0,
        ly + 4.0,
        ly + 16.0,
        lx + 24.0,
        ly + 16.0,
        lx + 30.0,
        ly + 20.0,
        ly + 28.0,
        lx + 30.0,
        ly + 36.0,
        table.level * 100.0
    );
    out.push_str("</svg>\n");
    out
}
