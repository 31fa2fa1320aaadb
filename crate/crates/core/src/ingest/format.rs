//! The `sohlog v1` interchange format.
//!
//! ```text
//! sohlog v1
//! #cell RW9
//! #group 3
//! #step <type> <t_start> <t_end> <nominal_current> <default_duration>
//! <t_rel> <voltage> <current> <temperature>
//! ...
//! <blank line ends the step>
//! ```
//!
//! Lines starting with `# ` are comments. Every step, including the last,
//! must be terminated by a blank line.

use std::io::Write;
use std::path::Path;

use super::{CellHistory, Sample, StepRecord, StepType};
use crate::error::{Error, Result};

pub const FORMAT_HEADER: &str = "sohlog v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogFormat {
    #[default]
    SohlogV1,
}

impl LogFormat {
    pub fn header(self) -> &'static str {
        match self {
            LogFormat::SohlogV1 => FORMAT_HEADER,
        }
    }
}

pub fn load_cell(path: &Path, format: LogFormat) -> Result<CellHistory> {
    let text = std::fs::read_to_string(path)?;
    let default_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cell".to_string());
    parse_cell(&text, format, &default_id)
}

struct OpenStep {
    header: (StepType, f64, f64, f64, f64),
    samples: Vec<Sample>,
}

impl OpenStep {
    fn close(self) -> StepRecord {
        let (ty, t0, t1, cur, dur) = self.header;
        StepRecord::new(ty, t0, t1, cur, dur, self.samples)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} `{tok}`")));
    }
    Ok(v)
}

pub fn parse_cell(text: &str, format: LogFormat, default_id: &str) -> Result<CellHistory> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let expected = format.header();
    match lines.next() {
        Some((_, l)) if l.trim() == expected => {}
        Some((_, l)) if l.trim_start().starts_with("sohlog") => {
            return Err(Error::SchemaVersionMismatch {
                found: l.trim().to_string(),
                expected: expected.to_string(),
            })
        }
        Some((n, _)) => return Err(parse_err(n, format!("expected header `{expected}`"))),
        None => return Err(parse_err(1, "empty file")),
    }

    let mut cell_id = default_id.to_string();
    let mut group = None;
    let mut steps = Vec::new();
    let mut open: Option<OpenStep> = None;
    let mut last_line = 1;

    for (n, raw) in lines {
        last_line = n;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(step) = open.take() {
                steps.push(step.close());
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("#step") {
            if open.is_some() {
                return Err(parse_err(n, "step header before previous step was terminated"));
            }
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(parse_err(n, format!("step header needs 5 fields, found {}", toks.len())));
            }
            let ty: StepType = toks[0].parse().map_err(|e: String| parse_err(n, e))?;
            open = Some(OpenStep {
                header: (
                    ty,
                    number(toks[1], n, "t_start")?,
                    number(toks[2], n, "t_end")?,
                    number(toks[3], n, "nominal_current")?,
                    number(toks[4], n, "default_duration")?,
                ),
                samples: Vec::new(),
            });
            continue;
        }
        if let Some(rest) = line.strip_prefix("#cell") {
            cell_id = rest.trim().to_string();
            if cell_id.is_empty() {
                return Err(parse_err(n, "empty cell id"));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("#group") {
            let g: u8 = rest
                .trim()
                .parse()
                .map_err(|_| parse_err(n, format!("invalid group `{}`", rest.trim())))?;
            group = Some(g);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some(step) = open.as_mut() else {
            return Err(parse_err(n, "sample line outside a step"));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(n, format!("sample line needs 4 fields, found {}", toks.len())));
        }
        step.samples.push(Sample {
            t: number(toks[0], n, "time")?,
            voltage: number(toks[1], n, "voltage")?,
            current: number(toks[2], n, "current")?,
            temperature: number(toks[3], n, "temperature")?,
        });
    }
    if open.is_some() {
        return Err(parse_err(last_line, "unterminated step (truncated file?)"));
    }
    if steps.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let flagged: usize = steps.iter().filter(|s: &&StepRecord| !s.flags.is_empty()).count();
    if flagged > 0 {
        log::warn!("{cell_id}: {flagged} step(s) failed plausibility checks and were flagged");
    }
    Ok(CellHistory {
        cell_id,
        group,
        steps,
    })
}

pub fn write_cell<W: Write>(history: &CellHistory, mut w: W) -> Result<()> {
    writeln!(w, "{FORMAT_HEADER}")?;
    writeln!(w, "#cell {}", history.cell_id)?;
    if let Some(g) = history.group {
        writeln!(w, "#group {g}")?;
    }
    for s in &history.steps {
        writeln!(
            w,
            "#step {} {} {} {} {}",
            s.step_type, s.t_start, s.t_end, s.nominal_current, s.default_duration
        )?;
        for p in &s.samples {
            writeln!(w, "{} {} {} {}", p.t, p.voltage, p.current, p.temperature)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
