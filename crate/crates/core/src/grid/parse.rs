//! Case-file readers: MATPOWER-style `.m` text and a JSON schema.
//!
//! MATPOWER input uses only `baseMVA`, `mpc.bus`, `mpc.branch`, `mpc.gen` and
//! `mpc.gencost` with the usual MATPOWER column layout; powers are converted
//! to p.u. on `baseMVA`. The JSON schema is already in p.u.:
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "slack_bus": 1,
//!   "buses": [{ "id": 1 }, { "id": 2, "pd": 1.0 }],
//!   "branches": [{ "from": 1, "to": 2, "b": 1.0 }],
//!   "generators": [{ "bus": 1, "pmax": 2.0, "c2": 0.01, "c1": 20.0 }]
//! }
//! ```
//!
//! A branch gives either `b` (susceptance) or `x` (reactance, optionally with
//! `tap`); `shift_deg`, `rating` and `in_service` are optional.

use super::{Branch, Bus, BusKind, GenCost, Generator, GridCase, GridError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Parses either format, detected by the first non-blank character, and
/// validates the result.
pub fn parse_case(text: &str) -> Result<GridCase, GridError> {
    let case = if text.trim_start().starts_with('{') {
        parse_json(text)?
    } else {
        parse_matpower(text)?
    };
    case.validate()?;
    Ok(case)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseJson {
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub slack_bus: usize,
    pub buses: Vec<BusJson>,
    pub branches: Vec<BranchJson>,
    #[serde(default)]
    pub generators: Vec<GeneratorJson>,
}

fn default_base() -> f64 {
    100.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusJson {
    pub id: usize,
    #[serde(default)]
    pub pd: f64,
    #[serde(default)]
    pub gs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchJson {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub tap: Option<f64>,
    #[serde(default)]
    pub shift_deg: f64,
    #[serde(default)]
    pub rating: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorJson {
    pub bus: usize,
    #[serde(default)]
    pub pmin: f64,
    pub pmax: f64,
    #[serde(default)]
    pub c2: Option<f64>,
    #[serde(default)]
    pub c1: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn parse_json(text: &str) -> Result<GridCase, GridError> {
    let raw: CaseJson = serde_json::from_str(text).map_err(|e| GridError::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut buses: Vec<Bus> = raw
        .buses
        .iter()
        .map(|b| Bus { id: b.id, kind: BusKind::Load, pd: b.pd, gs: b.gs })
        .collect();
    buses.sort_by_key(|b| b.id);

    let mut branches = Vec::with_capacity(raw.branches.len());
    for (k, br) in raw.branches.iter().enumerate() {
        let b = match (br.b, br.x) {
            (Some(b), _) => b,
            (None, Some(x)) => 1.0 / (x * br.tap.filter(|t| *t != 0.0).unwrap_or(1.0)),
            (None, None) => {
                return Err(GridError::Validation(format!("branch {k} needs either `b` or `x`")))
            }
        };
        branches.push(Branch {
            from: br.from,
            to: br.to,
            b,
            shift: br.shift_deg.to_radians(),
            rating: br.rating,
            in_service: br.in_service,
        });
    }
    let defaults = GenCost::default();
    let generators = raw
        .generators
        .iter()
        .map(|g| Generator {
            bus: g.bus,
            pmin: g.pmin,
            pmax: g.pmax,
            cost: GenCost {
                c2: g.c2.unwrap_or(defaults.c2),
                c1: g.c1.unwrap_or(defaults.c1),
                c0: g.c0.unwrap_or(defaults.c0),
            },
            in_service: g.in_service,
        })
        .collect();
    let mut case = GridCase {
        base_mva: raw.base_mva,
        buses,
        branches,
        generators,
        slack_bus: raw.slack_bus,
        warnings: Vec::new(),
    };
    assign_kinds(&mut case);
    Ok(case)
}

fn assign_kinds(case: &mut GridCase) {
    let gens = case.generators_by_bus();
    let slack = case.slack_bus;
    for bus in &mut case.buses {
        if bus.id == slack {
            bus.kind = BusKind::Reference;
        } else if gens.contains_key(&bus.id) && bus.kind != BusKind::Isolated {
            bus.kind = BusKind::Generator;
        }
    }
}

/// One numeric row of a MATPOWER matrix together with its source line.
struct Row {
    line: usize,
    values: Vec<f64>,
}

const KNOWN_FIELDS: [&str; 6] = ["version", "baseMVA", "bus", "gen", "branch", "gencost"];

fn parse_matpower(text: &str) -> Result<GridCase, GridError> {
    let mut warnings = Vec::new();
    let mut scalars: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut matrices: BTreeMap<String, Vec<Row>> = BTreeMap::new();

    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('%').next().unwrap_or("")))
        .collect();

    let mut i = 0;
    while i < lines.len() {
        let (lineno, line) = lines[i];
        i += 1;
        let trimmed = line.trim();
        let Some(rest) = trimmed.strip_prefix("mpc.") else {
            continue;
        };
        let Some((name, rhs)) = rest.split_once('=') else {
            return Err(GridError::Parse { line: lineno, msg: format!("expected assignment: `{trimmed}`") });
        };
        let name = name.trim().to_string();
        let rhs = rhs.trim();
        if !KNOWN_FIELDS.contains(&name.as_str()) {
            warnings.push(format!("line {lineno}: field mpc.{name} ignored"));
        }
        if let Some(body) = rhs.strip_prefix('[') {
            // Matrix literal, possibly spanning many lines until `]`.
            let mut rows = Vec::new();
            let mut chunk = body.to_string();
            let mut chunk_line = lineno;
            loop {
                let (content, closed) = match chunk.find(']') {
                    Some(pos) => (chunk[..pos].to_string(), true),
                    None => (chunk.clone(), false),
                };
                for part in content.split(';') {
                    let values = parse_numbers(part, chunk_line)?;
                    if !values.is_empty() {
                        rows.push(Row { line: chunk_line, values });
                    }
                }
                if closed {
                    break;
                }
                if i >= lines.len() {
                    return Err(GridError::Parse { line: lineno, msg: format!("unterminated matrix mpc.{name}") });
                }
                chunk_line = lines[i].0;
                chunk = lines[i].1.to_string();
                i += 1;
            }
            matrices.insert(name, rows);
        } else {
            let value = rhs.trim_end_matches(';').trim().to_string();
            scalars.insert(name, (lineno, value));
        }
    }

    let base_mva = match scalars.get("baseMVA") {
        Some((line, v)) => v.parse::<f64>().map_err(|_| GridError::Parse {
            line: *line,
            msg: format!("baseMVA is not a number: `{v}`"),
        })?,
        None => return Err(GridError::Parse { line: 0, msg: "missing mpc.baseMVA".into() }),
    };

    let bus_rows = matrices
        .remove("bus")
        .ok_or(GridError::Parse { line: 0, msg: "missing mpc.bus".into() })?;
    let branch_rows = matrices
        .remove("branch")
        .ok_or(GridError::Parse { line: 0, msg: "missing mpc.branch".into() })?;
    let gen_rows = matrices.remove("gen").unwrap_or_default();
    let cost_rows = matrices.remove("gencost").unwrap_or_default();

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut slack = None;
    for row in &bus_rows {
        require_cols(row, 5, "bus")?;
        let id = as_id(row, 0)?;
        let kind = match row.values[1] as i64 {
            1 => BusKind::Load,
            2 => BusKind::Generator,
            3 => {
                if slack.replace(id).is_some() {
                    return Err(GridError::Parse { line: row.line, msg: "more than one reference bus".into() });
                }
                BusKind::Reference
            }
            4 => BusKind::Isolated,
            other => {
                return Err(GridError::Parse { line: row.line, msg: format!("unknown bus type {other}") })
            }
        };
        buses.push(Bus { id, kind, pd: row.values[2] / base_mva, gs: row.values[4] / base_mva });
    }
    buses.sort_by_key(|b| b.id);
    let slack_bus = slack.ok_or(GridError::Parse { line: 0, msg: "no reference (type 3) bus".into() })?;

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        require_cols(row, 11, "branch")?;
        let x = row.values[3];
        let ratio = if row.values[8] == 0.0 { 1.0 } else { row.values[8] };
        if x == 0.0 {
            return Err(GridError::Parse { line: row.line, msg: "branch reactance is zero".into() });
        }
        branches.push(Branch {
            from: as_id(row, 0)?,
            to: as_id(row, 1)?,
            b: 1.0 / (x * ratio),
            shift: row.values[9].to_radians(),
            rating: row.values[5],
            in_service: row.values[10] != 0.0,
        });
    }

    if !cost_rows.is_empty() && cost_rows.len() < gen_rows.len() {
        warnings.push(format!(
            "mpc.gencost has {} rows for {} generators; missing costs use defaults",
            cost_rows.len(),
            gen_rows.len()
        ));
    }
    let mut generators = Vec::with_capacity(gen_rows.len());
    for (k, row) in gen_rows.iter().enumerate() {
        require_cols(row, 10, "gen")?;
        let cost = match cost_rows.get(k) {
            Some(c) => parse_cost(c, &mut warnings)?,
            None => GenCost::default(),
        };
        generators.push(Generator {
            bus: as_id(row, 0)?,
            pmax: row.values[8] / base_mva,
            pmin: row.values[9] / base_mva,
            cost,
            in_service: row.values[7] > 0.0,
        });
    }

    Ok(GridCase { base_mva, buses, branches, generators, slack_bus, warnings })
}

fn parse_cost(row: &Row, warnings: &mut Vec<String>) -> Result<GenCost, GridError> {
    require_cols(row, 4, "gencost")?;
    let model = row.values[0] as i64;
    let n = row.values[3] as usize;
    match model {
        2 => {
            if row.values.len() < 4 + n {
                return Err(GridError::Parse { line: row.line, msg: format!("gencost row needs {n} coefficients") });
            }
            let coeffs = &row.values[4..4 + n];
            if n > 3 {
                warnings.push(format!("line {}: cost polynomial of degree {} truncated to quadratic", row.line, n - 1));
            }
            let at = |k: usize| if k < n { coeffs[n - 1 - k] } else { 0.0 };
            Ok(GenCost { c2: at(2), c1: at(1), c0: at(0) })
        }
        1 => {
            // Piecewise linear: (p1, f1, p2, f2, ...). Use the mean slope.
            let pts = &row.values[4..(4 + 2 * n).min(row.values.len())];
            warnings.push(format!("line {}: piecewise-linear cost approximated by its mean slope", row.line));
            let slope = if pts.len() >= 4 {
                let (p0, f0) = (pts[0], pts[1]);
                let (p1, f1) = (pts[pts.len() - 2], pts[pts.len() - 1]);
                if p1 != p0 { (f1 - f0) / (p1 - p0) } else { 0.0 }
            } else {
                0.0
            };
            Ok(GenCost { c2: 0.0, c1: slope, c0: 0.0 })
        }
        other => Err(GridError::Parse { line: row.line, msg: format!("unknown cost model {other}") }),
    }
}

fn parse_numbers(s: &str, line: usize) -> Result<Vec<f64>, GridError> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| GridError::Parse { line, msg: format!("not a number: `{t}`") })
        })
        .collect()
}

fn require_cols(row: &Row, n: usize, what: &str) -> Result<(), GridError> {
    if row.values.len() < n {
        return Err(GridError::Parse {
            line: row.line,
            msg: format!("{what} row has {} columns, need at least {n}", row.values.len()),
        });
    }
    Ok(())
}

fn as_id(row: &Row, col: usize) -> Result<usize, GridError> {
    let v = row.values[col];
    if v < 1.0 || v.fract() != 0.0 {
        return Err(GridError::Parse { line: row.line, msg: format!("invalid bus id {v}") });
    }
    Ok(v as usize)
}
