//! MATPOWER case files (version 2 subset).
//!
//! Supported tables: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`.
//! `mpc.gencost` is skipped with a warning; any other `mpc.*` assignment
//! (names, areas, version strings) is ignored.
//!
//! Bus `Pd/Qd` become [`Load`] elements and `Gs/Bs` become [`Shunt`]
//! elements, one per bus, numbered in bus order. A zero branch ratio means
//! a nominal tap; a zero rating means unlimited.

use std::fmt::Write as _;

use crate::error::GridError;
use crate::model::{
    Branch, BranchId, Bus, BusId, BusKind, CaseMeta, GenId, Generator, GridCase, Load, LoadId, Shunt,
    ShuntId,
};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCase {
    pub case: GridCase,
    pub warnings: Vec<String>,
}

/// Parses case text, logging any warnings.
pub fn parse_matpower_case(text: &str) -> Result<GridCase, GridError> {
    let parsed = parse_matpower_case_with_warnings(text)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.case)
}

struct Table {
    rows: Vec<(usize, Vec<f64>)>,
}

pub fn parse_matpower_case_with_warnings(text: &str) -> Result<ParsedCase, GridError> {
    let mut warnings = Vec::new();
    let mut name = String::from("case");
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, n)) = rest.split_once('=') {
                name = n.trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((field, value)) = rest.split_once('=') else {
            return Err(GridError::Syntax {
                line: lineno,
                message: format!("expected assignment, found '{line}'"),
            });
        };
        let field = field.trim();
        let value = value.trim();
        match field {
            "baseMVA" => {
                let v = value.trim_end_matches(';').trim();
                base_mva = Some(v.parse::<f64>().map_err(|_| GridError::Syntax {
                    line: lineno,
                    message: format!("baseMVA is not a number: '{v}'"),
                })?);
            }
            "bus" | "gen" | "branch" | "gencost" => {
                let table = read_matrix(&lines, value, lineno, &mut i)?;
                match field {
                    "bus" => bus = Some(table),
                    "gen" => gen = Some(table),
                    "branch" => branch = Some(table),
                    _ => warnings.push("gencost table ignored (costs are not used)".to_string()),
                }
            }
            _ => {
                // skip the rest of a multi-line block we do not interpret
                if (value.starts_with('[') && !value.contains(']'))
                    || (value.starts_with('{') && !value.contains('}'))
                {
                    let close = if value.starts_with('[') { ']' } else { '}' };
                    while i < lines.len() && !strip_comment(lines[i]).contains(close) {
                        i += 1;
                    }
                    i += 1;
                }
            }
        }
    }

    let base_mva = base_mva.ok_or_else(|| GridError::Syntax {
        line: lines.len(),
        message: "missing mpc.baseMVA".into(),
    })?;
    let bus = bus.ok_or_else(|| GridError::Syntax {
        line: lines.len(),
        message: "missing mpc.bus table".into(),
    })?;
    let gen = gen.unwrap_or(Table { rows: Vec::new() });
    let branch = branch.ok_or_else(|| GridError::Syntax {
        line: lines.len(),
        message: "missing mpc.branch table".into(),
    })?;

    let mut case = GridCase {
        name,
        base_mva,
        buses: Vec::new(),
        branches: Vec::new(),
        generators: Vec::new(),
        loads: Vec::new(),
        shunts: Vec::new(),
        meta: CaseMeta::default(),
    };

    for (line, row) in &bus.rows {
        check_cols(*line, row, BUS_COLS, "bus")?;
        let id = to_id(*line, row[0], "bus number")?;
        let kind = match row[1] as i64 {
            1 => BusKind::PQ,
            2 => BusKind::PV,
            3 => BusKind::Slack,
            t => {
                return Err(GridError::Syntax {
                    line: *line,
                    message: format!("bus {id}: unsupported bus type {t}"),
                })
            }
        };
        let (pd, qd, gs, bs) = (row[2], row[3], row[4], row[5]);
        case.buses.push(Bus {
            id: BusId(id),
            kind,
            v_setpoint: row[7],
            base_kv: row[9],
        });
        if pd != 0.0 || qd != 0.0 {
            let lid = LoadId(case.loads.len() as u32 + 1);
            case.loads.push(Load {
                id: lid,
                bus: BusId(id),
                p_mw: pd,
                q_mvar: qd,
            });
        }
        if gs != 0.0 || bs != 0.0 {
            let sid = ShuntId(case.shunts.len() as u32 + 1);
            case.shunts.push(Shunt {
                id: sid,
                bus: BusId(id),
                g_mw: gs,
                q_mvar: bs,
            });
        }
    }

    let kinds: std::collections::HashMap<BusId, BusKind> = case.buses.iter().map(|b| (b.id, b.kind)).collect();
    let kind_of = |id: BusId| kinds.get(&id).copied();
    let mut gens = Vec::new();
    let mut setpoints = Vec::new();
    for (n, (line, row)) in gen.rows.iter().enumerate() {
        check_cols(*line, row, GEN_COLS, "gen")?;
        let bus_id = BusId(to_id(*line, row[0], "generator bus")?);
        let kind = kind_of(bus_id).ok_or_else(|| GridError::UnknownBus {
            bus: bus_id,
            context: format!("generator on line {line}"),
        })?;
        let in_service = row[7] > 0.0;
        if in_service && kind != BusKind::PQ {
            setpoints.push((bus_id, row[5]));
        }
        gens.push(Generator {
            id: GenId(n as u32 + 1),
            bus: bus_id,
            p_mw: row[1],
            q_mvar: row[2],
            q_max: row[3],
            q_min: row[4],
            mva_rating: row[6],
            in_service,
            p_max: row[8],
            p_min: row[9],
            regulating: kind != BusKind::PQ,
            is_ibr: false,
        });
    }
    case.generators = gens;
    for (bus_id, vg) in setpoints.into_iter().rev() {
        // first in-service generator on the bus wins
        if let Some(b) = case.buses.iter_mut().find(|b| b.id == bus_id) {
            b.v_setpoint = vg;
        }
    }

    for (n, (line, row)) in branch.rows.iter().enumerate() {
        check_cols(*line, row, BRANCH_COLS, "branch")?;
        let from = BusId(to_id(*line, row[0], "from bus")?);
        let to = BusId(to_id(*line, row[1], "to bus")?);
        for b in [from, to] {
            if kind_of(b).is_none() {
                return Err(GridError::UnknownBus {
                    bus: b,
                    context: format!("branch {} on line {line}", n + 1),
                });
            }
        }
        let rate_a = row[5];
        let mut rate_b = row[6];
        if rate_b < rate_a {
            if rate_b != 0.0 {
                warnings.push(format!(
                    "branch {}: rateB {} below rateA {}, using rateA as emergency rating",
                    n + 1,
                    rate_b,
                    rate_a
                ));
            }
            rate_b = rate_a;
        }
        case.branches.push(Branch {
            id: BranchId(n as u32 + 1),
            from_bus: from,
            to_bus: to,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            tap: if row[8] == 0.0 { 1.0 } else { row[8] },
            shift_deg: row[9],
            rate_a,
            rate_b,
            in_service: row[10] > 0.0,
        });
    }

    case.validate()?;
    case.refresh_connectivity();
    Ok(ParsedCase { case, warnings })
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn check_cols(line: usize, row: &[f64], need: usize, table: &str) -> Result<(), GridError> {
    if row.len() < need {
        return Err(GridError::Syntax {
            line,
            message: format!("{table} row has {} columns, need at least {need}", row.len()),
        });
    }
    Ok(())
}

fn to_id(line: usize, v: f64, what: &str) -> Result<u32, GridError> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(GridError::Syntax {
            line,
            message: format!("{what} must be a positive integer, got {v}"),
        });
    }
    Ok(v as u32)
}

/// Reads a `[ ... ];` matrix starting with `first` (the text after `=`).
fn read_matrix(lines: &[&str], first: &str, start_line: usize, cursor: &mut usize) -> Result<Table, GridError> {
    let Some(body) = first.strip_prefix('[') else {
        return Err(GridError::Syntax {
            line: start_line,
            message: "expected '[' to open matrix".into(),
        });
    };
    let mut rows = Vec::new();
    let mut pending: Vec<f64> = Vec::new();
    let mut pending_line = start_line;
    let mut chunk = body.to_string();
    let mut lineno = start_line;
    loop {
        let (content, closed) = match chunk.find(']') {
            Some(p) => (chunk[..p].to_string(), true),
            None => (chunk.clone(), false),
        };
        for (k, part) in content.split(';').enumerate() {
            if k > 0 && !pending.is_empty() {
                rows.push((pending_line, std::mem::take(&mut pending)));
            }
            for tok in part.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let v = tok.parse::<f64>().map_err(|_| GridError::Syntax {
                    line: lineno,
                    message: format!("invalid number '{tok}'"),
                })?;
                if pending.is_empty() {
                    pending_line = lineno;
                }
                pending.push(v);
            }
        }
        // a newline also ends a row
        if !pending.is_empty() {
            rows.push((pending_line, std::mem::take(&mut pending)));
        }
        if closed {
            break;
        }
        if *cursor >= lines.len() {
            return Err(GridError::Syntax {
                line: start_line,
                message: "matrix is not closed with ']'".into(),
            });
        }
        chunk = strip_comment(lines[*cursor]).to_string();
        *cursor += 1;
        lineno = *cursor;
    }
    Ok(Table { rows })
}

/// Writes a case back out in the supported subset. Loads and shunts are
/// folded into the bus table; regulated bus setpoints go to `Vg`.
pub fn to_matpower(case: &GridCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {}", case.name);
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {};", case.base_mva);
    let _ = writeln!(out, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(out, "mpc.bus = [");
    let load = case.bus_load();
    for (b, (pd, qd)) in case.buses.iter().zip(load) {
        let (gs, bs) = case
            .shunts
            .iter()
            .filter(|s| s.bus == b.id)
            .fold((0.0, 0.0), |(g, q), s| (g + s.g_mw, q + s.q_mvar));
        let kind = match b.kind {
            BusKind::PQ => 1,
            BusKind::PV => 2,
            BusKind::Slack => 3,
        };
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t0\t{}\t1\t1.1\t0.9;",
            b.id, kind, pd, qd, gs, bs, b.v_setpoint, b.base_kv
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in &case.generators {
        let vg = case.bus(g.bus).map(|b| b.v_setpoint).unwrap_or(1.0);
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            g.bus,
            g.p_mw,
            g.q_mvar,
            g.q_max,
            g.q_min,
            vg,
            g.mva_rating,
            u8::from(g.in_service),
            g.p_max,
            g.p_min
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus");
    let _ = writeln!(out, "mpc.branch = [");
    for br in &case.branches {
        let ratio = if br.tap == 1.0 { 0.0 } else { br.tap };
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{};",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_charging,
            br.rate_a,
            br.rate_b,
            br.rate_b,
            ratio,
            br.shift_deg,
            u8::from(br.in_service)
        );
    }
    let _ = writeln!(out, "];");
    out
}
