//! Network case data: MATPOWER-style `.m` parsing, the native JSON
//! interchange format, bus classification and base injections.
//!
//! Buses are renumbered to dense 0-based internal indices in file order.
//! Out-of-service branches and generators are dropped while parsing, so every
//! element held by a [`CaseData`] is active.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("parse error: missing `mpc.{0}` block")]
    MissingBlock(String),
    #[error("parse error in `mpc.{block}` row {row}: {msg}")]
    BadRow { block: String, row: usize, msg: String },
    #[error("parse error: {0}")]
    Syntax(String),
    #[error("schema error at \"{path}\": {msg}")]
    Schema { path: String, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusType {
    Slack,
    PV,
    PQ,
}

impl BusType {
    fn from_code(code: f64) -> Option<Self> {
        if code == 1.0 {
            Some(BusType::PQ)
        } else if code == 2.0 {
            Some(BusType::PV)
        } else if code == 3.0 {
            Some(BusType::Slack)
        } else {
            None
        }
    }

    fn code(self) -> u8 {
        match self {
            BusType::PQ => 1,
            BusType::PV => 2,
            BusType::Slack => 3,
        }
    }
}

impl fmt::Display for BusType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BusType::Slack => "Slack",
            BusType::PV => "PV",
            BusType::PQ => "PQ",
        };
        f.write_str(s)
    }
}

/// A network node. Loads and shunts are in MW/MVAr, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: i64,
    pub bus_type: BusType,
    #[serde(rename = "Pd")]
    pub pd: f64,
    #[serde(rename = "Qd")]
    pub qd: f64,
    #[serde(rename = "Gs")]
    pub gs: f64,
    #[serde(rename = "Bs")]
    pub bs: f64,
    #[serde(rename = "Vm")]
    pub vm: f64,
    #[serde(rename = "Va")]
    pub va: f64,
    #[serde(rename = "base_kV")]
    pub base_kv: f64,
}

/// A π-model branch. `tap == 0` means a nominal (1.0) ratio; `shift` is in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: i64,
    pub to: i64,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
    pub shift: f64,
    pub status: bool,
}

impl Branch {
    /// Effective off-nominal turns ratio, with `0` read as `1`.
    pub fn ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: i64,
    #[serde(rename = "Pg")]
    pub pg: f64,
    #[serde(rename = "Qg")]
    pub qg: f64,
    #[serde(rename = "Vg")]
    pub vg: f64,
    pub status: bool,
}

/// Bus classification in internal (0-based) ordering. `pv` and `pq` are ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BusSets {
    pub slack: usize,
    pub pv: Vec<usize>,
    pub pq: Vec<usize>,
}

impl BusSets {
    /// Every bus except the slack, ascending.
    pub fn non_slack(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pv.iter().chain(self.pq.iter()).copied().collect();
        v.sort_unstable();
        v
    }

    /// Length of a load perturbation vector: `2|PQ| + |PV|`.
    pub fn input_dim(&self) -> usize {
        2 * self.pq.len() + self.pv.len()
    }

    /// Number of free state variables: `|PV| + 2|PQ|`.
    pub fn output_dim(&self) -> usize {
        self.pv.len() + 2 * self.pq.len()
    }

    /// Number of mismatch equations: `(n - 1) + |PQ|`.
    pub fn residual_len(&self) -> usize {
        self.pv.len() + 2 * self.pq.len()
    }
}

/// A parsed and validated network case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub gens: Vec<Generator>,
    pub bus_sets: BusSets,
    index: HashMap<i64, usize>,
}

impl CaseData {
    /// Validate raw element lists and build the internal indexing.
    ///
    /// Out-of-service branches and generators are discarded and PV buses
    /// without an active generator are demoted to PQ.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        gens: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(CaseError::Validation(format!("base_MVA must be positive, got {base_mva}")));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(CaseError::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.vm > 0.0) {
                return Err(CaseError::Validation(format!("bus {} has non-positive Vm {}", bus.id, bus.vm)));
            }
        }
        let branches: Vec<Branch> = branches.into_iter().filter(|b| b.status).collect();
        let gens: Vec<Generator> = gens.into_iter().filter(|g| g.status).collect();

        for br in &branches {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(CaseError::Validation(format!(
                        "branch {}-{} references unknown bus {end}",
                        br.from, br.to
                    )));
                }
            }
            if br.from == br.to {
                return Err(CaseError::Validation(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
            if br.r * br.r + br.x * br.x <= 0.0 {
                return Err(CaseError::Validation(format!(
                    "branch {}-{} has zero series impedance",
                    br.from, br.to
                )));
            }
        }
        let mut has_gen = vec![false; buses.len()];
        for g in &gens {
            match index.get(&g.bus) {
                Some(&i) => has_gen[i] = true,
                None => {
                    return Err(CaseError::Validation(format!("generator references unknown bus {}", g.bus)))
                }
            }
        }
        for (bus, &active) in buses.iter_mut().zip(&has_gen) {
            if bus.bus_type == BusType::PV && !active {
                bus.bus_type = BusType::PQ;
            }
        }

        let slacks: Vec<usize> = (0..buses.len()).filter(|&i| buses[i].bus_type == BusType::Slack).collect();
        if slacks.len() != 1 {
            return Err(CaseError::Validation(format!(
                "expected exactly one slack (type 3) bus, found {}",
                slacks.len()
            )));
        }
        let bus_sets = BusSets {
            slack: slacks[0],
            pv: (0..buses.len()).filter(|&i| buses[i].bus_type == BusType::PV).collect(),
            pq: (0..buses.len()).filter(|&i| buses[i].bus_type == BusType::PQ).collect(),
        };
        Ok(CaseData { name: name.into(), base_mva, buses, branches, gens, bus_sets, index })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of an external bus number.
    pub fn bus_index(&self, id: i64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Voltage magnitude setpoint: the first active generator's `Vg`, else the bus `Vm`.
    pub fn voltage_setpoint(&self, bus: usize) -> f64 {
        let id = self.buses[bus].id;
        self.gens.iter().find(|g| g.bus == id).map(|g| g.vg).unwrap_or(self.buses[bus].vm)
    }

    /// Reference angle of the slack bus in radians.
    pub fn slack_angle(&self) -> f64 {
        self.buses[self.bus_sets.slack].va.to_radians()
    }

    /// Serialize to the native JSON interchange format.
    pub fn to_native_json(&self) -> String {
        let doc = NativeCase {
            name: self.name.clone(),
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            gens: self.gens.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("case serialization is infallible")
    }

    /// Serialize as MATPOWER case text (literal matrix blocks).
    pub fn to_matpower(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("function mpc = {}\n", self.name));
        out.push_str("mpc.version = '2';\n");
        out.push_str(&format!("mpc.baseMVA = {};\n\n", self.base_mva));
        out.push_str("%% bus data\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\nmpc.bus = [\n");
        for b in &self.buses {
            out.push_str(&format!(
                "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t1.1\t0.9;\n",
                b.id,
                b.bus_type.code(),
                b.pd,
                b.qd,
                b.gs,
                b.bs,
                b.vm,
                b.va,
                b.base_kv
            ));
        }
        out.push_str("];\n\n%% generator data\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\nmpc.gen = [\n");
        for g in &self.gens {
            out.push_str(&format!(
                "\t{}\t{}\t{}\t0\t0\t{}\t{}\t{}\t0\t0;\n",
                g.bus,
                g.pg,
                g.qg,
                g.vg,
                self.base_mva,
                u8::from(g.status)
            ));
        }
        out.push_str("];\n\n%% branch data\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\nmpc.branch = [\n");
        for br in &self.branches {
            out.push_str(&format!(
                "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{};\n",
                br.from,
                br.to,
                br.r,
                br.x,
                br.b,
                br.tap,
                br.shift,
                u8::from(br.status)
            ));
        }
        out.push_str("];\n");
        out
    }
}

#[derive(Serialize, Deserialize)]
struct NativeCase {
    name: String,
    #[serde(rename = "base_MVA")]
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    gens: Vec<Generator>,
}

// Column positions in MATPOWER version 2 matrices.
const BUS_COLS: usize = 13;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

/// Parse MATPOWER case text restricted to literal matrix blocks.
pub fn parse_matpower_case(text: &str) -> Result<CaseData, CaseError> {
    let clean = strip_comments(text);
    let name = clean
        .lines()
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix("function")
                .and_then(|rest| rest.split('=').nth(1))
                .map(|n| n.trim().trim_end_matches(';').to_string())
        })
        .unwrap_or_else(|| "case".to_string());

    let base_mva = scalar_assignment(&clean, "baseMVA")?;
    let bus_rows = matrix_block(&clean, "bus")?;
    let gen_rows = matrix_block(&clean, "gen")?;
    let branch_rows = matrix_block(&clean, "branch")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (r, row) in bus_rows.iter().enumerate() {
        require_cols("bus", r, row, BUS_COLS)?;
        let bus_type = BusType::from_code(row[1]).ok_or_else(|| CaseError::BadRow {
            block: "bus".into(),
            row: r + 1,
            msg: format!("unsupported bus type {}", row[1]),
        })?;
        buses.push(Bus {
            id: integer("bus", r, row[0])?,
            bus_type,
            pd: row[2],
            qd: row[3],
            gs: row[4],
            bs: row[5],
            vm: row[7],
            va: row[8],
            base_kv: row[9],
        });
    }
    let mut gens = Vec::with_capacity(gen_rows.len());
    for (r, row) in gen_rows.iter().enumerate() {
        require_cols("gen", r, row, GEN_COLS)?;
        gens.push(Generator {
            bus: integer("gen", r, row[0])?,
            pg: row[1],
            qg: row[2],
            vg: row[5],
            status: row[7] > 0.0,
        });
    }
    let mut branches = Vec::with_capacity(branch_rows.len());
    for (r, row) in branch_rows.iter().enumerate() {
        require_cols("branch", r, row, BRANCH_COLS)?;
        branches.push(Branch {
            from: integer("branch", r, row[0])?,
            to: integer("branch", r, row[1])?,
            r: row[2],
            x: row[3],
            b: row[4],
            tap: row[8],
            shift: row[9],
            status: row[10] > 0.0,
        });
    }
    CaseData::new(name, base_mva, buses, branches, gens)
}

fn require_cols(block: &str, row: usize, vals: &[f64], n: usize) -> Result<(), CaseError> {
    if vals.len() < n {
        return Err(CaseError::BadRow {
            block: block.into(),
            row: row + 1,
            msg: format!("expected at least {n} columns, found {}", vals.len()),
        });
    }
    Ok(())
}

fn integer(block: &str, row: usize, v: f64) -> Result<i64, CaseError> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(CaseError::BadRow {
            block: block.into(),
            row: row + 1,
            msg: format!("expected an integer bus number, found {v}"),
        });
    }
    Ok(v as i64)
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| {
            // '%' inside a quoted string (e.g. mpc.version) never appears in case files.
            match line.find('%') {
                Some(pos) => &line[..pos],
                None => line,
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn find_assignment<'a>(text: &'a str, field: &str) -> Option<&'a str> {
    let key = format!("mpc.{field}");
    let mut search = 0;
    while let Some(pos) = text[search..].find(&key) {
        let start = search + pos;
        let after = &text[start + key.len()..];
        // Reject longer identifiers such as `mpc.gencost` when looking for `mpc.gen`.
        let boundary = after.chars().next().is_none_or(|c| !(c.is_alphanumeric() || c == '_'));
        let trimmed = after.trim_start();
        if boundary && trimmed.starts_with('=') {
            return Some(trimmed[1..].trim_start());
        }
        search = start + key.len();
    }
    None
}

fn scalar_assignment(text: &str, field: &str) -> Result<f64, CaseError> {
    let rhs = find_assignment(text, field).ok_or_else(|| CaseError::MissingBlock(field.into()))?;
    let end = rhs.find([';', '\n']).unwrap_or(rhs.len());
    parse_number(rhs[..end].trim())
        .ok_or_else(|| CaseError::Syntax(format!("mpc.{field} is not a literal number")))
}

fn matrix_block(text: &str, field: &str) -> Result<Vec<Vec<f64>>, CaseError> {
    let rhs = find_assignment(text, field).ok_or_else(|| CaseError::MissingBlock(field.into()))?;
    let body = rhs
        .strip_prefix('[')
        .ok_or_else(|| CaseError::Syntax(format!("mpc.{field} is not a literal matrix")))?;
    let end = body
        .find(']')
        .ok_or_else(|| CaseError::Syntax(format!("unterminated matrix for mpc.{field}")))?;
    let mut rows = Vec::new();
    for (r, raw) in body[..end].split([';', '\n']).enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in raw.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let v = parse_number(tok).ok_or_else(|| CaseError::BadRow {
                block: field.into(),
                row: r + 1,
                msg: format!("invalid number `{tok}`"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

/// Parse the native JSON case format. Schema violations report a JSON pointer.
pub fn parse_native_case(text: &str) -> Result<CaseData, CaseError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| CaseError::Schema { path: String::new(), msg: e.to_string() })?;
    check_schema(&doc)?;
    let native: NativeCase = serde_json::from_value(doc)
        .map_err(|e| CaseError::Schema { path: String::new(), msg: e.to_string() })?;
    CaseData::new(native.name, native.base_mva, native.buses, native.branches, native.gens)
}

#[derive(Clone, Copy)]
enum Kind {
    Num,
    Int,
    Str,
    Bool,
    BusType,
}

const BUS_FIELDS: &[(&str, Kind)] = &[
    ("id", Kind::Int),
    ("bus_type", Kind::BusType),
    ("Pd", Kind::Num),
    ("Qd", Kind::Num),
    ("Gs", Kind::Num),
    ("Bs", Kind::Num),
    ("Vm", Kind::Num),
    ("Va", Kind::Num),
    ("base_kV", Kind::Num),
];
const BRANCH_FIELDS: &[(&str, Kind)] = &[
    ("from", Kind::Int),
    ("to", Kind::Int),
    ("r", Kind::Num),
    ("x", Kind::Num),
    ("b", Kind::Num),
    ("tap", Kind::Num),
    ("shift", Kind::Num),
    ("status", Kind::Bool),
];
const GEN_FIELDS: &[(&str, Kind)] =
    &[("bus", Kind::Int), ("Pg", Kind::Num), ("Qg", Kind::Num), ("Vg", Kind::Num), ("status", Kind::Bool)];

fn check_schema(doc: &Value) -> Result<(), CaseError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| CaseError::Schema { path: "/".into(), msg: "expected an object".into() })?;
    check_fields(obj, "", &[("name", Kind::Str), ("base_MVA", Kind::Num)])?;
    for (key, fields) in [("buses", BUS_FIELDS), ("branches", BRANCH_FIELDS), ("gens", GEN_FIELDS)] {
        let path = format!("/{key}");
        let arr = obj
            .get(key)
            .ok_or_else(|| CaseError::Schema { path: path.clone(), msg: "missing required field".into() })?
            .as_array()
            .ok_or_else(|| CaseError::Schema { path: path.clone(), msg: "expected an array".into() })?;
        for (i, item) in arr.iter().enumerate() {
            let item_path = format!("{path}/{i}");
            let o = item
                .as_object()
                .ok_or_else(|| CaseError::Schema { path: item_path.clone(), msg: "expected an object".into() })?;
            check_fields(o, &item_path, fields)?;
        }
    }
    Ok(())
}

fn check_fields(
    obj: &serde_json::Map<String, Value>,
    prefix: &str,
    fields: &[(&str, Kind)],
) -> Result<(), CaseError> {
    for &(name, kind) in fields {
        let path = format!("{prefix}/{name}");
        let v = obj
            .get(name)
            .ok_or_else(|| CaseError::Schema { path: path.clone(), msg: "missing required field".into() })?;
        let ok = match kind {
            Kind::Num => v.is_number(),
            Kind::Int => v.is_i64(),
            Kind::Str => v.is_string(),
            Kind::Bool => v.is_boolean(),
            Kind::BusType => matches!(v.as_str(), Some("Slack" | "PV" | "PQ")),
        };
        if !ok {
            let expected = match kind {
                Kind::Num => "a number",
                Kind::Int => "an integer",
                Kind::Str => "a string",
                Kind::Bool => "a boolean",
                Kind::BusType => "one of \"Slack\", \"PV\", \"PQ\"",
            };
            return Err(CaseError::Schema { path, msg: format!("expected {expected}") });
        }
    }
    Ok(())
}

/// Parse either format, choosing by the first non-blank character.
pub fn parse_case(text: &str) -> Result<CaseData, CaseError> {
    if text.trim_start().starts_with('{') {
        parse_native_case(text)
    } else {
        parse_matpower_case(text)
    }
}

/// Specified per-unit injections from generation minus load.
///
/// Reactive entries at slack and PV buses are computed for completeness but are
/// unconstrained by the power-flow equations.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseInjections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// `true` where the Q entry is an actual constraint (PQ buses only).
    pub q_constrained: Vec<bool>,
}

pub fn base_injections(case: &CaseData) -> BaseInjections {
    let n = case.n_buses();
    let mut p: Vec<f64> = case.buses.iter().map(|b| -b.pd).collect();
    let mut q: Vec<f64> = case.buses.iter().map(|b| -b.qd).collect();
    for g in &case.gens {
        let i = case.bus_index(g.bus).expect("validated generator bus");
        p[i] += g.pg;
        q[i] += g.qg;
    }
    for i in 0..n {
        p[i] /= case.base_mva;
        q[i] /= case.base_mva;
    }
    let q_constrained = case.buses.iter().map(|b| b.bus_type == BusType::PQ).collect();
    BaseInjections { p, q, q_constrained }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: i64, bus_type: BusType) -> Bus {
        Bus { id, bus_type, pd: 0.0, qd: 0.0, gs: 0.0, bs: 0.0, vm: 1.0, va: 0.0, base_kv: 0.0 }
    }

    const TWO_BUS: &str = "
function mpc = twobus
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0 0 0 0 1 1.0 0 230 1 1.1 0.9;
    2 1 50 20 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 300 -300 1.0 100 1 250 10;
];
mpc.branch = [
    1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.1 20 0;
];
";

    #[test]
    fn parses_minimal_case_and_skips_gencost() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "twobus");
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.gens.len(), 1);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.bus_sets, BusSets { slack: 0, pv: vec![], pq: vec![1] });
        assert_eq!(case.bus_index(2), Some(1));
    }

    #[test]
    fn missing_block_is_named() {
        let text = TWO_BUS.replace("mpc.branch", "mpc.lines");
        assert_eq!(parse_matpower_case(&text).unwrap_err(), CaseError::MissingBlock("branch".into()));
        let text = TWO_BUS.replace("mpc.baseMVA = 100;", "");
        assert_eq!(parse_matpower_case(&text).unwrap_err(), CaseError::MissingBlock("baseMVA".into()));
    }

    #[test]
    fn duplicate_bus_and_slack_count_are_rejected() {
        let dup = TWO_BUS.replace("2 1 50 20", "1 1 50 20");
        assert!(matches!(parse_matpower_case(&dup), Err(CaseError::Validation(m)) if m.contains("duplicate")));
        let none = TWO_BUS.replace("1 3 0 0", "1 1 0 0");
        assert!(matches!(parse_matpower_case(&none), Err(CaseError::Validation(m)) if m.contains("slack")));
        let two = TWO_BUS.replace("2 1 50 20", "2 3 50 20");
        assert!(matches!(parse_matpower_case(&two), Err(CaseError::Validation(m)) if m.contains("found 2")));
    }

    #[test]
    fn pv_without_active_generator_is_demoted() {
        let text = TWO_BUS.replace("2 1 50 20", "2 2 50 20");
        let case = parse_matpower_case(&text).unwrap();
        assert_eq!(case.buses[1].bus_type, BusType::PQ);
        assert_eq!(case.bus_sets.pq, vec![1]);

        let with_gen = text.replace("1 0 0 300 -300 1.0 100 1 250 10;", "1 0 0 300 -300 1.0 100 1 250 10;\n 2 10 0 0 0 1.02 100 0 0 0;");
        let case = parse_matpower_case(&with_gen).unwrap();
        assert_eq!(case.gens.len(), 1, "out-of-service generator dropped");
        assert_eq!(case.buses[1].bus_type, BusType::PQ);
    }

    #[test]
    fn out_of_service_branch_is_dropped() {
        let text = TWO_BUS.replace("0 0 1 -360 360", "0 0 0 -360 360");
        let case = parse_matpower_case(&text).unwrap();
        assert!(case.branches.is_empty());
    }

    #[test]
    fn single_bus_case() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0 0 0 1 1 0 1 1 1.1 0.9];\nmpc.gen = [];\nmpc.branch = [];";
        let case = parse_matpower_case(text).unwrap();
        assert_eq!(case.n_buses(), 1);
        assert!(case.branches.is_empty());
        assert_eq!(case.bus_sets.input_dim(), 0);
    }

    #[test]
    fn base_injections_per_unit() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        let inj = base_injections(&case);
        assert_eq!(inj.p[1], -0.5);
        assert_eq!(inj.q[1], -0.2);
        assert_eq!(inj.q_constrained, vec![false, true]);

        let buses = vec![bus(1, BusType::Slack), {
            let mut b = bus(2, BusType::PV);
            b.pd = 20.0;
            b
        }];
        let gens = vec![
            Generator { bus: 1, pg: 0.0, qg: 0.0, vg: 1.0, status: true },
            Generator { bus: 2, pg: 50.0, qg: 0.0, vg: 1.0, status: true },
        ];
        let branches = vec![Branch { from: 1, to: 2, r: 0.0, x: 0.1, b: 0.0, tap: 0.0, shift: 0.0, status: true }];
        let case = CaseData::new("t", 100.0, buses, branches, gens).unwrap();
        assert!((base_injections(&case).p[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn native_schema_errors_carry_json_pointer() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        let mut doc: Value = serde_json::from_str(&case.to_native_json()).unwrap();
        doc.as_object_mut().unwrap().remove("base_MVA");
        let err = parse_native_case(&doc.to_string()).unwrap_err();
        assert_eq!(err, CaseError::Schema { path: "/base_MVA".into(), msg: "missing required field".into() });

        let mut doc: Value = serde_json::from_str(&case.to_native_json()).unwrap();
        doc["buses"][1]["Vm"] = Value::String("one".into());
        match parse_native_case(&doc.to_string()).unwrap_err() {
            CaseError::Schema { path, .. } => assert_eq!(path, "/buses/1/Vm"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn native_round_trip() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(parse_native_case(&case.to_native_json()).unwrap(), case);
        assert_eq!(parse_case(&case.to_native_json()).unwrap(), case);
        assert_eq!(parse_matpower_case(&case.to_matpower()).unwrap(), case);
    }

    #[test]
    fn branch_to_unknown_bus() {
        let text = TWO_BUS.replace("1 2 0.01", "1 7 0.01");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::Validation(m)) if m.contains("unknown bus 7")));
    }
}
