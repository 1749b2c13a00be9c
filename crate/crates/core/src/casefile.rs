//! Power-system case descriptions: a MATPOWER subset and a native JSON schema.
//!
//! Only the pieces a DC branch-flow measurement model needs are kept: bus ids,
//! bus types, active loads, branch endpoints and reactances. Everything else in
//! a MATPOWER file (generators, costs, resistances, charging, taps) is parsed
//! over and dropped. Out-of-service branches are removed before meters are
//! numbered, so meter `k` is always the `k`-th in-service branch.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Source syntax accepted by [`parse_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseFormat {
    MatpowerSubset,
    NativeJson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Pq,
    Pv,
    Slack,
}

impl BusType {
    fn from_matpower(code: f64) -> Option<Self> {
        match code as i64 {
            1 if code == 1.0 => Some(BusType::Pq),
            2 if code == 2.0 => Some(BusType::Pv),
            3 if code == 3.0 => Some(BusType::Slack),
            _ => None,
        }
    }

    fn matpower_code(self) -> u8 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: BusType,
    /// Active load in MW.
    pub pd: f64,
    #[serde(default)]
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// Series reactance in per unit.
    pub x: f64,
    /// Ordinal of this branch among in-service branches.
    #[serde(skip)]
    pub meter_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSystem {
    pub name: String,
    pub base_mva: f64,
    pub slack_bus: u32,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl CaseSystem {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Number of branch-flow meters, one per in-service branch.
    pub fn meter_count(&self) -> usize {
        self.branches.len()
    }

    /// Map from bus id to its position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn to_native_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serialization cannot fail")
    }

    /// Writes the MATPOWER subset this module reads back. AC columns are zero.
    pub fn to_matpower(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("function mpc = {}\n", self.name));
        out.push_str(&format!("mpc.baseMVA = {:?};\n", self.base_mva));
        out.push_str("mpc.bus = [\n");
        for b in &self.buses {
            out.push_str(&format!(
                "\t{}\t{}\t{:?}\t0\t0\t0\t1\t1\t0\t{:?}\t1\t1.1\t0.9;\n",
                b.id,
                b.kind.matpower_code(),
                b.pd,
                b.base_kv
            ));
        }
        out.push_str("];\nmpc.branch = [\n");
        for br in &self.branches {
            out.push_str(&format!(
                "\t{}\t{}\t0\t{:?}\t0\t0\t0\t0\t0\t0\t1\t-360\t360;\n",
                br.from, br.to, br.x
            ));
        }
        out.push_str("];\n");
        out
    }
}

/// One violated case invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    InvalidBusId { bus: u32 },
    DuplicateBusId { bus: u32 },
    NonFiniteLoad { bus: u32 },
    NoSlack,
    MultipleSlack { buses: Vec<u32> },
    SlackMismatch { declared: u32 },
    DanglingBus { branch: usize, bus: u32 },
    SelfLoop { branch: usize, bus: u32 },
    BadReactance { branch: usize },
    MeterIdMismatch { branch: usize, meter_id: usize },
    Disconnected { island: Vec<u32> },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::InvalidBusId { bus } => write!(f, "bus id {bus} must be >= 1"),
            Finding::DuplicateBusId { bus } => write!(f, "duplicate bus id {bus}"),
            Finding::NonFiniteLoad { bus } => write!(f, "bus {bus} has a non-finite load"),
            Finding::NoSlack => write!(f, "no slack bus"),
            Finding::MultipleSlack { buses } => write!(f, "multiple slack buses: {buses:?}"),
            Finding::SlackMismatch { declared } => {
                write!(f, "declared slack bus {declared} is not a bus of slack type")
            }
            Finding::DanglingBus { branch, bus } => {
                write!(f, "branch {branch} references absent bus {bus}")
            }
            Finding::SelfLoop { branch, bus } => {
                write!(f, "branch {branch} connects bus {bus} to itself")
            }
            Finding::BadReactance { branch } => {
                write!(f, "branch {branch} has zero or non-finite reactance")
            }
            Finding::MeterIdMismatch { branch, meter_id } => {
                write!(f, "branch {branch} carries meter id {meter_id}")
            }
            Finding::Disconnected { island } => {
                write!(f, "network is disconnected; island not reaching the slack: buses {island:?}")
            }
        }
    }
}

/// Every violated invariant of a case; empty iff the case is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, finding) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{finding}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("empty case source")]
    Empty,
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {0}")]
    Invalid(ValidationReport),
    #[error("unknown built-in case {0:?} (expected case14, case30, case118 or case300)")]
    UnknownCase(String),
}

pub const BUILTIN_CASES: [&str; 4] = ["case14", "case30", "case118", "case300"];

pub fn builtin_source(name: &str) -> Result<&'static str, CaseError> {
    match name {
        "case14" => Ok(include_str!("../data/case14.m")),
        "case30" => Ok(include_str!("../data/case30.m")),
        "case118" => Ok(include_str!("../data/case118.m")),
        "case300" => Ok(include_str!("../data/case300.m")),
        other => Err(CaseError::UnknownCase(other.to_string())),
    }
}

/// Parses one of the bundled IEEE test systems.
pub fn builtin_case(name: &str) -> Result<CaseSystem, CaseError> {
    let source = builtin_source(name)?;
    parse_case(source, CaseFormat::MatpowerSubset)
}

pub fn parse_case(source: &str, format: CaseFormat) -> Result<CaseSystem, CaseError> {
    if source.trim().is_empty() {
        return Err(CaseError::Empty);
    }
    let mut case = match format {
        CaseFormat::MatpowerSubset => parse_matpower(source)?,
        CaseFormat::NativeJson => parse_native_json(source)?,
    };
    for (k, br) in case.branches.iter_mut().enumerate() {
        br.meter_id = k;
    }
    let report = validate(&case);
    if report.is_valid() {
        Ok(case)
    } else {
        Err(CaseError::Invalid(report))
    }
}

pub fn validate(case: &CaseSystem) -> ValidationReport {
    let mut findings = Vec::new();

    let mut seen = HashSet::new();
    for bus in &case.buses {
        if bus.id < 1 {
            findings.push(Finding::InvalidBusId { bus: bus.id });
        }
        if !seen.insert(bus.id) {
            findings.push(Finding::DuplicateBusId { bus: bus.id });
        }
        if !bus.pd.is_finite() {
            findings.push(Finding::NonFiniteLoad { bus: bus.id });
        }
    }

    let slacks: Vec<u32> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusType::Slack)
        .map(|b| b.id)
        .collect();
    match slacks.len() {
        0 => findings.push(Finding::NoSlack),
        1 => {
            if slacks[0] != case.slack_bus {
                findings.push(Finding::SlackMismatch {
                    declared: case.slack_bus,
                });
            }
        }
        _ => findings.push(Finding::MultipleSlack { buses: slacks }),
    }

    for (k, br) in case.branches.iter().enumerate() {
        for bus in [br.from, br.to] {
            if !seen.contains(&bus) {
                findings.push(Finding::DanglingBus { branch: k, bus });
            }
        }
        if br.from == br.to {
            findings.push(Finding::SelfLoop {
                branch: k,
                bus: br.from,
            });
        }
        // Series-compensated lines carry negative reactance; only a zero or
        // non-finite value makes the flow undefined.
        if br.x == 0.0 || !br.x.is_finite() {
            findings.push(Finding::BadReactance { branch: k });
        }
        if br.meter_id != k {
            findings.push(Finding::MeterIdMismatch {
                branch: k,
                meter_id: br.meter_id,
            });
        }
    }

    if let Some(island) = unreachable_buses(case) {
        findings.push(Finding::Disconnected { island });
    }

    ValidationReport { findings }
}

/// Buses that cannot be reached from the slack (or from the first bus when
/// the slack is missing). `None` when every bus is reachable.
fn unreachable_buses(case: &CaseSystem) -> Option<Vec<u32>> {
    let first = case.buses.first()?;
    let mut adj: HashMap<u32, Vec<u32>> = case.buses.iter().map(|b| (b.id, Vec::new())).collect();
    for br in &case.branches {
        if adj.contains_key(&br.from) && adj.contains_key(&br.to) {
            adj.get_mut(&br.from).unwrap().push(br.to);
            adj.get_mut(&br.to).unwrap().push(br.from);
        }
    }
    let root = if adj.contains_key(&case.slack_bus) {
        case.slack_bus
    } else {
        first.id
    };
    let mut seen = HashSet::from([root]);
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        for &w in &adj[&v] {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    let mut island: Vec<u32> = Vec::new();
    for bus in &case.buses {
        if !seen.contains(&bus.id) && !island.contains(&bus.id) {
            island.push(bus.id);
        }
    }
    (!island.is_empty()).then_some(island)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeCase {
    name: String,
    base_mva: f64,
    slack_bus: u32,
    buses: Vec<Bus>,
    branches: Vec<NativeBranch>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeBranch {
    from: u32,
    to: u32,
    x: f64,
}

fn parse_native_json(source: &str) -> Result<CaseSystem, CaseError> {
    let native: NativeCase = serde_json::from_str(source).map_err(|e| CaseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(CaseSystem {
        name: native.name,
        base_mva: native.base_mva,
        slack_bus: native.slack_bus,
        buses: native.buses,
        branches: native
            .branches
            .into_iter()
            .map(|b| Branch {
                from: b.from,
                to: b.to,
                x: b.x,
                meter_id: 0,
            })
            .collect(),
    })
}

/// A numeric matrix block with the source position of every row.
struct Block {
    rows: Vec<(usize, Vec<f64>)>,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn parse_matpower(source: &str) -> Result<CaseSystem, CaseError> {
    let mut name = None;
    let mut base_mva = None;
    let mut blocks: BTreeMap<&'static str, Block> = BTreeMap::new();

    let lines: Vec<&str> = source.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let text = strip_comment(lines[i]);
        let trimmed = text.trim_start();
        let indent = text.len() - trimmed.len();
        i += 1;
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("function") {
            if let Some((_, fname)) = rest.split_once('=') {
                name = Some(fname.trim().trim_end_matches(';').to_string());
            }
            continue;
        }
        let Some(rest) = trimmed.strip_prefix("mpc.") else {
            continue;
        };
        let Some(eq) = rest.find('=') else {
            return Err(syntax(line_no, indent + 5, "expected '=' after field name"));
        };
        let field = rest[..eq].trim();
        let rhs = &rest[eq + 1..];
        let rhs_col = indent + 4 + eq + 2;
        match field {
            "baseMVA" => {
                let value = rhs.trim().trim_end_matches(';').trim();
                let parsed = value.parse::<f64>().map_err(|_| {
                    syntax(
                        line_no,
                        rhs_col + (rhs.len() - rhs.trim_start().len()),
                        format!("invalid baseMVA value {value:?}"),
                    )
                })?;
                base_mva = Some(parsed);
            }
            "bus" | "branch" => {
                let key = if field == "bus" { "bus" } else { "branch" };
                let Some(open) = rhs.find('[') else {
                    return Err(syntax(line_no, rhs_col, format!("expected '[' for mpc.{field}")));
                };
                let (block, next) = read_block(&lines, i - 1, rhs_col + open + 1, &rhs[open + 1..])?;
                blocks.insert(key, block);
                i = next;
            }
            _ => {
                // Unrecognized field: skip a bracketed or braced body.
                let close = if rhs.contains('[') {
                    Some(']')
                } else if rhs.contains('{') {
                    Some('}')
                } else {
                    None
                };
                if let Some(close) = close {
                    let mut text = rhs.to_string();
                    let start = line_no;
                    while !text.contains(close) {
                        if i >= lines.len() {
                            return Err(syntax(start, rhs_col, format!("unterminated mpc.{field}")));
                        }
                        text = strip_comment(lines[i]).to_string();
                        i += 1;
                    }
                }
            }
        }
    }

    let base_mva = base_mva.ok_or_else(|| syntax(lines.len().max(1), 1, "missing mpc.baseMVA"))?;
    let bus_block = blocks
        .remove("bus")
        .ok_or_else(|| syntax(lines.len().max(1), 1, "missing mpc.bus"))?;
    let branch_block = blocks
        .remove("branch")
        .ok_or_else(|| syntax(lines.len().max(1), 1, "missing mpc.branch"))?;

    let mut buses = Vec::with_capacity(bus_block.rows.len());
    for (line, row) in &bus_block.rows {
        if row.len() < 3 {
            return Err(syntax(*line, 1, "bus row needs at least id, type and Pd"));
        }
        let kind = BusType::from_matpower(row[1])
            .ok_or_else(|| syntax(*line, 1, format!("unsupported bus type {}", row[1])))?;
        buses.push(Bus {
            id: as_id(row[0]).ok_or_else(|| syntax(*line, 1, format!("invalid bus id {}", row[0])))?,
            kind,
            pd: row[2],
            base_kv: row.get(9).copied().unwrap_or(0.0),
        });
    }

    let mut branches = Vec::with_capacity(branch_block.rows.len());
    for (line, row) in &branch_block.rows {
        if row.len() < 4 {
            return Err(syntax(*line, 1, "branch row needs at least fbus, tbus, r and x"));
        }
        let status = row.get(10).copied().unwrap_or(1.0);
        if status == 0.0 {
            continue;
        }
        let from = as_id(row[0]).ok_or_else(|| syntax(*line, 1, format!("invalid bus id {}", row[0])))?;
        let to = as_id(row[1]).ok_or_else(|| syntax(*line, 1, format!("invalid bus id {}", row[1])))?;
        branches.push(Branch {
            from,
            to,
            x: row[3],
            meter_id: 0,
        });
    }

    let slacks: Vec<u32> = buses
        .iter()
        .filter(|b| b.kind == BusType::Slack)
        .map(|b| b.id)
        .collect();
    Ok(CaseSystem {
        name: name.unwrap_or_else(|| "case".to_string()),
        base_mva,
        // validate() reports a missing or repeated slack.
        slack_bus: slacks.first().copied().unwrap_or(0),
        buses,
        branches,
    })
}

fn as_id(v: f64) -> Option<u32> {
    (v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

/// Reads matrix rows starting right after `[` on line `start` (0-based)
/// until the closing `]`. Returns the block and the index of the next line.
fn read_block(
    lines: &[&str],
    start: usize,
    first_col: usize,
    first_rest: &str,
) -> Result<(Block, usize), CaseError> {
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut current_line = start + 1;
    let mut idx = start;
    let mut text = first_rest.to_string();
    let mut col_offset = first_col;
    loop {
        let line_no = idx + 1;
        let mut closed = false;
        let mut pos = 0;
        let bytes = text.as_bytes();
        while pos < bytes.len() {
            let c = bytes[pos] as char;
            if c.is_whitespace() || c == ',' {
                pos += 1;
                continue;
            }
            if c == ';' {
                if !current.is_empty() {
                    rows.push((current_line, std::mem::take(&mut current)));
                }
                pos += 1;
                continue;
            }
            if c == ']' {
                closed = true;
                break;
            }
            let end = text[pos..]
                .find(|ch: char| ch.is_whitespace() || ch == ',' || ch == ';' || ch == ']')
                .map(|e| pos + e)
                .unwrap_or(text.len());
            let token = &text[pos..end];
            let value = token.parse::<f64>().map_err(|_| {
                syntax(line_no, col_offset + pos + 1, format!("invalid number {token:?}"))
            })?;
            if current.is_empty() {
                current_line = line_no;
            }
            current.push(value);
            pos = end;
        }
        // A newline also ends a row.
        if !current.is_empty() {
            rows.push((current_line, std::mem::take(&mut current)));
        }
        if closed {
            return Ok((Block { rows }, idx + 1));
        }
        idx += 1;
        if idx >= lines.len() {
            return Err(syntax(start + 1, first_col, "unterminated matrix block"));
        }
        text = strip_comment(lines[idx]).to_string();
        col_offset = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = r#"{
        "name": "tri", "base_mva": 100, "slack_bus": 1,
        "buses": [
            {"id": 1, "type": "slack", "pd": 0, "base_kv": 0},
            {"id": 2, "type": "pq", "pd": 50, "base_kv": 0},
            {"id": 3, "type": "pq", "pd": 50, "base_kv": 0}
        ],
        "branches": [{"from": 1, "to": 2, "x": 1}, {"from": 1, "to": 3, "x": 1}, {"from": 2, "to": 3, "x": 1}]
    }"#;

    #[test]
    fn builtin_branch_counts() {
        for (name, buses, branches) in [
            ("case14", 14, 20),
            ("case30", 30, 41),
            ("case118", 118, 186),
            ("case300", 300, 411),
        ] {
            let case = builtin_case(name).unwrap();
            assert_eq!(case.bus_count(), buses, "{name}");
            assert_eq!(case.meter_count(), branches, "{name}");
            assert!(validate(&case).is_valid());
        }
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(builtin_case("case999"), Err(CaseError::UnknownCase(n)) if n == "case999"));
    }

    #[test]
    fn json_triangle() {
        let case = parse_case(TRIANGLE, CaseFormat::NativeJson).unwrap();
        assert_eq!(case.slack_bus, 1);
        assert_eq!(case.branches[2].meter_id, 2);
    }

    #[test]
    fn dangling_bus_is_named() {
        let src = TRIANGLE.replace(r#""from": 2, "to": 3"#, r#""from": 2, "to": 99"#);
        let err = parse_case(&src, CaseFormat::NativeJson).unwrap_err();
        assert!(err.to_string().contains("bus 99"), "{err}");
    }

    #[test]
    fn zero_reactance_and_missing_slack() {
        let src = TRIANGLE.replace(r#""from": 1, "to": 3, "x": 1"#, r#""from": 1, "to": 3, "x": 0"#);
        let err = parse_case(&src, CaseFormat::NativeJson).unwrap_err();
        assert!(err.to_string().contains("branch 1"), "{err}");

        let src = TRIANGLE.replace(r#""type": "slack""#, r#""type": "pv""#);
        match parse_case(&src, CaseFormat::NativeJson) {
            Err(CaseError::Invalid(r)) => assert!(r.findings.contains(&Finding::NoSlack)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disconnected_names_island() {
        let src = r#"{"name": "two", "base_mva": 100, "slack_bus": 1,
            "buses": [{"id": 1, "type": "slack", "pd": 0}, {"id": 2, "type": "pq", "pd": 1},
                      {"id": 7, "type": "pq", "pd": 1}],
            "branches": [{"from": 1, "to": 2, "x": 0.1}]}"#;
        match parse_case(src, CaseFormat::NativeJson) {
            Err(CaseError::Invalid(r)) => {
                assert_eq!(r.findings, vec![Finding::Disconnected { island: vec![7] }])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_findings() {
        let good = parse_case(TRIANGLE, CaseFormat::NativeJson).unwrap();
        assert!(validate(&good).is_valid());

        let mut dup = good.clone();
        dup.buses[2].id = 2;
        dup.branches[1].to = 2;
        dup.branches[2] = Branch { from: 1, to: 2, x: 1.0, meter_id: 2 };
        assert_eq!(validate(&dup).findings, vec![Finding::DuplicateBusId { bus: 2 }]);

        let mut two = good.clone();
        two.buses[1].kind = BusType::Slack;
        assert_eq!(validate(&two).findings, vec![Finding::MultipleSlack { buses: vec![1, 2] }]);
    }

    #[test]
    fn json_syntax_error_has_position() {
        let err = parse_case("{\n  \"name\": ,\n}", CaseFormat::NativeJson).unwrap_err();
        match err {
            CaseError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matpower_bad_number_position() {
        let src = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0;\n 2 1 1x;\n];\nmpc.branch = [1 2 0 0.1];\n";
        match parse_case(src, CaseFormat::MatpowerSubset).unwrap_err() {
            CaseError::Syntax { line, column, message } => {
                assert_eq!((line, column), (4, 6), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matpower_unterminated_block() {
        let src = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0;\n";
        assert!(matches!(
            parse_case(src, CaseFormat::MatpowerSubset),
            Err(CaseError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn matpower_drops_out_of_service_and_ignores_extras() {
        let src = "function mpc = tiny\n\
            mpc.version = '2';\n\
            mpc.baseMVA = 100;\n\
            mpc.bus = [ 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9; 2 1 10 0 0 0 1 1 0 230 1 1.1 0.9;\n\
              3 1 5 % trailing comment\n];\n\
            mpc.gen = [\n 1 0 0 0 0 1 100 1 100 0;\n];\n\
            mpc.bus_name = {\n 'a';\n 'b';\n};\n\
            mpc.branch = [\n\
              1 2 0 0.1 0 0 0 0 0 0 1;\n\
              1 3 0 0.2 0 0 0 0 0 0 0;\n\
              2 3 0 0.3 0 0 0 0 0 0 1\n\
              1 3 0 0.4\n];\n";
        let case = parse_case(src, CaseFormat::MatpowerSubset).unwrap();
        assert_eq!(case.name, "tiny");
        assert_eq!(case.buses.len(), 3);
        assert_eq!(case.buses[0].base_kv, 230.0);
        let xs: Vec<f64> = case.branches.iter().map(|b| b.x).collect();
        assert_eq!(xs, vec![0.1, 0.3, 0.4]);
        let ids: Vec<usize> = case.branches.iter().map(|b| b.meter_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn negative_reactance_is_accepted() {
        let case = builtin_case("case300").unwrap();
        assert!(case.branches.iter().any(|b| b.x < 0.0));
    }

    #[test]
    fn empty_source() {
        assert!(matches!(parse_case("  \n", CaseFormat::NativeJson), Err(CaseError::Empty)));
    }
}
