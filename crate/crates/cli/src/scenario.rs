//! Line-based scenario file format.
//!
//! ```text
//! # declarations, order-insensitive
//! seed 42
//! range 12
//! hello_interval 1.0
//! latency_per_unit 0.001
//! drop_prob 0
//! node 0 0 0 aa:00:00:00:00:00
//! node 1 10 0 aa:00:00:00:00:01
//! # script, ordered by time (seconds); payloads are hex, `-` for empty
//! at 0.5 send 0 1 68656c6c6f
//! at 1.0 join 2 20 0 aa:00:00:00:00:02
//! at 2.0 route 0 2
//! at 3.0 leave 1
//! ```
//!
//! Times are decimal seconds with microsecond resolution, parsed exactly
//! (no float rounding). `#` starts a comment. `range` and at least one
//! `node` are required; `seed` defaults to 0, `hello_interval` to 1 s,
//! `latency_per_unit` to 1 ms, `drop_prob` to 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use treekey_core::crypto::MacAddress;
use treekey_core::sim::{Action, NodeSpec, Scenario, ScriptAction, SimTime};
use treekey_core::topology::{NodeId, Position};

/// Parse failure with its location in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}: {}",
            self.line, self.column, self.message
        )
    }
}

impl std::error::Error for ParseError {}

struct Token<'a> {
    column: usize,
    text: &'a str,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let body = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    column: s + 1,
                    text: &body[s..i],
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            column: s + 1,
            text: &body[s..],
        });
    }
    tokens
}

/// Decimal seconds with at most six fractional digits, converted exactly
/// to microseconds.
pub fn parse_time_secs(text: &str) -> Option<SimTime> {
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if frac_part.len() > 6 || frac_part.contains('.') {
        return None;
    }
    let int: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let mut micros = int.checked_mul(1_000_000)?;
    if !frac_part.is_empty() {
        if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let frac: u64 = frac_part.parse().ok()?;
        let scale = 10u64.pow(6 - frac_part.len() as u32);
        micros = micros.checked_add(frac * scale)?;
    }
    Some(SimTime(micros))
}

/// Canonical time rendering: seconds with six fractional digits.
pub fn format_time_secs(time: SimTime) -> String {
    format!("{}.{:06}", time.0 / 1_000_000, time.0 % 1_000_000)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut seed = 0u64;
    let mut range: Option<f64> = None;
    let mut hello_interval = SimTime(1_000_000);
    let mut latency_per_unit = SimTime(1_000);
    let mut drop_prob = 0.0f64;
    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut node_lines: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut mac_lines: BTreeMap<MacAddress, usize> = BTreeMap::new();
    let mut script: Vec<(usize, ScriptAction)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            continue;
        }
        let err = |column: usize, message: String| ParseError {
            line: line_no,
            column,
            message,
        };
        let directive = &tokens[0];
        let args = &tokens[1..];
        let expect_args = |n: usize| -> Result<(), ParseError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(
                    directive.column,
                    format!(
                        "`{}` takes {} argument(s), got {}",
                        directive.text,
                        n,
                        args.len()
                    ),
                ))
            }
        };
        match directive.text {
            "seed" => {
                expect_args(1)?;
                seed = args[0]
                    .text
                    .parse()
                    .map_err(|_| err(args[0].column, format!("invalid seed {:?}", args[0].text)))?;
            }
            "range" => {
                expect_args(1)?;
                let value: f64 = args[0].text.parse().map_err(|_| {
                    err(args[0].column, format!("invalid range {:?}", args[0].text))
                })?;
                if value <= 0.0 || !value.is_finite() {
                    return Err(err(args[0].column, "range must be positive".into()));
                }
                range = Some(value);
            }
            "hello_interval" => {
                expect_args(1)?;
                hello_interval = parse_positive_time(args[0].text).ok_or_else(|| {
                    err(
                        args[0].column,
                        format!("invalid interval {:?}", args[0].text),
                    )
                })?;
            }
            "latency_per_unit" => {
                expect_args(1)?;
                latency_per_unit = parse_time_secs(args[0].text).ok_or_else(|| {
                    err(
                        args[0].column,
                        format!("invalid latency {:?}", args[0].text),
                    )
                })?;
            }
            "drop_prob" => {
                expect_args(1)?;
                let value: f64 = args[0].text.parse().map_err(|_| {
                    err(
                        args[0].column,
                        format!("invalid probability {:?}", args[0].text),
                    )
                })?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(err(args[0].column, "drop_prob must lie in [0, 1]".into()));
                }
                drop_prob = value;
            }
            "node" => {
                expect_args(4)?;
                let spec = parse_node_spec(args, line_no)?;
                if let Some(prev) = node_lines.insert(spec.id, line_no) {
                    return Err(err(
                        args[0].column,
                        format!("node {} already declared on line {prev}", spec.id),
                    ));
                }
                if let Some(prev) = mac_lines.insert(spec.mac, line_no) {
                    return Err(err(
                        args[3].column,
                        format!("mac {} already used on line {prev}", spec.mac),
                    ));
                }
                nodes.push(spec);
            }
            "at" => {
                if args.len() < 2 {
                    return Err(err(
                        directive.column,
                        "`at` needs a time and an action".into(),
                    ));
                }
                let time = parse_time_secs(args[0].text).ok_or_else(|| {
                    err(args[0].column, format!("invalid time {:?}", args[0].text))
                })?;
                let action = parse_action(&args[1..], line_no)?;
                script.push((line_no, ScriptAction { at: time, action }));
            }
            other => {
                return Err(err(
                    directive.column,
                    format!("unknown directive {other:?}"),
                ));
            }
        }
    }

    let range = range.ok_or(ParseError {
        line: text.lines().count().max(1),
        column: 1,
        message: "missing required `range` directive".into(),
    })?;
    if nodes.is_empty() {
        return Err(ParseError {
            line: text.lines().count().max(1),
            column: 1,
            message: "scenario declares no nodes".into(),
        });
    }

    // script-wide checks: time ordering, id references, id/mac uniqueness
    let mut known: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    let mut macs: BTreeSet<MacAddress> = nodes.iter().map(|n| n.mac).collect();
    let mut last = SimTime::ZERO;
    for (line_no, entry) in &script {
        if entry.at < last {
            return Err(ParseError {
                line: *line_no,
                column: 1,
                message: "script times must be non-decreasing".into(),
            });
        }
        last = entry.at;
        let check = |id: NodeId| -> Result<(), ParseError> {
            if known.contains(&id) {
                Ok(())
            } else {
                Err(ParseError {
                    line: *line_no,
                    column: 1,
                    message: format!("node {id} is not declared or joined before use"),
                })
            }
        };
        match &entry.action {
            Action::Send { src, dest, .. } => {
                check(*src)?;
                check(*dest)?;
            }
            Action::Route { origin, target } => {
                check(*origin)?;
                check(*target)?;
            }
            Action::Leave(id) => check(*id)?,
            Action::Join(spec) => {
                if !known.insert(spec.id) {
                    return Err(ParseError {
                        line: *line_no,
                        column: 1,
                        message: format!("join reuses node id {}", spec.id),
                    });
                }
                if !macs.insert(spec.mac) {
                    return Err(ParseError {
                        line: *line_no,
                        column: 1,
                        message: format!("join reuses mac {}", spec.mac),
                    });
                }
            }
        }
    }

    Ok(Scenario {
        seed,
        range,
        hello_interval,
        latency_per_unit,
        drop_prob,
        nodes,
        script: script.into_iter().map(|(_, entry)| entry).collect(),
    })
}

fn parse_positive_time(text: &str) -> Option<SimTime> {
    parse_time_secs(text).filter(|t| *t > SimTime::ZERO)
}

fn parse_node_spec(args: &[Token<'_>], line: usize) -> Result<NodeSpec, ParseError> {
    let err = |column: usize, message: String| ParseError {
        line,
        column,
        message,
    };
    let id: u32 = args[0].text.parse().map_err(|_| {
        err(
            args[0].column,
            format!("invalid node id {:?}", args[0].text),
        )
    })?;
    let x: f64 = args[1].text.parse().map_err(|_| {
        err(
            args[1].column,
            format!("invalid coordinate {:?}", args[1].text),
        )
    })?;
    let y: f64 = args[2].text.parse().map_err(|_| {
        err(
            args[2].column,
            format!("invalid coordinate {:?}", args[2].text),
        )
    })?;
    if !x.is_finite() || !y.is_finite() {
        return Err(err(args[1].column, "coordinates must be finite".into()));
    }
    let mac: MacAddress = args[3].text.parse().map_err(|_| {
        err(
            args[3].column,
            format!("malformed mac address {:?}", args[3].text),
        )
    })?;
    Ok(NodeSpec {
        id: NodeId(id),
        position: Position::new(x, y),
        mac,
    })
}

fn parse_action(args: &[Token<'_>], line: usize) -> Result<Action, ParseError> {
    let err = |column: usize, message: String| ParseError {
        line,
        column,
        message,
    };
    let verb = &args[0];
    let rest = &args[1..];
    let expect = |n: usize| -> Result<(), ParseError> {
        if rest.len() == n {
            Ok(())
        } else {
            Err(err(
                verb.column,
                format!(
                    "`{}` takes {} argument(s), got {}",
                    verb.text,
                    n,
                    rest.len()
                ),
            ))
        }
    };
    let parse_id = |tok: &Token<'_>| -> Result<NodeId, ParseError> {
        tok.text
            .parse::<u32>()
            .map(NodeId)
            .map_err(|_| err(tok.column, format!("invalid node id {:?}", tok.text)))
    };
    match verb.text {
        "send" => {
            expect(3)?;
            let src = parse_id(&rest[0])?;
            let dest = parse_id(&rest[1])?;
            let payload = if rest[2].text == "-" {
                Vec::new()
            } else {
                hex::decode(rest[2].text).map_err(|_| {
                    err(
                        rest[2].column,
                        format!("invalid hex payload {:?}", rest[2].text),
                    )
                })?
            };
            Ok(Action::Send { src, dest, payload })
        }
        "join" => {
            expect(4)?;
            Ok(Action::Join(parse_node_spec(rest, line)?))
        }
        "leave" => {
            expect(1)?;
            Ok(Action::Leave(parse_id(&rest[0])?))
        }
        "route" => {
            expect(2)?;
            Ok(Action::Route {
                origin: parse_id(&rest[0])?,
                target: parse_id(&rest[1])?,
            })
        }
        other => Err(err(verb.column, format!("unknown action {other:?}"))),
    }
}

/// Canonical rendering; `parse_scenario(serialize_scenario(s))` equals `s`.
pub fn serialize_scenario(scenario: &Scenario) -> String {
    let mut out = String::new();
    out.push_str(&format!("seed {}\n", scenario.seed));
    out.push_str(&format!("range {}\n", scenario.range));
    out.push_str(&format!(
        "hello_interval {}\n",
        format_time_secs(scenario.hello_interval)
    ));
    out.push_str(&format!(
        "latency_per_unit {}\n",
        format_time_secs(scenario.latency_per_unit)
    ));
    out.push_str(&format!("drop_prob {}\n", scenario.drop_prob));
    for spec in &scenario.nodes {
        out.push_str(&format!(
            "node {} {} {} {}\n",
            spec.id, spec.position.x, spec.position.y, spec.mac
        ));
    }
    for entry in &scenario.script {
        let time = format_time_secs(entry.at);
        match &entry.action {
            Action::Send { src, dest, payload } => {
                let hex = if payload.is_empty() {
                    "-".to_string()
                } else {
                    hex::encode(payload)
                };
                out.push_str(&format!("at {time} send {src} {dest} {hex}\n"));
            }
            Action::Join(spec) => {
                out.push_str(&format!(
                    "at {time} join {} {} {} {}\n",
                    spec.id, spec.position.x, spec.position.y, spec.mac
                ));
            }
            Action::Leave(id) => out.push_str(&format!("at {time} leave {id}\n")),
            Action::Route { origin, target } => {
                out.push_str(&format!("at {time} route {origin} {target}\n"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# two nodes, one send
seed 7
range 12
node 0 0 0 aa:00:00:00:00:00
node 1 10 0 aa:00:00:00:00:01
at 0.5 send 0 1 68656c6c6f
";

    #[test]
    fn minimal_file_parses() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        assert_eq!(scenario.seed, 7);
        assert_eq!(scenario.nodes.len(), 2);
        assert_eq!(scenario.script.len(), 1);
        assert_eq!(scenario.script[0].at, SimTime(500_000));
        match &scenario.script[0].action {
            Action::Send { payload, .. } => assert_eq!(payload, b"hello"),
            other => panic!("unexpected action {other:?}"),
        }
    }

    #[test]
    fn defaults_apply_when_directives_absent() {
        let scenario = parse_scenario("range 5\nnode 0 0 0 aa:00:00:00:00:00\n").unwrap();
        assert_eq!(scenario.seed, 0);
        assert_eq!(scenario.hello_interval, SimTime(1_000_000));
        assert_eq!(scenario.latency_per_unit, SimTime(1_000));
        assert_eq!(scenario.drop_prob, 0.0);
    }

    #[test]
    fn malformed_mac_reports_location() {
        let text = "range 5\nnode 0 0 0 zz:00:00:00:00:00\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("malformed mac"));
    }

    #[test]
    fn unknown_directive_is_rejected() {
        let err = parse_scenario("range 5\nnode 0 0 0 aa:00:00:00:00:00\nbogus 1\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("unknown directive"));
    }

    #[test]
    fn duplicate_node_id_is_rejected() {
        let text = "range 5\nnode 0 0 0 aa:00:00:00:00:00\nnode 0 1 1 aa:00:00:00:00:01\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("already declared"));
    }

    #[test]
    fn negative_time_is_rejected() {
        let text = "range 5\nnode 0 0 0 aa:00:00:00:00:00\nnode 1 1 0 aa:00:00:00:00:01\nat -1 send 0 1 ff\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.message.contains("invalid time"));
    }

    #[test]
    fn out_of_order_script_is_rejected() {
        let text = "range 5\nnode 0 0 0 aa:00:00:00:00:00\nnode 1 1 0 aa:00:00:00:00:01\n\
                    at 2 send 0 1 ff\nat 1 send 1 0 ff\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.line, 5);
        assert!(err.message.contains("non-decreasing"));
    }

    #[test]
    fn undeclared_reference_is_rejected() {
        let text = "range 5\nnode 0 0 0 aa:00:00:00:00:00\nat 1 send 0 9 ff\n";
        let err = parse_scenario(text).unwrap_err();
        assert!(err.message.contains("not declared"));
    }

    #[test]
    fn reference_after_join_is_accepted() {
        let text = "range 15\nnode 0 0 0 aa:00:00:00:00:00\n\
                    at 1 join 1 10 0 aa:00:00:00:00:01\nat 2 send 0 1 ff\n";
        assert!(parse_scenario(text).is_ok());
    }

    #[test]
    fn missing_range_is_rejected() {
        let err = parse_scenario("node 0 0 0 aa:00:00:00:00:00\n").unwrap_err();
        assert!(err.message.contains("range"));
    }

    #[test]
    fn time_parsing_is_exact() {
        assert_eq!(parse_time_secs("1.5"), Some(SimTime(1_500_000)));
        assert_eq!(parse_time_secs("0.000001"), Some(SimTime(1)));
        assert_eq!(parse_time_secs("3"), Some(SimTime(3_000_000)));
        assert_eq!(parse_time_secs("0.1234567"), None); // too fine
        assert_eq!(parse_time_secs("-1"), None);
        assert_eq!(parse_time_secs(""), None);
        assert_eq!(parse_time_secs("."), None);
    }

    #[test]
    fn round_trip_preserves_the_scenario() {
        let text = "range 15\nseed 3\ndrop_prob 0.25\nhello_interval 0.5\n\
                    node 0 0 0 aa:00:00:00:00:00\nnode 1 10 0 aa:00:00:00:00:01\n\
                    at 0.5 send 0 1 -\nat 1 join 2 20 0 aa:00:00:00:00:02\n\
                    at 2 route 0 2\nat 3 leave 1\n";
        let scenario = parse_scenario(text).unwrap();
        let reparsed = parse_scenario(&serialize_scenario(&scenario)).unwrap();
        assert_eq!(scenario, reparsed);
    }
}
