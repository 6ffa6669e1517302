//! Text formats for tuples, plans and episodes.

use serde::{de::DeserializeOwned, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dp::ExperienceTuple;
use crate::error::{Error, Result};
use crate::model::PendulumState;

pub const TUPLE_HEADER: &str =
    "c1,r1,theta1,r1dot,theta1dot,theta2,delta,r1dot_des,c2,r,terminal,c1',r1',theta1',r1dot',theta1dot'";

const TUPLE_FIELDS: usize = 16;

/// Floats in delimited files: 17 significant digits, exact on re-read.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_state(line: &mut String, s: &PendulumState) {
    let _ = write!(
        line,
        "{},{},{},{},{}",
        s.contact,
        fmt_f64(s.r1),
        fmt_f64(s.theta1),
        fmt_f64(s.r1dot),
        fmt_f64(s.theta1dot)
    );
}

pub fn tuple_row(t: &ExperienceTuple) -> String {
    let mut line = String::new();
    push_state(&mut line, &t.state);
    let _ = write!(
        line,
        ",{},{},{},{},{},{},",
        fmt_f64(t.action[0]),
        fmt_f64(t.action[1]),
        fmt_f64(t.action[2]),
        t.contact,
        fmt_f64(t.reward),
        u8::from(t.terminal)
    );
    match &t.next_state {
        Some(next) => push_state(&mut line, next),
        None => line.push_str(",,,,"),
    }
    line
}

pub fn tuples_to_csv(tuples: &[ExperienceTuple]) -> String {
    let mut out = String::with_capacity(64 + tuples.len() * 300);
    out.push_str(TUPLE_HEADER);
    out.push('\n');
    for t in tuples {
        out.push_str(&tuple_row(t));
        out.push('\n');
    }
    out
}

fn malformed(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::MalformedFile(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(field: &str, line: usize, name: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(line, format!("bad {name} value {field:?}")))
}

fn parse_state(f: &[&str], line: usize) -> Result<PendulumState> {
    Ok(PendulumState {
        contact: parse_num(f[0], line, "contact")?,
        r1: parse_num(f[1], line, "r1")?,
        theta1: parse_num(f[2], line, "theta1")?,
        r1dot: parse_num(f[3], line, "r1dot")?,
        theta1dot: parse_num(f[4], line, "theta1dot")?,
    })
}

pub fn tuples_from_csv(text: &str) -> Result<Vec<ExperienceTuple>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == TUPLE_HEADER => {}
        _ => return Err(malformed(1, "missing tuple header")),
    }
    let mut tuples = Vec::new();
    for (i, raw) in lines {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != TUPLE_FIELDS {
            return Err(malformed(
                n,
                format!("expected {TUPLE_FIELDS} fields, found {}", f.len()),
            ));
        }
        let terminal = match f[10].trim() {
            "0" => false,
            "1" => true,
            other => return Err(malformed(n, format!("bad terminal flag {other:?}"))),
        };
        let next_state = if f[11..].iter().all(|x| x.trim().is_empty()) {
            None
        } else {
            Some(parse_state(&f[11..], n)?)
        };
        tuples.push(ExperienceTuple {
            state: parse_state(&f[..5], n)?,
            action: [
                parse_num(f[5], n, "theta2")?,
                parse_num(f[6], n, "delta")?,
                parse_num(f[7], n, "r1dot_des")?,
            ],
            contact: parse_num(f[8], n, "c2")?,
            reward: parse_num(f[9], n, "r")?,
            terminal,
            next_state,
        });
    }
    Ok(tuples)
}

pub fn write_tuples(path: &Path, tuples: &[ExperienceTuple]) -> Result<()> {
    fs::write(path, tuples_to_csv(tuples))?;
    Ok(())
}

pub fn read_tuples(path: &Path) -> Result<Vec<ExperienceTuple>> {
    tuples_from_csv(&fs::read_to_string(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ExperienceTuple> {
        let s = PendulumState::new(1, 0.27, 0.15, -0.1, 1.3);
        vec![
            ExperienceTuple {
                state: s,
                action: [0.6, 0.25, 0.1],
                next_state: Some(PendulumState::new(3, 0.31, -0.6, 0.0, 0.7)),
                reward: 1.0 / 3.0,
                contact: 3,
                terminal: false,
            },
            ExperienceTuple {
                state: s,
                action: [1.2, 0.4, -0.5],
                next_state: None,
                reward: 0.0,
                contact: 0,
                terminal: true,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let tuples = sample();
        let text = tuples_to_csv(&tuples);
        let back = tuples_from_csv(&text).unwrap();
        assert_eq!(back, tuples);
        assert_eq!(tuples_to_csv(&back), text);
    }

    #[test]
    fn empty_file_is_header_only() {
        let text = tuples_to_csv(&[]);
        assert_eq!(text, format!("{TUPLE_HEADER}\n"));
        assert!(tuples_from_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn failed_tuple_has_empty_successor() {
        let row = tuple_row(&sample()[1]);
        assert!(row.ends_with(",1,,,,,"));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(matches!(
            tuples_from_csv("nope\n"),
            Err(Error::MalformedFile(_))
        ));
        let text = format!("{TUPLE_HEADER}\n1,2,3\n");
        assert!(matches!(
            tuples_from_csv(&text),
            Err(Error::MalformedFile(_))
        ));
        let mut text = tuples_to_csv(&sample());
        text = text.replacen(",0,", ",x,", 1);
        assert!(tuples_from_csv(&text).is_err());
    }
}
