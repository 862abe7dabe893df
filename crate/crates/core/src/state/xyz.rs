//! Multi-frame XYZ text files.
//!
//! Each frame is `count`, a comment line, then `SYMBOL x y z` per atom.
//! Type label `k` is written as `Tk`; a handful of element symbols
//! (`H C N O F`, in that order) are accepted on input as labels 0..4.

use std::fmt::Write as _;
use std::path::Path;

use super::MixedState;
use crate::error::{Error, Result};

const ELEMENTS: [&str; 5] = ["H", "C", "N", "O", "F"];

pub fn type_symbol(label: usize) -> String {
    format!("T{label}")
}

fn parse_symbol(sym: &str, n_types: usize, line: usize) -> Result<usize> {
    let label = if let Some(rest) = sym.strip_prefix('T') {
        rest.parse::<usize>()
            .map_err(|_| Error::parse(line, format!("unknown element symbol `{sym}`")))?
    } else if let Some(k) = ELEMENTS.iter().position(|e| *e == sym) {
        k
    } else {
        return Err(Error::parse(line, format!("unknown element symbol `{sym}`")));
    };
    if label >= n_types {
        return Err(Error::parse(
            line,
            format!("symbol `{sym}` maps to type {label}, but K = {n_types}"),
        ));
    }
    Ok(label)
}

/// A parsed frame with its comment line.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub state: MixedState,
    pub comment: String,
}

pub fn parse_xyz(text: &str, n_types: usize) -> Result<Vec<Frame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    loop {
        while i < lines.len() && lines[i].trim().is_empty() {
            i += 1;
        }
        if i >= lines.len() {
            break;
        }
        let header_line = i + 1;
        let count: usize = lines[i].trim().parse().map_err(|_| {
            Error::parse(header_line, format!("expected atom count, found `{}`", lines[i].trim()))
        })?;
        if count == 0 {
            return Err(Error::parse(header_line, "atom count must be positive"));
        }
        i += 1;
        if i >= lines.len() {
            return Err(Error::parse(i + 1, "missing comment line"));
        }
        let comment = lines[i].to_string();
        i += 1;
        let mut coords = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for a in 0..count {
            let ln = i + 1;
            let Some(line) = lines.get(i) else {
                return Err(Error::parse(
                    ln,
                    format!(
                        "header at line {header_line} declares {count} atoms, body ends after {a}"
                    ),
                ));
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(Error::parse(
                    ln,
                    format!(
                        "malformed atom line (header at line {header_line} declares {count} atoms): `{line}`"
                    ),
                ));
            }
            labels.push(parse_symbol(toks[0], n_types, ln)?);
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = toks[k + 1]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(ln, format!("bad coordinate `{}`", toks[k + 1])))?;
                if !c[k].is_finite() {
                    return Err(Error::parse(ln, "non-finite coordinate"));
                }
            }
            coords.push(c);
            i += 1;
        }
        let state = MixedState::from_labels(coords, &labels, n_types)
            .map_err(|e| Error::parse(header_line, e.to_string()))?;
        frames.push(Frame { state, comment });
    }
    if frames.is_empty() {
        return Err(Error::parse(1, "empty file"));
    }
    Ok(frames)
}

pub fn load_xyz(path: impl AsRef<Path>, n_types: usize) -> Result<Vec<MixedState>> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_xyz(&text, n_types)?
        .into_iter()
        .map(|f| f.state)
        .collect())
}

/// Serializes hard labels (argmax) and 6-decimal coordinates.
pub fn write_xyz(states: &[MixedState], comments: Option<&[String]>) -> String {
    let mut out = String::new();
    for (idx, s) in states.iter().enumerate() {
        let comment = comments
            .and_then(|c| c.get(idx).cloned())
            .unwrap_or_else(|| format!("frame={idx} K={}", s.n_types));
        let _ = writeln!(out, "{}", s.n_atoms());
        let _ = writeln!(out, "{comment}");
        for (c, l) in s.coords.iter().zip(s.labels()) {
            let _ = writeln!(
                out,
                "{} {:.6} {:.6} {:.6}",
                type_symbol(l),
                c[0],
                c[1],
                c[2]
            );
        }
    }
    out
}

pub fn save_xyz(states: &[MixedState], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_xyz(states, None))?;
    Ok(())
}
