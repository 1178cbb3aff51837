//! Text persistence for structured models: variables, parent lists, optional
//! factored initial distributions, and conditional rates. The writer emits a
//! canonical ordering so save, load, save reproduces files byte for byte.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::model::{Cim, CtbnModel};
use crate::ctmc::IntensityMatrix;
use crate::{Error, Result};

/// Canonical text form. Zero rates are omitted; diagonals are never written
/// because they are derived from row sums.
pub fn write_model(model: &CtbnModel) -> String {
    let mut out = String::from("ctbn\n");
    for (name, size) in model.names().iter().zip(model.sizes()) {
        writeln!(out, "variable {name} {size}").unwrap();
    }
    for i in 0..model.n_variables() {
        if !model.parents(i).is_empty() {
            write!(out, "parents {}", model.name(i)).unwrap();
            for &p in model.parents(i) {
                write!(out, " {}", model.name(p)).unwrap();
            }
            out.push('\n');
        }
    }
    if let Some(dists) = model.initial() {
        for (i, dist) in dists.iter().enumerate() {
            write!(out, "initial {}", model.name(i)).unwrap();
            for p in dist {
                write!(out, " {p:?}").unwrap();
            }
            out.push('\n');
        }
    }
    for i in 0..model.n_variables() {
        let cim = model.cim(i);
        for (u, m) in cim.matrices().iter().enumerate() {
            for x in 0..m.n() {
                for y in 0..m.n() {
                    if x != y && m.rate(x, y) != 0.0 {
                        writeln!(out, "cim {} {u} {x} {y} {:?}", model.name(i), m.rate(x, y))
                            .unwrap();
                    }
                }
            }
        }
    }
    out.push_str("end\n");
    out
}

fn parse_err(origin: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: origin.to_string(),
        line,
        message: message.into(),
    }
}

/// Parse the canonical text form. Comment (`#`) and blank lines are skipped
/// anywhere; `origin` names the source in errors.
pub fn parse_model(text: &str, origin: &str) -> Result<CtbnModel> {
    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut parents: Vec<Vec<usize>> = Vec::new();
    let mut initial: Vec<Option<Vec<f64>>> = Vec::new();
    // (line, u, from, to, rate) per variable, resolved after the header.
    let mut entries: Vec<Vec<(usize, usize, usize, usize, f64)>> = Vec::new();
    let mut seen_header = false;
    let mut seen_end = false;

    let lookup = |names: &[String], name: &str, line: usize| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| parse_err(origin, line, format!("unknown variable {name:?}")))
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if seen_end {
            return Err(parse_err(origin, line_no, "content after end"));
        }
        if !seen_header {
            if line != "ctbn" {
                return Err(parse_err(origin, line_no, "expected the ctbn header line"));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "variable" => {
                if fields.len() != 3 {
                    return Err(parse_err(origin, line_no, "expected: variable <name> <size>"));
                }
                if names.iter().any(|n| n == fields[1]) {
                    return Err(parse_err(
                        origin,
                        line_no,
                        format!("variable {:?} declared twice", fields[1]),
                    ));
                }
                let size: usize = fields[2]
                    .parse()
                    .map_err(|_| parse_err(origin, line_no, "size must be an integer"))?;
                names.push(fields[1].to_string());
                sizes.push(size);
                parents.push(Vec::new());
                initial.push(None);
                entries.push(Vec::new());
            }
            "parents" => {
                if fields.len() < 3 {
                    return Err(parse_err(
                        origin,
                        line_no,
                        "expected: parents <name> <parent>...",
                    ));
                }
                let v = lookup(&names, fields[1], line_no)?;
                parents[v] = fields[2..]
                    .iter()
                    .map(|p| lookup(&names, p, line_no))
                    .collect::<Result<_>>()?;
            }
            "initial" => {
                let v = lookup(&names, fields[1], line_no)?;
                let dist: Vec<f64> = fields[2..]
                    .iter()
                    .map(|p| {
                        p.parse()
                            .map_err(|_| parse_err(origin, line_no, format!("bad number {p:?}")))
                    })
                    .collect::<Result<_>>()?;
                if dist.len() != sizes[v] {
                    return Err(parse_err(
                        origin,
                        line_no,
                        format!("{} probabilities for {} states", dist.len(), sizes[v]),
                    ));
                }
                initial[v] = Some(dist);
            }
            "cim" => {
                if fields.len() != 6 {
                    return Err(parse_err(
                        origin,
                        line_no,
                        "expected: cim <name> <instantiation> <from> <to> <rate>",
                    ));
                }
                let v = lookup(&names, fields[1], line_no)?;
                let nums: Vec<usize> = fields[2..5]
                    .iter()
                    .map(|f| {
                        f.parse()
                            .map_err(|_| parse_err(origin, line_no, format!("bad index {f:?}")))
                    })
                    .collect::<Result<_>>()?;
                let rate: f64 = fields[5]
                    .parse()
                    .map_err(|_| parse_err(origin, line_no, format!("bad rate {:?}", fields[5])))?;
                if !(rate >= 0.0) || !rate.is_finite() {
                    return Err(parse_err(origin, line_no, "rates must be finite and nonnegative"));
                }
                if nums[1] == nums[2] {
                    return Err(parse_err(origin, line_no, "diagonal entries are derived"));
                }
                entries[v].push((line_no, nums[0], nums[1], nums[2], rate));
            }
            "end" => {
                seen_end = true;
            }
            other => {
                return Err(parse_err(origin, line_no, format!("unknown keyword {other:?}")));
            }
        }
    }
    if !seen_end {
        return Err(parse_err(origin, text.lines().count(), "missing end line"));
    }
    if names.is_empty() {
        return Err(parse_err(origin, 1, "model declares no variables"));
    }

    let mut cims = Vec::new();
    for v in 0..names.len() {
        let n_u: usize = parents[v].iter().map(|&p| sizes[p]).product();
        let mut rates = vec![DMatrix::zeros(sizes[v], sizes[v]); n_u];
        for &(line_no, u, x, y, rate) in &entries[v] {
            if u >= n_u || x >= sizes[v] || y >= sizes[v] {
                return Err(parse_err(
                    origin,
                    line_no,
                    format!(
                        "entry ({u}, {x}, {y}) outside {n_u} instantiations of a {}-state variable",
                        sizes[v]
                    ),
                ));
            }
            if rates[u][(x, y)] != 0.0 {
                return Err(parse_err(origin, line_no, "duplicate rate entry"));
            }
            rates[u][(x, y)] = rate;
        }
        let matrices = rates
            .into_iter()
            .map(IntensityMatrix::from_rates)
            .collect::<Result<Vec<_>>>()?;
        cims.push(Cim::new(v, parents[v].clone(), matrices));
    }
    let all_initial = initial.iter().all(|d| d.is_some());
    let any_initial = initial.iter().any(|d| d.is_some());
    if any_initial && !all_initial {
        return Err(parse_err(
            origin,
            1,
            "initial distributions must cover every variable or none",
        ));
    }
    let initial = if all_initial {
        Some(initial.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    CtbnModel::new(names, sizes, cims, initial)
}
