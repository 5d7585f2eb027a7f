//! Dataset CSV:
//!
//! ```text
//! # M=2,N=3,name=blobs,seed=7,rng=chacha8
//! x_1,x_2,label
//! 1.0000000000000000e0,-2.5000000000000000e-1,3
//! ```
//!
//! `seed` is empty for unseeded data. Inputs carry 17 significant digits so they
//! parse back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, RNG_ALGORITHM};
use crate::error::{Error, Result};
use crate::odeflow::fmt_f64;

pub fn to_csv_string(d: &Dataset) -> String {
    let mut out = format!(
        "# M={},N={},name={},seed={},rng={}\n",
        d.input_dim(),
        d.classes(),
        d.name(),
        d.seed().map(|s| s.to_string()).unwrap_or_default(),
        RNG_ALGORITHM
    );
    let columns: Vec<String> = (1..=d.input_dim())
        .map(|i| format!("x_{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    out.push_str(&columns.join(","));
    out.push('\n');
    for j in 0..d.len() {
        for v in d.input(j) {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        let _ = writeln!(out, "{}", d.label(j));
    }
    out
}

pub fn save_csv(d: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(d)).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub(crate) fn parse_csv(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::format(path, format!("line {line}"), msg);
    let mut lines = text.lines();

    let header = lines.next().ok_or_else(|| err(1, "missing metadata header".into()))?;
    let meta = header
        .strip_prefix('#')
        .ok_or_else(|| err(1, "metadata header must start with '#'".into()))?;
    let (mut m, mut n, mut name, mut seed) = (None, None, None, None);
    for field in meta.trim().split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(1, format!("malformed metadata field {field:?}")))?;
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| err(1, format!("bad {key} value {v:?}")));
        match key {
            "M" => m = Some(parse_usize(value)?),
            "N" => n = Some(parse_usize(value)?),
            "name" => name = Some(value.to_string()),
            "seed" if value.is_empty() => seed = Some(None),
            "seed" => {
                seed = Some(Some(
                    value.parse::<u64>().map_err(|_| err(1, format!("bad seed {value:?}")))?,
                ))
            }
            "rng" => {}
            _ => return Err(err(1, format!("unknown metadata key {key:?}"))),
        }
    }
    let (m, n) = match (m, n) {
        (Some(m), Some(n)) => (m, n),
        _ => return Err(err(1, "metadata must define M and N".into())),
    };

    let columns = lines.next().ok_or_else(|| err(2, "missing column header".into()))?;
    if columns.split(',').count() != m + 1 {
        return Err(err(2, format!("expected {} columns in header, found {}", m + 1, columns.split(',').count())));
    }

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != m + 1 {
            return Err(err(lineno, format!("expected {} columns, found {}", m + 1, cells.len())));
        }
        let x = cells[..m]
            .iter()
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad number {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = cells[m]
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|l| (1..=n).contains(l))
            .ok_or_else(|| err(lineno, format!("label {:?} not in 1..={n}", cells[m])))?;
        inputs.push(x);
        labels.push(label);
    }
    Ok(Dataset::new(name.unwrap_or_default(), m, n, inputs, &labels)?.with_seed(seed.flatten()))
}
