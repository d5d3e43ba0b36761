//! Table and report serialization with fixed floating-point formatting.

use std::io;

use mpfide::model::Solution;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};

/// Output format for solution tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Every float is written as `{:.16e}` (17 significant digits), so output is
/// byte-stable and round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct FixedFloats(CompactFormatter);

impl Formatter for FixedFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with fixed float formatting and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, FixedFloats(CompactFormatter));
    value.serialize(&mut ser).expect("serializing to memory");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[derive(Serialize)]
struct JsonTable<'a> {
    columns: Vec<String>,
    n: usize,
    points: &'a [f64],
    steps: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

fn columns(n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .collect()
}

/// Solution values at every mesh node, `t, x_1 … x_n`.
pub fn table(sol: &Solution, format: Format) -> String {
    let nodes = sol.nodes();
    let n = nodes.first().map_or(0, |(_, v)| v.dim());
    match format {
        Format::Csv => {
            let mut out = columns(n).join(",");
            out.push('\n');
            for (t, x) in &nodes {
                out.push_str(&fmt_f64(*t));
                for v in x.as_slice() {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
            out
        }
        Format::Json => to_json(&JsonTable {
            columns: columns(n),
            n,
            points: &sol.partition.points,
            steps: sol.partition.meshes.iter().map(|m| m.steps()).collect(),
            rows: nodes
                .iter()
                .map(|(t, x)| std::iter::once(*t).chain(x.as_slice().iter().copied()).collect())
                .collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        assert_eq!(to_json(&vec![1.5, f64::NAN]), "[1.5000000000000000e0,null]\n");
    }

    #[test]
    fn fixed_floats_round_trip() {
        for v in [0.1, -3.25e-300, 1.0 / 3.0, 6.02e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
