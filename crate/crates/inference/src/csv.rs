//! Minimal CSV emission shared by every report writer.
//!
//! Floats are written with Rust's shortest round-trip formatting so output is
//! byte-stable across runs and platforms.

use std::io::{self, Write};

pub fn write_header<W: Write>(w: &mut W, cols: &[String]) -> io::Result<()> {
    writeln!(w, "{}", cols.join(","))
}

pub fn write_row<W: Write>(w: &mut W, fields: &[String]) -> io::Result<()> {
    writeln!(w, "{}", fields.join(","))
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_owned()
    } else if v == f64::INFINITY {
        "inf".to_owned()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_owned()
    } else {
        format!("{v}")
    }
}

pub fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}
