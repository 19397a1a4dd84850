//! Report formatting shared by the CLI artifacts.
//!
//! Every CSV artifact opens with a comment line carrying the config
//! fingerprint and the seed, so any number in any file can be traced back to
//! the exact run that produced it. Floats print with 17 significant digits
//! and round-trip exactly.

use std::io::Write;

use crate::error::Result;

/// Full-precision float formatting; parses back to the identical bits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// FNV-1a 64 over raw bytes; fingerprinting only, not cryptographic.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// The provenance line every CSV artifact starts with.
pub fn provenance_line(config_text: &str, seed: u64) -> String {
    format!("# config_hash=0x{:016x} seed={}", fnv1a(config_text.as_bytes()), seed)
}

/// Rectangular report emitted as CSV and/or Markdown.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &str) -> Result<()> {
        writeln!(w, "{provenance}")?;
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_markdown<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "| {} |", self.columns.join(" | "))?;
        let rule: Vec<&str> = self.columns.iter().map(|_| "---").collect();
        writeln!(w, "| {} |", rule.join(" | "))?;
        for row in &self.rows {
            writeln!(w, "| {} |", row.join(" | "))?;
        }
        Ok(())
    }
}
