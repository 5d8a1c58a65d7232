//! Result file writer.

use std::io::{self, Write};

use super::MeasurementRecord;
use crate::clock::ClockKind;

/// Formats `x` like C's `%g`: six significant digits, trailing zeros
/// removed, exponent form outside `[1e-4, 1e6)`.
pub fn format_g(x: f64) -> String {
    const P: i32 = 6;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..P).contains(&exp) {
        let decimals = (P - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn format_unit(unit: f64) -> String {
    if unit.fract() == 0.0 && unit.abs() < 1e18 {
        format!("{}", unit as i64)
    } else {
        format_g(unit)
    }
}

/// Header fields of a result file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultHeader {
    pub npes: usize,
    pub unit: f64,
    pub clock: ClockKind,
}

/// Writes a complete result file. Consecutive records from the same script
/// block share one `begin result` section.
pub fn write_results(
    header: &ResultHeader,
    records: &[MeasurementRecord],
    sink: &mut dyn Write,
) -> io::Result<()> {
    writeln!(sink, "# ska-shmem result file, version 1")?;
    writeln!(
        sink,
        "# npes={} unit={} clock={}",
        header.npes,
        format_unit(header.unit),
        header.clock
    )?;
    let mut open: Option<u64> = None;
    for rec in records {
        if open != Some(rec.block) {
            if open.is_some() {
                writeln!(sink, "end result")?;
            }
            writeln!(sink, "begin result \"{}\"", rec.title)?;
            open = Some(rec.block);
        }
        writeln!(sink, "{}", rec.line())?;
    }
    if open.is_some() {
        writeln!(sink, "end result")?;
    }
    Ok(())
}

/// Renders a result file into a string.
pub fn render_results(header: &ResultHeader, records: &[MeasurementRecord]) -> String {
    let mut out = Vec::new();
    write_results(header, records, &mut out).expect("writing to memory");
    String::from_utf8(out).expect("result file is UTF-8")
}
