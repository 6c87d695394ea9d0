//! Byte-stable LUT serialization.
//!
//! CSV layout: one `#` metadata line, a column header, then one row per
//! segment. Coefficient columns are named `c<i>_raw` / `c<i>_real` where
//! `i` is the power of the in-segment offset. Reals use Rust's shortest
//! round-trip formatting, so parsing recovers every bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exp_kernels::{Degree, Domain, LutTable, SegmentCoeffs};
use crate::fixed_point::{FixedFormat, FixedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LutExportFormat {
    Csv,
    Json,
}

impl LutExportFormat {
    /// Picks JSON for a `.json` path and CSV otherwise.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => LutExportFormat::Json,
            _ => LutExportFormat::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    segment: usize,
    lo: f64,
    hi: f64,
    coeff_raw: Vec<i32>,
    coeff_real: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    segments: u32,
    degree: Degree,
    domain_lo: f64,
    domain_hi: f64,
    format: FixedFormat,
    shift_amount: u32,
    bias: i64,
    rows: Vec<JsonRow>,
}

fn column_names(degree: Degree) -> Vec<String> {
    let powers: Vec<usize> = (0..degree.coeff_count()).rev().collect();
    let mut cols = vec!["segment".to_string(), "lo".into(), "hi".into()];
    cols.extend(powers.iter().map(|i| format!("c{i}_raw")));
    cols.extend(powers.iter().map(|i| format!("c{i}_real")));
    cols
}

pub fn export_lut(table: &LutTable, format: LutExportFormat) -> Vec<u8> {
    match format {
        LutExportFormat::Csv => export_csv(table).into_bytes(),
        LutExportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&to_json(table)).expect("table serializes");
            out.push(b'\n');
            out
        }
    }
}

fn to_json(table: &LutTable) -> JsonTable {
    JsonTable {
        segments: table.segments(),
        degree: table.degree(),
        domain_lo: table.domain().lo,
        domain_hi: table.domain().hi,
        format: table.format(),
        shift_amount: table.shift_amount(),
        bias: table.index_map().bias,
        rows: table
            .coeffs()
            .iter()
            .enumerate()
            .map(|(p, c)| {
                let (lo, hi) = table.segment_bounds(p);
                JsonRow {
                    segment: p,
                    lo,
                    hi,
                    coeff_raw: c.quantized.iter().map(|v| v.raw()).collect(),
                    coeff_real: c.real.clone(),
                }
            })
            .collect(),
    }
}

fn export_csv(table: &LutTable) -> String {
    let mut out = format!(
        "# segments={},degree={},domain_lo={},domain_hi={},format={},shift_amount={},bias={}\n",
        table.segments(),
        table.degree(),
        table.domain().lo,
        table.domain().hi,
        table.format(),
        table.shift_amount(),
        table.index_map().bias,
    );
    out.push_str(&column_names(table.degree()).join(","));
    out.push('\n');
    for (p, c) in table.coeffs().iter().enumerate() {
        let (lo, hi) = table.segment_bounds(p);
        let mut fields = vec![p.to_string(), lo.to_string(), hi.to_string()];
        fields.extend(c.quantized.iter().map(|v| v.raw().to_string()));
        fields.extend(c.real.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: "<lut>".into(),
        line,
        message: message.into(),
    }
}

pub fn parse_lut(bytes: &[u8], format: LutExportFormat) -> Result<LutTable> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(0, e.to_string()))?;
    match format {
        LutExportFormat::Csv => parse_csv(text),
        LutExportFormat::Json => {
            let t: JsonTable = serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
            let coeffs = t
                .rows
                .into_iter()
                .map(|r| SegmentCoeffs {
                    real: r.coeff_real,
                    quantized: r.coeff_raw.into_iter().map(|raw| FixedValue::from_raw(raw as i64, t.format)).collect(),
                })
                .collect();
            let table = LutTable::from_parts(Domain::new(t.domain_lo, t.domain_hi)?, t.degree, t.format, coeffs)?;
            check_header(&table, t.segments, t.shift_amount, t.bias, 1)?;
            Ok(table)
        }
    }
}

fn check_header(table: &LutTable, segments: u32, shift: u32, bias: i64, line: usize) -> Result<()> {
    if table.segments() != segments || table.shift_amount() != shift || table.index_map().bias != bias {
        return Err(parse_err(line, "header disagrees with the table rows"));
    }
    Ok(())
}

fn parse_csv(text: &str) -> Result<LutTable> {
    let mut lines = text.lines().enumerate();
    let (_, meta) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let meta = meta.strip_prefix("# ").ok_or_else(|| parse_err(1, "missing metadata line"))?;
    let field = |key: &str| -> Result<&str> {
        meta.split(',')
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| parse_err(1, format!("missing `{key}`")))
    };
    let num = |key: &str| -> Result<f64> { field(key)?.parse().map_err(|_| parse_err(1, format!("bad `{key}`"))) };
    let segments: u32 = field("segments")?.parse().map_err(|_| parse_err(1, "bad `segments`"))?;
    let degree: Degree = field("degree")?.parse()?;
    let domain = Domain::new(num("domain_lo")?, num("domain_hi")?)?;
    let format: FixedFormat = field("format")?.parse()?;
    let shift: u32 = field("shift_amount")?.parse().map_err(|_| parse_err(1, "bad `shift_amount`"))?;
    let bias: i64 = field("bias")?.parse().map_err(|_| parse_err(1, "bad `bias`"))?;

    let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing column header"))?;
    if header != column_names(degree).join(",") {
        return Err(parse_err(2, "unexpected column header"));
    }
    let n = degree.coeff_count();
    let mut coeffs = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 + 2 * n {
            return Err(parse_err(lineno, format!("expected {} columns", 3 + 2 * n)));
        }
        if cols[0] != coeffs.len().to_string() {
            return Err(parse_err(lineno, "segments out of order"));
        }
        let quantized = cols[3..3 + n]
            .iter()
            .map(|s| s.parse::<i64>().map(|r| FixedValue::from_raw(r, format)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        let real = cols[3 + n..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        coeffs.push(SegmentCoeffs { real, quantized });
    }
    let table = LutTable::from_parts(domain, degree, format, coeffs)?;
    check_header(&table, segments, shift, bias, 1)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exp_kernels::{build_lut, ExpKernelSpec, KernelKind};

    fn table(degree: Degree, p: u32) -> LutTable {
        let fmt = FixedFormat::new(18, 15).unwrap();
        build_lut(ExpKernelSpec::new(KernelKind::Lut { degree, segments: p }, fmt).unwrap(), Domain::UNIT).unwrap()
    }

    #[test]
    fn csv_has_header_and_one_row_per_segment() {
        let text = String::from_utf8(export_lut(&table(Degree::Linear, 8), LutExportFormat::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(
            lines[0],
            "# segments=8,degree=linear,domain_lo=-1,domain_hi=1,format=q18.15,shift_amount=13,bias=32768"
        );
        assert_eq!(lines[1], "segment,lo,hi,c1_raw,c0_raw,c1_real,c0_real");
        assert!(lines[2].starts_with("0,-1,-0.75,"));
    }

    #[test]
    fn round_trips_bit_exactly() {
        for degree in [Degree::Linear, Degree::Quadratic] {
            for p in [8, 64] {
                let t = table(degree, p);
                for f in [LutExportFormat::Csv, LutExportFormat::Json] {
                    let bytes = export_lut(&t, f);
                    assert_eq!(parse_lut(&bytes, f).unwrap(), t);
                    assert_eq!(export_lut(&t, f), bytes);
                }
            }
        }
    }

    #[test]
    fn rejects_tampered_files() {
        let text = String::from_utf8(export_lut(&table(Degree::Linear, 8), LutExportFormat::Csv)).unwrap();
        let short: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(parse_lut(short.as_bytes(), LutExportFormat::Csv).is_err());
        let bad = text.replace("shift_amount=13", "shift_amount=12");
        assert!(parse_lut(bad.as_bytes(), LutExportFormat::Csv).is_err());
        let bad = text.replacen("0,-1,-0.75,", "0,-1,-0.75,x", 1);
        match parse_lut(bad.as_bytes(), LutExportFormat::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
