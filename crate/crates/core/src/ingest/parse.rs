use std::fmt::Write as _;

use super::record::{GaitRecord, RecordMeta, CHANNEL_COUNT};
use super::IngestError;

const COLUMNS: usize = CHANNEL_COUNT + 1;
const NOMINAL_RATE_HZ: f64 = 100.0;
const MAX_INTERVAL_DEVIATION: f64 = 0.10;

/// Parses whitespace-separated 19-column VGRF text (time + 18 channels).
///
/// Blank lines and `#` comment lines are skipped; LF and CRLF endings are
/// both accepted. Row numbers in errors are 1-based line numbers.
pub fn parse_vgrf(text: &str, meta: RecordMeta) -> Result<GaitRecord, IngestError> {
    let mut timestamps = Vec::new();
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); CHANNEL_COUNT];
    let mut rows = Vec::new();

    for (line_no, line) in text.lines().enumerate() {
        let row = line_no + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != COLUMNS {
            return Err(IngestError::BadColumnCount { row, found: fields.len() });
        }
        let mut values = [0.0f64; COLUMNS];
        for (col, field) in fields.iter().enumerate() {
            values[col] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or(IngestError::NonNumericField { row, col: col + 1 })?;
        }
        if let Some(&prev) = timestamps.last() {
            if values[0] <= prev {
                return Err(IngestError::NonMonotoneTime { row });
            }
        }
        timestamps.push(values[0]);
        for (series, &v) in channels.iter_mut().zip(&values[1..]) {
            series.push(v);
        }
        rows.push(row);
    }

    if timestamps.is_empty() {
        return Err(IngestError::EmptyInput);
    }

    let sample_rate_hz = infer_sample_rate(&timestamps, &rows)?;
    GaitRecord::new(meta, sample_rate_hz, timestamps, channels)
}

fn infer_sample_rate(timestamps: &[f64], rows: &[usize]) -> Result<f64, IngestError> {
    if timestamps.len() < 2 {
        return Ok(NOMINAL_RATE_HZ);
    }
    let deltas: Vec<f64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
    for (i, d) in deltas.iter().enumerate() {
        if (d - median).abs() > MAX_INTERVAL_DEVIATION * median {
            return Err(IngestError::IrregularSampling { row: rows[i + 1] });
        }
    }
    let rate = 1.0 / median;
    // Decimal time columns (0.01, 0.02, ...) leave float noise in 1/Δt.
    let nearest = rate.round();
    if nearest > 0.0 && ((rate - nearest) / nearest).abs() < 1e-6 {
        Ok(nearest)
    } else {
        Ok(rate)
    }
}

/// Canonical 19-column serialization: one row per sample, up to six
/// significant digits per field, single-space separated, LF-terminated.
pub fn to_vgrf_text(record: &GaitRecord) -> String {
    let mut out = String::with_capacity(record.len() * COLUMNS * 8);
    for i in 0..record.len() {
        out.push_str(&format_sig6(record.timestamps()[i]));
        for series in record.channels() {
            out.push(' ');
            out.push_str(&format_sig6(series[i]));
        }
        out.push('\n');
    }
    out
}

fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    let mut s = String::new();
    write!(s, "{rounded}").expect("write to string");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Channel, Cohort};

    fn meta() -> RecordMeta {
        RecordMeta { patient_id: "GaPt03".into(), session_id: "01".into(), cohort: Cohort::PD }
    }

    fn zero_row(t: &str) -> String {
        let mut row = t.to_string();
        for _ in 0..CHANNEL_COUNT {
            row.push_str(" 0");
        }
        row
    }

    #[test]
    fn two_zero_rows_infer_100_hz() {
        let text = format!("{}\n{}\n", zero_row("0.00"), zero_row("0.01"));
        let rec = parse_vgrf(&text, meta()).unwrap();
        assert_eq!(rec.len(), 2);
        assert_eq!(rec.sample_rate_hz(), 100.0);
    }

    #[test]
    fn eighteen_columns_is_rejected_with_row() {
        let mut bad = "0.01".to_string();
        for _ in 0..17 {
            bad.push_str(" 1");
        }
        let text = format!("{}\n{}\n", zero_row("0.00"), bad);
        assert_eq!(parse_vgrf(&text, meta()), Err(IngestError::BadColumnCount { row: 2, found: 18 }));
    }

    #[test]
    fn empty_and_comment_only_input() {
        assert_eq!(parse_vgrf("", meta()), Err(IngestError::EmptyInput));
        assert_eq!(parse_vgrf("# header\n\n", meta()), Err(IngestError::EmptyInput));
    }

    #[test]
    fn non_monotone_time() {
        let text = format!("{}\n{}\n", zero_row("0.01"), zero_row("0.01"));
        assert_eq!(parse_vgrf(&text, meta()), Err(IngestError::NonMonotoneTime { row: 2 }));
    }

    #[test]
    fn non_numeric_field_names_column() {
        let text = format!("{}\n{}\n", zero_row("0.00"), zero_row("0.01").replacen(" 0", " x", 3));
        // replacen touched the first three channel fields; first bad is column 2.
        assert_eq!(parse_vgrf(&text, meta()), Err(IngestError::NonNumericField { row: 2, col: 2 }));
        let text = zero_row("nan");
        assert_eq!(parse_vgrf(&text, meta()), Err(IngestError::NonNumericField { row: 1, col: 1 }));
    }

    #[test]
    fn crlf_and_comments_accepted() {
        let text = format!("# comment\r\n{}\r\n{}\r\n", zero_row("0"), zero_row("0.01"));
        let rec = parse_vgrf(&text, meta()).unwrap();
        assert_eq!(rec.len(), 2);
    }

    #[test]
    fn negative_forces_clamped_and_counted() {
        let row = zero_row("0.00").replacen(" 0", " -3.5", 2);
        let rec = parse_vgrf(&row, meta()).unwrap();
        assert_eq!(rec.clamped_count(), 2);
        assert_eq!(rec.channel(Channel::L1)[0], 0.0);
    }

    #[test]
    fn irregular_sampling_rejected() {
        let text =
            [zero_row("0.00"), zero_row("0.01"), zero_row("0.02"), zero_row("0.05"), zero_row("0.06")].join("\n");
        assert_eq!(parse_vgrf(&text, meta()), Err(IngestError::IrregularSampling { row: 4 }));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.01), "0.01");
        assert_eq!(format_sig6(1234.56), "1234.56");
        assert_eq!(format_sig6(1234.5678), "1234.57");
        assert_eq!(format_sig6(119.99), "119.99");
    }
}
