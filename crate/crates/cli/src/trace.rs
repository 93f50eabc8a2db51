//! Loss traces as CSV, one row per block update.

use mvkit::mvopt::{LossTrace, TraceRecord};
use std::fmt;
use std::io::{Read, Write};

pub const TRACE_HEADER: [&str; 10] = [
    "update",
    "t",
    "view",
    "pass",
    "F_total",
    "L_temp",
    "L_mvP",
    "L_mvS",
    "step",
    "backtracks",
];

#[derive(Debug)]
pub enum TraceError {
    Csv(csv::Error),
    /// `line` is 1-based and counts the header.
    Row {
        line: u64,
        message: String,
    },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Csv(e) => write!(f, "trace CSV: {e}"),
            Self::Row { line, message } => write!(f, "trace line {line}: {message}"),
        }
    }
}

impl std::error::Error for TraceError {}

impl From<csv::Error> for TraceError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e)
    }
}

pub fn write_trace<W: Write>(trace: &LossTrace, out: W) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.update.to_string(),
            r.t.to_string(),
            r.view.to_string(),
            r.pass.to_string(),
            format!("{:e}", r.f_total),
            format!("{:e}", r.l_temp),
            format!("{:e}", r.l_mv_pose),
            format!("{:e}", r.l_mv_semantic),
            format!("{:e}", r.step),
            r.backtracks.to_string(),
        ])?;
    }
    w.flush().map_err(|e| TraceError::Csv(e.into()))?;
    Ok(())
}

pub fn trace_to_string(trace: &LossTrace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

/// Read a trace back, checking the header, the column count, that update
/// numbers strictly increase and that every loss is a nonnegative number.
pub fn read_trace<R: Read>(input: R) -> Result<LossTrace, TraceError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(TraceError::Row {
            line: 1,
            message: format!("expected header `{}`", TRACE_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let fail = |message: String| TraceError::Row { line, message };
        if row.len() != TRACE_HEADER.len() {
            return Err(fail(format!(
                "expected {} fields, found {}",
                TRACE_HEADER.len(),
                row.len()
            )));
        }
        let int = |i: usize| -> Result<usize, TraceError> {
            row[i].trim().parse().map_err(|_| {
                fail(format!(
                    "{}: `{}` is not a nonnegative integer",
                    TRACE_HEADER[i], &row[i]
                ))
            })
        };
        let num = |i: usize| -> Result<f64, TraceError> {
            match row[i].trim().parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                _ => Err(fail(format!(
                    "{}: `{}` is not a nonnegative number",
                    TRACE_HEADER[i], &row[i]
                ))),
            }
        };
        let rec = TraceRecord {
            update: int(0)?,
            t: int(1)?,
            view: int(2)?,
            pass: int(3)?,
            f_total: num(4)?,
            l_temp: num(5)?,
            l_mv_pose: num(6)?,
            l_mv_semantic: num(7)?,
            step: num(8)?,
            backtracks: int(9)?,
        };
        if let Some(prev) = records.last() {
            let prev: &TraceRecord = prev;
            if rec.update <= prev.update {
                return Err(fail(format!(
                    "update {} does not follow update {}",
                    rec.update, prev.update
                )));
            }
        }
        records.push(rec);
    }
    Ok(LossTrace { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(update: usize, f: f64) -> TraceRecord {
        TraceRecord {
            update,
            t: 1,
            view: 2,
            pass: 0,
            f_total: f,
            l_temp: 0.1,
            l_mv_pose: 1e-300,
            l_mv_semantic: 12345.678,
            step: 0.5,
            backtracks: 3,
        }
    }

    #[test]
    fn header_and_row_layout() {
        let text = trace_to_string(&LossTrace {
            records: vec![rec(0, 2.0)],
        });
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "update,t,view,pass,F_total,L_temp,L_mvP,L_mvS,step,backtracks"
        );
        assert_eq!(lines.next().unwrap(), "0,1,2,0,2e0,1e-1,1e-300,1.2345678e4,5e-1,3");
    }

    #[test]
    fn rejects_bad_files() {
        let good = trace_to_string(&LossTrace {
            records: vec![rec(0, 2.0), rec(1, 1.0)],
        });
        assert!(read_trace(good.as_bytes()).is_ok());
        let cases = [
            good.replacen("F_total", "F", 1),
            good.replacen("1,1,2,0,1e0", "0,1,2,0,1e0", 1),
            good.replacen("1,1,2,0,1e0", "1,1,2,0,-1e0", 1),
            good.replacen("1,1,2,0,1e0", "1,1,2,0,NaN", 1),
            good.replacen(",3\n", ",x\n", 1),
            format!("{good}2,1,2\n"),
        ];
        for (i, bad) in cases.iter().enumerate() {
            assert!(read_trace(bad.as_bytes()).is_err(), "case {i}");
        }
        match read_trace(cases[1].as_bytes()) {
            Err(TraceError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip(fs in prop::collection::vec(0.0f64..1e9, 1..20)) {
            let trace = LossTrace {
                records: fs.iter().enumerate().map(|(i, &f)| rec(i * 3, f)).collect(),
            };
            let back = read_trace(trace_to_string(&trace).as_bytes()).unwrap();
            prop_assert_eq!(back, trace);
        }
    }
}
