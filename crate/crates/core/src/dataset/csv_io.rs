use std::io::{Read, Write};

use super::{DatasetError, SubjectRecord};

const FIXED: [&str; 7] = ["id", "y_t", "delta_t", "y_s", "delta_s", "a", "x"];

/// Reads records in the `id,y_t,delta_t,y_s,delta_s,a,x,c_1,...,c_k` layout.
/// Lines starting with `#` are skipped. Every malformed line is reported with
/// its line number; missing values reject the whole record.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<SubjectRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| DatasetError::Malformed(vec![e.to_string()]))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < FIXED.len() || names[..FIXED.len()] != FIXED {
        return Err(DatasetError::Malformed(vec![format!(
            "header must start with {} (got {})",
            FIXED.join(","),
            names.join(",")
        )]));
    }
    for (j, name) in names[FIXED.len()..].iter().enumerate() {
        if *name != format!("c_{}", j + 1) {
            return Err(DatasetError::Malformed(vec![format!("expected column c_{} but found '{name}'", j + 1)]));
        }
    }
    let k = names.len() - FIXED.len();

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for result in rdr.records() {
        let row = match result {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, k) {
            Ok(r) => records.push(r),
            Err(msg) => errors.push(format!("line {line}: {msg}")),
        }
    }
    if !errors.is_empty() {
        return Err(DatasetError::Malformed(errors));
    }
    Ok(records)
}

fn parse_row(row: &csv::StringRecord, k: usize) -> Result<SubjectRecord, String> {
    if let Some(j) = row.iter().position(|f| f.is_empty() || f.eq_ignore_ascii_case("na")) {
        return Err(format!("missing value in column {}", j + 1));
    }
    let real = |j: usize, name: &str| -> Result<f64, String> {
        row[j].parse::<f64>().map_err(|_| format!("{name}: cannot parse '{}' as a number", &row[j]))
    };
    let flag = |j: usize, name: &str| -> Result<u8, String> {
        row[j].parse::<u8>().map_err(|_| format!("{name}: cannot parse '{}' as 0/1", &row[j]))
    };
    let x = row[6].parse::<i64>().map_err(|_| format!("x: cannot parse '{}' as an integer level", &row[6]))?;
    let c = (0..k).map(|j| real(FIXED.len() + j, &format!("c_{}", j + 1))).collect::<Result<Vec<_>, _>>()?;
    Ok(SubjectRecord {
        id: row[0].to_string(),
        y_t: real(1, "y_t")?,
        delta_t: flag(2, "delta_t")?,
        y_s: real(3, "y_s")?,
        delta_s: flag(4, "delta_s")?,
        a: flag(5, "a")?,
        x,
        c,
    })
}

/// Writes records with a header; values use the shortest round-trip decimal form.
pub fn write_records<W: Write>(writer: W, records: &[SubjectRecord]) -> Result<(), DatasetError> {
    let k = records.first().map_or(0, |r| r.c.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((1..=k).map(|j| format!("c_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut fields = vec![
            r.id.clone(),
            r.y_t.to_string(),
            r.delta_t.to_string(),
            r.y_s.to_string(),
            r.delta_s.to_string(),
            r.a.to_string(),
            r.x.to_string(),
        ];
        fields.extend(r.c.iter().map(|v| v.to_string()));
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DatasetError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        other => DatasetError::Malformed(vec![format!("{other:?}")]),
    }
}
