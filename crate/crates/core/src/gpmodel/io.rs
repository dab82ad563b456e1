//! Observation CSV: header `x1,...,xp,y,censored,fidelity`, with censored in
//! {0,1} and fidelity in {computer,physical}.

use std::io::{Read, Write};

use super::{Fidelity, Observation};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

pub fn read_observations<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let p = cols.len().checked_sub(3).filter(|p| *p > 0).ok_or_else(|| {
        Error::Csv(format!("expected x1..xp,y,censored,fidelity, got {} columns", cols.len()))
    })?;
    for (j, name) in cols[..p].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(Error::Csv(format!("column {} should be x{}, found {name}", j + 1, j + 1)));
        }
    }
    if cols[p..] != ["y", "censored", "fidelity"] {
        return Err(Error::Csv(format!("trailing columns must be y,censored,fidelity, found {}", cols[p..].join(","))));
    }

    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = line + 2;
        let num = |j: usize| -> Result<f64> {
            let s = &rec[j];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv(format!("row {row}, column {}: '{s}' is not a finite number", j + 1)))
        };
        let x = (0..p).map(num).collect::<Result<Vec<_>>>()?;
        let value = num(p)?;
        let censored = match &rec[p + 1] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Csv(format!("row {row}: censored must be 0 or 1, found '{other}'"))),
        };
        let fidelity = match rec[p + 2].to_ascii_lowercase().as_str() {
            "computer" => Fidelity::Computer,
            "physical" => Fidelity::Physical,
            other => {
                return Err(Error::Csv(format!(
                    "row {row}: fidelity must be computer or physical, found '{other}'"
                )))
            }
        };
        out.push(Observation {
            x,
            value,
            censored,
            fidelity,
        });
    }
    Ok(out)
}

pub fn write_observations<W: Write>(writer: W, data: &[Observation]) -> Result<()> {
    let p = data.first().map_or(1, |o| o.x.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.extend(["y", "censored", "fidelity"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for o in data {
        let mut rec: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
        rec.push(o.value.to_string());
        rec.push(if o.censored { "1" } else { "0" }.into());
        rec.push(
            match o.fidelity {
                Fidelity::Computer => "computer",
                Fidelity::Physical => "physical",
            }
            .into(),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
