use std::path::Path;

use super::{DomainDataset, Sample};
use crate::error::{DaalError, Result};

/// Write `domain,label,f0,...,f{d-1}` rows. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_csv(ds: &DomainDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..ds.input_dim).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut row = Vec::with_capacity(ds.input_dim + 2);
    for s in &ds.samples {
        row.clear();
        row.push(s.e.to_string());
        row.push(s.y.to_string());
        row.extend(s.x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DaalError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<DomainDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 3 || &header[0] != "domain" || &header[1] != "label" {
        return Err(DaalError::format(path, "header must start with domain,label,f0"));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(DaalError::format(path, format!("unexpected column {name}")));
        }
    }
    let dim = header.len() - 2;
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| DaalError::format(path, format!("row {}: bad {what}", line + 1));
        let e: usize = rec[0].trim().parse().map_err(|_| bad("domain"))?;
        let y: usize = rec[1].trim().parse().map_err(|_| bad("label"))?;
        let x = rec
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("feature"))?;
        if x.len() != dim {
            return Err(bad("column count"));
        }
        samples.push(Sample { id: 0, x, y, e });
    }
    DomainDataset::new(samples, Vec::new())
}

fn csv_err(path: &Path, e: csv::Error) -> DaalError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => DaalError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        DaalError::format(path, e.to_string())
    }
}
