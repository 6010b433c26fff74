use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Standardizer, SyntheticConfig, Triplet, TripletDataset};
use crate::error::{Error, Result};

/// Side-car description of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub rows: usize,
    pub features: Vec<String>,
    pub couples_mode: bool,
    pub seed: Option<u64>,
    pub generator: Option<SyntheticConfig>,
    pub scaler: Option<Standardizer>,
}

impl DatasetMetadata {
    pub fn describe(ds: &TripletDataset) -> Self {
        Self {
            rows: ds.len(),
            features: ds.feature_names().to_vec(),
            couples_mode: ds.couples_mode(),
            seed: None,
            generator: None,
            scaler: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

/// Writes `features..., y1, y2` with shortest round-trip float formatting.
pub fn save_csv(ds: &TripletDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_csv<W: Write>(ds: &TripletDataset, w: &mut W) -> Result<()> {
    let header: Vec<&str> = ds
        .feature_names()
        .iter()
        .map(String::as_str)
        .chain(["y1", "y2"])
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for r in ds.rows() {
        for v in &r.x {
            write!(w, "{v},")?;
        }
        writeln!(w, "{},{}", r.y1, r.y2)?;
    }
    Ok(())
}

/// Reads a triplet CSV. A missing `y2` column yields a couples-mode dataset.
pub fn load_csv(path: &Path) -> Result<TripletDataset> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let y1_col = headers
        .iter()
        .position(|h| h == "y1")
        .ok_or_else(|| parse_err(1, "missing required column 'y1'".into()))?;
    let y2_col = headers.iter().position(|h| h == "y2");
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|c| *c != y1_col && Some(*c) != y2_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(parse_err(1, "no feature columns".into()));
    }
    let names = feature_cols.iter().map(|c| headers[*c].to_string()).collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let cell = |c: usize| -> Result<f64> {
            let raw = &record[c];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("column '{}': not a finite number: '{raw}'", &headers[c])))
        };
        let x = feature_cols.iter().map(|c| cell(*c)).collect::<Result<Vec<_>>>()?;
        let y1 = cell(y1_col)?;
        let y2 = match y2_col {
            Some(c) => cell(c)?,
            None => y1,
        };
        rows.push(Triplet { x, y1, y2 });
    }
    TripletDataset::new(names, rows, y2_col.is_none())
}
