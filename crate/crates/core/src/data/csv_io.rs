use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{SiteSeries, SoilAux};
use crate::error::{Error, Result};

/// Exact header of the site time-series CSV.
pub const CSV_HEADER: [&str; 13] = [
    "site_id",
    "x",
    "y",
    "timestamp",
    "sigma_obs_db",
    "incidence_deg",
    "ndvi",
    "albedo",
    "clay",
    "sand",
    "silt",
    "awc",
    "sm_ref",
];

const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<SiteSeries>> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

/// Parses site series from CSV. Rows are grouped by `site_id` in order of
/// first appearance. Row numbers in errors are file line numbers.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SiteSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Schema {
                row: 1,
                message: "empty file, expected header".into(),
            })
        }
    };
    let found: Vec<&str> = header.iter().collect();
    if found != CSV_HEADER {
        return Err(Error::Schema {
            row: 1,
            message: format!("header {:?} does not match {:?}", found, CSV_HEADER),
        });
    }

    let mut sites: Vec<SiteSeries> = Vec::new();
    // File line of every row, per site.
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Schema {
                row: line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let field = |col: usize| rec.get(col).unwrap_or("");
        let num = |col: usize| -> Result<f64> {
            field(col).parse::<f64>().map_err(|_| Error::Schema {
                row: line,
                message: format!(
                    "column `{}`: cannot parse {:?} as a number",
                    CSV_HEADER[col],
                    field(col)
                ),
            })
        };
        let opt_num = |col: usize| -> Result<Option<f64>> {
            if field(col).is_empty() {
                Ok(None)
            } else {
                num(col).map(Some)
            }
        };

        let site_id = field(0).to_string();
        if site_id.is_empty() {
            return Err(Error::Schema {
                row: line,
                message: "column `site_id` is empty".into(),
            });
        }
        let date = NaiveDate::parse_from_str(field(3), DATE_FORMAT).map_err(|_| Error::Schema {
            row: line,
            message: format!("column `timestamp`: {:?} is not an ISO-8601 date", field(3)),
        })?;
        let (x, y) = (num(1)?, num(2)?);
        let soil = SoilAux {
            clay: num(8)?,
            sand: num(9)?,
            silt: num(10)?,
            awc: num(11)?,
        };

        let idx = match sites.iter().position(|s| s.site_id == site_id) {
            Some(idx) => {
                let s = &sites[idx];
                if s.x != x || s.y != y {
                    return Err(violation(line, "x", "site location changes between rows"));
                }
                if s.soil != soil {
                    return Err(violation(line, "clay", "static soil columns change between rows"));
                }
                idx
            }
            None => {
                sites.push(SiteSeries {
                    site_id,
                    x,
                    y,
                    timestamps: Vec::new(),
                    sigma_obs_db: Vec::new(),
                    incidence_deg: Vec::new(),
                    ndvi: Vec::new(),
                    albedo: Vec::new(),
                    soil,
                    sm_ref: Vec::new(),
                });
                lines.push(Vec::new());
                sites.len() - 1
            }
        };
        let s = &mut sites[idx];
        s.timestamps.push(date);
        s.sigma_obs_db.push(num(4)?);
        s.incidence_deg.push(opt_num(5)?);
        s.ndvi.push(num(6)?);
        s.albedo.push(num(7)?);
        s.sm_ref.push(opt_num(12)?);
        lines[idx].push(line);
    }

    for (site, site_lines) in sites.iter().zip(&lines) {
        site.validate().map_err(|e| match e {
            Error::InvariantViolation { row, column, message } => Error::InvariantViolation {
                row: site_lines.get(row).copied().unwrap_or(row),
                column,
                message: format!("site {}: {message}", site.site_id),
            },
            other => other,
        })?;
    }
    Ok(sites)
}

fn violation(row: usize, column: &str, message: &str) -> Error {
    Error::InvariantViolation {
        row,
        column: column.to_string(),
        message: message.to_string(),
    }
}

/// Writes series in the documented schema, one row per acquisition.
pub fn write_csv<W: Write>(writer: W, sites: &[SiteSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in sites {
        for i in 0..s.len() {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                s.site_id.clone(),
                s.x.to_string(),
                s.y.to_string(),
                s.timestamps[i].format(DATE_FORMAT).to_string(),
                s.sigma_obs_db[i].to_string(),
                opt(s.incidence_deg[i]),
                s.ndvi[i].to_string(),
                s.albedo[i].to_string(),
                s.soil.clay.to_string(),
                s.soil.sand.to_string(),
                s.soil.silt.to_string(),
                s.soil.awc.to_string(),
                opt(s.sm_ref[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
