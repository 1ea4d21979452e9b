use std::path::Path;

use crate::error::{Error, Result};

/// Close prices read from CSV, one row per date in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub names: Vec<String>,
    pub prices: Vec<Vec<f64>>,
}

/// Read a price CSV whose header lists tickers. A leading `date` column, if
/// present, is skipped.
pub fn read_price_csv(path: impl AsRef<Path>) -> Result<PriceTable> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_prices(csv::Reader::from_reader(file))
}

fn parse_prices<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<PriceTable> {
    let headers = reader.headers()?.clone();
    let skip = usize::from(
        headers
            .get(0)
            .is_some_and(|h| h.trim().eq_ignore_ascii_case("date")),
    );
    let names: Vec<String> = headers.iter().skip(skip).map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(Error::Input("price CSV has no ticker columns".into()));
    }
    let mut prices = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // data rows are numbered from 2 (the header is row 1)
        let row_no = i + 2;
        if record.len() != names.len() + skip {
            return Err(Error::Input(format!(
                "row {row_no}: expected {} columns, found {}",
                names.len() + skip,
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().skip(skip).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Input(format!(
                    "row {row_no}, column `{}`: `{cell}` is not a number",
                    names[j]
                ))
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!(
                    "row {row_no}, column `{}`: price must be positive and finite",
                    names[j]
                )));
            }
            row.push(v);
        }
        prices.push(row);
    }
    Ok(PriceTable { names, prices })
}

/// `log S_t − log S_{t−1}` for consecutive rows.
pub fn log_returns(table: &PriceTable) -> Vec<Vec<f64>> {
    table
        .prices
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b / a).ln()).collect())
        .collect()
}
