//! Price grids, CSV ingestion and sector maps.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assets with more than this fraction of missing rows are dropped.
pub const MAX_MISSING_FRACTION: f64 = 0.05;

/// Positive price grid, `T_total × N`, row-major by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceMatrix {
    values: Vec<f64>,
    asset_ids: Vec<String>,
    dates: Vec<NaiveDate>,
}

impl PriceMatrix {
    pub fn new(values: Vec<f64>, asset_ids: Vec<String>, dates: Vec<NaiveDate>) -> Result<Self> {
        let (t, n) = (dates.len(), asset_ids.len());
        if values.len() != t * n {
            return Err(Error::Shape(format!(
                "price grid needs {t}x{n} values, got {}",
                values.len()
            )));
        }
        if let Some(w) = dates.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("dates not strictly increasing at row {}", w + 1)));
        }
        if let Some(k) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "non-positive price {} at t={}, asset {}",
                values[k],
                k / n,
                asset_ids[k % n]
            )));
        }
        Ok(Self {
            values,
            asset_ids,
            dates,
        })
    }

    /// Grid with synthetic consecutive calendar dates starting 2000-01-03.
    pub fn with_default_dates(values: Vec<f64>, asset_ids: Vec<String>) -> Result<Self> {
        let n = asset_ids.len().max(1);
        let t = values.len() / n;
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        let dates = (0..t)
            .map(|k| start + chrono::Days::new(k as u64))
            .collect();
        Self::new(values, asset_ids, dates)
    }

    pub fn n_times(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.asset_ids.len() + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_times()).map(|t| self.get(t, i)).collect()
    }

    /// Rows `start .. start + len`.
    pub fn rows(&self, start: usize, len: usize) -> Result<PriceMatrix> {
        if start + len > self.n_times() {
            return Err(Error::Shape(format!(
                "rows {start}..{} out of range 0..{}",
                start + len,
                self.n_times()
            )));
        }
        let n = self.n_assets();
        Ok(PriceMatrix {
            values: self.values[start * n..(start + len) * n].to_vec(),
            asset_ids: self.asset_ids.clone(),
            dates: self.dates[start..start + len].to_vec(),
        })
    }

    /// Multiplies asset `i`'s entire series by `factor > 0`.
    pub fn scale_asset(&mut self, i: usize, factor: f64) {
        assert!(factor > 0.0);
        let n = self.n_assets();
        for t in 0..self.n_times() {
            self.values[t * n + i] *= factor;
        }
    }

    /// Reorders assets: new asset `k` is old asset `perm[k]`.
    pub fn permute_assets(&self, perm: &[usize]) -> PriceMatrix {
        let n = self.n_assets();
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.n_times() {
            values.extend(perm.iter().map(|&p| self.values[t * n + p]));
        }
        PriceMatrix {
            values,
            asset_ids: perm.iter().map(|&p| self.asset_ids[p].clone()).collect(),
            dates: self.dates.clone(),
        }
    }
}

/// Result of ingesting a price file.
#[derive(Debug, Clone)]
pub struct LoadedPrices {
    pub prices: PriceMatrix,
    /// Dropped assets with their missing-row fraction.
    pub dropped: Vec<(String, f64)>,
}

pub fn load_prices(path: &Path) -> Result<LoadedPrices> {
    let f = std::fs::File::open(path)?;
    read_prices(f)
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "n/a"
    )
}

/// Parses `date,ASSET1,ASSET2,...` CSV. Row numbers in errors are 1-based
/// file lines (the header is line 1).
pub fn read_prices<R: Read>(reader: R) -> Result<LoadedPrices> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            msg: "expected a date column and at least one asset column".into(),
        });
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = assets.len();
    let mut dates = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", n + 1, rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            msg: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(Error::Parse {
                    row,
                    msg: format!("date {date} not after {prev}"),
                });
            }
        }
        dates.push(date);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if is_missing(cell) {
                cells.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("asset {}: `{cell}` is not a number", assets[j]),
            })?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parse {
                    row,
                    msg: format!("asset {}: price {cell} must be positive", assets[j]),
                });
            }
            cells.push(Some(v));
        }
    }
    let t = dates.len();
    if t == 0 {
        return Err(Error::Data("price file has no rows".into()));
    }

    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, id) in assets.iter().enumerate() {
        let missing = (0..t).filter(|&r| cells[r * n + j].is_none()).count();
        let frac = missing as f64 / t as f64;
        if frac > MAX_MISSING_FRACTION || missing == t {
            warn!("dropping asset {id}: {:.1}% of rows missing", 100.0 * frac);
            dropped.push((id.clone(), frac));
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("no assets left after cleaning".into()));
    }

    let m = keep.len();
    let mut values = vec![0.0; t * m];
    for (k, &j) in keep.iter().enumerate() {
        let first = (0..t).find_map(|r| cells[r * n + j]).expect("asset has data");
        // forward fill; a leading gap takes the first observed price
        let mut last = first;
        for r in 0..t {
            if let Some(v) = cells[r * n + j] {
                last = v;
            }
            values[r * m + k] = last;
        }
    }
    let ids = keep.iter().map(|&j| assets[j].clone()).collect();
    Ok(LoadedPrices {
        prices: PriceMatrix::new(values, ids, dates)?,
        dropped,
    })
}

/// Writes prices in the same CSV layout [`read_prices`] accepts.
pub fn write_prices(prices: &PriceMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(prices.asset_ids().iter().cloned());
    w.write_record(&header)?;
    for t in 0..prices.n_times() {
        let mut rec = vec![prices.dates()[t].format("%Y-%m-%d").to_string()];
        rec.extend((0..prices.n_assets()).map(|i| format!("{}", prices.get(t, i))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Asset → sector code.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SectorMap {
    map: HashMap<String, String>,
}

impl SectorMap {
    pub fn new(map: HashMap<String, String>) -> Self {
        Self { map }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut map = HashMap::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse {
                    row: k + 2,
                    msg: "expected `asset,sector_code`".into(),
                });
            }
            map.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
        }
        Ok(Self { map })
    }

    /// Sector codes aligned to `assets`; the map must cover every asset.
    pub fn codes_for(&self, assets: &[String]) -> Result<Vec<String>> {
        assets
            .iter()
            .map(|a| {
                self.map
                    .get(a)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("sector map has no entry for {a}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LoadedPrices> {
        read_prices(s.as_bytes())
    }

    #[test]
    fn well_formed_three_assets_ten_days() {
        let mut s = String::from("date,A,B,C\n");
        for d in 1..=10 {
            s.push_str(&format!("2024-01-{d:02},{},{},{}\n", 100 + d, 50.5, 10.0 * d as f64));
        }
        let p = parse(&s).unwrap().prices;
        assert_eq!((p.n_times(), p.n_assets()), (10, 3));
        assert_eq!(p.get(9, 2), 100.0);
    }

    #[test]
    fn negative_price_names_the_cell() {
        let s = "date,A,B\n2024-01-01,1,2\n2024-01-02,1,-3\n";
        match parse(s).unwrap_err() {
            Error::Parse { row, msg } => {
                assert_eq!(row, 3);
                assert!(msg.contains("asset B"), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn mostly_missing_asset_is_dropped() {
        let mut s = String::from("date,A,B\n");
        for d in 1..=20 {
            let b = if d % 2 == 0 { String::new() } else { "7".into() };
            s.push_str(&format!("2024-01-{d:02},{d},{b}\n"));
        }
        let loaded = parse(&s).unwrap();
        assert_eq!(loaded.prices.asset_ids(), &["A".to_string()]);
        assert_eq!(loaded.dropped.len(), 1);
        assert!((loaded.dropped[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_gaps_are_forward_filled() {
        let mut s = String::from("date,A\n");
        for d in 1..=25 {
            let a = if d == 10 { "NA".to_string() } else { format!("{d}") };
            s.push_str(&format!("2024-01-{d:02},{a}\n"));
        }
        let p = parse(&s).unwrap().prices;
        assert_eq!(p.get(9, 0), 9.0);
    }

    #[test]
    fn empty_asset_set_is_fatal() {
        let s = "date,A\n2024-01-01,\n2024-01-02,\n";
        assert!(matches!(parse(s).unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn unsorted_dates_rejected() {
        let s = "date,A\n2024-01-02,1\n2024-01-01,1\n";
        assert!(matches!(parse(s).unwrap_err(), Error::Parse { row: 3, .. }));
    }

    #[test]
    fn sector_map_must_be_total() {
        let mut m = HashMap::new();
        m.insert("A".to_string(), "10".to_string());
        let sm = SectorMap::new(m);
        assert!(sm.codes_for(&["A".into()]).is_ok());
        assert!(sm.codes_for(&["A".into(), "B".into()]).is_err());
    }
}
