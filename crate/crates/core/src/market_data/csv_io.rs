//! CSV readers and writers for the external file formats.
//!
//! Trades: `day_id,timestamp_us,price,size[,side]`
//! Quotes: `day_id,timestamp_us,bid,ask`
//! Interval series: `day_id,interval_index,p_open,r,v,v_nor,W`
//! Schedules: `interval,v,x`
//!
//! Header rows are required; files are UTF-8 with a decimal point.

use std::path::Path;

use super::{IntervalRow, IntervalSeries, MarketDataError, QuoteRecord, TradeRecord};

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    row: usize,
) -> Result<T, MarketDataError> {
    let raw = rec.get(idx).ok_or_else(|| MarketDataError::MalformedRow {
        row,
        reason: format!("missing column `{name}`"),
    })?;
    raw.trim()
        .parse()
        .map_err(|_| MarketDataError::MalformedRow {
            row,
            reason: format!("cannot parse `{raw}` as {name}"),
        })
}

fn check_header(
    headers: &csv::StringRecord,
    expected: &[&str],
    optional: &[&str],
) -> Result<(), MarketDataError> {
    let got: Vec<String> = headers
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    if got.len() < expected.len()
        || got.iter().zip(expected).any(|(g, e)| g != e)
        || got.len() > expected.len() + optional.len()
    {
        return Err(MarketDataError::SchemaMismatch(format!(
            "expected header `{}`, got `{}`",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Load a trade tape, sorted by (day_id, timestamp).
pub fn load_trades_csv(path: impl AsRef<Path>) -> Result<Vec<TradeRecord>, MarketDataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    check_header(
        reader.headers().map_err(csv_err)?,
        &["day_id", "timestamp_us", "price", "size"],
        &["side"],
    )?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_err)?;
        let price: f64 = parse_field(&rec, 2, "price", row)?;
        let size: f64 = parse_field(&rec, 3, "size", row)?;
        if !(price > 0.0) || !(size > 0.0) {
            return Err(MarketDataError::MalformedRow {
                row,
                reason: format!("price and size must be > 0 (got {price}, {size})"),
            });
        }
        let side = match rec.get(4).map(str::trim) {
            None | Some("") => None,
            Some(s) => {
                let v: i8 = s.parse().map_err(|_| MarketDataError::MalformedRow {
                    row,
                    reason: format!("cannot parse `{s}` as side"),
                })?;
                if v != 1 && v != -1 {
                    return Err(MarketDataError::MalformedRow {
                        row,
                        reason: format!("side must be 1 or -1, got {v}"),
                    });
                }
                Some(v)
            }
        };
        out.push(TradeRecord {
            day_id: parse_field(&rec, 0, "day_id", row)?,
            timestamp_us: parse_field(&rec, 1, "timestamp_us", row)?,
            price,
            size,
            side,
        });
    }
    out.sort_by_key(|t| (t.day_id, t.timestamp_us));
    Ok(out)
}

/// Load a quote tape, sorted by (day_id, timestamp).
pub fn load_quotes_csv(path: impl AsRef<Path>) -> Result<Vec<QuoteRecord>, MarketDataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    check_header(
        reader.headers().map_err(csv_err)?,
        &["day_id", "timestamp_us", "bid", "ask"],
        &[],
    )?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_err)?;
        let bid: f64 = parse_field(&rec, 2, "bid", row)?;
        let ask: f64 = parse_field(&rec, 3, "ask", row)?;
        if !(bid > 0.0) || !(ask >= bid) {
            return Err(MarketDataError::MalformedRow {
                row,
                reason: format!("need ask >= bid > 0, got bid {bid}, ask {ask}"),
            });
        }
        out.push(QuoteRecord {
            day_id: parse_field(&rec, 0, "day_id", row)?,
            timestamp_us: parse_field(&rec, 1, "timestamp_us", row)?,
            bid,
            ask,
        });
    }
    out.sort_by_key(|q| (q.day_id, q.timestamp_us));
    Ok(out)
}

pub fn write_series_csv(
    series: &IntervalSeries,
    path: impl AsRef<Path>,
) -> Result<(), MarketDataError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(["day_id", "interval_index", "p_open", "r", "v", "v_nor", "W"])
        .map_err(csv_err)?;
    for r in &series.rows {
        w.write_record(&[
            r.day_id.to_string(),
            r.interval_index.to_string(),
            format!("{:.12e}", r.log_mid_open),
            format!("{:.12e}", r.log_return),
            format!("{:.6}", r.imbalance),
            format!("{:.12e}", r.norm_imbalance),
            format!("{:.6}", r.total_volume),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an interval series back; the scheme is not stored in the CSV, so the
/// caller supplies it.
pub fn read_series_csv(
    path: impl AsRef<Path>,
    scheme: super::AggregationScheme,
) -> Result<IntervalSeries, MarketDataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    check_header(
        reader.headers().map_err(csv_err)?,
        &["day_id", "interval_index", "p_open", "r", "v", "v_nor", "w"],
        &[],
    )?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_err)?;
        rows.push(IntervalRow {
            day_id: parse_field(&rec, 0, "day_id", row)?,
            interval_index: parse_field(&rec, 1, "interval_index", row)?,
            log_mid_open: parse_field(&rec, 2, "p_open", row)?,
            log_return: parse_field(&rec, 3, "r", row)?,
            imbalance: parse_field(&rec, 4, "v", row)?,
            norm_imbalance: parse_field(&rec, 5, "v_nor", row)?,
            total_volume: parse_field(&rec, 6, "W", row)?,
        });
    }
    Ok(IntervalSeries {
        scheme,
        rows,
        warnings: Default::default(),
    })
}

/// Write a schedule with participation rates: `interval,v,x`.
pub fn write_schedule_csv(
    volumes: &[f64],
    participation: &[f64],
    path: impl AsRef<Path>,
) -> Result<(), MarketDataError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(["interval", "v", "x"]).map_err(csv_err)?;
    for (i, (v, x)) in volumes.iter().zip(participation).enumerate() {
        w.write_record(&[i.to_string(), format!("{v:.9}"), format!("{x:.9e}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, MarketDataError> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    check_header(
        reader.headers().map_err(csv_err)?,
        &["interval", "v"],
        &["x"],
    )?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        out.push(parse_field(&rec, 1, "v", i + 2)?);
    }
    Ok(out)
}

pub fn write_trades_csv(
    trades: &[TradeRecord],
    path: impl AsRef<Path>,
) -> Result<(), MarketDataError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(["day_id", "timestamp_us", "price", "size", "side"])
        .map_err(csv_err)?;
    for t in trades {
        w.write_record(&[
            t.day_id.to_string(),
            t.timestamp_us.to_string(),
            format!("{:.9}", t.price),
            format!("{:.3}", t.size),
            t.side.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quotes_csv(
    quotes: &[QuoteRecord],
    path: impl AsRef<Path>,
) -> Result<(), MarketDataError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(["day_id", "timestamp_us", "bid", "ask"])
        .map_err(csv_err)?;
    for q in quotes {
        w.write_record(&[
            q.day_id.to_string(),
            q.timestamp_us.to_string(),
            format!("{:.9}", q.bid),
            format!("{:.9}", q.ask),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Write signed trades: `day_id,timestamp_us,signed_volume,price`.
pub fn write_signed_trades_csv(
    trades: &[super::SignedTrade],
    path: impl AsRef<Path>,
) -> Result<(), MarketDataError> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(["day_id", "timestamp_us", "signed_volume", "price"])
        .map_err(csv_err)?;
    for t in trades {
        w.write_record(&[
            t.day_id.to_string(),
            t.timestamp_us.to_string(),
            format!("{:.3}", t.signed_volume),
            format!("{:.9}", t.price),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> MarketDataError {
    MarketDataError::SchemaMismatch(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trades_round_trip_and_sorting() {
        let dir = std::env::temp_dir().join("te_csv_test_trades");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trades.csv");
        std::fs::write(
            &path,
            "day_id,timestamp_us,price,size,side\n1,200,10.5,30,\n0,100,10.0,50,1\n",
        )
        .unwrap();
        let trades = load_trades_csv(&path).unwrap();
        assert_eq!(trades.len(), 2);
        assert_eq!(trades[0].day_id, 0);
        assert_eq!(trades[0].side, Some(1));
        assert_eq!(trades[1].side, None);
    }

    #[test]
    fn malformed_row_is_reported_with_index() {
        let dir = std::env::temp_dir().join("te_csv_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trades.csv");
        std::fs::write(&path, "day_id,timestamp_us,price,size\n0,100,abc,50\n").unwrap();
        let err = load_trades_csv(&path).unwrap_err();
        match err {
            MarketDataError::MalformedRow { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_is_detected() {
        let dir = std::env::temp_dir().join("te_csv_test_schema");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("quotes.csv");
        std::fs::write(&path, "day,ts,b,a\n0,1,9.0,9.1\n").unwrap();
        assert!(matches!(
            load_quotes_csv(&path),
            Err(MarketDataError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn crossed_quote_rejected_at_load() {
        let dir = std::env::temp_dir().join("te_csv_test_crossed");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("quotes.csv");
        std::fs::write(&path, "day_id,timestamp_us,bid,ask\n0,1,10.0,9.0\n").unwrap();
        assert!(load_quotes_csv(&path).is_err());
    }

    #[test]
    fn series_csv_round_trip() {
        let dir = std::env::temp_dir().join("te_csv_test_series");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("series.csv");
        let scheme = super::super::AggregationScheme::RealTime {
            interval_secs: 300.0,
        };
        let series = IntervalSeries {
            scheme,
            rows: vec![
                IntervalRow {
                    day_id: 0,
                    interval_index: 0,
                    log_mid_open: 4.6051701859880914,
                    log_return: 1.25e-4,
                    imbalance: 60.0,
                    norm_imbalance: 60.0 / 140.0,
                    total_volume: 140.0,
                },
                IntervalRow {
                    day_id: 1,
                    interval_index: 0,
                    log_mid_open: 4.6052951859880910,
                    log_return: -3.0e-5,
                    imbalance: -20.0,
                    norm_imbalance: -1.0,
                    total_volume: 20.0,
                },
            ],
            warnings: Default::default(),
        };
        write_series_csv(&series, &path).unwrap();
        let back = read_series_csv(&path, scheme).unwrap();
        assert_eq!(back.rows.len(), 2);
        for (a, b) in series.rows.iter().zip(&back.rows) {
            assert_eq!(a.day_id, b.day_id);
            assert!((a.log_return - b.log_return).abs() < 1e-15);
            assert!((a.norm_imbalance - b.norm_imbalance).abs() < 1e-12);
            assert_eq!(a.total_volume, b.total_volume);
        }
    }

    #[test]
    fn schedule_csv_round_trip() {
        let dir = std::env::temp_dir().join("te_csv_test_sched");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("schedule.csv");
        let volumes = vec![39.25, 0.0, -4.125, 12.5];
        let participation = vec![0.039, 0.0, -0.004, 0.0125];
        write_schedule_csv(&volumes, &participation, &path).unwrap();
        let back = read_schedule_csv(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in volumes.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
