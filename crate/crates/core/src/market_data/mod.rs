//! Trade/quote ingestion, trade-sign inference, and aggregation of
//! transactions into interval series under real-time, trade-time, or
//! aggregated-trade-time clocks.

mod csv_io;

pub use csv_io::{
    load_quotes_csv, load_trades_csv, read_schedule_csv, read_series_csv, write_quotes_csv,
    write_schedule_csv, write_series_csv, write_signed_trades_csv, write_trades_csv,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid aggregation scheme: {0}")]
    InvalidScheme(String),
    #[error("invalid session: open {open_us} >= close {close_us}")]
    InvalidSession { open_us: i64, close_us: i64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One market transaction. Timestamps are integer microseconds from a
/// per-day origin; records within a day must be non-decreasing in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub day_id: u32,
    pub timestamp_us: i64,
    pub price: f64,
    pub size: f64,
    /// +1 buyer-initiated, -1 seller-initiated, None unknown.
    pub side: Option<i8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub day_id: u32,
    pub timestamp_us: i64,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteRecord {
    pub fn mid(&self) -> f64 {
        (self.bid + self.ask) / 2.0
    }

    pub fn log_mid(&self) -> f64 {
        self.mid().ln()
    }
}

/// A trade with an inferred initiator sign folded into its volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedTrade {
    pub day_id: u32,
    pub timestamp_us: i64,
    /// Signed shares; never zero.
    pub signed_volume: f64,
    pub price: f64,
}

/// Sampled log mid price, used to open intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidPoint {
    pub day_id: u32,
    pub timestamp_us: i64,
    pub log_mid: f64,
}

/// Extract the log-mid series from a quote tape.
pub fn mid_points(quotes: &[QuoteRecord]) -> Vec<MidPoint> {
    quotes
        .iter()
        .filter(|q| q.bid > 0.0 && q.ask >= q.bid)
        .map(|q| MidPoint {
            day_id: q.day_id,
            timestamp_us: q.timestamp_us,
            log_mid: q.log_mid(),
        })
        .collect()
}

/// Clock used to cut the tape into intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationScheme {
    RealTime { interval_secs: f64 },
    TradeTime,
    AggregatedTradeTime { trades_per_interval: usize },
}

impl AggregationScheme {
    fn validate(&self) -> Result<(), MarketDataError> {
        match self {
            AggregationScheme::RealTime { interval_secs } if !(*interval_secs > 0.0) => {
                Err(MarketDataError::InvalidScheme(format!(
                    "interval length must be > 0, got {interval_secs}"
                )))
            }
            AggregationScheme::AggregatedTradeTime {
                trades_per_interval,
            } if *trades_per_interval < 1 => Err(MarketDataError::InvalidScheme(
                "trades per interval must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Trade-time is aggregated trade time with d = 1.
    fn trades_per_interval(&self) -> Option<usize> {
        match self {
            AggregationScheme::TradeTime => Some(1),
            AggregationScheme::AggregatedTradeTime {
                trades_per_interval,
            } => Some(*trades_per_interval),
            AggregationScheme::RealTime { .. } => None,
        }
    }
}

/// Trading session bounds, microseconds from the per-day origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub open_us: i64,
    pub close_us: i64,
}

impl Session {
    pub fn new(open_us: i64, close_us: i64) -> Result<Self, MarketDataError> {
        if open_us >= close_us {
            return Err(MarketDataError::InvalidSession { open_us, close_us });
        }
        Ok(Session { open_us, close_us })
    }
}

/// One aggregated interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub day_id: u32,
    pub interval_index: u32,
    /// Log mid sampled right before the interval opens.
    pub log_mid_open: f64,
    /// Log return over the interval; never spans a day boundary.
    pub log_return: f64,
    /// Signed volume imbalance, shares.
    pub imbalance: f64,
    /// Imbalance over total absolute volume, in [-1, 1]; zero for empty intervals.
    pub norm_imbalance: f64,
    /// Total absolute volume, shares.
    pub total_volume: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationWarnings {
    /// Days skipped entirely (no trades, or no usable mid prices).
    pub skipped_days: usize,
    /// Trades outside the session or beyond the last complete interval.
    pub dropped_trades: usize,
    /// Interval boundaries priced from a stale or fallback mid.
    pub unpriced_boundaries: usize,
}

/// Interval series produced by [`aggregate`] (or by the simulator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub scheme: AggregationScheme,
    pub rows: Vec<IntervalRow>,
    #[serde(default)]
    pub warnings: AggregationWarnings,
}

impl IntervalSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Ranges of `rows` belonging to each day, in day order.
    pub fn day_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].day_id != self.rows[start].day_id {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn mean_total_volume(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.total_volume).sum::<f64>() / self.rows.len() as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassifyOutcome {
    pub trades: Vec<SignedTrade>,
    /// Trades at the prevailing mid, dropped.
    pub undetermined: usize,
    /// Trades before the first quote of their day, dropped.
    pub no_prevailing_quote: usize,
}

/// Relative tolerance for "trade price equals mid": absorbs the rounding of
/// (bid + ask) / 2 without misclassifying genuine half-tick differences.
const AT_MID_REL_TOL: f64 = 1e-9;

/// Infer trade signs by comparing each trade price with the mid of the
/// prevailing quote (the last quote strictly before the trade; a quote at the
/// same microsecond is not yet prevailing). Trades at the mid, and trades
/// before the first quote of their day, are dropped and counted.
///
/// Both tapes must be sorted by (day_id, timestamp), as the CSV loaders
/// produce them.
pub fn classify_trades(trades: &[TradeRecord], quotes: &[QuoteRecord]) -> ClassifyOutcome {
    let mut out = ClassifyOutcome::default();
    let mut qi = 0usize;
    let mut prevailing: Option<&QuoteRecord> = None;
    let mut current_day: Option<u32> = None;

    for trade in trades {
        if current_day != Some(trade.day_id) {
            current_day = Some(trade.day_id);
            prevailing = None;
            qi = quotes.partition_point(|q| q.day_id < trade.day_id);
        }
        while qi < quotes.len()
            && quotes[qi].day_id == trade.day_id
            && quotes[qi].timestamp_us < trade.timestamp_us
        {
            prevailing = Some(&quotes[qi]);
            qi += 1;
        }
        let Some(q) = prevailing else {
            out.no_prevailing_quote += 1;
            continue;
        };
        let mid = q.mid();
        if (trade.price - mid).abs() <= AT_MID_REL_TOL * mid {
            out.undetermined += 1;
            continue;
        }
        let sign = if trade.price > mid { 1.0 } else { -1.0 };
        out.trades.push(SignedTrade {
            day_id: trade.day_id,
            timestamp_us: trade.timestamp_us,
            signed_volume: sign * trade.size,
            price: trade.price,
        });
    }
    out
}

/// Aggregate signed trades into an interval series under the given clock.
///
/// Real time: boundaries every `interval_secs` from the session open, exactly
/// floor(T / tau) intervals per day; the opening log mid of each interval is
/// the last mid strictly before the boundary (first mid of the day as a
/// flagged fallback). Trade/aggregated-trade time: boundaries fall every d-th
/// transaction and the opening price is sampled right before that transaction.
pub fn aggregate(
    signed: &[SignedTrade],
    mids: &[MidPoint],
    scheme: AggregationScheme,
    session: Session,
) -> Result<IntervalSeries, MarketDataError> {
    scheme.validate()?;
    Session::new(session.open_us, session.close_us)?;
    let mut rows = Vec::new();
    let mut warnings = AggregationWarnings::default();

    let mut day_ids: Vec<u32> = signed.iter().map(|t| t.day_id).collect();
    day_ids.dedup();
    day_ids.sort_unstable();
    day_ids.dedup();

    for day in day_ids {
        let day_trades: Vec<&SignedTrade> = signed.iter().filter(|t| t.day_id == day).collect();
        let day_mids: Vec<&MidPoint> = mids.iter().filter(|m| m.day_id == day).collect();
        if day_trades.is_empty() || day_mids.is_empty() {
            warnings.skipped_days += 1;
            continue;
        }
        match scheme.trades_per_interval() {
            None => {
                let AggregationScheme::RealTime { interval_secs } = scheme else {
                    unreachable!()
                };
                aggregate_real_time_day(
                    day,
                    &day_trades,
                    &day_mids,
                    interval_secs,
                    session,
                    &mut rows,
                    &mut warnings,
                );
            }
            Some(d) => {
                aggregate_trade_time_day(day, &day_trades, &day_mids, d, &mut rows, &mut warnings);
            }
        }
    }
    Ok(IntervalSeries {
        scheme,
        rows,
        warnings,
    })
}

/// Log mid prevailing strictly before `t_us`; falls back to the day's first
/// mid (flagged) when the day has no quote yet.
fn mid_before(day_mids: &[&MidPoint], t_us: i64, warnings: &mut AggregationWarnings) -> f64 {
    match day_mids.partition_point(|m| m.timestamp_us < t_us) {
        0 => {
            warnings.unpriced_boundaries += 1;
            day_mids[0].log_mid
        }
        k => day_mids[k - 1].log_mid,
    }
}

fn aggregate_real_time_day(
    day: u32,
    trades: &[&SignedTrade],
    day_mids: &[&MidPoint],
    interval_secs: f64,
    session: Session,
    rows: &mut Vec<IntervalRow>,
    warnings: &mut AggregationWarnings,
) {
    let tau_us = (interval_secs * 1e6).round() as i64;
    let n_intervals = ((session.close_us - session.open_us) / tau_us) as usize;
    if n_intervals == 0 {
        warnings.skipped_days += 1;
        return;
    }
    let boundary = |n: usize| session.open_us + n as i64 * tau_us;
    let opens: Vec<f64> = (0..=n_intervals)
        .map(|n| mid_before(day_mids, boundary(n), warnings))
        .collect();
    // Boundaries whose prevailing mid is older than the preceding boundary
    // carry a stale price forward; count them.
    for n in 1..=n_intervals {
        let fresh = day_mids.partition_point(|m| m.timestamp_us < boundary(n))
            > day_mids.partition_point(|m| m.timestamp_us < boundary(n - 1));
        if !fresh {
            warnings.unpriced_boundaries += 1;
        }
    }

    let mut ti = 0usize;
    // Trades before the session open are dropped.
    while ti < trades.len() && trades[ti].timestamp_us < boundary(0) {
        ti += 1;
        warnings.dropped_trades += 1;
    }
    for n in 0..n_intervals {
        let end = boundary(n + 1);
        let mut imbalance = 0.0;
        let mut total = 0.0;
        while ti < trades.len() && trades[ti].timestamp_us < end {
            imbalance += trades[ti].signed_volume;
            total += trades[ti].signed_volume.abs();
            ti += 1;
        }
        rows.push(IntervalRow {
            day_id: day,
            interval_index: n as u32,
            log_mid_open: opens[n],
            log_return: opens[n + 1] - opens[n],
            imbalance,
            norm_imbalance: if total > 0.0 { imbalance / total } else { 0.0 },
            total_volume: total,
        });
    }
    warnings.dropped_trades += trades.len() - ti;
}

fn aggregate_trade_time_day(
    day: u32,
    trades: &[&SignedTrade],
    day_mids: &[&MidPoint],
    d: usize,
    rows: &mut Vec<IntervalRow>,
    warnings: &mut AggregationWarnings,
) {
    // Boundary n sits right before trade n*d, so the last usable boundary
    // needs trade index n*d to exist.
    let n_intervals = (trades.len().saturating_sub(1)) / d;
    if n_intervals == 0 {
        warnings.skipped_days += 1;
        warnings.dropped_trades += trades.len();
        return;
    }
    let opens: Vec<f64> = (0..=n_intervals)
        .map(|n| mid_before(day_mids, trades[n * d].timestamp_us, warnings))
        .collect();
    for n in 0..n_intervals {
        let chunk = &trades[n * d..(n + 1) * d];
        let imbalance: f64 = chunk.iter().map(|t| t.signed_volume).sum();
        let total: f64 = chunk.iter().map(|t| t.signed_volume.abs()).sum();
        rows.push(IntervalRow {
            day_id: day,
            interval_index: n as u32,
            log_mid_open: opens[n],
            log_return: opens[n + 1] - opens[n],
            imbalance,
            norm_imbalance: if total > 0.0 { imbalance / total } else { 0.0 },
            total_volume: total,
        });
    }
    warnings.dropped_trades += trades.len() - n_intervals * d;
}
