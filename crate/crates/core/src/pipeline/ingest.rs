//! File formats and preprocessing.
//!
//! * Event logs: long-form CSV `timestamp,node,outcome[,tag]` with a header.
//! * States: wide-form CSV, one row per time point. The first column is
//!   `t` (an index) or `date` (`YYYY-MM-DD`); the other headers are node ids.
//! * Edge observations: CSV triples `t,node_u,node_v`, one row per present
//!   edge; every other pair is absent.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use ndarray::Array2;

use crate::error::{CltmError, Result};
use crate::model::{pair_index, pairs, TimeSeriesDataset, VariableMode};

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub timestamp: NaiveDateTime,
    pub node: String,
    pub outcome: u8,
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawEventLog {
    pub records: Vec<EventRecord>,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

impl RawEventLog {
    /// Parses a long-form event CSV. Line numbers in errors count the header
    /// as line 1.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let mut records = Vec::new();
        for (k, row) in rdr.records().enumerate() {
            let line = k + 2;
            let row = row.map_err(|e| CltmError::Parse {
                line,
                message: e.to_string(),
            })?;
            let bad = |message: String| CltmError::Parse { line, message };
            if row.len() < 3 || row.len() > 4 {
                return Err(bad(format!("expected 3 or 4 fields, found {}", row.len())));
            }
            let timestamp = parse_timestamp(&row[0]).ok_or_else(|| bad(format!("unparseable timestamp `{}`", &row[0])))?;
            let node = row[1].to_string();
            if node.is_empty() {
                return Err(bad("empty node id".into()));
            }
            let outcome = match &row[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("outcome `{other}` is not 0 or 1"))),
            };
            let tag = row.get(3).filter(|s| !s.is_empty()).map(str::to_string);
            records.push(EventRecord {
                timestamp,
                node,
                outcome,
                tag,
            });
        }
        Ok(RawEventLog { records })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

/// Success and total counts per bin (rows) and node (columns, sorted ids).
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCounts {
    pub bin_starts: Vec<NaiveDate>,
    pub node_ids: Vec<String>,
    pub successes: Array2<u32>,
    pub totals: Array2<u32>,
}

/// Counts events per `(bin, node)` over contiguous bins of `bin_days` days
/// from the first event's date to the last one's.
pub fn aggregate_daily(log: &RawEventLog, bin_days: u32) -> Result<BinnedCounts> {
    if log.records.is_empty() {
        return Err(CltmError::Empty("event log has no records".into()));
    }
    if bin_days == 0 {
        return Err(CltmError::InvalidArgument("bin width must be at least one day".into()));
    }
    let dates = log.records.iter().map(|r| r.timestamp.date());
    let first = dates.clone().min().expect("nonempty");
    let last = dates.max().expect("nonempty");
    let bins = ((last - first).num_days() / i64::from(bin_days)) as usize + 1;
    let node_ids: Vec<String> = log
        .records
        .iter()
        .map(|r| r.node.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let col: BTreeMap<&str, usize> = node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut successes = Array2::zeros((bins, node_ids.len()));
    let mut totals = Array2::zeros((bins, node_ids.len()));
    for r in &log.records {
        let b = ((r.timestamp.date() - first).num_days() / i64::from(bin_days)) as usize;
        let c = col[r.node.as_str()];
        totals[[b, c]] += 1;
        successes[[b, c]] += u32::from(r.outcome);
    }
    let bin_starts = (0..bins)
        .map(|b| first + chrono::Days::new(b as u64 * u64::from(bin_days)))
        .collect();
    Ok(BinnedCounts {
        bin_starts,
        node_ids,
        successes,
        totals,
    })
}

/// `sqrt(successes / totals)`, and 0 when there were no attempts.
pub fn ratio_sqrt_transform(successes: u32, totals: u32) -> Result<f64> {
    if successes > totals {
        return Err(CltmError::InvalidArgument(format!("{successes} successes out of {totals} attempts")));
    }
    if totals == 0 {
        return Ok(0.0);
    }
    Ok((f64::from(successes) / f64::from(totals)).sqrt())
}

impl BinnedCounts {
    pub fn ratio_sqrt(&self) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(self.totals.dim());
        for ((idx, &s), &n) in self.successes.indexed_iter().zip(self.totals.iter()) {
            out[idx] = ratio_sqrt_transform(s, n)?;
        }
        Ok(out)
    }
}

/// 1 where `value >= threshold`, else 0.
pub fn threshold_binary(values: &Array2<f64>, threshold: f64) -> Result<Array2<f64>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CltmError::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(values.mapv(|v| if v >= threshold { 1.0 } else { 0.0 }))
}

/// Columns whose fraction of nonzero entries is at least `min_rate`.
pub fn select_active_nodes(states: &Array2<f64>, min_rate: f64) -> Vec<usize> {
    let t = states.nrows().max(1) as f64;
    (0..states.ncols())
        .filter(|&c| states.column(c).iter().filter(|&&v| v != 0.0).count() as f64 / t >= min_rate)
        .collect()
}

/// Reads a wide-form states CSV.
pub fn read_states_csv<R: Read>(reader: R, mode: VariableMode) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let first = headers.get(0).unwrap_or_default();
    let dated = match first {
        "date" => true,
        "t" => false,
        other => {
            return Err(CltmError::Parse {
                line: 1,
                message: format!("first column must be `t` or `date`, found `{other}`"),
            })
        }
    };
    let node_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if node_ids.is_empty() {
        return Err(CltmError::Parse {
            line: 1,
            message: "no node columns".into(),
        });
    }
    let mut values = Vec::new();
    let mut dates = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| CltmError::Parse {
            line,
            message: e.to_string(),
        })?;
        if dated {
            dates.push(NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| CltmError::Parse {
                line,
                message: format!("date `{}`: {e}", &row[0]),
            })?);
        } else if row[0].parse::<usize>().ok() != Some(k) {
            return Err(CltmError::Parse {
                line,
                message: format!("expected t = {k}, found `{}`", &row[0]),
            });
        }
        for field in row.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|e| CltmError::Parse {
                line,
                message: format!("value `{field}`: {e}"),
            })?);
        }
    }
    let t = values.len() / node_ids.len();
    let states = Array2::from_shape_vec((t, node_ids.len()), values)
        .map_err(|e| CltmError::LengthMismatch(e.to_string()))?;
    let mut ds = TimeSeriesDataset::from_states(node_ids, mode, states)?;
    if dated {
        ds.dates = Some(dates);
    }
    Ok(ds)
}

pub fn write_states_csv<W: Write>(dataset: &TimeSeriesDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let first = if dataset.dates.is_some() { "date" } else { "t" };
    w.write_record(std::iter::once(first).chain(dataset.node_ids.iter().map(String::as_str)))?;
    for t in 0..dataset.len() {
        let key = match &dataset.dates {
            Some(d) => d[t].format("%Y-%m-%d").to_string(),
            None => t.to_string(),
        };
        let values = dataset.states.row(t);
        w.write_record(std::iter::once(key).chain(values.iter().map(|v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads edge triples into a `T × pairs` presence array over `node_ids`.
pub fn read_edge_triples<R: Read>(reader: R, node_ids: &[String], t_len: usize) -> Result<Array2<u8>> {
    let n = node_ids.len();
    let col: BTreeMap<&str, usize> = node_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut w = Array2::zeros((t_len, n * n.saturating_sub(1) / 2));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| CltmError::Parse {
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| CltmError::Parse { line, message };
        if row.len() != 3 {
            return Err(bad(format!("expected t,node_u,node_v, found {} fields", row.len())));
        }
        let t: usize = row[0].parse().map_err(|_| bad(format!("bad time index `{}`", &row[0])))?;
        if t >= t_len {
            return Err(bad(format!("time index {t} beyond the {t_len} time points")));
        }
        let node = |s: &str| col.get(s).copied().ok_or_else(|| bad(format!("unknown node `{s}`")));
        let (u, v) = (node(&row[1])?, node(&row[2])?);
        if u == v {
            return Err(bad(format!("self-loop on `{}`", &row[1])));
        }
        w[[t, pair_index(n, u, v)]] = 1;
    }
    Ok(w)
}

pub fn write_edge_triples<W: Write>(node_ids: &[String], w: &Array2<u8>, out: W) -> Result<()> {
    let n = node_ids.len();
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["t", "node_u", "node_v"])?;
    for t in 0..w.nrows() {
        for (i, j) in pairs(n) {
            if w[[t, pair_index(n, i, j)]] == 1 {
                wr.write_record([t.to_string(), node_ids[i].clone(), node_ids[j].clone()])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(text: &str) -> RawEventLog {
        RawEventLog::from_csv_reader(text.as_bytes()).unwrap()
    }

    #[test]
    fn counts_same_day() {
        let c = aggregate_daily(
            &log("timestamp,node,outcome\n2024-01-01T08:00:00,a,1\n2024-01-01T09:00:00,a,1\n2024-01-01,a,0\n"),
            1,
        )
        .unwrap();
        assert_eq!((c.successes[[0, 0]], c.totals[[0, 0]]), (2, 3));
    }

    #[test]
    fn empty_day_emitted() {
        let c = aggregate_daily(&log("timestamp,node,outcome\n2024-01-01,a,1\n2024-01-03,a,0\n"), 1).unwrap();
        assert_eq!(c.bin_starts.len(), 3);
        assert_eq!((c.successes[[1, 0]], c.totals[[1, 0]]), (0, 0));
    }

    #[test]
    fn interleaved_nodes() {
        let c = aggregate_daily(
            &log("timestamp,node,outcome,tag\n2024-01-01,b,1,x\n2024-01-01,a,0,\n2024-01-01,b,0,y\n"),
            1,
        )
        .unwrap();
        assert_eq!(c.node_ids, vec!["a", "b"]);
        assert_eq!(c.totals.row(0).to_vec(), vec![1, 2]);
        assert_eq!(c.successes.row(0).to_vec(), vec![0, 1]);
    }

    #[test]
    fn parse_error_has_line() {
        let err = RawEventLog::from_csv_reader("timestamp,node,outcome\n2024-01-01,a,1\nnot-a-date,a,1\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, CltmError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn ratio_transform() {
        assert_eq!(ratio_sqrt_transform(9, 16).unwrap(), 0.75);
        assert_eq!(ratio_sqrt_transform(0, 5).unwrap(), 0.0);
        assert_eq!(ratio_sqrt_transform(5, 5).unwrap(), 1.0);
        assert_eq!(ratio_sqrt_transform(0, 0).unwrap(), 0.0);
        assert!(ratio_sqrt_transform(6, 5).is_err());
    }

    #[test]
    fn thresholding() {
        let v = ndarray::array![[0.75, 0.5, 0.0]];
        assert_eq!(threshold_binary(&v, 0.5).unwrap(), ndarray::array![[1.0, 1.0, 0.0]]);
        assert!(threshold_binary(&v, 1.0).is_err());
    }

    #[test]
    fn states_round_trip() {
        let text = "date,a,b\n2024-01-01,1,0\n2024-01-02,0,1\n";
        let ds = read_states_csv(text.as_bytes(), VariableMode::Binary).unwrap();
        assert_eq!(ds.dates.as_ref().unwrap().len(), 2);
        let mut out = Vec::new();
        write_states_csv(&ds, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn edges_round_trip() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let text = "t,node_u,node_v\n0,a,c\n1,b,c\n";
        let w = read_edge_triples(text.as_bytes(), &ids, 2).unwrap();
        assert_eq!(w, ndarray::array![[0, 1, 0], [0, 0, 1]]);
        let mut out = Vec::new();
        write_edge_triples(&ids, &w, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
        assert!(read_edge_triples("t,node_u,node_v\n0,a,z\n".as_bytes(), &ids, 2).is_err());
    }

    #[test]
    fn active_selection() {
        let s = ndarray::array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(select_active_nodes(&s, 0.5), vec![0]);
    }
}
