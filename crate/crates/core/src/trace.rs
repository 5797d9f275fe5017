//! Packet-trace data model: 5-tuple flow keys, the tab-separated packet log
//! format, and aggregation of packets into fixed-length time windows.
//!
//! Flow identity is scoped to a window: the same 5-tuple occurring in two
//! windows is two flows as far as the windowed statistics are concerned.
//! Cross-window flow stitching is deliberately out of scope.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The classic 5-tuple. Addresses are opaque strings so the model is
/// agnostic to IP version or even to being IP at all.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

/// One packet event. Keys are shared `Arc`s so multi-million packet traces
/// do not duplicate the 5-tuple per packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the trace origin; non-negative.
    pub timestamp: f64,
    pub key: Arc<FlowKey>,
}

/// Per-window map from flow to packet count, plus the window total V.
#[derive(Debug, Clone, Default)]
pub struct WindowFlowTable {
    pub window_index: u64,
    pub counts: HashMap<Arc<FlowKey>, u64>,
    pub total_packets: u64,
}

impl WindowFlowTable {
    /// Number of flows with at least `b_min` packets in this window.
    pub fn elephant_count(&self, b_min: u64) -> u64 {
        self.counts.values().filter(|&&v| v >= b_min).count() as u64
    }
}

/// Streaming reader for the tab-separated packet log:
/// `timestamp<TAB>src<TAB>dst<TAB>src_port<TAB>dst_port<TAB>protocol`,
/// `#`-prefixed comment lines allowed anywhere. Leading comments are kept
/// so callers can inspect headers (e.g. the sampling header).
pub struct PacketLogReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    header_comments: Vec<String>,
    interner: HashSet<Arc<FlowKey>>,
    buffered: Option<String>,
}

impl<R: BufRead> PacketLogReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut header_comments = Vec::new();
        let mut line_no = 0;
        let mut buffered = None;
        for line in lines.by_ref() {
            let line = line?;
            line_no += 1;
            if line.starts_with('#') {
                header_comments.push(line);
            } else if line.trim().is_empty() {
                continue;
            } else {
                buffered = Some(line);
                break;
            }
        }
        Ok(Self {
            lines,
            line_no,
            header_comments,
            interner: HashSet::new(),
            buffered,
        })
    }

    /// Comment lines seen before the first record.
    pub fn header_comments(&self) -> &[String] {
        &self.header_comments
    }

    fn parse_line(&mut self, line: &str) -> Result<PacketRecord> {
        let n = self.line_no;
        let err = |reason: &str| Error::Parse {
            line: n,
            reason: reason.to_string(),
        };
        let mut fields = line.split('\t');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| err(&format!("missing field `{name}`")))
        };
        let ts: f64 = next("timestamp")?
            .parse()
            .map_err(|_| err("malformed timestamp"))?;
        let src_addr = next("src_addr")?.to_string();
        let dst_addr = next("dst_addr")?.to_string();
        let src_port: u16 = next("src_port")?
            .parse()
            .map_err(|_| err("malformed src_port"))?;
        let dst_port: u16 = next("dst_port")?
            .parse()
            .map_err(|_| err("malformed dst_port"))?;
        let protocol: u8 = next("protocol")?
            .parse()
            .map_err(|_| err("malformed protocol"))?;
        if fields.next().is_some() {
            return Err(err("trailing fields"));
        }
        if !ts.is_finite() || ts < 0.0 {
            return Err(Error::InvalidInput(format!(
                "line {n}: negative or non-finite timestamp {ts}"
            )));
        }
        let key = FlowKey {
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            protocol,
        };
        let key = match self.interner.get(&key) {
            Some(k) => Arc::clone(k),
            None => {
                let k = Arc::new(key);
                self.interner.insert(Arc::clone(&k));
                k
            }
        };
        Ok(PacketRecord { timestamp: ts, key })
    }
}

impl<R: BufRead> Iterator for PacketLogReader<R> {
    type Item = Result<PacketRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(line) = self.buffered.take() {
            return Some(self.parse_line(&line));
        }
        loop {
            match self.lines.next() {
                None => return None,
                Some(Err(e)) => return Some(Err(e.into())),
                Some(Ok(line)) => {
                    self.line_no += 1;
                    if line.starts_with('#') || line.trim().is_empty() {
                        continue;
                    }
                    return Some(self.parse_line(&line));
                }
            }
        }
    }
}

/// Parse a whole packet log into memory. Records are returned in file order.
pub fn parse_packet_log<R: BufRead>(reader: R) -> Result<Vec<PacketRecord>> {
    PacketLogReader::new(reader)?.collect()
}

/// Serialize one record as a packet-log line (no trailing newline).
pub fn format_packet_line(r: &PacketRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.timestamp, r.key.src_addr, r.key.dst_addr, r.key.src_port, r.key.dst_port, r.key.protocol
    )
}

/// Aggregate packets into half-open windows `[k*delta, (k+1)*delta)` counted
/// from `origin`. Input order is irrelevant; windows with zero packets are
/// emitted so indices stay dense from 0 through the last occupied window.
pub fn window_flows<I>(records: I, delta: f64, origin: f64) -> Result<Vec<WindowFlowTable>>
where
    I: IntoIterator<Item = PacketRecord>,
{
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("window length must be > 0, got {delta}")));
    }
    let mut sparse: BTreeMap<u64, WindowFlowTable> = BTreeMap::new();
    let mut any = false;
    for r in records {
        any = true;
        if r.timestamp < origin {
            return Err(Error::invalid(format!(
                "timestamp {} precedes window origin {origin}",
                r.timestamp
            )));
        }
        let idx = ((r.timestamp - origin) / delta).floor() as u64;
        let table = sparse.entry(idx).or_insert_with(|| WindowFlowTable {
            window_index: idx,
            ..Default::default()
        });
        *table.counts.entry(r.key).or_insert(0) += 1;
        table.total_packets += 1;
    }
    if !any {
        return Ok(Vec::new());
    }
    let last = *sparse.keys().next_back().expect("nonempty");
    let mut dense = Vec::with_capacity(last as usize + 1);
    for idx in 0..=last {
        dense.push(sparse.remove(&idx).unwrap_or(WindowFlowTable {
            window_index: idx,
            ..Default::default()
        }));
    }
    Ok(dense)
}
