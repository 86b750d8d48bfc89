//! File-based ingestion of the three cyber-side sensor streams: raw
//! packet captures, flow events, and IDS alert events, plus the
//! per-packet retransmission and RTT annotations derived from the
//! capture.
//!
//! All three inputs are newline-delimited JSON. Timestamps are integer
//! microseconds since the Unix epoch. Loading sorts stably by timestamp,
//! so files with out-of-order lines are accepted; ties keep file order.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// One dissected packet from the capture file. Fields that the dissector
/// could not populate (no IP layer, no TCP layer) stay absent here;
/// imputation happens later in fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPacket {
    pub ts_us: i64,
    pub frame_len: u32,
    pub frame_protocols: String,
    pub eth_src: String,
    pub eth_dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_src: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_dst: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_len: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_flags: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_len: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_flags: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_seq: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp_ack: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dnp3_hex: Option<String>,
}

impl RawPacket {
    /// Decoded DNP3 payload bytes, if the packet carries any.
    pub fn dnp3_bytes(&self) -> Option<Vec<u8>> {
        let hex = self.dnp3_hex.as_deref()?;
        if hex.len() % 2 != 0 {
            return None;
        }
        (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).ok())
            .collect()
    }
}

/// One flow record covering a small time interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub event_start_us: i64,
    pub event_end_us: i64,
    pub flow_id: String,
    pub flow_final: bool,
    pub source_packets: u64,
    pub flow_duration_us: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlertType {
    #[serde(rename = "DNP3")]
    Dnp3,
    #[serde(rename = "ARP_SPOOF")]
    ArpSpoof,
    #[serde(rename = "ICMP_FLOOD")]
    IcmpFlood,
    #[serde(rename = "OTHER")]
    Other,
}

impl AlertType {
    pub fn label(self) -> &'static str {
        match self {
            AlertType::Dnp3 => "DNP3",
            AlertType::ArpSpoof => "ARP_SPOOF",
            AlertType::IcmpFlood => "ICMP_FLOOD",
            AlertType::Other => "OTHER",
        }
    }

    /// Attack-specific alerts dominate generic ones when several land on
    /// one record: DNP3 > ARP_SPOOF > ICMP_FLOOD > OTHER.
    pub fn priority(self) -> u8 {
        match self {
            AlertType::Dnp3 => 3,
            AlertType::ArpSpoof => 2,
            AlertType::IcmpFlood => 1,
            AlertType::Other => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub ts_us: i64,
    pub alert_type: AlertType,
    pub signature_id: u32,
}

/// The 19 cyber/security feature columns of one record, before
/// imputation. `None` means the source never produced the value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CyberRecord {
    pub ts_us: i64,
    pub frame_len: Option<f64>,
    pub frame_protocols: Option<String>,
    pub eth_src: Option<String>,
    pub eth_dst: Option<String>,
    pub ip_src: Option<String>,
    pub ip_dst: Option<String>,
    pub ip_len: Option<f64>,
    pub ip_flags: Option<u8>,
    pub src_port: Option<f64>,
    pub dst_port: Option<f64>,
    pub tcp_len: Option<f64>,
    pub tcp_flags: Option<u8>,
    pub retrans: Option<f64>,
    pub rtt_ms: Option<f64>,
    pub flow_cnt: Option<f64>,
    pub flow_fin_cnt: Option<f64>,
    pub packets: Option<f64>,
    pub snort_alert: Option<f64>,
    pub alert_type: Option<AlertType>,
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IngestError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| IngestError::Parse {
            path: display.clone(),
            line: idx + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Load a capture file. Packets come back sorted by timestamp; a
/// non-monotone file is accepted and stably re-sorted.
pub fn load_capture(path: &Path) -> Result<Vec<RawPacket>, IngestError> {
    let mut packets: Vec<RawPacket> = load_jsonl(path)?;
    packets.sort_by_key(|p| p.ts_us);
    Ok(packets)
}

pub fn load_flow_events(path: &Path) -> Result<Vec<FlowEvent>, IngestError> {
    let mut flows: Vec<FlowEvent> = load_jsonl(path)?;
    flows.sort_by_key(|f| f.event_start_us);
    Ok(flows)
}

pub fn load_alert_events(path: &Path) -> Result<Vec<AlertEvent>, IngestError> {
    let mut alerts: Vec<AlertEvent> = load_jsonl(path)?;
    alerts.sort_by_key(|a| a.ts_us);
    Ok(alerts)
}

/// Copy the first 12 feature columns from a packet. Retransmission, RTT,
/// flow and alert columns stay unpopulated.
pub fn extract_cyber_base(pkt: &RawPacket) -> CyberRecord {
    CyberRecord {
        ts_us: pkt.ts_us,
        frame_len: Some(f64::from(pkt.frame_len)),
        frame_protocols: Some(pkt.frame_protocols.clone()),
        eth_src: Some(pkt.eth_src.clone()),
        eth_dst: Some(pkt.eth_dst.clone()),
        ip_src: pkt.ip_src.clone(),
        ip_dst: pkt.ip_dst.clone(),
        ip_len: pkt.ip_len.map(f64::from),
        ip_flags: pkt.ip_flags,
        src_port: pkt.src_port.map(f64::from),
        dst_port: pkt.dst_port.map(f64::from),
        tcp_len: pkt.tcp_len.map(f64::from),
        tcp_flags: pkt.tcp_flags,
        ..CyberRecord::default()
    }
}

type SegmentKey = (String, String, u16, u16, u32);

fn segment_key(pkt: &RawPacket) -> Option<SegmentKey> {
    Some((
        pkt.ip_src.clone()?,
        pkt.ip_dst.clone()?,
        pkt.src_port?,
        pkt.dst_port?,
        pkt.tcp_seq?,
    ))
}

/// Flag each data segment that repeats the (src, dst, ports, seq) tuple
/// of an earlier data segment.
pub fn annotate_retransmissions(pkts: &[RawPacket]) -> Vec<bool> {
    let mut seen = std::collections::HashSet::new();
    pkts.iter()
        .map(|pkt| {
            if pkt.tcp_len.unwrap_or(0) == 0 {
                return false;
            }
            match segment_key(pkt) {
                Some(key) => !seen.insert(key),
                None => false,
            }
        })
        .collect()
}

/// RTT per packet in milliseconds: for each data segment, the delay until
/// the first later reverse-direction packet whose ack covers it. `None`
/// for non-data packets and never-acknowledged segments.
///
/// Matching is first-ACK; retransmitted segments are not filtered out.
pub fn annotate_rtt(pkts: &[RawPacket]) -> Vec<Option<f64>> {
    pkts.iter()
        .enumerate()
        .map(|(i, pkt)| {
            let len = u64::from(pkt.tcp_len?);
            if len == 0 {
                return None;
            }
            let (src, dst) = (pkt.ip_src.as_deref()?, pkt.ip_dst.as_deref()?);
            let (sp, dp) = (pkt.src_port?, pkt.dst_port?);
            let target = u64::from(pkt.tcp_seq?) + len;
            pkts[i + 1..].iter().find_map(|later| {
                let reverse = later.ip_src.as_deref() == Some(dst)
                    && later.ip_dst.as_deref() == Some(src)
                    && later.src_port == Some(dp)
                    && later.dst_port == Some(sp);
                if reverse && u64::from(later.tcp_ack?) >= target {
                    Some((later.ts_us - pkt.ts_us) as f64 / 1000.0)
                } else {
                    None
                }
            })
        })
        .collect()
}
