//! The merge engine: fold flow and alert events into the per-packet
//! cyber table, join physical records, then impute, encode, scale and
//! label the result.
//!
//! Flow events contribute to a record when any of three interval
//! conditions holds against the record's timestamp and its successor's;
//! alerts attach to the enclosing record interval. Both merges treat the
//! last record as an open-ended interval so no trailing event is lost.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnp3::PhysicalRecord;
use crate::ingest::{AlertEvent, CyberRecord, FlowEvent};
use crate::scenario::AttackWindow;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("input records are not sorted by timestamp")]
    UnsortedInput,
    #[error("attack-window labeling requires windows")]
    MissingWindows,
    #[error("non-finite value in column {0}")]
    NonFiniteInput(String),
    #[error("label vector length {labels} does not match table length {rows}")]
    LengthMismatch { labels: usize, rows: usize },
}

/// One table cell before imputation.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Absent,
    Num(f64),
    Text(String),
}

impl Cell {
    fn num(v: Option<f64>) -> Cell {
        v.map(Cell::Num).unwrap_or(Cell::Absent)
    }

    fn text(v: Option<String>) -> Cell {
        v.map(Cell::Text).unwrap_or(Cell::Absent)
    }

    fn flags(v: Option<u8>) -> Cell {
        v.map(|f| Cell::Text(format!("{f:#04x}"))).unwrap_or(Cell::Absent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnDef {
    pub name: &'static str,
    pub categorical: bool,
    /// Table default: numeric value or text sentinel.
    pub default_num: f64,
    pub default_text: Option<&'static str>,
}

const fn num_col(name: &'static str, default: f64) -> ColumnDef {
    ColumnDef {
        name,
        categorical: false,
        default_num: default,
        default_text: None,
    }
}

const fn cat_col(name: &'static str, default: &'static str) -> ColumnDef {
    ColumnDef {
        name,
        categorical: true,
        default_num: 0.0,
        default_text: Some(default),
    }
}

/// The 28 fused feature columns, in table order: 19 cyber/security
/// followed by 9 physical.
pub const FUSED_COLUMNS: [ColumnDef; 28] = [
    num_col("Frame Len", 0.0),
    cat_col("Frame Prot.", "Nan"),
    cat_col("Eth Src", "0"),
    cat_col("Eth Dst", "0"),
    cat_col("IP Src", "0"),
    cat_col("IP Dst", "0"),
    num_col("IP Len", 0.0),
    cat_col("IP Flags", "0x00"),
    num_col("Src Port", 0.0),
    num_col("Dest Port", 0.0),
    num_col("TCP Len", 0.0),
    cat_col("TCP Flags", "0x00"),
    num_col("Retrans.", 0.0),
    num_col("RTT", -1.0),
    num_col("Flow Cnt", -1.0),
    num_col("Flow Fin Cnt", -1.0),
    num_col("Packets", -1.0),
    num_col("Snort Alert", 0.0),
    cat_col("Alert Type", "Nan"),
    num_col("LL Src", -1.0),
    num_col("LL Dest", -1.0),
    num_col("LL Len", 0.0),
    cat_col("LL Ctrl", "0x00"),
    cat_col("TL Ctrl", "0x00"),
    num_col("Func. code", -1.0),
    cat_col("AL Ctrl", "0x00"),
    num_col("Obj count", 0.0),
    cat_col("AL Payload", "Nan"),
];

/// Number of cyber/security columns before the physical block.
pub const N_CYBER_COLUMNS: usize = 19;

impl ColumnDef {
    pub fn default_cell(&self) -> Cell {
        match self.default_text {
            Some(text) => Cell::Text(text.to_string()),
            None => Cell::Num(self.default_num),
        }
    }
}

/// Categorical signature of a DNP3 application payload: per-group point
/// counts with values, analogs quantized to coarse buckets. Present but
/// empty payloads (plain READ polls) map to "-".
pub fn payload_signature(rec: &PhysicalRecord) -> String {
    if rec.al_payload.is_empty() {
        return "-".to_string();
    }
    rec.al_payload
        .iter()
        .map(|(group, values)| {
            let vals = values
                .iter()
                .map(|v| {
                    if matches!(group, crate::dnp3::PointGroup::BinaryInput | crate::dnp3::PointGroup::BinaryOutput)
                    {
                        format!("{}", *v as i64)
                    } else {
                        format!("q{}", (v / 10.0).round() as i64)
                    }
                })
                .collect::<Vec<_>>()
                .join(";");
            format!("{}:{}:{}", group.tag(), values.len(), vals)
        })
        .collect::<Vec<_>>()
        .join("|")
}

/// One fused row: the cyber record plus its optional physical side.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRecord {
    pub ts_us: i64,
    pub cyber: CyberRecord,
    pub physical: Option<PhysicalRecord>,
}

/// Fused rows in celled form, columns per [`FUSED_COLUMNS`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTable {
    pub ts_us: Vec<i64>,
    pub cells: Vec<Vec<Cell>>,
}

impl FusedTable {
    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn column_index(name: &str) -> Option<usize> {
        FUSED_COLUMNS.iter().position(|c| c.name == name)
    }
}

fn check_sorted(cb: &[CyberRecord]) -> Result<(), FusionError> {
    if cb.windows(2).any(|w| w[0].ts_us > w[1].ts_us) {
        return Err(FusionError::UnsortedInput);
    }
    Ok(())
}

/// Upper bound of record `i`'s interval; the last record is open-ended.
fn interval_end(cb: &[CyberRecord], i: usize) -> i64 {
    if i + 1 < cb.len() {
        cb[i + 1].ts_us
    } else {
        i64::MAX
    }
}

/// Fold flow counters into the cyber records. A flow event contributes
/// to record `i` when its start falls in the record interval, its end
/// does, or it covers the whole interval.
pub fn merge_flow_features(
    mut cb: Vec<CyberRecord>,
    flows: &[FlowEvent],
) -> Result<Vec<CyberRecord>, FusionError> {
    check_sorted(&cb)?;
    if cb.is_empty() {
        return Ok(cb);
    }
    let n = cb.len();
    let ts: Vec<i64> = cb.iter().map(|r| r.ts_us).collect();
    // first index whose interval can still see `t`: last i with ts[i] <= t
    let upper = |t: i64| ts.partition_point(|&x| x <= t);
    for flow in flows {
        let mut touched = std::collections::BTreeSet::new();
        for bound in [flow.event_start_us, flow.event_end_us] {
            // records with ts[i] <= bound <= interval_end(i)
            let hi = upper(bound); // i < hi have ts[i] <= bound
            let mut i = hi;
            while i > 0 {
                i -= 1;
                if interval_end(&cb, i) >= bound {
                    touched.insert(i);
                } else {
                    break;
                }
            }
        }
        // records fully covered: ts[i] >= start and interval_end(i) <= end
        let lo = ts.partition_point(|&x| x < flow.event_start_us);
        for i in lo..n {
            if ts[i] < flow.event_start_us {
                continue;
            }
            if interval_end(&cb, i) <= flow.event_end_us {
                touched.insert(i);
            } else if ts[i] > flow.event_end_us {
                break;
            }
        }
        for i in touched {
            let rec = &mut cb[i];
            *rec.flow_cnt.get_or_insert(0.0) += 1.0;
            if flow.flow_final {
                *rec.flow_fin_cnt.get_or_insert(0.0) += 1.0;
            }
            rec.flow_fin_cnt.get_or_insert(0.0);
            *rec.packets.get_or_insert(0.0) += flow.source_packets as f64;
        }
    }
    Ok(cb)
}

/// Attach alerts to the record whose interval encloses their timestamp.
/// An alert exactly on a record's timestamp belongs to that record.
/// Attack-specific alert types win over generic ones on collision.
pub fn merge_alerts(
    mut cb: Vec<CyberRecord>,
    alerts: &[AlertEvent],
) -> Result<Vec<CyberRecord>, FusionError> {
    check_sorted(&cb)?;
    if cb.is_empty() {
        return Ok(cb);
    }
    let ts: Vec<i64> = cb.iter().map(|r| r.ts_us).collect();
    for alert in alerts {
        let hi = ts.partition_point(|&x| x <= alert.ts_us);
        if hi == 0 {
            continue; // alert precedes every record
        }
        let i = hi - 1;
        let rec = &mut cb[i];
        rec.snort_alert = Some(1.0);
        let replace = match rec.alert_type {
            None => true,
            Some(existing) => alert.alert_type.priority() > existing.priority(),
        };
        if replace {
            rec.alert_type = Some(alert.alert_type);
        }
    }
    Ok(cb)
}

/// How rows without a physical side are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhysicalMode {
    /// Keep the row; physical columns take their defaults at imputation.
    Impute,
    /// Remove rows that carry no physical-side traffic.
    Drop,
}

/// Join physical records onto the cyber table by exact timestamp.
/// Duplicate timestamps pair up in stable order.
pub fn fuse_physical(
    cb: Vec<CyberRecord>,
    phys: &[(i64, PhysicalRecord)],
    mode: PhysicalMode,
) -> Result<Vec<FusedRecord>, FusionError> {
    check_sorted(&cb)?;
    let mut by_ts: std::collections::HashMap<i64, std::collections::VecDeque<&PhysicalRecord>> =
        std::collections::HashMap::new();
    for (ts, rec) in phys {
        by_ts.entry(*ts).or_default().push_back(rec);
    }
    let mut out = Vec::with_capacity(cb.len());
    for rec in cb {
        let physical = by_ts
            .get_mut(&rec.ts_us)
            .and_then(|queue| queue.pop_front())
            .cloned();
        if physical.is_none() && mode == PhysicalMode::Drop {
            continue;
        }
        out.push(FusedRecord {
            ts_us: rec.ts_us,
            cyber: rec,
            physical,
        });
    }
    Ok(out)
}

/// Spread fused records into the 28-column celled table.
pub fn to_table(records: &[FusedRecord]) -> FusedTable {
    let mut ts_us = Vec::with_capacity(records.len());
    let mut cells = Vec::with_capacity(records.len());
    for rec in records {
        ts_us.push(rec.ts_us);
        let cb = &rec.cyber;
        let mut row = vec![
            Cell::num(cb.frame_len),
            Cell::text(cb.frame_protocols.clone()),
            Cell::text(cb.eth_src.clone()),
            Cell::text(cb.eth_dst.clone()),
            Cell::text(cb.ip_src.clone()),
            Cell::text(cb.ip_dst.clone()),
            Cell::num(cb.ip_len),
            Cell::flags(cb.ip_flags),
            Cell::num(cb.src_port),
            Cell::num(cb.dst_port),
            Cell::num(cb.tcp_len),
            Cell::flags(cb.tcp_flags),
            Cell::num(cb.retrans),
            Cell::num(cb.rtt_ms),
            Cell::num(cb.flow_cnt),
            Cell::num(cb.flow_fin_cnt),
            Cell::num(cb.packets),
            Cell::num(cb.snort_alert),
            Cell::text(cb.alert_type.map(|a| a.label().to_string())),
        ];
        match &rec.physical {
            Some(p) => row.extend([
                Cell::Num(f64::from(p.ll_src)),
                Cell::Num(f64::from(p.ll_dest)),
                Cell::Num(f64::from(p.ll_len)),
                Cell::Text(format!("{:#04x}", p.ll_ctrl)),
                Cell::Text(format!("{:#04x}", p.tl_ctrl)),
                Cell::Num(f64::from(p.function_code)),
                Cell::Text(format!("{:#04x}", p.al_ctrl)),
                Cell::Num(p.obj_count as f64),
                Cell::Text(payload_signature(p)),
            ]),
            None => row.extend(std::iter::repeat(Cell::Absent).take(9)),
        }
        cells.push(row);
    }
    FusedTable { ts_us, cells }
}

/// Replace every absent cell by its column's default. Idempotent; no
/// populated cell is modified.
pub fn impute(mut table: FusedTable) -> FusedTable {
    for row in &mut table.cells {
        for (cell, def) in row.iter_mut().zip(FUSED_COLUMNS.iter()) {
            if *cell == Cell::Absent {
                *cell = def.default_cell();
            }
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    /// Label-encoded categorical; codes follow lexicographic level order.
    Categorical { levels: Vec<String> },
}

/// Numeric, encoded feature data with per-column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub data: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> FeatureMatrix {
        let n_cols = names.len();
        let data = DMatrix::from_fn(rows.len(), n_cols, |i, j| rows[i][j]);
        FeatureMatrix {
            kinds: vec![ColumnKind::Numeric; n_cols],
            names,
            data,
        }
    }

    /// Project onto the named columns, preserving row order.
    pub fn select(&self, names: &[String]) -> Option<FeatureMatrix> {
        let indices: Option<Vec<usize>> = names
            .iter()
            .map(|n| self.names.iter().position(|m| m == n))
            .collect();
        let indices = indices?;
        let data = DMatrix::from_fn(self.n_rows(), indices.len(), |i, j| {
            self.data[(i, indices[j])]
        });
        Some(FeatureMatrix {
            names: names.to_vec(),
            kinds: indices.iter().map(|&i| self.kinds[i].clone()).collect(),
            data,
        })
    }
}

/// Label-encode the imputed table. Each categorical column is encoded
/// independently; codes are assigned in lexicographic order of the
/// observed categories, so re-encoding the same table is stable.
pub fn encode(table: &FusedTable) -> FeatureMatrix {
    let n_rows = table.n_rows();
    let n_cols = FUSED_COLUMNS.len();
    let mut data = DMatrix::zeros(n_rows, n_cols);
    let mut kinds = Vec::with_capacity(n_cols);
    for (j, def) in FUSED_COLUMNS.iter().enumerate() {
        if def.categorical {
            let mut levels: Vec<String> = table
                .cells
                .iter()
                .map(|row| match &row[j] {
                    Cell::Text(t) => t.clone(),
                    Cell::Num(v) => v.to_string(),
                    Cell::Absent => panic!("encode requires an imputed table"),
                })
                .collect();
            levels.sort();
            levels.dedup();
            for (i, row) in table.cells.iter().enumerate() {
                let text = match &row[j] {
                    Cell::Text(t) => t.clone(),
                    Cell::Num(v) => v.to_string(),
                    Cell::Absent => unreachable!(),
                };
                let code = levels.binary_search(&text).expect("level present");
                data[(i, j)] = code as f64;
            }
            kinds.push(ColumnKind::Categorical { levels });
        } else {
            for (i, row) in table.cells.iter().enumerate() {
                data[(i, j)] = match &row[j] {
                    Cell::Num(v) => *v,
                    Cell::Text(_) => panic!("numeric column {} holds text", def.name),
                    Cell::Absent => panic!("encode requires an imputed table"),
                };
            }
            kinds.push(ColumnKind::Numeric);
        }
    }
    FeatureMatrix {
        names: FUSED_COLUMNS.iter().map(|c| c.name.to_string()).collect(),
        kinds,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMethod {
    MinMax,
    LogThenMinMax,
    None,
}

/// Column-wise scaling to [0, 1]. Constant columns map to 0. The log
/// variant shifts each column to be >= 1 before the log, which sends
/// the -1 sentinel columns to a proper zero.
pub fn scale(mut m: FeatureMatrix, method: ScaleMethod) -> Result<FeatureMatrix, FusionError> {
    if method == ScaleMethod::None {
        return Ok(m);
    }
    for j in 0..m.n_cols() {
        let mut col: Vec<f64> = (0..m.n_rows()).map(|i| m.data[(i, j)]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFiniteInput(m.names[j].clone()));
        }
        if method == ScaleMethod::LogThenMinMax {
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let shift = 1.0 - min.min(0.0);
            for v in &mut col {
                *v = (*v + shift).ln();
            }
        }
        let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        for (i, v) in col.iter().enumerate() {
            m.data[(i, j)] = if span > 0.0 { (v - min) / span } else { 0.0 };
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Attacked,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Attacked => "attacked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMode {
    Snort,
    AttackWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub labels: Vec<Label>,
    pub mode: LabelMode,
}

/// Label each row either from its Snort Alert column or from membership
/// in a ground-truth attack window (closed interval).
pub fn assign_labels(
    table: &FusedTable,
    mode: LabelMode,
    windows: &[AttackWindow],
) -> Result<LabelVector, FusionError> {
    let labels = match mode {
        LabelMode::AttackWindow => {
            if windows.is_empty() {
                // An explicitly benign scenario has no windows; that is
                // only valid when the caller passes none on purpose.
                table.ts_us.iter().map(|_| Label::Normal).collect()
            } else {
                table
                    .ts_us
                    .iter()
                    .map(|&ts| {
                        if windows.iter().any(|w| w.contains(ts)) {
                            Label::Attacked
                        } else {
                            Label::Normal
                        }
                    })
                    .collect()
            }
        }
        LabelMode::Snort => {
            let col = FusedTable::column_index("Snort Alert").expect("column exists");
            table
                .cells
                .iter()
                .map(|row| match &row[col] {
                    Cell::Num(v) if *v >= 1.0 => Label::Attacked,
                    _ => Label::Normal,
                })
                .collect()
        }
    };
    Ok(LabelVector { labels, mode })
}

/// Write the fused table as CSV: ts_us, the 28 feature columns, and the
/// label column when present. Deterministic formatting throughout.
pub fn write_fused_csv(
    table: &FusedTable,
    labels: Option<&LabelVector>,
    path: &std::path::Path,
) -> Result<(), std::io::Error> {
    if let Some(lv) = labels {
        if lv.labels.len() != table.n_rows() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "label length mismatch",
            ));
        }
    }
    let mut out = String::new();
    out.push_str("ts_us");
    for def in FUSED_COLUMNS {
        out.push(',');
        out.push_str(def.name);
    }
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in table.cells.iter().enumerate() {
        out.push_str(&table.ts_us[i].to_string());
        for cell in row {
            out.push(',');
            match cell {
                Cell::Num(v) => out.push_str(&format_num(*v)),
                Cell::Text(t) => out.push_str(t),
                Cell::Absent => out.push_str("Nan"),
            }
        }
        if let Some(lv) = labels {
            out.push(',');
            out.push_str(lv.labels[i].name());
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub(crate) fn format_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
