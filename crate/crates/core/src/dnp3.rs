//! DNP3 link/transport/application dissection and physical feature extraction.
//!
//! Framing follows IEEE 1815: frames start `0x05 0x64`, carry a 10-octet
//! header (8 octets + CRC) and user data in 16-octet blocks, each followed
//! by its own CRC. Only the object variations emitted by the scenario
//! generator are decoded; anything else is rejected as malformed rather
//! than skipped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frame start octets on the wire.
pub const START_BYTES: [u8; 2] = [0x05, 0x64];

/// Function codes handled by the in-scope traffic.
pub const FC_READ: u8 = 1;
pub const FC_DIRECT_OPERATE: u8 = 5;
pub const FC_ENABLE_UNSOLICITED: u8 = 20;
pub const FC_DISABLE_UNSOLICITED: u8 = 21;
pub const FC_RESPONSE: u8 = 129;

const IN_SCOPE_FCS: [u8; 5] = [
    FC_READ,
    FC_DIRECT_OPERATE,
    FC_ENABLE_UNSOLICITED,
    FC_DISABLE_UNSOLICITED,
    FC_RESPONSE,
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Dnp3Error {
    #[error("frame does not start with 0x05 0x64")]
    BadStartBytes,
    #[error("header CRC mismatch")]
    HeaderCrcMismatch,
    #[error("CRC mismatch in data block {0}")]
    CrcMismatch(usize),
    #[error("frame truncated")]
    Truncated,
    #[error("link length {0} out of range [5, 255]")]
    BadLength(u8),
    #[error("unknown function code {0}")]
    UnknownFunctionCode(u8),
    #[error("malformed object header (group {group}, variation {variation}, qualifier {qualifier:#04x})")]
    MalformedObjectHeader {
        group: u8,
        variation: u8,
        qualifier: u8,
    },
}

/// DNP3 CRC: polynomial x^16+x^13+x^12+x^11+x^10+x^8+x^6+x^5+x^2+1
/// (0x3D65), bits processed LSB-first, result complemented. Transmitted
/// LSB-first on the wire.
pub fn crc16_dnp(data: &[u8]) -> u16 {
    let mut crc: u16 = 0;
    for &byte in data {
        crc ^= u16::from(byte);
        for _ in 0..8 {
            if crc & 1 != 0 {
                crc = (crc >> 1) ^ 0xA6BC; // 0x3D65 reflected
            } else {
                crc >>= 1;
            }
        }
    }
    !crc
}

/// A CRC-validated link-layer frame with the block CRCs stripped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkFrame {
    pub ll_len: u8,
    pub ll_ctrl: u8,
    pub ll_dest: u16,
    pub ll_src: u16,
    pub user_data: Vec<u8>,
}

impl LinkFrame {
    /// `ll_len` counts ctrl + dest + src (5 octets) plus the user data.
    pub fn new(ll_ctrl: u8, ll_dest: u16, ll_src: u16, user_data: Vec<u8>) -> Self {
        let ll_len = 5 + user_data.len() as u8;
        LinkFrame {
            ll_len,
            ll_ctrl,
            ll_dest,
            ll_src,
            user_data,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut header = Vec::with_capacity(10);
        header.extend_from_slice(&START_BYTES);
        header.push(self.ll_len);
        header.push(self.ll_ctrl);
        header.extend_from_slice(&self.ll_dest.to_le_bytes());
        header.extend_from_slice(&self.ll_src.to_le_bytes());
        let crc = crc16_dnp(&header);
        header.extend_from_slice(&crc.to_le_bytes());

        let mut wire = header;
        for block in self.user_data.chunks(16) {
            wire.extend_from_slice(block);
            let crc = crc16_dnp(block);
            wire.extend_from_slice(&crc.to_le_bytes());
        }
        wire
    }
}

pub fn parse_link_frame(wire: &[u8]) -> Result<LinkFrame, Dnp3Error> {
    if wire.len() < 2 {
        return Err(Dnp3Error::Truncated);
    }
    if wire[..2] != START_BYTES {
        return Err(Dnp3Error::BadStartBytes);
    }
    if wire.len() < 10 {
        return Err(Dnp3Error::Truncated);
    }
    let header = &wire[..8];
    let stored = u16::from_le_bytes([wire[8], wire[9]]);
    if crc16_dnp(header) != stored {
        return Err(Dnp3Error::HeaderCrcMismatch);
    }
    let ll_len = wire[2];
    if ll_len < 5 {
        return Err(Dnp3Error::BadLength(ll_len));
    }
    let ll_ctrl = wire[3];
    let ll_dest = u16::from_le_bytes([wire[4], wire[5]]);
    let ll_src = u16::from_le_bytes([wire[6], wire[7]]);

    let data_len = ll_len as usize - 5;
    let mut user_data = Vec::with_capacity(data_len);
    let mut offset = 10;
    let mut block = 0usize;
    let mut remaining = data_len;
    while remaining > 0 {
        let chunk = remaining.min(16);
        if wire.len() < offset + chunk + 2 {
            return Err(Dnp3Error::Truncated);
        }
        let body = &wire[offset..offset + chunk];
        let stored = u16::from_le_bytes([wire[offset + chunk], wire[offset + chunk + 1]]);
        if crc16_dnp(body) != stored {
            return Err(Dnp3Error::CrcMismatch(block));
        }
        user_data.extend_from_slice(body);
        offset += chunk + 2;
        remaining -= chunk;
        block += 1;
    }
    Ok(LinkFrame {
        ll_len,
        ll_ctrl,
        ll_dest,
        ll_src,
        user_data,
    })
}

/// Transport-layer header octet: FIN bit 7, FIR bit 6, sequence low 6 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportHeader {
    pub fin: bool,
    pub fir: bool,
    pub seq: u8,
}

pub fn parse_transport(octet: u8) -> TransportHeader {
    TransportHeader {
        fin: octet & 0x80 != 0,
        fir: octet & 0x40 != 0,
        seq: octet & 0x3F,
    }
}

impl TransportHeader {
    pub fn to_octet(self) -> u8 {
        (u8::from(self.fin) << 7) | (u8::from(self.fir) << 6) | (self.seq & 0x3F)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointGroup {
    BinaryInput,
    BinaryOutput,
    AnalogInput,
    AnalogOutput,
    CounterInput,
}

impl PointGroup {
    pub fn tag(self) -> &'static str {
        match self {
            PointGroup::BinaryInput => "BI",
            PointGroup::BinaryOutput => "BO",
            PointGroup::AnalogInput => "AI",
            PointGroup::AnalogOutput => "AO",
            PointGroup::CounterInput => "CI",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PointValue {
    Binary(bool),
    Analog(f64),
}

impl PointValue {
    pub fn as_number(&self) -> f64 {
        match self {
            PointValue::Binary(b) => f64::from(u8::from(*b)),
            PointValue::Analog(v) => *v,
        }
    }
}

/// One object header plus its decoded points. Request blocks carry an
/// index range but no values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBlock {
    pub group: PointGroup,
    pub variation: u8,
    pub start_index: u16,
    pub count: u16,
    pub values: Vec<PointValue>,
}

impl ObjectBlock {
    /// Response/command block carrying values.
    pub fn with_values(
        group: PointGroup,
        variation: u8,
        start_index: u16,
        values: Vec<PointValue>,
    ) -> Self {
        let count = values.len() as u16;
        ObjectBlock {
            group,
            variation,
            start_index,
            count,
            values,
        }
    }

    /// Request block: range only.
    pub fn range_only(group: PointGroup, variation: u8, start_index: u16, count: u16) -> Self {
        ObjectBlock {
            group,
            variation,
            start_index,
            count,
            values: Vec::new(),
        }
    }
}

/// A reassembled application fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppFragment {
    pub al_ctrl: u8,
    pub function_code: u8,
    /// Internal indications, responses only.
    pub iin: Option<u16>,
    pub objects: Vec<ObjectBlock>,
}

impl AppFragment {
    pub fn obj_count(&self) -> usize {
        self.objects.iter().map(|b| b.count as usize).sum()
    }

    pub fn direction(&self) -> Direction {
        if self.function_code & 0x80 != 0 {
            Direction::Response
        } else {
            Direction::Request
        }
    }
}

fn wire_group(group: PointGroup) -> u8 {
    match group {
        PointGroup::BinaryInput => 1,
        PointGroup::BinaryOutput => 12,
        PointGroup::AnalogInput => 30,
        PointGroup::AnalogOutput => 41,
        PointGroup::CounterInput => 20,
    }
}

fn point_group(group: u8) -> Option<PointGroup> {
    match group {
        1 => Some(PointGroup::BinaryInput),
        12 => Some(PointGroup::BinaryOutput),
        30 => Some(PointGroup::AnalogInput),
        41 => Some(PointGroup::AnalogOutput),
        20 => Some(PointGroup::CounterInput),
        _ => None,
    }
}

const QUAL_RANGE8: u8 = 0x00;
const QUAL_ALL: u8 = 0x06;
const QUAL_PREFIX8: u8 = 0x17;

// CROB latch codes for binary commands.
const CROB_LATCH_ON: u8 = 0x03;
const CROB_LATCH_OFF: u8 = 0x04;

fn serialize_block(block: &ObjectBlock, direction: Direction, out: &mut Vec<u8>) {
    let g = wire_group(block.group);
    out.push(g);
    out.push(block.variation);
    match (block.group, direction) {
        // Class/range reads and unsolicited control: range header, no data.
        (_, Direction::Request)
            if block.group != PointGroup::BinaryOutput
                && block.group != PointGroup::AnalogOutput =>
        {
            if block.count == 0 {
                out.push(QUAL_ALL);
            } else {
                out.push(QUAL_RANGE8);
                out.push(block.start_index as u8);
                out.push((block.start_index + block.count - 1) as u8);
            }
        }
        // CROB and analog-output blocks: index-prefixed, carried both ways.
        (PointGroup::BinaryOutput, _) => {
            out.push(QUAL_PREFIX8);
            out.push(block.values.len() as u8);
            for (i, v) in block.values.iter().enumerate() {
                out.push(block.start_index as u8 + i as u8);
                let on = matches!(v, PointValue::Binary(true));
                out.push(if on { CROB_LATCH_ON } else { CROB_LATCH_OFF });
                out.push(1); // operation count
                out.extend_from_slice(&100u32.to_le_bytes()); // on-time ms
                out.extend_from_slice(&0u32.to_le_bytes()); // off-time ms
                out.push(0); // status
            }
        }
        (PointGroup::AnalogOutput, _) => {
            out.push(QUAL_PREFIX8);
            out.push(block.values.len() as u8);
            for (i, v) in block.values.iter().enumerate() {
                out.push(block.start_index as u8 + i as u8);
                let raw = v.as_number().round() as i16;
                out.extend_from_slice(&raw.to_le_bytes());
                out.push(0); // status
            }
        }
        // Measurement data in responses: start/stop range then points.
        (_, Direction::Response) => {
            out.push(QUAL_RANGE8);
            out.push(block.start_index as u8);
            out.push((block.start_index + block.count - 1) as u8);
            for v in &block.values {
                match (block.group, block.variation) {
                    (PointGroup::BinaryInput, 2) => {
                        let on = matches!(v, PointValue::Binary(true));
                        out.push(0x01 | (u8::from(on) << 7)); // online flag + state
                    }
                    (PointGroup::AnalogInput, 1) => {
                        out.push(0x01);
                        out.extend_from_slice(&(v.as_number().round() as i32).to_le_bytes());
                    }
                    (PointGroup::AnalogInput, 2) => {
                        out.push(0x01);
                        out.extend_from_slice(&(v.as_number().round() as i16).to_le_bytes());
                    }
                    (PointGroup::CounterInput, 1) => {
                        out.push(0x01);
                        out.extend_from_slice(&(v.as_number().round() as u32).to_le_bytes());
                    }
                    _ => unreachable!("serializer emits only catalogued variations"),
                }
            }
        }
        _ => unreachable!(),
    }
}

pub fn serialize_application(frag: &AppFragment) -> Vec<u8> {
    let mut out = vec![frag.al_ctrl, frag.function_code];
    if let Some(iin) = frag.iin {
        out.extend_from_slice(&iin.to_le_bytes());
    }
    let direction = frag.direction();
    for block in &frag.objects {
        serialize_block(block, direction, out.as_mut());
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, Dnp3Error> {
        let b = *self.data.get(self.pos).ok_or(Dnp3Error::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn u16le(&mut self) -> Result<u16, Dnp3Error> {
        Ok(u16::from_le_bytes([self.u8()?, self.u8()?]))
    }

    fn i16le(&mut self) -> Result<i16, Dnp3Error> {
        Ok(i16::from_le_bytes([self.u8()?, self.u8()?]))
    }

    fn u32le(&mut self) -> Result<u32, Dnp3Error> {
        Ok(u32::from_le_bytes([self.u8()?, self.u8()?, self.u8()?, self.u8()?]))
    }

    fn i32le(&mut self) -> Result<i32, Dnp3Error> {
        Ok(i32::from_le_bytes([self.u8()?, self.u8()?, self.u8()?, self.u8()?]))
    }

    fn done(&self) -> bool {
        self.pos >= self.data.len()
    }
}

fn parse_block(r: &mut Reader, direction: Direction) -> Result<ObjectBlock, Dnp3Error> {
    let group_raw = r.u8()?;
    let variation = r.u8()?;
    let qualifier = r.u8()?;
    let malformed = |group, variation, qualifier| Dnp3Error::MalformedObjectHeader {
        group,
        variation,
        qualifier,
    };
    let group = point_group(group_raw).ok_or(malformed(group_raw, variation, qualifier))?;
    match qualifier {
        QUAL_ALL => Ok(ObjectBlock::range_only(group, variation, 0, 0)),
        QUAL_RANGE8 => {
            let start = u16::from(r.u8()?);
            let stop = u16::from(r.u8()?);
            if stop < start {
                return Err(malformed(group_raw, variation, qualifier));
            }
            let count = stop - start + 1;
            if direction == Direction::Request {
                return Ok(ObjectBlock::range_only(group, variation, start, count));
            }
            let mut values = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let v = match (group, variation) {
                    (PointGroup::BinaryInput, 2) => PointValue::Binary(r.u8()? & 0x80 != 0),
                    (PointGroup::AnalogInput, 1) => {
                        r.u8()?;
                        PointValue::Analog(f64::from(r.i32le()?))
                    }
                    (PointGroup::AnalogInput, 2) => {
                        r.u8()?;
                        PointValue::Analog(f64::from(r.i16le()?))
                    }
                    (PointGroup::CounterInput, 1) => {
                        r.u8()?;
                        PointValue::Analog(f64::from(r.u32le()?))
                    }
                    _ => return Err(malformed(group_raw, variation, qualifier)),
                };
                values.push(v);
            }
            Ok(ObjectBlock::with_values(group, variation, start, values))
        }
        QUAL_PREFIX8 => {
            let n = r.u8()?;
            let mut start_index = 0u16;
            let mut values = Vec::with_capacity(usize::from(n));
            for i in 0..n {
                let idx = u16::from(r.u8()?);
                if i == 0 {
                    start_index = idx;
                }
                let v = match group {
                    PointGroup::BinaryOutput => {
                        let code = r.u8()?;
                        r.u8()?; // operation count
                        r.u32le()?; // on-time
                        r.u32le()?; // off-time
                        r.u8()?; // status
                        PointValue::Binary(code == CROB_LATCH_ON)
                    }
                    PointGroup::AnalogOutput => {
                        let raw = r.i16le()?;
                        r.u8()?; // status
                        PointValue::Analog(f64::from(raw))
                    }
                    _ => return Err(malformed(group_raw, variation, qualifier)),
                };
                values.push(v);
            }
            Ok(ObjectBlock::with_values(group, variation, start_index, values))
        }
        _ => Err(malformed(group_raw, variation, qualifier)),
    }
}

pub fn parse_application(fragment: &[u8], direction: Direction) -> Result<AppFragment, Dnp3Error> {
    let mut r = Reader {
        data: fragment,
        pos: 0,
    };
    let al_ctrl = r.u8()?;
    let function_code = r.u8()?;
    if !IN_SCOPE_FCS.contains(&function_code) {
        return Err(Dnp3Error::UnknownFunctionCode(function_code));
    }
    let iin = if direction == Direction::Response {
        Some(r.u16le()?)
    } else {
        None
    };
    let mut objects = Vec::new();
    while !r.done() {
        objects.push(parse_block(&mut r, direction)?);
    }
    Ok(AppFragment {
        al_ctrl,
        function_code,
        iin,
        objects,
    })
}

/// The nine physical feature columns extracted from one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalRecord {
    pub ll_src: u16,
    pub ll_dest: u16,
    pub ll_len: u8,
    pub ll_ctrl: u8,
    pub tl_ctrl: u8,
    pub al_ctrl: u8,
    pub function_code: u8,
    pub obj_count: usize,
    /// Flattened per-group value vectors from the application payload.
    pub al_payload: Vec<(PointGroup, Vec<f64>)>,
}

/// Parse a frame through the transport and application layers and pull
/// out the physical feature block.
pub fn extract_physical(frame: &LinkFrame) -> Result<PhysicalRecord, Dnp3Error> {
    let tl_octet = *frame.user_data.first().ok_or(Dnp3Error::Truncated)?;
    let fragment = &frame.user_data[1..];
    let fc = *fragment.get(1).ok_or(Dnp3Error::Truncated)?;
    let direction = if fc & 0x80 != 0 {
        Direction::Response
    } else {
        Direction::Request
    };
    let app = parse_application(fragment, direction)?;
    let mut al_payload: Vec<(PointGroup, Vec<f64>)> = Vec::new();
    for block in &app.objects {
        let numbers: Vec<f64> = block.values.iter().map(PointValue::as_number).collect();
        if numbers.is_empty() {
            continue;
        }
        match al_payload.iter_mut().find(|(g, _)| *g == block.group) {
            Some((_, vs)) => vs.extend(numbers),
            None => al_payload.push((block.group, numbers)),
        }
    }
    Ok(PhysicalRecord {
        ll_src: frame.ll_src,
        ll_dest: frame.ll_dest,
        ll_len: frame.ll_len,
        ll_ctrl: frame.ll_ctrl,
        tl_ctrl: tl_octet,
        al_ctrl: app.al_ctrl,
        function_code: app.function_code,
        obj_count: app.obj_count(),
        al_payload,
    })
}

/// Wrap an application fragment into a single-segment link frame.
pub fn build_frame(
    ll_ctrl: u8,
    ll_dest: u16,
    ll_src: u16,
    tl_seq: u8,
    frag: &AppFragment,
) -> LinkFrame {
    let transport = TransportHeader {
        fin: true,
        fir: true,
        seq: tl_seq & 0x3F,
    };
    let mut user_data = vec![transport.to_octet()];
    user_data.extend_from_slice(&serialize_application(frag));
    LinkFrame::new(ll_ctrl, ll_dest, ll_src, user_data)
}
