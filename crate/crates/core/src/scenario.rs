//! Desk-scale scenario synthesis: emits a DNP3-over-TCP capture, flow
//! events, alert events and ground-truth attack windows for the four
//! MiTM use cases, so the fusion and learning stages can be exercised
//! without a live testbed.
//!
//! Everything is a pure function of the spec: one seeded generator, a
//! fixed epoch constant, and deterministic iteration order, so the same
//! spec always produces byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dnp3::{
    build_frame, AppFragment, ObjectBlock, PointGroup, PointValue, FC_DIRECT_OPERATE, FC_READ,
    FC_RESPONSE,
};
use crate::ingest::{AlertEvent, AlertType, FlowEvent, RawPacket};

/// Scenario time zero, microseconds since the Unix epoch. Fixed so
/// outputs are reproducible.
pub const EPOCH_US: i64 = 1_600_000_000_000_000;

/// All attacker-sourced frames facing the master carry this MAC.
pub const ATTACKER_MAC: &str = "02:00:00:00:00:99";

/// Relative jitter bound on the poll cadence, recorded in the manifest.
pub const JITTER_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("cannot write scenario output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UseCase {
    UC1,
    UC2,
    UC3,
    UC4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackKind {
    FCI,
    FDI,
    #[serde(rename = "FDI_FCI")]
    FdiFci,
}

/// Ground-truth attack interval in absolute microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackWindow {
    pub start_us: i64,
    pub end_us: i64,
    pub kind: AttackKind,
}

impl AttackWindow {
    pub fn contains(&self, ts_us: i64) -> bool {
        ts_us >= self.start_us && ts_us <= self.end_us
    }
}

/// Magnitude knobs the source material leaves unspecified. Defaults give
/// a clearly detectable attack; experiments can dial the signal down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorKnobs {
    /// Probability that an in-window exchange is actively intercepted
    /// (attacker MAC on the master-facing frame, in-flight tampering).
    pub intercept_prob: f64,
    /// Baseline data-segment retransmission probability.
    pub base_retx_prob: f64,
    /// Retransmission probability inside attack windows.
    pub attack_retx_prob: f64,
    /// Per-cycle probability of a benign operator command exchange.
    pub benign_op_prob: f64,
    /// Injected false-command exchanges per polling cycle inside windows.
    pub injects_per_cycle: u32,
    /// False-data analog tamper factor range.
    pub tamper_min: f64,
    pub tamper_max: f64,
    /// Baseline round-trip time range in milliseconds.
    pub rtt_min_ms: f64,
    pub rtt_max_ms: f64,
}

impl Default for GeneratorKnobs {
    fn default() -> Self {
        GeneratorKnobs {
            intercept_prob: 1.0,
            base_retx_prob: 0.02,
            attack_retx_prob: 0.12,
            benign_op_prob: 0.15,
            injects_per_cycle: 2,
            tamper_min: 1.5,
            tamper_max: 3.0,
            rtt_min_ms: 20.0,
            rtt_max_ms: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub use_case: UseCase,
    pub n_masters: u32,
    pub polling_interval_s: u32,
    pub n_outstations: u32,
    pub duration_s: u32,
    /// Attack interval in seconds from scenario start; `None` for a
    /// benign scenario.
    pub attack: Option<(u32, u32)>,
    pub snort_detect_prob: f64,
    pub snort_false_alarm_rate: f64,
    pub mitm_delay_factor: f64,
    pub seed: u64,
    #[serde(default)]
    pub knobs: GeneratorKnobs,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::InvalidSpec(msg));
        if self.duration_s == 0 {
            return fail("duration must be positive".into());
        }
        if self.polling_interval_s == 0 {
            return fail("polling interval must be positive".into());
        }
        if self.n_masters == 0 || self.n_outstations == 0 {
            return fail("need at least one master and one outstation".into());
        }
        if let Some((start, end)) = self.attack {
            if start >= end || end > self.duration_s {
                return fail(format!(
                    "attack window [{start}, {end}] must satisfy 0 <= start < end <= duration"
                ));
            }
        }
        for (name, p) in [
            ("snort_detect_prob", self.snort_detect_prob),
            ("snort_false_alarm_rate", self.snort_false_alarm_rate),
            ("intercept_prob", self.knobs.intercept_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.mitm_delay_factor < 1.0 {
            return fail("mitm_delay_factor must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub windows: Vec<AttackWindow>,
    pub jitter_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub capture_path: PathBuf,
    pub flow_path: PathBuf,
    pub alert_path: PathBuf,
    pub manifest_path: PathBuf,
    pub windows: Vec<AttackWindow>,
}

/// The window(s) `generate_scenario` uses, in absolute microseconds.
/// UC1/UC2 are pure false-command injections; UC3/UC4 mix in false data.
pub fn ground_truth_windows(spec: &ScenarioSpec) -> Vec<AttackWindow> {
    let Some((start, end)) = spec.attack else {
        return Vec::new();
    };
    let kind = match spec.use_case {
        UseCase::UC1 | UseCase::UC2 => AttackKind::FCI,
        UseCase::UC3 | UseCase::UC4 => AttackKind::FdiFci,
    };
    vec![AttackWindow {
        start_us: EPOCH_US + i64::from(start) * 1_000_000,
        end_us: EPOCH_US + i64::from(end) * 1_000_000,
        kind,
    }]
}

fn master_mac(m: u32) -> String {
    format!("02:00:00:00:01:{:02x}", m + 1)
}

fn outstation_mac(o: u32) -> String {
    format!("02:00:00:00:02:{:02x}", o + 1)
}

fn master_ip(m: u32) -> String {
    format!("10.0.0.{}", 10 + m)
}

fn outstation_ip(o: u32) -> String {
    format!("10.0.1.{}", 10 + o)
}

const N_BI: u16 = 4;
const N_AI: u16 = 3;

/// Steady-state analog value for one outstation point.
fn analog_base(outstation: u32, point: u16) -> f64 {
    80.0 + 7.0 * f64::from(outstation) + 5.0 * f64::from(point)
}

/// Which phase of the attack is active at `t`, per the use-case
/// modification sequence: UC1/UC2 inject commands throughout, UC3 first
/// modifies measurements then injects commands, UC4 modifies, injects,
/// then modifies again.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Phase {
    fdi: bool,
    fci: bool,
}

fn attack_phase(use_case: UseCase, t_us: i64, window: &AttackWindow) -> Phase {
    if t_us < window.start_us || t_us > window.end_us {
        return Phase {
            fdi: false,
            fci: false,
        };
    }
    let span = window.end_us - window.start_us;
    let rel = t_us - window.start_us;
    match use_case {
        UseCase::UC1 | UseCase::UC2 => Phase {
            fdi: false,
            fci: true,
        },
        UseCase::UC3 => Phase {
            fdi: rel < span / 2,
            fci: rel >= span / 2,
        },
        UseCase::UC4 => {
            let third = span / 3;
            Phase {
                fdi: rel < third || rel >= 2 * third,
                fci: rel >= third && rel < 2 * third,
            }
        }
    }
}

struct Connection {
    master: u32,
    outstation: u32,
    m_seq: u32,
    o_seq: u32,
    tl_seq: u8,
}

struct Emitter<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha20Rng,
    window: Option<AttackWindow>,
    packets: Vec<RawPacket>,
    alerts: Vec<AlertEvent>,
    flows: Vec<FlowEvent>,
    /// Per-outstation time at which the first false command landed.
    state_tampered_from: Vec<Option<i64>>,
    /// Scenario-wide analog shift applied once the physical state is
    /// compromised.
    state_factor: f64,
}

struct ExchangeOpts {
    intercepted: bool,
    inflight_factor: Option<f64>,
    injected_command: bool,
}

impl<'a> Emitter<'a> {
    fn in_window(&self, t_us: i64) -> bool {
        self.window.map(|w| w.contains(t_us)).unwrap_or(false)
    }

    fn rtt_us(&mut self, t_us: i64) -> i64 {
        let base = self
            .rng
            .gen_range(self.spec.knobs.rtt_min_ms..self.spec.knobs.rtt_max_ms);
        let factor = if self.in_window(t_us) {
            self.spec.mitm_delay_factor
        } else {
            1.0
        };
        (base * factor * 1000.0) as i64
    }

    fn retx_prob(&self, t_us: i64) -> f64 {
        if self.in_window(t_us) {
            self.spec.knobs.attack_retx_prob
        } else {
            self.spec.knobs.base_retx_prob
        }
    }

    fn push_packet(
        &mut self,
        ts_us: i64,
        eth_src: String,
        eth_dst: String,
        ip_src: String,
        ip_dst: String,
        src_port: u16,
        dst_port: u16,
        seq: u32,
        ack: u32,
        payload: Option<Vec<u8>>,
    ) {
        let tcp_len = payload.as_ref().map(|p| p.len() as u32).unwrap_or(0);
        let dnp3_hex = payload.map(|bytes| {
            let mut hex = String::with_capacity(bytes.len() * 2);
            for b in bytes {
                let _ = write!(hex, "{b:02x}");
            }
            hex
        });
        let protocols = if dnp3_hex.is_some() {
            "eth:ethertype:ip:tcp:dnp3"
        } else {
            "eth:ethertype:ip:tcp"
        };
        self.packets.push(RawPacket {
            ts_us,
            frame_len: 54 + tcp_len,
            frame_protocols: protocols.into(),
            eth_src,
            eth_dst,
            ip_src: Some(ip_src),
            ip_dst: Some(ip_dst),
            ip_len: Some(40 + tcp_len),
            ip_flags: Some(0x40),
            src_port: Some(src_port),
            dst_port: Some(dst_port),
            tcp_len: Some(tcp_len),
            tcp_flags: Some(if tcp_len > 0 { 0x18 } else { 0x10 }),
            tcp_seq: Some(seq),
            tcp_ack: Some(ack),
            dnp3_hex,
        });
    }

    fn maybe_alert(&mut self, pkt_ts: i64, tampered: bool, spoofed: bool) {
        if self.in_window(pkt_ts) {
            if (tampered || spoofed) && self.rng.gen_bool(self.spec.snort_detect_prob) {
                let (alert_type, signature_id) = if tampered {
                    (AlertType::Dnp3, 2001)
                } else {
                    (AlertType::ArpSpoof, 2002)
                };
                let end = self.window.map(|w| w.end_us).unwrap_or(i64::MAX);
                self.alerts.push(AlertEvent {
                    ts_us: (pkt_ts + 300).min(end),
                    alert_type,
                    signature_id,
                });
            }
        } else if self.rng.gen_bool(self.spec.snort_false_alarm_rate) {
            let flood = self.rng.gen_bool(0.3);
            self.alerts.push(AlertEvent {
                ts_us: pkt_ts + 300,
                alert_type: if flood {
                    AlertType::IcmpFlood
                } else {
                    AlertType::Other
                },
                signature_id: if flood { 2003 } else { 3000 },
            });
        }
    }

    /// Emit one request/response exchange: request data segment,
    /// response data segment acking it, and the requester's closing ACK.
    /// Returns the number of packets emitted.
    fn exchange(
        &mut self,
        conn: &mut Connection,
        t_us: i64,
        request: &AppFragment,
        response: &AppFragment,
        opts: &ExchangeOpts,
    ) -> u64 {
        let m = conn.master;
        let o = conn.outstation;
        let ll_master = 1 + m as u16;
        let ll_out = 100 + o as u16;

        let req_frame = build_frame(0xC4, ll_out, ll_master, conn.tl_seq, request);
        conn.tl_seq = (conn.tl_seq + 1) & 0x3F;
        let rsp_frame = build_frame(0x44, ll_master, ll_out, conn.tl_seq, response);
        conn.tl_seq = (conn.tl_seq + 1) & 0x3F;

        let req_wire = req_frame.serialize();
        let rsp_wire = rsp_frame.serialize();
        let rtt = self.rtt_us(t_us);
        let mut emitted = 0u64;

        // Master-facing frames carry the attacker MAC while intercepted.
        let rsp_src_mac = if opts.intercepted {
            ATTACKER_MAC.to_string()
        } else {
            outstation_mac(o)
        };

        let req_seq = conn.m_seq;
        let req_len = req_wire.len() as u32;
        self.push_packet(
            t_us,
            master_mac(m),
            outstation_mac(o),
            master_ip(m),
            outstation_ip(o),
            40000 + m as u16,
            20000,
            req_seq,
            conn.o_seq,
            Some(req_wire.clone()),
        );
        emitted += 1;
        self.maybe_alert(t_us, opts.injected_command, false);
        if self.rng.gen_bool(self.retx_prob(t_us)) {
            // Timeout-style duplicate of the request segment.
            self.push_packet(
                t_us + rtt * 3 / 2,
                master_mac(m),
                outstation_mac(o),
                master_ip(m),
                outstation_ip(o),
                40000 + m as u16,
                20000,
                req_seq,
                conn.o_seq,
                Some(req_wire),
            );
            emitted += 1;
        }
        conn.m_seq += req_len;

        let rsp_t = t_us + rtt;
        let rsp_seq = conn.o_seq;
        let rsp_len = rsp_wire.len() as u32;
        self.push_packet(
            rsp_t,
            rsp_src_mac.clone(),
            master_mac(m),
            outstation_ip(o),
            master_ip(m),
            20000,
            40000 + m as u16,
            rsp_seq,
            conn.m_seq,
            Some(rsp_wire.clone()),
        );
        emitted += 1;
        self.maybe_alert(rsp_t, opts.inflight_factor.is_some(), opts.intercepted);
        if self.rng.gen_bool(self.retx_prob(rsp_t)) {
            self.push_packet(
                rsp_t + rtt * 3 / 2,
                rsp_src_mac,
                master_mac(m),
                outstation_ip(o),
                master_ip(m),
                20000,
                40000 + m as u16,
                rsp_seq,
                conn.m_seq,
                Some(rsp_wire),
            );
            emitted += 1;
        }
        conn.o_seq += rsp_len;

        // Closing ACK from the master, one-way latency after the response.
        self.push_packet(
            rsp_t + rtt / 2,
            master_mac(m),
            outstation_mac(o),
            master_ip(m),
            outstation_ip(o),
            40000 + m as u16,
            20000,
            conn.m_seq,
            conn.o_seq,
            None,
        );
        emitted += 1;
        emitted
    }

    /// Measurement values the outstation currently reports. Once a false
    /// command has landed, binary points stay flipped and analog values
    /// stay shifted until the window closes.
    fn measurements(&mut self, o: u32, t_us: i64, inflight_factor: Option<f64>) -> AppFragment {
        let state_bad = match self.state_tampered_from[o as usize] {
            Some(from) => {
                t_us >= from && self.window.map(|w| t_us <= w.end_us).unwrap_or(false)
            }
            None => false,
        };
        let bi: Vec<PointValue> = (0..N_BI)
            .map(|p| {
                let base = p % 2 == 0;
                let flipped = state_bad && p < 2;
                PointValue::Binary(base ^ flipped)
            })
            .collect();
        let ai: Vec<PointValue> = (0..N_AI)
            .map(|p| {
                let mut v = analog_base(o, p) + self.rng.gen_range(-0.5..0.5);
                if state_bad {
                    v *= self.state_factor;
                }
                if let Some(f) = inflight_factor {
                    v *= f;
                }
                PointValue::Analog(v.round())
            })
            .collect();
        AppFragment {
            al_ctrl: 0xC0,
            function_code: FC_RESPONSE,
            iin: Some(0),
            objects: vec![
                ObjectBlock::with_values(PointGroup::BinaryInput, 2, 0, bi),
                ObjectBlock::with_values(PointGroup::AnalogInput, 2, 0, ai),
            ],
        }
    }

    fn read_poll(&self) -> AppFragment {
        AppFragment {
            al_ctrl: 0xC0,
            function_code: FC_READ,
            iin: None,
            objects: vec![
                ObjectBlock::range_only(PointGroup::BinaryInput, 2, 0, N_BI),
                ObjectBlock::range_only(PointGroup::AnalogInput, 2, 0, N_AI),
            ],
        }
    }

    /// Single-point DIRECT OPERATE. Benign operator actions and injected
    /// false commands share this shape; only point selection and values
    /// differ.
    fn command(&mut self, o: u32, analog: bool, tampered: bool) -> AppFragment {
        let objects = if analog {
            let point = self.rng.gen_range(0..N_AI);
            let mut value = analog_base(o, point);
            if tampered {
                value *= self
                    .rng
                    .gen_range(self.spec.knobs.tamper_min..self.spec.knobs.tamper_max);
            }
            vec![ObjectBlock::with_values(
                PointGroup::AnalogOutput,
                2,
                point,
                vec![PointValue::Analog(value.round())],
            )]
        } else {
            let point = self.rng.gen_range(0..N_BI);
            let on = self.rng.gen_bool(0.5);
            vec![ObjectBlock::with_values(
                PointGroup::BinaryOutput,
                1,
                point,
                vec![PointValue::Binary(on)],
            )]
        };
        AppFragment {
            al_ctrl: 0xC0,
            function_code: FC_DIRECT_OPERATE,
            iin: None,
            objects,
        }
    }

    /// Command acknowledgement: the outstation echoes the command objects.
    fn command_ack(command: &AppFragment) -> AppFragment {
        AppFragment {
            al_ctrl: 0xC0,
            function_code: FC_RESPONSE,
            iin: Some(0),
            objects: command.objects.clone(),
        }
    }
}

/// Synthesize the scenario into `out_dir`, emitting `capture.jsonl`,
/// `flows.jsonl`, `alerts.jsonl` and `manifest.json`.
pub fn generate_scenario(
    spec: &ScenarioSpec,
    out_dir: &Path,
) -> Result<ScenarioBundle, ScenarioError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let windows = ground_truth_windows(spec);
    let mut emitter = Emitter {
        spec,
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
        window: windows.first().copied(),
        packets: Vec::new(),
        alerts: Vec::new(),
        flows: Vec::new(),
        state_tampered_from: vec![None; spec.n_outstations as usize],
        state_factor: 0.0,
    };
    emitter.state_factor = emitter
        .rng
        .gen_range(spec.knobs.tamper_min..spec.knobs.tamper_max);

    let pi_us = i64::from(spec.polling_interval_s) * 1_000_000;
    let n_cycles = spec.duration_s / spec.polling_interval_s;

    for m in 0..spec.n_masters {
        let o = m % spec.n_outstations;
        let mut conn = Connection {
            master: m,
            outstation: o,
            m_seq: 1_000 + m * 10_000,
            o_seq: 500_000 + m * 10_000,
            tl_seq: 0,
        };
        for k in 0..n_cycles {
            let jitter = emitter.rng.gen_range(-JITTER_FRACTION..JITTER_FRACTION);
            let poll_t = EPOCH_US
                + i64::from(k) * pi_us
                + 1_000_000
                + (jitter * pi_us as f64) as i64;
            let cycle_start = EPOCH_US + i64::from(k) * pi_us;
            let mut cycle_packets = 0u64;

            // Regular measurement poll.
            let intercepted = emitter.in_window(poll_t)
                && emitter.rng.gen_bool(spec.knobs.intercept_prob);
            let phase = emitter
                .window
                .map(|w| attack_phase(spec.use_case, poll_t, &w))
                .unwrap_or(Phase {
                    fdi: false,
                    fci: false,
                });
            let inflight = if phase.fdi && intercepted {
                Some(
                    emitter
                        .rng
                        .gen_range(spec.knobs.tamper_min..spec.knobs.tamper_max),
                )
            } else {
                None
            };
            let request = emitter.read_poll();
            let rtt_probe = poll_t; // response uses same window membership
            let response = emitter.measurements(o, rtt_probe, inflight);
            cycle_packets += emitter.exchange(
                &mut conn,
                poll_t,
                &request,
                &response,
                &ExchangeOpts {
                    intercepted,
                    inflight_factor: inflight,
                    injected_command: false,
                },
            );

            // Occasional benign operator command.
            if emitter.rng.gen_bool(spec.knobs.benign_op_prob) {
                let t = poll_t + pi_us / 3;
                let analog = emitter.rng.gen_bool(0.5);
                let cmd = emitter.command(o, analog, false);
                let ack = Emitter::command_ack(&cmd);
                let intercepted =
                    emitter.in_window(t) && emitter.rng.gen_bool(spec.knobs.intercept_prob);
                cycle_packets += emitter.exchange(
                    &mut conn,
                    t,
                    &cmd,
                    &ack,
                    &ExchangeOpts {
                        intercepted,
                        inflight_factor: None,
                        injected_command: false,
                    },
                );
            }

            // Injected false commands while the use case is in a
            // command-injection phase.
            let n_inject = spec.knobs.injects_per_cycle;
            for j in 0..n_inject {
                let t = poll_t + pi_us * i64::from(j + 1) / (i64::from(n_inject) + 2);
                let Some(w) = emitter.window else { break };
                let phase = attack_phase(spec.use_case, t, &w);
                if !phase.fci {
                    continue;
                }
                let analog = match spec.use_case {
                    UseCase::UC1 => false,
                    _ => emitter.rng.gen_bool(0.5),
                };
                let cmd = emitter.command(o, analog, true);
                let ack = Emitter::command_ack(&cmd);
                if emitter.state_tampered_from[o as usize].map_or(true, |from| t < from) {
                    emitter.state_tampered_from[o as usize] = Some(t);
                }
                cycle_packets += emitter.exchange(
                    &mut conn,
                    t,
                    &cmd,
                    &ack,
                    &ExchangeOpts {
                        intercepted: true,
                        inflight_factor: None,
                        injected_command: true,
                    },
                );
            }

            emitter.flows.push(FlowEvent {
                event_start_us: cycle_start,
                event_end_us: cycle_start + pi_us,
                flow_id: format!("m{m}-o{o}"),
                flow_final: k == n_cycles - 1,
                source_packets: cycle_packets,
                flow_duration_us: pi_us,
            });
        }
    }

    emitter.packets.sort_by_key(|p| p.ts_us);
    emitter.alerts.sort_by_key(|a| a.ts_us);
    emitter.flows.sort_by_key(|f| f.event_start_us);

    let capture_path = out_dir.join("capture.jsonl");
    let flow_path = out_dir.join("flows.jsonl");
    let alert_path = out_dir.join("alerts.jsonl");
    let manifest_path = out_dir.join("manifest.json");

    write_jsonl(&capture_path, &emitter.packets)?;
    write_jsonl(&flow_path, &emitter.flows)?;
    write_jsonl(&alert_path, &emitter.alerts)?;
    let manifest = Manifest {
        spec: spec.clone(),
        seed: spec.seed,
        windows: windows.clone(),
        jitter_fraction: JITTER_FRACTION,
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;

    Ok(ScenarioBundle {
        capture_path,
        flow_path,
        alert_path,
        manifest_path,
        windows,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ScenarioError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("jsonl item serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
