//! Text wire format.
//!
//! One envelope per line: `topic|seq|sender|step|kind|body\n`. The body is a
//! `;`-separated list of `key=value` pairs whose layout depends on `kind`:
//!
//! | kind     | body keys                                                  |
//! |----------|------------------------------------------------------------|
//! | `tick`   | `what` (`step`, `episode-end`, `shutdown`)                  |
//! | `obs`    | `slice`, `norm_traffic`, `cpu_gap`                          |
//! | `msg`    | `slice`, `symbol`                                           |
//! | `action` | `slice`, `action`, `allocation`, `message`                  |
//! | `reward` | `slice`, `reward`, `conflict`, `latency`, `utilization`     |
//! | `metric` | `name`, `value`, `index`, then `label.<key>` per label      |
//!
//! Any of `% | ; = \n \r` inside a field is percent-encoded as `%XX`.
//! Floats use the shortest representation that parses back to the same value.

use std::collections::BTreeMap;

use crate::agent::Observation;
use crate::error::{Error, Result};
use crate::metrics::MetricSample;

use super::{Envelope, Payload, Tick};

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' | '|' | ';' | '=' | '\n' | '\r' => out.push_str(&format!("%{:02X}", c as u32)),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, offset: usize) -> Result<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s
                .get(i + 1..i + 3)
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| decode_err(offset + i, "bad percent escape"))?;
            out.push(hex);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| decode_err(offset, "escaped field is not UTF-8"))
}

fn decode_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        message: message.into(),
    }
}

fn body_of(payload: &Payload) -> String {
    let pairs: Vec<(String, String)> = match payload {
        Payload::Tick(t) => vec![("what".into(), t.as_str().into())],
        Payload::Observation { slice, obs } => vec![
            ("slice".into(), slice.to_string()),
            ("norm_traffic".into(), obs.norm_traffic.to_string()),
            ("cpu_gap".into(), obs.cpu_gap.to_string()),
        ],
        Payload::AgentMessage { slice, symbol } => {
            vec![("slice".into(), slice.to_string()), ("symbol".into(), symbol.to_string())]
        }
        Payload::ActionReport {
            slice,
            action,
            allocation,
            message,
        } => vec![
            ("slice".into(), slice.to_string()),
            ("action".into(), action.to_string()),
            ("allocation".into(), allocation.to_string()),
            ("message".into(), message.to_string()),
        ],
        Payload::RewardNotice {
            slice,
            reward,
            conflict,
            latency,
            utilization,
        } => vec![
            ("slice".into(), slice.to_string()),
            ("reward".into(), reward.to_string()),
            ("conflict".into(), u8::from(*conflict).to_string()),
            ("latency".into(), latency.to_string()),
            ("utilization".into(), utilization.to_string()),
        ],
        Payload::Metric(m) => {
            let mut v = vec![
                ("name".into(), m.name.clone()),
                ("value".into(), m.value.to_string()),
                ("index".into(), m.index.to_string()),
            ];
            v.extend(m.labels.iter().map(|(k, val)| (format!("label.{k}"), val.clone())));
            v
        }
    };
    pairs
        .iter()
        .map(|(k, v)| format!("{}={}", escape(k), escape(v)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Serializes one envelope as a newline-terminated record.
pub fn encode_wire(env: &Envelope) -> Vec<u8> {
    format!(
        "{}|{}|{}|{}|{}|{}\n",
        escape(&env.topic),
        env.seq,
        escape(&env.sender),
        env.step,
        env.payload.kind(),
        body_of(&env.payload)
    )
    .into_bytes()
}

struct Body {
    pairs: Vec<(String, String, usize)>,
}

impl Body {
    fn parse(s: &str, offset: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        if s.is_empty() {
            return Ok(Self { pairs });
        }
        let mut pos = offset;
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| decode_err(pos, format!("body pair `{part}` has no `=`")))?;
            let key = unescape(k, pos)?;
            let value = unescape(v, pos + k.len() + 1)?;
            pairs.push((key, value, pos + k.len() + 1));
            pos += part.len() + 1;
        }
        Ok(Self { pairs })
    }

    fn get(&self, key: &str, offset: usize) -> Result<(&str, usize)> {
        self.pairs
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, o)| (v.as_str(), *o))
            .ok_or_else(|| decode_err(offset, format!("missing body key `{key}`")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str, offset: usize) -> Result<T> {
        let (v, o) = self.get(key, offset)?;
        v.parse()
            .map_err(|_| decode_err(o, format!("invalid value `{v}` for `{key}`")))
    }
}

/// Parses one record; a trailing newline is optional. Error offsets are
/// byte positions inside `bytes`.
pub fn decode_wire(bytes: &[u8]) -> Result<Envelope> {
    decode_at(bytes, 0)
}

fn decode_at(bytes: &[u8], base: usize) -> Result<Envelope> {
    let text = std::str::from_utf8(bytes).map_err(|e| decode_err(base + e.valid_up_to(), "record is not UTF-8"))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    if let Some(i) = text.find('\n') {
        return Err(decode_err(base + i, "embedded newline"));
    }
    let mut fields = Vec::with_capacity(6);
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == '|' {
            fields.push((&text[start..i], base + start));
            start = i + 1;
        }
    }
    fields.push((&text[start..], base + start));
    if fields.len() != 6 {
        return Err(decode_err(
            base + text.len(),
            format!("expected 6 `|`-separated fields, found {}", fields.len()),
        ));
    }
    let topic = unescape(fields[0].0, fields[0].1)?;
    if topic.is_empty() {
        return Err(decode_err(fields[0].1, "empty topic"));
    }
    let seq: u64 = fields[1]
        .0
        .parse()
        .map_err(|_| decode_err(fields[1].1, "invalid seq"))?;
    let sender = unescape(fields[2].0, fields[2].1)?;
    let step: u64 = fields[3]
        .0
        .parse()
        .map_err(|_| decode_err(fields[3].1, "invalid step"))?;
    let (kind, kind_at) = fields[4];
    let (body_text, body_at) = fields[5];
    let body = Body::parse(body_text, body_at)?;
    let payload = match kind {
        "tick" => {
            let (w, o) = body.get("what", body_at)?;
            Payload::Tick(Tick::parse(w).ok_or_else(|| decode_err(o, format!("unknown tick `{w}`")))?)
        }
        "obs" => Payload::Observation {
            slice: body.num("slice", body_at)?,
            obs: Observation {
                norm_traffic: body.num("norm_traffic", body_at)?,
                cpu_gap: body.num("cpu_gap", body_at)?,
            },
        },
        "msg" => Payload::AgentMessage {
            slice: body.num("slice", body_at)?,
            symbol: body.num("symbol", body_at)?,
        },
        "action" => Payload::ActionReport {
            slice: body.num("slice", body_at)?,
            action: body.num("action", body_at)?,
            allocation: body.num("allocation", body_at)?,
            message: body.num("message", body_at)?,
        },
        "reward" => {
            let c: u8 = body.num("conflict", body_at)?;
            if c > 1 {
                let (_, o) = body.get("conflict", body_at)?;
                return Err(decode_err(o, "conflict must be 0 or 1"));
            }
            Payload::RewardNotice {
                slice: body.num("slice", body_at)?,
                reward: body.num("reward", body_at)?,
                conflict: c == 1,
                latency: body.num("latency", body_at)?,
                utilization: body.num("utilization", body_at)?,
            }
        }
        "metric" => {
            let labels: BTreeMap<String, String> = body
                .pairs
                .iter()
                .filter_map(|(k, v, _)| k.strip_prefix("label.").map(|l| (l.to_string(), v.clone())))
                .collect();
            Payload::Metric(MetricSample {
                name: body.get("name", body_at)?.0.to_string(),
                labels,
                value: body.num("value", body_at)?,
                index: body.num("index", body_at)?,
            })
        }
        other => return Err(decode_err(kind_at, format!("unknown kind `{other}`"))),
    };
    Ok(Envelope {
        topic,
        seq,
        sender,
        step,
        payload,
    })
}

/// Parses a stream of newline-terminated records.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Envelope>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < bytes.len() {
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p + 1)
            .unwrap_or(bytes.len());
        out.push(decode_at(&bytes[start..end], start)?);
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(payload: Payload) -> Envelope {
        Envelope {
            topic: "obs.0".into(),
            seq: 7,
            sender: "server".into(),
            step: 3,
            payload,
        }
    }

    #[test]
    fn observation_record_layout() {
        let e = env(Payload::Observation {
            slice: 0,
            obs: Observation {
                norm_traffic: 0.5,
                cpu_gap: -1.25,
            },
        });
        let bytes = encode_wire(&e);
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "obs.0|7|server|3|obs|slice=0;norm_traffic=0.5;cpu_gap=-1.25\n"
        );
        assert_eq!(decode_wire(&bytes).unwrap(), e);
    }

    #[test]
    fn empty_body_metric_labels_round_trip() {
        let mut m = MetricSample::new("conflict_rate", 0.25, 4);
        m.labels.insert("variant".into(), "ma|ib;=%".into());
        let e = env(Payload::Metric(m));
        assert_eq!(decode_wire(&encode_wire(&e)).unwrap(), e);
        let empty = decode_wire(b"t|0|s|0|tick|what=step").unwrap();
        assert_eq!(empty.payload, Payload::Tick(Tick::Step));
    }

    #[test]
    fn empty_body_is_accepted_where_nothing_is_required() {
        let r = decode_wire(b"t|0|s|0|tick|");
        // a tick needs `what`, so this is reported against the body
        match r {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_is_an_error_with_offset() {
        match decode_wire(b"t|0|s|0|msg") {
            Err(Error::Decode { offset, message }) => {
                assert_eq!(offset, 11);
                assert!(message.contains("6"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match decode_wire(b"t|x|s|0|msg|slice=0;symbol=1") {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
        match decode_wire(b"t|0|s|0|msg|slice=0;symbol=q") {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 27),
            other => panic!("{other:?}"),
        }
        assert!(decode_wire(b"t|0|s|0|nope|").is_err());
        assert!(decode_wire(b"|0|s|0|tick|what=step").is_err());
    }

    #[test]
    fn stream_offsets_are_global() {
        let mut bytes = encode_wire(&env(Payload::AgentMessage { slice: 1, symbol: 2 }));
        let first = bytes.len();
        bytes.extend_from_slice(b"t|0|s|0|msg|slice=0\n");
        assert_eq!(decode_stream(&bytes[..first]).unwrap().len(), 1);
        match decode_stream(&bytes) {
            Err(Error::Decode { offset, .. }) => assert!(offset >= first),
            other => panic!("{other:?}"),
        }
    }
}
