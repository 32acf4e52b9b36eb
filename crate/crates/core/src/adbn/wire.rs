//! Communications between supernodes and their binary encoding.
//!
//! Layout, little-endian: `u32` byte length of the rest of the record,
//! `u32` sender, `u32` recipient, `f64` send time, `u32` message count, then
//! per message a `u8` kind (0 = π, 1 = λ), sender `(u32, f64)`, recipient
//! `(u32, f64)`, `u32` value count and the values as `f64`.

use super::store::SubnodeId;
use super::AdbnError;
use crate::bp::{Message, MessageKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Communication {
    pub sender: usize,
    pub recipient: usize,
    pub time: f64,
    pub messages: Vec<Message<SubnodeId>>,
}

fn put_id(out: &mut Vec<u8>, id: SubnodeId) {
    out.extend_from_slice(&id.var.to_le_bytes());
    out.extend_from_slice(&id.time.to_le_bytes());
}

impl Communication {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&(self.sender as u32).to_le_bytes());
        body.extend_from_slice(&(self.recipient as u32).to_le_bytes());
        body.extend_from_slice(&self.time.to_le_bytes());
        body.extend_from_slice(&(self.messages.len() as u32).to_le_bytes());
        for m in &self.messages {
            body.push(match m.kind {
                MessageKind::Pi => 0,
                MessageKind::Lambda => 1,
            });
            put_id(&mut body, m.sender);
            put_id(&mut body, m.recipient);
            body.extend_from_slice(&(m.values.len() as u32).to_le_bytes());
            for v in &m.values {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend(body);
        out
    }

    /// Decodes one record from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), AdbnError> {
        let mut r = Reader { bytes, pos: 0 };
        let len = r.u32()? as usize;
        let end = 4 + len;
        if bytes.len() < end {
            return Err(AdbnError::Wire(format!("record of {len} bytes is truncated")));
        }
        r.bytes = &bytes[..end];
        let sender = r.u32()? as usize;
        let recipient = r.u32()? as usize;
        let time = r.f64()?;
        let count = r.u32()? as usize;
        let mut messages = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let kind = match r.u8()? {
                0 => MessageKind::Pi,
                1 => MessageKind::Lambda,
                k => return Err(AdbnError::Wire(format!("unknown message kind {k}"))),
            };
            let sender = r.id()?;
            let recipient = r.id()?;
            let n = r.u32()? as usize;
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            messages.push(Message {
                kind,
                sender,
                recipient,
                values,
            });
        }
        if r.pos != end {
            return Err(AdbnError::Wire(format!("{} trailing bytes in record", end - r.pos)));
        }
        Ok((
            Self {
                sender,
                recipient,
                time,
                messages,
            },
            end,
        ))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], AdbnError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| AdbnError::Wire("unexpected end of record".into()))?;
        self.pos += N;
        Ok(s.try_into().expect("slice length"))
    }

    fn u8(&mut self) -> Result<u8, AdbnError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, AdbnError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, AdbnError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn id(&mut self) -> Result<SubnodeId, AdbnError> {
        let var = self.u32()?;
        let time = self.f64()?;
        Ok(SubnodeId { var, time })
    }
}
