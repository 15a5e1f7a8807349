//! Bit-exact wire frame for codeword transport.
//!
//! Layout: magic `J3CF`, version byte 1, round byte (1|2), role byte
//! (0 = jscc, 1 = check), active length as u32 LE, ratio and snr_db as f32
//! LE, then `active length` payload symbols as f32 LE.

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"J3CF";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRole {
    Jscc,
    Check,
}

impl FrameRole {
    fn to_byte(self) -> u8 {
        match self {
            FrameRole::Jscc => 0,
            FrameRole::Check => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(FrameRole::Jscc),
            1 => Ok(FrameRole::Check),
            other => Err(Error::FrameParse(format!("unknown role byte {other}"))),
        }
    }
}

/// One transmitted codeword with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub round: u8,
    pub role: FrameRole,
    pub ratio: f32,
    pub snr_db: f32,
    pub payload: Vec<f32>,
}

impl Frame {
    pub fn new(round: u8, role: FrameRole, ratio: f32, snr_db: f32, payload: Vec<f32>) -> Result<Self> {
        if round != 1 && round != 2 {
            return Err(Error::Usage(format!("frame round must be 1 or 2, got {round}")));
        }
        Ok(Frame { round, role, ratio, snr_db, payload })
    }

    /// Truncate f64 symbols to the f32 wire precision.
    pub fn from_symbols(
        round: u8,
        role: FrameRole,
        ratio: f64,
        snr_db: f64,
        symbols: &[f64],
    ) -> Result<Self> {
        Frame::new(
            round,
            role,
            ratio as f32,
            snr_db as f32,
            symbols.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn active_len(&self) -> usize {
        self.payload.len()
    }

    pub fn payload_f64(&self) -> Vec<f64> {
        self.payload.iter().map(|&v| v as f64).collect()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.round);
        out.push(self.role.to_byte());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.ratio.to_le_bytes());
        out.extend_from_slice(&self.snr_db.to_le_bytes());
        for &v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::FrameParse(format!(
                "frame too short: {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::FrameParse("bad frame magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::FrameParse(format!("unsupported frame version {}", bytes[4])));
        }
        let round = bytes[5];
        if round != 1 && round != 2 {
            return Err(Error::FrameParse(format!("bad round byte {round}")));
        }
        let role = FrameRole::from_byte(bytes[6])?;
        let active = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let ratio = f32::from_le_bytes(bytes[11..15].try_into().unwrap());
        let snr_db = f32::from_le_bytes(bytes[15..19].try_into().unwrap());
        let expect = HEADER_LEN + active * 4;
        if bytes.len() != expect {
            return Err(Error::FrameParse(format!(
                "payload length mismatch: header says {active} symbols ({expect} bytes), frame has {}",
                bytes.len()
            )));
        }
        let payload = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Frame { round, role, ratio, snr_db, payload })
    }
}
