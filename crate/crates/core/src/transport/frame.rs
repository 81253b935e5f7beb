use bytes::Bytes;

use super::TransportError;

/// Kind byte, correlation id, payload length.
pub const FRAME_HEADER_LEN: usize = 1 + 8 + 4;
pub const MAX_FRAME_PAYLOAD: usize = crate::codec::MAX_FIELD_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum FrameKind {
    /// One block per frame; an empty payload closes the stream.
    SendBlocks = 1,
    ReqAvail = 2,
    ReqIntegrity = 3,
    WilburQuery = 4,
    Response = 5,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        [
            Self::SendBlocks,
            Self::ReqAvail,
            Self::ReqIntegrity,
            Self::WilburQuery,
            Self::Response,
        ]
        .into_iter()
        .find(|k| *k as u8 == b)
    }
}

/// `kind (1) ∥ correlation (8, BE) ∥ length (4, BE) ∥ payload`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub correlation: u64,
    pub payload: Bytes,
}

impl Frame {
    pub fn new(kind: FrameKind, correlation: u64, payload: impl Into<Bytes>) -> Self {
        Self {
            kind,
            correlation,
            payload: payload.into(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len()
    }

    pub fn header(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut h = [0u8; FRAME_HEADER_LEN];
        h[0] = self.kind as u8;
        h[1..9].copy_from_slice(&self.correlation.to_be_bytes());
        h[9..13].copy_from_slice(&(self.payload.len() as u32).to_be_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.encoded_len());
        v.extend_from_slice(&self.header());
        v.extend_from_slice(&self.payload);
        v
    }

    /// Parses a header into (kind, correlation, payload length).
    pub fn parse_header(h: &[u8; FRAME_HEADER_LEN]) -> Result<(FrameKind, u64, usize), TransportError> {
        let kind = FrameKind::from_byte(h[0]).ok_or_else(|| TransportError::Malformed(format!("kind {}", h[0])))?;
        let correlation = u64::from_be_bytes(h[1..9].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(h[9..13].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME_PAYLOAD {
            return Err(TransportError::Malformed(format!("payload of {len} bytes")));
        }
        Ok((kind, correlation, len))
    }

    /// Decodes exactly one frame from `buf`.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, TransportError> {
        let h: &[u8; FRAME_HEADER_LEN] = buf
            .get(..FRAME_HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| TransportError::Malformed("short header".into()))?;
        let (kind, correlation, len) = Self::parse_header(h)?;
        let body = &buf[FRAME_HEADER_LEN..];
        if body.len() != len {
            return Err(TransportError::Malformed(format!(
                "declared {len} payload bytes, found {}",
                body.len()
            )));
        }
        Ok(Self::new(kind, correlation, Bytes::copy_from_slice(body)))
    }

    pub fn read_from(r: &mut impl std::io::Read) -> std::io::Result<Self> {
        let mut h = [0u8; FRAME_HEADER_LEN];
        r.read_exact(&mut h)?;
        let (kind, correlation, len) = Self::parse_header(&h)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Self::new(kind, correlation, payload))
    }

    pub fn write_to(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        w.write_all(&self.header())?;
        w.write_all(&self.payload)?;
        w.flush()
    }
}
