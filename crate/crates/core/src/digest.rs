//! 64-bit content digests rendered as 16 hex characters.

use sha2::{Digest, Sha256};
use std::io;

/// Streaming hasher; implements [`io::Write`] so serializers can feed it
/// directly.
#[derive(Default)]
pub struct Digest64 {
    inner: Sha256,
}

impl Digest64 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn update_f64(&mut self, value: f64) {
        self.inner.update(value.to_bits().to_le_bytes());
    }

    pub fn finish(self) -> String {
        let full = self.inner.finalize();
        hex::encode(&full[..8])
    }
}

impl io::Write for Digest64 {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut d = Digest64::new();
    d.update(bytes);
    d.finish()
}
