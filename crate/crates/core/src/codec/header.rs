use crate::error::{Error, Result};

/// Whitespace-separated token reader for Netpbm-style headers.
pub(crate) struct HeaderCursor<'a> {
    format: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    pub fn new(format: &'static str, bytes: &'a [u8]) -> Self {
        Self {
            format,
            bytes,
            pos: 0,
        }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    pub fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
            && self.pos - start < 64
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.format, start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(self.format, start, "non-ASCII header token"))
    }

    pub fn positive_int(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let at = self.pos;
        let tok = self.token()?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(
                self.format,
                at,
                format!("invalid {what} {tok:?}"),
            )),
        }
    }

    pub fn float(&mut self, what: &str) -> Result<f64> {
        self.skip_space_and_comments();
        let at = self.pos;
        let tok = self.token()?;
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(self.format, at, format!("invalid {what} {tok:?}")))
    }

    /// Consumes the single whitespace byte that ends a header.
    pub fn single_whitespace(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::format(
                self.format,
                self.pos,
                "expected whitespace before payload",
            )),
        }
    }
}
