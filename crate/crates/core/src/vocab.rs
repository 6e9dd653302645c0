use std::collections::HashMap;

use crate::error::{Result, ScanError};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
const SPECIALS: usize = 3;

pub const DIGITS: &str = "0123456789";
pub const ALPHANUMERIC: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

/// Output symbols: `<pad>`, `<s>`, `</s>` at indices 0..3, then the charset
/// in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn new(charset: &str) -> Result<Self> {
        let mut index = HashMap::new();
        let mut symbols = Vec::new();
        for c in charset.chars() {
            if c.is_whitespace() || c.is_control() {
                return Err(ScanError::InvalidArgument(format!("unusable charset symbol {c:?}")));
            }
            if index.insert(c, SPECIALS + symbols.len()).is_some() {
                return Err(ScanError::InvalidArgument(format!("duplicate charset symbol {c:?}")));
            }
            symbols.push(c);
        }
        if symbols.is_empty() {
            return Err(ScanError::Empty("charset"));
        }
        Ok(Vocabulary { symbols, index })
    }

    pub fn alphanumeric() -> Self {
        Self::new(ALPHANUMERIC).expect("static charset")
    }

    /// Total size including the three specials.
    pub fn len(&self) -> usize {
        SPECIALS + self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn charset(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn is_special(&self, token: usize) -> bool {
        token < SPECIALS
    }

    pub fn token(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(ScanError::UnknownChar(c))
    }

    pub fn symbol(&self, token: usize) -> Option<char> {
        token.checked_sub(SPECIALS).and_then(|i| self.symbols.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.token(c)).collect()
    }

    /// Characters of `tokens` up to the first `</s>`; other specials are dropped.
    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != END)
            .filter_map(|&t| self.symbol(t))
            .collect()
    }

    pub fn describe(&self, token: usize) -> String {
        match token {
            PAD => "<pad>".into(),
            START => "<s>".into(),
            END => "</s>".into(),
            t => self.symbol(t).map(String::from).unwrap_or_else(|| format!("<{t}?>")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_dense() {
        let v = Vocabulary::alphanumeric();
        assert_eq!(v.len(), 39);
        assert_eq!(v.token('0').unwrap(), 3);
        assert_eq!(v.token('Z').unwrap(), 38);
        assert_eq!(v.describe(END), "</s>");
        assert!((0..v.len()).all(|t| v.is_special(t) || v.symbol(t).is_some()));
    }

    #[test]
    fn round_trip_stops_at_end() {
        let v = Vocabulary::new(DIGITS).unwrap();
        let mut t = v.encode("4096").unwrap();
        t.push(END);
        t.push(v.token('1').unwrap());
        assert_eq!(v.decode(&t), "4096");
        assert!(matches!(v.encode("4a"), Err(ScanError::UnknownChar('a'))));
    }

    #[test]
    fn rejects_bad_charsets() {
        assert!(Vocabulary::new("").is_err());
        assert!(Vocabulary::new("AA").is_err());
        assert!(Vocabulary::new("A B").is_err());
    }
}
