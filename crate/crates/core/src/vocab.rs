use std::collections::HashMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASKED: usize = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<masked>"];

/// Token <-> id map with three reserved ids that raw text never produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self {
            ids: HashMap::new(),
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.intern(t.as_ref());
        }
        v
    }

    /// Id for `token`, adding it if new. Reserved spellings are treated as
    /// ordinary text and get fresh ids.
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_never_come_from_text() {
        let mut v = Vocab::new();
        let a = v.intern("a");
        let masked = v.intern("<masked>");
        assert!(a > MASKED);
        assert!(masked > MASKED);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.intern("a"), a);
        assert_eq!(v.token(a), "a");
        assert_eq!(v.tokens(), &["a".to_string(), "<masked>".to_string()]);
    }
}
