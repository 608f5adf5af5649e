use std::collections::{BTreeSet, HashMap};

/// End of sequence; doubles as the decoder start token.
pub const EOS: u32 = 0;
pub const UNK: u32 = 1;
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Whitespace token vocabulary shared by source and target sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from the whitespace tokens of `texts`, in sorted
    /// order after the two reserved tokens.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let words: BTreeSet<&str> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|w| *w != EOS_TOKEN && *w != UNK_TOKEN)
            .collect();
        Self::from_tokens(
            [EOS_TOKEN, UNK_TOKEN]
                .into_iter()
                .chain(words)
                .map(str::to_string)
                .collect(),
        )
        .expect("reserved tokens are in place")
    }

    /// Rebuilds from an id-ordered token list (as stored in checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < 2 || tokens[0] != EOS_TOKEN || tokens[1] != UNK_TOKEN {
            return Err("vocabulary must start with <eos>, <unk>".into());
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(format!("invalid token {t:?}"));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(format!("duplicate token {t:?}"));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Out-of-vocabulary words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}
