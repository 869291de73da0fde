//! Word-level vocabulary, tokenization and the grounded input format.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::types::{
    profile_trait_token, Dialogue, Intensity, Intent, Trait, Turn, UserProfile,
    PROFILE_CLOSE_TOKEN, PROFILE_OPEN_TOKEN, REGULAR_PROFILE_TOKEN,
};

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const USER_TOKEN: &str = "<user>";
pub const SYSTEM_TOKEN: &str = "<system>";

pub type TokenId = u32;

pub const UNK_ID: TokenId = 0;
pub const EOS_ID: TokenId = 2;

/// Every reserved token in id order: markers, intents, then profile tokens.
pub fn reserved_tokens() -> &'static [String] {
    static RESERVED: OnceLock<Vec<String>> = OnceLock::new();
    RESERVED.get_or_init(|| {
        let mut out: Vec<String> = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, USER_TOKEN, SYSTEM_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.extend(Intent::ALL.iter().map(|i| i.token().to_string()));
        out.push(REGULAR_PROFILE_TOKEN.to_string());
        out.push(PROFILE_OPEN_TOKEN.to_string());
        out.push(PROFILE_CLOSE_TOKEN.to_string());
        for t in Trait::ALL {
            for i in [Intensity::Low, Intensity::High] {
                out.push(profile_trait_token(t, i));
            }
        }
        out
    })
}

pub fn is_reserved(token: &str) -> bool {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| reserved_tokens().iter().map(String::as_str).collect())
        .contains(token)
}

/// Lowercased whitespace-separated words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Joins the non-reserved tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_reserved(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Dense token/id bijection. Reserved tokens take the first ids; words
/// follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let extra: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !is_reserved(w))
            .collect();
        let tokens: Vec<String> = reserved_tokens().iter().cloned().chain(extra).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    /// Vocabulary of all user-utterance words in the dialogues.
    pub fn from_dialogues<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Self {
        Self::from_words(
            dialogues
                .into_iter()
                .flat_map(|d| d.turns.iter())
                .flat_map(|t| tokenize(&t.user_utterance)),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or the unknown-token id.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|i| self.token(*i).to_string()).collect()
    }

    pub fn intent_of(&self, id: TokenId) -> Option<Intent> {
        Intent::from_token(self.token(id))
    }

    pub(crate) fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        let reserved = reserved_tokens();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err("vocabulary does not start with the reserved tokens".into());
        }
        let index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        if index.len() != tokens.len() {
            return Err("vocabulary contains duplicate tokens".into());
        }
        Ok(Self { tokens, index })
    }
}

/// Layout of a model input: fixed preamble, the most recent turns, the
/// profile tokens and a suffix that opens the user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputFormat {
    pub context_turns: usize,
    pub preamble: Vec<String>,
    pub suffix: Vec<String>,
}

impl Default for InputFormat {
    fn default() -> Self {
        Self {
            context_turns: 4,
            preamble: tokenize("<bos> you are a user talking to a task assistant"),
            suffix: vec![USER_TOKEN.to_string()],
        }
    }
}

/// Tokens of one exchange: user marker, intent, user words, system marker,
/// system words.
pub fn turn_tokens(turn: &Turn) -> Vec<String> {
    let mut out = vec![USER_TOKEN.to_string(), turn.intent.token().to_string()];
    out.extend(tokenize(&turn.user_utterance));
    out.push(SYSTEM_TOKEN.to_string());
    out.extend(tokenize(&turn.system_response));
    out
}

/// Model input: `preamble ++ history ++ profile ++ suffix`, where history
/// keeps only the last `context_turns` turns.
pub fn build_input(history: &[Turn], profile: &UserProfile, format: &InputFormat) -> Vec<String> {
    let start = history.len().saturating_sub(format.context_turns);
    let mut out = format.preamble.clone();
    for turn in &history[start..] {
        out.extend(turn_tokens(turn));
    }
    out.extend(profile.token_sequence());
    out.extend(format.suffix.iter().cloned());
    out
}

/// Target tokens of a user turn: intent, words, end token.
pub fn target_tokens(turn: &Turn) -> Vec<String> {
    let mut out = vec![turn.intent.token().to_string()];
    out.extend(tokenize(&turn.user_utterance));
    out.push(EOS_TOKEN.to_string());
    out
}
