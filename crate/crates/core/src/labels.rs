use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest edit sequence a sample may carry.
pub const MAX_EDITS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeLabel {
    Eyes,
    Lips,
    Hair,
    Eyebrows,
    Glasses,
    Hat,
}

impl AttributeLabel {
    pub const ALL: [AttributeLabel; 6] = [
        AttributeLabel::Eyes,
        AttributeLabel::Lips,
        AttributeLabel::Hair,
        AttributeLabel::Eyebrows,
        AttributeLabel::Glasses,
        AttributeLabel::Hat,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttributeLabel::Eyes => "eyes",
            AttributeLabel::Lips => "lips",
            AttributeLabel::Hair => "hair",
            AttributeLabel::Eyebrows => "eyebrows",
            AttributeLabel::Glasses => "glasses",
            AttributeLabel::Hat => "hat",
        }
    }
}

impl fmt::Display for AttributeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attribute {s:?}")))
    }
}

/// Decoder vocabulary: six attributes, then EOS, then SOS.
///
/// The output head scores the first [`Token::OUTPUTS`] tokens; SOS is
/// input-only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Attr(AttributeLabel),
    Eos,
    Sos,
}

impl Token {
    pub const OUTPUTS: usize = 7;
    pub const EMBEDDINGS: usize = 8;

    pub fn index(self) -> usize {
        match self {
            Token::Attr(a) => a.index(),
            Token::Eos => 6,
            Token::Sos => 7,
        }
    }

    pub fn from_index(i: usize) -> Option<Token> {
        match i {
            0..=5 => AttributeLabel::from_index(i).map(Token::Attr),
            6 => Some(Token::Eos),
            7 => Some(Token::Sos),
            _ => None,
        }
    }
}

/// Ordered attribute edits, at most [`MAX_EDITS`] long. Empty means unedited.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeLabel>", into = "Vec<AttributeLabel>")]
pub struct EditSequence(Vec<AttributeLabel>);

impl EditSequence {
    pub fn new(attrs: Vec<AttributeLabel>) -> Result<Self> {
        if attrs.len() > MAX_EDITS {
            return Err(Error::invalid(format!(
                "edit sequence of length {} exceeds {MAX_EDITS}",
                attrs.len()
            )));
        }
        Ok(EditSequence(attrs))
    }

    pub fn empty() -> Self {
        EditSequence(Vec::new())
    }

    pub fn as_slice(&self) -> &[AttributeLabel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_repeats(&self) -> bool {
        self.0
            .iter()
            .enumerate()
            .any(|(i, a)| self.0[..i].contains(a))
    }

    /// Teacher-forcing decoder inputs `[SOS, a1..aL]`.
    pub fn decoder_inputs(&self) -> Vec<Token> {
        std::iter::once(Token::Sos)
            .chain(self.0.iter().map(|&a| Token::Attr(a)))
            .collect()
    }

    /// Teacher-forcing targets `[a1..aL, EOS]`.
    pub fn decoder_targets(&self) -> Vec<Token> {
        self.0
            .iter()
            .map(|&a| Token::Attr(a))
            .chain(std::iter::once(Token::Eos))
            .collect()
    }
}

impl TryFrom<Vec<AttributeLabel>> for EditSequence {
    type Error = Error;

    fn try_from(v: Vec<AttributeLabel>) -> Result<Self> {
        EditSequence::new(v)
    }
}

impl From<EditSequence> for Vec<AttributeLabel> {
    fn from(s: EditSequence) -> Self {
        s.0
    }
}

impl fmt::Display for EditSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|a| a.name()).collect();
        write!(f, "[{}]", names.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_layout() {
        assert_eq!(AttributeLabel::ALL.len(), 6);
        for i in 0..Token::EMBEDDINGS {
            assert_eq!(Token::from_index(i).unwrap().index(), i);
        }
        assert_eq!(Token::Eos.index(), Token::OUTPUTS - 1);
    }

    #[test]
    fn teacher_forcing_pairs() {
        let s = EditSequence::new(vec![AttributeLabel::Hair, AttributeLabel::Lips]).unwrap();
        assert_eq!(
            s.decoder_inputs(),
            vec![Token::Sos, Token::Attr(AttributeLabel::Hair), Token::Attr(AttributeLabel::Lips)]
        );
        assert_eq!(
            s.decoder_targets(),
            vec![Token::Attr(AttributeLabel::Hair), Token::Attr(AttributeLabel::Lips), Token::Eos]
        );
        assert_eq!(EditSequence::empty().decoder_targets(), vec![Token::Eos]);
    }

    #[test]
    fn length_cap() {
        assert!(EditSequence::new(vec![AttributeLabel::Hat; 5]).is_err());
        assert!(EditSequence::new(vec![AttributeLabel::Hat; 4]).unwrap().has_repeats());
    }

    #[test]
    fn parses_names() {
        assert_eq!("eyebrows".parse::<AttributeLabel>().unwrap(), AttributeLabel::Eyebrows);
        assert!("nose".parse::<AttributeLabel>().is_err());
    }
}
