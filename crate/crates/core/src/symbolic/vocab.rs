//! Word list for the symbolic modality.
//!
//! Ids are laid out in contiguous blocks, so both directions of the
//! word/id map are arithmetic:
//!
//! ```text
//! 0..4      <PAD> <SOS> <EOS> <PH>
//! 4         |
//! 5..13     add sub mul div pow sin cos neg
//! 13..15    + -
//! 15..20    u_1 .. u_5
//! 20..221   E-100 .. E100
//! 221..     mantissas 0 .. 10^len - 1
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::expr::{BinaryOp, UnaryOp, MAX_DIM};
use super::SymbolicError;

pub const MIN_EXPONENT: i32 = -100;
pub const MAX_EXPONENT: i32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Binary(BinaryOp),
    Unary(UnaryOp),
}

impl Operator {
    pub const ALL: [Operator; 8] = [
        Operator::Binary(BinaryOp::Add),
        Operator::Binary(BinaryOp::Sub),
        Operator::Binary(BinaryOp::Mul),
        Operator::Binary(BinaryOp::Div),
        Operator::Binary(BinaryOp::Pow),
        Operator::Unary(UnaryOp::Sin),
        Operator::Unary(UnaryOp::Cos),
        Operator::Unary(UnaryOp::Neg),
    ];

    pub fn arity(self) -> usize {
        match self {
            Operator::Binary(_) => 2,
            Operator::Unary(_) => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Operator::Binary(BinaryOp::Add) => "add",
            Operator::Binary(BinaryOp::Sub) => "sub",
            Operator::Binary(BinaryOp::Mul) => "mul",
            Operator::Binary(BinaryOp::Div) => "div",
            Operator::Binary(BinaryOp::Pow) => "pow",
            Operator::Unary(UnaryOp::Sin) => "sin",
            Operator::Unary(UnaryOp::Cos) => "cos",
            Operator::Unary(UnaryOp::Neg) => "neg",
        }
    }

    fn index(self) -> u32 {
        Self::ALL.iter().position(|&o| o == self).unwrap() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Word {
    Pad,
    Sos,
    Eos,
    Placeholder,
    Separator,
    Op(Operator),
    /// `true` for the minus sign.
    Sign(bool),
    Var(usize),
    Exponent(i32),
    Mantissa(u32),
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Pad => f.write_str("<PAD>"),
            Word::Sos => f.write_str("<SOS>"),
            Word::Eos => f.write_str("<EOS>"),
            Word::Placeholder => f.write_str("<PH>"),
            Word::Separator => f.write_str("|"),
            Word::Op(op) => f.write_str(op.name()),
            Word::Sign(neg) => f.write_str(if *neg { "-" } else { "+" }),
            Word::Var(i) => write!(f, "u_{}", i + 1),
            Word::Exponent(e) => write!(f, "E{e}"),
            Word::Mantissa(m) => write!(f, "{m}"),
        }
    }
}

const SEP_ID: u32 = 4;
const OP_BASE: u32 = 5;
const SIGN_BASE: u32 = OP_BASE + 8;
const VAR_BASE: u32 = SIGN_BASE + 2;
const EXP_BASE: u32 = VAR_BASE + MAX_DIM as u32;
const MANT_BASE: u32 = EXP_BASE + (MAX_EXPONENT - MIN_EXPONENT + 1) as u32;

pub const PAD_ID: u32 = 0;
pub const SOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const PLACEHOLDER_ID: u32 = 3;

/// Bijective word/id map for a given mantissa length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    mantissa_len: u32,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(3)
    }
}

impl Vocabulary {
    pub fn new(mantissa_len: u32) -> Self {
        assert!((1..=4).contains(&mantissa_len), "mantissa length must be in 1..=4");
        Self { mantissa_len }
    }

    pub fn mantissa_len(&self) -> u32 {
        self.mantissa_len
    }

    pub fn mantissa_count(&self) -> u32 {
        10u32.pow(self.mantissa_len)
    }

    pub fn len(&self) -> usize {
        (MANT_BASE + self.mantissa_count()) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, w: Word) -> u32 {
        match w {
            Word::Pad => PAD_ID,
            Word::Sos => SOS_ID,
            Word::Eos => EOS_ID,
            Word::Placeholder => PLACEHOLDER_ID,
            Word::Separator => SEP_ID,
            Word::Op(op) => OP_BASE + op.index(),
            Word::Sign(neg) => SIGN_BASE + neg as u32,
            Word::Var(i) => {
                assert!(i < MAX_DIM, "variable index out of range");
                VAR_BASE + i as u32
            }
            Word::Exponent(e) => {
                assert!((MIN_EXPONENT..=MAX_EXPONENT).contains(&e));
                EXP_BASE + (e - MIN_EXPONENT) as u32
            }
            Word::Mantissa(m) => {
                assert!(m < self.mantissa_count(), "mantissa out of range");
                MANT_BASE + m
            }
        }
    }

    pub fn word(&self, id: u32) -> Option<Word> {
        Some(match id {
            PAD_ID => Word::Pad,
            SOS_ID => Word::Sos,
            EOS_ID => Word::Eos,
            PLACEHOLDER_ID => Word::Placeholder,
            SEP_ID => Word::Separator,
            _ if id < SIGN_BASE => Word::Op(Operator::ALL[(id - OP_BASE) as usize]),
            _ if id < VAR_BASE => Word::Sign(id - SIGN_BASE == 1),
            _ if id < EXP_BASE => Word::Var((id - VAR_BASE) as usize),
            _ if id < MANT_BASE => Word::Exponent((id - EXP_BASE) as i32 + MIN_EXPONENT),
            _ if (id as usize) < self.len() => Word::Mantissa(id - MANT_BASE),
            _ => return None,
        })
    }

    pub fn parse_word(&self, s: &str) -> Result<Word, SymbolicError> {
        let unknown = || SymbolicError::UnknownWord(s.to_string());
        let w = match s {
            "<PAD>" => Word::Pad,
            "<SOS>" => Word::Sos,
            "<EOS>" => Word::Eos,
            "<PH>" => Word::Placeholder,
            "|" => Word::Separator,
            "+" => Word::Sign(false),
            "-" => Word::Sign(true),
            _ => {
                if let Some(op) = Operator::ALL.iter().find(|o| o.name() == s) {
                    Word::Op(*op)
                } else if let Some(rest) = s.strip_prefix("u_") {
                    let i: usize = rest.parse().map_err(|_| unknown())?;
                    if i == 0 || i > MAX_DIM {
                        return Err(unknown());
                    }
                    Word::Var(i - 1)
                } else if let Some(rest) = s.strip_prefix('E') {
                    let e: i32 = rest.parse().map_err(|_| unknown())?;
                    if !(MIN_EXPONENT..=MAX_EXPONENT).contains(&e) {
                        return Err(unknown());
                    }
                    Word::Exponent(e)
                } else {
                    // Mantissa words are plain decimal integers without sign.
                    if !s.bytes().all(|b| b.is_ascii_digit()) || s.is_empty() {
                        return Err(unknown());
                    }
                    let m: u32 = s.parse().map_err(|_| unknown())?;
                    if m >= self.mantissa_count() || (s.len() > 1 && s.starts_with('0')) {
                        return Err(unknown());
                    }
                    Word::Mantissa(m)
                }
            }
        };
        Ok(w)
    }

    /// Every word in id order.
    pub fn words(&self) -> impl Iterator<Item = Word> + '_ {
        (0..self.len() as u32).map(|id| self.word(id).unwrap())
    }

    /// SHA-256 over the newline-joined word list; identifies the vocabulary
    /// in checkpoint headers.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for w in self.words() {
            h.update(w.to_string().as_bytes());
            h.update(b"\n");
        }
        h.finalize().into()
    }
}

/// A sequence of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `<SOS> .. <EOS>` framing used by the symbol decoder.
    pub fn framed(&self) -> TokenSeq {
        let mut v = Vec::with_capacity(self.0.len() + 2);
        v.push(SOS_ID);
        v.extend_from_slice(&self.0);
        v.push(EOS_ID);
        TokenSeq(v)
    }

    /// Drop a leading `<SOS>` and everything from the first `<EOS>` on.
    pub fn unframed(&self) -> TokenSeq {
        let start = usize::from(self.0.first() == Some(&SOS_ID));
        let body = &self.0[start..];
        let end = body.iter().position(|&t| t == EOS_ID).unwrap_or(body.len());
        TokenSeq(body[..end].to_vec())
    }

    /// Whitespace-separated word rendering.
    pub fn to_words(&self, vocab: &Vocabulary) -> String {
        self.0
            .iter()
            .map(|&id| match vocab.word(id) {
                Some(w) => w.to_string(),
                None => format!("<UNK:{id}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_words(vocab: &Vocabulary, s: &str) -> Result<TokenSeq, SymbolicError> {
        s.split_whitespace()
            .map(|w| vocab.parse_word(w).map(|w| vocab.id(w)))
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSeq)
    }
}
