//! Boolean outcome rules over event presence.
//!
//! Grammar (loosest binding first): `or := and ('|' and)*`,
//! `and := unary ('&' unary)*`, `unary := '!' unary | '(' or ')' | atom`.
//! Atoms are event ids, optionally prefixed by letters (`3`, `x3`, `dtc3`),
//! or the constants `true` / `false`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::types::{EventId, EventSequence, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BooleanRule {
    Const(bool),
    /// True iff the event occurs anywhere after the start token.
    Atom(EventId),
    Not(Box<BooleanRule>),
    And(Vec<BooleanRule>),
    Or(Vec<BooleanRule>),
}

impl BooleanRule {
    pub fn atom(id: EventId) -> Self {
        BooleanRule::Atom(id)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(r: BooleanRule) -> Self {
        BooleanRule::Not(Box::new(r))
    }

    pub fn and(parts: impl IntoIterator<Item = BooleanRule>) -> Self {
        BooleanRule::And(parts.into_iter().collect())
    }

    pub fn or(parts: impl IntoIterator<Item = BooleanRule>) -> Self {
        BooleanRule::Or(parts.into_iter().collect())
    }

    /// Sorted, deduplicated atom set.
    pub fn variables(&self) -> BTreeSet<EventId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<EventId>) {
        match self {
            BooleanRule::Const(_) => {}
            BooleanRule::Atom(a) => {
                out.insert(*a);
            }
            BooleanRule::Not(r) => r.collect_vars(out),
            BooleanRule::And(rs) | BooleanRule::Or(rs) => rs.iter().for_each(|r| r.collect_vars(out)),
        }
    }

    pub fn is_not_free(&self) -> bool {
        match self {
            BooleanRule::Const(_) | BooleanRule::Atom(_) => true,
            BooleanRule::Not(_) => false,
            BooleanRule::And(rs) | BooleanRule::Or(rs) => rs.iter().all(|r| r.is_not_free()),
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for v in self.variables() {
            if !vocab.contains(v) {
                return Err(Error::InvalidRule(format!(
                    "atom {v} is outside the vocabulary of {} events",
                    vocab.size()
                )));
            }
        }
        Ok(())
    }

    /// Evaluates under an arbitrary truth assignment for atoms.
    pub fn eval_with(&self, truth: &impl Fn(EventId) -> bool) -> bool {
        match self {
            BooleanRule::Const(b) => *b,
            BooleanRule::Atom(a) => truth(*a),
            BooleanRule::Not(r) => !r.eval_with(truth),
            BooleanRule::And(rs) => rs.iter().all(|r| r.eval_with(truth)),
            BooleanRule::Or(rs) => rs.iter().any(|r| r.eval_with(truth)),
        }
    }

    /// Evaluates against a presence bitmap indexed by event id; ids past the
    /// end of the bitmap count as absent.
    pub fn eval_presence(&self, present: &[bool]) -> bool {
        self.eval_with(&|a| present.get(a as usize).copied().unwrap_or(false))
    }
}

/// Truth value of `rule` on `seq` under presence semantics.
pub fn rule_eval(rule: &BooleanRule, seq: &EventSequence, vocab: &Vocabulary) -> Result<bool> {
    rule.validate(vocab)?;
    Ok(rule.eval_presence(&seq.presence(vocab.size())))
}

impl fmt::Display for BooleanRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(r: &BooleanRule, parent: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            // precedence: or=1, and=2, unary=3
            match r {
                BooleanRule::Const(b) => write!(f, "{b}"),
                BooleanRule::Atom(a) => write!(f, "x{a}"),
                BooleanRule::Not(inner) => {
                    write!(f, "!")?;
                    go(inner, 3, f)
                }
                BooleanRule::And(rs) | BooleanRule::Or(rs) => {
                    let (prec, sep, empty) = match r {
                        BooleanRule::And(_) => (2, " & ", "true"),
                        _ => (1, " | ", "false"),
                    };
                    if rs.is_empty() {
                        return write!(f, "{empty}");
                    }
                    let wrap = prec < parent && rs.len() > 1;
                    if wrap {
                        write!(f, "(")?;
                    }
                    for (i, x) in rs.iter().enumerate() {
                        if i > 0 {
                            write!(f, "{sep}")?;
                        }
                        go(x, if rs.len() > 1 { prec + 1 } else { parent }, f)?;
                    }
                    if wrap {
                        write!(f, ")")?;
                    }
                    Ok(())
                }
            }
        }
        go(self, 0, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Atom(EventId),
    Const(bool),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '&' => {
                i += if chars.get(i + 1) == Some(&'&') { 2 } else { 1 };
                out.push(Tok::And);
            }
            '|' => {
                i += if chars.get(i + 1) == Some(&'|') { 2 } else { 1 };
                out.push(Tok::Or);
            }
            '!' | '~' => {
                i += 1;
                out.push(Tok::Not);
            }
            '(' => {
                i += 1;
                out.push(Tok::LParen);
            }
            ')' => {
                i += 1;
                out.push(Tok::RParen);
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "true" => out.push(Tok::Const(true)),
                    "false" => out.push(Tok::Const(false)),
                    _ => {
                        let digits = word.trim_start_matches(|c: char| !c.is_ascii_digit());
                        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
                            return Err(Error::InvalidRule(format!("bad atom `{word}`")));
                        }
                        let id = digits
                            .parse::<EventId>()
                            .map_err(|e| Error::InvalidRule(format!("bad atom `{word}`: {e}")))?;
                        out.push(Tok::Atom(id));
                    }
                }
            }
            other => return Err(Error::InvalidRule(format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn or(&mut self) -> Result<BooleanRule> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { BooleanRule::Or(parts) })
    }

    fn and(&mut self) -> Result<BooleanRule> {
        let mut parts = vec![self.unary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { BooleanRule::And(parts) })
    }

    fn unary(&mut self) -> Result<BooleanRule> {
        match self.next() {
            Some(Tok::Not) => Ok(BooleanRule::not(self.unary()?)),
            Some(Tok::LParen) => {
                let inner = self.or()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(Error::InvalidRule("unbalanced parenthesis".into())),
                }
            }
            Some(Tok::Atom(a)) => Ok(BooleanRule::Atom(a)),
            Some(Tok::Const(b)) => Ok(BooleanRule::Const(b)),
            Some(t) => Err(Error::InvalidRule(format!("unexpected token {t:?}"))),
            None => Err(Error::InvalidRule("unexpected end of rule".into())),
        }
    }
}

impl FromStr for BooleanRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let toks = tokenize(s)?;
        if toks.is_empty() {
            return Err(Error::InvalidRule("empty rule".into()));
        }
        let mut p = Parser { toks, pos: 0 };
        let rule = p.or()?;
        if p.pos != p.toks.len() {
            return Err(Error::InvalidRule(format!("trailing input in `{s}`")));
        }
        Ok(rule)
    }
}

impl Serialize for BooleanRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BooleanRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(events: &[EventId]) -> (EventSequence, Vocabulary) {
        let v = Vocabulary::new(10).unwrap();
        (EventSequence::from_events(events, &v).unwrap(), v)
    }

    #[test]
    fn and_not() {
        // A = 1, B = 2
        let (s, v) = seq(&[1, 4, 1]);
        assert!(rule_eval(&"x1 & !x2".parse().unwrap(), &s, &v).unwrap());
    }

    #[test]
    fn or_of_absent_is_false() {
        let (s, v) = seq(&[5, 6]);
        assert!(!rule_eval(&"x1 | x2".parse().unwrap(), &s, &v).unwrap());
    }

    #[test]
    fn nested_tree() {
        // (A & B) | !C on a sequence holding only C
        let (s, v) = seq(&[3]);
        assert!(!rule_eval(&"(x1 & x2) | !x3".parse().unwrap(), &s, &v).unwrap());
    }

    #[test]
    fn start_token_is_not_an_event() {
        let (s, v) = seq(&[1]);
        // cls is id 10 == vocab size, so it cannot even be named as an atom
        assert!(rule_eval(&BooleanRule::atom(10), &s, &v).is_err());
    }

    #[test]
    fn out_of_vocab_atom_rejected() {
        let (s, v) = seq(&[1]);
        let err = rule_eval(&"x1 & x42".parse().unwrap(), &s, &v).unwrap_err();
        assert!(matches!(err, Error::InvalidRule(_)));
    }

    #[test]
    fn variables_sorted_dedup() {
        let r: BooleanRule = "dtc1 & dtc2 & !dtc5 | dtc3 | dtc1".parse().unwrap();
        assert_eq!(r.variables().into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 5]);
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "x1 &", "(x1 | x2", "x1 x2", "x1 $ x2", "abc"] {
            assert!(bad.parse::<BooleanRule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn precedence() {
        let r: BooleanRule = "x1 | x2 & x3".parse().unwrap();
        assert_eq!(
            r,
            BooleanRule::or([BooleanRule::atom(1), BooleanRule::and([BooleanRule::atom(2), BooleanRule::atom(3)])])
        );
    }

    fn arb_rule() -> impl Strategy<Value = BooleanRule> {
        let leaf = prop_oneof![(0u32..6).prop_map(BooleanRule::Atom), any::<bool>().prop_map(BooleanRule::Const)];
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(BooleanRule::not),
                prop::collection::vec(inner.clone(), 1..4).prop_map(BooleanRule::And),
                prop::collection::vec(inner, 1..4).prop_map(BooleanRule::Or),
            ]
        })
    }

    fn arb_not_free() -> impl Strategy<Value = BooleanRule> {
        let leaf = (0u32..6).prop_map(BooleanRule::Atom);
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(BooleanRule::And),
                prop::collection::vec(inner, 1..4).prop_map(BooleanRule::Or),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_parse_preserves_semantics(r in arb_rule(), mask in 0u32..64) {
            let back: BooleanRule = r.to_string().parse().unwrap();
            let truth = |a: EventId| mask & (1 << a) != 0;
            prop_assert_eq!(r.eval_with(&truth), back.eval_with(&truth));
            prop_assert_eq!(r.variables(), back.variables());
        }

        #[test]
        fn not_free_rules_are_monotone(r in arb_not_free(), base in prop::collection::vec(0u32..6, 1..8), extra in 0u32..6) {
            let v = Vocabulary::new(6).unwrap();
            let s1 = EventSequence::from_events(&base, &v).unwrap();
            let mut more = base.clone();
            more.push(extra);
            let s2 = EventSequence::from_events(&more, &v).unwrap();
            if rule_eval(&r, &s1, &v).unwrap() {
                prop_assert!(rule_eval(&r, &s2, &v).unwrap());
            }
        }
    }
}
