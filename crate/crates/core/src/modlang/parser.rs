use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::lexer::{lex, Tok, Token};
use super::{ModlangError, ModulationIR, ModulationOp, Position, SkipTarget, SpeedSetting};
use crate::labels::{SyntheticLabel, TargetRef};
use crate::scene::{Color, Shape};

const VERBS: &[&str] = &["stack", "grasp", "move", "bring", "place", "put", "take", "do"];
const CONNECTIVES: &[&str] = &[
    "and", "then", "before", "after", "because", "so", "while", "please", "since", "instead", "now",
];
const MOTIONS: &[&str] = &["stepping", "walking", "going", "moving", "driving", "passing"];
const MOTION_PREPS: &[&str] = &["on", "over", "across", "near", "into"];
const DESTINATION_PREPS: &[&str] = &["into", "onto", "on", "in"];
const OTHER_WORDS: &[&str] = &[
    "not", "but", "use", "be", "gentle", "slow", "fast", "speed", "avoid", "skip", "stop", "abort",
    "object", "it", "the", "other", "one", "labeled", "first", "last",
];

fn known_word(w: &str) -> bool {
    Color::from_word(w).is_some()
        || Shape::from_word(w).is_some()
        || [VERBS, CONNECTIVES, MOTIONS, MOTION_PREPS, DESTINATION_PREPS, OTHER_WORDS]
            .iter()
            .any(|set| set.contains(&w))
}

/// Which reference of a command a span belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefRole {
    /// The replaced object of a substitution.
    Old,
    /// The replacement object of a substitution.
    New,
    /// The single object of reorder, skip or avoid.
    Target,
}

/// Byte span of a target reference in the original command text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefSpan {
    pub role: RefRole,
    pub target: TargetRef,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCommand {
    pub ir: ModulationIR,
    pub refs: Vec<RefSpan>,
}

pub fn parse(text: &str) -> Result<ModulationIR, ModlangError> {
    parse_with_spans(text).map(|p| p.ir)
}

pub fn parse_with_spans(text: &str) -> Result<ParsedCommand, ModlangError> {
    let toks = lex(text);
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: text.len(),
        refs: Vec::new(),
    };
    let op = p.command()?;
    Ok(ParsedCommand {
        ir: ModulationIR::new(op, text),
        refs: p.refs,
    })
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    end: usize,
    refs: Vec<RefSpan>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_word(&self) -> Option<&str> {
        self.peek().and_then(Token::word)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.span.start)
    }

    fn last_end(&self) -> usize {
        self.toks[self.pos - 1].span.end
    }

    fn eat(&mut self, words: &[&str]) -> Option<String> {
        let w = self.peek_word().filter(|w| words.contains(w))?.to_string();
        self.pos += 1;
        Some(w)
    }

    /// Error at the current token; unknown vocabulary is reported as such.
    fn fail(&self, rule: &'static str) -> ModlangError {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), span }) if !known_word(w) && !w.contains('_') => {
                ModlangError::UnknownWord {
                    word: w.clone(),
                    offset: span.start,
                }
            }
            _ => ModlangError::Parse {
                offset: self.offset(),
                rule,
            },
        }
    }

    fn command(&mut self) -> Result<ModulationOp, ModlangError> {
        self.eat(&["please"]);
        let Some(first) = self.peek_word().map(str::to_string) else {
            return Err(ModlangError::Parse {
                offset: self.offset(),
                rule: "command",
            });
        };
        let op = match first.as_str() {
            "not" | "use" => self.substitute()?,
            "be" | "gentle" | "slow" | "fast" | "speed" => return self.speed(),
            "avoid" => self.avoid()?,
            "skip" => self.skip()?,
            "stop" | "abort" => {
                self.pos = self.toks.len();
                return Ok(ModulationOp::Abort);
            }
            w if VERBS.contains(&w) || self.at_target_start() => self.reorder()?,
            _ => {
                return Err(ModlangError::Parse {
                    offset: self.offset(),
                    rule: "command",
                })
            }
        };
        self.rest()?;
        Ok(op)
    }

    fn at_target_start(&self) -> bool {
        self.peek_word().is_some_and(|w| {
            matches!(w, "object" | "it" | "the") || Color::from_word(w).is_some() || Shape::from_word(w).is_some()
        })
    }

    /// Optional trailing clause introduced by a comma or connective.
    fn rest(&mut self) -> Result<(), ModlangError> {
        match self.peek() {
            None => Ok(()),
            Some(Token { tok: Tok::Comma, .. }) => {
                self.pos = self.toks.len();
                Ok(())
            }
            Some(t) if t.word().is_some_and(|w| CONNECTIVES.contains(&w)) => {
                self.pos = self.toks.len();
                Ok(())
            }
            _ => Err(self.fail("end of command")),
        }
    }

    fn target(&mut self, role: RefRole) -> Result<TargetRef, ModlangError> {
        let start = self.offset();
        let target = self.target_inner()?;
        self.refs.push(RefSpan {
            role,
            target: target.clone(),
            span: start..self.last_end(),
        });
        Ok(target)
    }

    fn target_inner(&mut self) -> Result<TargetRef, ModlangError> {
        if self.eat(&["object"]).is_some() {
            return self.label_number();
        }
        if self.eat(&["it"]).is_some() {
            return Ok(TargetRef::HeldTarget);
        }
        let had_the = self.eat(&["the"]).is_some();
        if had_the && self.eat(&["other"]).is_some() {
            let shape = self.shape().ok_or_else(|| self.fail("shape"))?;
            return Ok(TargetRef::OtherOf { shape });
        }
        let color = self.color();
        let shape = self.shape();
        let one = self.eat(&["one"]).is_some();
        if color.is_none() && shape.is_none() {
            let _ = one;
            return Err(self.fail("target"));
        }
        if self.eat(&["labeled"]).is_some() {
            if self.eat(&["object"]).is_none() {
                return Err(self.fail("\"object\" after \"labeled\""));
            }
            return self.label_number();
        }
        Ok(TargetRef::ByAttributes { color, shape })
    }

    fn label_number(&mut self) -> Result<TargetRef, ModlangError> {
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Hash)) {
            self.pos += 1;
        }
        match self.peek() {
            Some(Token { tok: Tok::Number(n), .. }) if !n.contains('.') => {
                let label = n.parse().ok().and_then(SyntheticLabel::new);
                match label {
                    Some(label) => {
                        self.pos += 1;
                        Ok(TargetRef::ByLabel { label })
                    }
                    None => Err(self.fail("positive label number")),
                }
            }
            _ => Err(self.fail("label number")),
        }
    }

    fn color(&mut self) -> Option<Color> {
        let c = self.peek_word().and_then(Color::from_word)?;
        self.pos += 1;
        Some(c)
    }

    fn shape(&mut self) -> Option<Shape> {
        let s = self.peek_word().and_then(Shape::from_word)?;
        self.pos += 1;
        Some(s)
    }

    fn reorder(&mut self) -> Result<ModulationOp, ModlangError> {
        self.eat(VERBS);
        let target = self.target(RefRole::Target)?;
        if self.eat(DESTINATION_PREPS).is_some() {
            // the destination is implied by the task; parsed for validation only
            self.target_inner()?;
        }
        let position = match self.eat(&["first", "last"]).as_deref() {
            Some("first") => Position::First,
            Some(_) => Position::Last,
            None => return Err(self.fail("\"first\" or \"last\"")),
        };
        Ok(ModulationOp::Reorder { target, position })
    }

    fn substitute(&mut self) -> Result<ModulationOp, ModlangError> {
        if self.eat(&["use"]).is_some() {
            let new = self.target(RefRole::New)?;
            self.eat(&["instead"]);
            return Ok(ModulationOp::SubstituteTarget { old: None, new });
        }
        self.eat(&["not"]);
        let old = self.target(RefRole::Old)?;
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Comma)) {
            self.pos += 1;
        }
        if self.eat(&["but", "use"]).is_none() {
            return Err(self.fail("\"but\" or \"use\""));
        }
        let new = self.target(RefRole::New)?;
        Ok(ModulationOp::SubstituteTarget { old: Some(old), new })
    }

    fn speed(&mut self) -> Result<ModulationOp, ModlangError> {
        if self.eat(&["speed"]).is_some() {
            let scale = match self.peek() {
                Some(Token { tok: Tok::Number(n), .. }) => n.parse::<f64>().ok(),
                _ => None,
            };
            return match scale {
                Some(s) if s > 0.0 && s <= 1.0 => {
                    self.pos += 1;
                    self.rest()?;
                    Ok(ModulationOp::SetSpeed { speed: SpeedSetting::Scale(s) })
                }
                _ => Err(self.fail("speed scale in (0, 1]")),
            };
        }
        self.eat(&["be"]);
        let speed = match self.eat(&["gentle", "slow", "fast"]).as_deref() {
            Some("gentle") => SpeedSetting::Gentle,
            Some("slow") => SpeedSetting::Slow,
            Some(_) => SpeedSetting::Fast,
            None => return Err(self.fail("\"gentle\", \"slow\" or \"fast\"")),
        };
        self.pos = self.toks.len();
        Ok(ModulationOp::SetSpeed { speed })
    }

    fn avoid(&mut self) -> Result<ModulationOp, ModlangError> {
        self.eat(&["avoid"]);
        if self.eat(MOTIONS).is_some() {
            self.eat(MOTION_PREPS);
        }
        let target = self.target(RefRole::Target)?;
        Ok(ModulationOp::AddAvoid { target })
    }

    fn skip(&mut self) -> Result<ModulationOp, ModlangError> {
        self.eat(&["skip"]);
        if self.at_target_start() {
            let target = self.target(RefRole::Target)?;
            return Ok(ModulationOp::SkipSubtask { target: SkipTarget::Target(target) });
        }
        match self.peek_word() {
            Some(name) if name.contains('_') => {
                let name = name.to_string();
                self.pos += 1;
                Ok(ModulationOp::SkipSubtask { target: SkipTarget::Subtask(name) })
            }
            _ => Err(self.fail("target or subtask name")),
        }
    }
}
