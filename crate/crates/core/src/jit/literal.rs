//! Text form: `compile m { inline: [4->f, 7->g(2->h)]; opt: [bp@3:else, oc@5:if] }` or `empty`.

use super::{BranchOpt, Directive, InlineTree, OptKind, Pref};
use crate::bytecode::Ident;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("directive literal, column {col}: {msg}")]
pub struct LiteralError {
    pub col: usize,
    pub msg: String,
}

struct Cur<'a> {
    s: &'a [u8],
    k: usize,
}

impl<'a> Cur<'a> {
    fn ws(&mut self) {
        while self.k < self.s.len() && self.s[self.k].is_ascii_whitespace() {
            self.k += 1;
        }
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, LiteralError> {
        Err(LiteralError {
            col: self.k + 1,
            msg: msg.into(),
        })
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.k).copied()
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        if self.s[self.k..].starts_with(tok.as_bytes()) {
            self.k += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), LiteralError> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.fail(format!("expected `{tok}`"))
        }
    }

    fn word(&mut self) -> Result<&'a str, LiteralError> {
        self.ws();
        let start = self.k;
        while self.k < self.s.len() {
            let c = self.s[self.k];
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'$' || c == b'.' {
                self.k += 1;
            } else {
                break;
            }
        }
        if start == self.k {
            return self.fail("expected a name");
        }
        Ok(std::str::from_utf8(&self.s[start..self.k]).unwrap_or(""))
    }

    fn num(&mut self) -> Result<usize, LiteralError> {
        let w = self.word()?;
        match w.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.fail(format!("expected a point, found `{w}`")),
        }
    }

    fn children(&mut self) -> Result<Vec<(usize, InlineTree)>, LiteralError> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(b']') | Some(b')') => return Ok(out),
                None => return self.fail("unterminated inline list"),
                _ => {}
            }
            let site = self.num()?;
            self.expect("->")?;
            let name: Ident = Arc::from(self.word()?);
            let mut node = InlineTree::leaf(&name);
            if self.eat("(") {
                node.children = self.children()?;
                self.expect(")")?;
            }
            out.push((site, node));
            if !self.eat(",") {
                return Ok(out);
            }
        }
    }

    fn opts(&mut self) -> Result<Vec<BranchOpt>, LiteralError> {
        let mut out = Vec::new();
        loop {
            if matches!(self.peek(), Some(b']')) {
                return Ok(out);
            }
            let kind = match self.word()? {
                "bp" => OptKind::Bp,
                "oc" => OptKind::Oc,
                other => return self.fail(format!("unknown optimization `{other}`")),
            };
            self.expect("@")?;
            let point = self.num()?;
            self.expect(":")?;
            let pref = match self.word()? {
                "if" => Pref::If,
                "else" => Pref::Else,
                other => return self.fail(format!("unknown preference `{other}`")),
            };
            out.push(BranchOpt { kind, point, pref });
            if !self.eat(",") {
                return Ok(out);
            }
        }
    }
}

pub fn parse_directive(text: &str) -> Result<Directive, LiteralError> {
    let mut c = Cur {
        s: text.as_bytes(),
        k: 0,
    };
    let kw = c.word()?;
    let d = match kw {
        "empty" => Directive::Empty,
        "compile" => {
            let method: Ident = Arc::from(c.word()?);
            let mut tree = InlineTree::leaf(&method);
            let mut omega = Vec::new();
            c.expect("{")?;
            while !c.eat("}") {
                match c.word()? {
                    "inline" => {
                        c.expect(":")?;
                        c.expect("[")?;
                        tree.children = c.children()?;
                        c.expect("]")?;
                    }
                    "opt" => {
                        c.expect(":")?;
                        c.expect("[")?;
                        omega = c.opts()?;
                        c.expect("]")?;
                    }
                    other => return c.fail(format!("unknown field `{other}`")),
                }
                c.eat(";");
            }
            Directive::Compile { method, tree, omega }
        }
        other => return c.fail(format!("expected `compile` or `empty`, found `{other}`")),
    };
    if c.peek().is_some() {
        return c.fail("trailing input");
    }
    Ok(d)
}
