//! Textual operator specifications: `kind(param=value,...)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Description of a strict-linear wavelength operator, independent of the
/// channel count. Binding it to `p` channels gives a [`super::LinOp`].
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    Identity,
    SavgolSmooth {
        window: usize,
        order: usize,
    },
    SavgolDeriv {
        window: usize,
        order: usize,
        deriv: usize,
    },
    FiniteDiffFirst,
    Detrend {
        degree: usize,
    },
    NwGapDeriv {
        gap: usize,
        segment: usize,
    },
    /// Product of the members, applied right-to-left: `compose(a,b)` is `a·b`.
    Compose(Vec<OperatorSpec>),
    /// Weighted sum of the members.
    Mixture(Vec<(f64, OperatorSpec)>),
}

impl OperatorSpec {
    pub fn is_identity(&self) -> bool {
        matches!(self, OperatorSpec::Identity)
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorSpec::Identity => write!(f, "identity"),
            OperatorSpec::SavgolSmooth { window, order } => {
                write!(f, "savgol_smooth(window={window},order={order})")
            }
            OperatorSpec::SavgolDeriv {
                window,
                order,
                deriv,
            } => write!(f, "savgol_deriv(window={window},order={order},deriv={deriv})"),
            OperatorSpec::FiniteDiffFirst => write!(f, "finite_diff_first"),
            OperatorSpec::Detrend { degree } => write!(f, "detrend(degree={degree})"),
            OperatorSpec::NwGapDeriv { gap, segment } => {
                write!(f, "nw_gap_deriv(gap={gap},segment={segment})")
            }
            OperatorSpec::Compose(members) => {
                write!(f, "compose(")?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{m}")?;
                }
                write!(f, ")")
            }
            OperatorSpec::Mixture(members) => {
                write!(f, "mix(")?;
                for (i, (w, m)) in members.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    // `{:?}` on f64 is the shortest representation that parses back exactly.
                    write!(f, "{w:?}*{m}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parser = Parser {
            src: s.as_bytes(),
            pos: 0,
        };
        let spec = parser.spec()?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(parser.error("trailing characters"));
        }
        Ok(spec)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::config(
            "operator",
            format!(
                "{what} at byte {} in '{}'",
                self.pos,
                String::from_utf8_lossy(self.src)
            ),
        )
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn token(&mut self, accept: impl Fn(u8) -> bool) -> &str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && accept(self.src[self.pos]) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn ident(&mut self) -> Result<String> {
        let id = self.token(|c| c.is_ascii_alphanumeric() || c == b'_').to_string();
        if id.is_empty() {
            return Err(self.error("expected operator name"));
        }
        Ok(id)
    }

    fn number(&mut self) -> Result<f64> {
        let tok = self
            .token(|c| c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E'))
            .to_string();
        tok.parse::<f64>()
            .map_err(|_| self.error(&format!("bad number '{tok}'")))
    }

    fn params(&mut self) -> Result<Vec<(String, usize)>> {
        let mut out = Vec::new();
        if self.peek() != Some(b'(') {
            return Ok(out);
        }
        self.pos += 1;
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            let key = self.ident()?;
            self.expect(b'=')?;
            let tok = self.token(|c| c.is_ascii_digit()).to_string();
            let value = tok
                .parse::<usize>()
                .map_err(|_| self.error(&format!("bad integer for '{key}'")))?;
            out.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.error("expected ',' or ')'")),
            }
        }
    }

    fn spec(&mut self) -> Result<OperatorSpec> {
        let name = self.ident()?;
        match name.as_str() {
            "compose" => {
                self.expect(b'(')?;
                let mut members = vec![self.spec()?];
                while self.peek() == Some(b',') {
                    self.pos += 1;
                    members.push(self.spec()?);
                }
                self.expect(b')')?;
                Ok(OperatorSpec::Compose(members))
            }
            "mix" => {
                self.expect(b'(')?;
                let mut members = Vec::new();
                loop {
                    let w = self.number()?;
                    self.expect(b'*')?;
                    members.push((w, self.spec()?));
                    if self.peek() == Some(b',') {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                self.expect(b')')?;
                Ok(OperatorSpec::Mixture(members))
            }
            _ => {
                let params = self.params()?;
                let get = |key: &str| -> Result<usize> {
                    params
                        .iter()
                        .find(|(k, _)| k == key)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| Error::config(key, format!("missing for {name}")))
                };
                let allowed: &[&str] = match name.as_str() {
                    "identity" | "finite_diff_first" => &[],
                    "savgol_smooth" => &["window", "order"],
                    "savgol_deriv" => &["window", "order", "deriv"],
                    "detrend" => &["degree"],
                    "nw_gap_deriv" => &["gap", "segment"],
                    other => {
                        return Err(Error::config(
                            "operator",
                            format!("unknown operator kind '{other}'"),
                        ))
                    }
                };
                if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
                    return Err(Error::config(k.as_str(), format!("not a parameter of {name}")));
                }
                Ok(match name.as_str() {
                    "identity" => OperatorSpec::Identity,
                    "finite_diff_first" => OperatorSpec::FiniteDiffFirst,
                    "savgol_smooth" => OperatorSpec::SavgolSmooth {
                        window: get("window")?,
                        order: get("order")?,
                    },
                    "savgol_deriv" => OperatorSpec::SavgolDeriv {
                        window: get("window")?,
                        order: get("order")?,
                        deriv: get("deriv")?,
                    },
                    "detrend" => OperatorSpec::Detrend {
                        degree: get("degree")?,
                    },
                    _ => OperatorSpec::NwGapDeriv {
                        gap: get("gap")?,
                        segment: get("segment")?,
                    },
                })
            }
        }
    }
}
