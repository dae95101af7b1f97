use thiserror::Error;

use super::AgentTurn;
use crate::shopsim::{Action, MouseButton};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing <{0}> block")]
    MissingTag(&'static str),
    #[error("more than one <{0}> block")]
    DuplicateTag(&'static str),
    #[error("unterminated <{0}> block")]
    UnterminatedTag(&'static str),
    #[error("empty action")]
    EmptyAction,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("malformed arguments: {0}")]
    MalformedArguments(String),
}

fn block(text: &str, tag: &'static str) -> Result<Option<String>, ParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let count = text.matches(&open).count();
    if count == 0 {
        return Ok(None);
    }
    if count > 1 {
        return Err(ParseError::DuplicateTag(tag));
    }
    let start = text.find(&open).expect("counted") + open.len();
    let end = text[start..].find(&close).ok_or(ParseError::UnterminatedTag(tag))?;
    Ok(Some(text[start..start + end].trim().to_string()))
}

/// Extracts the think, memory and action blocks from a model answer.
/// The action block is required; the others default to empty.
pub fn parse_response(text: &str) -> Result<AgentTurn, ParseError> {
    let think = block(text, "think")?.unwrap_or_default();
    let memory = block(text, "memory")?.unwrap_or_default();
    let action = block(text, "action")?.ok_or(ParseError::MissingTag("action"))?;
    Ok(AgentTurn {
        think,
        memory,
        action: parse_action(&action)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Num(f64),
    List(Vec<Value>),
}

/// Positional and keyword arguments of one call.
type Arguments = (Vec<Value>, Vec<(String, Value)>);

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

fn malformed(msg: impl Into<String>) -> ParseError {
    ParseError::MalformedArguments(msg.into())
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn eat(&mut self, ch: char) -> bool {
        self.skip_ws();
        if self.chars.peek() == Some(&ch) {
            self.chars.next();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let mut out = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                out.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        out
    }

    fn string(&mut self, quote: char) -> Result<String, ParseError> {
        let mut out = String::new();
        loop {
            match self.chars.next() {
                None => return Err(malformed("unterminated string")),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c @ ('\\' | '\'' | '"')) => out.push(c),
                    Some(c) => {
                        out.push('\\');
                        out.push(c);
                    }
                    None => return Err(malformed("unterminated string")),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        self.skip_ws();
        match self.chars.peek().copied() {
            Some(q @ ('\'' | '"')) => {
                self.chars.next();
                Ok(Value::Str(self.string(q)?))
            }
            Some('[') => {
                self.chars.next();
                let mut items = Vec::new();
                if self.eat(']') {
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value()?);
                    if self.eat(']') {
                        return Ok(Value::List(items));
                    }
                    if !self.eat(',') {
                        return Err(malformed("expected `,` or `]` in list"));
                    }
                    if self.eat(']') {
                        return Ok(Value::List(items));
                    }
                }
            }
            Some(c) if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() => {
                let mut text = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                        text.push(c);
                        self.chars.next();
                    } else {
                        break;
                    }
                }
                text.parse::<f64>()
                    .map(Value::Num)
                    .map_err(|_| malformed(format!("bad number `{text}`")))
            }
            Some(c) => Err(malformed(format!("unexpected `{c}`"))),
            None => Err(malformed("unexpected end of input")),
        }
    }

    /// Parses `(arg, ..., name=value, ...)` after the action name.
    fn arguments(&mut self) -> Result<Arguments, ParseError> {
        if !self.eat('(') {
            return Err(malformed("expected `(`"));
        }
        let mut positional = Vec::new();
        let mut keyword: Vec<(String, Value)> = Vec::new();
        if self.eat(')') {
            return Ok((positional, keyword));
        }
        loop {
            self.skip_ws();
            let starts_ident = self.chars.peek().is_some_and(|c| c.is_ascii_alphabetic() || *c == '_');
            if starts_ident {
                let name = self.ident();
                if !self.eat('=') {
                    return Err(malformed(format!("bare name `{name}`")));
                }
                if keyword.iter().any(|(k, _)| *k == name) {
                    return Err(malformed(format!("repeated argument `{name}`")));
                }
                keyword.push((name, self.value()?));
            } else {
                if !keyword.is_empty() {
                    return Err(malformed("positional argument after keyword argument"));
                }
                positional.push(self.value()?);
            }
            if self.eat(')') {
                return Ok((positional, keyword));
            }
            if !self.eat(',') {
                return Err(malformed("expected `,` or `)`"));
            }
            if self.eat(')') {
                return Ok((positional, keyword));
            }
        }
    }
}

struct Args {
    action: &'static str,
    positional: Vec<Value>,
    keyword: Vec<(String, Value)>,
}

impl Args {
    /// Binds parameters by position then by name, rejecting extras.
    fn bind(mut self, params: &[&str], required: usize) -> Result<Vec<Option<Value>>, ParseError> {
        if self.positional.len() > params.len() {
            return Err(malformed(format!("{} takes at most {} arguments", self.action, params.len())));
        }
        let mut bound: Vec<Option<Value>> = vec![None; params.len()];
        for (i, v) in self.positional.drain(..).enumerate() {
            bound[i] = Some(v);
        }
        for (name, v) in self.keyword.drain(..) {
            let Some(i) = params.iter().position(|p| *p == name) else {
                return Err(malformed(format!("{} has no argument `{name}`", self.action)));
            };
            if bound[i].is_some() {
                return Err(malformed(format!("argument `{name}` given twice")));
            }
            bound[i] = Some(v);
        }
        if let Some(missing) = (0..required).find(|i| bound[*i].is_none()) {
            return Err(malformed(format!("{} is missing `{}`", self.action, params[missing])));
        }
        Ok(bound)
    }
}

fn as_string(v: Value, what: &str) -> Result<String, ParseError> {
    match v {
        Value::Str(s) => Ok(s),
        Value::Num(n) if n.fract() == 0.0 && n.abs() < 1e15 => Ok(format!("{}", n as i64)),
        _ => Err(malformed(format!("`{what}` must be a string"))),
    }
}

fn as_number(v: Value, what: &str) -> Result<f64, ParseError> {
    match v {
        Value::Num(n) => Ok(n),
        _ => Err(malformed(format!("`{what}` must be a number"))),
    }
}

fn as_strings(v: Value, what: &str) -> Result<Vec<String>, ParseError> {
    match v {
        Value::List(items) => items.into_iter().map(|i| as_string(i, what)).collect(),
        other => Ok(vec![as_string(other, what)?]),
    }
}

/// Parses one action in call syntax, e.g. `click('a51', button='right')`.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let mut cur = Cursor {
        chars: text.chars().peekable(),
    };
    let name = cur.ident();
    if name.is_empty() {
        cur.skip_ws();
        return if cur.chars.peek().is_none() {
            Err(ParseError::EmptyAction)
        } else {
            Err(malformed("expected an action name"))
        };
    }
    let action: &'static str = match name.as_str() {
        "click" => "click",
        "fill" => "fill",
        "goto" => "goto",
        "scroll" => "scroll",
        "select_option" => "select_option",
        "keyboard_press" => "keyboard_press",
        "tab_focus" => "tab_focus",
        "go_back" => "go_back",
        "go_forward" => "go_forward",
        _ => return Err(ParseError::UnknownAction(name)),
    };
    let (positional, keyword) = cur.arguments()?;
    cur.skip_ws();
    if cur.chars.peek().is_some() {
        return Err(malformed("trailing text after the action; only one action is allowed"));
    }
    let args = Args {
        action,
        positional,
        keyword,
    };
    let take = |b: &mut Vec<Option<Value>>, i: usize| b[i].take().expect("required argument bound");
    Ok(match action {
        "click" => {
            let mut b = args.bind(&["bid", "button", "modifiers"], 1)?;
            let bid = as_string(take(&mut b, 0), "bid")?;
            let button = match b[1].take() {
                None => MouseButton::Left,
                Some(v) => match as_string(v, "button")?.as_str() {
                    "left" => MouseButton::Left,
                    "middle" => MouseButton::Middle,
                    "right" => MouseButton::Right,
                    other => return Err(malformed(format!("unknown button `{other}`"))),
                },
            };
            let modifiers = match b[2].take() {
                None => Vec::new(),
                Some(Value::List(items)) => items
                    .into_iter()
                    .map(|i| as_string(i, "modifiers"))
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err(malformed("`modifiers` must be a list")),
            };
            Action::Click { bid, button, modifiers }
        }
        "fill" => {
            let mut b = args.bind(&["bid", "value"], 2)?;
            Action::Fill {
                bid: as_string(take(&mut b, 0), "bid")?,
                value: as_string(take(&mut b, 1), "value")?,
            }
        }
        "goto" => {
            let mut b = args.bind(&["url"], 1)?;
            Action::Goto {
                url: as_string(take(&mut b, 0), "url")?,
            }
        }
        "scroll" => {
            let mut b = args.bind(&["delta_x", "delta_y"], 2)?;
            Action::Scroll {
                delta_x: as_number(take(&mut b, 0), "delta_x")?,
                delta_y: as_number(take(&mut b, 1), "delta_y")?,
            }
        }
        "select_option" => {
            let mut b = args.bind(&["bid", "options"], 2)?;
            Action::SelectOption {
                bid: as_string(take(&mut b, 0), "bid")?,
                options: as_strings(take(&mut b, 1), "options")?,
            }
        }
        "keyboard_press" => {
            let mut b = args.bind(&["key"], 1)?;
            Action::KeyboardPress {
                key: as_string(take(&mut b, 0), "key")?,
            }
        }
        "tab_focus" => {
            let mut b = args.bind(&["index"], 1)?;
            let n = as_number(take(&mut b, 0), "index")?;
            if n.fract() != 0.0 || n.abs() > 1e12 {
                return Err(malformed("`index` must be an integer"));
            }
            Action::TabFocus { index: n as i64 }
        }
        "go_back" => {
            args.bind(&[], 0)?;
            Action::GoBack
        }
        _ => {
            args.bind(&[], 0)?;
            Action::GoForward
        }
    })
}
