//! The model-formula mini-language.
//!
//! Each distribution parameter of a model gets one formula, e.g.
//!
//! ```text
//! participation ~ income + age + I(age^2)
//! accel ~ s(times, k = 20)
//! sigma ~ s(times, k = 20)
//! ```
//!
//! Supported constructs: linear terms (bare column names, categorical
//! columns expand later to treatment-coded indicators), `I(expr)` arithmetic
//! transforms of a single column, `poly(x, d)` raw-power expansions,
//! `s(x, ...)` penalized B-spline smooths, `s2(x, bs = "gc")` user-defined
//! nonlinear terms, an implicit intercept removable with `- 1`, and `+` term
//! separation. The first formula carries the response on its left-hand
//! side; later formulas bind to distribution parameters by name (e.g.
//! `sigma ~ ...`) or positionally when the left-hand side is omitted.

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::family::Family;

// ---------------------------------------------------------------------------
// transform expressions
// ---------------------------------------------------------------------------

/// Binary operators of transform expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Arithmetic expression over at most one variable, as used in `I(...)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Evaluates the expression at a single value of its variable.
    /// Division by zero and non-finite results are errors.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let v = match self {
            Expr::Number(c) => *c,
            Expr::Var(_) => x,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Formula(
                                "division by zero while evaluating transform expression".into(),
                            ));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::Formula(format!(
                "transform expression produced a non-finite value at x = {x}"
            )));
        }
        Ok(v)
    }

    /// Name of the variable referenced by the expression, if any.
    pub fn var(&self) -> Option<&str> {
        match self {
            Expr::Number(_) => None,
            Expr::Var(v) => Some(v),
            Expr::Neg(e) => e.var(),
            Expr::Binary(_, a, b) => a.var().or_else(|| b.var()),
        }
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Number(_) => {}
            Expr::Var(v) => {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// term specifications
// ---------------------------------------------------------------------------

/// Default basis dimension for `s(x)` smooths.
pub const DEFAULT_K: usize = 10;
/// Default spline degree (cubic).
pub const DEFAULT_DEGREE: usize = 3;
/// Default difference-penalty order.
pub const DEFAULT_PENALTY_ORDER: usize = 2;

/// One parsed model term.
#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    /// The implicit (or explicit `1`) intercept column.
    Intercept,
    /// A single data column entered linearly; categorical columns expand to
    /// treatment-coded indicators at design time.
    Linear { var: String },
    /// An `I(expr)` arithmetic transform of one column. `source` keeps the
    /// whitespace-stripped expression text for labeling and round-trips.
    Transform { source: String, var: String, expr: Expr },
    /// A `poly(x, d)` raw-power expansion x, x², …, x^d.
    Poly { var: String, degree: usize },
    /// A penalized B-spline smooth `s(x, k = .., degree = .., penalty_order = ..)`.
    Smooth { var: String, k: usize, degree: usize, penalty_order: usize },
    /// A user-defined nonlinear term `s2(x, bs = "<basis>")`.
    Special { var: String, basis: String },
}

/// A term specification: its kind plus a canonical display label.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSpec {
    pub kind: TermKind,
}

impl TermSpec {
    /// Canonical display label, used in coefficient names and summaries
    /// (e.g. `s(age)`, `I(age^2)`, `(Intercept)`).
    pub fn label(&self) -> String {
        match &self.kind {
            TermKind::Intercept => "(Intercept)".into(),
            TermKind::Linear { var } => var.clone(),
            TermKind::Transform { source, .. } => format!("I({source})"),
            TermKind::Poly { var, degree } => format!("poly({var}, {degree})"),
            TermKind::Smooth { var, .. } => format!("s({var})"),
            TermKind::Special { var, .. } => format!("s2({var})"),
        }
    }

    /// Formula-text rendering of the term (non-default smooth options only).
    pub fn render(&self) -> String {
        match &self.kind {
            TermKind::Intercept => "1".into(),
            TermKind::Linear { var } => var.clone(),
            TermKind::Transform { source, .. } => format!("I({source})"),
            TermKind::Poly { var, degree } => format!("poly({var}, {degree})"),
            TermKind::Smooth { var, k, degree, penalty_order } => {
                let mut opts = String::new();
                if *k != DEFAULT_K {
                    opts.push_str(&format!(", k = {k}"));
                }
                if *degree != DEFAULT_DEGREE {
                    opts.push_str(&format!(", degree = {degree}"));
                }
                if *penalty_order != DEFAULT_PENALTY_ORDER {
                    opts.push_str(&format!(", penalty_order = {penalty_order}"));
                }
                format!("s({var}{opts})")
            }
            TermKind::Special { var, basis } => format!("s2({var}, bs = \"{basis}\")"),
        }
    }

    /// Data columns referenced by this term.
    pub fn variables(&self) -> Vec<&str> {
        match &self.kind {
            TermKind::Intercept => vec![],
            TermKind::Linear { var }
            | TermKind::Poly { var, .. }
            | TermKind::Smooth { var, .. }
            | TermKind::Special { var, .. } => vec![var],
            TermKind::Transform { expr, .. } => {
                let mut vars = Vec::new();
                expr.collect_vars(&mut vars);
                vars
            }
        }
    }
}

/// Elementwise evaluation of a transform term over a table column.
pub fn eval_transform(spec: &TermSpec, table: &DataTable) -> Result<Vec<f64>> {
    let TermKind::Transform { var, expr, .. } = &spec.kind else {
        return Err(Error::Formula(format!(
            "term `{}` is not a transform term",
            spec.label()
        )));
    };
    let values = if var.is_empty() {
        // constant expression: evaluate once per row
        vec![0.0; table.n_rows()]
    } else {
        table.numeric(var)?.to_vec()
    };
    values.iter().map(|&x| expr.eval(x)).collect()
}

// ---------------------------------------------------------------------------
// formulas
// ---------------------------------------------------------------------------

/// One parsed formula: optional left-hand side plus ordered terms. When the
/// formula has an intercept, it appears as the leading term.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    pub lhs: Option<String>,
    pub terms: Vec<TermSpec>,
}

impl Formula {
    /// True when the formula carries an intercept term.
    pub fn has_intercept(&self) -> bool {
        self.terms.iter().any(|t| t.kind == TermKind::Intercept)
    }

    /// Renders the formula back to text; re-parsing the result yields an
    /// identical structure.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(lhs) = &self.lhs {
            out.push_str(lhs);
            out.push(' ');
        }
        out.push('~');
        let visible: Vec<String> = self
            .terms
            .iter()
            .filter(|t| t.kind != TermKind::Intercept)
            .map(|t| t.render())
            .collect();
        if visible.is_empty() {
            out.push_str(" 1");
        } else {
            out.push(' ');
            out.push_str(&visible.join(" + "));
        }
        if !self.has_intercept() {
            out.push_str(" - 1");
        }
        out
    }
}

/// A full model specification: the response name plus one formula per
/// family parameter, in family parameter order. Parameters without an
/// explicit formula default to intercept-only.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaSet {
    pub response: String,
    pub param_names: Vec<String>,
    pub formulas: Vec<Formula>,
}

impl FormulaSet {
    /// Formula for family parameter `k`.
    pub fn formula(&self, k: usize) -> &Formula {
        &self.formulas[k]
    }

    /// Renders all formulas back to text.
    pub fn render(&self) -> Vec<String> {
        self.formulas.iter().map(|f| f.render()).collect()
    }
}

/// Parses one formula string in isolation (no family binding).
pub fn parse_formula(text: &str) -> Result<Formula> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, src: text };
    let f = p.formula()?;
    p.expect_end()?;
    Ok(f)
}

/// Parses the per-parameter formula strings of one model and binds them to
/// the family's distribution parameters.
///
/// The first formula must carry the response and binds to the first
/// parameter. Later formulas bind by left-hand-side parameter name, or
/// positionally when they have no left-hand side. Missing parameters get
/// intercept-only formulas.
pub fn parse_formula_set(texts: &[String], family: &Family) -> Result<FormulaSet> {
    if texts.is_empty() {
        return Err(Error::Formula("no formulas given".into()));
    }
    let param_names: Vec<String> = family.param_names().iter().map(|s| s.to_string()).collect();
    if texts.len() > param_names.len() {
        return Err(Error::Formula(format!(
            "{} formulas given but family `{}` has only {} parameter(s)",
            texts.len(),
            family.name(),
            param_names.len()
        )));
    }

    let parsed: Vec<Formula> = texts
        .iter()
        .map(|t| parse_formula(t))
        .collect::<Result<_>>()?;

    let response = parsed[0]
        .lhs
        .clone()
        .ok_or_else(|| Error::Formula("the first formula must name the response".into()))?;

    let mut bound: Vec<Option<Formula>> = vec![None; param_names.len()];
    bound[0] = Some(parsed[0].clone());

    for f in parsed.iter().skip(1) {
        let idx = match &f.lhs {
            Some(name) => {
                let idx = param_names.iter().position(|p| p == name).ok_or_else(|| {
                    Error::Formula(format!(
                        "left-hand side `{name}` is not a parameter of family `{}` (parameters: {})",
                        family.name(),
                        param_names.join(", ")
                    ))
                })?;
                if bound[idx].is_some() {
                    return Err(Error::Formula(format!(
                        "parameter `{name}` already has a formula"
                    )));
                }
                idx
            }
            None => bound
                .iter()
                .position(|b| b.is_none())
                .expect("formula count already validated against parameter count"),
        };
        bound[idx] = Some(f.clone());
    }

    let formulas = bound
        .into_iter()
        .enumerate()
        .map(|(k, f)| {
            f.unwrap_or_else(|| Formula {
                lhs: Some(param_names[k].clone()),
                terms: vec![TermSpec { kind: TermKind::Intercept }],
            })
        })
        .collect();

    Ok(FormulaSet { response, param_names, formulas })
}

// ---------------------------------------------------------------------------
// tokenizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    Tilde,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eq,
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "{s}"),
            Token::Number(v) => write!(f, "{v}"),
            Token::Str(s) => write!(f, "\"{s}\""),
            Token::Tilde => write!(f, "~"),
            Token::Plus => write!(f, "+"),
            Token::Minus => write!(f, "-"),
            Token::Star => write!(f, "*"),
            Token::Slash => write!(f, "/"),
            Token::Caret => write!(f, "^"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
            Token::Comma => write!(f, ","),
            Token::Eq => write!(f, "="),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '~' => {
                chars.next();
                tokens.push(Token::Tilde);
            }
            '+' => {
                chars.next();
                tokens.push(Token::Plus);
            }
            '-' => {
                chars.next();
                tokens.push(Token::Minus);
            }
            '*' => {
                chars.next();
                tokens.push(Token::Star);
            }
            '/' => {
                chars.next();
                tokens.push(Token::Slash);
            }
            '^' => {
                chars.next();
                tokens.push(Token::Caret);
            }
            '(' => {
                chars.next();
                tokens.push(Token::LParen);
            }
            ')' => {
                chars.next();
                tokens.push(Token::RParen);
            }
            ',' => {
                chars.next();
                tokens.push(Token::Comma);
            }
            '=' => {
                chars.next();
                tokens.push(Token::Eq);
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(c) => s.push(c),
                        None => {
                            return Err(Error::Formula(format!(
                                "unterminated string literal in `{text}`"
                            )))
                        }
                    }
                }
                tokens.push(Token::Str(s));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || c == '.' {
                        s.push(c);
                        chars.next();
                    } else if (c == 'e' || c == 'E')
                        && s.chars().all(|d| d.is_ascii_digit() || d == '.')
                    {
                        s.push(c);
                        chars.next();
                        if let Some(&sign @ ('+' | '-')) = chars.peek() {
                            s.push(sign);
                            chars.next();
                        }
                    } else {
                        break;
                    }
                }
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Formula(format!("invalid number `{s}` in `{text}`")))?;
                tokens.push(Token::Number(v));
            }
            c if is_ident_start(c) => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if is_ident_char(c) {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Ident(s));
            }
            other => {
                return Err(Error::Formula(format!(
                    "unexpected character `{other}` in `{text}`"
                )))
            }
        }
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, token: &Token) -> bool {
        if self.peek() == Some(token) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: Token) -> Result<()> {
        match self.next() {
            Some(t) if t == token => Ok(()),
            Some(t) => Err(Error::Formula(format!(
                "expected `{token}` but found `{t}` in `{}`",
                self.src
            ))),
            None => Err(Error::Formula(format!(
                "expected `{token}` but the formula ended: `{}`",
                self.src
            ))),
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(Error::Formula(format!(
                "unexpected trailing `{t}` in `{}`",
                self.src
            ))),
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        // optional "lhs ~" prefix or bare "~"
        let lhs = match (self.peek(), self.tokens.get(self.pos + 1)) {
            (Some(Token::Ident(name)), Some(Token::Tilde)) => {
                let name = name.clone();
                self.pos += 2;
                Some(name)
            }
            (Some(Token::Tilde), _) => {
                self.pos += 1;
                None
            }
            _ => None,
        };

        // items separated by `+` or `-`; an item after `-` must be the
        // literal `1` (intercept removal), which may appear in any position
        let mut terms: Vec<TermSpec> = Vec::new();
        let mut intercept = true;
        let mut explicit_one = false;
        loop {
            if self.eat(&Token::Minus) {
                match self.next() {
                    Some(Token::Number(v)) if v == 1.0 => intercept = false,
                    other => {
                        return Err(Error::Formula(format!(
                            "only `- 1` (intercept removal) may follow `-`, found `{}` in `{}`",
                            other.map(|t| t.to_string()).unwrap_or_else(|| "end".into()),
                            self.src
                        )))
                    }
                }
            } else {
                match self.peek() {
                    Some(Token::Number(v)) if *v == 1.0 => {
                        self.pos += 1;
                        explicit_one = true;
                    }
                    Some(_) => {
                        let term = self.term()?;
                        let label = term.label();
                        if terms.iter().any(|t| t.label() == label) {
                            return Err(Error::Formula(format!(
                                "duplicate term `{label}` in `{}`",
                                self.src
                            )));
                        }
                        terms.push(term);
                    }
                    None => {
                        return Err(Error::Formula(format!("empty formula: `{}`", self.src)))
                    }
                }
            }
            if self.eat(&Token::Plus) {
                continue;
            }
            if self.peek() == Some(&Token::Minus) {
                continue;
            }
            break;
        }

        if terms.is_empty() && !explicit_one && !intercept {
            return Err(Error::Formula(format!(
                "formula `{}` removes the intercept and specifies no terms",
                self.src
            )));
        }
        if intercept {
            terms.insert(0, TermSpec { kind: TermKind::Intercept });
        }
        Ok(Formula { lhs, terms })
    }

    fn term(&mut self) -> Result<TermSpec> {
        let name = match self.next() {
            Some(Token::Ident(name)) => name,
            Some(t) => {
                return Err(Error::Formula(format!(
                    "expected a term but found `{t}` in `{}`",
                    self.src
                )))
            }
            None => return Err(Error::Formula(format!("empty formula: `{}`", self.src))),
        };
        if self.peek() != Some(&Token::LParen) {
            return Ok(TermSpec { kind: TermKind::Linear { var: name } });
        }
        self.expect(Token::LParen)?;
        let kind = match name.as_str() {
            "s" => self.smooth_args()?,
            "s2" => self.special_args()?,
            "I" => self.transform_args()?,
            "poly" => self.poly_args()?,
            other => {
                return Err(Error::Formula(format!(
                    "unknown term constructor `{other}` in `{}` (supported: s, s2, I, poly)",
                    self.src
                )))
            }
        };
        Ok(TermSpec { kind })
    }

    fn term_variable(&mut self, constructor: &str) -> Result<String> {
        match self.next() {
            Some(Token::Ident(v)) => Ok(v),
            other => Err(Error::Formula(format!(
                "`{constructor}(...)` needs a column name as first argument, found `{}` in `{}`",
                other.map(|t| t.to_string()).unwrap_or_else(|| "end".into()),
                self.src
            ))),
        }
    }

    fn smooth_args(&mut self) -> Result<TermKind> {
        let var = self.term_variable("s")?;
        let mut k = DEFAULT_K;
        let mut degree = DEFAULT_DEGREE;
        let mut penalty_order = DEFAULT_PENALTY_ORDER;
        while self.eat(&Token::Comma) {
            let (key, value) = self.key_value()?;
            match key.as_str() {
                "k" => k = value.as_positive_int("k", self.src)?,
                "degree" => degree = value.as_positive_int("degree", self.src)?,
                "penalty_order" => {
                    penalty_order = value.as_positive_int("penalty_order", self.src)?
                }
                "bs" => {
                    let code = value.as_string("bs", self.src)?;
                    if code != "ps" {
                        return Err(Error::Formula(format!(
                            "unsupported smooth basis `{code}` in `{}` (only \"ps\" is available)",
                            self.src
                        )));
                    }
                }
                other => {
                    return Err(Error::Formula(format!(
                        "unknown smooth option `{other}` in `{}`",
                        self.src
                    )))
                }
            }
        }
        self.expect(Token::RParen)?;
        if k < 3 {
            return Err(Error::Formula(format!(
                "smooth basis dimension k = {k} is too small (need k ≥ 3) in `{}`",
                self.src
            )));
        }
        if k < degree + 1 {
            return Err(Error::Formula(format!(
                "smooth basis dimension k = {k} must be at least degree + 1 = {} in `{}`",
                degree + 1,
                self.src
            )));
        }
        if penalty_order >= k {
            return Err(Error::Formula(format!(
                "penalty order {penalty_order} must be smaller than k = {k} in `{}`",
                self.src
            )));
        }
        Ok(TermKind::Smooth { var, k, degree, penalty_order })
    }

    fn special_args(&mut self) -> Result<TermKind> {
        let var = self.term_variable("s2")?;
        let mut basis = "gc".to_string();
        while self.eat(&Token::Comma) {
            let (key, value) = self.key_value()?;
            match key.as_str() {
                "bs" => basis = value.as_string("bs", self.src)?,
                other => {
                    return Err(Error::Formula(format!(
                        "unknown special-term option `{other}` in `{}`",
                        self.src
                    )))
                }
            }
        }
        self.expect(Token::RParen)?;
        if basis != "gc" {
            return Err(Error::Formula(format!(
                "unknown special-term basis `{basis}` in `{}` (available: \"gc\")",
                self.src
            )));
        }
        Ok(TermKind::Special { var, basis })
    }

    fn poly_args(&mut self) -> Result<TermKind> {
        let var = self.term_variable("poly")?;
        self.expect(Token::Comma)?;
        let degree = match self.next() {
            Some(Token::Number(v)) if v.fract() == 0.0 && v >= 1.0 => v as usize,
            other => {
                return Err(Error::Formula(format!(
                    "`poly({var}, d)` needs a positive integer degree, found `{}` in `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end".into()),
                    self.src
                )))
            }
        };
        self.expect(Token::RParen)?;
        Ok(TermKind::Poly { var, degree })
    }

    fn transform_args(&mut self) -> Result<TermKind> {
        let start = self.pos;
        let expr = self.expr(0)?;
        let end = self.pos;
        self.expect(Token::RParen)?;
        let mut vars = Vec::new();
        expr.collect_vars(&mut vars);
        if vars.len() > 1 {
            return Err(Error::Formula(format!(
                "transform expression in `{}` references {} variables ({}); only one is allowed",
                self.src,
                vars.len(),
                vars.join(", ")
            )));
        }
        let var = vars.first().map(|v| v.to_string()).unwrap_or_default();
        let source: String = self.tokens[start..end]
            .iter()
            .map(|t| t.to_string())
            .collect();
        Ok(TermKind::Transform { source, var, expr })
    }

    /// Pratt parser for transform expressions. Precedence (low to high):
    /// `+ -`, `* /`, unary `-`, `^` (right-associative).
    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = match self.next() {
            Some(Token::Number(v)) => Expr::Number(v),
            Some(Token::Ident(v)) => Expr::Var(v),
            Some(Token::Minus) => Expr::Neg(Box::new(self.expr(5)?)),
            Some(Token::LParen) => {
                let inner = self.expr(0)?;
                self.expect(Token::RParen)?;
                inner
            }
            other => {
                return Err(Error::Formula(format!(
                    "expected an expression but found `{}` in `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end".into()),
                    self.src
                )))
            }
        };
        loop {
            let (op, l_bp, r_bp) = match self.peek() {
                Some(Token::Plus) => (BinOp::Add, 1, 2),
                Some(Token::Minus) => (BinOp::Sub, 1, 2),
                Some(Token::Star) => (BinOp::Mul, 3, 4),
                Some(Token::Slash) => (BinOp::Div, 3, 4),
                Some(Token::Caret) => (BinOp::Pow, 8, 7), // right-associative
                _ => break,
            };
            if l_bp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(r_bp)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn key_value(&mut self) -> Result<(String, OptionValue)> {
        let key = match self.next() {
            Some(Token::Ident(k)) => k,
            other => {
                return Err(Error::Formula(format!(
                    "expected `key = value`, found `{}` in `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end".into()),
                    self.src
                )))
            }
        };
        self.expect(Token::Eq)?;
        let value = match self.next() {
            Some(Token::Number(v)) => OptionValue::Number(v),
            Some(Token::Str(s)) => OptionValue::Text(s),
            Some(Token::Ident(s)) => OptionValue::Text(s),
            other => {
                return Err(Error::Formula(format!(
                    "invalid value for option `{key}`: `{}` in `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end".into()),
                    self.src
                )))
            }
        };
        Ok((key, value))
    }
}

enum OptionValue {
    Number(f64),
    Text(String),
}

impl OptionValue {
    fn as_positive_int(&self, key: &str, src: &str) -> Result<usize> {
        match self {
            OptionValue::Number(v) if v.fract() == 0.0 && *v >= 1.0 => Ok(*v as usize),
            _ => Err(Error::Formula(format!(
                "option `{key}` must be a positive integer in `{src}`"
            ))),
        }
    }

    fn as_string(&self, key: &str, src: &str) -> Result<String> {
        match self {
            OptionValue::Text(s) => Ok(s.clone()),
            OptionValue::Number(_) => Err(Error::Formula(format!(
                "option `{key}` must be a string in `{src}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, DataTable};
    use proptest::prelude::*;

    fn labels(f: &Formula) -> Vec<String> {
        f.terms.iter().map(|t| t.label()).collect()
    }

    #[test]
    fn parses_parametric_formula_with_transform() {
        let f = parse_formula("participation ~ income + age + I(age^2)").unwrap();
        assert_eq!(f.lhs.as_deref(), Some("participation"));
        assert_eq!(
            labels(&f),
            ["(Intercept)", "income", "age", "I(age^2)"]
        );
    }

    #[test]
    fn binds_formulas_to_family_parameters() {
        let fam = Family::gaussian();
        let fs = parse_formula_set(
            &["accel ~ s(times, k = 20)".into(), "sigma ~ s(times, k = 20)".into()],
            &fam,
        )
        .unwrap();
        assert_eq!(fs.response, "accel");
        assert_eq!(fs.param_names, ["mu", "sigma"]);
        for f in &fs.formulas {
            assert_eq!(f.terms.len(), 2);
            assert_eq!(f.terms[0].kind, TermKind::Intercept);
            match &f.terms[1].kind {
                TermKind::Smooth { var, k, degree, penalty_order } => {
                    assert_eq!(var, "times");
                    assert_eq!((*k, *degree, *penalty_order), (20, 3, 2));
                }
                other => panic!("expected smooth, got {other:?}"),
            }
        }
    }

    #[test]
    fn intercept_only_formula() {
        let f = parse_formula("y ~ 1").unwrap();
        assert_eq!(labels(&f), ["(Intercept)"]);
    }

    #[test]
    fn missing_later_formulas_default_to_intercept_only() {
        let fam = Family::gaussian();
        let fs = parse_formula_set(&["y ~ x".into()], &fam).unwrap();
        assert_eq!(fs.formulas[1].terms.len(), 1);
        assert_eq!(fs.formulas[1].terms[0].kind, TermKind::Intercept);
        assert_eq!(fs.formulas[1].lhs.as_deref(), Some("sigma"));
    }

    #[test]
    fn positional_binding_for_lhs_less_formula() {
        let fam = Family::gaussian();
        let fs = parse_formula_set(&["y ~ x".into(), "~ s(x)".into()], &fam).unwrap();
        assert!(matches!(
            fs.formulas[1].terms[1].kind,
            TermKind::Smooth { .. }
        ));
    }

    #[test]
    fn unknown_parameter_lhs_is_an_error() {
        let fam = Family::gaussian();
        let err = parse_formula_set(&["y ~ x".into(), "scale ~ x".into()], &fam).unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn too_many_formulas_is_an_error() {
        let fam = Family::binomial();
        assert!(parse_formula_set(&["y ~ x".into(), "~ x".into()], &fam).is_err());
    }

    #[test]
    fn intercept_removal_and_explicit_one() {
        let f = parse_formula("y ~ x - 1").unwrap();
        assert_eq!(labels(&f), ["x"]);
        assert!(!f.has_intercept());
        let f = parse_formula("y ~ -1 + x").unwrap();
        assert_eq!(labels(&f), ["x"]);
        assert!(parse_formula("y ~ -1").is_err());
        assert!(parse_formula("y ~ - x").is_err());
    }

    #[test]
    fn unknown_constructor_is_an_error() {
        let err = parse_formula("num ~ x1 + s(x2) + te(lon, lat)").unwrap_err();
        assert!(err.to_string().contains("te"), "{err}");
    }

    #[test]
    fn duplicate_terms_are_rejected() {
        assert!(parse_formula("y ~ x + x").is_err());
        assert!(parse_formula("y ~ s(x) + s(x)").is_err());
        // same variable in different constructors is fine
        assert!(parse_formula("y ~ x + s(x) + I(x^2)").is_ok());
    }

    #[test]
    fn smooth_option_validation() {
        assert!(parse_formula("y ~ s(x, k = 2)").is_err());
        assert!(parse_formula("y ~ s(x, k = 3)").is_err()); // cubic needs k ≥ 4
        assert!(parse_formula("y ~ s(x, k = 3, degree = 1)").is_ok());
        assert!(parse_formula("y ~ s(x, bs = \"tp\")").is_err());
        assert!(parse_formula("y ~ s(x, bs = \"ps\")").is_ok());
        assert!(parse_formula("y ~ s(x, span = 0.5)").is_err());
        assert!(parse_formula("y ~ s(x, k = 5, penalty_order = 5)").is_err());
    }

    #[test]
    fn special_term_syntax() {
        let f = parse_formula("y ~ s2(time, bs = \"gc\")").unwrap();
        assert_eq!(f.terms[1].label(), "s2(time)");
        assert!(parse_formula("y ~ s2(time, bs = \"nn\")").is_err());
    }

    #[test]
    fn whitespace_insensitivity() {
        let a = parse_formula("y~x1+s(x2,k=20)+I(x3^2)-1").unwrap();
        let b = parse_formula("  y ~ x1 + s( x2 , k = 20 ) + I( x3 ^ 2 ) - 1 ").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_round_trip_on_grammar_corpus() {
        let corpus = [
            "participation ~ income + age + education + youngkids + oldkids + foreign + I(age^2)",
            "accel ~ s(times, k = 20)",
            "sigma ~ s(times)",
            "y ~ 1",
            "y ~ x - 1",
            "~ s(x, k = 8, degree = 2, penalty_order = 1)",
            "y ~ poly(x2, 5) + poly(x3, 5)",
            "y ~ s2(time, bs = \"gc\") + I((x-1)*2/3)",
        ];
        for text in corpus {
            let parsed = parse_formula(text).unwrap();
            let rendered = parsed.render();
            let reparsed = parse_formula(&rendered).unwrap();
            assert_eq!(parsed, reparsed, "round trip failed for `{text}` → `{rendered}`");
        }
    }

    #[test]
    fn eval_transform_examples() {
        let table = DataTable::new(vec![(
            "age".into(),
            Column::Numeric(vec![2.0, 3.0]),
        )])
        .unwrap();
        let spec = |text: &str| {
            let f = parse_formula(&format!("y ~ {text}")).unwrap();
            f.terms[1].clone()
        };
        assert_eq!(eval_transform(&spec("I(age^2)"), &table).unwrap(), [4.0, 9.0]);
        assert_eq!(eval_transform(&spec("I(age)"), &table).unwrap(), [2.0, 3.0]);
        let table2 = DataTable::new(vec![("x".into(), Column::Numeric(vec![1.0, 2.0]))]).unwrap();
        assert_eq!(
            eval_transform(&spec("I((x-1)*2)"), &table2).unwrap(),
            [0.0, 2.0]
        );
    }

    #[test]
    fn eval_transform_division_by_zero_errors() {
        let table = DataTable::new(vec![("x".into(), Column::Numeric(vec![1.0, 0.0]))]).unwrap();
        let f = parse_formula("y ~ I(1/x)").unwrap();
        assert!(eval_transform(&f.terms[1], &table).is_err());
    }

    #[test]
    fn eval_transform_requires_numeric_column() {
        let table = DataTable::new(vec![(
            "g".into(),
            Column::Categorical(vec![Some("a".into())]),
        )])
        .unwrap();
        let f = parse_formula("y ~ I(g^2)").unwrap();
        assert!(eval_transform(&f.terms[1], &table).is_err());
    }

    #[test]
    fn expression_precedence_matches_convention() {
        let f = parse_formula("y ~ I(2+3*x^2)").unwrap();
        let TermKind::Transform { expr, .. } = &f.terms[1].kind else { panic!() };
        // at x = 2: 2 + 3·4 = 14 (not (2+3)·4 or (3x)²)
        assert_eq!(expr.eval(2.0).unwrap(), 14.0);
        let f = parse_formula("y ~ I(-x^2)").unwrap();
        let TermKind::Transform { expr, .. } = &f.terms[1].kind else { panic!() };
        // unary minus binds looser than ^
        assert_eq!(expr.eval(3.0).unwrap(), -9.0);
    }

    // random expression trees: rendering with explicit parentheses and
    // re-parsing must reproduce the tree exactly
    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0..100.0f64).prop_map(|v| Expr::Number((v * 100.0).round() / 100.0)),
            Just(Expr::Var("x".into())),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow),
                ])
                    .prop_map(|(a, b, op)| Expr::Binary(op, Box::new(a), Box::new(b))),
                inner.prop_map(|e| Expr::Neg(Box::new(e))),
            ]
        })
    }

    fn render_full_parens(e: &Expr) -> String {
        match e {
            Expr::Number(v) => format!("{v}"),
            Expr::Var(v) => v.clone(),
            Expr::Neg(inner) => format!("(-{})", render_full_parens(inner)),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                format!("({}{}{})", render_full_parens(a), sym, render_full_parens(b))
            }
        }
    }

    proptest! {
        #[test]
        fn transform_expressions_round_trip(e in arb_expr()) {
            let text = format!("y ~ I({})", render_full_parens(&e));
            let parsed = parse_formula(&text).unwrap();
            let TermKind::Transform { expr, .. } = &parsed.terms[1].kind else {
                panic!("expected transform");
            };
            prop_assert_eq!(expr, &e);
        }
    }
}
