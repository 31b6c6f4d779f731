//! Line-oriented strategy DSL.
//!
//! Clauses are separated by `;` or newlines:
//!
//! ```text
//! user=operator_02; goal latency < 15; entity ultrasonic_module;
//! action qos_adjustment(priority=5); window 0 600
//! ```
//!
//! `goal`, `entity`, and `action` clauses repeat; `user` and `window` appear
//! exactly once. Parsing is deterministic: identical text yields an
//! identical tuple.

use crate::scalar::Scalar;

use super::{
    is_identifier, is_metric_name, ActionItem, Goal, IntentError, RelationalOp, StrategyTuple,
    TimeWindow,
};

/// Parse DSL text into a validated strategy tuple.
pub fn parse_strategy<T: Scalar>(text: &str) -> Result<StrategyTuple<T>, IntentError> {
    let mut user: Option<String> = None;
    let mut goals: Vec<Goal<T>> = Vec::new();
    let mut entities: Vec<String> = Vec::new();
    let mut actions: Vec<ActionItem<T>> = Vec::new();
    let mut window: Option<(T, T)> = None;

    for (offset, clause) in clauses(text) {
        let mut cur = Cursor::new(clause, offset);
        cur.skip_ws();
        let keyword = cur.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
        match keyword {
            "user" => {
                cur.skip_ws();
                cur.expect_char('=', "'=' after 'user'")?;
                cur.skip_ws();
                let id = cur.take_identifier("user identifier")?;
                cur.expect_end()?;
                if user.replace(id).is_some() {
                    return Err(IntentError::Semantic("duplicate 'user' clause".into()));
                }
            }
            "goal" => {
                cur.skip_ws1("space after 'goal'")?;
                let metric = cur.take_identifier("metric name")?;
                if !is_metric_name(&metric) {
                    return Err(IntentError::Semantic(format!(
                        "metric '{metric}' is not a lowercase identifier"
                    )));
                }
                cur.skip_ws();
                let op = cur.take_op()?;
                cur.skip_ws();
                let threshold = cur.take_number("threshold")?;
                cur.expect_end()?;
                goals.push(Goal {
                    metric,
                    op,
                    threshold,
                });
            }
            "entity" => {
                cur.skip_ws1("space after 'entity'")?;
                let id = cur.take_identifier("entity identifier")?;
                cur.expect_end()?;
                entities.push(id);
            }
            "action" => {
                cur.skip_ws1("space after 'action'")?;
                let kind = cur.take_identifier("action kind")?;
                cur.skip_ws();
                cur.expect_char('(', "'(' opening the parameter list")?;
                let mut params: Vec<(String, T)> = Vec::new();
                cur.skip_ws();
                if !cur.peek_char(')') {
                    loop {
                        cur.skip_ws();
                        let key = cur.take_identifier("parameter name")?;
                        cur.skip_ws();
                        cur.expect_char('=', "'=' after parameter name")?;
                        cur.skip_ws();
                        let value = cur.take_number("parameter value")?;
                        params.push((key, value));
                        cur.skip_ws();
                        if cur.peek_char(',') {
                            cur.expect_char(',', "','")?;
                        } else {
                            break;
                        }
                    }
                }
                cur.expect_char(')', "')' closing the parameter list")?;
                cur.expect_end()?;
                actions.push(ActionItem { kind, params });
            }
            "window" => {
                cur.skip_ws1("space after 'window'")?;
                let start = cur.take_number("window start")?;
                cur.skip_ws1("space between window bounds")?;
                let end = cur.take_number("window end")?;
                cur.expect_end()?;
                if window.replace((start, end)).is_some() {
                    return Err(IntentError::Semantic("duplicate 'window' clause".into()));
                }
            }
            other => {
                return Err(IntentError::Syntax {
                    offset,
                    expected: format!(
                        "clause keyword (user, goal, entity, action, window), found '{other}'"
                    ),
                });
            }
        }
    }

    let user = user.ok_or_else(|| IntentError::Semantic("missing 'user' clause".into()))?;
    let (start, end) = window.ok_or_else(|| IntentError::Semantic("missing 'window' clause".into()))?;
    let tuple = StrategyTuple {
        user,
        goals,
        entities,
        actions,
        window: TimeWindow::new(start, end)?,
    };
    tuple.validate()?;
    Ok(tuple)
}

/// Non-empty clauses with the byte offset where each starts.
fn clauses(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, c) in text.char_indices() {
        if c == ';' || c == '\n' {
            push_clause(text, start, i, &mut out);
            start = i + c.len_utf8();
        }
    }
    push_clause(text, start, text.len(), &mut out);
    out
}

fn push_clause<'a>(text: &'a str, start: usize, end: usize, out: &mut Vec<(usize, &'a str)>) {
    let raw = &text[start..end];
    let trimmed = raw.trim_start();
    let offset = start + (raw.len() - trimmed.len());
    let trimmed = trimmed.trim_end();
    if !trimmed.is_empty() {
        out.push((offset, trimmed));
    }
}

struct Cursor<'a> {
    rest: &'a str,
    base: usize,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(clause: &'a str, base: usize) -> Self {
        Cursor {
            rest: clause,
            base,
            pos: 0,
        }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn err(&self, expected: impl Into<String>) -> IntentError {
        IntentError::Syntax {
            offset: self.offset(),
            expected: expected.into(),
        }
    }

    fn advance(&mut self, n: usize) {
        self.rest = &self.rest[n..];
        self.pos += n;
    }

    fn skip_ws(&mut self) {
        let n = self.rest.len() - self.rest.trim_start().len();
        self.advance(n);
    }

    fn skip_ws1(&mut self, expected: &str) -> Result<(), IntentError> {
        if !self.rest.starts_with(|c: char| c.is_whitespace()) {
            return Err(self.err(expected));
        }
        self.skip_ws();
        Ok(())
    }

    fn peek_char(&self, c: char) -> bool {
        self.rest.starts_with(c)
    }

    fn expect_char(&mut self, c: char, expected: &str) -> Result<(), IntentError> {
        if self.rest.starts_with(c) {
            self.advance(c.len_utf8());
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn expect_end(&mut self) -> Result<(), IntentError> {
        self.skip_ws();
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(self.err("end of clause"))
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let n = self
            .rest
            .char_indices()
            .find(|&(_, c)| !pred(c))
            .map_or(self.rest.len(), |(i, _)| i);
        let taken = &self.rest[..n];
        self.advance(n);
        taken
    }

    fn take_identifier(&mut self, expected: &str) -> Result<String, IntentError> {
        let id = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
        if id.is_empty() || !is_identifier(id) {
            return Err(self.err(expected));
        }
        Ok(id.to_owned())
    }

    fn take_op(&mut self) -> Result<RelationalOp, IntentError> {
        // Two-character forms first.
        for (tok, op) in [
            ("<=", RelationalOp::Leq),
            (">=", RelationalOp::Geq),
            ("<", RelationalOp::Lt),
            (">", RelationalOp::Gt),
        ] {
            if self.rest.starts_with(tok) {
                self.advance(tok.len());
                return Ok(op);
            }
        }
        Err(self.err("relational operator (<, >, <=, >=)"))
    }

    fn take_number<T: Scalar>(&mut self, expected: &str) -> Result<T, IntentError> {
        let tok = self.take_while(|c| {
            c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E'
        });
        let parsed: f64 = tok.parse().map_err(|_| self.err(format!("number ({expected})")))?;
        if !parsed.is_finite() {
            return Err(IntentError::Semantic(format!("{expected} is not finite")));
        }
        Ok(T::from_f64_lossy(parsed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED_EXAMPLE: &str = "user=operator_02; goal latency < 15; entity ultrasonic_module; action qos_adjustment(priority=5); window 0 600";

    #[test]
    fn parses_worked_example() {
        let s: StrategyTuple<f64> = parse_strategy(WORKED_EXAMPLE).unwrap();
        assert_eq!(s.user, "operator_02");
        assert_eq!(s.goals.len(), 1);
        assert_eq!(s.goals[0].metric, "latency");
        assert_eq!(s.goals[0].op, RelationalOp::Lt);
        assert_eq!(s.goals[0].threshold, 15.0);
        assert_eq!(s.entities, vec!["ultrasonic_module"]);
        assert_eq!(s.actions.len(), 1);
        assert_eq!(s.actions[0].kind, "qos_adjustment");
        assert_eq!(s.actions[0].params, vec![("priority".to_owned(), 5.0)]);
        assert_eq!(s.window.start, 0.0);
        assert_eq!(s.window.end, 600.0);
    }

    #[test]
    fn parse_is_deterministic() {
        let a: StrategyTuple<f64> = parse_strategy(WORKED_EXAMPLE).unwrap();
        let b: StrategyTuple<f64> = parse_strategy(WORKED_EXAMPLE).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn newlines_separate_clauses() {
        let text = "user=u\ngoal x < 1\nentity e\naction a()\nwindow 0 1";
        let s: StrategyTuple<f64> = parse_strategy(text).unwrap();
        assert_eq!(s.goals.len(), 1);
        assert!(s.actions[0].params.is_empty());
    }

    #[test]
    fn degenerate_window_is_semantic_error() {
        let text = "user=u; goal x < 1; entity e; action a(); window 5 5";
        let err = parse_strategy::<f64>(text).unwrap_err();
        assert!(matches!(err, IntentError::Semantic(_)), "{err}");
    }

    #[test]
    fn duplicate_metric_is_semantic_error() {
        let text = "user=u; goal x < 1; goal x > 0; entity e; action a(); window 0 1";
        let err = parse_strategy::<f64>(text).unwrap_err();
        match err {
            IntentError::Semantic(msg) => assert!(msg.contains("duplicate metric"), "{msg}"),
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn missing_goal_is_semantic_error() {
        let text = "user=u; entity e; action a(); window 0 1";
        let err = parse_strategy::<f64>(text).unwrap_err();
        match err {
            IntentError::Semantic(msg) => assert!(msg.contains("empty goal set"), "{msg}"),
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position_and_expectation() {
        let text = "user=u; goal x ~ 1; entity e; action a(); window 0 1";
        let err = parse_strategy::<f64>(text).unwrap_err();
        match err {
            IntentError::Syntax { offset, expected } => {
                assert_eq!(offset, text.find('~').unwrap());
                assert!(expected.contains("relational operator"), "{expected}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn multi_param_action_parses_in_order() {
        let text = "user=u; goal x < 1; entity e; action tune(alpha=0.5, beta=2); window 0 1";
        let s: StrategyTuple<f64> = parse_strategy(text).unwrap();
        assert_eq!(
            s.actions[0].params,
            vec![("alpha".to_owned(), 0.5), ("beta".to_owned(), 2.0)]
        );
    }

    #[test]
    fn print_parse_round_trip() {
        let s: StrategyTuple<f64> = parse_strategy(WORKED_EXAMPLE).unwrap();
        let printed = s.to_dsl();
        let back: StrategyTuple<f64> = parse_strategy(&printed).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn ops_round_trip_through_dsl() {
        for op in ["<", ">", "<=", ">="] {
            let text = format!("user=u; goal x {op} 1.5; entity e; action a(); window 0 1");
            let s: StrategyTuple<f64> = parse_strategy(&text).unwrap();
            assert_eq!(s.goals[0].op.as_str(), op);
            let back: StrategyTuple<f64> = parse_strategy(&s.to_dsl()).unwrap();
            assert_eq!(back, s);
        }
    }
}
