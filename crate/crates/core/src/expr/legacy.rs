//! Rewrites dictionary accessors from older harness files into bare names.

use super::ExprError;
use crate::facts::is_identifier;

const ACCESSOR: &str = "input.get";

/// `input.get('x')` and `input.get("x")` become `x`. Anything else spelled
/// `input.get` is rejected rather than guessed at.
pub fn translate_legacy(src: &str) -> Result<String, ExprError> {
    let bytes = src.as_bytes();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    let mut copied = 0;
    while let Some(found) = src[i..].find(ACCESSOR) {
        let at = i + found;
        let boundary = at == 0 || !(bytes[at - 1].is_ascii_alphanumeric() || bytes[at - 1] == b'_' || bytes[at - 1] == b'.');
        if !boundary {
            i = at + ACCESSOR.len();
            continue;
        }
        let (name, end) = accessor_at(src, at + ACCESSOR.len()).ok_or(ExprError::MalformedAccessor { offset: at })?;
        out.push_str(&src[copied..at]);
        out.push_str(name);
        copied = end;
        i = end;
    }
    out.push_str(&src[copied..]);
    Ok(out)
}

/// Parses `( 'name' )` starting right after `input.get`, returning the name
/// and the offset just past the closing parenthesis.
fn accessor_at(src: &str, mut i: usize) -> Option<(&str, usize)> {
    let bytes = src.as_bytes();
    let skip_ws = |mut j: usize| {
        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
            j += 1;
        }
        j
    };
    i = skip_ws(i);
    if bytes.get(i) != Some(&b'(') {
        return None;
    }
    i = skip_ws(i + 1);
    let quote = *bytes.get(i)?;
    if quote != b'\'' && quote != b'"' {
        return None;
    }
    let start = i + 1;
    let len = src[start..].find(quote as char)?;
    let name = &src[start..start + len];
    if !is_identifier(name) {
        return None;
    }
    i = skip_ws(start + len + 1);
    if bytes.get(i) != Some(&b')') {
        return None;
    }
    Some((name, i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrites_both_quote_styles() {
        assert_eq!(translate_legacy("input.get('a') + input.get( \"b\" )").unwrap(), "a + b");
    }

    #[test]
    fn idempotent() {
        let once = translate_legacy("(input.get('v') / 3.6) ** 2 < input.get('p')").unwrap();
        assert_eq!(translate_legacy(&once).unwrap(), once);
    }

    #[test]
    fn leaves_plain_names_alone() {
        assert_eq!(translate_legacy("input + my_input.get").unwrap(), "input + my_input.get");
    }

    #[test]
    fn unquoted_key_is_malformed() {
        assert_eq!(translate_legacy("1 + input.get(x)"), Err(ExprError::MalformedAccessor { offset: 4 }));
        assert!(translate_legacy("input.get('x'").is_err());
        assert!(translate_legacy("input.get('not an ident')").is_err());
        assert!(translate_legacy("input.get('x', 0)").is_err());
    }
}
