use super::{CodeToken, FrontendError, Span, TokenKind, KEYWORDS};

/// Split source into tokens, skipping whitespace.
///
/// Identifiers are `[A-Za-z_][A-Za-z0-9_]*` and become keywords when they
/// match one of [`KEYWORDS`]. Literals are digit runs and double-quoted
/// strings (no escapes). `+ - * / == < >` are operators; braces, parens,
/// `; , .` and `=` are punctuation. An unterminated string is reported as an
/// invalid character at its opening quote.
pub fn tokenize(source: &str) -> Result<Vec<CodeToken>, FrontendError> {
    let bytes = source.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let (kind, end) = if b.is_ascii_alphabetic() || b == b'_' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            let kind = if KEYWORDS.contains(&&source[i..j]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            (kind, j)
        } else if b.is_ascii_digit() {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            (TokenKind::Literal, j)
        } else if b == b'"' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j] != b'"' && bytes[j] != b'\n' {
                j += 1;
            }
            if j >= bytes.len() || bytes[j] != b'"' {
                return Err(FrontendError::InvalidCharacter { ch: '"', offset: i });
            }
            (TokenKind::Literal, j + 1)
        } else if b == b'=' && bytes.get(i + 1) == Some(&b'=') {
            (TokenKind::Operator, i + 2)
        } else if matches!(b, b'+' | b'-' | b'*' | b'/' | b'<' | b'>') {
            (TokenKind::Operator, i + 1)
        } else if matches!(b, b'(' | b')' | b'{' | b'}' | b';' | b',' | b'.' | b'=') {
            (TokenKind::Punct, i + 1)
        } else {
            let ch = source[i..].chars().next().unwrap();
            return Err(FrontendError::InvalidCharacter { ch, offset: i });
        };
        toks.push(CodeToken {
            text: source[start..end].to_string(),
            kind,
            span: Span { start, end },
        });
        i = end;
    }
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_and_spans() {
        let src = "int getTotal(string s) { _x = s.size() + 12; }";
        let toks = tokenize(src).unwrap();
        let kinds: Vec<TokenKind> = toks.iter().map(|t| t.kind).collect();
        use TokenKind::*;
        assert_eq!(
            kinds,
            vec![
                Keyword, Identifier, Punct, Keyword, Identifier, Punct, Punct, Identifier, Punct,
                Identifier, Punct, Identifier, Punct, Punct, Operator, Literal, Punct, Punct,
            ]
        );
        for t in &toks {
            assert_eq!(&src[t.span.start..t.span.end], t.text);
        }
    }

    #[test]
    fn double_equals_is_one_operator() {
        let toks = tokenize("a == b = c").unwrap();
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "==", "b", "=", "c"]);
        assert_eq!(toks[1].kind, TokenKind::Operator);
        assert_eq!(toks[3].kind, TokenKind::Punct);
    }

    #[test]
    fn string_literals_keep_quotes() {
        let toks = tokenize("x = \"hi there\";").unwrap();
        assert_eq!(toks[2].text, "\"hi there\"");
        assert_eq!(toks[2].kind, TokenKind::Literal);
    }

    #[test]
    fn rejects_unknown_characters() {
        let err = tokenize("int a = #;").unwrap_err();
        assert_eq!(err, FrontendError::InvalidCharacter { ch: '#', offset: 8 });
    }

    #[test]
    fn rejects_unterminated_string() {
        let err = tokenize("x = \"oops").unwrap_err();
        assert_eq!(err, FrontendError::InvalidCharacter { ch: '"', offset: 4 });
    }
}
