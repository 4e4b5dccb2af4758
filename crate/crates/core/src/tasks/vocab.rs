//! The shared token vocabulary for all task families.
//!
//! Token 0 is the policy's reserved start token; everything else is laid
//! out densely so the whole alphabet fits a tiny model head.

/// Reserved sequence-start token (see [`crate::policy::BOS_TOKEN`]).
pub const BOS: u32 = 0;
/// End-of-response token.
pub const EOS: u32 = 1;
/// Answer-region open delimiter.
pub const ANS_OPEN: u32 = 2;
/// Answer-region close delimiter.
pub const ANS_CLOSE: u32 = 3;

const DIGIT_BASE: u32 = 4;
pub const PLUS: u32 = 14;
pub const MINUS: u32 = 15;
pub const TIMES: u32 = 16;
pub const MOD: u32 = 17;
pub const LPAREN: u32 = 18;
pub const RPAREN: u32 = 19;
pub const EQUALS: u32 = 20;
pub const LBRACKET: u32 = 21;
pub const RBRACKET: u32 = 22;
pub const COMMA: u32 = 23;
pub const COLON: u32 = 24;
pub const SEMICOLON: u32 = 25;
pub const YES: u32 = 26;
pub const NO: u32 = 27;
pub const MAPS_TO: u32 = 28;

const LETTER_BASE: u32 = 29;
/// Number of letter tokens (`a` onward).
pub const N_LETTERS: u32 = 8;

/// Smallest vocab size that covers every token above.
pub const SIZE: u32 = LETTER_BASE + N_LETTERS;

/// Token for decimal digit `d`.
pub fn digit(d: u32) -> u32 {
    assert!(d < 10, "digit out of range: {d}");
    DIGIT_BASE + d
}

/// Decimal value of a digit token, if it is one.
pub fn digit_value(token: u32) -> Option<u32> {
    (DIGIT_BASE..DIGIT_BASE + 10)
        .contains(&token)
        .then(|| token - DIGIT_BASE)
}

/// Token for letter index `i` (0 = `a`).
pub fn letter(i: u32) -> u32 {
    assert!(i < N_LETTERS, "letter out of range: {i}");
    LETTER_BASE + i
}

/// Letter index of a letter token, if it is one.
pub fn letter_value(token: u32) -> Option<u32> {
    (LETTER_BASE..LETTER_BASE + N_LETTERS)
        .contains(&token)
        .then(|| token - LETTER_BASE)
}

/// Digit tokens of a non-negative number, most significant first.
pub fn number_tokens(mut value: u64) -> Vec<u32> {
    let mut digits = Vec::new();
    loop {
        digits.push(digit((value % 10) as u32));
        value /= 10;
        if value == 0 {
            break;
        }
    }
    digits.reverse();
    digits
}

/// Human-readable rendering, for dumps and debugging.
pub fn render(tokens: &[u32]) -> String {
    let mut out = String::new();
    for &t in tokens {
        let s: String = match t {
            BOS => "<bos>".into(),
            EOS => "<eos>".into(),
            ANS_OPEN => "<ans>".into(),
            ANS_CLOSE => "</ans>".into(),
            PLUS => "+".into(),
            MINUS => "-".into(),
            TIMES => "*".into(),
            MOD => "%".into(),
            LPAREN => "(".into(),
            RPAREN => ")".into(),
            EQUALS => "=".into(),
            LBRACKET => "[".into(),
            RBRACKET => "]".into(),
            COMMA => ",".into(),
            COLON => ":".into(),
            SEMICOLON => ";".into(),
            YES => "Y".into(),
            NO => "N".into(),
            MAPS_TO => ">".into(),
            _ => {
                if let Some(d) = digit_value(t) {
                    d.to_string()
                } else if let Some(l) = letter_value(t) {
                    char::from(b'a' + l as u8).to_string()
                } else {
                    format!("<{t}?>")
                }
            }
        };
        out.push_str(&s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_fits_the_token_budget() {
        assert!(SIZE <= 64);
        assert_eq!(digit(0), 4);
        assert_eq!(digit(9), 13);
        assert_eq!(letter(0), LETTER_BASE);
    }

    #[test]
    fn number_tokens_handle_multi_digit() {
        assert_eq!(number_tokens(0), vec![digit(0)]);
        assert_eq!(number_tokens(407), vec![digit(4), digit(0), digit(7)]);
    }

    #[test]
    fn render_is_readable() {
        let tokens = vec![LPAREN, digit(3), PLUS, digit(4), RPAREN, MOD, digit(7), EQUALS];
        assert_eq!(render(&tokens), "(3+4)%7=");
    }
}
