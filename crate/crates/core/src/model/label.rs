use regex::Regex;
use std::sync::LazyLock;

/// Token substituted for numbers and hex identifiers in event labels.
pub const LABEL_PLACEHOLDER: &str = "<*>";

static HEX_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:0[xX][0-9a-fA-F]+|[0-9a-fA-F]*[0-9][0-9a-fA-F]*)\b").unwrap()
});
static DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[0-9]+").unwrap());

/// Turns a raw log message into a message template so that `"retry 3"` and
/// `"retry 7"` share one label.
///
/// Whole tokens made of hex digits with at least one decimal digit (and
/// `0x`-prefixed literals) become the placeholder, then any digit run left
/// inside a larger word does too. Idempotent.
pub fn normalize_label(raw: &str) -> String {
    let pass = HEX_TOKEN.replace_all(raw.trim(), LABEL_PLACEHOLDER);
    DIGITS.replace_all(&pass, LABEL_PLACEHOLDER).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numbers_share_a_label() {
        assert_eq!(normalize_label("retry 3"), normalize_label("retry 7"));
        assert_eq!(normalize_label("retry 3"), "retry <*>");
    }

    #[test]
    fn hex_identifiers() {
        assert_eq!(normalize_label("lock 0xdeadBEEF held"), "lock <*> held");
        assert_eq!(normalize_label("req 9f3a2c01 done"), "req <*> done");
        assert_eq!(normalize_label("v2 handler"), "v<*> handler");
        // plain words made of hex letters are left alone
        assert_eq!(normalize_label("cafe added"), "cafe added");
    }

    proptest! {
        #[test]
        fn idempotent(s in "[a-z0-9 x_:/.-]{0,40}") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once.clone());
            prop_assert!(!once.chars().any(|c| c.is_ascii_digit()));
        }
    }
}
