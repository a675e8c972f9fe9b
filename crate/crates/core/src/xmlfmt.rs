use std::borrow::Cow;
use std::fmt::Write;

pub(crate) const XML_DECL: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

pub(crate) fn escape_attr(value: &str) -> Cow<'_, str> {
    if !value.contains(['&', '<', '>', '"', '\'']) {
        return Cow::Borrowed(value);
    }
    let mut out = String::with_capacity(value.len() + 8);
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    Cow::Owned(out)
}

/// Writes `<name a="v" ...` without closing the tag.
pub(crate) fn open_tag(out: &mut String, indent: usize, name: &str, attrs: &[(&str, &str)]) {
    for _ in 0..indent {
        out.push_str("    ");
    }
    out.push('<');
    out.push_str(name);
    for (k, v) in attrs {
        let _ = write!(out, " {k}=\"{}\"", escape_attr(v));
    }
}

pub(crate) fn empty_element(out: &mut String, indent: usize, name: &str, attrs: &[(&str, &str)]) {
    open_tag(out, indent, name, attrs);
    out.push_str("/>\n");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape_attr("a<b&\"c\""), "a&lt;b&amp;&quot;c&quot;");
        assert!(matches!(escape_attr("plain"), Cow::Borrowed(_)));
    }
}
