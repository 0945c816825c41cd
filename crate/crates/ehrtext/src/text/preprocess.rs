//! Note cleanup: section stripping on raw text, then normalization.
//!
//! `strip_sections` runs on the raw document (headers still carry their
//! capitalization and colons); `normalize_text` runs on whatever is left.

use regex::Regex;
use std::collections::BTreeSet;
use std::sync::OnceLock;

static DATE_PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
static NUMBER_PATTERN: OnceLock<Regex> = OnceLock::new();
static HEADER_PATTERN: OnceLock<Regex> = OnceLock::new();

/// Sections carrying no clinical content: procedure boilerplate, patient
/// instructions, and administrative segments.
pub const DEFAULT_DROP_HEADERS: &[&str] = &[
    "technique",
    "discharge instructions",
    "billing",
    "signature",
];

/// Recognized date shapes, matched after lowercasing: ISO (2019-03-04),
/// slash (3/4/2019), day-abbreviated-month (4-mar-2019), and written
/// month-day-year (march 4, 2019).
fn date_patterns() -> &'static [Regex] {
    DATE_PATTERNS.get_or_init(|| {
        let mon = "(?:jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)";
        let month = "(?:january|february|march|april|may|june|july|august|\
                     september|october|november|december)";
        [
            r"\b\d{4}-\d{2}-\d{2}\b".to_string(),
            r"\b\d{1,2}/\d{1,2}/\d{2,4}\b".to_string(),
            format!(r"\b\d{{1,2}}-{mon}-\d{{2,4}}\b"),
            format!(r"\b{month}\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}\b"),
        ]
        .iter()
        .map(|p| Regex::new(p).expect("static regex"))
        .collect()
    })
}

fn number_pattern() -> &'static Regex {
    NUMBER_PATTERN.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").expect("static regex"))
}

/// A line is treated as a section header when it starts (after optional
/// indentation) with a short run of letters and spaces followed by a colon.
fn header_pattern() -> &'static Regex {
    HEADER_PATTERN.get_or_init(|| {
        Regex::new(r"^\s*([A-Za-z][A-Za-z ]{0,40}?)\s*:").expect("static regex")
    })
}

/// Lowercases, removes date patterns, digit runs, and ASCII punctuation, and
/// collapses whitespace. Removal order matters: dates go first so their
/// digits are not shredded into bare numbers that leave separators behind.
/// Output contains only lowercase words separated by single spaces, so the
/// function is idempotent.
pub fn normalize_text(raw: &str) -> String {
    let mut s = raw.to_lowercase();
    for re in date_patterns() {
        s = re.replace_all(&s, " ").into_owned();
    }
    s = number_pattern().replace_all(&s, " ").into_owned();
    let s: String = s
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    let mut out = String::with_capacity(s.len());
    for (i, word) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// The standard cleanup path for a raw note: drop the default decoy
/// sections, then normalize.
pub fn clean_note(raw: &str) -> String {
    normalize_text(&strip_sections(raw, DEFAULT_DROP_HEADERS))
}

/// Removes every section whose header (the text before the colon, matched
/// case-insensitively) appears in `drop_headers`. A dropped section spans
/// from its header line to the next header-looking line or end of document;
/// consecutive dropped sections are removed without leaving blank lines.
/// Headers not in the list, and documents without any listed header, pass
/// through untouched.
pub fn strip_sections<S: AsRef<str>>(raw: &str, drop_headers: &[S]) -> String {
    let drop: BTreeSet<String> = drop_headers
        .iter()
        .map(|h| h.as_ref().trim().to_lowercase())
        .collect();
    let mut kept: Vec<&str> = Vec::new();
    let mut skipping = false;
    for line in raw.lines() {
        let header = header_pattern()
            .captures(line)
            .map(|c| c[1].trim().to_lowercase());
        match header {
            Some(name) if drop.contains(&name) => skipping = true,
            Some(_) => {
                skipping = false;
                kept.push(line);
            }
            None => {
                if !skipping {
                    kept.push(line);
                }
            }
        }
    }
    let mut out = kept.join("\n");
    if raw.ends_with('\n') && !out.is_empty() {
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_worked_example() {
        assert_eq!(normalize_text("Admitted 2019-03-04, BP 120/80."), "admitted bp");
    }

    #[test]
    fn normalize_lowercase_and_space_collapse() {
        assert_eq!(normalize_text("HELLO   World"), "hello world");
    }

    #[test]
    fn normalize_empty() {
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn normalize_all_date_forms() {
        assert_eq!(normalize_text("seen 2021-11-30 ok"), "seen ok");
        assert_eq!(normalize_text("seen 3/4/2019 ok"), "seen ok");
        assert_eq!(normalize_text("seen 4-Mar-2019 ok"), "seen ok");
        assert_eq!(normalize_text("seen March 4, 2019 ok"), "seen ok");
        assert_eq!(normalize_text("seen March 4 2019 ok"), "seen ok");
    }

    #[test]
    fn normalize_strips_all_digits_and_punctuation() {
        let out = normalize_text("dose 12.5mg q6h; temp 98.6F (oral) [stable] #2");
        assert!(out.chars().all(|c| c.is_ascii_lowercase() || c == ' '), "{out:?}");
    }

    #[test]
    fn normalize_idempotent() {
        let cases = [
            "Admitted 2019-03-04, BP 120/80.",
            "Plan: follow-up in 2 weeks (cardiology).",
            "",
            "  spaced   OUT  ",
        ];
        for raw in cases {
            let once = normalize_text(raw);
            assert_eq!(normalize_text(&once), once);
        }
    }

    #[test]
    fn strip_removes_listed_section_keeps_neighbors() {
        let doc = "History: chest pain\nDischarge Instructions: go home\nrest well\nFindings: clear\n";
        let out = strip_sections(doc, &["Discharge Instructions"]);
        assert_eq!(out, "History: chest pain\nFindings: clear\n");
    }

    #[test]
    fn strip_is_case_insensitive() {
        let doc = "history: a\nDISCHARGE INSTRUCTIONS: b\nfindings: c";
        let out = strip_sections(doc, &["discharge instructions"]);
        assert_eq!(out, "history: a\nfindings: c");
    }

    #[test]
    fn strip_no_listed_headers_is_identity() {
        let doc = "History: chest pain\nplain line\nFindings: clear\n";
        assert_eq!(strip_sections(doc, &["Technique"]), doc);
    }

    #[test]
    fn strip_consecutive_sections_leave_no_blanks() {
        let doc = "Keep: yes\nTechnique: ct scan\ndetails here\nDischarge Instructions: rest\nmore\nFinal: ok";
        let out = strip_sections(doc, &["Technique", "Discharge Instructions"]);
        assert_eq!(out, "Keep: yes\nFinal: ok");
    }

    #[test]
    fn strip_section_runs_to_end_of_document() {
        let doc = "Keep: yes\nTechnique: ct\ntrailing body\nstill inside";
        assert_eq!(strip_sections(doc, &["Technique"]), "Keep: yes");
    }

    #[test]
    fn strip_then_normalize_is_punctuation_free() {
        let doc = "Course: Stable on 5mg.\nTechnique: MRI 3/4/2019 contrast.\nPlan: follow up";
        let stripped = strip_sections(doc, &["Technique"]);
        let norm = normalize_text(&stripped);
        assert_eq!(norm, "course stable on mg plan follow up");
    }
}
