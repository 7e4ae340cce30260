use std::collections::BTreeSet;
use std::fmt::Write as _;

/// Lowercases, drops a trailing file extension, splits on `-`, `_`, space,
/// `.` and digit runs, removes stopwords and duplicates. Order preserved.
pub fn tokenize_name(name: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    let lower = name.to_lowercase();
    let stem = match lower.rfind('.') {
        Some(dot)
            if dot > 0
                && dot + 1 < lower.len()
                && lower[dot + 1..].len() <= 5
                && lower[dot + 1..].chars().all(|c| c.is_ascii_alphanumeric()) =>
        {
            &lower[..dot]
        }
        _ => lower.as_str(),
    };
    let mut out: Vec<String> = Vec::new();
    for tok in stem.split(|c: char| matches!(c, '-' | '_' | ' ' | '.') || c.is_ascii_digit()) {
        if tok.is_empty() || stopwords.contains(tok) || out.iter().any(|t| t == tok) {
            continue;
        }
        out.push(tok.to_string());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStatus {
    Matched,
    Multi,
    Unmatched,
}

impl MatchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Matched => "matched",
            Self::Multi => "multi",
            Self::Unmatched => "unmatched",
        }
    }
}

/// For each image name, in input order, the classes it was copied to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMapping {
    pub images: Vec<(String, Vec<String>)>,
}

impl ClassMapping {
    pub fn classes_of(&self, image: &str) -> Option<&[String]> {
        self.images.iter().find(|(n, _)| n == image).map(|(_, c)| c.as_slice())
    }

    pub fn status(classes: &[String]) -> MatchStatus {
        match classes.len() {
            0 => MatchStatus::Unmatched,
            1 => MatchStatus::Matched,
            _ => MatchStatus::Multi,
        }
    }

    pub fn unmatched(&self) -> Vec<&str> {
        self.images
            .iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn multi_matched(&self) -> Vec<&str> {
        self.images
            .iter()
            .filter(|(_, c)| c.len() > 1)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// `image\tstatus\tclasses` with classes comma-separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("image\tstatus\tclasses\n");
        for (name, classes) in &self.images {
            let _ = writeln!(out, "{name}\t{}\t{}", Self::status(classes).as_str(), classes.join(","));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("image\tstatus\tclasses") {
            return Err("missing mapping header".into());
        }
        let mut images = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(format!("line {}: expected 3 columns", i + 2));
            }
            let classes: Vec<String> = cols[2].split(',').filter(|s| !s.is_empty()).map(String::from).collect();
            if Self::status(&classes).as_str() != cols[1] {
                return Err(format!("line {}: status `{}` disagrees with classes", i + 2, cols[1]));
            }
            images.push((cols[0].to_string(), classes));
        }
        Ok(Self { images })
    }
}

/// An image is copied to every class sharing at least one token with it.
/// Classes are listed in `class_names` order.
pub fn map_to_classes<S: AsRef<str>>(
    image_names: &[S],
    class_names: &[S],
    stopwords: &BTreeSet<String>,
) -> ClassMapping {
    let class_tokens: Vec<(&str, Vec<String>)> = class_names
        .iter()
        .map(|c| (c.as_ref(), tokenize_name(c.as_ref(), stopwords)))
        .collect();
    let images = image_names
        .iter()
        .map(|img| {
            let toks = tokenize_name(img.as_ref(), stopwords);
            let classes = class_tokens
                .iter()
                .filter(|(_, ct)| ct.iter().any(|t| toks.contains(t)))
                .map(|(c, _)| c.to_string())
                .collect();
            (img.as_ref().to_string(), classes)
        })
        .collect();
    ClassMapping { images }
}
