//! Mask-sentence extraction: common token prefix + `<>` + common token suffix.

use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::Result;
use crate::segmenter::{grapheme_len, Segmenter};

pub const PLACEHOLDER: &str = "<>";

/// Templates shorter than this (in grapheme clusters, placeholder included)
/// are discarded.
pub const MIN_MASK_CHARS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTemplate {
    pub pair_id: String,
    pub prefix: String,
    pub suffix: String,
    pub pair: SentencePair,
}

impl MaskTemplate {
    pub fn render(&self) -> String {
        render_mask(&self.prefix, &self.suffix)
    }

    pub fn char_len(&self) -> usize {
        mask_char_len(&self.prefix, &self.suffix)
    }

    /// The differing spans `[acceptable, unacceptable]` between prefix and suffix.
    pub fn middles(&self) -> [&str; 2] {
        self.pair.texts().map(|t| {
            let end = t.len() - self.suffix.len();
            &t[self.prefix.len()..end]
        })
    }
}

pub fn render_mask(prefix: &str, suffix: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + PLACEHOLDER.len() + suffix.len());
    s.push_str(prefix);
    s.push_str(PLACEHOLDER);
    s.push_str(suffix);
    s
}

/// Grapheme count of the rendered mask; the placeholder counts as 2.
pub fn mask_char_len(prefix: &str, suffix: &str) -> usize {
    grapheme_len(prefix) + 2 + grapheme_len(suffix)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum MaskRejection {
    Identical,
    TooShort { char_len: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskOutcome {
    Accepted(MaskTemplate),
    Rejected(MaskRejection),
}

impl MaskOutcome {
    pub fn accepted(self) -> Option<MaskTemplate> {
        match self {
            MaskOutcome::Accepted(t) => Some(t),
            MaskOutcome::Rejected(_) => None,
        }
    }
}

/// Longest common prefix and suffix lengths of two token sequences, with the
/// suffix shrunk until the two do not overlap in the shorter sequence.
pub fn affix_lengths<T: PartialEq>(a: &[T], b: &[T]) -> (usize, usize) {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let room = a.len().min(b.len()) - prefix;
    (prefix, suffix.min(room))
}

pub fn extract_mask(pair: &SentencePair, segmenter: &mut Segmenter) -> Result<MaskOutcome> {
    let [a_text, b_text] = pair.texts();
    if a_text == b_text {
        return Ok(MaskOutcome::Rejected(MaskRejection::Identical));
    }
    let a = segmenter.segment(a_text)?;
    let b = segmenter.segment(b_text)?;
    let (p, s) = affix_lengths(a.tokens(), b.tokens());
    let prefix = a.tokens()[..p].concat();
    let suffix = a.tokens()[a.len() - s..].concat();
    let char_len = mask_char_len(&prefix, &suffix);
    if char_len < MIN_MASK_CHARS {
        return Ok(MaskOutcome::Rejected(MaskRejection::TooShort { char_len }));
    }
    Ok(MaskOutcome::Accepted(MaskTemplate {
        pair_id: pair.pair_id.clone(),
        prefix,
        suffix,
        pair: pair.clone(),
    }))
}

/// One line of the optional template dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub pair_id: String,
    pub prefix: Option<String>,
    pub suffix: Option<String>,
    pub rendered: Option<String>,
    pub disposition: String,
}

impl TemplateRecord {
    pub fn from_outcome(pair_id: &str, outcome: &MaskOutcome) -> Self {
        match outcome {
            MaskOutcome::Accepted(t) => TemplateRecord {
                pair_id: pair_id.to_string(),
                prefix: Some(t.prefix.clone()),
                suffix: Some(t.suffix.clone()),
                rendered: Some(t.render()),
                disposition: "accepted".into(),
            },
            MaskOutcome::Rejected(r) => TemplateRecord {
                pair_id: pair_id.to_string(),
                prefix: None,
                suffix: None,
                rendered: None,
                disposition: match r {
                    MaskRejection::Identical => "rejected_identical".into(),
                    MaskRejection::TooShort { .. } => "rejected_short".into(),
                },
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSentence, MoralLabel};
    use crate::segmenter::SegmenterConfig;

    fn pair(a: &str, b: &str) -> SentencePair {
        SentencePair::from_members(
            "p0",
            LabeledSentence::new("0", a, MoralLabel::Acceptable),
            LabeledSentence::new("1", b, MoralLabel::Unacceptable),
        )
        .unwrap()
    }

    fn chars() -> Segmenter {
        Segmenter::new(SegmenterConfig::character_level()).unwrap()
    }

    #[test]
    fn medicine_alcohol_pair() {
        let out = extract_mask(
            &pair("赤ちゃんに薬を飲ませる", "赤ちゃんにお酒を飲ませる"),
            &mut chars(),
        )
        .unwrap()
        .accepted()
        .unwrap();
        assert_eq!(out.prefix, "赤ちゃんに");
        assert_eq!(out.suffix, "を飲ませる");
        assert_eq!(out.render(), "赤ちゃんに<>を飲ませる");
        assert_eq!(out.char_len(), 12);
        assert_eq!(out.middles(), ["薬", "お酒"]);
    }

    #[test]
    fn identical_pair_rejected() {
        let out = extract_mask(&pair("ab", "ab"), &mut chars()).unwrap();
        assert_eq!(out, MaskOutcome::Rejected(MaskRejection::Identical));
    }

    #[test]
    fn short_mask_rejected() {
        let out = extract_mask(&pair("xy", "xz"), &mut chars()).unwrap();
        assert_eq!(
            out,
            MaskOutcome::Rejected(MaskRejection::TooShort { char_len: 3 })
        );
    }

    #[test]
    fn five_chars_rejected_six_accepted() {
        // "abc<>" is 5, "abc<>d" is 6.
        let out = extract_mask(&pair("abcX", "abcY"), &mut chars()).unwrap();
        assert_eq!(
            out,
            MaskOutcome::Rejected(MaskRejection::TooShort { char_len: 5 })
        );
        let out = extract_mask(&pair("abcXd", "abcYd"), &mut chars()).unwrap();
        assert_eq!(out.accepted().unwrap().render(), "abc<>d");
    }

    #[test]
    fn overlap_shrinks_suffix_first() {
        // "aa" is a prefix and suffix of "aaa"; the prefix is kept whole.
        assert_eq!(affix_lengths(b"aaa", b"aa"), (2, 0));
        assert_eq!(affix_lengths(b"abab", b"ab"), (2, 0));
        assert_eq!(affix_lengths(b"xab", b"ab"), (0, 2));
    }

    #[test]
    fn render_examples() {
        assert_eq!(
            render_mask("赤ちゃんに", "を飲ませる"),
            "赤ちゃんに<>を飲ませる"
        );
        assert_eq!(render_mask("", "をあげた"), "<>をあげた");
        assert_eq!(
            render_mask("１９歳の子に", "をあげた"),
            "１９歳の子に<>をあげた"
        );
        assert_eq!(mask_char_len("", ""), 2);
        assert_eq!(mask_char_len("x", ""), 3);
    }

    #[test]
    fn word_level_tokens_mask_whole_compound() {
        // Compound-aware segmentation keeps the differing span whole.
        let a: Vec<&str> = vec![
            "１９",
            "歳",
            "の",
            "子",
            "に",
            "ノンアルコール飲料",
            "を",
            "あげ",
            "た",
        ];
        let b: Vec<&str> = vec![
            "１９",
            "歳",
            "の",
            "子",
            "に",
            "アルコール飲料",
            "を",
            "あげ",
            "た",
        ];
        assert_eq!(affix_lengths(&a, &b), (5, 3));
        assert_eq!(a[..5].concat(), "１９歳の子に");
    }
}
