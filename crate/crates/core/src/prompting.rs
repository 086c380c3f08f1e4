//! Consistency and polarity prompt construction from gold triplets.
//!
//! A prompt pairs one gold aspect with one gold opinion (optionally perturbed)
//! and asks, through a masked slot, whether the pair belongs together. Pairs
//! that do get a second masked slot asking for their polarity.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnnotatedSentence, Polarity, Span};

pub const MASK_TOKEN: &str = "[MASK]";

/// Label words scored at mask positions, in head-row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelWord {
    Yes,
    No,
    Polarity(Polarity),
}

impl LabelWord {
    pub const ALL: [LabelWord; 5] = [
        LabelWord::Yes,
        LabelWord::No,
        LabelWord::Polarity(Polarity::Positive),
        LabelWord::Polarity(Polarity::Negative),
        LabelWord::Polarity(Polarity::Neutral),
    ];

    pub fn index(self) -> usize {
        match self {
            LabelWord::Yes => 0,
            LabelWord::No => 1,
            LabelWord::Polarity(p) => 2 + p.rank(),
        }
    }

    /// Vocabulary word the label is verbalized as.
    pub fn surface(self) -> &'static str {
        match self {
            LabelWord::Yes => "yes",
            LabelWord::No => "no",
            LabelWord::Polarity(Polarity::Positive) => "positive",
            LabelWord::Polarity(Polarity::Negative) => "negative",
            LabelWord::Polarity(Polarity::Neutral) => "neutral",
        }
    }

    pub fn consistency(consistent: bool) -> LabelWord {
        if consistent {
            LabelWord::Yes
        } else {
            LabelWord::No
        }
    }
}

/// One position of a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    /// Pseudo prompt token, 0-based index into the prompt encoder output.
    Pseudo(usize),
    /// One word of the aspect term.
    Aspect(String),
    /// One word of the opinion term.
    Opinion(String),
    /// A fixed template word.
    Literal(String),
    Mask,
}

impl Slot {
    pub fn is_pseudo(&self) -> bool {
        matches!(self, Slot::Pseudo(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TemplateKind {
    /// Pseudo tokens at three runs: `1..=l1`, `l1+1..=l2`, `l2+1..=lp`.
    Auto { l1: usize, l2: usize, lp: usize },
    /// Fixed wording with `{A}`, `{O}` and `[MASK]` slots.
    Manual { consistency: String, polarity: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    #[serde(flatten)]
    pub kind: TemplateKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Aspect,
    Opinion,
    Mask,
    Word(String),
}

impl Template {
    /// Auto template with `n` pseudo tokens in each run.
    pub fn auto(n: usize) -> Template {
        Template {
            name: format!("auto-{n}"),
            kind: TemplateKind::Auto {
                l1: n,
                l2: 2 * n,
                lp: 3 * n,
            },
        }
    }

    pub fn manual() -> Template {
        Template {
            name: "manual".into(),
            kind: TemplateKind::Manual {
                consistency: "The {A} is {O}? [MASK].".into(),
                polarity: "This is [MASK]".into(),
            },
        }
    }

    /// Built-in presets: `auto-1`, `auto-2`, `auto-3` and `manual`.
    pub fn presets() -> Vec<Template> {
        vec![Template::auto(1), Template::auto(2), Template::auto(3), Template::manual()]
    }

    pub fn preset(name: &str) -> Option<Template> {
        Self::presets().into_iter().find(|t| t.name == name)
    }

    /// Number of pseudo tokens (`lP`); zero for manual templates.
    pub fn pseudo_count(&self) -> usize {
        match self.kind {
            TemplateKind::Auto { lp, .. } => lp,
            TemplateKind::Manual { .. } => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            TemplateKind::Auto { l1, l2, lp } => {
                if !(l1 <= l2 && l2 <= lp) || *lp == 0 {
                    return Err(Error::Template(format!(
                        "{}: need l1 <= l2 <= lp and lp >= 1, got {l1}/{l2}/{lp}",
                        self.name
                    )));
                }
                Ok(())
            }
            TemplateKind::Manual { consistency, polarity } => {
                let c = tokenize_template(consistency);
                let p = tokenize_template(polarity);
                let count = |pieces: &[Piece], want: &Piece| pieces.iter().filter(|x| *x == want).count();
                for (piece, label) in [(Piece::Aspect, "{A}"), (Piece::Opinion, "{O}"), (Piece::Mask, MASK_TOKEN)] {
                    if count(&c, &piece) != 1 {
                        return Err(Error::Template(format!(
                            "{}: consistency text must contain {label} exactly once",
                            self.name
                        )));
                    }
                }
                if count(&p, &Piece::Mask) != 1 || count(&p, &Piece::Aspect) + count(&p, &Piece::Opinion) > 0 {
                    return Err(Error::Template(format!(
                        "{}: polarity text must contain exactly one {MASK_TOKEN} and no term slots",
                        self.name
                    )));
                }
                Ok(())
            }
        }
    }

    /// Fixed template words, for vocabulary construction.
    pub fn literal_words(&self) -> Vec<String> {
        match &self.kind {
            TemplateKind::Auto { .. } => vec!["?".into()],
            TemplateKind::Manual { consistency, polarity } => tokenize_template(consistency)
                .into_iter()
                .chain(tokenize_template(polarity))
                .filter_map(|p| match p {
                    Piece::Word(w) => Some(w),
                    _ => None,
                })
                .collect(),
        }
    }
}

/// Splits template text into words, slot markers and standalone `?`/`.`.
fn tokenize_template(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut rest = raw;
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("{A}") {
                out.push(Piece::Aspect);
                rest = r;
            } else if let Some(r) = rest.strip_prefix("{O}") {
                out.push(Piece::Opinion);
                rest = r;
            } else if let Some(r) = rest.strip_prefix(MASK_TOKEN) {
                out.push(Piece::Mask);
                rest = r;
            } else if let Some(r) = rest.strip_prefix(['?', '.']) {
                out.push(Piece::Word(rest[..1].to_owned()));
                rest = r;
            } else {
                let end = (1..rest.len())
                    .filter(|&i| rest.is_char_boundary(i))
                    .find(|&i| starts_piece(&rest[i..]))
                    .unwrap_or(rest.len());
                out.push(Piece::Word(rest[..end].to_owned()));
                rest = &rest[end..];
            }
        }
    }
    out
}

fn starts_piece(s: &str) -> bool {
    s.starts_with(['?', '.']) || s.starts_with("{A}") || s.starts_with("{O}") || s.starts_with(MASK_TOKEN)
}

/// Named templates loaded from a catalog file on top of the presets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplateCatalog {
    #[serde(default)]
    pub templates: BTreeMap<String, TemplateKind>,
}

impl TemplateCatalog {
    pub fn with_presets() -> Self {
        TemplateCatalog {
            templates: Template::presets().into_iter().map(|t| (t.name, t.kind)).collect(),
        }
    }

    /// Reads a TOML catalog; entries override presets of the same name.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TemplateCatalog = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut catalog = Self::with_presets();
        for (name, kind) in file.templates {
            let template = Template { name: name.clone(), kind };
            template.validate()?;
            catalog.templates.insert(name, template.kind);
        }
        Ok(catalog)
    }

    pub fn get(&self, name: &str) -> Result<Template> {
        self.templates
            .get(name)
            .map(|kind| Template {
                name: name.to_owned(),
                kind: kind.clone(),
            })
            .ok_or_else(|| Error::Template(format!("unknown template {name:?}")))
    }
}

/// A rendered prompt with its mask labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub layout: Vec<Slot>,
    pub aspect: Span,
    pub opinion: Span,
    pub consistent: bool,
    pub polarity: Option<Polarity>,
    pub sentence_id: String,
}

impl PromptSample {
    pub fn consistency_label(&self) -> LabelWord {
        LabelWord::consistency(self.consistent)
    }

    /// Gold label of each mask slot in layout order.
    pub fn mask_labels(&self) -> Vec<LabelWord> {
        let mut labels = vec![self.consistency_label()];
        if let Some(p) = self.polarity {
            labels.push(LabelWord::Polarity(p));
        }
        labels
    }

    pub fn mask_count(&self) -> usize {
        self.layout.iter().filter(|s| matches!(s, Slot::Mask)).count()
    }
}

impl fmt::Display for PromptSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for slot in &self.layout {
            let text = match slot {
                Slot::Pseudo(k) => format!("P{}", k + 1),
                Slot::Aspect(w) | Slot::Opinion(w) | Slot::Literal(w) => w.clone(),
                Slot::Mask => MASK_TOKEN.to_owned(),
            };
            let glue = matches!(slot, Slot::Literal(w) if w == "?" || w == ".");
            if !first && !glue {
                f.write_str(" ")?;
            }
            f.write_str(&text)?;
            first = false;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Prompts drawn per sentence per epoch.
    pub k_samples: usize,
    /// Probability that a drawn pair is span-manipulated.
    pub manipulation_prob: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            k_samples: 2,
            manipulation_prob: 0.3,
        }
    }
}

fn is_gold_pair(sentence: &AnnotatedSentence, aspect: Span, opinion: Span) -> bool {
    sentence
        .triplets
        .iter()
        .any(|t| t.aspect == aspect && t.opinion == opinion)
}

/// Draws a gold aspect and a gold opinion independently and uniformly from
/// the distinct gold spans.
pub fn sample_pair<R: Rng + ?Sized>(sentence: &AnnotatedSentence, rng: &mut R) -> Result<(Span, Span, bool)> {
    let aspect = sentence.aspects().into_iter().choose(rng).ok_or(Error::NoTriplets)?;
    let opinion = sentence.opinions().into_iter().choose(rng).ok_or(Error::NoTriplets)?;
    Ok((aspect, opinion, is_gold_pair(sentence, aspect, opinion)))
}

/// Perturbs `span`: multi-word spans shrink to a uniformly chosen proper
/// sub-span, single words grow by one or two neighbours on a random side.
pub fn manipulate_span<R: Rng + ?Sized>(span: Span, sentence: &AnnotatedSentence, rng: &mut R) -> Result<Span> {
    let n = sentence.len();
    if !span.fits(n) {
        return Err(Error::Argument(format!("span {span} outside a {n}-word sentence")));
    }
    if span.len() > 1 {
        let subs: Vec<Span> = (span.start()..=span.end())
            .flat_map(|s| (s..=span.end()).map(move |e| (s, e)))
            .filter(|&(s, e)| (s, e) != (span.start(), span.end()))
            .map(|(s, e)| Span::new(s, e).expect("sub-span of a valid span"))
            .collect();
        return Ok(subs[rng.random_range(0..subs.len())]);
    }
    let left = span.start() - 1;
    let right = n - span.end();
    let sides: Vec<(bool, usize)> = [(true, left), (false, right)]
        .into_iter()
        .filter(|&(_, free)| free > 0)
        .collect();
    if sides.is_empty() {
        return Err(Error::ManipulationImpossible);
    }
    let (is_left, free) = sides[rng.random_range(0..sides.len())];
    let count = rng.random_range(1..=free.min(2));
    
    if is_left {
        Span::new(span.start() - count, span.end())
    } else {
        Span::new(span.start(), span.end() + count)
    }
}

/// Fills `template` for the pair `(aspect, opinion)`. The polarity suffix is
/// appended iff the pair is consistent.
pub fn render_prompt(
    sentence: &AnnotatedSentence,
    aspect: Span,
    opinion: Span,
    consistent: bool,
    polarity: Option<Polarity>,
    template: &Template,
) -> Result<PromptSample> {
    if consistent != polarity.is_some() {
        return Err(Error::Argument(
            "a polarity must be given exactly when the pair is consistent".into(),
        ));
    }
    template.validate()?;
    let aspect_words = || aspect.words(&sentence.words).iter().cloned().map(Slot::Aspect);
    let opinion_words = || opinion.words(&sentence.words).iter().cloned().map(Slot::Opinion);

    let mut layout = Vec::new();
    match &template.kind {
        TemplateKind::Auto { l1, l2, lp } => {
            layout.extend((0..*l1).map(Slot::Pseudo));
            layout.extend(aspect_words());
            layout.extend((*l1..*l2).map(Slot::Pseudo));
            layout.extend(opinion_words());
            layout.push(Slot::Literal("?".into()));
            layout.push(Slot::Mask);
            if consistent {
                layout.extend((*l2..*lp).map(Slot::Pseudo));
                layout.push(Slot::Mask);
            }
        }
        TemplateKind::Manual { consistency, polarity: suffix } => {
            let push = |pieces: Vec<Piece>, layout: &mut Vec<Slot>| {
                for piece in pieces {
                    match piece {
                        Piece::Aspect => layout.extend(aspect_words()),
                        Piece::Opinion => layout.extend(opinion_words()),
                        Piece::Mask => layout.push(Slot::Mask),
                        Piece::Word(w) => layout.push(Slot::Literal(w)),
                    }
                }
            };
            push(tokenize_template(consistency), &mut layout);
            if consistent {
                push(tokenize_template(suffix), &mut layout);
            }
        }
    }
    Ok(PromptSample {
        layout,
        aspect,
        opinion,
        consistent,
        polarity,
        sentence_id: sentence.id.clone(),
    })
}

/// Draws `k_samples` prompts for one sentence. Labels are always re-derived
/// from gold-pair membership, so a manipulated pair that lands on a gold pair
/// is still labelled consistent.
pub fn build_prompt_batch<R: Rng + ?Sized>(
    sentence: &AnnotatedSentence,
    template: &Template,
    config: &PromptConfig,
    rng: &mut R,
) -> Result<Vec<PromptSample>> {
    if sentence.triplets.is_empty() {
        return Err(Error::NoTriplets);
    }
    let mut out = Vec::with_capacity(config.k_samples);
    for _ in 0..config.k_samples {
        let (mut aspect, mut opinion, _) = sample_pair(sentence, rng)?;
        if rng.random_bool(config.manipulation_prob.clamp(0.0, 1.0)) {
            let aspect_first = rng.random_bool(0.5);
            let order = if aspect_first { [true, false] } else { [false, true] };
            for manipulate_aspect in order {
                let target = if manipulate_aspect { aspect } else { opinion };
                match manipulate_span(target, sentence, rng) {
                    Ok(span) if manipulate_aspect => aspect = span,
                    Ok(span) => opinion = span,
                    Err(Error::ManipulationImpossible) => continue,
                    Err(e) => return Err(e),
                }
                break;
            }
        }
        let polarity = sentence
            .triplets
            .iter()
            .find(|t| t.aspect == aspect && t.opinion == opinion)
            .map(|t| t.polarity);
        out.push(render_prompt(sentence, aspect, opinion, polarity.is_some(), polarity, template)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Triplet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn w(i: usize) -> Span {
        Span::word(i).unwrap()
    }

    fn sushi() -> AnnotatedSentence {
        AnnotatedSentence::from_text(
            "sushi",
            "Good Sushi High Price",
            vec![
                Triplet::new(w(2), w(1), Polarity::Positive),
                Triplet::new(w(4), w(3), Polarity::Negative),
            ],
        )
        .unwrap()
    }

    #[test]
    fn label_words_have_five_distinct_rows() {
        let idx: Vec<usize> = LabelWord::ALL.iter().map(|l| l.index()).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn manual_inconsistent_prompt() {
        let p = render_prompt(&sushi(), w(2), w(3), false, None, &Template::manual()).unwrap();
        assert_eq!(p.to_string(), "The Sushi is High? [MASK].");
        assert_eq!(p.mask_labels(), vec![LabelWord::No]);
        assert_eq!(p.mask_count(), 1);
    }

    #[test]
    fn manual_consistent_prompt_has_polarity_suffix() {
        let p = render_prompt(&sushi(), w(2), w(1), true, Some(Polarity::Positive), &Template::manual()).unwrap();
        assert_eq!(p.to_string(), "The Sushi is Good? [MASK]. This is [MASK]");
        assert_eq!(p.mask_labels(), vec![LabelWord::Yes, LabelWord::Polarity(Polarity::Positive)]);
        assert_eq!(p.mask_count(), 2);
    }

    #[test]
    fn auto_layout_for_n1() {
        let p = render_prompt(&sushi(), w(2), w(3), false, None, &Template::auto(1)).unwrap();
        assert_eq!(
            p.layout,
            vec![
                Slot::Pseudo(0),
                Slot::Aspect("Sushi".into()),
                Slot::Pseudo(1),
                Slot::Opinion("High".into()),
                Slot::Literal("?".into()),
                Slot::Mask,
            ]
        );
        let c = render_prompt(&sushi(), w(2), w(1), true, Some(Polarity::Positive), &Template::auto(2)).unwrap();
        let pseudo: Vec<usize> = c
            .layout
            .iter()
            .filter_map(|s| match s {
                Slot::Pseudo(k) => Some(*k),
                _ => None,
            })
            .collect();
        assert_eq!(pseudo, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn render_requires_polarity_iff_consistent() {
        assert!(render_prompt(&sushi(), w(2), w(1), true, None, &Template::manual()).is_err());
        assert!(render_prompt(&sushi(), w(2), w(3), false, Some(Polarity::Neutral), &Template::manual()).is_err());
    }

    #[test]
    fn manual_template_missing_slot_is_rejected() {
        let t = Template {
            name: "broken".into(),
            kind: TemplateKind::Manual {
                consistency: "The {A} is fine? [MASK]".into(),
                polarity: "This is [MASK]".into(),
            },
        };
        assert!(matches!(
            render_prompt(&sushi(), w(2), w(3), false, None, &t),
            Err(Error::Template(_))
        ));
    }

    #[test]
    fn manipulation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sushi();
        let mut seen_left = false;
        for _ in 0..200 {
            let m = manipulate_span(w(2), &s, &mut rng).unwrap();
            assert_ne!(m, w(2));
            assert!(m.fits(4) && m.start() <= 2 && m.end() >= 2);
            seen_left |= m == Span::new(1, 2).unwrap();
        }
        assert!(seen_left, "left extension to 'Good Sushi' never drawn");

        let long = AnnotatedSentence::from_text("", "a b c d", vec![]).unwrap();
        let span = Span::new(1, 3).unwrap();
        let mut drawn = std::collections::BTreeSet::new();
        for _ in 0..500 {
            drawn.insert(manipulate_span(span, &long, &mut rng).unwrap());
        }
        let expected: std::collections::BTreeSet<Span> = [(1, 1), (2, 2), (3, 3), (1, 2), (2, 3)]
            .into_iter()
            .map(|(a, b)| Span::new(a, b).unwrap())
            .collect();
        assert_eq!(drawn, expected);

        let single = AnnotatedSentence::from_text("", "alone", vec![]).unwrap();
        assert!(matches!(
            manipulate_span(w(1), &single, &mut rng),
            Err(Error::ManipulationImpossible)
        ));
    }

    #[test]
    fn sample_pair_single_triplet_is_consistent() {
        let s = AnnotatedSentence::from_text("", "nice view", vec![Triplet::new(w(2), w(1), Polarity::Positive)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert!(sample_pair(&s, &mut rng).unwrap().2);
        }
        let empty = AnnotatedSentence::from_text("", "nothing here", vec![]).unwrap();
        assert!(matches!(sample_pair(&empty, &mut rng), Err(Error::NoTriplets)));
    }

    #[test]
    fn batch_without_manipulation_follows_membership() {
        let s = sushi();
        let cfg = PromptConfig { k_samples: 2, manipulation_prob: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let batch = build_prompt_batch(&s, &Template::auto(1), &cfg, &mut rng).unwrap();
            assert_eq!(batch.len(), 2);
            for p in batch {
                assert_eq!(p.consistent, s.gold_pairs().contains(&(p.aspect, p.opinion)));
            }
        }
    }

    #[test]
    fn forced_manipulation_on_single_triplet_is_inconsistent() {
        let s = AnnotatedSentence::from_text("", "the nice view", vec![Triplet::new(w(3), w(2), Polarity::Positive)]).unwrap();
        let cfg = PromptConfig { k_samples: 1, manipulation_prob: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let batch = build_prompt_batch(&s, &Template::manual(), &cfg, &mut rng).unwrap();
            assert_eq!(batch.len(), 1);
            assert!(!batch[0].consistent);
            assert_eq!(batch[0].mask_count(), 1);
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let s = sushi();
        let cfg = PromptConfig::default();
        let a = build_prompt_batch(&s, &Template::auto(3), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = build_prompt_batch(&s, &Template::auto(3), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn catalog_loads_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.toml");
        std::fs::write(
            &path,
            "[templates.wide]\nkind = \"auto\"\nl1 = 2\nl2 = 3\nlp = 7\n\n\
             [templates.terse]\nkind = \"manual\"\nconsistency = \"{A} {O} [MASK]\"\npolarity = \"[MASK]\"\n",
        )
        .unwrap();
        let catalog = TemplateCatalog::load(&path).unwrap();
        assert_eq!(catalog.get("wide").unwrap().pseudo_count(), 7);
        assert!(catalog.get("auto-2").is_ok());
        assert!(catalog.get("terse").is_ok());
        assert!(catalog.get("missing").is_err());
    }
}
