//! Template corpora with learnable structure.
//!
//! Every record is rendered from one abstract grammar. A *fact* is a tuple
//! (person, action, object, time); dialogues state one fact among chit-chat,
//! articles report one fact among filler sentences, and short texts are
//! stories written in summary style. Dialogue and article sentences share
//! the same shape but draw their function words from disjoint lexicons, so
//! style is trivially detectable while a style-free encoding also exists.
//! A few actions and objects are "daily" and never occur in news.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::noise::truncate_pieces;
use super::records::{ArticleSummary, Dialogue, TextPiece, Utterance};
use super::tokenize::tokenize;
use crate::rng::{self, stream};

pub const NAMES: [&str; 20] = [
    "amanda", "jerry", "tom", "lisa", "mark", "anna", "john", "kate", "paul", "emma", "mike", "sara", "dave",
    "nina", "luke", "rosa", "ben", "ella", "sam", "zoe",
];
pub const ACTIONS: [&str; 8] = ["buy", "fix", "bring", "sell", "paint", "clean", "book", "find"];
pub const DAILY_ACTIONS: [&str; 4] = ["bake", "wash", "borrow", "return"];
pub const OBJECTS: [&str; 8] = ["car", "house", "tickets", "boat", "piano", "laptop", "bike", "table"];
pub const DAILY_OBJECTS: [&str; 4] = ["cake", "dog", "pizza", "sofa"];
pub const TIMES: [&str; 10] = [
    "tonight", "tomorrow", "today", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const TOPICS: [&str; 8] = ["weather", "coffee", "music", "movie", "game", "traffic", "lunch", "party"];
const QUALITIES: [&str; 6] = ["nice", "bad", "great", "long", "cold", "loud"];

/// Function words of one register. Dialogue and article registers map slot
/// for slot onto each other.
struct Register {
    /// After the source name: ":" is added by utterance formatting, so
    /// dialogues leave it empty.
    said: &'static str,
    open: &'static str,
    will: &'static str,
    the: &'static str,
    close: &'static str,
    aside: &'static str,
    was: &'static str,
}

const DIALOGUE: Register =
    Register { said: "", open: "btw", will: "gonna", the: "da", close: "lol", aside: "omg", was: "sooo" };
const NEWS: Register =
    Register { said: "said", open: "reportedly", will: "will", the: "the", close: ".", aside: "meanwhile", was: "was" };

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fact {
    pub person: String,
    pub action: String,
    pub object: String,
    pub time: String,
}

impl Fact {
    fn sample<R: Rng + ?Sized>(rng: &mut R, daily: bool) -> Fact {
        let pick = |rng: &mut R, common: &[&str], extra: &[&str]| -> String {
            let n = common.len() + if daily { extra.len() } else { 0 };
            let i = rng.random_range(0..n);
            if i < common.len() { common[i] } else { extra[i - common.len()] }.to_string()
        };
        Fact {
            person: NAMES.choose(rng).expect("names").to_string(),
            action: pick(rng, &ACTIONS, &DAILY_ACTIONS),
            object: pick(rng, &OBJECTS, &DAILY_OBJECTS),
            time: TIMES.choose(rng).expect("times").to_string(),
        }
    }

    /// Summary style shared by dialogue summaries and short texts.
    pub fn summary_sentence(&self) -> String {
        format!("{} will {} the {} {} .", self.person, self.action, self.object, self.time)
    }

    /// Headline style used by article summaries.
    pub fn headline(&self) -> String {
        format!("{} to {} {} {}", self.person, self.action, self.object, self.time)
    }

    fn body(&self, r: &Register) -> String {
        format!("{} {} {} {} {} {} {} {}", r.open, self.person, r.will, self.action, r.the, self.object, self.time, r.close)
    }

    /// Inverse of the dialogue rendering of a fact utterance.
    fn parse_dialogue(text: &str) -> Option<Fact> {
        let t = tokenize(text);
        let r = &DIALOGUE;
        (t.len() == 8 && t[0] == r.open && t[2] == r.will && t[4] == r.the && t[7] == r.close).then(|| Fact {
            person: t[1].clone(),
            action: t[3].clone(),
            object: t[5].clone(),
            time: t[6].clone(),
        })
    }
}

fn chit_chat<R: Rng + ?Sized>(rng: &mut R, r: &Register) -> String {
    let topic = TOPICS.choose(rng).expect("topics");
    let quality = QUALITIES.choose(rng).expect("qualities");
    format!("{} {} {} {} {}", r.aside, r.the, topic, r.was, quality) + " " + r.close
}

fn dialogue<R: Rng + ?Sized>(rng: &mut R) -> (Dialogue, Fact) {
    let a = *NAMES.choose(rng).expect("names");
    let mut b = *NAMES.choose(rng).expect("names");
    while b == a {
        b = NAMES.choose(rng).expect("names");
    }
    let n = rng.random_range(3..=6);
    let salient = rng.random_range(0..n);
    let fact = Fact::sample(rng, true);
    let utterances = (0..n)
        .map(|i| {
            let speaker = if i % 2 == 0 { a } else { b };
            let text = if i == salient { fact.body(&DIALOGUE) } else { chit_chat(rng, &DIALOGUE) };
            Utterance::new(speaker, text)
        })
        .collect();
    (Dialogue { utterances, summary: None }, fact)
}

fn article<R: Rng + ?Sized>(rng: &mut R) -> ArticleSummary {
    let n = rng.random_range(3..=6);
    let salient = rng.random_range(0..n);
    let fact = Fact::sample(rng, false);
    let article_sentences = (0..n)
        .map(|i| {
            let source = NAMES.choose(rng).expect("names");
            let body = if i == salient { fact.body(&NEWS) } else { chit_chat(rng, &NEWS) };
            format!("{source} {} {body}", NEWS.said)
        })
        .collect();
    ArticleSummary { article_sentences, summary: fact.headline() }
}

fn story<R: Rng + ?Sized>(rng: &mut R) -> Vec<String> {
    let n = rng.random_range(2..=6);
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 | 1 => Fact::sample(rng, true).summary_sentence(),
            _ => format!(
                "the {} was {} .",
                TOPICS.choose(rng).expect("topics"),
                QUALITIES.choose(rng).expect("qualities")
            ),
        })
        .collect()
}

/// Record counts and seed of a synthetic corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub dialogues: usize,
    pub shorttexts: usize,
    pub articles: usize,
    pub finetune: usize,
    /// Held-out dialogue–summary pairs for development scoring.
    pub eval: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { dialogues: 2000, shorttexts: 2000, articles: 2000, finetune: 200, eval: 100, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpora {
    pub dialogues: Vec<Dialogue>,
    pub shorttexts: Vec<TextPiece>,
    pub articles: Vec<ArticleSummary>,
    pub finetune: Vec<Dialogue>,
    pub eval: Vec<Dialogue>,
}

/// Generates every corpus; each one draws from its own seeded stream, so
/// changing one count leaves the other files unchanged.
pub fn generate_synthetic(spec: &SynthSpec) -> SynthCorpora {
    let sub = |k: u64| rng::derive(spec.seed, &[stream::SYNTH, k]);

    let mut r = sub(0);
    let dialogues = (0..spec.dialogues).map(|_| dialogue(&mut r).0).collect();

    let mut r = sub(1);
    let mut shorttexts = Vec::with_capacity(spec.shorttexts);
    while shorttexts.len() < spec.shorttexts {
        let doc = story(&mut r);
        let mut pr = rng::derive(spec.seed, &[stream::PIECES, shorttexts.len() as u64]);
        shorttexts.extend(truncate_pieces(&doc, &mut pr));
    }
    shorttexts.truncate(spec.shorttexts);

    let mut r = sub(2);
    let articles = (0..spec.articles).map(|_| article(&mut r)).collect();

    let pairs = |k: u64, n: usize| -> Vec<Dialogue> {
        let mut r = sub(k);
        (0..n)
            .map(|_| {
                let (mut d, fact) = dialogue(&mut r);
                d.summary = Some(fact.summary_sentence());
                d
            })
            .collect()
    };
    SynthCorpora { dialogues, shorttexts, articles, finetune: pairs(3, spec.finetune), eval: pairs(4, spec.eval) }
}

/// Summary built from the salient utterance of a synthetic dialogue, if any.
pub fn oracle_summary(d: &Dialogue) -> Option<String> {
    d.utterances.iter().find_map(|u| Fact::parse_dialogue(&u.text)).map(|f| f.summary_sentence())
}
