//! A small generated world of musicians and restaurants. It supplies
//! templates, corpus examples with exact provenance, raw paragraph dumps and
//! triple datasets, so every module can be trained and checked offline.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusExample, RawParagraph};
use crate::error::Result;
use crate::facts::{realize_all, Template, TemplateRegistry, Triple};
use crate::pipeline::DatasetRecord;
use crate::rng::substream;

const FIRST_F: &[&str] = &["Alice", "Maria", "Nina", "Clara", "Julia", "Emma", "Sofia", "Laura"];
const FIRST_M: &[&str] = &["Allen", "Peter", "Jonas", "Mark", "Oscar", "Tomas", "Victor", "David"];
const LAST: &[&str] = &[
    "Forrest", "Novak", "Smith", "Berg", "Moreau", "Keller", "Rossi", "Lind", "Hart", "Young",
];
const OCCUPATION: &[&str] = &["singer", "pianist", "composer", "drummer", "songwriter", "guitarist"];
const GENRE: &[&str] = &["pop", "jazz", "rock", "folk", "soul", "blues", "reggae"];
const INSTRUMENT: &[&str] = &["piano", "guitar", "violin", "cello", "trumpet", "flute"];
const PLACE: &[&str] = &["Paris", "Oslo", "Dublin", "Vienna", "Lisbon", "Prague", "Texas", "Boston"];
const NATIONALITY: &[&str] = &["French", "Irish", "Austrian", "Czech", "American", "Norwegian"];

const NAME_A: &[&str] = &["Golden", "Blue", "Red", "Green", "Silver", "Old", "Little"];
const NAME_B: &[&str] = &["Palace", "Eagle", "Mill", "Phoenix", "Cricketers", "Wrestlers", "Rice Boat"];
const EAT_TYPE: &[&str] = &["pub", "restaurant", "coffee shop"];
const FOOD: &[&str] = &["French", "Italian", "Chinese", "Indian", "Japanese", "English", "Thai"];
const AREA: &[&str] = &["city centre", "riverside"];
const NEAR: &[&str] = &[
    "Café Rouge",
    "Burger King",
    "the Sorrento",
    "Raja Indian Cuisine",
    "the Bakers",
];
const PRICE: &[&str] = &["cheap", "moderate", "high"];

/// Templates for every predicate of the world.
pub fn templates() -> TemplateRegistry {
    let pairs = [
        ("occupation", "<s> is a <o>."),
        ("genre", "<s> performs <o> music."),
        ("birthPlace", "<s> was born in <o>."),
        ("birthYear", "<s> was born in <o>."),
        ("instrument", "<s> plays the <o>."),
        ("spouse", "<s> is married to <o>."),
        ("nationality", "<s> is <o>."),
        ("eatType", "<s> is a <o>."),
        ("food", "<s> serves <o> food."),
        ("area", "<s> is in the <o>."),
        ("near", "<s> is near <o>."),
        ("priceRange", "<s> has a <o> price range."),
    ];
    TemplateRegistry::from_templates(
        "toy",
        pairs.iter().map(|(p, t)| Template::new(*p, *t).expect("valid template")),
    )
    .expect("distinct predicates")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityKind {
    Person,
    Restaurant,
}

/// One described entity: its triples in canonical order and the grouping
/// of those triples into paragraph sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub kind: EntityKind,
    pub name: String,
    pub pronoun: &'static str,
    pub triples: Vec<Triple>,
    /// Consecutive runs of triple indices, one run per paragraph sentence.
    pub groups: Vec<Vec<usize>>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

struct Builder {
    name: String,
    triples: Vec<Triple>,
    groups: Vec<Vec<usize>>,
}

impl Builder {
    fn group(&mut self, facts: &[(&str, String)]) {
        if facts.is_empty() {
            return;
        }
        let start = self.triples.len();
        for (p, o) in facts {
            self.triples
                .push(Triple::new(self.name.clone(), *p, o.clone()).expect("non-empty"));
        }
        self.groups.push((start..self.triples.len()).collect());
    }
}

pub fn sample_person(rng: &mut ChaCha8Rng) -> Entity {
    let female = rng.random_bool(0.5);
    let first = pick(rng, if female { FIRST_F } else { FIRST_M });
    let name = format!("{first} {}", pick(rng, LAST));
    let mut b = Builder {
        name,
        triples: Vec::new(),
        groups: Vec::new(),
    };
    let mut intro = vec![("occupation", pick(rng, OCCUPATION).to_string())];
    if rng.random_bool(0.6) {
        intro.push(("genre", pick(rng, GENRE).to_string()));
    }
    b.group(&intro);
    let mut birth = Vec::new();
    if rng.random_bool(0.6) {
        birth.push(("birthPlace", pick(rng, PLACE).to_string()));
    }
    if rng.random_bool(0.5) {
        birth.push(("birthYear", rng.random_range(1930..2000).to_string()));
    }
    b.group(&birth);
    if rng.random_bool(0.5) {
        b.group(&[("instrument", pick(rng, INSTRUMENT).to_string())]);
    }
    if rng.random_bool(0.4) {
        let spouse = format!("{} {}", pick(rng, if female { FIRST_M } else { FIRST_F }), pick(rng, LAST));
        b.group(&[("spouse", spouse)]);
    }
    if rng.random_bool(0.4) {
        b.group(&[("nationality", pick(rng, NATIONALITY).to_string())]);
    }
    Entity {
        kind: EntityKind::Person,
        name: b.name,
        pronoun: if female { "She" } else { "He" },
        triples: b.triples,
        groups: b.groups,
    }
}

pub fn sample_restaurant(rng: &mut ChaCha8Rng) -> Entity {
    let name = format!("The {} {}", pick(rng, NAME_A), pick(rng, NAME_B));
    let mut b = Builder {
        name,
        triples: Vec::new(),
        groups: Vec::new(),
    };
    let mut intro = vec![("eatType", pick(rng, EAT_TYPE).to_string())];
    if rng.random_bool(0.7) {
        intro.push(("food", pick(rng, FOOD).to_string()));
    }
    b.group(&intro);
    let mut place = Vec::new();
    if rng.random_bool(0.6) {
        place.push(("area", pick(rng, AREA).to_string()));
    }
    if rng.random_bool(0.5) {
        place.push(("near", pick(rng, NEAR).to_string()));
    }
    b.group(&place);
    if rng.random_bool(0.5) {
        b.group(&[("priceRange", pick(rng, PRICE).to_string())]);
    }
    Entity {
        kind: EntityKind::Restaurant,
        name: b.name,
        pronoun: "It",
        triples: b.triples,
        groups: b.groups,
    }
}

pub fn sample_entity(rng: &mut ChaCha8Rng) -> Entity {
    if rng.random_bool(0.5) {
        sample_person(rng)
    } else {
        sample_restaurant(rng)
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

impl Entity {
    /// Human-style sentence for one group, with `subject` as its subject.
    fn group_sentence(&self, group: &[usize], subject: &str) -> String {
        let obj = |i: usize| self.triples[group[i]].object.as_str();
        let preds: Vec<&str> = group.iter().map(|&i| self.triples[i].predicate.as_str()).collect();
        match preds.as_slice() {
            ["occupation", "genre"] => format!("{subject} is {} {} who performs {} music.", article(obj(0)), obj(0), obj(1)),
            ["occupation"] | ["eatType"] => format!("{subject} is {} {}.", article(obj(0)), obj(0)),
            ["birthPlace", "birthYear"] => format!("{subject} was born in {} in {}.", obj(0), obj(1)),
            ["birthPlace"] | ["birthYear"] => format!("{subject} was born in {}.", obj(0)),
            ["instrument"] => format!("{subject} plays the {}.", obj(0)),
            ["spouse"] => format!("{subject} is married to {}.", obj(0)),
            ["nationality"] => format!("{subject} is {}.", obj(0)),
            ["eatType", "food"] => format!("{subject} is {} {} serving {} food.", article(obj(0)), obj(0), obj(1)),
            ["area", "near"] => format!("{subject} is in the {} and is near {}.", obj(0), obj(1)),
            ["area"] => format!("{subject} is in the {}.", obj(0)),
            ["near"] => format!("{subject} is near {}.", obj(0)),
            ["priceRange"] => format!("{subject} has {} {} price range.", article(obj(0)), obj(0)),
            other => unreachable!("no sentence pattern for {other:?}"),
        }
    }

    /// The reference paragraph: fused groups, pronouns after the first
    /// sentence.
    pub fn paragraph(&self) -> String {
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| self.group_sentence(g, if i == 0 { &self.name } else { self.pronoun }))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Template facts in canonical order with labels from the grouping.
    pub fn example(&self, article_id: &str) -> Result<CorpusExample> {
        let facts = realize_all(&self.triples, &templates())?;
        let mut origins = vec![0; self.triples.len()];
        for (g, group) in self.groups.iter().enumerate() {
            for &i in group {
                origins[i] = g;
            }
        }
        CorpusExample::from_origins(
            article_id,
            &self.paragraph(),
            facts.into_iter().map(|f| f.text).collect(),
            origins,
        )
    }
}

/// `n` clean corpus examples; ids are zero-padded so they sort by index.
pub fn synthetic_corpus(seed: u64, n: usize) -> Vec<CorpusExample> {
    let mut rng = substream(seed, "synthetic-corpus");
    (0..n)
        .map(|i| {
            sample_entity(&mut rng)
                .example(&format!("syn-{i:06}"))
                .expect("world templates cover the world")
        })
        .collect()
}

/// Like `synthetic_corpus` but every example has at least `min_facts`.
pub fn synthetic_corpus_min(seed: u64, n: usize, min_facts: usize) -> Vec<CorpusExample> {
    let mut rng = substream(seed, "synthetic-corpus");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = sample_entity(&mut rng);
        if e.triples.len() >= min_facts {
            out.push(
                e.example(&format!("syn-{:06}", out.len()))
                    .expect("world templates cover the world"),
            );
        }
    }
    out
}

/// Raw paragraphs for the corpus builder. With `noise`, roughly a quarter
/// of the records are lists, disambiguation pages, fragments, malformed
/// text or repeats.
pub fn synthetic_dump(seed: u64, n: usize, noise: bool) -> Vec<RawParagraph> {
    let mut rng = substream(seed, "synthetic-dump");
    let mut out: Vec<RawParagraph> = Vec::with_capacity(n);
    for i in 0..n {
        let e = sample_entity(&mut rng);
        let id = format!("art-{i:06}");
        let mut rec = RawParagraph {
            article_id: id,
            title: Some(e.name.clone()),
            text: e.paragraph(),
        };
        if noise && rng.random_bool(0.25) {
            match rng.random_range(0..5) {
                0 => rec.text = format!("* {}\n* {}", e.name, rec.text),
                1 => rec.title = Some(format!("{} (disambiguation)", e.name)),
                2 => rec.text = format!("{}.", e.name),
                3 => rec.text = format!("{} (born {}", e.name, rec.text),
                _ => {
                    if let Some(prev) = out.last() {
                        rec.text = prev.text.clone();
                    }
                }
            }
        }
        out.push(rec);
    }
    out
}

/// Dump records as JSONL text.
pub fn dump_jsonl(records: &[RawParagraph]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
        .collect()
}

/// Triple sets with references. Restaurants come as attribute lists.
pub fn synthetic_dataset(seed: u64, n: usize) -> Vec<DatasetRecord> {
    let mut rng = substream(seed, "synthetic-dataset");
    (0..n)
        .map(|i| {
            let e = sample_entity(&mut rng);
            let references = vec![e.paragraph()];
            let id = format!("d{i:05}");
            match e.kind {
                EntityKind::Person => DatasetRecord {
                    id,
                    triples: Some(e.triples),
                    name: None,
                    attributes: None,
                    references,
                },
                EntityKind::Restaurant => {
                    let mut attributes = vec![("name".to_string(), e.name.clone())];
                    attributes.extend(e.triples.iter().map(|t| (t.predicate.clone(), t.object.clone())));
                    DatasetRecord {
                        id,
                        triples: None,
                        name: None,
                        attributes: Some(attributes),
                        references,
                    }
                }
            }
        })
        .collect()
}

/// (complex sentence, split) pairs for a toy split-and-rephrase model,
/// drawn from the fused sentences of the world.
pub fn split_pairs(seed: u64, n: usize) -> Vec<(String, String)> {
    let mut rng = substream(seed, "synthetic-split");
    let reg = templates();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = sample_entity(&mut rng);
        for g in &e.groups {
            if g.len() < 2 || out.len() == n {
                continue;
            }
            let complex = e.group_sentence(g, &e.name);
            let parts = realize_all(&g.iter().map(|&i| e.triples[i].clone()).collect::<Vec<_>>(), &reg)
                .expect("world templates cover the world");
            out.push((complex, parts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>().join(" ")));
        }
    }
    out
}

/// Shuffles a copy of `items` with a named substream.
pub fn shuffled<T: Clone>(items: &[T], seed: u64, name: &str) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut substream(seed, name));
    v
}
