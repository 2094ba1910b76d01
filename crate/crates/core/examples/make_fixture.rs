//! Writes the synthetic corpus used by the integration tests.
//!
//! ```text
//! cargo run --example make_fixture -- crates/core/tests/fixtures
//! ```
//!
//! Output: `tweets.jsonl` (2,000 lines), `triples.jsonl` (1,000 lines) and
//! `antonyms.tsv`. Everything is drawn from a fixed seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use chrono::{Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Pool = &'static [(&'static str, u32)];

#[rustfmt::skip]
const D_AGENTS: Pool = &[
    ("we", 30), ("i", 10), ("they", 12), ("trump", 6), ("the president", 5), ("republicans", 4),
    ("mcconnell", 2), ("the cdc", 3), ("congress", 4), ("our workers", 3), ("frontline workers", 3),
    ("those who", 2), ("us", 1), ("them", 2),
];
#[rustfmt::skip]
const R_AGENTS: Pool = &[
    ("we", 30), ("i", 12), ("they", 6), ("democrats", 8), ("pelosi", 5), ("speaker pelosi", 3),
    ("china", 6), ("the ccp", 3), ("covid", 4), ("small businesses", 4), ("the governor", 4),
    ("our", 1), ("their", 1), ("nancy pelosi", 2),
];
#[rustfmt::skip]
const LONG_AGENTS: Pool = &[
    ("the small business owners", 1), ("the brave health care workers", 1), ("members of the house democrats", 1),
    ("every single family in america", 1), ("the people of our great state", 1),
];
#[rustfmt::skip]
const D_PATIENTS: Pool = &[
    ("lives", 10), ("the resources", 10), ("americans", 6), ("the support", 5), ("public health", 5),
    ("the spread", 6), ("testing", 5), ("paid leave", 4), ("families", 5), ("more", 4), ("everything", 3),
    ("the virus", 4), ("relief", 3), ("gun violence", 2), ("answers", 2), ("justice", 2),
];
#[rustfmt::skip]
const R_PATIENTS: Pool = &[
    ("covid", 10), ("small businesses", 8), ("jobs", 8), ("the economy", 6), ("an update", 5),
    ("a press conference", 4), ("relief", 5), ("americans", 5), ("the spread", 4), ("terrorism", 2),
    ("the deceptive mailers", 2), ("nations", 2), ("lives", 4), ("china", 3),
];
#[rustfmt::skip]
const LONG_PATIENTS: Pool = &[
    ("the health of our communities", 1), ("a covid update for the state", 1),
    ("relief for small business owners", 1), ("the hardworking families in our state", 1),
];
#[rustfmt::skip]
const D_VERBS: Pool = &[
    ("need", 12), ("help", 10), ("save", 9), ("protect", 8), ("provide", 7), ("expand", 6), ("pass", 6),
    ("support", 6), ("want", 5), ("stop", 5), ("slow", 4), ("prevent", 4), ("demand", 4), ("deliver", 4),
    ("work", 3), ("keep", 3), ("get", 3), ("make", 3), ("take", 3), ("give", 3), ("join", 3), ("urge", 2),
    ("thank", 2), ("vote", 2), ("hold", 2), ("fight", 2), ("build", 2), ("create", 2), ("lower", 2), ("secure", 2),
];
#[rustfmt::skip]
const R_VERBS: Pool = &[
    ("fight", 12), ("reopen", 10), ("protect", 8), ("support", 8), ("help", 7), ("save", 6), ("stop", 6),
    ("prevent", 4), ("slow", 3), ("want", 5), ("hold", 6), ("provide", 5), ("announce", 5), ("get", 3),
    ("make", 3), ("take", 3), ("give", 3), ("join", 3), ("thank", 3), ("keep", 3), ("work", 3), ("cut", 3),
    ("lower", 2), ("defend", 3), ("lead", 2), ("build", 2), ("create", 2), ("secure", 2), ("deliver", 2), ("vote", 2),
];

const D_TOPICAL: &[&str] = &[
    "Frontline health workers need the resources to fight the {topic} crisis. Congress must pass {adj} relief now.",
    "Families are struggling with {topic}. We need paid leave, unemployment insurance and masks for every {adj} worker.",
    "The disparities in the {topic} pandemic hit black and latino communities disproportionately.",
    "Join my telephone town hall on {topic} testing tonight. Bring your questions about {adj} health care.",
    "Trump failed to stop the spread of {topic}. Republican senators blocked {adj} testing again.",
    "Expanding {adj} testing and contact tracing is how we beat {topic}. #MasksSaveLives",
    "The Democratic plan delivers {adj} relief, hazard pay and health insurance during {topic}.",
    "Nurses and doctors on the frontline of {topic} deserve {adj} protective equipment. @HouseDemocrats",
];
const R_TOPICAL: &[&str] = &[
    "China lied about {topic} and the CCP must be held accountable for this {adj} threat.",
    "Small businesses need the paycheck protection program to reopen our {adj} economy after {topic}.",
    "We will fight {topic} and protect jobs for hardworking Americans with {adj} leadership.",
    "Democrats want to stop relief for small businesses while Pelosi plays {adj} politics with {topic}.",
    "Holding a press conference today with a {topic} update from the @WhiteHouse. {adj} news for our state.",
    "Join us for a {topic} update from the governor. We are ready to reopen {adj} businesses.",
    "The Republican plan cuts taxes and gets Americans back to work after {topic}. #InThisTogether",
    "Proud to stand with @realDonaldTrump as we defeat {topic} with {adj} American ingenuity.",
];
const BACKGROUND: &[&str] = &[
    "Happy birthday to our {adj} veterans and their families.",
    "Proud to support our farmers and {adj} infrastructure in the district.",
    "Great meeting with students from the local high school about {adj} careers.",
    "Tax day is coming. Make sure your {adj} paperwork is ready.",
    "Congratulations to the football team on a {adj} season!",
    "Our office hours are open this week for {adj} constituent services.",
    "The Democratic caucus met today to discuss {adj} housing and climate policy.",
    "The Republican conference unveiled a {adj} plan for energy and border security.",
    "Thank you to the firefighters who kept our {adj} neighborhoods safe this weekend.",
    "Voting is a {adj} right. Register before the deadline!",
];
const TOPIC_WORDS: &[&str] = &[
    "COVID-19",
    "covid",
    "coronavirus",
    "#COVID19",
    "the coronavirus",
    "covid19",
];
const D_ADJ: &[&str] = &["public", "healthy", "fair", "poor", "safe", "federal", "strong", "free"];
const R_ADJ: &[&str] = &["small", "free", "local", "strong", "open", "private", "rich", "safe"];
#[rustfmt::skip]
const BG_ADJ: &[&str] = &[
    "good", "great", "old", "young", "true", "legal", "large", "bad", "weak", "sick", "dangerous", "unfair", "closed",
    "expensive", "false", "illegal",
];

#[rustfmt::skip]
const ANTONYMS: &[(&str, &str)] = &[
    ("dangerous", "safe"),
    ("weak", "strong"),
    ("bad", "good"),
    ("unfair", "fair"),
    ("private", "public"),
    ("poor", "rich"),
    ("sick", "healthy"),
    ("federal", "local"),
    ("old", "young"),
    ("false", "true"),
    ("illegal", "legal"),
    ("closed", "open"),
    ("large", "small"),
    ("expensive", "free"),
    ("cowardly", "brave"),
];

fn pick(pool: Pool, rng: &mut ChaCha8Rng) -> &'static str {
    pool.choose_weighted(rng, |p| p.1).expect("non-empty pool").0
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Clause {
    doc_id: String,
    party: &'static str,
    agent: &'static str,
    verb: &'static str,
    patient: &'static str,
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/core/tests/fixtures".into()),
    );
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let start = Utc.with_ymd_and_hms(2020, 1, 1, 12, 0, 0).unwrap();

    let mut tweets = BufWriter::new(File::create(dir.join("tweets.jsonl"))?);
    let mut clauses = Vec::new();
    let authors = |p: &str, i: usize| format!("{}_member_{:02}", p.to_lowercase(), i % 40);
    for i in 0..1980 {
        let party = if i % 2 == 0 { "D" } else { "R" };
        let (agents, verbs, patients, topical, adjs) = if party == "D" {
            (D_AGENTS, D_VERBS, D_PATIENTS, D_TOPICAL, D_ADJ)
        } else {
            (R_AGENTS, R_VERBS, R_PATIENTS, R_TOPICAL, R_ADJ)
        };
        let is_topical = rng.random_bool(0.45);
        let long = rng.random_bool(0.4);
        let agent = if long && rng.random_bool(0.5) {
            pick(LONG_AGENTS, &mut rng)
        } else {
            pick(agents, &mut rng)
        };
        let patient = if long && rng.random_bool(0.6) {
            pick(LONG_PATIENTS, &mut rng)
        } else {
            pick(patients, &mut rng)
        };
        let verb = pick(verbs, &mut rng);
        let clause = format!("{} {verb} {patient}.", capitalize(agent));
        let body = if is_topical {
            topical.choose(&mut rng).unwrap()
        } else {
            BACKGROUND.choose(&mut rng).unwrap()
        };
        let adj = if is_topical {
            adjs.choose(&mut rng).unwrap()
        } else {
            BG_ADJ.choose(&mut rng).unwrap()
        };
        let body = body
            .replace("{topic}", TOPIC_WORDS.choose(&mut rng).unwrap())
            .replace("{adj}", adj);
        let text = if rng.random_bool(0.5) {
            format!("{clause} {body}")
        } else {
            format!("{body} {clause}")
        };
        let id = format!("{}", 1_250_000_000_000_000_000u64 + i as u64 * 7919);
        let chamber = ["senate", "house", "house", "governor"][i % 4];
        let record = json!({
            "id": id,
            "author": authors(party, i),
            "party": party,
            "chamber": chamber,
            "timestamp": (start + Duration::minutes(97 * i as i64)).to_rfc3339(),
            "lang": "en",
            "text": text,
            "is_retweet": i % 13 == 0,
        });
        writeln!(tweets, "{record}")?;
        clauses.push(Clause {
            doc_id: id,
            party,
            agent,
            verb,
            patient,
        });
    }
    // 12 non-English, 5 duplicate ids, 3 malformed lines.
    for i in 0..12 {
        let record = json!({
            "id": format!("es{i}"), "author": "d_member_00", "party": if i % 2 == 0 { "D" } else { "R" },
            "chamber": "house", "timestamp": start.to_rfc3339(), "lang": "es",
            "text": "Protejamos a nuestras familias del coronavirus.", "is_retweet": false,
        });
        writeln!(tweets, "{record}")?;
    }
    for c in clauses.iter().take(5) {
        let record = json!({
            "id": c.doc_id, "author": "duplicate", "party": c.party, "chamber": "house",
            "timestamp": start.to_rfc3339(), "lang": "en", "text": "duplicate record", "is_retweet": false,
        });
        writeln!(tweets, "{record}")?;
    }
    writeln!(tweets, "{{\"id\": \"broken\", \"text\": ")?;
    writeln!(tweets, "not json at all")?;
    writeln!(
        tweets,
        "{{\"id\": \"no-party\", \"lang\": \"en\", \"text\": \"missing fields\"}}"
    )?;
    tweets.flush()?;

    // 1,000 triple lines: 940 complete, 30 without a role, 30 invalid.
    let mut triples = BufWriter::new(File::create(dir.join("triples.jsonl"))?);
    for c in clauses.iter().take(940) {
        let record = json!({
            "doc_id": c.doc_id, "party": c.party, "sentence_idx": 0,
            "verb": c.verb, "verb_lemma": c.verb, "agent": c.agent, "patient": c.patient,
        });
        writeln!(triples, "{record}")?;
    }
    for c in clauses.iter().skip(940).take(30) {
        let record = if rng.random_bool(0.5) {
            json!({"doc_id": c.doc_id, "party": c.party, "sentence_idx": 1, "verb": c.verb, "verb_lemma": c.verb, "agent": c.agent})
        } else {
            json!({"doc_id": c.doc_id, "party": c.party, "sentence_idx": 1, "verb": c.verb, "verb_lemma": c.verb, "patient": c.patient})
        };
        writeln!(triples, "{record}")?;
    }
    for (i, c) in clauses.iter().skip(970).take(30).enumerate() {
        match i % 3 {
            0 => writeln!(
                triples,
                "{}",
                json!({"doc_id": c.doc_id, "party": c.party, "agent": c.agent, "patient": c.patient})
            )?,
            1 => writeln!(
                triples,
                "{}",
                json!({"doc_id": c.doc_id, "party": "I", "verb": c.verb, "verb_lemma": c.verb, "agent": c.agent, "patient": c.patient})
            )?,
            _ => writeln!(triples, "{{\"doc_id\": \"{}\", \"party\": ", c.doc_id)?,
        }
    }
    triples.flush()?;

    let mut antonyms = BufWriter::new(File::create(dir.join("antonyms.tsv"))?);
    writeln!(antonyms, "# pole_neg\tpole_pos")?;
    for (neg, pos) in ANTONYMS {
        writeln!(antonyms, "{neg}\t{pos}")?;
    }
    antonyms.flush()?;
    Ok(())
}
