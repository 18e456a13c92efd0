//! Seeded generator of small persona-grounded dialogues.
//!
//! Each agent has 4–5 traits drawn from a fixed set of categories. Partner
//! turns either ask about one of the agent's categories (answered with the
//! matching persona word), or describe a trip that the agent echoes back.
//! A few turns later the partner may ask the agent to recall the trip, so
//! the answer sits several turns back in the conversation.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DialogueExample, StopWordSet};

struct Category {
    trait_template: &'static str,
    values: &'static [&'static str],
    questions: &'static [&'static str],
    answers: &'static [&'static str],
}

const CATEGORIES: &[Category] = &[
    Category {
        trait_template: "my favorite food is {} .",
        values: &["papaya", "pizza", "sushi", "tacos", "pasta", "curry", "steak", "salad", "ramen", "burgers"],
        questions: &["what is your favorite food ?", "what do you like to eat ?"],
        answers: &["i really love {} .", "{} is the best thing to eat ."],
    },
    Category {
        trait_template: "i have a pet {} .",
        values: &["dog", "cat", "parrot", "hamster", "rabbit", "turtle", "lizard", "goldfish"],
        questions: &["do you have any pets ?", "any animals at home ?"],
        answers: &["yes , i have a {} .", "i have a {} at home ."],
    },
    Category {
        trait_template: "i work as a {} .",
        values: &["nurse", "teacher", "farmer", "pilot", "chef", "lawyer", "plumber", "dentist", "baker", "painter"],
        questions: &["what do you do for a living ?", "what is your job ?"],
        answers: &["i am a {} .", "i work as a {} ."],
    },
    Category {
        trait_template: "i enjoy {} on weekends .",
        values: &["hiking", "fishing", "gardening", "surfing", "knitting", "cycling", "dancing", "camping"],
        questions: &["what do you do for fun ?", "any hobbies ?"],
        answers: &["i enjoy {} .", "i like {} a lot ."],
    },
    Category {
        trait_template: "i live in {} .",
        values: &["texas", "ohio", "florida", "alaska", "maine", "oregon", "utah", "nevada"],
        questions: &["where are you from ?", "where do you live ?"],
        answers: &["i live in {} .", "i am from {} ."],
    },
    Category {
        trait_template: "my name is {} .",
        values: &["george", "maria", "james", "linda", "omar", "sofia", "kevin", "nina"],
        questions: &["what is your name ?", "who am i talking to ?"],
        answers: &["my name is {} .", "{} . what is your name ?"],
    },
    Category {
        trait_template: "my favorite color is {} .",
        values: &["blue", "green", "red", "purple", "orange", "yellow", "pink", "teal"],
        questions: &["what color do you like ?", "do you have a favorite color ?"],
        answers: &["i like {} .", "{} , what about you ?"],
    },
];

const PLACES: &[&str] = &[
    "paris", "tokyo", "london", "rome", "cairo", "lima", "oslo", "seoul", "dublin", "vienna",
    "madrid", "berlin", "prague", "havana", "boston", "denver", "chicago", "sydney", "quebec",
    "mumbai", "nairobi", "athens", "lisbon", "warsaw", "manila", "bogota", "zurich", "kyoto",
];
const RELATIVES: &[&str] = &[
    "mom", "dad", "sister", "brother", "cousin", "aunt", "uncle", "friend", "grandma", "grandpa",
    "wife", "husband", "boss", "neighbor",
];
const TIMES: &[&str] = &["week", "month", "year", "summer", "winter", "spring"];
const ADJECTIVES: &[&str] = &["amazing", "fun", "cold", "crowded", "relaxing", "great", "long", "busy"];
const ECHO_ANSWERS: &[&str] = &[
    "wow , {} ! i have never been there .",
    "{} sounds fun . did you like it ?",
];
const GREETINGS: &[&str] = &["hi , how are you ?", "hello there !", "hey ! how is your day ?"];
const GREETING_ANSWERS: &[&str] = &["i am good , how are you ?", "hello ! i am doing great ."];

fn fill(template: &str, value: &str) -> String {
    template.replace("{}", value)
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub dialogues: usize,
    pub min_exchanges: usize,
    pub max_exchanges: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dialogues: 500,
            min_exchanges: 4,
            max_exchanges: 6,
            seed: 0,
        }
    }
}

/// One persona: trait sentences plus the category and value behind each.
fn sample_persona(rng: &mut ChaCha8Rng) -> Vec<(usize, String, &'static str)> {
    let mut cats: Vec<usize> = (0..CATEGORIES.len()).collect();
    cats.shuffle(rng);
    let n = rng.random_range(4..=5);
    cats.truncate(n);
    cats.into_iter()
        .map(|c| {
            let value = *CATEGORIES[c].values.choose(rng).expect("non-empty");
            (c, fill(CATEGORIES[c].trait_template, value), value)
        })
        .collect()
}

/// Dialogues are generated as a whole; every agent turn becomes one
/// example carrying all earlier turns.
pub fn generate(config: &SyntheticConfig) -> Vec<DialogueExample> {
    let stop = StopWordSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for _ in 0..config.dialogues {
        let persona = sample_persona(&mut rng);
        let traits: Vec<&str> = persona.iter().map(|(_, t, _)| t.as_str()).collect();
        let mut history: Vec<String> = Vec::new();
        let exchanges = rng.random_range(config.min_exchanges..=config.max_exchanges.max(config.min_exchanges));
        let mut trip: Option<(&str, &str, usize)> = None;
        for turn in 0..exchanges {
            let roll: f64 = rng.random();
            let (partner, agent) = if turn == 0 && roll < 0.2 {
                (
                    GREETINGS.choose(&mut rng).unwrap().to_string(),
                    GREETING_ANSWERS.choose(&mut rng).unwrap().to_string(),
                )
            } else if trip.is_none() && roll < 0.5 {
                let place = *PLACES.choose(&mut rng).unwrap();
                let relative = *RELATIVES.choose(&mut rng).unwrap();
                let partner = format!(
                    "{place} is where i went with my {relative} last {} , it was {} .",
                    TIMES.choose(&mut rng).unwrap(),
                    ADJECTIVES.choose(&mut rng).unwrap(),
                );
                trip = Some((place, relative, turn));
                (partner, fill(ECHO_ANSWERS.choose(&mut rng).unwrap(), place))
            } else if matches!(trip, Some((_, _, t)) if t + 1 < turn) && roll < 0.6 {
                let (place, relative, _) = trip.unwrap();
                if rng.random_bool(0.5) {
                    ("do you remember where i went ?".to_string(), format!("you went to {place} ."))
                } else {
                    ("who did i go there with ?".to_string(), format!("your {relative} !"))
                }
            } else {
                let (cat, _, value) = persona.choose(&mut rng).unwrap();
                let c = &CATEGORIES[*cat];
                (
                    c.questions.choose(&mut rng).unwrap().to_string(),
                    fill(c.answers.choose(&mut rng).unwrap(), value),
                )
            };
            history.push(partner);
            out.push(DialogueExample::new(&traits, &history, &agent, &stop));
            history.push(agent);
        }
    }
    out
}

/// Renders the same kind of dialogues in the ParlAI text layout.
pub fn generate_parlai(config: &SyntheticConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut text = String::new();
    for _ in 0..config.dialogues {
        let persona = sample_persona(&mut rng);
        let mut line = 1;
        for (_, t, _) in &persona {
            text.push_str(&format!("{line} your persona: {t}\n"));
            line += 1;
        }
        let exchanges = rng.random_range(config.min_exchanges..=config.max_exchanges.max(config.min_exchanges));
        for _ in 0..exchanges {
            let (cat, _, value) = persona.choose(&mut rng).unwrap();
            let c = &CATEGORIES[*cat];
            let q = c.questions.choose(&mut rng).unwrap();
            let a = fill(c.answers.choose(&mut rng).unwrap(), value);
            text.push_str(&format!("{line} {q}\t{a}\n"));
            line += 1;
        }
    }
    text
}
