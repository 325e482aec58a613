#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};

const POSITIVE: [&str; 8] = ["love", "great", "happy", "awesome", "thanks", "fun", "nice", "best"];
const NEGATIVE: [&str; 8] = ["hate", "awful", "sad", "worst", "sick", "tired", "miss", "bored"];
const NEUTRAL: [&str; 16] = [
    "today", "work", "going", "the", "just", "home", "night", "school", "time", "now", "got", "back", "morning",
    "really", "day", "still",
];

/// Writes `n` tweets (balanced classes) in the headerless six-column Sentiment140
/// layout, Latin-1 encoded. Sentiment words agree with the label 80% of the time.
pub fn write_fixture(path: &Path, n: usize, seed: u64) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut out: Vec<u8> = Vec::new();
    for i in 0..n {
        let label = if i % 2 == 0 { 0 } else { 4 };
        let mut words: Vec<String> = Vec::new();
        for _ in 0..rng.gen_range(3..12) {
            words.push(NEUTRAL[rng.gen_range(0..NEUTRAL.len())].to_string());
        }
        for _ in 0..rng.gen_range(1..3) {
            let agree = rng.gen_bool(0.8);
            let pool = if (label == 4) == agree { &POSITIVE } else { &NEGATIVE };
            let at = rng.gen_range(0..=words.len());
            words.insert(at, pool[rng.gen_range(0..pool.len())].to_string());
        }
        match rng.gen_range(0..6) {
            0 => words.push("http://bit.ly/abc".into()),
            1 => words.insert(0, "@someone".into()),
            2 => words.push("#Friday".into()),
            3 => words.push("!!!".into()),
            _ => {}
        }
        let text = words.join(" ").replace('"', "");
        out.extend_from_slice(
            format!("\"{label}\",\"{}\",\"Mon Apr 06 22:19:45 PDT 2009\",\"NO_QUERY\",\"user{i}\",\"", 1_467_810_000 + i)
                .as_bytes(),
        );
        out.extend_from_slice(text.as_bytes());
        if rng.gen_range(0..10) == 0 {
            // "café" in Latin-1.
            out.extend_from_slice(b" caf\xe9");
        }
        out.extend_from_slice(b"\"\n");
    }
    std::fs::write(path, out).unwrap();
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tweetsense"));
    c.env_remove("SENTIMENT_LOG");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

/// Small architecture flags so BiLSTM runs finish in seconds.
pub const TINY_BILSTM: [&str; 10] = [
    "--emb-dim", "8", "--hidden", "6", "--max-len", "12", "--batch-size", "32", "--adam-learning-rate", "0.01",
];
