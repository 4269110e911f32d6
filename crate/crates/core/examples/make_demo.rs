//! Writes a small synthetic corpus for trying the CLI:
//! `cargo run -p medner --example make_demo -- demo/`
//!
//! Output: gold.jsonl, logits-0..7.jsonl (noisy models with one to three
//! subwords per word), mapping.csv and config.toml.

use std::path::PathBuf;

use medner::formats::{GoldFile, GoldRecord, LogitFile, LogitRecord};
use medner::{Label, SubwordPrediction, NUM_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SENTENCES: &[&[(&str, &str)]] = &[
    &[
        ("Started", "O"),
        ("paracetamol", "B-Drug"),
        ("500mg", "B-Strength"),
        ("tablets", "B-Form"),
        ("orally", "B-Route"),
        ("four", "B-Frequency"),
        ("times", "I-Frequency"),
        ("daily", "I-Frequency"),
        ("for", "O"),
        ("pain", "B-Reason"),
        (".", "O"),
    ],
    &[
        ("Amoxicillin", "B-Drug"),
        ("500mg", "B-Strength"),
        ("capsules", "B-Form"),
        ("three", "B-Frequency"),
        ("times", "I-Frequency"),
        ("a", "I-Frequency"),
        ("day", "I-Frequency"),
        ("for", "O"),
        ("seven", "B-Duration"),
        ("days", "I-Duration"),
        (".", "O"),
    ],
    &[
        ("Stopped", "O"),
        ("ibuprofen", "B-Drug"),
        ("because", "O"),
        ("of", "O"),
        ("gastric", "B-ADE"),
        ("bleeding", "I-ADE"),
        (".", "O"),
    ],
    &[
        ("Take", "O"),
        ("two", "B-Dosage"),
        ("puffs", "I-Dosage"),
        ("of", "O"),
        ("salbutamol", "B-Drug"),
        ("inhaler", "B-Form"),
        ("when", "B-Frequency"),
        ("required", "I-Frequency"),
        (".", "O"),
    ],
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let mut gold = GoldFile::default();
    for d in 0..40 {
        let mut words = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..rng.random_range(2..6) {
            for (w, l) in SENTENCES[rng.random_range(0..SENTENCES.len())].iter() {
                words.push(w.to_string());
                labels.push(l.parse::<Label>()?);
            }
        }
        gold.documents.push(GoldRecord { doc_id: format!("letter-{d:03}"), words, labels });
    }
    gold.save(out.join("gold.jsonl"))?;

    for m in 0..8 {
        let accuracy = 0.55 + 0.03 * m as f64;
        let mut file = LogitFile { model_id: format!("model-{m}"), documents: Vec::new() };
        for doc in &gold.documents {
            let mut subwords = Vec::new();
            for (i, (word, gold_label)) in doc.words.iter().zip(&doc.labels).enumerate() {
                let label =
                    if rng.random_bool(accuracy) { gold_label.index() } else { rng.random_range(0..NUM_LABELS) };
                let pieces = 1 + word.len() / 6;
                for p in 0..pieces.min(3) {
                    let mut logits = [0.0; NUM_LABELS];
                    for v in logits.iter_mut() {
                        *v = rng.random_range(-2.0..1.0);
                    }
                    logits[label] = rng.random_range(2.0..5.0);
                    let text = if p == 0 { word.clone() } else { format!("##{p}") };
                    subwords.push(SubwordPrediction { text, word_index: i, logits });
                }
            }
            file.documents.push(LogitRecord { doc_id: doc.doc_id.clone(), subwords });
        }
        file.save(out.join(format!("logits-{m}.jsonl")))?;
    }

    std::fs::copy(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mapping_fixture.csv"), out.join("mapping.csv"))?;
    std::fs::write(
        out.join("config.toml"),
        "grouping = \"average-logit\"\n\n[vote]\nkind = \"max\"\ntie_break = \"alphabetical\"\n\n\
         [linking]\nmapping_path = \"mapping.csv\"\nthreshold = 0.8\n",
    )?;
    println!("wrote demo corpus to {}", out.display());
    Ok(())
}
