use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::PathBuf;

use pilework_core::corpus::ingest_records;
use pilework_core::piles::{assemble_prompt, TaskKind, TaskParams, TaskTemplates};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn every_task_kind_matches_its_golden_file() {
    let dir = golden_dir();
    let corpus = ingest_records(BufReader::new(File::open(dir.join("pile_docs.jsonl")).unwrap())).unwrap();
    let params: BTreeMap<String, TaskParams> =
        serde_json::from_str(&fs::read_to_string(dir.join("params.json")).unwrap()).unwrap();
    let docs: Vec<_> = corpus.documents().iter().collect();
    let templates = TaskTemplates::default();

    for kind in TaskKind::ALL {
        let p = &params[kind.name()];
        let prompt = assemble_prompt(&docs, kind, p, &templates).unwrap();
        let expected = fs::read_to_string(dir.join(format!("{}.txt", kind.name().to_lowercase()))).unwrap();
        assert_eq!(prompt.text, expected, "{kind} prompt differs from golden file");
        // byte-identical on repeat
        assert_eq!(assemble_prompt(&docs, kind, p, &templates).unwrap(), prompt);
    }
}
