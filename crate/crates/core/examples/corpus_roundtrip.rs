//! Writes a two-speaker corpus by hand in the EMB1 format, reads it back and
//! validates it.
//!
//!     cargo run --example corpus_roundtrip

use pathoprobe::corpus_store::{
    load_manifest, read_embedding, save_manifest, validate_corpus, write_embedding, CorpusManifest, EmbeddingTensor,
    Label, LabelScheme, UtteranceRecord,
};

fn main() -> pathoprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut utterances = Vec::new();
    for (speaker, label) in [("spk-a", Label::Control), ("spk-b", Label::Pathologic)] {
        for u in 0..2 {
            let frames = 5 + u;
            // layer l, frame t, dimension d
            let tensor = EmbeddingTensor::from_fn(frames, |l, t, d| (l as f32) + 0.01 * t as f32 - 0.001 * d as f32)?;
            let rel = format!("emb/{speaker}-{u}.emb");
            std::fs::create_dir_all(dir.path().join("emb")).expect("emb dir");
            write_embedding(&tensor, dir.path().join(&rel))?;
            assert_eq!(read_embedding(dir.path().join(&rel))?, tensor);
            utterances.push(UtteranceRecord {
                utterance_id: format!("{speaker}-{u}"),
                speaker_id: speaker.into(),
                label,
                age_years: Some(9.5),
                content_tag: "sentence".into(),
                condition_tag: "booth".into(),
                embedding_path: rel.into(),
            });
        }
    }
    let manifest = CorpusManifest::new("handmade", LabelScheme::Pathologic, utterances);
    let path = dir.path().join("manifest.json");
    save_manifest(&manifest, &path)?;

    let loaded = load_manifest(&path)?;
    let report = validate_corpus(&loaded);
    println!(
        "{}: {} utterances, {} speakers, pass = {}",
        report.corpus_id, report.utterances, report.speakers, report.pass
    );
    let first = read_embedding(loaded.resolve(&loaded.utterances[0]))?;
    println!(
        "first tensor: {} layers x {} frames x {} dims",
        first.n_layers(),
        first.n_frames(),
        first.dim()
    );
    Ok(())
}
