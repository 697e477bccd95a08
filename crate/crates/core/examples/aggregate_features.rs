//! Pools a synthetic corpus into per-speaker feature matrices, one per layer
//! group, and writes them as TSV.
//!
//!     cargo run --release --example aggregate_features

use pathoprobe::aggregate::{build_all_groups, time_pool, layer_group_pool, LayerGroup, Level};
use pathoprobe::corpus_store::read_embedding;
use pathoprobe::synth::{gen_corpus, SynthSpec};

fn main() -> pathoprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_speakers_per_class: 10,
        ..SynthSpec::default()
    };
    let manifest = gen_corpus(&spec, dir.path().join("corpus"))?;

    // one utterance by hand: time pooling, then the mean of layers 4-6
    let tensor = read_embedding(manifest.resolve(&manifest.utterances[0]))?;
    let means = time_pool(&tensor)?;
    let group = layer_group_pool(&means, LayerGroup::L4_6);
    println!("utterance {}: group 4-6 vector starts {:.3?}", manifest.utterances[0].utterance_id, &group[..3]);

    for level in [Level::Utterance, Level::Speaker] {
        for m in build_all_groups(&manifest, level)? {
            let (neg, pos) = m.class_counts();
            println!("{level:>9} {:>5}: {} rows ({neg} control, {pos} pathologic), dim {}", m.group.name(), m.len(), m.dim());
        }
    }
    let speakers = build_all_groups(&manifest, Level::Speaker)?;
    let out = dir.path().join("1-3.speaker.tsv");
    speakers[0].write_tsv(&out, &[("note".into(), "example".into())])?;
    println!("wrote {} bytes to {}", std::fs::metadata(&out).map(|m| m.len()).unwrap_or(0), out.display());
    Ok(())
}
