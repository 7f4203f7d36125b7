use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqbind::arch::{build_model, preset, ArchSpec, ConvLayerSpec, HeadSpec, InputRepr, RecurrentKind};
use seqbind::container::{load_model, model_text, parse_model, save_model};
use seqbind::embedding::train_on_sequences;
use seqbind::hyper::HyperConfig;
use seqbind::motif::{activation_histogram, export_meme, extract_fragments, parse_meme, pfms_from, Geometry};
use seqbind::seq::RawSequence;
use seqbind::synth::{generate, PlantSpec};

fn random_seqs(n: usize, len: usize, seed: u64) -> Vec<RawSequence> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s: String = (0..len).map(|_| b"ACGTN"[r.random_range(0..5)] as char).collect();
            RawSequence::new(format!("r{i}"), &s, (i % 2) as u8).unwrap()
        })
        .collect()
}

#[test]
fn saved_models_predict_bit_identically() {
    let seqs = random_seqs(100, 60, 1);
    let dir = tempfile::tempdir().unwrap();
    for name in ["DeepBind", "ECBLSTM", "KEGRU", "Dilated"] {
        let spec = preset(name).unwrap();
        let hyper = HyperConfig::default_for(spec.input);
        let table = match spec.input {
            InputRepr::Embedding => Some(train_on_sequences(&seqs[..10], hyper.kmer_k, hyper.kmer_stride, hyper.embedding_dim, 4).unwrap()),
            InputRepr::OneHot => None,
        };
        let model = build_model(&spec, &hyper, 60, table, 21).unwrap();
        let path = dir.path().join(format!("{name}.txt"));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        let a = model.predict(&seqs).unwrap();
        let b = back.predict(&seqs).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
        assert_eq!(model_text(&back), std::fs::read_to_string(&path).unwrap());
    }
}

#[test]
fn truncated_container_is_rejected() {
    let spec = preset("DanQ").unwrap();
    let model = build_model(&spec, &HyperConfig::default_for(spec.input), 50, None, 2).unwrap();
    let text = model_text(&model);
    let cut = &text[..text.len() / 2];
    assert!(parse_model(cut, "half").is_err());
}

/// One filter that scores +1 per matching base of the motif.
fn indicator_model(motif: &str, len: usize) -> seqbind::arch::Model {
    let spec = ArchSpec {
        name: "indicator".into(),
        input: InputRepr::OneHot,
        conv_layers: vec![ConvLayerSpec {
            filters: Some(1),
            window: Some(motif.len()),
            dilation: 1,
        }],
        recurrent: RecurrentKind::None,
        rnn_hidden: None,
        head: HeadSpec::None,
        fine_tune_embedding: false,
    };
    let mut model = build_model(&spec, &HyperConfig::default_for(InputRepr::OneHot), len, None, 1).unwrap();
    let w = model.params.find("conv0.W").unwrap();
    let vals = model.params.get_mut(w).values_mut();
    vals.iter_mut().for_each(|v| *v = 0.0);
    for (m, b) in motif.bytes().enumerate() {
        let c = b"ACGT".iter().position(|&x| x == b).unwrap();
        vals[m * 4 + c] = 1.0;
    }
    let b = model.params.find("conv0.b").unwrap();
    model.params.get_mut(b).values_mut()[0] = -2.0;
    model
}

#[test]
fn planted_motif_is_recovered_and_centered() {
    let motif = "TGACTCA";
    let mut plant = PlantSpec::new(motif, 101, 300);
    plant.mutation_prob = 0.1;
    let data = generate(&plant, 5).unwrap();
    let model = indicator_model(motif, 101);
    let seqs = &data.dataset.sequences;

    let frags = extract_fragments(&model, seqs).unwrap();
    let pfms = pfms_from(&frags);
    assert_eq!(pfms.len(), 1);
    assert_eq!(pfms[0].consensus(), motif);

    let geometry = Geometry::of(&model).unwrap();
    assert_eq!(geometry.span, 7);
    let profile = activation_histogram(&model, seqs).unwrap();
    let planted_center = plant.center_start() + motif.len() / 2;
    let mode = profile.positive_mode().unwrap();
    assert!(mode.abs_diff(planted_center) <= 1, "mode {mode}, center {planted_center}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.meme");
    export_meme(&pfms, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed = parse_meme(&text, "m.meme").unwrap();
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed[0].nsites as usize, pfms[0].nsites as usize);
    for row in &parsed[0].probabilities {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
