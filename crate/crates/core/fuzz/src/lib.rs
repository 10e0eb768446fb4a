//! Checks shared by the fuzz targets and the seed-corpus replay test.
//!
//! Every entry point must return an error rather than panic on bad input,
//! and anything it accepts must survive a serialize/parse round trip.

use metric_chain::chain::{parse, ChainState, OrderPreset};
use metric_chain::model::SequenceModel;
use metric_chain::vocab::Token;
use metric_chain::{
    ChainSequence, Codec, Direction, MetricKind, NumericCodec, Registry, Tokenizer, TrainedModel,
    UtteranceRecord,
};

/// Registry and codecs the dataset and chain targets are decoded against.
pub fn fixture_tokenizer() -> Tokenizer {
    let reg = Registry::new()
        .with("PESQ", MetricKind::numerical(-0.5, 4.5, Direction::HigherBetter))
        .unwrap()
        .with("SI-SNR", MetricKind::unbounded(Direction::HigherBetter))
        .unwrap()
        .with("Q-Gender", MetricKind::categorical(["Male", "Female"]))
        .unwrap()
        .with("WER", MetricKind::numerical(0.0, f64::INFINITY, Direction::LowerBetter))
        .unwrap();
    let snr: Vec<f64> = (0..64).map(|i| -5.0 + 0.5 * i as f64).collect();
    let codecs = vec![
        Codec::numeric("PESQ", NumericCodec::fit_linear(-0.5, 4.5, 8).unwrap()),
        Codec::numeric("SI-SNR", NumericCodec::fit_percentile(&snr, 6).unwrap()),
        Codec::categorical("Q-Gender", vec!["Male".into(), "Female".into()]),
        Codec::numeric("WER", NumericCodec::fit_linear(0.0, 2.0, 4).unwrap()),
    ];
    Tokenizer::new(reg, codecs).unwrap()
}

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn registry_json(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(reg) = Registry::from_json(s) else { return };
    let again = Registry::from_json(&reg.to_json()).expect("written registry parses");
    assert_eq!(again.to_json(), reg.to_json());
}

pub fn codec_json(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(codec) = Codec::from_json(s) else { return };
    let again = Codec::from_json(&codec.to_json()).expect("written codec parses");
    assert_eq!(again.to_json(), codec.to_json());
    for t in 0..codec.block_size().min(4096) as u32 {
        let v = codec.decode(t).expect("in-block token decodes");
        if let Some(n) = codec.as_numeric() {
            let back = codec.encode(&v).expect("centroid encodes");
            let (a, b) = n.bin_bounds(back).unwrap();
            assert!(a <= b);
        } else {
            assert_eq!(codec.encode(&v).unwrap(), t);
        }
    }
    assert!(codec.decode(codec.block_size() as u32).is_err());
}

pub fn model_artifact(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(model) = TrainedModel::parse_unverified(s) else { return };
    let again = TrainedModel::parse_unverified(&model.to_json()).expect("written model parses");
    assert_eq!(again, model);
    if model.feature_dim() > 4096 || model.vocab().len() > 1 << 16 {
        return;
    }
    let features = vec![0.0; model.feature_dim()];
    let mut prefix = Vec::new();
    for _ in 0..2 {
        let Ok(d) = model.next_dist(&prefix, &features) else { return };
        assert!((d.total() - 1.0).abs() < 1e-9, "mass {}", d.total());
        let Some((tok, _)) = d.argmax() else { return };
        if tok == metric_chain::vocab::END {
            return;
        }
        prefix.push(tok);
    }
}

pub fn dataset_line(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let tk = fixture_tokenizer();
    let reg = tk.registry();
    let Ok(rec) = UtteranceRecord::parse_line(s, reg, 1) else { return };
    let line = rec.to_json_line(reg);
    let again = UtteranceRecord::parse_line(&line, reg, 1).expect("written line parses");
    assert_eq!(again, rec);
    // Every accepted value has a token.
    rec.labels.tokenize(&tk).expect("accepted labels tokenize");
}

pub fn order_preset(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(preset) = OrderPreset::parse("fuzz", s) else { return };
    let tk = fixture_tokenizer();
    let order = preset.resolve(tk.registry());
    let mut seen = std::collections::HashSet::new();
    assert!(order.iter().all(|&m| m < tk.registry().len() && seen.insert(m)));
}

/// Bytes are read as little-endian `u16` token ids, so ids past the
/// vocabulary show up too.
pub fn chain_parse(data: &[u8]) {
    let tk = fixture_tokenizer();
    let vocab = tk.vocab();
    let tokens: Vec<Token> = data
        .chunks_exact(2)
        .map(|c| Token(u16::from_le_bytes([c[0], c[1]]) as u32 % (vocab.len() as u32 + 3)))
        .collect();
    let scanned = ChainState::scan(vocab, &tokens);
    let seq = ChainSequence::from_tokens(tokens);
    let Ok(parsed) = parse(vocab, &seq) else { return };
    assert!(scanned.is_err(), "a full chain ends in the end token, which scan rejects");
    assert_eq!(ChainSequence::from_pairs(vocab, &parsed.pairs()), seq);
    parsed.decode(&tk).expect("parsed ids decode");
}
