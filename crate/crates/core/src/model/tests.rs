use super::*;
use crate::dataset::{generate, DatasetConfig, SplitSizes};
use crate::nn_core::gradcheck::{check_gradients, GRAD_TOLERANCE};
use crate::symbolic::{TokenSeq, PAD_ID, SOS_ID};

fn samples(n: usize) -> Vec<Sample> {
    generate(
        &DatasetConfig::desk(),
        SplitSizes {
            instances: n,
            ics_per_instance: 1,
        },
        3,
    )
    .unwrap()
}

fn desk_model() -> Prose {
    Prose::new(ProseConfig::desk(), 11).unwrap()
}

/// A copy of `s` with `n_in` input points, `n_q` queries and no padding.
fn shrink(s: &Sample, n_in: usize, n_q: usize) -> Sample {
    let w = s.width();
    Sample {
        input_times: s.input_times[..n_in].to_vec(),
        input_values: s.input_values[..n_in * w].to_vec(),
        query_times: s.query_times[..n_q].to_vec(),
        labels: s.labels[..n_q * w].to_vec(),
        ..s.clone()
    }
}

fn encode_value(m: &Prose, x: &ModelInput) -> (Mat, Mat) {
    let mut g = Graph::new(&m.store);
    let e = m.encode(&mut g, x).unwrap();
    (g.value(e.data).clone(), g.value(e.symbol.unwrap()).clone())
}

#[test]
fn encoder_and_fusion_preserve_lengths() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let mut g = Graph::new(&m.store);
    let d = m.encode_data(&mut g, &x).unwrap();
    let sym = m.encode_symbol(&mut g, &x.symbol).unwrap();
    assert_eq!(g.value(d).shape(), (64, 64));
    assert_eq!(g.value(sym).shape(), (x.symbol.len(), 64));
    let (fd, fs, w) = m.fuse(&mut g, d, sym, &x.symbol, false).unwrap();
    assert_eq!(g.value(fd).rows, 64);
    assert_eq!(g.value(fs).rows, x.symbol.len());
    assert_eq!(w.len(), m.cfg.fusion_layers);
}

#[test]
fn normalization_is_undone_at_the_output() {
    let x = ModelInput::new(
        vec![0.0, 1.0, 2.0],
        &[1.0, 5.0, 3.0, 5.0, 5.0, 5.0],
        vec![true, true],
        vec![],
    )
    .unwrap();
    assert_eq!(x.mean, vec![3.0, 5.0]);
    let rms = (110.0f64 / 6.0).sqrt();
    assert_eq!(x.scale, vec![rms, rms]);
    assert_eq!(x.values[0], -2.0 / rms);
    assert_eq!(x.values[1], 0.0);
    let flat = ModelInput::new(vec![0.0, 1.0], &[0.0, 0.0], vec![true], vec![]).unwrap();
    assert_eq!(flat.scale, vec![MIN_SCALE]);
    let bad = ModelInput::new(vec![0.0], &[1.0], vec![true, true], vec![]);
    assert!(matches!(bad, Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn data_encoder_is_time_aware() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let mut swapped = x.clone();
    let d = x.d_max();
    for j in 0..d {
        swapped.values.swap(3 * d + j, 10 * d + j);
    }
    let a = encode_value(&m, &x).0;
    let b = encode_value(&m, &swapped).0;
    assert_ne!(a.row(3), b.row(10));
}

#[test]
fn symbol_encoder_sees_every_token_and_ignores_pads() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let mut y = x.clone();
    let k = y.symbol.len() / 2;
    y.symbol[k] = if y.symbol[k] == 5 { 6 } else { 5 };
    assert_ne!(encode_value(&m, &x).1, encode_value(&m, &y).1);

    let mut padded = x.clone();
    padded.symbol.extend([PAD_ID; 4]);
    let maps = m.export_attention(&padded).unwrap();
    let n = 64 + padded.symbol.len();
    for head in maps.iter().flatten() {
        assert_eq!(head.shape(), (n, n));
        for i in 0..n {
            assert!((head.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(head.row(i)[n - 4..].iter().all(|&w| w == 0.0));
        }
    }
}

#[test]
fn isolated_fusion_keeps_modalities_independent() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let run = |ids: &[u32]| {
        let mut g = Graph::new(&m.store);
        let d = m.encode_data(&mut g, &x).unwrap();
        let sym = m.encode_symbol(&mut g, ids).unwrap();
        let (fd, _, _) = m.fuse(&mut g, d, sym, ids, true).unwrap();
        g.value(fd).clone()
    };
    let mut other = x.symbol.clone();
    other[0] = if other[0] == 5 { 6 } else { 5 };
    other.push(7);
    assert_eq!(run(&x.symbol), run(&other));
}

#[test]
fn swapping_modality_vectors_changes_fused_features() {
    let mut m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let before = encode_value(&m, &x);
    let [a, b] = m.symbol.as_ref().unwrap().modality;
    let (va, vb) = (m.store.get(a).clone(), m.store.get(b).clone());
    *m.store.get_mut(a) = vb;
    *m.store.get_mut(b) = va;
    let after = encode_value(&m, &x);
    assert_ne!(before.0, after.0);
    assert_ne!(before.1, after.1);
}

#[test]
fn data_decoder_queries_are_independent() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let mut g = Graph::new(&m.store);
    let enc = m.encode(&mut g, &x).unwrap();
    let queries = [2.0, 3.3, 5.999, 2.5];
    let all = m.decode_data(&mut g, enc.data, &x, &queries).unwrap();
    let all = g.value(all).clone();
    for (i, &t) in queries.iter().enumerate() {
        let one = m.decode_data(&mut g, enc.data, &x, &[t]).unwrap();
        assert_eq!(g.value(one).row(0), all.row(i), "query {t}");
    }
    let rev: Vec<f64> = queries.iter().rev().copied().collect();
    let back = m.decode_data(&mut g, enc.data, &x, &rev).unwrap();
    for i in 0..4 {
        assert_eq!(g.value(back).row(i), all.row(3 - i));
    }
}

#[test]
fn symbol_decoder_is_causal() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let mut g = Graph::new(&m.store);
    let enc = m.encode(&mut g, &x).unwrap();
    let mem = enc.symbol.unwrap();
    let prefix = s.symbol_target.framed().ids().to_vec();
    let base = m.decode_symbol_teacher(&mut g, mem, &enc.symbol_pad, &prefix).unwrap();
    let base = g.value(base).clone();
    assert_eq!(base.shape(), (prefix.len(), m.cfg.vocab_size));
    for k in [1, prefix.len() / 2, prefix.len() - 1] {
        let mut p = prefix.clone();
        p[k] = if p[k] == 5 { 6 } else { 5 };
        let out = m.decode_symbol_teacher(&mut g, mem, &enc.symbol_pad, &p).unwrap();
        let out = g.value(out);
        for r in 0..prefix.len() {
            if r < k {
                assert_eq!(out.row(r), base.row(r), "row {r} moved after perturbing {k}");
            } else if r == k {
                assert_ne!(out.row(r), base.row(r));
            }
        }
    }
}

struct Stub(Vec<(u32, u32)>);

impl NextToken for Stub {
    fn next_token(&mut self, prefix: &[u32]) -> u32 {
        let last = *prefix.last().unwrap();
        self.0.iter().find(|(a, _)| *a == last).map_or(EOS_ID, |(_, b)| *b)
    }
}

#[test]
fn greedy_follows_stub_dynamics() {
    let a = 42;
    let mut stub = Stub(vec![(SOS_ID, a), (a, EOS_ID)]);
    let out = greedy_decode(&mut stub, 10);
    assert_eq!(
        out,
        Greedy {
            tokens: vec![a],
            truncated: false
        }
    );
    let out = greedy_decode(&mut stub, 1);
    assert_eq!(
        out,
        Greedy {
            tokens: vec![a],
            truncated: true
        }
    );
    let mut looping = Stub(vec![(SOS_ID, a), (a, a)]);
    let out = greedy_decode(&mut looping, 5);
    assert_eq!(out.tokens.len(), 5);
    assert!(out.truncated);
}

/// Reference decoder: re-runs the full teacher-forced pass for every
/// prefix and takes the argmax of the last row.
pub(crate) fn reference_greedy(m: &Prose, x: &ModelInput, max_len: usize) -> Greedy {
    struct Full<'a>(&'a Prose, &'a ModelInput);
    impl NextToken for Full<'_> {
        fn next_token(&mut self, prefix: &[u32]) -> u32 {
            let mut g = Graph::new(&self.0.store);
            let enc = self.0.encode(&mut g, self.1).unwrap();
            let l = self
                .0
                .decode_symbol_teacher(&mut g, enc.symbol.unwrap(), &enc.symbol_pad, prefix)
                .unwrap();
            let l = g.value(l);
            decode::argmax(l.row(l.rows - 1))
        }
    }
    greedy_decode(&mut Full(m, x), max_len)
}

#[test]
fn cached_greedy_matches_full_recomputation() {
    let m = desk_model();
    for s in &samples(2) {
        let x = ModelInput::from_sample(s).unwrap();
        let fast = m.predict(&x, &s.query_times[..1], 12).unwrap().symbol.unwrap();
        assert_eq!(fast, reference_greedy(&m, &x, 12));
    }
}

#[test]
fn full_model_gradient_check_at_desk_width() {
    let m = desk_model();
    let s = shrink(&samples(1)[0], 8, 4);
    let checks = check_gradients(&m.store, 6, |g| m.loss(g, &s, 6.0, 1.0).unwrap().total);
    assert_eq!(checks.len(), m.store.len());
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .unwrap();
    assert!(worst.rel_error < GRAD_TOLERANCE, "{worst:?}");
}

#[test]
fn data_only_variant_excises_symbol_modules() {
    let full = desk_model();
    let lean = Prose::new(ProseConfig::desk().data_only(), 11).unwrap();
    let symbol_params: usize = full
        .store
        .ids()
        .filter(|&p| {
            let n = full.store.name(p);
            n.starts_with("symbol.") || n.starts_with("fusion")
        })
        .map(|p| full.store.get(p).data.len())
        .sum();
    assert!(symbol_params > 0);
    assert_eq!(full.store.num_scalars() - lean.store.num_scalars(), symbol_params);
    let s = &samples(1)[0];
    let mut g = Graph::new(&lean.store);
    let l = lean.loss(&mut g, s, 6.0, 1.0).unwrap();
    assert!(l.symbol.is_none());
    assert!(g.scalar(l.total).is_finite());
    let x = ModelInput::from_sample(s).unwrap();
    assert!(lean.predict(&x, &[2.0], 4).unwrap().symbol.is_none());
}

#[test]
fn loss_is_the_weighted_sum() {
    let m = desk_model();
    let s = &samples(1)[0];
    let mut g = Graph::new(&m.store);
    let l = m.loss(&mut g, s, 6.0, 1.0).unwrap();
    let want = 6.0 * g.scalar(l.data) + g.scalar(l.symbol.unwrap());
    assert_eq!(g.scalar(l.total), want);
}

#[test]
fn bad_inputs_are_rejected() {
    let m = desk_model();
    let s = &samples(1)[0];
    let mut x = ModelInput::from_sample(s).unwrap();
    x.symbol.push(m.cfg.vocab_size as u32);
    assert!(matches!(m.predict(&x, &[2.0], 4), Err(ModelError::UnknownToken(_))));
    let narrow = ModelInput::new(vec![0.0], &[1.0, 2.0], vec![true, true], vec![5]).unwrap();
    assert!(matches!(
        m.predict(&narrow, &[2.0], 4),
        Err(ModelError::ShapeMismatch(_))
    ));
    let x = ModelInput::from_sample(s).unwrap();
    assert!(matches!(m.predict(&x, &[], 4), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn checkpoint_roundtrip_and_attention_export() {
    let m = desk_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &m, [7; 32]).unwrap();
    let (header, back) = load_checkpoint(&path).unwrap();
    assert_eq!(header.config_hash, [7; 32]);
    assert_eq!(header.version, CHECKPOINT_VERSION);
    assert_eq!(back.cfg, m.cfg);
    assert_eq!(back.store, m.store);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());

    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let maps = m.export_attention(&x).unwrap();
    let files = write_attention_csv(&dir.path().join("attn"), &maps).unwrap();
    assert_eq!(files.len(), m.cfg.fusion_layers * m.cfg.heads);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    let n = 64 + x.symbol.len();
    assert_eq!(text.lines().count(), n);
    let first: Vec<f64> = text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first, maps[0][0].row(0));
}

#[test]
fn teacher_logits_length_matches_target() {
    let m = desk_model();
    let s = &samples(1)[0];
    let x = ModelInput::from_sample(s).unwrap();
    let mut g = Graph::new(&m.store);
    let enc = m.encode(&mut g, &x).unwrap();
    let t = TokenSeq(vec![5, 15, 16]).framed();
    let l = m
        .decode_symbol_teacher(&mut g, enc.symbol.unwrap(), &enc.symbol_pad, t.ids())
        .unwrap();
    assert_eq!(g.value(l).rows, 5);
}
