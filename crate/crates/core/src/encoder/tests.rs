use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::gradcheck_params;

fn tiny_cfg(d_model: usize, n_heads: usize, vocab: usize) -> EncoderConfig {
    EncoderConfig {
        n_layers: 1,
        n_heads,
        d_model,
        d_ff: 2 * d_model,
        dropout_p: 0.0,
        max_seq_len: 12,
        vocab_size: vocab,
    }
}

fn token_encoder(cfg: &EncoderConfig, seed: u64) -> (TokenEncoder, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = TokenEncoder::new("enc", cfg, &mut ParamInit::new(&mut store, &mut rng)).unwrap();
    (enc, store)
}

fn all_true(ids: &[Vec<usize>]) -> Vec<Vec<bool>> {
    ids.iter().map(|r| vec![true; r.len()]).collect()
}

#[test]
fn config_validation() {
    let mut cfg = tiny_cfg(8, 3, 10);
    assert!(cfg.validate().is_err());
    cfg.n_heads = 2;
    assert!(cfg.validate().is_ok());
    cfg.max_seq_len = 1;
    assert!(cfg.validate().is_err());
}

#[test]
fn encode_shape_contract() {
    let mut cfg = tiny_cfg(16, 2, 20);
    cfg.max_seq_len = 8;
    let (enc, store) = token_encoder(&cfg, 1);
    let ids = vec![vec![2, 5, 6, 7, 8, 9, 10, 11], vec![2, 4, 4, 4, 0, 0, 0, 0]];
    let mask = vec![
        vec![true; 8],
        vec![true, true, true, true, false, false, false, false],
    ];
    let mut g = Graph::new();
    let out = enc
        .encode(&mut g, &store, &ids, &mask, &mut Mode::Eval)
        .unwrap();
    assert_eq!(g.shape(out.hidden), &[2, 8, 16]);
    assert_eq!(g.shape(out.cls), &[2, 16]);
    let hidden = g.value(out.hidden).data();
    let cls = g.value(out.cls).data();
    for b in 0..2 {
        assert_eq!(
            &hidden[b * 8 * 16..b * 8 * 16 + 16],
            &cls[b * 16..(b + 1) * 16]
        );
    }
}

#[test]
fn length_and_vocab_errors() {
    let cfg = tiny_cfg(8, 2, 10);
    let (enc, store) = token_encoder(&cfg, 1);
    let mut g = Graph::new();
    let ids = vec![vec![1; cfg.max_seq_len + 1]];
    let err = enc.encode(&mut g, &store, &ids, &all_true(&ids), &mut Mode::Eval);
    assert!(matches!(err, Err(Error::Length { len: 13, max: 12 })));
    let ids = vec![vec![2, 10]];
    let err = enc.encode(&mut g, &store, &ids, &all_true(&ids), &mut Mode::Eval);
    assert!(matches!(err, Err(Error::Vocab { id: 10, vocab: 10 })));
}

#[test]
fn appended_padding_leaves_real_positions_unchanged() {
    let cfg = tiny_cfg(16, 4, 30);
    let (enc, store) = token_encoder(&cfg, 7);
    let ids = vec![2, 11, 12, 13, 14];
    let mut g = Graph::new();
    let base = enc
        .encode(
            &mut g,
            &store,
            std::slice::from_ref(&ids),
            &[vec![true; 5]],
            &mut Mode::Eval,
        )
        .unwrap();
    for pads in 1..=5 {
        let mut padded = ids.clone();
        padded.extend(std::iter::repeat_n(0, pads));
        let mask: Vec<bool> = (0..padded.len()).map(|i| i < 5).collect();
        let out = enc
            .encode(&mut g, &store, &[padded], &[mask], &mut Mode::Eval)
            .unwrap();
        let a = g.value(base.rows[0]).data();
        let b = &g.value(out.rows[0]).data()[..a.len()];
        let diff = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "pads {pads}: {diff}");
    }
}

#[test]
fn encode_without_dropout_is_bitwise_deterministic() {
    let cfg = tiny_cfg(8, 2, 10);
    let (enc, store) = token_encoder(&cfg, 3);
    let ids = vec![vec![2, 4, 5, 6]];
    let run = || {
        let mut g = Graph::new();
        let out = enc
            .encode(&mut g, &store, &ids, &all_true(&ids), &mut Mode::Eval)
            .unwrap();
        g.value(out.hidden).clone()
    };
    let (a, b) = (run(), run());
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn single_token_attends_to_itself() {
    let cfg = tiny_cfg(8, 2, 10);
    let (enc, store) = token_encoder(&cfg, 3);
    let mut g = Graph::new();
    let out = enc
        .encode(&mut g, &store, &[vec![2]], &[vec![true]], &mut Mode::Eval)
        .unwrap();
    for w in &out.attention[0][0] {
        assert_eq!(g.value(*w).data(), &[1.0]);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = tiny_cfg(8, 2, 10);
    let (enc, store) = token_encoder(&cfg, 4);
    let ids = vec![vec![2, 3, 4, 5, 0, 0]];
    let mask = vec![vec![true, true, true, true, false, false]];
    let mut g = Graph::new();
    let out = enc
        .encode(&mut g, &store, &ids, &mask, &mut Mode::Eval)
        .unwrap();
    for w in &out.attention[0][0] {
        let t = g.value(*w);
        for r in 0..6 {
            let row = t.row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert_eq!(row[4], 0.0);
            assert_eq!(row[5], 0.0);
        }
    }
}

#[test]
fn single_visible_key_reduces_to_its_value_path() {
    let d = 8;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = AttentionParams::new("a", d, &mut ParamInit::new(&mut store, &mut rng)).unwrap();
    let x = Tensor::new(
        vec![4, d],
        (0..4 * d)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0)
            .collect(),
    )
    .unwrap();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = multi_head_attention(
        &mut g,
        &store,
        &p,
        xv,
        xv,
        xv,
        &[false, false, true, false],
        2,
    )
    .unwrap();

    // Direct evaluation: (x_2 Wv + bv) Wo + bo, by hand loops.
    let get = |id: ParamId| store.get(id).data().to_vec();
    let (wv, bv, wo, bo) = (get(p.wv), get(p.bv), get(p.wo), get(p.bo));
    let row = x.row(2);
    let v: Vec<f64> = (0..d)
        .map(|j| (0..d).map(|i| row[i] * wv[i * d + j]).sum::<f64>() + bv[j])
        .collect();
    let expected: Vec<f64> = (0..d)
        .map(|j| (0..d).map(|i| v[i] * wo[i * d + j]).sum::<f64>() + bo[j])
        .collect();
    for r in 0..4 {
        for (a, b) in g.value(out.output).row(r).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn hidden_from(rows: &[&[f64]], g: &mut Graph) -> Var {
    let d = rows[0].len();
    let t = Tensor::new(vec![1, rows.len(), d], rows.concat()).unwrap();
    g.input(t)
}

#[test]
fn pool_examples() {
    let mut g = Graph::new();
    let v = [0.5, -1.0, 2.0];
    let h = hidden_from(&[&v, &v, &v], &mut g);
    let m = pool(&mut g, h, 0..3, PoolStrategy::Mean, None).unwrap();
    assert_eq!(g.value(m).data(), &v);

    let h = hidden_from(&[&[1.0, 2.0], &[3.0, 4.0]], &mut g);
    let s = pool(&mut g, h, 0..2, PoolStrategy::Sum, None).unwrap();
    assert_eq!(g.value(s).data(), &[4.0, 6.0]);
    let mx = pool(&mut g, h, 0..2, PoolStrategy::Max, None).unwrap();
    assert_eq!(g.value(mx).data(), &[3.0, 4.0]);
    let mn = pool(&mut g, h, 0..2, PoolStrategy::Min, None).unwrap();
    assert_eq!(g.value(mn).data(), &[1.0, 2.0]);

    let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, -(i as f64)]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let h = hidden_from(&refs, &mut g);
    let n = pool(&mut g, h, 2..6, PoolStrategy::None, None).unwrap();
    assert_eq!(g.value(n).data(), &[5.0, -5.0]);
}

#[test]
fn pool_errors() {
    let mut g = Graph::new();
    let h = hidden_from(&[&[1.0, 2.0], &[3.0, 4.0]], &mut g);
    assert!(matches!(
        pool(&mut g, h, 1..1, PoolStrategy::Mean, None),
        Err(Error::Segment(_))
    ));
    assert!(matches!(
        pool(&mut g, h, 1..3, PoolStrategy::Mean, None),
        Err(Error::Segment(_))
    ));
    assert!(matches!(
        pool(&mut g, h, 0..2, PoolStrategy::Attention, None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn attention_pool_is_convex_combination() {
    let mut g = Graph::new();
    let h = hidden_from(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]], &mut g);
    let q = g.input(Tensor::new(vec![2, 1], vec![0.3, -0.2]).unwrap());
    let p = pool(&mut g, h, 0..2, PoolStrategy::Attention, Some(q)).unwrap();
    let out = g.value(p).data();
    let (a, b) = (0.3f64.exp(), (-0.2f64).exp());
    assert!((out[0] - a / (a + b)).abs() < 1e-15);
    assert!((out[1] - b / (a + b)).abs() < 1e-15);
}

#[test]
fn sequence_encoder_pads_and_stays_invariant() {
    let cfg = tiny_cfg(8, 2, 0);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let enc = SequenceEncoder::new("doc", &cfg, &mut ParamInit::new(&mut store, &mut rng)).unwrap();
    let mut g = Graph::new();
    let vecs: Vec<Var> = (0..3)
        .map(|i| g.input(Tensor::new(vec![1, 8], vec![0.1 * i as f64; 8]).unwrap()))
        .collect();
    let a = enc
        .encode(
            &mut g,
            &store,
            std::slice::from_ref(&vecs),
            0,
            &mut Mode::Eval,
        )
        .unwrap();
    let b = enc
        .encode(
            &mut g,
            &store,
            std::slice::from_ref(&vecs),
            4,
            &mut Mode::Eval,
        )
        .unwrap();
    assert_eq!(g.shape(a.hidden), &[1, 4, 8]);
    assert_eq!(g.shape(b.hidden), &[1, 8, 8]);
    assert!(g.value(a.cls).max_abs_diff(g.value(b.cls)) < 1e-10);
    assert!(matches!(
        enc.encode(&mut g, &store, &[vecs], 9, &mut Mode::Eval),
        Err(Error::Length { .. })
    ));
}

#[test]
fn tiny_encoder_passes_gradcheck() {
    let cfg = tiny_cfg(8, 2, 10);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut init = ParamInit::with_std(&mut store, &mut rng, 0.5);
    let enc = TokenEncoder::new("enc", &cfg, &mut init).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let readout = Tensor::new(
        vec![8, 3],
        (0..24).map(|_| normal.sample(&mut rng)).collect(),
    )
    .unwrap();
    let ids = vec![vec![2, 4, 5, 6, 7], vec![2, 8, 9, 0, 0]];
    let mask = vec![vec![true; 5], vec![true, true, true, false, false]];
    let report = gradcheck_params(
        |g, s| {
            let out = enc.encode(g, s, &ids, &mask, &mut Mode::Eval)?;
            let w = g.input(readout.clone());
            let logits = g.matmul(out.cls, w)?;
            g.cross_entropy(logits, &[1, 2])
        },
        &store,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

proptest! {
    #[test]
    fn mean_pool_equals_sum_pool_over_length(
        data in prop::collection::vec(-10.0f64..10.0, 12),
        start in 0usize..3,
        len in 1usize..4,
    ) {
        let mut g = Graph::new();
        let h = g.input(Tensor::new(vec![1, 6, 2], data).unwrap());
        let seg = start..start + len;
        let s = pool(&mut g, h, seg.clone(), PoolStrategy::Sum, None).unwrap();
        let m = pool(&mut g, h, seg, PoolStrategy::Mean, None).unwrap();
        for (a, b) in g.value(s).data().iter().zip(g.value(m).data()) {
            prop_assert_eq!((a / len as f64).to_bits(), b.to_bits());
        }
    }
}
