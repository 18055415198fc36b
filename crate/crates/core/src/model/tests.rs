use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{softmax, Matrix};

fn vocab(n: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..n).map(|i| format!("w{i}")))
}

fn tiny(head: Head, pooling: Pooling, layer_norm: bool, seed: u64) -> ClassifierModel {
    ClassifierModel::new(
        vocab(6),
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 5,
            head,
            pooling,
            dropout: 0.0,
            layer_norm,
            init_scale: 1.0,
            seed,
        },
    )
    .unwrap()
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence::new(ids.to_vec()).unwrap()
}

// Independent forward pass written as plain scalar loops over the public
// parameters: attention pooling, tanh layer, optional layer norm, head.
fn scalar_forward(m: &ClassifierModel, ids: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let p = m.params();
    let c = m.config();
    let din = c.embed_dim;
    let active: Vec<u32> = ids.iter().copied().filter(|&i| i != PAD).collect();
    let mut weights = Vec::new();
    for &id in &active {
        let mut s = 0.0;
        for k in 0..din {
            s += p.query[k] * p.embeddings[(id as usize, k)];
        }
        weights.push(s / (din as f64).sqrt());
    }
    let weights = match c.pooling {
        Pooling::Attention => softmax(&weights),
        Pooling::Mean => vec![1.0 / active.len() as f64; active.len()],
    };
    let mut pooled = vec![0.0; din];
    for (w, &id) in weights.iter().zip(&active) {
        for k in 0..din {
            pooled[k] += w * p.embeddings[(id as usize, k)];
        }
    }
    let mut e = vec![0.0; c.hidden_dim];
    for j in 0..c.hidden_dim {
        let mut z = p.enc_bias[j];
        for k in 0..din {
            z += p.enc_weight[(j, k)] * pooled[k];
        }
        e[j] = z.tanh();
    }
    if c.layer_norm {
        let n = e.len() as f64;
        let mu: f64 = e.iter().sum::<f64>() / n;
        let var: f64 = e.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        for v in e.iter_mut() {
            *v = (*v - mu) / (var + 1e-5).sqrt();
        }
    }
    let mut out = vec![0.0; p.head_bias.len()];
    for (k, o) in out.iter_mut().enumerate() {
        *o = p.head_bias[k];
        for j in 0..c.hidden_dim {
            *o += p.head_weight[(k, j)] * e[j];
        }
    }
    (e, out)
}

#[test]
fn embed_is_table_lookup() {
    let m = tiny(
        Head::Classification { classes: 3 },
        Pooling::Attention,
        false,
        1,
    );
    let h = m.embed(&seq(&[4])).unwrap();
    assert_eq!(h.vectors().row(0), m.params().embeddings.row(4));
    let h = m.embed(&seq(&[3, 3, 3])).unwrap();
    assert_eq!(h.vectors().row(0), h.vectors().row(2));
    assert!(m.embed(&seq(&[99])).is_err());
}

#[test]
fn embed_deterministic_across_models() {
    let a = tiny(
        Head::Classification { classes: 3 },
        Pooling::Attention,
        false,
        7,
    );
    let b = tiny(
        Head::Classification { classes: 3 },
        Pooling::Attention,
        false,
        7,
    );
    let x = seq(&[2, 5, 3]);
    assert_eq!(a.embed(&x).unwrap(), b.embed(&x).unwrap());
}

#[test]
fn encode_zero_inputs_gives_zero() {
    let m = tiny(Head::Classification { classes: 2 }, Pooling::Mean, false, 2);
    let h = EmbeddingSequence::from_matrix(Matrix::zeros(3, 4));
    assert!(m.encode(&h).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn encode_repeated_token_equals_single() {
    for pooling in [Pooling::Mean, Pooling::Attention] {
        let m = tiny(Head::Classification { classes: 2 }, pooling, false, 3);
        let one = m.encode_tokens(&seq(&[4])).unwrap();
        let many = m.encode_tokens(&seq(&[4, 4, 4, 4])).unwrap();
        for (a, b) in one.iter().zip(&many) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn encode_rejects_all_padding() {
    let m = tiny(
        Head::Classification { classes: 2 },
        Pooling::Attention,
        false,
        3,
    );
    assert!(matches!(
        m.encode_tokens(&seq(&[PAD, PAD])),
        Err(crate::Error::Empty(_))
    ));
}

#[test]
fn forward_matches_scalar_oracle() {
    for (i, (pooling, ln)) in [
        (Pooling::Attention, false),
        (Pooling::Mean, false),
        (Pooling::Attention, true),
    ]
    .into_iter()
    .enumerate()
    {
        let m = tiny(
            Head::Classification { classes: 3 },
            pooling,
            ln,
            40 + i as u64,
        );
        let ids = [2, 5, PAD, 3, 7];
        let (e_ref, logits) = scalar_forward(&m, &ids);
        let e = m.encode_tokens(&seq(&ids)).unwrap();
        for (a, b) in e.iter().zip(&e_ref) {
            assert!((a - b).abs() < 1e-12);
        }
        let probs = m.classify(&e).unwrap();
        for (a, b) in probs.probabilities().unwrap().iter().zip(softmax(&logits)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn classify_zero_head_is_uniform() {
    let m = tiny(
        Head::Classification { classes: 4 },
        Pooling::Attention,
        false,
        5,
    );
    let mut params = m.params().clone();
    params.head_weight = Matrix::zeros(4, 5);
    params.head_bias = vec![0.0; 4];
    let m =
        ClassifierModel::from_parameters(m.vocab().clone(), m.config().clone(), params).unwrap();
    let out = m.classify(&[0.3, -0.1, 0.9, 0.0, 0.2]).unwrap();
    for p in out.probabilities().unwrap() {
        assert!((p - 0.25).abs() < 1e-15);
    }
    assert!(matches!(
        m.classify(&[1.0; 3]),
        Err(crate::Error::DimensionMismatch { .. })
    ));
}

#[test]
fn probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = tiny(
        Head::Classification { classes: 5 },
        Pooling::Attention,
        false,
        8,
    );
    for _ in 0..50 {
        let e: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s: f64 = m
            .classify(&e)
            .unwrap()
            .probabilities()
            .unwrap()
            .iter()
            .sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn decomposition_equals_fused_forward() {
    let m = tiny(
        Head::Classification { classes: 3 },
        Pooling::Attention,
        false,
        9,
    );
    let x = seq(&[2, 3, 4, 5]);
    let staged = m
        .classify(&m.encode(&m.embed(&x).unwrap()).unwrap())
        .unwrap();
    assert_eq!(staged, m.forward(&x).unwrap());
    assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
}

#[test]
fn padding_gradient_is_zero() {
    let m = tiny(
        Head::Classification { classes: 3 },
        Pooling::Attention,
        false,
        10,
    );
    let (_, g) = m
        .loss_grad_wrt_embeddings(&seq(&[2, PAD, 4]), Target::Class(1))
        .unwrap();
    assert!(g.row(1).iter().all(|v| *v == 0.0));
    assert!(g.row(0).iter().any(|v| *v != 0.0));
}

#[test]
fn pooled_regression_gradient_closed_form() {
    // mean pooling + regression: dL/dh_i = (2/L)(y - t) W_encᵀ[(1 - e²) ⊙ w]
    let m = tiny(Head::Regression, Pooling::Mean, false, 11);
    let x = seq(&[2, 3, 6]);
    let target = 0.7;
    let e = m.encode_tokens(&x).unwrap();
    let y = m.score(&x).unwrap();
    let p = m.params();
    let mut expected = [0.0; 4];
    for k in 0..4 {
        for j in 0..5 {
            expected[k] += p.enc_weight[(j, k)] * (1.0 - e[j] * e[j]) * p.head_weight[(0, j)];
        }
        expected[k] *= 2.0 * (y - target) / 3.0;
    }
    let (loss, g) = m
        .loss_grad_wrt_embeddings(&x, Target::Score(target))
        .unwrap();
    assert!((loss - (y - target).powi(2)).abs() < 1e-14);
    for i in 0..3 {
        for k in 0..4 {
            assert!((g[(i, k)] - expected[k]).abs() < 1e-12);
        }
    }
}

fn finite_difference_check(m: &ClassifierModel, x: &TokenSequence, target: Target) -> f64 {
    let h = m.embed(x).unwrap();
    let (_, g) = m.loss_grad_embedded(&h, target).unwrap();
    let step = 1e-4;
    let mut worst = 0.0_f64;
    for i in 0..h.len() {
        for k in 0..h.dim() {
            let mut up = h.clone();
            up.vectors_mut()[(i, k)] += step;
            let mut dn = h.clone();
            dn.vectors_mut()[(i, k)] -= step;
            let fd = (m.loss_grad_embedded(&up, target).unwrap().0
                - m.loss_grad_embedded(&dn, target).unwrap().0)
                / (2.0 * step);
            let rel = (fd - g[(i, k)]).abs() / fd.abs().max(g[(i, k)].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..20u64 {
        let head = if case % 4 == 3 {
            Head::Regression
        } else {
            Head::Classification { classes: 3 }
        };
        let pooling = if case % 2 == 0 {
            Pooling::Attention
        } else {
            Pooling::Mean
        };
        let m = tiny(head, pooling, case % 5 == 0, 100 + case);
        let len = rng.gen_range(1..6);
        let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(2..8)).collect();
        let target = match head {
            Head::Regression => Target::Score(rng.gen_range(-1.0..1.0)),
            _ => Target::Class(rng.gen_range(0..3)),
        };
        let worst = finite_difference_check(&m, &seq(&ids), target);
        assert!(worst < 1e-4, "case {case}: relative error {worst}");
    }
}

#[test]
fn invalid_label_rejected() {
    let m = tiny(
        Head::Classification { classes: 3 },
        Pooling::Attention,
        false,
        13,
    );
    assert!(matches!(
        m.loss_grad_wrt_embeddings(&seq(&[2]), Target::Class(3)),
        Err(crate::Error::InvalidLabel(_))
    ));
    assert!(m.loss(&seq(&[2]), Target::Score(1.0)).is_err());
}

fn separable_corpus() -> (Vocabulary, Vec<(TokenSequence, Target)>) {
    let v = Vocabulary::from_tokens(["good", "bad", "the", "a", "film"]);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = (0..60)
        .map(|i| {
            let label = i % 2;
            let key = if label == 0 { "good" } else { "bad" };
            let mut words = vec![key];
            for _ in 0..rng.gen_range(1..4) {
                words.push(["the", "a", "film"][rng.gen_range(0..3)]);
            }
            let pos = rng.gen_range(0..words.len());
            words.swap(0, pos);
            (v.encode(&words.join(" ")).unwrap(), Target::Class(label))
        })
        .collect();
    (v, data)
}

fn small_model(v: Vocabulary, dropout: f64) -> ClassifierModel {
    ClassifierModel::new(
        v,
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            head: Head::Classification { classes: 2 },
            dropout,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn zero_epochs_is_noop() {
    let (v, data) = separable_corpus();
    let m = small_model(v, 0.1);
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let (trained, report) = m.train(&data, &cfg).unwrap();
    assert_eq!(trained, m);
    assert!(report.epoch_losses.is_empty());
    assert!(m.train(&[], &cfg).is_err());
}

#[test]
fn separable_corpus_reaches_full_accuracy() {
    let (v, data) = separable_corpus();
    let m = small_model(v, 0.1);
    let cfg = TrainConfig {
        lr: 0.5,
        epochs: 50,
        batch_size: 8,
        seed: 4,
    };
    let (trained, a) = m.train(&data, &cfg).unwrap();
    assert_eq!(trained.accuracy(&data).unwrap(), 1.0);
    let (_, b) = m.train(&data, &cfg).unwrap();
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn mc_samples_behaviour() {
    let (v, _) = separable_corpus();
    let x = v.encode("good film").unwrap();
    let still = small_model(v.clone(), 0.0);
    let s = still.mc_samples(&x, 10, 1).unwrap();
    assert!(s.windows(2).all(|w| w[0] == w[1]));

    let noisy = small_model(v, 0.5);
    let s = noisy.mc_samples(&x, 100, 1).unwrap();
    for p in &s {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let mean0 = s.iter().map(|p| p[0]).sum::<f64>() / 100.0;
    let var0 = s.iter().map(|p| (p[0] - mean0).powi(2)).sum::<f64>() / 99.0;
    assert!(var0 > 0.0);
    assert_eq!(s, noisy.mc_samples(&x, 100, 1).unwrap());

    let reg = tiny(Head::Regression, Pooling::Mean, false, 1);
    assert!(matches!(
        reg.mc_samples(&seq(&[2]), 4, 0),
        Err(crate::Error::Unsupported(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (v, data) = separable_corpus();
    let (m, _) = small_model(v, 0.1)
        .train(
            &data,
            &TrainConfig {
                epochs: 3,
                ..Default::default()
            },
        )
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    m.save(&path).unwrap();
    let back = ClassifierModel::load(&path).unwrap();
    for (a, b) in m
        .params()
        .embeddings
        .as_slice()
        .iter()
        .zip(back.params().embeddings.as_slice())
    {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(m, back);
}
