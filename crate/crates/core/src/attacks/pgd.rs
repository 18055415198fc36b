use super::{AdversarialExample, AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, EmbeddingSequence, GridModel, Target};
use crate::numerics::{argmax, norm_linf};

/// δ₀ = 0, δ ← clip_ε(δ + α·∇L(h + δ)) for `cfg.steps` steps. The step uses
/// the raw gradient; padded positions receive none.
pub fn pgd_embedding_attack(
    model: &ClassifierModel,
    h: &EmbeddingSequence,
    target: Target,
    cfg: &AttackConfig,
) -> Result<AdversarialExample<EmbeddingSequence>> {
    let eps = cfg.epsilon()?;
    model.check_target(target)?;
    let mut adv = h.clone();
    for _ in 0..cfg.steps {
        let (_, g) = model.loss_grad_embedded(&adv, target)?;
        let base = h.vectors().as_slice();
        for ((a, &b), &gv) in adv
            .vectors_mut()
            .as_mut_slice()
            .iter_mut()
            .zip(base)
            .zip(g.as_slice())
        {
            let delta = (*a - b + cfg.step_size * gv).clamp(-eps, eps);
            *a = b + delta;
        }
    }
    let delta: Vec<f64> = adv
        .vectors()
        .as_slice()
        .iter()
        .zip(h.vectors().as_slice())
        .map(|(a, b)| a - b)
        .collect();
    let success = match target {
        Target::Class(c) => model.predict_embedded(h)? == c && model.predict_embedded(&adv)? != c,
        Target::Score(_) => {
            model.forward_embedded(&adv)?.score() > model.forward_embedded(h)?.score()
        }
    };
    Ok(AdversarialExample {
        original: h.clone(),
        perturbed: adv,
        kind: AttackKind::Pgd,
        budget: eps,
        realized: norm_linf(&delta),
        success,
    })
}

/// PGD on raw pixel values of an unquantized grid model; the perturbed
/// input is also kept inside [0, 255].
pub fn pgd_grid_attack(
    model: &GridModel,
    input: &[f64],
    class: usize,
    cfg: &AttackConfig,
) -> Result<AdversarialExample<Vec<f64>>> {
    let eps = cfg.epsilon()?;
    if model.permitted().is_some() {
        return Err(Error::Unsupported(
            "continuous attack on a quantized grid model".into(),
        ));
    }
    let mut adv = input.to_vec();
    for _ in 0..cfg.steps {
        let (_, g) = model.loss_grad_input(&adv, class)?;
        for ((a, &b), gv) in adv.iter_mut().zip(input).zip(g) {
            let delta = (*a - b + cfg.step_size * gv).clamp(-eps, eps);
            *a = (b + delta).clamp(0.0, 255.0);
        }
    }
    let delta: Vec<f64> = adv.iter().zip(input).map(|(a, b)| a - b).collect();
    let success = argmax(&model.probabilities_continuous(input)?) == class
        && argmax(&model.probabilities_continuous(&adv)?) != class;
    Ok(AdversarialExample {
        original: input.to_vec(),
        perturbed: adv,
        kind: AttackKind::Pgd,
        budget: eps,
        realized: norm_linf(&delta),
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridModelConfig, Head, ModelConfig, Parameters, Pooling, Vocabulary};
    use crate::numerics::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> ClassifierModel {
        let v = Vocabulary::from_tokens((2..10).map(|i| format!("t{i}")));
        ClassifierModel::new(
            v,
            ModelConfig {
                embed_dim: 4,
                hidden_dim: 6,
                head: Head::Classification { classes: 3 },
                dropout: 0.0,
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn embedded(m: &ClassifierModel, ids: &[u32]) -> EmbeddingSequence {
        m.embed(&crate::model::TokenSequence::new(ids.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = model(1);
        let h = embedded(&m, &[2, 3, 4]);
        let ex = pgd_embedding_attack(&m, &h, Target::Class(0), &AttackConfig::pgd(0.0, 0.5, 10))
            .unwrap();
        assert_eq!(ex.perturbed, h);
        assert_eq!(ex.realized, 0.0);
        assert!(!ex.success);
    }

    #[test]
    fn clip_holds_for_any_step_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for case in 0..20 {
            let m = model(case);
            let h = embedded(&m, &[2, 5, 7, 9]);
            let eps = rng.gen_range(0.0..0.5);
            let cfg = AttackConfig::pgd(eps, rng.gen_range(0.01..2.0), rng.gen_range(0..12));
            let ex = pgd_embedding_attack(&m, &h, Target::Class(1), &cfg).unwrap();
            assert!(ex.realized <= eps + 1e-15);
        }
    }

    // Single zero embedding, identity encoder and a regression head: tanh has
    // unit slope at 0, so the gradient is closed-form and one step must equal
    // sign(g)·min(α|g|, ε).
    #[test]
    fn one_step_linear_case() {
        let v = Vocabulary::from_tokens(["a", "b"]);
        let params = Parameters {
            embeddings: Matrix::zeros(4, 2),
            query: vec![0.0; 2],
            enc_weight: Matrix::identity(2),
            enc_bias: vec![0.0; 2],
            head_weight: Matrix::from_rows(&[vec![3.0, -0.5]]).unwrap(),
            head_bias: vec![0.0],
        };
        let config = ModelConfig {
            embed_dim: 2,
            hidden_dim: 2,
            head: Head::Regression,
            pooling: Pooling::Mean,
            dropout: 0.0,
            ..Default::default()
        };
        let m = ClassifierModel::from_parameters(v, config, params).unwrap();
        let h = embedded(&m, &[2]);
        // At h = 0, y = 0; L = (y - t)², dL/dh = 2(y - t)·w = -2t·w.
        let t = -1.0;
        let g: [f64; 2] = [2.0 * 3.0, 2.0 * -0.5];
        let (alpha, eps) = (0.05, 0.2);
        let ex = pgd_embedding_attack(&m, &h, Target::Score(t), &AttackConfig::pgd(eps, alpha, 1))
            .unwrap();
        for k in 0..2 {
            let expected = g[k].signum() * (alpha * g[k].abs()).min(eps);
            assert!((ex.perturbed.vectors()[(0, k)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_pgd_stays_in_range() {
        let m = GridModel::new(GridModelConfig {
            side: 3,
            levels: None,
            hidden_dim: 4,
            classes: 2,
            dropout: 0.0,
            seed: 3,
        })
        .unwrap();
        let input = vec![0.0, 255.0, 128.0, 10.0, 20.0, 250.0, 0.0, 0.0, 90.0];
        let ex = pgd_grid_attack(&m, &input, 0, &AttackConfig::pgd(30.0, 1e4, 5)).unwrap();
        assert!(ex.realized <= 30.0);
        assert!(ex.perturbed.iter().all(|v| (0.0..=255.0).contains(v)));
        let q = GridModel::new(GridModelConfig::default()).unwrap();
        assert!(pgd_grid_attack(&q, &[0.0; 64], 0, &AttackConfig::pgd(1.0, 1.0, 1)).is_err());
    }
}
