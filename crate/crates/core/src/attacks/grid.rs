use super::{AdversarialExample, AttackKind, Gate, NoGate, Saliency};
use crate::error::{Error, Result};
use crate::model::{quantization_levels, Grid, GridModel};

const PROBE: i32 = 128;

/// Nearest member of `levels` (ascending); ties snap downward.
pub fn quantize_value(value: i32, levels: &[i32]) -> i32 {
    let mut best = levels[0];
    for &l in levels {
        if (value - l).abs() < (value - best).abs() {
            best = l;
        }
    }
    best
}

pub fn quantize_grid(grid: &Grid, q: usize) -> Result<Grid> {
    let levels = quantization_levels(q)?;
    if let Some(v) = grid.pixels().iter().find(|v| !(0..=255).contains(*v)) {
        return Err(Error::Data(format!("pixel value {v} outside 0..=255")));
    }
    Grid::new(
        grid.side(),
        grid.pixels()
            .iter()
            .map(|&v| quantize_value(v, &levels))
            .collect(),
    )
}

fn true_prob(model: &GridModel, grid: &Grid, label: usize) -> Result<f64> {
    model
        .probabilities(grid)?
        .get(label)
        .copied()
        .ok_or_else(|| Error::InvalidLabel(format!("class {label}")))
}

/// Pixels by descending drop in true-class probability when set to the
/// mid-gray probe (128, quantized for quantized models); ties by index.
pub fn grid_saliency_rank(model: &GridModel, grid: &Grid, label: usize) -> Result<Vec<Saliency>> {
    let probe = match model.permitted() {
        Some(levels) => quantize_value(PROBE, levels),
        None => PROBE,
    };
    let base = true_prob(model, grid, label)?;
    let mut out = Vec::with_capacity(grid.len());
    for pos in 0..grid.len() {
        let p = true_prob(model, &grid.with_pixel(pos, probe), label)?;
        out.push(Saliency {
            position: pos,
            drop: base - p,
        });
    }
    out.sort_by(|a, b| b.drop.total_cmp(&a.drop).then(a.position.cmp(&b.position)));
    Ok(out)
}

pub fn discrete_grid_attack(
    model: &GridModel,
    grid: &Grid,
    label: usize,
    n: usize,
) -> Result<AdversarialExample<Grid>> {
    discrete_grid_attack_gated(model, grid, label, n, &NoGate)
}

/// Saliency-ranked pixel substitution on a quantized model: each visited
/// pixel may move to an adjacent permitted level, chosen as the one giving
/// the lowest true-class probability (ties to the lower level), applied only
/// if it strictly lowers the current probability and passes `gate`.
pub fn discrete_grid_attack_gated(
    model: &GridModel,
    grid: &Grid,
    label: usize,
    n: usize,
    gate: &dyn Gate<Grid>,
) -> Result<AdversarialExample<Grid>> {
    let levels = model
        .permitted()
        .ok_or_else(|| Error::Unsupported("discrete grid attack needs a quantized model".into()))?
        .to_vec();
    let mut current = grid.clone();
    let mut edits = 0usize;
    if n > 0 {
        let mut p_cur = true_prob(model, grid, label)?;
        for s in grid_saliency_rank(model, grid, label)? {
            if edits == n {
                break;
            }
            let k = levels
                .iter()
                .position(|&l| l == current.pixels()[s.position])
                .ok_or_else(|| Error::ContractViolation("grid is not quantized".into()))?;
            let mut scored = Vec::new();
            for j in [k.checked_sub(1), Some(k + 1)].into_iter().flatten() {
                if let Some(&v) = levels.get(j) {
                    let cand = current.with_pixel(s.position, v);
                    scored.push((true_prob(model, &cand, label)?, v, cand));
                }
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (p, _, cand) in scored {
                if p >= p_cur {
                    break;
                }
                if gate.accepts(&cand)? {
                    current = cand;
                    p_cur = p;
                    edits += 1;
                    break;
                }
            }
        }
    }
    let success = model.predict(grid)? == label && model.predict(&current)? != label;
    Ok(AdversarialExample {
        original: grid.clone(),
        perturbed: current,
        kind: AttackKind::Grid,
        budget: n as f64,
        realized: edits as f64,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GridModelConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(side: usize, pixels: Vec<i32>) -> Grid {
        Grid::new(side, pixels).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let levels = quantization_levels(4).unwrap();
        assert_eq!(levels, vec![0, 85, 170, 255]);
        assert_eq!(quantize_value(100, &levels), 85);
        assert_eq!(quantize_value(0, &levels), 0);
        assert_eq!(quantize_value(255, &levels), 255);
        assert_eq!(quantize_value(42, &levels), 0);
        assert_eq!(quantize_value(43, &levels), 85);
        let two = quantization_levels(2).unwrap();
        assert_eq!(quantize_value(127, &two), 0);
        assert_eq!(quantize_value(128, &two), 255);
        let three = quantization_levels(3).unwrap();
        assert_eq!(three, vec![0, 128, 255]);
        assert!(quantize_grid(&grid(1, vec![300]), 4).is_err());
        assert!(quantize_grid(&grid(1, vec![-1]), 4).is_err());
        assert!(quantize_grid(&grid(1, vec![1]), 1).is_err());
    }

    #[test]
    fn ties_snap_downward() {
        // Z_5 = {0, 64, 128, 191, 255}: 32 is equidistant from 0 and 64.
        let levels = quantization_levels(5).unwrap();
        assert_eq!(levels, vec![0, 64, 128, 191, 255]);
        assert_eq!(quantize_value(32, &levels), 0);
        assert_eq!(quantize_value(96, &levels), 64);
    }

    proptest! {
        #[test]
        fn quantize_idempotent_and_nearest(
            pixels in prop::collection::vec(0i32..=255, 9),
            q in 2usize..10,
        ) {
            let g = grid(3, pixels);
            let once = quantize_grid(&g, q).unwrap();
            prop_assert_eq!(quantize_grid(&once, q).unwrap(), once.clone());
            let levels = quantization_levels(q).unwrap();
            for (&v, &z) in g.pixels().iter().zip(once.pixels()) {
                prop_assert!(levels.contains(&z));
                let best = levels.iter().map(|l| (v - l).abs()).min().unwrap();
                prop_assert_eq!((v - z).abs(), best);
            }
        }
    }

    fn model(side: usize, seed: u64) -> GridModel {
        GridModel::new(GridModelConfig {
            side,
            levels: Some(4),
            hidden_dim: 6,
            classes: 3,
            dropout: 0.0,
            seed,
        })
        .unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, side: usize) -> Grid {
        let levels = quantization_levels(4).unwrap();
        grid(
            side,
            (0..side * side)
                .map(|_| levels[rng.gen_range(0..4)])
                .collect(),
        )
    }

    fn exhaustive_single(m: &GridModel, g: &Grid, label: usize) -> Grid {
        let levels = quantization_levels(4).unwrap();
        let p0 = m.probabilities(g).unwrap()[label];
        let drops: Vec<f64> = (0..g.len())
            .map(|i| p0 - m.probabilities(&g.with_pixel(i, 170)).unwrap()[label])
            .collect();
        let mut best: Option<((usize, f64, i32), Grid)> = None;
        for i in 0..g.len() {
            let rank = (0..g.len())
                .filter(|&j| drops[j] > drops[i] || (drops[j] == drops[i] && j < i))
                .count();
            let k = levels.iter().position(|&l| l == g.pixels()[i]).unwrap() as i64;
            for j in [k - 1, k + 1] {
                if !(0..4).contains(&j) {
                    continue;
                }
                let v = levels[j as usize];
                let cand = g.with_pixel(i, v);
                let p = m.probabilities(&cand).unwrap()[label];
                if p >= p0 {
                    continue;
                }
                let key = (rank, p, v);
                let better = best.as_ref().is_none_or(|(b, _)| {
                    key.0 < b.0 || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2)))
                });
                if better {
                    best = Some((key, cand));
                }
            }
        }
        best.map(|(_, c)| c).unwrap_or_else(|| g.clone())
    }

    #[test]
    fn single_step_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..50 {
            let m = model(4, case);
            let g = random_grid(&mut rng, 4);
            let label = rng.gen_range(0..3);
            let ex = discrete_grid_attack(&m, &g, label, 1).unwrap();
            assert_eq!(
                ex.perturbed,
                exhaustive_single(&m, &g, label),
                "case {case}"
            );
        }
    }

    #[test]
    fn budget_and_permitted_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let levels = quantization_levels(4).unwrap();
        for case in 0..20 {
            let m = model(4, 100 + case);
            let g = random_grid(&mut rng, 4);
            assert_eq!(discrete_grid_attack(&m, &g, 0, 0).unwrap().perturbed, g);
            let n = rng.gen_range(1..6);
            let ex = discrete_grid_attack(&m, &g, 1, n).unwrap();
            let changed = g
                .pixels()
                .iter()
                .zip(ex.perturbed.pixels())
                .filter(|(a, b)| a != b)
                .count();
            assert!(changed <= n);
            assert_eq!(changed as f64, ex.realized);
            assert!(ex.perturbed.pixels().iter().all(|v| levels.contains(v)));
        }
    }
}
