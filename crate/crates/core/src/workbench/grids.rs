use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::quantize_value;
use crate::error::{Error, Result};
use crate::model::{quantization_levels, Grid};

/// Class-prototype grids: class templates share one random quantized base
/// and differ from it on `class_pixels` random pixels each. A sample is its
/// template plus uniform pixel noise, re-quantized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGridSpec {
    pub side: usize,
    pub classes: usize,
    pub levels: usize,
    pub class_pixels: usize,
    /// Half-width of the uniform pixel noise, in raw intensity units.
    pub noise: f64,
    pub train: usize,
    pub test: usize,
}

impl Default for SynthGridSpec {
    fn default() -> Self {
        Self {
            side: 8,
            classes: 4,
            levels: 4,
            class_pixels: 4,
            noise: 110.0,
            train: 800,
            test: 200,
        }
    }
}

pub type GridSplit = Vec<(Grid, usize)>;

pub fn synth_grids(spec: &SynthGridSpec, seed: u64) -> Result<(GridSplit, GridSplit)> {
    if spec.side == 0 {
        return Err(Error::config("grid.side", "must be positive"));
    }
    if spec.classes < 2 {
        return Err(Error::config("grid.classes", "need at least 2 classes"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::config(
            "grid.noise",
            "must be a finite non-negative number",
        ));
    }
    let levels = quantization_levels(spec.levels).map_err(|_| {
        Error::config(
            "grid.levels",
            format!("need at least 2 levels, got {}", spec.levels),
        )
    })?;
    let n = spec.side * spec.side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6121D);
    if spec.class_pixels == 0 || spec.class_pixels > n {
        return Err(Error::config(
            "grid.class_pixels",
            format!("must be in 1..={n}"),
        ));
    }
    let base: Vec<i32> = (0..n)
        .map(|_| levels[rng.gen_range(0..levels.len())])
        .collect();
    let templates: Vec<Vec<i32>> = (0..spec.classes)
        .map(|_| {
            let mut t = base.clone();
            for pos in rand::seq::index::sample(&mut rng, n, spec.class_pixels) {
                t[pos] = levels[rng.gen_range(0..levels.len())];
            }
            t
        })
        .collect();
    let sample = |rng: &mut ChaCha8Rng| -> Result<(Grid, usize)> {
        let y = rng.gen_range(0..spec.classes);
        let pixels = templates[y]
            .iter()
            .map(|&t| {
                let v = t as f64 + rng.gen_range(-1.0..=1.0) * spec.noise;
                quantize_value(v.round().clamp(0.0, 255.0) as i32, &levels)
            })
            .collect();
        Ok((Grid::new(spec.side, pixels)?, y))
    };
    let train = (0..spec.train)
        .map(|_| sample(&mut rng))
        .collect::<Result<_>>()?;
    let test = (0..spec.test)
        .map(|_| sample(&mut rng))
        .collect::<Result<_>>()?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_and_deterministic() {
        let spec = SynthGridSpec {
            train: 50,
            test: 10,
            ..Default::default()
        };
        let (tr, te) = synth_grids(&spec, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (50, 10));
        let levels = quantization_levels(4).unwrap();
        assert!(tr
            .iter()
            .all(|(g, y)| *y < 4 && g.pixels().iter().all(|p| levels.contains(p))));
        assert_eq!(synth_grids(&spec, 3).unwrap().0, tr);
    }

    #[test]
    fn zero_noise_reproduces_templates() {
        let spec = SynthGridSpec {
            noise: 0.0,
            class_pixels: 64,
            train: 40,
            test: 0,
            ..Default::default()
        };
        let (tr, _) = synth_grids(&spec, 1).unwrap();
        for (a, ya) in &tr {
            for (b, yb) in &tr {
                assert_eq!(ya == yb, a == b);
            }
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SynthGridSpec {
            levels: 1,
            ..Default::default()
        };
        match synth_grids(&spec, 0) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "grid.levels"),
            other => panic!("{other:?}"),
        }
    }
}
