//! Small image-analog classifier over R×R grids: flatten → tanh hidden layer →
//! dropout → softmax. The hidden layer plays the role of the encoder embedding.
//!
//! A model built with `levels: Some(q)` only accepts grids whose pixels lie in
//! the permitted quantization set; `levels: None` accepts any value in
//! [0, 255], including non-integer perturbed pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::shuffle;
use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, softmax, Matrix};

/// Square grid of integer pixel values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    side: usize,
    pixels: Vec<i32>,
}

impl Grid {
    pub fn new(side: usize, pixels: Vec<i32>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                actual: pixels.len(),
            });
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[i32] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn with_pixel(&self, idx: usize, value: i32) -> Grid {
        let mut g = self.clone();
        g.pixels[idx] = value;
        g
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// Z_q = { round(k·255/(q−1)) : k = 0..q−1 }.
pub fn quantization_levels(q: usize) -> Result<Vec<i32>> {
    if q < 2 {
        return Err(Error::config("levels", format!("need q >= 2, got {q}")));
    }
    Ok((0..q)
        .map(|k| (k as f64 * 255.0 / (q - 1) as f64).round() as i32)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModelConfig {
    pub side: usize,
    pub levels: Option<usize>,
    pub hidden_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for GridModelConfig {
    fn default() -> Self {
        Self {
            side: 8,
            levels: Some(4),
            hidden_dim: 32,
            classes: 4,
            dropout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    config: GridModelConfig,
    permitted: Option<Vec<i32>>,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

impl GridModel {
    pub fn new(config: GridModelConfig) -> Result<Self> {
        if config.classes < 2 || config.side == 0 || config.hidden_dim == 0 {
            return Err(Error::config("grid", "invalid grid model shape"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::config("dropout", "rate must lie in [0, 1)"));
        }
        let permitted = config.levels.map(quantization_levels).transpose()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.side * config.side;
        let (h, k) = (config.hidden_dim, config.classes);
        let a1 = (6.0 / (n + h) as f64).sqrt();
        let a2 = (6.0 / (h + k) as f64).sqrt();
        let w1 = Matrix::from_vec(h, n, (0..h * n).map(|_| rng.gen_range(-a1..a1)).collect())?;
        let w2 = Matrix::from_vec(k, h, (0..k * h).map(|_| rng.gen_range(-a2..a2)).collect())?;
        Ok(Self {
            config,
            permitted,
            w1,
            b1: vec![0.0; h],
            w2,
            b2: vec![0.0; k],
        })
    }

    pub fn config(&self) -> &GridModelConfig {
        &self.config
    }

    pub fn permitted(&self) -> Option<&[i32]> {
        self.permitted.as_deref()
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.side() != self.config.side {
            return Err(Error::DimensionMismatch {
                expected: self.config.side,
                actual: grid.side(),
            });
        }
        if let Some(levels) = &self.permitted {
            if let Some(bad) = grid.pixels().iter().find(|p| !levels.contains(p)) {
                return Err(Error::Data(format!(
                    "pixel value {bad} is not a permitted quantization level"
                )));
            }
        } else if let Some(bad) = grid.pixels().iter().find(|p| !(0..=255).contains(*p)) {
            return Err(Error::Data(format!("pixel value {bad} outside 0..=255")));
        }
        Ok(())
    }

    fn check_continuous(&self, input: &[f64]) -> Result<()> {
        if self.permitted.is_some() {
            return Err(Error::Unsupported(
                "quantized grid model only accepts permitted pixel values".into(),
            ));
        }
        let n = self.config.side * self.config.side;
        if input.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite pixel".into()));
        }
        Ok(())
    }

    /// Hidden-layer embedding of a grid.
    pub fn encode(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        Ok(self.hidden(&grid.as_f64()))
    }

    pub fn encode_continuous(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_continuous(input)?;
        Ok(self.hidden(input))
    }

    pub fn probabilities(&self, grid: &Grid) -> Result<Vec<f64>> {
        let e = self.encode(grid)?;
        Ok(softmax(&self.logits(&e)))
    }

    pub fn probabilities_continuous(&self, input: &[f64]) -> Result<Vec<f64>> {
        let e = self.encode_continuous(input)?;
        Ok(softmax(&self.logits(&e)))
    }

    /// Output stage applied to an embedding.
    pub fn classify(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.config.hidden_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.hidden_dim,
                actual: e.len(),
            });
        }
        Ok(softmax(&self.logits(e)))
    }

    pub fn predict(&self, grid: &Grid) -> Result<usize> {
        Ok(argmax(&self.probabilities(grid)?))
    }

    pub fn predict_continuous(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probabilities_continuous(input)?))
    }

    /// Cross-entropy loss and its gradient with respect to the pixel values.
    pub fn loss_grad_input(&self, input: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
        self.check_continuous(input)?;
        let (loss, dx) = self.loss_grads(input, class, None, None)?;
        Ok((loss, dx))
    }

    pub fn mc_samples(&self, input: &[f64], m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if m == 0 {
            return Err(Error::Empty("MC sample count must be at least 1".into()));
        }
        let n = self.config.side * self.config.side;
        if input.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: input.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = self.hidden(input);
        Ok((0..m)
            .map(|_| {
                let keep = self.dropout_mask(&mut rng);
                let dropped: Vec<f64> = match &keep {
                    Some(k) => e.iter().zip(k).map(|(a, b)| a * b).collect(),
                    None => e.clone(),
                };
                softmax(&self.logits(&dropped))
            })
            .collect())
    }

    pub fn train(
        &self,
        data: &[(Grid, usize)],
        cfg: &super::TrainConfig,
    ) -> Result<(GridModel, super::TrainReport)> {
        if data.is_empty() {
            return Err(Error::Empty("training data".into()));
        }
        for (g, c) in data {
            self.check_grid(g)?;
            if *c >= self.config.classes {
                return Err(Error::InvalidLabel(format!("class {c}")));
            }
        }
        let mut model = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            shuffle(&mut order, &mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let mut gw1 = Matrix::zeros(model.w1.rows(), model.w1.cols());
                let mut gb1 = vec![0.0; model.b1.len()];
                let mut gw2 = Matrix::zeros(model.w2.rows(), model.w2.cols());
                let mut gb2 = vec![0.0; model.b2.len()];
                for &i in batch {
                    let (g, c) = &data[i];
                    let keep = model.dropout_mask(&mut rng);
                    let (loss, _) = model.loss_grads(
                        &g.as_f64(),
                        *c,
                        keep.as_deref(),
                        Some((&mut gw1, &mut gb1, &mut gw2, &mut gb2)),
                    )?;
                    total += loss;
                }
                let scale = cfg.lr / batch.len() as f64;
                let pairs: [(&mut [f64], &[f64]); 4] = [
                    (model.w1.as_mut_slice(), gw1.as_slice()),
                    (&mut model.b1, &gb1),
                    (model.w2.as_mut_slice(), gw2.as_slice()),
                    (&mut model.b2, &gb2),
                ];
                for (p, g) in pairs {
                    p.iter_mut().zip(g).for_each(|(a, b)| *a -= scale * b);
                }
            }
            let mean_loss = total / data.len() as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Numeric("training loss diverged".into()));
            }
            epoch_losses.push(mean_loss);
        }
        Ok((model, super::TrainReport { epoch_losses }))
    }

    pub fn accuracy(&self, data: &[(Grid, usize)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("evaluation data".into()));
        }
        let mut correct = 0;
        for (g, c) in data {
            if self.predict(g)? == *c {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    fn hidden(&self, input: &[f64]) -> Vec<f64> {
        (0..self.w1.rows())
            .map(|j| (dot(self.w1.row(j), input) / 255.0 + self.b1[j]).tanh())
            .collect()
    }

    fn logits(&self, e: &[f64]) -> Vec<f64> {
        (0..self.w2.rows())
            .map(|k| dot(self.w2.row(k), e) + self.b2[k])
            .collect()
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let rate = self.config.dropout;
        if rate <= 0.0 {
            return None;
        }
        let scale = 1.0 / (1.0 - rate);
        Some(
            (0..self.config.hidden_dim)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                .collect(),
        )
    }

    #[allow(clippy::type_complexity)]
    fn loss_grads(
        &self,
        input: &[f64],
        class: usize,
        keep: Option<&[f64]>,
        grads: Option<(&mut Matrix, &mut Vec<f64>, &mut Matrix, &mut Vec<f64>)>,
    ) -> Result<(f64, Vec<f64>)> {
        if class >= self.config.classes {
            return Err(Error::InvalidLabel(format!("class {class}")));
        }
        let e = self.hidden(input);
        let head_in: Vec<f64> = match keep {
            Some(k) => e.iter().zip(k).map(|(a, b)| a * b).collect(),
            None => e.clone(),
        };
        let mut p = softmax(&self.logits(&head_in));
        let loss = -p[class].max(f64::MIN_POSITIVE).ln();
        p[class] -= 1.0;
        let dlogits = p;
        let h = self.config.hidden_dim;
        let mut de = vec![0.0; h];
        for (k, g) in dlogits.iter().enumerate() {
            for (j, w) in self.w2.row(k).iter().enumerate() {
                de[j] += g * w;
            }
        }
        if let Some(k) = keep {
            de.iter_mut().zip(k).for_each(|(a, b)| *a *= b);
        }
        let dz: Vec<f64> = de.iter().zip(&e).map(|(g, y)| g * (1.0 - y * y)).collect();
        let n = input.len();
        let mut dx = vec![0.0; n];
        for (j, g) in dz.iter().enumerate() {
            for (i, w) in self.w1.row(j).iter().enumerate() {
                dx[i] += g * w / 255.0;
            }
        }
        if let Some((gw1, gb1, gw2, gb2)) = grads {
            for (k, g) in dlogits.iter().enumerate() {
                for (j, v) in gw2.row_mut(k).iter_mut().enumerate() {
                    *v += g * head_in[j];
                }
                gb2[k] += g;
            }
            for (j, g) in dz.iter().enumerate() {
                for (i, v) in gw1.row_mut(j).iter_mut().enumerate() {
                    *v += g * input[i] / 255.0;
                }
                gb1[j] += g;
            }
        }
        Ok((loss, dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bit_levels() {
        assert_eq!(quantization_levels(4).unwrap(), vec![0, 85, 170, 255]);
        assert_eq!(quantization_levels(2).unwrap(), vec![0, 255]);
        assert!(quantization_levels(1).is_err());
    }

    #[test]
    fn quantized_model_rejects_off_set_pixels() {
        let m = GridModel::new(GridModelConfig {
            side: 2,
            ..Default::default()
        })
        .unwrap();
        let ok = Grid::new(2, vec![0, 85, 170, 255]).unwrap();
        let bad = Grid::new(2, vec![0, 86, 170, 255]).unwrap();
        assert!(m.probabilities(&ok).is_ok());
        assert!(m.probabilities(&bad).is_err());
        assert!(m.probabilities_continuous(&[0.0; 4]).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = GridModel::new(GridModelConfig {
            side: 3,
            levels: None,
            hidden_dim: 6,
            classes: 3,
            dropout: 0.0,
            seed: 9,
        })
        .unwrap();
        let x: Vec<f64> = (0..9).map(|i| (i * 29 % 256) as f64).collect();
        let (_, g) = m.loss_grad_input(&x, 1).unwrap();
        let step = 1e-3;
        for i in 0..9 {
            let mut up = x.clone();
            up[i] += step;
            let mut dn = x.clone();
            dn[i] -= step;
            let fd = (m.loss_grad_input(&up, 1).unwrap().0 - m.loss_grad_input(&dn, 1).unwrap().0)
                / (2.0 * step);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "{fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let cfg = GridModelConfig {
            side: 2,
            hidden_dim: 8,
            classes: 2,
            ..Default::default()
        };
        let m = GridModel::new(cfg).unwrap();
        let data: Vec<(Grid, usize)> = (0..40)
            .map(|i| {
                let c = i % 2;
                let v = if c == 0 { 0 } else { 255 };
                (Grid::new(2, vec![v, v, 85, 170]).unwrap(), c)
            })
            .collect();
        let tc = crate::model::TrainConfig {
            lr: 0.5,
            epochs: 30,
            batch_size: 8,
            seed: 1,
        };
        let (a, ra) = m.train(&data, &tc).unwrap();
        let (b, rb) = m.train(&data, &tc).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(a.accuracy(&data).unwrap(), 1.0);
    }
}
