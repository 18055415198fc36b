use crate::error::Result;

/// Acceptance test applied to every candidate input an attack considers.
pub trait Gate<T>: Sync {
    fn accepts(&self, candidate: &T) -> Result<bool>;
}

/// Accepts everything; turns a gated attack into its plain form.
pub struct NoGate;

impl<T> Gate<T> for NoGate {
    fn accepts(&self, _: &T) -> Result<bool> {
        Ok(true)
    }
}

/// Detection-aware constraint: a candidate is rejected when the wrapped
/// detector scores it above `beta`.
pub struct ThresholdGate<F> {
    pub scorer: F,
    pub beta: f64,
}

impl<F> ThresholdGate<F> {
    pub fn new(scorer: F, beta: f64) -> Self {
        Self { scorer, beta }
    }
}

impl<T, F> Gate<T> for ThresholdGate<F>
where
    F: Fn(&T) -> Result<f64> + Sync,
{
    fn accepts(&self, candidate: &T) -> Result<bool> {
        Ok((self.scorer)(candidate)? <= self.beta)
    }
}
