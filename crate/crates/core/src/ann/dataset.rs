use serde::{Deserialize, Serialize};

use super::AnnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub inputs: Vec<f64>,
    pub target: f64,
}

impl Sample {
    pub fn new(inputs: Vec<f64>, target: f64) -> Self {
        Self { inputs, target }
    }
}

/// Rows in chronological order with a train/test boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Sample>,
    train_len: usize,
}

impl Dataset {
    /// All rows are training rows until [`Dataset::with_split`] is called.
    pub fn new(rows: Vec<Sample>) -> Result<Self, AnnError> {
        let arity = rows.first().map(|r| r.inputs.len());
        for (i, r) in rows.iter().enumerate() {
            if Some(r.inputs.len()) != arity {
                return Err(AnnError::BadConfig(format!("row {i} has inconsistent arity")));
            }
            if !r.target.is_finite() || r.inputs.iter().any(|x| !x.is_finite()) {
                return Err(AnnError::BadConfig(format!("row {i} contains a non-finite value")));
            }
        }
        let train_len = rows.len();
        Ok(Self { rows, train_len })
    }

    /// Marks the first `train_len` rows as training data; the rest is test data.
    pub fn with_split(mut self, train_len: usize) -> Self {
        self.train_len = train_len.min(self.rows.len());
        self
    }

    pub fn rows(&self) -> &[Sample] {
        &self.rows
    }

    pub fn train(&self) -> &[Sample] {
        &self.rows[..self.train_len]
    }

    pub fn test(&self) -> &[Sample] {
        &self.rows[self.train_len..]
    }

    pub fn split_sizes(&self) -> (usize, usize) {
        (self.train_len, self.rows.len() - self.train_len)
    }

    pub fn arity(&self) -> Option<usize> {
        self.rows.first().map(|r| r.inputs.len())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_marker() {
        let rows = (0..1126).map(|i| Sample::new(vec![i as f64], 0.0)).collect();
        let d = Dataset::new(rows).unwrap().with_split(790);
        assert_eq!(d.split_sizes(), (790, 336));
        assert_eq!(d.train().len(), 790);
        assert_eq!(d.test()[0].inputs[0], 790.0);
    }

    #[test]
    fn nan_rows_are_rejected() {
        let rows = vec![Sample::new(vec![f64::NAN], 0.0)];
        assert!(Dataset::new(rows).is_err());
    }
}
