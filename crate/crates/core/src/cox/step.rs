use serde::Serialize;

/// Right-continuous nondecreasing step function starting at 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct StepFunction {
    jump_times: Vec<f64>,
    cum_values: Vec<f64>,
}

impl StepFunction {
    /// Panics if `jump_times` is not strictly increasing or the lengths differ.
    pub fn new(jump_times: Vec<f64>, cum_values: Vec<f64>) -> Self {
        assert_eq!(jump_times.len(), cum_values.len());
        assert!(jump_times.windows(2).all(|w| w[0] < w[1]), "jump times must be strictly increasing");
        StepFunction { jump_times, cum_values }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn cum_values(&self) -> &[f64] {
        &self.cum_values
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    pub fn last_jump(&self) -> Option<f64> {
        self.jump_times.last().copied()
    }

    /// Size of the `i`-th jump.
    pub fn jump(&self, i: usize) -> f64 {
        if i == 0 {
            self.cum_values[0]
        } else {
            self.cum_values[i] - self.cum_values[i - 1]
        }
    }

    /// Value at `t`, including a jump located exactly at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&u| u <= t);
        if k == 0 {
            0.0
        } else {
            self.cum_values[k - 1]
        }
    }

    /// Left limit at `t`, excluding a jump located exactly at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&u| u < t);
        if k == 0 {
            0.0
        } else {
            self.cum_values[k - 1]
        }
    }

    /// Mass on `(from, to]`.
    pub fn increment(&self, from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        self.eval(to) - self.eval(from)
    }
}
