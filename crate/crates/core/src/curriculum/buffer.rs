use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FldError, Result};

pub const SKILL_BUFFER_CAPACITY: usize = 5000;
pub const OFFLINE_BUFFER_CAPACITY: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillPerformanceRecord {
    pub theta: Vec<f64>,
    pub performance: f64,
    pub iteration: usize,
}

impl SkillPerformanceRecord {
    pub fn new(theta: Vec<f64>, performance: f64, iteration: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&performance) {
            return invalid(format!("performance must lie in [0, 1], got {performance}"));
        }
        Ok(Self {
            theta,
            performance,
            iteration,
        })
    }
}

/// Bounded FIFO; pushing into a full buffer drops the oldest entry.
#[derive(Clone, Debug)]
pub struct Fifo<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> Fifo<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return invalid("buffer capacity must be positive");
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        })
    }

    /// Returns the evicted item, if any.
    pub fn push(&mut self, item: T) -> Option<T> {
        let out = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        out
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }
}

pub type SkillPerformanceBuffer = Fifo<SkillPerformanceRecord>;

impl SkillPerformanceBuffer {
    pub fn skill_buffer() -> Self {
        Fifo::new(SKILL_BUFFER_CAPACITY).expect("positive capacity")
    }

    /// Exact nearest record by Euclidean distance over θ; earliest wins ties.
    pub fn nearest(&self, theta: &[f64]) -> Option<&SkillPerformanceRecord> {
        let mut best: Option<(f64, &SkillPerformanceRecord)> = None;
        for r in self.iter() {
            let d: f64 = r
                .theta
                .iter()
                .zip(theta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, r));
            }
        }
        best.map(|(_, r)| r)
    }
}

/// Absolute learning progress against the nearest earlier sample;
/// an empty buffer gives `r_new`.
pub fn alp_compute(theta: &[f64], r_new: f64, buffer: &SkillPerformanceBuffer) -> f64 {
    match buffer.nearest(theta) {
        Some(old) => (r_new - old.performance).abs(),
        None => r_new,
    }
}

/// Encoded θ of the reference corpus.
#[derive(Clone, Debug)]
pub struct OfflineBuffer(Fifo<Vec<f64>>);

impl OfflineBuffer {
    pub fn new() -> Self {
        Self(Fifo::new(OFFLINE_BUFFER_CAPACITY).expect("positive capacity"))
    }

    pub fn with_capacity(capacity: usize) -> Result<Self> {
        Ok(Self(Fifo::new(capacity)?))
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let mut b = Self::new();
        for p in points {
            b.push(p);
        }
        b
    }

    pub fn push(&mut self, theta: Vec<f64>) -> Option<Vec<f64>> {
        self.0.push(theta)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.0.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.0.iter()
    }

    /// Uniform draw over stored encodings.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(FldError::Empty("offline buffer".into()));
        }
        Ok(self
            .0
            .get(rng.gen_range(0..self.len()))
            .expect("in range")
            .clone())
    }
}

impl Default for OfflineBuffer {
    fn default() -> Self {
        Self::new()
    }
}
