use std::collections::VecDeque;

use crate::pf::GaussianSummary;
use crate::sim::Measurement;

/// One stored step: its Gaussian summary and every measurement fused at it.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub step: usize,
    pub summary: GaussianSummary,
    pub measurements: Vec<Measurement>,
}

/// Rolling store over the last `ℓ + 2` steps, `k − ℓ − 1 ..= k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStore {
    max_delay: usize,
    slots: VecDeque<Slot>,
}

impl WindowStore {
    pub fn new(max_delay: usize, step: usize, summary: GaussianSummary) -> Self {
        let mut slots = VecDeque::with_capacity(max_delay + 3);
        slots.push_back(Slot {
            step,
            summary,
            measurements: Vec::new(),
        });
        Self { max_delay, slots }
    }

    pub fn max_delay(&self) -> usize {
        self.max_delay
    }

    pub fn capacity(&self) -> usize {
        self.max_delay + 2
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Latest stored step.
    pub fn current_step(&self) -> usize {
        self.slots.back().map_or(0, |s| s.step)
    }

    pub fn first_step(&self) -> usize {
        self.slots.front().map_or(0, |s| s.step)
    }

    /// Appends the next step, evicting the oldest slot once full.
    pub fn push(&mut self, step: usize, summary: GaussianSummary, measurements: Vec<Measurement>) {
        debug_assert_eq!(step, self.current_step() + 1);
        self.slots.push_back(Slot {
            step,
            summary,
            measurements,
        });
        while self.slots.len() > self.capacity() {
            self.slots.pop_front();
        }
    }

    pub fn slot(&self, step: usize) -> Option<&Slot> {
        let first = self.first_step();
        step.checked_sub(first).and_then(|i| self.slots.get(i))
    }

    pub fn slot_mut(&mut self, step: usize) -> Option<&mut Slot> {
        let first = self.first_step();
        step.checked_sub(first).and_then(move |i| self.slots.get_mut(i))
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter()
    }

    /// Summaries for `from ..= current_step()`.
    pub fn summaries_from(&self, from: usize) -> Vec<GaussianSummary> {
        self.slots
            .iter()
            .filter(|s| s.step >= from)
            .map(|s| s.summary.clone())
            .collect()
    }

    /// Stores `m` at its origin step unless that (sensor, step) is already
    /// present. Returns `false` when the origin slot has been evicted or the
    /// measurement is a duplicate.
    pub fn add_measurement(&mut self, m: Measurement) -> bool {
        match self.slot_mut(m.time) {
            Some(slot) if !slot.measurements.iter().any(|x| x.sensor == m.sensor) => {
                slot.measurements.push(m);
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{Matrix, Vector};

    fn g(v: f64) -> GaussianSummary {
        GaussianSummary::new(Vector::from_element(1, v), Matrix::identity(1, 1))
    }

    #[test]
    fn slides_over_l_plus_two_steps() {
        let mut w = WindowStore::new(2, 0, g(0.0));
        for k in 1..=10 {
            w.push(k, g(k as f64), vec![]);
            assert!(w.len() <= 4);
            assert_eq!(w.current_step(), k);
        }
        assert_eq!(w.first_step(), 7);
        assert!(w.slot(6).is_none());
        assert_eq!(w.slot(8).unwrap().summary.mean[0], 8.0);
        assert_eq!(w.summaries_from(9).len(), 2);
    }

    #[test]
    fn measurements_are_deduplicated() {
        let mut w = WindowStore::new(3, 0, g(0.0));
        w.push(1, g(1.0), vec![Measurement::new(0, 1, vec![0.1])]);
        assert!(!w.add_measurement(Measurement::new(0, 1, vec![0.1])));
        assert!(w.add_measurement(Measurement::new(1, 1, vec![0.2])));
        assert!(!w.add_measurement(Measurement::new(1, 5, vec![0.2])));
        assert_eq!(w.slot(1).unwrap().measurements.len(), 2);
    }
}
