//! Replay buffer of whole episodes.

use std::collections::VecDeque;

use rand::Rng;

use crate::envs::Transition;

/// Episodes stored as contiguous streams. Eviction is FIFO over whole
/// episodes, so a stored stream is never cut.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeBuffer {
    episodes: VecDeque<Vec<Transition>>,
    capacity: usize,
    len: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Self {
        EpisodeBuffer {
            episodes: VecDeque::new(),
            capacity,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stored transitions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn episodes(&self) -> impl ExactSizeIterator<Item = &[Transition]> {
        self.episodes.iter().map(Vec::as_slice)
    }

    pub fn episode(&self, i: usize) -> &[Transition] {
        &self.episodes[i]
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Appends an episode, evicting the oldest ones until it fits. The newest
    /// episode is always kept, even when it alone exceeds the capacity.
    pub fn push_episode(&mut self, episode: Vec<Transition>) {
        if episode.is_empty() {
            return;
        }
        while !self.episodes.is_empty() && self.len + episode.len() > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty");
            self.len -= old.len();
        }
        self.len += episode.len();
        self.episodes.push_back(episode);
    }

    /// Number of windows of `len` transitions that fit inside single episodes.
    pub fn window_count(&self, len: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| (e.len() + 1).saturating_sub(len))
            .sum()
    }

    /// `(episode, start)` of `count` windows of `len` transitions, uniform
    /// over all valid starts. Empty when no window fits.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        len: usize,
        count: usize,
        rng: &mut R,
    ) -> Vec<(usize, usize)> {
        let total = self.window_count(len);
        if total == 0 || len == 0 {
            return Vec::new();
        }
        (0..count)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                for (i, e) in self.episodes.iter().enumerate() {
                    let n = (e.len() + 1).saturating_sub(len);
                    if k < n {
                        return (i, k);
                    }
                    k -= n;
                }
                unreachable!("index within total")
            })
            .collect()
    }

    /// `(episode, index)` of `count` uniformly drawn transitions.
    pub fn sample_transitions<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Vec<(usize, usize)> {
        self.sample_windows(1, count, rng)
    }
}
