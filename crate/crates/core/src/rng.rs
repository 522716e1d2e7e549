//! Counter-based random streams.
//!
//! Every random quantity in a run is drawn from a stream whose seed is a pure
//! function of `(master_seed, purpose, persona, year, arm)`. Nothing depends on
//! scheduling or on how many other streams were consumed, so results do not
//! change with worker count or resume points.
//!
//! Life-event streams deliberately leave the arm out of the key: the four
//! clones of a persona see the same uniforms each year (common random numbers).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::persona::Arm;

/// What a stream is used for. Part of the key so that streams for different
/// purposes never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Persona,
    Events,
    Behavior,
    Sentiment,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Persona => 0x7065_7273_6f6e_6100,
            StreamPurpose::Events => 0x6576_656e_7473_0000,
            StreamPurpose::Behavior => 0x6265_6861_7669_6f72,
            StreamPurpose::Sentiment => 0x7365_6e74_696d_656e,
        }
    }
}

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full key of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub purpose: StreamPurpose,
    pub persona_id: u64,
    pub year: u32,
    /// `None` for arm-independent streams.
    pub arm: Option<Arm>,
}

impl StreamKey {
    fn seed_bytes(&self) -> [u8; 32] {
        let arm_word = match self.arm {
            None => u64::MAX,
            Some(arm) => arm.index() as u64,
        };
        let mut h = splitmix64(self.master_seed ^ self.purpose.tag());
        h = splitmix64(h ^ self.persona_id);
        h = splitmix64(h ^ u64::from(self.year));
        h = splitmix64(h ^ arm_word);
        let mut out = [0u8; 32];
        let mut state = h;
        for chunk in out.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        out
    }

    pub fn stream(&self) -> RngStream {
        RngStream {
            inner: ChaCha8Rng::from_seed(self.seed_bytes()),
        }
    }
}

/// A reproducible stream of uniforms.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}

/// Life-event stream for `(persona, year)`. The arm is accepted for interface
/// symmetry but excluded from the key, so all clones share the stream.
pub fn derive_stream(master_seed: u64, persona_id: u64, _arm: Arm, year: u32) -> RngStream {
    StreamKey {
        master_seed,
        purpose: StreamPurpose::Events,
        persona_id,
        year,
        arm: None,
    }
    .stream()
}

/// Behavior-response stream. `active_arm` is `Some` once the arm's addendum
/// is active; before that the stream is shared by every clone.
pub fn behavior_stream(
    master_seed: u64,
    persona_id: u64,
    active_arm: Option<Arm>,
    year: u32,
) -> RngStream {
    StreamKey {
        master_seed,
        purpose: StreamPurpose::Behavior,
        persona_id,
        year,
        arm: active_arm,
    }
    .stream()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut s: RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| s.uniform()).collect()
    }

    #[test]
    fn same_inputs_give_same_stream() {
        let a = draws(derive_stream(42, 7, Arm::Sham6, 30), 100);
        let b = draws(derive_stream(42, 7, Arm::Sham6, 30), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn event_streams_are_shared_across_arms() {
        let base = draws(derive_stream(42, 7, Arm::Sham6, 30), 50);
        for arm in Arm::ALL {
            assert_eq!(draws(derive_stream(42, 7, arm, 30), 50), base);
        }
    }

    #[test]
    fn behavior_streams_split_only_when_addendum_active() {
        let shared_a = draws(behavior_stream(1, 3, None, 10), 20);
        let shared_b = draws(behavior_stream(1, 3, None, 10), 20);
        assert_eq!(shared_a, shared_b);
        let ros = draws(behavior_stream(1, 3, Some(Arm::Ros6), 10), 20);
        let sham = draws(behavior_stream(1, 3, Some(Arm::Sham6), 10), 20);
        assert_ne!(ros, sham);
        assert_ne!(ros, shared_a);
    }

    #[test]
    fn keys_differ_by_every_component() {
        let base = draws(derive_stream(1, 1, Arm::Sham6, 1), 4);
        assert_ne!(base, draws(derive_stream(2, 1, Arm::Sham6, 1), 4));
        assert_ne!(base, draws(derive_stream(1, 2, Arm::Sham6, 1), 4));
        assert_ne!(base, draws(derive_stream(1, 1, Arm::Sham6, 2), 4));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn distinct_personas_are_uncorrelated() {
        const N: usize = 1_000_000;
        let base = draws(derive_stream(2024, 0, Arm::Sham6, 20), N);
        for other in [1u64, 2, 1000] {
            let d = draws(derive_stream(2024, other, Arm::Sham6, 20), N);
            let r = pearson(&base, &d);
            assert!(r.abs() < 0.01, "persona {other}: r = {r}");
        }
        let mean = base.iter().sum::<f64>() / N as f64;
        assert!((mean - 0.5).abs() < 0.002);
    }

    #[test]
    fn categorical_respects_weights() {
        let mut s = derive_stream(9, 9, Arm::Sham6, 9);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[s.categorical(&[0.2, 0.3, 0.5])] += 1;
        }
        assert!((counts[0] as f64 / 30_000.0 - 0.2).abs() < 0.02);
        assert!((counts[2] as f64 / 30_000.0 - 0.5).abs() < 0.02);
    }
}
