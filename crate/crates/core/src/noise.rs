//! Driving noise `U(x, n)` as a stateless counter-based function.
//!
//! Every value is a keyed hash of `(seed, stream_id, x, n)`, so the whole
//! space-time field exists at once with O(1) memory. Two configurations
//! evolved against the same field are coupled through the flow maps, and any
//! past time slice can be regenerated on demand.
//!
//! Values lie strictly inside `(0, 1)`: the 53-bit mantissa is offset by half
//! a unit, which keeps the empty configuration exactly absorbing under the
//! `U <= phi(0) = 0` rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::point::Point;

const KEY_SALT: u64 = 0x243f_6a88_85a3_08d3;
const STREAM_MUL: u64 = 0x9e37_79b9_7f4a_7c15;
const TIME_MUL: u64 = 0xd1b5_4a32_d192_ed03;
const COORD_BITS: u32 = 21;
const COORD_MASK: u64 = (1 << COORD_BITS) - 1;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// SplitMix64 finaliser.
#[inline(always)]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Injective for coordinates in `[-2^20, 2^20)`.
#[inline(always)]
fn pack_site(x: &Point) -> u64 {
    ((x.0[0] as u64) & COORD_MASK)
        | (((x.0[1] as u64) & COORD_MASK) << COORD_BITS)
        | (((x.0[2] as u64) & COORD_MASK) << (2 * COORD_BITS))
}

#[inline(always)]
fn to_unit(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * INV_2_53
}

/// A family of i.i.d. uniform variables indexed by space-time.
pub trait DrivingNoise: Sync {
    type Slice<'a>: NoiseSlice
    where
        Self: 'a;

    /// The field restricted to time `n`; cheap to build, reused across sites.
    fn at_time(&self, n: i64) -> Self::Slice<'_>;

    fn uniform_at(&self, x: &Point, n: i64) -> f64 {
        self.at_time(n).uniform(x)
    }
}

/// One time slice `x -> U(x, n)`.
pub trait NoiseSlice: Sync {
    fn uniform(&self, x: &Point) -> f64;
}

/// The canonical noise field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseField {
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseField {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Same seed, different stream.
    pub fn with_stream(&self, stream_id: u64) -> Self {
        Self { seed: self.seed, stream_id }
    }

    fn key(&self) -> u64 {
        mix64(mix64(self.seed ^ KEY_SALT) ^ self.stream_id.wrapping_mul(STREAM_MUL))
    }

    /// A 64-bit seed for stateful generators that must stay tied to this field.
    pub fn rng_seed(&self, tag: u64) -> u64 {
        mix64(self.key() ^ mix64(tag.wrapping_add(STREAM_MUL)))
    }
}

/// `NoiseField` restricted to a single time index.
#[derive(Clone, Copy, Debug)]
pub struct FieldSlice {
    time_key: u64,
}

impl NoiseSlice for FieldSlice {
    #[inline(always)]
    fn uniform(&self, x: &Point) -> f64 {
        let h = mix64(self.time_key ^ pack_site(x));
        to_unit(mix64(h.wrapping_add(self.time_key)))
    }
}

impl DrivingNoise for NoiseField {
    type Slice<'a> = FieldSlice;

    #[inline]
    fn at_time(&self, n: i64) -> FieldSlice {
        FieldSlice {
            time_key: mix64(self.key() ^ (n as u64).wrapping_mul(TIME_MUL)),
        }
    }
}

impl<N: DrivingNoise + ?Sized> DrivingNoise for &N {
    type Slice<'a>
        = N::Slice<'a>
    where
        Self: 'a;

    fn at_time(&self, n: i64) -> Self::Slice<'_> {
        (**self).at_time(n)
    }
}

/// A noise field with selected values replaced, for planting failures.
#[derive(Clone, Debug, Default)]
pub struct PlantedNoise<N> {
    base: N,
    overrides: HashMap<i64, HashMap<Point, f64>>,
}

impl<N: DrivingNoise> PlantedNoise<N> {
    pub fn new(base: N) -> Self {
        Self { base, overrides: HashMap::new() }
    }

    /// Forces `U(x, n) = value`. Sites are torus coordinates as queried by the dynamics.
    pub fn set(&mut self, x: Point, n: i64, value: f64) {
        self.overrides.entry(n).or_default().insert(x, value);
    }

    pub fn base(&self) -> &N {
        &self.base
    }
}

pub struct PlantedSlice<'a, S> {
    base: S,
    overrides: Option<&'a HashMap<Point, f64>>,
}

impl<S: NoiseSlice> NoiseSlice for PlantedSlice<'_, S> {
    #[inline]
    fn uniform(&self, x: &Point) -> f64 {
        if let Some(v) = self.overrides.and_then(|m| m.get(x)) {
            return *v;
        }
        self.base.uniform(x)
    }
}

impl<N: DrivingNoise> DrivingNoise for PlantedNoise<N> {
    type Slice<'a>
        = PlantedSlice<'a, N::Slice<'a>>
    where
        Self: 'a;

    fn at_time(&self, n: i64) -> Self::Slice<'_> {
        PlantedSlice {
            base: self.base.at_time(n),
            overrides: self.overrides.get(&n),
        }
    }
}
