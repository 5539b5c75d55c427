//! Occupancy configurations on a periodic `d`-dimensional torus and local
//! densities over uniform-norm balls.
//!
//! Sites are stored row-major (the last axis varies fastest) in a packed bit
//! vector. Ball counts are computed by `d` sequential circular sliding-window
//! passes, so a whole density field costs `O(d * side^d)` regardless of the
//! radius.

use std::io::{self, Read, Write};

use crate::error::{BarwError, Result};
use crate::noise::{DrivingNoise, NoiseField, NoiseSlice};
use crate::point::{Point, MAX_DIM};

/// A `{0,1}` occupancy field on the torus `(Z / side Z)^dim`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Config {
    dim: usize,
    side: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for Config {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Config")
            .field("dim", &self.dim)
            .field("side", &self.side)
            .field("occupied", &self.count_occupied())
            .finish()
    }
}

impl Config {
    pub fn empty(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(BarwError::UnsupportedDimension(dim));
        }
        if side == 0 || side > (1 << 20) {
            return Err(BarwError::Invalid(format!("torus side {side} outside 1..=2^20")));
        }
        let n = side
            .checked_pow(dim as u32)
            .filter(|n| *n <= 1 << 34)
            .ok_or_else(|| BarwError::Invalid(format!("side {side}^{dim} sites is too many")))?;
        Ok(Self { dim, side, words: vec![0; n.div_ceil(64)] })
    }

    pub fn full(dim: usize, side: usize) -> Result<Self> {
        let mut c = Self::empty(dim, side)?;
        c.words.iter_mut().for_each(|w| *w = !0);
        c.clear_padding();
        Ok(c)
    }

    pub fn from_fn(dim: usize, side: usize, mut occupied: impl FnMut(&Point) -> bool) -> Result<Self> {
        let mut c = Self::empty(dim, side)?;
        for i in 0..c.len() {
            if occupied(&c.point_of(i)) {
                c.set_index(i, true);
            }
        }
        Ok(c)
    }

    pub(crate) fn from_words(dim: usize, side: usize, words: Vec<u64>) -> Self {
        let mut c = Self { dim, side, words };
        c.clear_padding();
        c
    }

    fn clear_padding(&mut self) {
        let n = self.len();
        if n % 64 != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << (n % 64)) - 1;
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of sites.
    #[inline]
    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, v: bool) {
        let w = &mut self.words[i >> 6];
        if v {
            *w |= 1 << (i & 63);
        } else {
            *w &= !(1 << (i & 63));
        }
    }

    /// Linear index of a point, wrapped onto the torus.
    #[inline]
    pub fn index_of(&self, x: &Point) -> usize {
        torus_index(self.dim, self.side, x)
    }

    /// Torus coordinates (each in `0..side`) of a linear index.
    #[inline]
    pub fn point_of(&self, i: usize) -> Point {
        torus_point(self.dim, self.side, i)
    }

    /// Reduces every active coordinate into `0..side`.
    pub fn wrap(&self, x: &Point) -> Point {
        let s = self.side as i64;
        let mut c = [0i64; MAX_DIM];
        for a in 0..self.dim {
            c[a] = x.0[a].rem_euclid(s);
        }
        Point(c)
    }

    #[inline]
    pub fn get(&self, x: &Point) -> bool {
        self.get_index(self.index_of(x))
    }

    pub fn set(&mut self, x: &Point, v: bool) {
        let i = self.index_of(x);
        self.set_index(i, v);
    }

    pub fn count_occupied(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Fraction of occupied sites on the whole torus.
    pub fn global_density(&self) -> f64 {
        self.count_occupied() as f64 / self.len() as f64
    }

    pub fn occupied_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let t = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + t)
            })
        })
    }

    /// Sites where exactly one of the two configurations is occupied.
    pub fn xor(&self, other: &Config) -> Config {
        assert_eq!((self.dim, self.side), (other.dim, other.side), "shape mismatch");
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        Config { dim: self.dim, side: self.side, words }
    }

    /// The configuration `x -> self(x - v)`.
    pub fn translate(&self, v: &Point) -> Config {
        let mut out = Config { dim: self.dim, side: self.side, words: vec![0; self.words.len()] };
        for i in self.occupied_indices() {
            let p = self.point_of(i) + *v;
            out.set(&p, true);
        }
        out
    }

    /// Signed shortest displacement `to - from` on the torus, per axis.
    pub fn torus_delta(&self, from: &Point, to: &Point) -> Point {
        let s = self.side as i64;
        let mut c = [0i64; MAX_DIM];
        for a in 0..self.dim {
            let d = (to.0[a] - from.0[a]).rem_euclid(s);
            c[a] = if d > s / 2 { d - s } else { d };
        }
        Point(c)
    }

    pub fn torus_distance(&self, a: &Point, b: &Point) -> i64 {
        self.torus_delta(a, b).sup_norm(self.dim)
    }

    /// Whether the two configurations agree on every site of `B_radius(center)`.
    pub fn agrees_on_ball(&self, other: &Config, center: &Point, radius: usize) -> bool {
        self.first_disagreement(other, center, radius).is_none()
    }

    /// Some site of `B_radius(center)` where the two configurations differ.
    pub fn first_disagreement(&self, other: &Config, center: &Point, radius: usize) -> Option<Point> {
        debug_assert_eq!((self.dim, self.side), (other.dim, other.side));
        let r = radius.min(self.side / 2) as i64;
        let full_cover = 2 * radius + 1 >= self.side;
        if full_cover {
            return self
                .words
                .iter()
                .zip(&other.words)
                .position(|(a, b)| a != b)
                .map(|wi| {
                    let bit = (self.words[wi] ^ other.words[wi]).trailing_zeros() as usize;
                    self.point_of(wi * 64 + bit)
                });
        }
        for off in Point::ball(self.dim, r) {
            let p = *center + off;
            if self.get(&p) != other.get(&p) {
                return Some(self.wrap(&p));
            }
        }
        None
    }

    /// Indices where the configurations differ.
    pub fn disagreement_indices<'a>(&'a self, other: &'a Config) -> impl Iterator<Item = usize> + 'a {
        self.words.iter().zip(&other.words).enumerate().flat_map(|(wi, (a, b))| {
            let mut bits = a ^ b;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let t = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + t)
            })
        })
    }

    pub(crate) fn check_ball(&self, radius: usize) -> Result<()> {
        if 2 * radius + 1 > self.side {
            return Err(BarwError::BallTooLarge { radius, side: self.side });
        }
        Ok(())
    }
}

/// Row-major linear index of `x` on the torus of the given side.
#[inline]
pub fn torus_index(dim: usize, side: usize, x: &Point) -> usize {
    let s = side as i64;
    let mut i = 0usize;
    for a in 0..dim {
        i = i * side + x.0[a].rem_euclid(s) as usize;
    }
    i
}

/// Inverse of [`torus_index`].
#[inline]
pub fn torus_point(dim: usize, side: usize, mut i: usize) -> Point {
    let mut c = [0i64; MAX_DIM];
    for a in (0..dim).rev() {
        c[a] = (i % side) as i64;
        i /= side;
    }
    Point(c)
}

/// `V_r^d`, the number of sites in a radius-`r` ball.
#[inline]
pub fn ball_volume(dim: usize, radius: usize) -> usize {
    (2 * radius + 1).pow(dim as u32)
}

/// Occupied-site counts over `B_r(x)` for every site `x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountField {
    pub dim: usize,
    pub side: usize,
    pub radius: usize,
    pub counts: Vec<u32>,
}

impl CountField {
    pub fn volume(&self) -> usize {
        ball_volume(self.dim, self.radius)
    }

    pub fn to_density(&self) -> DensityField {
        let vol = self.volume() as f64;
        DensityField {
            dim: self.dim,
            side: self.side,
            radius: self.radius,
            values: self.counts.iter().map(|&c| c as f64 / vol).collect(),
        }
    }
}

/// `delta_r(x; cfg)` for every site `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub dim: usize,
    pub side: usize,
    pub radius: usize,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn at(&self, x: &Point) -> f64 {
        let s = self.side as i64;
        let mut i = 0usize;
        for a in 0..self.dim {
            i = i * self.side + x.0[a].rem_euclid(s) as usize;
        }
        self.values[i]
    }
}

/// `delta_r(x; cfg)` by direct summation over the ball.
pub fn local_density(cfg: &Config, x: &Point, r: usize) -> Result<f64> {
    cfg.check_ball(r)?;
    let count = local_count(cfg, x, r);
    Ok(count as f64 / ball_volume(cfg.dim, r) as f64)
}

/// Number of occupied sites in `B_r(x)` by direct summation.
pub fn local_count(cfg: &Config, x: &Point, r: usize) -> u32 {
    Point::ball(cfg.dim, r as i64)
        .into_iter()
        .filter(|off| cfg.get(&(*x + *off)))
        .count() as u32
}

/// Ball counts for every site via separable circular sliding windows.
pub fn count_field(cfg: &Config, r: usize) -> Result<CountField> {
    cfg.check_ball(r)?;
    let n = cfg.len();
    let mut counts: Vec<u32> = vec![0; n];
    for i in cfg.occupied_indices() {
        counts[i] = 1;
    }
    let mut src = Vec::new();
    for axis in 0..cfg.dim {
        window_pass(&mut counts, &mut src, cfg.side, cfg.dim, axis, r);
    }
    Ok(CountField { dim: cfg.dim, side: cfg.side, radius: r, counts })
}

/// `delta_r(x; cfg)` for every site.
pub fn density_field(cfg: &Config, r: usize) -> Result<DensityField> {
    Ok(count_field(cfg, r)?.to_density())
}

/// In-place circular window sum of width `2r+1` along `axis`.
///
/// Each block along `axis` is a stack of `side` contiguous rows of length
/// `stride`; the window slides over whole rows.
fn window_pass(values: &mut [u32], src: &mut Vec<u32>, side: usize, dim: usize, axis: usize, r: usize) {
    let stride = side.pow((dim - 1 - axis) as u32);
    let block = stride * side;
    if stride == 1 {
        for line in values.chunks_exact_mut(side) {
            src.clear();
            src.extend_from_slice(&line[side - r..]);
            src.extend_from_slice(line);
            src.extend_from_slice(&line[..r]);
            let mut sum: u32 = src[..2 * r].iter().sum();
            for (j, out) in line.iter_mut().enumerate() {
                sum += src[j + 2 * r];
                *out = sum;
                sum -= src[j];
            }
        }
        return;
    }
    let mut acc = vec![0u32; stride];
    for base in (0..values.len()).step_by(block) {
        let chunk = &mut values[base..base + block];
        src.clear();
        src.extend_from_slice(chunk);
        let row = |j: usize| &src[j * stride..(j + 1) * stride];
        acc.fill(0);
        for k in 0..=2 * r {
            for (a, v) in acc.iter_mut().zip(row((k + side - r) % side)) {
                *a += v;
            }
        }
        let (mut enter, mut leave) = ((r + 1) % side, side - r);
        for j in 0..side {
            chunk[j * stride..(j + 1) * stride].copy_from_slice(&acc);
            if j + 1 == side {
                break;
            }
            for ((a, e), l) in acc.iter_mut().zip(row(enter)).zip(row(leave % side)) {
                *a = *a + e - l;
            }
            enter += 1;
            if enter == side {
                enter = 0;
            }
            leave += 1;
        }
    }
}

/// I.i.d. Bernoulli(`p`) occupancy driven by the noise slice at time `n`.
pub fn bernoulli_product_init<N: DrivingNoise>(dim: usize, side: usize, noise: &N, n: i64, p: f64) -> Result<Config> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BarwError::Domain { what: "p", expected: "0 <= p <= 1", value: p });
    }
    let slice = noise.at_time(n);
    let mut cfg = Config::empty(dim, side)?;
    for i in 0..cfg.len() {
        if slice.uniform(&cfg.point_of(i)) < p {
            cfg.set_index(i, true);
        }
    }
    Ok(cfg)
}

/// A configuration together with the metadata stored in a snapshot file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub config: Config,
    pub time: i64,
    pub noise: NoiseField,
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"BARW";
pub const SNAPSHOT_VERSION: u16 = 1;

impl Snapshot {
    /// Layout (little-endian): magic `BARW`, version u16, dim u8, side u32,
    /// time i64, seed u64, stream u64, then `side^(dim-1)` rows of `side`
    /// bits, each row padded to whole bytes, least significant bit first.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let cfg = &self.config;
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&[cfg.dim as u8])?;
        w.write_all(&(cfg.side as u32).to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        w.write_all(&self.noise.seed.to_le_bytes())?;
        w.write_all(&self.noise.stream_id.to_le_bytes())?;
        let row_bytes = cfg.side.div_ceil(8);
        let mut row = vec![0u8; row_bytes];
        for r in 0..cfg.len() / cfg.side {
            row.iter_mut().for_each(|b| *b = 0);
            for j in 0..cfg.side {
                if cfg.get_index(r * cfg.side + j) {
                    row[j / 8] |= 1 << (j % 8);
                }
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != SNAPSHOT_VERSION {
            return Err(bad(format!("unsupported snapshot version {version}")));
        }
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let dim = b1[0] as usize;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let side = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let time = i64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let stream_id = u64::from_le_bytes(b8);
        let mut config = Config::empty(dim, side).map_err(|e| bad(e.to_string()))?;
        let mut row = vec![0u8; side.div_ceil(8)];
        for rr in 0..config.len() / side {
            r.read_exact(&mut row)?;
            for j in 0..side {
                if (row[j / 8] >> (j % 8)) & 1 == 1 {
                    config.set_index(rr * side + j, true);
                }
            }
        }
        Ok(Snapshot { config, time, noise: NoiseField::new(seed, stream_id) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(rng: &mut ChaCha8Rng, dim: usize, side: usize, p: f64) -> Config {
        Config::from_fn(dim, side, |_| rng.random_bool(p)).unwrap()
    }

    #[test]
    fn full_and_empty_densities() {
        let full = Config::full(2, 9).unwrap();
        let empty = Config::empty(2, 9).unwrap();
        for r in 0..=4 {
            assert_eq!(local_density(&full, &Point::from_coords(&[3, 8]), r).unwrap(), 1.0);
            assert_eq!(local_density(&empty, &Point::ORIGIN, r).unwrap(), 0.0);
        }
        assert!(density_field(&empty, 3).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(density_field(&full, 4).unwrap().values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn single_particle_one_third() {
        let mut c = Config::empty(1, 10).unwrap();
        c.set(&Point::ORIGIN, true);
        assert_eq!(local_density(&c, &Point::ORIGIN, 1).unwrap(), 1.0 / 3.0);
        // wraps around the torus
        assert_eq!(local_density(&c, &Point::from_coords(&[9]), 1).unwrap(), 1.0 / 3.0);
        assert_eq!(local_density(&c, &Point::from_coords(&[8]), 1).unwrap(), 0.0);
    }

    #[test]
    fn ball_too_large_rejected() {
        let c = Config::empty(1, 6).unwrap();
        assert_eq!(
            local_density(&c, &Point::ORIGIN, 3),
            Err(BarwError::BallTooLarge { radius: 3, side: 6 })
        );
        assert!(density_field(&c, 3).is_err());
        assert!(density_field(&Config::empty(1, 7).unwrap(), 3).is_ok());
    }

    #[test]
    fn density_field_matches_naive_2d_side64_r5() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let cfg = random_config(&mut rng, 2, 64, 0.4);
        let field = density_field(&cfg, 5).unwrap();
        for i in 0..cfg.len() {
            let naive = local_density(&cfg, &cfg.point_of(i), 5).unwrap();
            assert_eq!(field.values[i].to_bits(), naive.to_bits());
        }
    }

    #[test]
    fn density_field_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = random_config(&mut rng, 2, 20, 0.3);
        let v = Point::from_coords(&[7, -3]);
        let shifted = cfg.translate(&v);
        let f = density_field(&cfg, 2).unwrap();
        let g = density_field(&shifted, 2).unwrap();
        for i in 0..cfg.len() {
            let p = cfg.point_of(i);
            assert_eq!(f.at(&p), g.at(&(p + v)));
        }
    }

    #[test]
    fn bernoulli_init_extremes_and_density() {
        let noise = NoiseField::new(7, 0);
        assert!(bernoulli_product_init(2, 16, &noise, 0, 0.0).unwrap().is_empty());
        assert_eq!(bernoulli_product_init(2, 16, &noise, 0, 1.0).unwrap().count_occupied(), 256);
        let c = bernoulli_product_init(1, 4096, &noise, 3, 0.3).unwrap();
        assert!((c.global_density() - 0.3).abs() < 0.022, "{}", c.global_density());
        assert!(bernoulli_product_init(1, 8, &noise, 0, 1.5).is_err());
    }

    #[test]
    fn index_point_roundtrip_and_wrapping() {
        let c = Config::empty(3, 5).unwrap();
        for i in 0..c.len() {
            assert_eq!(c.index_of(&c.point_of(i)), i);
        }
        assert_eq!(c.index_of(&Point([-1, 5, 6])), c.index_of(&Point([4, 0, 1])));
        let c1 = Config::empty(1, 10).unwrap();
        assert_eq!(c1.torus_delta(&Point([9, 0, 0]), &Point([1, 0, 0])), Point([2, 0, 0]));
        assert_eq!(c1.torus_distance(&Point([0, 0, 0]), &Point([7, 0, 0])), 3);
    }

    #[test]
    fn snapshot_header_layout() {
        let mut c = Config::empty(1, 10).unwrap();
        c.set(&Point([0, 0, 0]), true);
        c.set(&Point([9, 0, 0]), true);
        let snap = Snapshot { config: c, time: -3, noise: NoiseField::new(1, 2) };
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"BARW");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 1);
        assert_eq!(&buf[7..11], &10u32.to_le_bytes());
        assert_eq!(&buf[11..19], &(-3i64).to_le_bytes());
        assert_eq!(&buf[35..], &[0b0000_0001, 0b0000_0010]);
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(Snapshot::read_from(&corrupt[..]).is_err());
        assert!(Snapshot::read_from(&buf[..buf.len() - 1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn density_field_equals_naive(seed in any::<u64>(), dim in 1usize..=3, r in 0usize..=8, p in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let extra = match dim { 1 => 40, 2 => 6, _ => 2 };
            let side = 2 * r + 1 + rng.random_range(0..extra);
            let cfg = random_config(&mut rng, dim, side, p);
            let field = density_field(&cfg, r).unwrap();
            for i in 0..cfg.len() {
                let naive = local_density(&cfg, &cfg.point_of(i), r).unwrap();
                prop_assert_eq!(field.values[i].to_bits(), naive.to_bits());
            }
        }

        #[test]
        fn snapshot_roundtrip(seed in any::<u64>(), dim in 1usize..=3, side in 1usize..13, time in any::<i64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = random_config(&mut rng, dim, side, 0.5);
            let snap = Snapshot { config: cfg, time, noise: NoiseField::new(seed, seed.rotate_left(7)) };
            let mut buf = Vec::new();
            snap.write_to(&mut buf).unwrap();
            let back = Snapshot::read_from(&buf[..]).unwrap();
            prop_assert_eq!(&back, &snap);
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
