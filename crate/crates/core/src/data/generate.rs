use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::glyph::{digit_glyph, Sprite};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RenderMode {
    /// Subpixel positions split each sprite pixel over four frame pixels.
    #[default]
    Bilinear,
    /// Positions rounded to whole pixels.
    IntegerSnap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CompositeMode {
    /// Per-pixel maximum over digits.
    #[default]
    Max,
    /// Sum over digits, clamped to 1.
    AddClamp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    /// Direction of motion in degrees, y axis pointing down.
    pub angle_deg: f64,
    /// Displacement per frame as a fraction of `frame_size`.
    pub speed: f64,
    /// Upper bound of the additive `Unif(0, b)` pixel noise.
    pub noise_b: f64,
    pub frame_size: usize,
    pub seq_len: usize,
    pub n_digits: usize,
    pub bounce: bool,
    /// Start as fractions of the free range `[0, frame − sprite − 1]`;
    /// `None` draws it per sequence.
    pub start: Option<(f64, f64)>,
    /// Draw angle and speed per digit instead of using the fixed values.
    pub random_motion: bool,
    /// Fixed digit, or `None` to draw one per sequence.
    pub digit: Option<u8>,
    /// Glyph variant; 0 is the canonical shape, `None` draws one per digit.
    pub glyph_variant: Option<u64>,
    pub sprite_size: usize,
    pub render: RenderMode,
    pub composite: CompositeMode,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            angle_deg: 20.0,
            speed: 0.05,
            noise_b: 0.0,
            frame_size: 32,
            seq_len: 20,
            n_digits: 1,
            bounce: true,
            start: Some((0.1, 0.2)),
            random_motion: false,
            digit: Some(3),
            glyph_variant: Some(0),
            sprite_size: 14,
            render: RenderMode::Bilinear,
            composite: CompositeMode::Max,
            seed: 0,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return bad(format!("speed must be >= 0, got {}", self.speed));
        }
        if !(self.noise_b >= 0.0) || !self.noise_b.is_finite() {
            return bad(format!("noise_b must be >= 0, got {}", self.noise_b));
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len must be at least 2, got {}", self.seq_len));
        }
        if self.n_digits == 0 {
            return bad("n_digits must be at least 1".into());
        }
        if self.sprite_size + 1 > self.frame_size {
            return bad(format!(
                "sprite of {} px does not fit a {} px frame",
                self.sprite_size, self.frame_size
            ));
        }
        if let Some((x, y)) = self.start {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return bad(format!("start must lie in [0, 1]^2, got ({x}, {y})"));
            }
        }
        if let Some(d) = self.digit {
            if d > 9 {
                return bad(format!("digit must be 0-9, got {d}"));
            }
        }
        Ok(())
    }

    /// Per-frame displacement in pixels.
    pub fn displacement(&self) -> (f64, f64) {
        let step = self.speed * self.frame_size as f64;
        let a = self.angle_deg.to_radians();
        (step * a.cos(), step * a.sin())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMeta {
    pub angle_deg: f64,
    pub speed: f64,
    pub noise_b: f64,
    pub seed: u64,
}

/// Frames stored `[batch][time][row][col]`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<f64>,
    pub meta: Vec<SequenceMeta>,
}

impl SequenceBatch {
    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let n = self.frame_len();
        let start = (b * self.time + t) * n;
        &self.frames[start..start + n]
    }

    /// One `len(indices) x pixels` tensor per time step.
    pub fn time_major(&self, indices: &[usize]) -> Vec<Tensor> {
        (0..self.time)
            .map(|t| {
                let mut data = Vec::with_capacity(indices.len() * self.frame_len());
                for &b in indices {
                    data.extend_from_slice(self.frame(b, t));
                }
                Tensor::from_vec(indices.len(), self.frame_len(), data).expect("sized")
            })
            .collect()
    }

    pub fn all_time_major(&self) -> Vec<Tensor> {
        self.time_major(&(0..self.batch).collect::<Vec<_>>())
    }
}

/// Folds a coordinate into `[0, range]` by mirror reflection.
pub fn reflect(x: f64, range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    let r = x.rem_euclid(2.0 * range);
    if r > range {
        2.0 * range - r
    } else {
        r
    }
}

/// Adds `sprite` at top-left `(x, y)` into `canvas`; pixels falling outside
/// are dropped.
fn splat(canvas: &mut [f64], size: usize, sprite: &Sprite, x: f64, y: f64, mode: RenderMode) {
    let put = |canvas: &mut [f64], r: i64, c: i64, v: f64| {
        if r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size {
            canvas[r as usize * size + c as usize] += v;
        }
    };
    match mode {
        RenderMode::IntegerSnap => {
            let (x0, y0) = (x.round() as i64, y.round() as i64);
            for r in 0..sprite.height {
                for c in 0..sprite.width {
                    put(canvas, y0 + r as i64, x0 + c as i64, sprite.get(r, c));
                }
            }
        }
        RenderMode::Bilinear => {
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let w = [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (0, 1, fx * (1.0 - fy)),
                (1, 0, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ];
            for r in 0..sprite.height {
                for c in 0..sprite.width {
                    let v = sprite.get(r, c);
                    if v == 0.0 {
                        continue;
                    }
                    for &(dr, dc, wt) in &w {
                        put(canvas, y0 + r as i64 + dr, x0 + c as i64 + dc, v * wt);
                    }
                }
            }
        }
    }
}

struct DigitPath {
    sprite: Sprite,
    start: (f64, f64),
    velocity: (f64, f64),
}

/// Top-left sprite position at frame `t`.
fn position(cfg: &TrajectoryConfig, path: &DigitPath, t: usize) -> (f64, f64) {
    let range = (cfg.frame_size - cfg.sprite_size - 1) as f64;
    let x = path.start.0 + path.velocity.0 * t as f64;
    let y = path.start.1 + path.velocity.1 * t as f64;
    if cfg.bounce {
        (reflect(x, range), reflect(y, range))
    } else {
        (x, y)
    }
}

/// Trajectory of the first digit of sequence `index`, in pixels.
pub fn trajectory(cfg: &TrajectoryConfig, index: usize) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let paths = digit_paths(cfg, &mut sequence_rng(cfg.seed, index))?;
    Ok((0..cfg.seq_len).map(|t| position(cfg, &paths[0], t)).collect())
}

fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn pick_sprite(cfg: &TrajectoryConfig, rng: &mut ChaCha8Rng, pool: Option<&[Sprite]>) -> Result<Sprite> {
    let Some(pool) = pool else {
        let digit = cfg.digit.unwrap_or_else(|| rng.gen_range(0..10));
        let variant = cfg.glyph_variant.unwrap_or_else(|| rng.gen_range(1..u64::MAX));
        return digit_glyph(digit, cfg.sprite_size, variant);
    };
    let matching: Vec<&Sprite> = pool
        .iter()
        .filter(|s| cfg.digit.is_none() || s.label == cfg.digit)
        .collect();
    if matching.is_empty() {
        return Err(Error::Config(format!("no sprite with label {:?}", cfg.digit)));
    }
    Ok(matching[rng.gen_range(0..matching.len())].clone())
}

fn digit_paths(cfg: &TrajectoryConfig, rng: &mut ChaCha8Rng) -> Result<Vec<DigitPath>> {
    digit_paths_from(cfg, rng, None)
}

fn digit_paths_from(cfg: &TrajectoryConfig, rng: &mut ChaCha8Rng, pool: Option<&[Sprite]>) -> Result<Vec<DigitPath>> {
    let range = (cfg.frame_size - cfg.sprite_size - 1) as f64;
    (0..cfg.n_digits)
        .map(|k| {
            let sprite = pick_sprite(cfg, rng, pool)?;
            let start = match (cfg.start, k) {
                (Some(s), 0) => s,
                _ => (rng.gen::<f64>(), rng.gen::<f64>()),
            };
            let (angle, speed) = if cfg.random_motion {
                (rng.gen_range(0.0..360.0), rng.gen_range(0.5..1.5) * cfg.speed)
            } else {
                (cfg.angle_deg, cfg.speed)
            };
            let step = speed * cfg.frame_size as f64;
            let a = f64::to_radians(angle);
            Ok(DigitPath {
                sprite,
                start: (start.0 * range, start.1 * range),
                velocity: (step * a.cos(), step * a.sin()),
            })
        })
        .collect()
}

fn render_sequence(cfg: &TrajectoryConfig, index: usize, pool: Option<&[Sprite]>) -> Result<(Vec<f64>, SequenceMeta)> {
    let mut rng = sequence_rng(cfg.seed, index);
    let paths = digit_paths_from(cfg, &mut rng, pool)?;
    let n = cfg.frame_size * cfg.frame_size;
    let mut out = vec![0.0f64; cfg.seq_len * n];
    let mut layer = vec![0.0; n];
    // noise has its own stream so its draws do not depend on digit count
    let mut noise_rng = sequence_rng(cfg.seed ^ 0x6e6f_6973_65, index);
    for t in 0..cfg.seq_len {
        let frame = &mut out[t * n..(t + 1) * n];
        for path in &paths {
            layer.iter_mut().for_each(|v| *v = 0.0);
            let (x, y) = position(cfg, path, t);
            splat(&mut layer, cfg.frame_size, &path.sprite, x, y, cfg.render);
            for (f, &l) in frame.iter_mut().zip(&layer) {
                *f = match cfg.composite {
                    CompositeMode::Max => f64::max(*f, l),
                    CompositeMode::AddClamp => *f + l,
                };
            }
        }
        for f in frame.iter_mut() {
            let u: f64 = noise_rng.gen();
            *f = (*f + cfg.noise_b * u).clamp(0.0, 1.0);
        }
    }
    let meta = SequenceMeta {
        angle_deg: cfg.angle_deg,
        speed: cfg.speed,
        noise_b: cfg.noise_b,
        seed: cfg.seed,
    };
    Ok((out, meta))
}

/// Renders `n` sequences. Sequence `i` draws from its own stream of the
/// configured seed, so results do not depend on thread count.
pub fn generate(cfg: &TrajectoryConfig, n: usize) -> Result<SequenceBatch> {
    generate_from(cfg, n, None)
}

/// [`generate`] drawing digits from `pool` (e.g. loaded IDX images) instead
/// of procedural glyphs. Sprites must be `sprite_size` square.
pub fn generate_from(cfg: &TrajectoryConfig, n: usize, pool: Option<&[Sprite]>) -> Result<SequenceBatch> {
    cfg.validate()?;
    if let Some(bad) = pool
        .into_iter()
        .flatten()
        .find(|s| s.height != cfg.sprite_size || s.width != cfg.sprite_size)
    {
        return Err(Error::Config(format!(
            "sprite is {}x{}, sprite_size is {}",
            bad.height, bad.width, cfg.sprite_size
        )));
    }
    let rendered: Vec<(Vec<f64>, SequenceMeta)> = (0..n)
        .into_par_iter()
        .map(|i| render_sequence(cfg, i, pool))
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(n * cfg.seq_len * cfg.frame_size * cfg.frame_size);
    let mut meta = Vec::with_capacity(n);
    for (f, m) in rendered {
        frames.extend(f);
        meta.push(m);
    }
    Ok(SequenceBatch {
        batch: n,
        time: cfg.seq_len,
        height: cfg.frame_size,
        width: cfg.frame_size,
        frames,
        meta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    Angle,
    Speed,
    Noise,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 3] = [SuiteKind::Angle, SuiteKind::Speed, SuiteKind::Noise];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Angle => "angle",
            SuiteKind::Speed => "speed",
            SuiteKind::Noise => "noise",
        }
    }

    /// Deviation levels, excluding the training reference.
    pub fn levels(self) -> [f64; 3] {
        match self {
            SuiteKind::Angle => [25.0, 30.0, 35.0],
            SuiteKind::Speed => [0.055, 0.060, 0.065],
            SuiteKind::Noise => [0.2, 0.4, 0.6],
        }
    }

    /// The varied setting of `cfg`.
    pub fn value(self, cfg: &TrajectoryConfig) -> f64 {
        match self {
            SuiteKind::Angle => cfg.angle_deg,
            SuiteKind::Speed => cfg.speed,
            SuiteKind::Noise => cfg.noise_b,
        }
    }

    fn apply(self, cfg: &mut TrajectoryConfig, v: f64) {
        match self {
            SuiteKind::Angle => cfg.angle_deg = v,
            SuiteKind::Speed => cfg.speed = v,
            SuiteKind::Noise => cfg.noise_b = v,
        }
    }
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}` (angle, speed, noise)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteLevel {
    pub value: f64,
    pub batch: SequenceBatch,
}

/// Reference set followed by the three deviation levels of `kind`, `count`
/// sequences each. Every level reuses `train`'s seed so noise draws are
/// shared across levels and only the varied setting differs.
pub fn deviation_suite(train: &TrajectoryConfig, kind: SuiteKind, count: usize) -> Result<Vec<SuiteLevel>> {
    let reference = kind.value(train);
    std::iter::once(reference)
        .chain(kind.levels())
        .map(|v| {
            let mut cfg = train.clone();
            kind.apply(&mut cfg, v);
            Ok(SuiteLevel {
                value: v,
                batch: generate(&cfg, count)?,
            })
        })
        .collect()
}
