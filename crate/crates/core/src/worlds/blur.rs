//! The image-blur label-noise world: procedurally rendered glyph images are
//! blurred by a level-dependent Gaussian kernel, and labels are drawn from a
//! noise distribution whose spread grows with the blur level. Level 0 labels
//! are noiseless; levels 1..3 put mass 0.02 / 0.08 / 0.12 on four incorrect
//! labels each.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::GradeHistogram;

/// Single-label noise mass per blur level (index = level). Level 0 is a point
/// mass; level v > 0 puts `NOISE_MASSES[v]` on each of four incorrect labels.
pub const NOISE_MASSES: [f64; 4] = [0.0, 0.02, 0.08, 0.12];

/// 12x12 glyph templates, one per class. A few pairs are deliberately close
/// (full vs. gapped box, X vs. single diagonal, bar vs. double bar) so that
/// class identity degrades under blur faster than blur level does.
const GLYPH_SIZE: usize = 12;
const GLYPHS: [[&str; 12]; 10] = [
    // 0: box outline
    [
        "............",
        ".##########.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".##########.",
        "............",
    ],
    // 1: centered vertical bar
    [
        "............",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        "............",
    ],
    // 2: centered horizontal bar
    [
        "............",
        "............",
        "............",
        "............",
        "............",
        ".##########.",
        ".##########.",
        "............",
        "............",
        "............",
        "............",
        "............",
    ],
    // 3: X
    [
        "#..........#",
        "##........##",
        ".##......##.",
        "..##....##..",
        "...##..##...",
        "....####....",
        "....####....",
        "...##..##...",
        "..##....##..",
        ".##......##.",
        "##........##",
        "#..........#",
    ],
    // 4: plus
    [
        "............",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".##########.",
        ".##########.",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        "............",
    ],
    // 5: box outline with a gap at the bottom
    [
        "............",
        ".##########.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".#........#.",
        ".###....###.",
        "............",
    ],
    // 6: single diagonal
    [
        "##..........",
        "###.........",
        ".###........",
        "..###.......",
        "...###......",
        "....###.....",
        ".....###....",
        "......###...",
        ".......###..",
        "........###.",
        ".........###",
        "..........##",
    ],
    // 7: T
    [
        "............",
        ".##########.",
        ".##########.",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        ".....##.....",
        "............",
    ],
    // 8: double vertical bar
    [
        "............",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "..##....##..",
        "............",
    ],
    // 9: diamond outline
    [
        ".....##.....",
        "....####....",
        "...##..##...",
        "..##....##..",
        ".##......##.",
        "##........##",
        "##........##",
        ".##......##.",
        "..##....##..",
        "...##..##...",
        "....####....",
        ".....##.....",
    ],
];

/// Parameters of the blur world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurWorld {
    pub image_size: (usize, usize),
    pub class_count: usize,
    pub labels_per_image: usize,
    /// Per-level mass on each of the four incorrect labels.
    pub noise_masses: [f64; 4],
    /// Standard deviation of the per-pixel noise added before blurring.
    pub pixel_noise: f64,
}

impl Default for BlurWorld {
    fn default() -> Self {
        Self {
            image_size: (GLYPH_SIZE, GLYPH_SIZE),
            class_count: 10,
            labels_per_image: 3,
            noise_masses: NOISE_MASSES,
            pixel_noise: 0.12,
        }
    }
}

impl BlurWorld {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if self.class_count < 5 || self.class_count > GLYPHS.len() {
            return Err(Error::invalid(format!(
                "class count must be in 5..={}",
                GLYPHS.len()
            )));
        }
        if self.labels_per_image == 0 {
            return Err(Error::invalid("need at least one label per image"));
        }
        if self.noise_masses[0] != 0.0 {
            return Err(Error::invalid("level 0 must be a point mass"));
        }
        if self.noise_masses.iter().any(|&m| m < 0.0 || 4.0 * m >= 1.0) {
            return Err(Error::invalid("noise masses must satisfy 0 <= 4m < 1"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.image_size.0 * self.image_size.1
    }
}

/// Renders the glyph for `class` at the requested size, shifted by
/// `(dx, dy)` pixels. Pixels shifted in from outside are background.
pub fn render_glyph(
    class: usize,
    size: (usize, usize),
    dx: i64,
    dy: i64,
) -> Result<Vec<Vec<f64>>> {
    let template = GLYPHS
        .get(class)
        .ok_or_else(|| Error::invalid(format!("glyph class {class} out of range")))?;
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let mut img = vec![vec![0.0; w]; h];
    for (r, row) in img.iter_mut().enumerate() {
        for (c, px) in row.iter_mut().enumerate() {
            let sr = r as i64 - dy;
            let sc = c as i64 - dx;
            if sr < 0 || sc < 0 || sr >= h as i64 || sc >= w as i64 {
                continue;
            }
            // nearest-neighbour sample of the 12x12 template
            let tr = (sr as usize * GLYPH_SIZE) / h;
            let tc = (sc as usize * GLYPH_SIZE) / w;
            if GLYPHS[class][tr].as_bytes()[tc] == b'#' {
                *px = 1.0;
            }
            let _ = template;
        }
    }
    Ok(img)
}

/// Blurs an image with a truncated discrete Gaussian of variance `level`
/// (radius `ceil(3 sqrt(level))`, kernel renormalized, reflect padding).
/// Level 0 returns the input bit-identically.
pub fn blur_image(img: &[Vec<f64>], level: u8) -> Result<Vec<Vec<f64>>> {
    if level > 3 {
        return Err(Error::invalid(format!("blur level {level} out of range 0..=3")));
    }
    let h = img.len();
    if h == 0 || img[0].is_empty() {
        return Err(Error::invalid("empty image"));
    }
    let w = img[0].len();
    if img.iter().any(|row| row.len() != w) {
        return Err(Error::invalid("image is not rectangular"));
    }
    if level == 0 {
        return Ok(img.to_vec());
    }

    let variance = level as f64;
    let radius = (3.0 * variance.sqrt()).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * variance)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }

    // separable convolution: rows, then columns
    let mut rows_done = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let src = reflect(c as i64 + ki as i64 - radius, w);
                acc += kv * img[r][src];
            }
            rows_done[r][c] = acc;
        }
    }
    let mut out = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let src = reflect(r as i64 + ki as i64 - radius, h);
                acc += kv * rows_done[src][c];
            }
            out[r][c] = acc;
        }
    }
    Ok(out)
}

/// Symmetric reflection with edge repetition: -1 -> 0, n -> n-1.
fn reflect(idx: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Label distribution for a given true label and blur level: level 0 is a
/// point mass on the truth; level v > 0 puts `NOISE_MASSES[v]` on four
/// distinct incorrect labels chosen uniformly (seeded) and the rest on the
/// truth.
pub fn label_noise_dist(
    true_label: usize,
    level: u8,
    k: usize,
    seed: u64,
) -> Result<GradeHistogram> {
    let mut rng = crate::util::stream_rng(seed, 0);
    label_noise_dist_with(true_label, level, k, NOISE_MASSES, &mut rng)
}

pub(crate) fn label_noise_dist_with<R: Rng>(
    true_label: usize,
    level: u8,
    k: usize,
    masses: [f64; 4],
    rng: &mut R,
) -> Result<GradeHistogram> {
    if k < 5 {
        return Err(Error::invalid("need k >= 5 to pick four incorrect labels"));
    }
    if true_label >= k {
        return Err(Error::invalid(format!("label {true_label} out of range for k={k}")));
    }
    if level > 3 {
        return Err(Error::invalid(format!("level {level} out of range 0..=3")));
    }
    if level == 0 {
        return GradeHistogram::point_mass(k, true_label);
    }
    let m = masses[level as usize];
    let mut incorrect: Vec<usize> = (0..k).filter(|&l| l != true_label).collect();
    // partial Fisher-Yates: the first four entries are the noisy labels
    for i in 0..4 {
        let j = rng.random_range(i..incorrect.len());
        incorrect.swap(i, j);
    }
    let mut mass = vec![0.0; k];
    mass[true_label] = 1.0 - 4.0 * m;
    for &l in &incorrect[..4] {
        mass[l] = m;
    }
    GradeHistogram::new(mass)
}
