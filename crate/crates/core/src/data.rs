//! Paired-dataset IO plus a seeded synthetic generator: procedurally drawn
//! salient shapes on gradient backgrounds, degraded by a simple underwater
//! model (channelwise attenuation, backscatter, blur, noise).

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::gaussian_kernel;
use crate::params::derive_seed;
use crate::tensor::{Image, SaliencyMask, Tensor};

/// One aligned (degraded input, clean reference, binary mask) triple.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub input: Image,
    pub gt_image: Image,
    pub gt_mask: SaliencyMask,
}

/// Channelwise degradation parameters.
#[derive(Clone, Copy, Debug)]
pub struct DegradeParams {
    /// Attenuation per channel, in (0, 1].
    pub t: [f64; 3],
    /// Backscatter per channel, in [0, 1).
    pub b: [f64; 3],
    /// Gaussian blur sigma (0 disables blur).
    pub blur_sigma: f64,
    /// Gaussian noise standard deviation (0 disables noise).
    pub noise_std: f64,
    /// Seed for the noise stream.
    pub seed: u64,
}

/// Separable Gaussian blur with edge replication. Sigma 0 is the identity.
fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let taps = gaussian_kernel(2 * radius + 1, sigma);
    let (c, h, w) = img.dims3();
    let src = img.data();
    let mut mid = vec![0.0; c * h * w];
    for ch in 0..c {
        for r in 0..h {
            let row = ch * h * w + r * w;
            for x in 0..w {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let xi = (x + i).saturating_sub(radius).min(w - 1);
                    acc += t * src[row + xi];
                }
                mid[row + x] = acc;
            }
        }
    }
    let mut out = Tensor::zeros(img.shape());
    let dst = out.data_mut();
    for ch in 0..c {
        for r in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let ri = (r + i).saturating_sub(radius).min(h - 1);
                    acc += t * mid[ch * h * w + ri * w + x];
                }
                dst[ch * h * w + r * w + x] = acc;
            }
        }
    }
    out
}

/// Standard normal draw (Box-Muller), deterministic for a given generator
/// state.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Applies the degradation model:
/// clamp(blur(clean) * t + b * (1 - t) + noise, 0, 1) per channel.
pub fn synth_degrade(clean: &Image, params: &DegradeParams) -> Image {
    let blurred = gaussian_blur(clean, params.blur_sigma);
    let (_, h, w) = clean.dims3();
    let plane = h * w;
    let mut out = Tensor::zeros(clean.shape());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let src = blurred.data();
    let dst = out.data_mut();
    for c in 0..3 {
        let t = params.t[c];
        let b = params.b[c];
        for p in 0..plane {
            let noise = if params.noise_std > 0.0 {
                params.noise_std * normal(&mut rng)
            } else {
                0.0
            };
            dst[c * plane + p] = (src[c * plane + p] * t + b * (1.0 - t) + noise).clamp(0.0, 1.0);
        }
    }
    out
}

/// Pixel-center membership test for a rotated ellipse.
struct EllipseShape {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos_t: f64,
    sin_t: f64,
}

impl EllipseShape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos_t + dy * self.sin_t;
        let v = -dx * self.sin_t + dy * self.cos_t;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// Even-odd ray-casting membership for a simple polygon.
struct PolygonShape {
    pts: Vec<(f64, f64)>,
}

impl PolygonShape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.pts.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.pts[i];
            let (xj, yj) = self.pts[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

enum Shape {
    Ellipse(EllipseShape),
    Polygon(PolygonShape),
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse(e) => e.contains(x, y),
            Shape::Polygon(p) => p.contains(x, y),
        }
    }
}

fn draw_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    if rng.gen_bool(0.5) {
        Shape::Ellipse(EllipseShape {
            cx: rng.gen_range(0.25..0.75) * size,
            cy: rng.gen_range(0.25..0.75) * size,
            rx: rng.gen_range(0.12..0.45) * size,
            ry: rng.gen_range(0.12..0.45) * size,
            cos_t: 0.0,
            sin_t: 0.0,
        }
        .with_rotation(rng.gen_range(0.0..std::f64::consts::PI)))
    } else {
        let k = rng.gen_range(3..=6);
        let cx = rng.gen_range(0.3..0.7) * size;
        let cy = rng.gen_range(0.3..0.7) * size;
        let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pts = angles
            .iter()
            .map(|a| {
                let r = rng.gen_range(0.15..0.45) * size;
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        Shape::Polygon(PolygonShape { pts })
    }
}

impl EllipseShape {
    fn with_rotation(mut self, theta: f64) -> Self {
        self.cos_t = theta.cos();
        self.sin_t = theta.sin();
        self
    }
}

/// Generates `n` aligned samples of `size` x `size` pixels. Foreground area
/// is kept within 5-60% of the frame (rejection resampling) so saliency
/// metrics stay non-degenerate. Fully deterministic in `seed`.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    assert!(size >= 8, "synthetic samples need size >= 8");
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let sf = size as f64;

        // Background: diagonal gradient between two random colors.
        let c1: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let c2: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        // Foreground color kept away from the background average so the
        // salient object is actually salient.
        let bg_avg: Vec<f64> = (0..3).map(|c| 0.5 * (c1[c] + c2[c])).collect();
        let cf: [f64; 3] = loop {
            let cand: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let dist: f64 = (0..3).map(|c| (cand[c] - bg_avg[c]).abs()).sum();
            if dist >= 0.6 {
                break cand;
            }
        };

        // Shape with area in bounds; redraw on rejection.
        let mask = loop {
            let shape = draw_shape(&mut rng, sf);
            let mut mask = Tensor::zeros(&[1, size, size]);
            let mut area = 0usize;
            for y in 0..size {
                for x in 0..size {
                    if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        mask.data_mut()[y * size + x] = 1.0;
                        area += 1;
                    }
                }
            }
            let frac = area as f64 / (size * size) as f64;
            if (0.05..=0.60).contains(&frac) {
                break mask;
            }
        };

        let mut gt_image = Tensor::zeros(&[3, size, size]);
        let plane = size * size;
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 / (sf - 1.0) + y as f64 / (sf - 1.0)) / 2.0;
                let fg = mask.data()[y * size + x] > 0.5;
                for c in 0..3 {
                    let v = if fg { cf[c] } else { c1[c] * (1.0 - u) + c2[c] * u };
                    gt_image.data_mut()[c * plane + y * size + x] = v;
                }
            }
        }

        let params = DegradeParams {
            t: [
                rng.gen_range(0.5..0.95),
                rng.gen_range(0.5..0.95),
                rng.gen_range(0.5..0.95),
            ],
            b: [
                rng.gen_range(0.05..0.45),
                rng.gen_range(0.05..0.45),
                rng.gen_range(0.05..0.45),
            ],
            blur_sigma: rng.gen_range(0.0..1.2),
            noise_std: rng.gen_range(0.0..0.02),
            seed: derive_seed(seed, (i as u64) | (1 << 32)),
        };
        let input = synth_degrade(&gt_image, &params);

        samples.push(Sample {
            id: format!("synth_{i:04}"),
            input,
            gt_image,
            gt_mask: mask,
        });
    }
    samples
}

/// Loads an 8-bit RGB PNG into a unit-range [3,H,W] tensor.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::decode(path, e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut out = Tensor::zeros(&[3, h, w]);
    let data = out.data_mut();
    for (y, row) in rgb.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                data[c * h * w + y * w + x] = px.0[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Loads an 8-bit grayscale PNG as a mask, binarized at 0.5.
pub fn load_mask(path: &Path) -> Result<SaliencyMask> {
    let img = image::open(path).map_err(|e| Error::decode(path, e.to_string()))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut out = Tensor::zeros(&[1, h, w]);
    let data = out.data_mut();
    for (y, row) in gray.rows().enumerate() {
        for (x, px) in row.enumerate() {
            data[y * w + x] = if px.0[0] as f64 / 255.0 >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a [3,H,W] tensor as an 8-bit RGB PNG.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let (c, h, w) = img.dims3();
    if c != 3 {
        return Err(Error::shape("save_image", "[3,H,W]", format!("[{c},{h},{w}]")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_byte(img.data()[y * w + x]),
                to_byte(img.data()[h * w + y * w + x]),
                to_byte(img.data()[2 * h * w + y * w + x]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::decode(path, format!("encode: {e}")))
}

/// Writes a [1,H,W] tensor as an 8-bit grayscale PNG.
pub fn save_mask(path: &Path, mask: &SaliencyMask) -> Result<()> {
    let (c, h, w) = mask.dims3();
    if c != 1 {
        return Err(Error::shape("save_mask", "[1,H,W]", format!("[{c},{h},{w}]")));
    }
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([to_byte(mask.data()[y * w + x])]));
        }
    }
    buf.save(path).map_err(|e| Error::decode(path, format!("encode: {e}")))
}

/// Writes samples in the on-disk layout `root/{input,gt,mask}/<id>.png`.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["input", "gt", "mask"] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
    }
    for s in samples {
        let file = format!("{}.png", s.id);
        save_image(&root.join("input").join(&file), &s.input)?;
        save_image(&root.join("gt").join(&file), &s.gt_image)?;
        save_mask(&root.join("mask").join(&file), &s.gt_mask)?;
    }
    Ok(())
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

/// Loads the `root/{input,gt,mask}` layout, sorted by filename. Masks are
/// binarized at 0.5. A filename present in one folder but not another is a
/// MissingPair error.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let folders = ["input", "gt", "mask"];
    let stems: Vec<BTreeSet<String>> = folders
        .iter()
        .map(|f| png_stems(&root.join(f)))
        .collect::<Result<_>>()?;
    let all: BTreeSet<String> = stems.iter().flatten().cloned().collect();
    for id in &all {
        for (i, set) in stems.iter().enumerate() {
            if !set.contains(id) {
                let present = folders[stems.iter().position(|s| s.contains(id)).unwrap()];
                return Err(Error::MissingPair {
                    id: id.clone(),
                    present_in: present.to_string(),
                    missing_in: folders[i].to_string(),
                });
            }
        }
    }
    let mut samples = Vec::with_capacity(all.len());
    for id in all {
        let file = format!("{id}.png");
        let input = load_image(&root.join("input").join(&file))?;
        let gt_image = load_image(&root.join("gt").join(&file))?;
        let gt_mask = load_mask(&root.join("mask").join(&file))?;
        if input.shape() != gt_image.shape() {
            return Err(Error::shape(
                format!("load_dataset {id}"),
                format!("{:?}", input.shape()),
                format!("{:?}", gt_image.shape()),
            ));
        }
        let (_, h, w) = input.dims3();
        if gt_mask.dims3() != (1, h, w) {
            return Err(Error::shape(
                format!("load_dataset {id}"),
                format!("[1,{h},{w}]"),
                format!("{:?}", gt_mask.shape()),
            ));
        }
        samples.push(Sample {
            id,
            input,
            gt_image,
            gt_mask,
        });
    }
    Ok(samples)
}

fn crop(t: &Tensor, y0: usize, x0: usize, ph: usize, pw: usize) -> Tensor {
    let (c, h, w) = t.dims3();
    debug_assert!(y0 + ph <= h && x0 + pw <= w);
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for y in 0..ph {
            let src = ch * h * w + (y0 + y) * w + x0;
            let dst = ch * ph * pw + y * pw;
            out.data_mut()[dst..dst + pw].copy_from_slice(&t.data()[src..src + pw]);
        }
    }
    out
}

fn hflip(t: &Tensor) -> Tensor {
    let (c, h, w) = t.dims3();
    let mut out = Tensor::zeros(t.shape());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[ch * h * w + y * w + x] = t.data()[ch * h * w + y * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Random aligned crop plus a probability-0.5 horizontal flip, identical
/// across the triple. Deterministic in `seed`.
pub fn patchify(sample: &Sample, patch: usize, seed: u64) -> Result<Sample> {
    let (_, h, w) = sample.input.dims3();
    if patch > h || patch > w {
        return Err(Error::PatchTooLarge { patch, h, w });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = rng.gen_range(0..=h - patch);
    let x0 = rng.gen_range(0..=w - patch);
    let flip = rng.gen_bool(0.5);
    let apply = |t: &Tensor| {
        let c = crop(t, y0, x0, patch, patch);
        if flip {
            hflip(&c)
        } else {
            c
        }
    };
    Ok(Sample {
        id: sample.id.clone(),
        input: apply(&sample.input),
        gt_image: apply(&sample.gt_image),
        gt_mask: apply(&sample.gt_mask),
    })
}
