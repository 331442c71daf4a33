//! Synthetic cross-view pair generation and CVOGL-style annotation files.
//!
//! A reference scene holds a handful of vividly colored shapes on a muted
//! textured background; one shape is the target. The query view is a crop
//! around the target with optional mirroring and photometric jitter, and the
//! click marks the target center (plus bounded noise) in query coordinates.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::GtBox;
use crate::error::{Error, Result};
use crate::gpe::ClickPoint;
use crate::pixmap::{read_ppm, write_ppm, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Reference image size (height, width).
    pub reference_size: (usize, usize),
    /// Query image size (height, width).
    pub query_size: (usize, usize),
    /// Inclusive range for the number of shapes per scene.
    pub num_shapes: (usize, usize),
    /// Inclusive range for the target's side lengths, in reference pixels.
    pub target_size: (f64, f64),
    /// Photometric gain/bias amplitude applied to the query view.
    pub jitter: f64,
    /// Click noise radius as a fraction of the larger target side.
    pub click_noise: f64,
    /// Probability of mirroring the query view horizontally.
    pub flip_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            reference_size: (64, 64),
            query_size: (32, 32),
            num_shapes: (3, 5),
            target_size: (10.0, 28.0),
            jitter: 0.15,
            click_noise: 0.1,
            flip_prob: 0.5,
        }
    }
}

/// One training/evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoSample {
    pub sample_id: String,
    pub query: Image,
    /// Click in query-image pixels (row = y, col = x).
    pub click: ClickPoint,
    pub reference: Image,
    /// Target bounds in reference-image pixels.
    pub gt_box: GtBox,
}

const PLACE_ATTEMPTS: usize = 64;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Clone, Copy)]
struct Shape {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    color: [f64; 3],
    ellipse: bool,
}

impl Shape {
    fn covers(&self, px: f64, py: f64) -> bool {
        let dx = px - self.cx;
        let dy = py - self.cy;
        if self.ellipse {
            let nx = dx / self.half_w;
            let ny = dy / self.half_h;
            nx * nx + ny * ny <= 1.0
        } else {
            dx.abs() <= self.half_w && dy.abs() <= self.half_h
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.half_w,
            self.cy - self.half_h,
            self.cx + self.half_w,
            self.cy + self.half_h,
        )
    }
}

fn draw_shape(img: &mut Image, shape: &Shape) {
    let (x0, y0, x1, y1) = shape.bounds();
    let xa = x0.floor().max(0.0) as usize;
    let ya = y0.floor().max(0.0) as usize;
    let xb = (x1.ceil() as usize).min(img.width);
    let yb = (y1.ceil() as usize).min(img.height);
    for y in ya..yb {
        for x in xa..xb {
            if shape.covers(x as f64 + 0.5, y as f64 + 0.5) {
                for c in 0..3 {
                    img.set(c, y, x, shape.color[c] as f32);
                }
            }
        }
    }
}

/// Produce the sample at `index`; a pure function of `(cfg.seed, index)`.
pub fn generate(cfg: &SynthConfig, index: u64) -> Result<GeoSample> {
    let (rh, rw) = cfg.reference_size;
    let (qh, qw) = cfg.query_size;
    if qh > rh || qw > rw {
        return Err(Error::Config(format!(
            "query size {qh}x{qw} exceeds reference size {rh}x{rw}"
        )));
    }
    if cfg.target_size.0 > cfg.target_size.1 || cfg.target_size.0 <= 1.0 {
        return Err(Error::Config(format!(
            "bad target size range {:?}",
            cfg.target_size
        )));
    }
    if cfg.num_shapes.0 == 0 || cfg.num_shapes.0 > cfg.num_shapes.1 {
        return Err(Error::Config(format!(
            "bad shape count range {:?}",
            cfg.num_shapes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    // Muted textured background.
    let mut reference = Image::new(3, rh, rw);
    let base: [f64; 3] = [
        rng.random_range(0.25..0.55),
        rng.random_range(0.25..0.55),
        rng.random_range(0.25..0.55),
    ];
    let grad: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.12..0.12));
    for y in 0..rh {
        for x in 0..rw {
            let fy = y as f64 / rh as f64;
            let fx = x as f64 / rw as f64;
            for c in 0..3 {
                let v = base[c]
                    + grad[2 * c] * fx
                    + grad[2 * c + 1] * fy
                    + rng.random_range(-0.04..0.04);
                reference.set(c, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }

    // Distinct vivid hues, evenly spaced with a random phase.
    let n_shapes = rng.random_range(cfg.num_shapes.0..=cfg.num_shapes.1);
    let hue_phase: f64 = rng.random_range(0.0..1.0);
    let colors: Vec<[f64; 3]> = (0..n_shapes)
        .map(|i| {
            hsv_to_rgb(
                hue_phase + i as f64 / n_shapes as f64,
                rng.random_range(0.8..1.0),
                rng.random_range(0.8..1.0),
            )
        })
        .collect();

    let place = |rng: &mut ChaCha8Rng, color: [f64; 3]| -> Result<Shape> {
        for _ in 0..PLACE_ATTEMPTS {
            let w: f64 = rng.random_range(cfg.target_size.0..=cfg.target_size.1);
            let h: f64 = rng.random_range(cfg.target_size.0..=cfg.target_size.1);
            let (half_w, half_h) = (w / 2.0, h / 2.0);
            if w >= rw as f64 || h >= rh as f64 {
                continue;
            }
            let cx = rng.random_range(half_w..rw as f64 - half_w);
            let cy = rng.random_range(half_h..rh as f64 - half_h);
            return Ok(Shape {
                cx,
                cy,
                half_w,
                half_h,
                color,
                ellipse: rng.random_bool(0.5),
            });
        }
        Err(Error::Unplaceable {
            attempts: PLACE_ATTEMPTS,
        })
    };

    // Distractors first; the target is drawn last so it is never occluded.
    let mut shapes = Vec::with_capacity(n_shapes);
    for color in colors.iter().take(n_shapes - 1) {
        shapes.push(place(&mut rng, *color)?);
    }
    let target = place(&mut rng, colors[n_shapes - 1])?;
    for shape in &shapes {
        draw_shape(&mut reference, shape);
    }
    draw_shape(&mut reference, &target);
    let (bx0, by0, bx1, by1) = target.bounds();
    let gt_box = GtBox::new(bx0, by0, bx1, by1)?;

    // Query window: centered near the target with a bounded offset, clamped
    // into bounds, always containing the whole target box.
    let max_ox = (qw as f64 / 2.0 - target.half_w - 1.0).max(0.0);
    let max_oy = (qh as f64 / 2.0 - target.half_h - 1.0).max(0.0);
    let ox = rng.random_range(-max_ox..=max_ox) * 0.5;
    let oy = rng.random_range(-max_oy..=max_oy) * 0.5;
    let wx0 =
        ((target.cx - qw as f64 / 2.0 + ox).round() as i64).clamp(0, (rw - qw) as i64) as usize;
    let wy0 =
        ((target.cy - qh as f64 / 2.0 + oy).round() as i64).clamp(0, (rh - qh) as i64) as usize;

    let flip = rng.random_bool(cfg.flip_prob);
    let gain: [f64; 3] = std::array::from_fn(|_| 1.0 + rng.random_range(-cfg.jitter..=cfg.jitter));
    let bias: [f64; 3] =
        std::array::from_fn(|_| rng.random_range(-cfg.jitter / 2.0..=cfg.jitter / 2.0));
    let mut query = Image::new(3, qh, qw);
    for y in 0..qh {
        for x in 0..qw {
            let sx = if flip { qw - 1 - x } else { x };
            for c in 0..3 {
                let v = f64::from(reference.get(c, wy0 + y, wx0 + sx));
                query.set(c, y, x, (v * gain[c] + bias[c]).clamp(0.0, 1.0) as f32);
            }
        }
    }

    // Click: target center in query coordinates, plus noise bounded by a
    // disk of radius click_noise * max(target side).
    let mut col = target.cx - wx0 as f64;
    let row = target.cy - wy0 as f64;
    if flip {
        col = qw as f64 - col;
    }
    let radius = cfg.click_noise * (2.0 * target.half_w).max(2.0 * target.half_h);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dist: f64 = rng.random_range(0.0..=radius);
    let click = ClickPoint {
        row: (row + dist * angle.sin()).clamp(0.0, qh as f64 - 1e-3),
        col: (col + dist * angle.cos()).clamp(0.0, qw as f64 - 1e-3),
    };

    Ok(GeoSample {
        sample_id: format!("{:08x}-{index:06}", cfg.seed),
        query,
        click,
        reference,
        gt_box,
    })
}

/// Generate `count` consecutive samples starting at `start`, splitting the
/// work over up to `threads` workers. Output order matches the index order
/// regardless of thread count (generation is pure per index).
pub fn generate_batch(
    cfg: &SynthConfig,
    start: u64,
    count: usize,
    threads: usize,
) -> Result<Vec<GeoSample>> {
    let threads = threads.max(1).min(count.max(1));
    if threads == 1 {
        return (0..count as u64)
            .map(|i| generate(cfg, start + i))
            .collect();
    }
    let chunk = count.div_ceil(threads);
    let mut results: Vec<Result<Vec<GeoSample>>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            let lo = t * chunk;
            let hi = ((t + 1) * chunk).min(count);
            if lo >= hi {
                break;
            }
            let cfg = cfg.clone();
            handles.push(scope.spawn(move || {
                (lo as u64..hi as u64)
                    .map(|i| generate(&cfg, start + i))
                    .collect::<Result<Vec<_>>>()
            }));
        }
        for handle in handles {
            results.push(handle.join().expect("generator worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(count);
    for part in results {
        out.extend(part?);
    }
    Ok(out)
}

/// One line of the JSONL annotation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub query_path: String,
    pub reference_path: String,
    pub click_x: f64,
    pub click_y: f64,
    pub box_x_min: f64,
    pub box_y_min: f64,
    pub box_x_max: f64,
    pub box_y_max: f64,
}

/// Write images and an `annotations.jsonl` manifest under `dir`.
pub fn write_dataset(samples: &[GeoSample], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest_path = dir.join("annotations.jsonl");
    let file = std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    for sample in samples {
        let query_rel = format!("images/{}_query.ppm", sample.sample_id);
        let reference_rel = format!("images/{}_ref.ppm", sample.sample_id);
        write_ppm(&sample.query, &dir.join(&query_rel))?;
        write_ppm(&sample.reference, &dir.join(&reference_rel))?;
        let record = AnnotationRecord {
            sample_id: sample.sample_id.clone(),
            query_path: query_rel,
            reference_path: reference_rel,
            click_x: sample.click.col,
            click_y: sample.click.row,
            box_x_min: sample.gt_box.x_min,
            box_y_min: sample.gt_box.y_min,
            box_x_max: sample.gt_box.x_max,
            box_y_max: sample.gt_box.y_max,
        };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest
            .write_all(b"\n")
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))
}

/// Parse a JSONL manifest; image decoding is deferred to [`load_samples`].
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| Error::BadAnnotation {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Load a manifest plus its images, validating clicks and boxes against the
/// actual image extents.
pub fn load_samples(manifest: &Path) -> Result<Vec<GeoSample>> {
    let records = load_annotations(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(records.len());
    for record in records {
        let query = read_ppm(&base.join(&record.query_path))?;
        let reference = read_ppm(&base.join(&record.reference_path))?;
        let bad = |reason: String| Error::BadSample {
            sample_id: record.sample_id.clone(),
            reason,
        };
        if record.click_x < 0.0
            || record.click_y < 0.0
            || record.click_x >= query.width as f64
            || record.click_y >= query.height as f64
        {
            return Err(bad(format!(
                "click ({}, {}) outside the {}x{} query image",
                record.click_x, record.click_y, query.height, query.width
            )));
        }
        let gt_box = GtBox::new(
            record.box_x_min,
            record.box_y_min,
            record.box_x_max,
            record.box_y_max,
        )?;
        if gt_box.x_min < 0.0
            || gt_box.y_min < 0.0
            || gt_box.x_max > reference.width as f64
            || gt_box.y_max > reference.height as f64
        {
            return Err(bad(format!(
                "box [{:.2},{:.2},{:.2},{:.2}] outside the {}x{} reference image",
                gt_box.x_min,
                gt_box.y_min,
                gt_box.x_max,
                gt_box.y_max,
                reference.height,
                reference.width
            )));
        }
        samples.push(GeoSample {
            sample_id: record.sample_id,
            click: ClickPoint {
                row: record.click_y,
                col: record.click_x,
            },
            query,
            reference,
            gt_box,
        });
    }
    Ok(samples)
}
