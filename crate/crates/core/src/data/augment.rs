//! Training-time augmentation and per-image normalization.
//!
//! Train mode: zero-pad by [`PAD`] pixels, crop back to the original size at a
//! uniformly drawn offset, mirror horizontally with probability 1/2, then
//! apply global contrast normalization. Eval mode applies the normalization
//! only and never touches the random stream.

use rand::Rng;

use crate::data::manifest::ImageShape;
use crate::error::{Error, Result};

pub const PAD: usize = 4;
pub const FLIP_PROBABILITY: f64 = 0.5;
pub const GCN_EPSILON: f64 = 1e-8;

/// One draw of the stochastic augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    /// Crop origin in the padded image, in `0..=2 * PAD`.
    pub dx: usize,
    pub dy: usize,
    pub flip: bool,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        dx: PAD,
        dy: PAD,
        flip: false,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let dx = rng.random_range(0..=2 * PAD);
        let dy = rng.random_range(0..=2 * PAD);
        let flip = rng.random_bool(FLIP_PROBABILITY);
        AugmentDraw { dx, dy, flip }
    }
}

fn check_shape(image: &[u8], shape: ImageShape) -> Result<()> {
    if image.len() != shape.len() {
        return Err(Error::validation(
            "image",
            format!("{} bytes does not match declared shape {shape}", image.len()),
        ));
    }
    Ok(())
}

/// Translated and mirrored raw intensities.
pub fn apply_draw(image: &[u8], shape: ImageShape, draw: AugmentDraw, out: &mut [f64]) {
    let (h, w) = (shape.height as isize, shape.width as isize);
    let shift_x = draw.dx as isize - PAD as isize;
    let shift_y = draw.dy as isize - PAD as isize;
    for c in 0..shape.channels {
        let plane = &image[c * shape.height * shape.width..(c + 1) * shape.height * shape.width];
        let dst = &mut out[c * shape.height * shape.width..(c + 1) * shape.height * shape.width];
        for y in 0..h {
            let sy = y + shift_y;
            for x in 0..w {
                let cx = if draw.flip { w - 1 - x } else { x };
                let sx = cx + shift_x;
                dst[(y * w + x) as usize] = if sy >= 0 && sy < h && sx >= 0 && sx < w {
                    plane[(sy * w + sx) as usize] as f64
                } else {
                    0.0
                };
            }
        }
    }
}

/// Per-image mean subtraction and division by the per-image standard
/// deviation (floored at [`GCN_EPSILON`]).
pub fn global_contrast_normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / var.sqrt().max(GCN_EPSILON);
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }
}

/// Writes the network input for one image into `out`.
pub fn preprocess_into<R: Rng + ?Sized>(
    image: &[u8],
    shape: ImageShape,
    rng: &mut R,
    train_mode: bool,
    out: &mut [f64],
) -> Result<()> {
    check_shape(image, shape)?;
    if out.len() != shape.len() {
        return Err(Error::validation(
            "output buffer",
            format!("length {} for shape {shape}", out.len()),
        ));
    }
    if train_mode {
        apply_draw(image, shape, AugmentDraw::sample(rng), out);
    } else {
        for (o, &p) in out.iter_mut().zip(image) {
            *o = p as f64;
        }
    }
    global_contrast_normalize(out);
    Ok(())
}

pub fn preprocess_and_augment<R: Rng + ?Sized>(
    image: &[u8],
    shape: ImageShape,
    rng: &mut R,
    train_mode: bool,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; shape.len()];
    preprocess_into(image, shape, rng, train_mode, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    const SMALL: ImageShape = ImageShape {
        channels: 1,
        height: 3,
        width: 3,
    };

    fn gradient_image(shape: ImageShape) -> Vec<u8> {
        (0..shape.len()).map(|i| (i * 37 % 256) as u8).collect()
    }

    #[test]
    fn eval_mode_ignores_the_stream() {
        let img = gradient_image(ImageShape::CIFAR);
        let mut a = stream(1, Stream::Augment);
        let mut b = stream(99, Stream::Augment);
        let x = preprocess_and_augment(&img, ImageShape::CIFAR, &mut a, false).unwrap();
        let y = preprocess_and_augment(&img, ImageShape::CIFAR, &mut b, false).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let img = vec![77u8; ImageShape::CIFAR.len()];
        let mut rng = stream(0, Stream::Augment);
        let x = preprocess_and_augment(&img, ImageShape::CIFAR, &mut rng, false).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_image_has_zero_mean_unit_variance() {
        let img = gradient_image(ImageShape::CIFAR);
        let mut rng = stream(0, Stream::Augment);
        let x = preprocess_and_augment(&img, ImageShape::CIFAR, &mut rng, false).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn train_mode_is_reproducible_per_seed() {
        let img = gradient_image(ImageShape::CIFAR);
        let run = |seed| {
            let mut rng = stream(seed, Stream::Augment);
            (0..5)
                .map(|_| preprocess_and_augment(&img, ImageShape::CIFAR, &mut rng, true).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let mut rng = stream(0, Stream::Augment);
        assert!(preprocess_and_augment(&[0u8; 10], SMALL, &mut rng, true).is_err());
    }

    #[test]
    fn translation_and_flip_move_pixels() {
        let img: Vec<u8> = (1..=9).collect();
        let mut out = vec![0.0; 9];
        apply_draw(&img, SMALL, AugmentDraw::IDENTITY, &mut out);
        assert_eq!(out, (1..=9).map(f64::from).collect::<Vec<_>>());

        // shift content one pixel right: crop origin one left of center
        let draw = AugmentDraw {
            dx: PAD - 1,
            dy: PAD,
            flip: false,
        };
        apply_draw(&img, SMALL, draw, &mut out);
        assert_eq!(out, vec![0., 1., 2., 0., 4., 5., 0., 7., 8.]);

        let flip = AugmentDraw {
            flip: true,
            ..AugmentDraw::IDENTITY
        };
        apply_draw(&img, SMALL, flip, &mut out);
        assert_eq!(out, vec![3., 2., 1., 6., 5., 4., 9., 8., 7.]);

        let far = AugmentDraw {
            dx: 2 * PAD,
            dy: 2 * PAD,
            flip: false,
        };
        apply_draw(&img, SMALL, far, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn draw_distribution_matches_recipe() {
        let mut rng = stream(2024, Stream::Augment);
        let draws = 20_000usize;
        let mut flips = 0usize;
        let mut grid = [[0usize; 2 * PAD + 1]; 2 * PAD + 1];
        for _ in 0..draws {
            let d = AugmentDraw::sample(&mut rng);
            flips += d.flip as usize;
            grid[d.dy][d.dx] += 1;
        }
        let rate = flips as f64 / draws as f64;
        assert!((rate - 0.5).abs() <= 0.02, "flip rate {rate}");

        let cells = ((2 * PAD + 1) * (2 * PAD + 1)) as f64;
        let p = 1.0 / cells;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for row in grid {
            for count in row {
                assert!(
                    (count as f64 - expected).abs() <= 3.0 * sigma,
                    "offset cell count {count} vs expected {expected}"
                );
            }
        }
    }
}
