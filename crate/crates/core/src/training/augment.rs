use rand::Rng;

use crate::image::GrayImage;

/// Rotates by `quarters * 90` degrees counter-clockwise.
pub fn rotate90(img: &GrayImage, quarters: u8) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    match quarters % 4 {
        0 => img.clone(),
        // new(x, y) = old(w - 1 - y, x)
        1 => GrayImage::from_fn(h, w, |x, y| img.get(w - 1 - y, x)),
        2 => GrayImage::from_fn(w, h, |x, y| img.get(w - 1 - x, h - 1 - y)),
        _ => GrayImage::from_fn(h, w, |x, y| img.get(y, h - 1 - x)),
    }
}

pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let w = img.width();
    GrayImage::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y))
}

/// Deterministic form of [`augment`].
pub fn augment_with(img: &GrayImage, quarters: u8, flip: bool) -> GrayImage {
    let r = rotate90(img, quarters);
    if flip {
        flip_horizontal(&r)
    } else {
        r
    }
}

/// Random rotation from {0, 90, 180, 270} degrees, then a horizontal flip
/// with probability 1/2.
pub fn augment(img: &GrayImage, rng: &mut impl Rng) -> GrayImage {
    let quarters = rng.gen_range(0..4u8);
    let flip = rng.gen_bool(0.5);
    augment_with(img, quarters, flip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> GrayImage {
        GrayImage::from_fn(5, 5, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0)
    }

    fn sorted(img: &GrayImage) -> Vec<f64> {
        let mut v = img.data().to_vec();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn histogram_preserved() {
        let img = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sorted(&augment(&img, &mut rng)), sorted(&img));
        }
    }

    #[test]
    fn half_turn_twice_is_identity() {
        let img = sample();
        assert_eq!(rotate90(&rotate90(&img, 2), 2), img);
        assert_eq!(rotate90(&rotate90(&img, 1), 3), img);
        assert_ne!(rotate90(&img, 1), img);
    }

    #[test]
    fn no_op_draw_returns_input() {
        assert_eq!(augment_with(&sample(), 0, false), sample());
    }

    #[test]
    fn quarter_turn_moves_corner() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 10 * y) as f64);
        let r = rotate90(&img, 1);
        assert_eq!((r.width(), r.height()), (2, 3));
        // top-right corner goes to top-left
        assert_eq!(r.get(0, 0), img.get(2, 0));
    }
}
