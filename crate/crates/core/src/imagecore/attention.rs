use super::{clamp_unit, AttentionMap, Image};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-pixel agreement between an ambient and a flash image:
/// `1 - mean_k |ambient(i,j,k) - flash(i,j,k)|`.
///
/// Values are clamped to `[0, 1]`, which is a no-op for valid images.
pub fn attention_map<T: Scalar>(ambient: &Image<T>, flash: &Image<T>) -> Result<AttentionMap<T>> {
    if ambient.dims() != flash.dims() {
        return Err(Error::InvalidPair(format!("ambient is {:?} but flash is {:?}", ambient.dims(), flash.dims())));
    }
    check_range(ambient)?;
    check_range(flash)?;
    let c = ambient.channels();
    let inv_c = T::one() / T::lit(c as f64);
    let data = ambient
        .as_slice()
        .chunks_exact(c)
        .zip(flash.as_slice().chunks_exact(c))
        .map(|(a, f)| {
            let diff: T = a.iter().zip(f).map(|(&x, &y)| (x - y).abs()).sum();
            clamp_unit(T::one() - diff * inv_c)
        })
        .collect();
    Ok(AttentionMap::from_raw(ambient.height(), ambient.width(), data))
}

/// Multiplies every channel of `img` by the attention weight of its pixel.
pub fn apply_attention<T: Scalar>(img: &Image<T>, map: &AttentionMap<T>) -> Result<Image<T>> {
    if img.height() != map.height() || img.width() != map.width() {
        return Err(Error::InvalidPair(format!(
            "image is {}x{} but attention map is {}x{}",
            img.height(),
            img.width(),
            map.height(),
            map.width()
        )));
    }
    let c = img.channels();
    let mut data = Vec::with_capacity(img.as_slice().len());
    for (px, &m) in img.as_slice().chunks_exact(c).zip(map.as_slice()) {
        data.extend(px.iter().map(|&v| v * m));
    }
    Ok(Image::from_raw(img.height(), img.width(), c, data))
}

// Images built through the public constructors are always in range; this
// guards values produced by crate-internal arithmetic.
fn check_range<T: Scalar>(img: &Image<T>) -> Result<()> {
    match img.as_slice().iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
        Some(index) => Err(Error::Range { index, value: img.as_slice()[index].as_f64() }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct transcription of the per-pixel formula with explicit loops.
    fn oracle(a: &Image<f64>, f: &Image<f64>) -> Vec<f64> {
        let (h, w, c) = a.dims();
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for k in 0..c {
                    s += (a.get(i, j, k) - f.get(i, j, k)).abs();
                }
                out[i * w + j] = 1.0 - s / c as f64;
            }
        }
        out
    }

    fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = Image<f64>> {
        proptest::collection::vec(0.0f64..=1.0, h * w * c).prop_map(move |d| Image::new(h, w, c, d).unwrap())
    }

    #[test]
    fn identical_images_give_ones() {
        let img = Image::<f64>::from_fn(4, 5, 3, |i, j, k| ((i + 2 * j + 3 * k) % 7) as f64 / 7.0);
        let m = attention_map(&img, &img).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn maximal_difference_gives_zeros() {
        let a = Image::<f64>::filled(3, 3, 3, 1.0);
        let f = Image::<f64>::filled(3, 3, 3, 0.0);
        let m = attention_map(&a, &f).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_value() {
        let a = Image::new(1, 1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        let f = Image::new(1, 1, 3, vec![0.2, 0.6, 0.9]).unwrap();
        let m = attention_map(&a, &f).unwrap();
        assert!((m.get(0, 0) - oracle(&a, &f)[0]).abs() < 1e-12);
        assert!((m.get(0, 0) - 0.733333).abs() < 1e-6);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = Image::<f64>::filled(2, 2, 3, 0.5);
        let f = Image::<f64>::filled(2, 3, 3, 0.5);
        assert!(matches!(attention_map(&a, &f), Err(Error::InvalidPair(_))));
        let m = AttentionMap::<f64>::ones(2, 3);
        assert!(matches!(apply_attention(&a, &m), Err(Error::InvalidPair(_))));
    }

    #[test]
    fn masking_examples() {
        let img = Image::new(1, 1, 3, vec![0.8, 0.4, 0.2]).unwrap();
        let half = AttentionMap::new(1, 1, vec![0.5]).unwrap();
        let out = apply_attention(&img, &half).unwrap();
        for (x, y) in out.as_slice().iter().zip([0.4f64, 0.2, 0.1]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(apply_attention(&img, &AttentionMap::ones(1, 1)).unwrap(), img);
        let zero = AttentionMap::new(1, 1, vec![0.0]).unwrap();
        assert!(apply_attention(&img, &zero).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn matches_oracle_and_is_symmetric((a, f) in (image(4, 6, 3), image(4, 6, 3))) {
            let m = attention_map(&a, &f).unwrap();
            let swapped = attention_map(&f, &a).unwrap();
            for ((&x, &y), z) in m.as_slice().iter().zip(swapped.as_slice()).zip(oracle(&a, &f)) {
                prop_assert!((x - z).abs() < 1e-12);
                prop_assert_eq!(x, y);
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn self_attention_is_ones(a in image(3, 5, 2)) {
            let m = attention_map(&a, &a).unwrap();
            prop_assert!(m.as_slice().iter().all(|&v| v == 1.0));
        }

        #[test]
        fn masking_is_linear_in_the_image(
            (a, f) in (image(3, 4, 3), image(3, 4, 3)),
            alpha in 0.0f64..=1.0,
        ) {
            let m = attention_map(&a, &f).unwrap();
            let scaled = Image::new(3, 4, 3, a.as_slice().iter().map(|v| v * alpha).collect()).unwrap();
            let lhs = apply_attention(&scaled, &m).unwrap();
            let rhs = apply_attention(&a, &m).unwrap();
            for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((x - alpha * y).abs() < 1e-12);
            }
        }
    }
}
