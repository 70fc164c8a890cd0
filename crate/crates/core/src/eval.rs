//! Held-out evaluation: bicubic LR, model super-resolution, Y-channel
//! PSNR and SSIM against the original.

use crate::data::{bicubic_resize, ImageU8, ResizeFilter};
use crate::metrics::{fmt_sig9, psnr, rgb_to_y, ssim, MetricsError};
use crate::nn::{Model, NnError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("image {id} ({h}×{w}) is too small for scale {scale}")]
    TooSmall { id: String, h: usize, w: usize, scale: usize },
    #[error("no images to evaluate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub crop: usize,
    pub images: Vec<ImageScore>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|s| s.psnr).sum::<f64>() / self.images.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|s| s.ssim).sum::<f64>() / self.images.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr,ssim\n");
        for s in &self.images {
            out += &format!("{},{},{}\n", s.id, fmt_sig9(s.psnr), fmt_sig9(s.ssim));
        }
        out += &format!("mean,{},{}\n", fmt_sig9(self.mean_psnr()), fmt_sig9(self.mean_ssim()));
        out
    }
}

/// Super-resolve one LR image and quantize the result to 8 bits.
pub fn super_resolve<T: Scalar>(model: &Model<T>, lr: &ImageU8) -> Result<ImageU8, EvalError> {
    let x: Tensor<T> = lr.to_tensor().cast::<T>().reshape(&[1, 3, lr.h, lr.w]).map_err(NnError::from)?;
    let y = model.forward(&x)?;
    let (h, w) = (y.shape()[2], y.shape()[3]);
    let out = y.cast::<f32>().reshape(&[3, h, w]).map_err(NnError::from)?;
    Ok(ImageU8::from_tensor(&out).expect("3×H×W output"))
}

/// HR images are trimmed to a multiple of the scale, downscaled with
/// `filter`, super-resolved, and scored on Y with `crop` border pixels
/// removed.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    images: &[(String, ImageU8)],
    crop: usize,
    filter: ResizeFilter,
) -> Result<EvalReport, EvalError> {
    if images.is_empty() {
        return Err(EvalError::Empty);
    }
    let s = model.config.scale;
    let mut scores = Vec::with_capacity(images.len());
    for (id, img) in images {
        let (h, w) = (img.h / s * s, img.w / s * s);
        if h == 0 || w == 0 {
            return Err(EvalError::TooSmall {
                id: id.clone(),
                h: img.h,
                w: img.w,
                scale: s,
            });
        }
        let hr = img.crop(0, 0, h, w);
        let lr = bicubic_resize(&hr, h / s, w / s, filter);
        let sr = super_resolve(model, &lr)?;
        scores.push(score(id, &sr, &hr, crop)?);
    }
    Ok(EvalReport { crop, images: scores })
}

pub fn score(id: &str, sr: &ImageU8, hr: &ImageU8, crop: usize) -> Result<ImageScore, EvalError> {
    let (ys, yh) = (rgb_to_y(sr), rgb_to_y(hr));
    let c = |t: &Tensor<f64>| -> Result<Tensor<f64>, EvalError> {
        let (h, w) = (t.shape()[0], t.shape()[1]);
        if 2 * crop >= h || 2 * crop >= w {
            return Err(MetricsError::CropTooLarge { crop, h, w }.into());
        }
        let mut data = Vec::with_capacity((h - 2 * crop) * (w - 2 * crop));
        for y in crop..h - crop {
            data.extend_from_slice(&t.data()[y * w + crop..y * w + w - crop]);
        }
        Ok(Tensor::from_vec(&[h - 2 * crop, w - 2 * crop], data).expect("cropped dims"))
    };
    if ys.shape() != yh.shape() {
        return Err(MetricsError::ShapeMismatch(format!("SR {:?} vs HR {:?}", ys.shape(), yh.shape())).into());
    }
    let (ys, yh) = (c(&ys)?, c(&yh)?);
    Ok(ImageScore {
        id: id.to_string(),
        psnr: psnr(&ys, &yh, 255.0, 0)?,
        ssim: ssim(&ys, &yh)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_texture;
    use crate::nn::ModelConfig;
    use crate::rng::Rng;

    #[test]
    fn deterministic_and_self_scores_infinite() {
        let model = Model::<f32>::new(ModelConfig::default(), &mut Rng::new(1)).unwrap();
        let imgs: Vec<_> = (0..2)
            .map(|i| (format!("t{i}"), synth_texture(&mut Rng::new(i), 32, 34).unwrap()))
            .collect();
        let a = evaluate(&model, &imgs, 2, ResizeFilter::Antialias).unwrap();
        let b = evaluate(&model, &imgs, 2, ResizeFilter::Antialias).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.mean_psnr().is_finite());
        let s = score("x", &imgs[0].1, &imgs[0].1, 2).unwrap();
        assert_eq!(s.psnr, f64::INFINITY);
        assert_eq!(fmt_sig9(s.psnr), "inf");
    }
}
