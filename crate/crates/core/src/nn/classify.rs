use nalgebra::DMatrix;

use super::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::projector::Barcode;
use crate::spectra::LabelMask;

const CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq)]
pub struct PixelClassification {
    pub mask: LabelMask,
    /// classes x pixels; every column sums to one.
    pub probs: DMatrix<f64>,
}

/// Per-pixel argmax of a softmax classifier. Ties go to the lowest class index.
pub fn classify_pixels(net: &Mlp, barcode: &Barcode, class_names: &[String]) -> Result<PixelClassification> {
    if net.output_activation() != Activation::Softmax {
        return Err(Error::InvalidArgument("classifier must end in softmax".into()));
    }
    if net.input_dim() != barcode.k() {
        return Err(Error::DimensionMismatch(format!(
            "classifier expects {} channels, barcode has {}",
            net.input_dim(),
            barcode.k()
        )));
    }
    if net.output_dim() != class_names.len() {
        return Err(Error::DimensionMismatch(format!(
            "classifier has {} outputs for {} class names",
            net.output_dim(),
            class_names.len()
        )));
    }
    if class_names.len() > u16::MAX as usize + 1 {
        return Err(Error::InvalidArgument("too many classes for a label mask".into()));
    }
    let k = barcode.k();
    let n = barcode.pixels();
    let mut probs = DMatrix::zeros(class_names.len(), n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let x = DMatrix::from_column_slice(k, end - start, &barcode.data()[start * k..end * k]);
        let p = net.predict(&x)?;
        probs.columns_mut(start, end - start).copy_from(&p);
    }
    let labels = probs
        .column_iter()
        .map(|c| {
            let mut best = 0;
            for i in 1..c.len() {
                if c[i] > c[best] {
                    best = i;
                }
            }
            best as u16
        })
        .collect();
    Ok(PixelClassification {
        mask: LabelMask::new(barcode.height(), barcode.width(), labels, class_names.to_vec())?,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, LayerSpec};
    use nalgebra::DVector;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn uniform_logits_pick_class_zero() {
        let net = Mlp::from_layers(vec![Dense {
            weights: DMatrix::zeros(4, 2),
            bias: DVector::zeros(4),
            activation: Activation::Softmax,
            batch_norm: None,
            dropout: 0.0,
        }])
        .unwrap();
        let code = Barcode::new(2, 3, 2, vec![0.7; 12]).unwrap();
        let out = classify_pixels(&net, &code, &names(4)).unwrap();
        assert!(out.mask.labels().iter().all(|&l| l == 0));
        for c in out.probs.column_iter() {
            assert!((c.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_follows_the_largest_channel() {
        let net = Mlp::from_layers(vec![Dense {
            weights: DMatrix::identity(3, 3) * 10.0,
            bias: DVector::zeros(3),
            activation: Activation::Softmax,
            batch_norm: None,
            dropout: 0.0,
        }])
        .unwrap();
        let code = Barcode::new(1, 3, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.5]).unwrap();
        let out = classify_pixels(&net, &code, &names(3)).unwrap();
        assert_eq!(out.mask.labels(), &[0, 2, 1]);
    }

    #[test]
    fn mismatches_are_rejected() {
        let net = Mlp::new(3, &[LayerSpec::new(2, Activation::Softmax)], 0).unwrap();
        let code = Barcode::new(1, 1, 2, vec![0.0; 2]).unwrap();
        assert!(classify_pixels(&net, &code, &names(2)).is_err());
        let code = Barcode::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(classify_pixels(&net, &code, &names(3)).is_err());
        let sig = Mlp::new(3, &[LayerSpec::new(2, Activation::Sigmoid)], 0).unwrap();
        assert!(classify_pixels(&sig, &code, &names(2)).is_err());
    }
}
