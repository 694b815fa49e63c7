//! Gradient-weighted class-activation saliency.
//!
//! Attribution is taken at the final feature stage: channel weights are the
//! feature-normalized sums of (activation x gradient) — the axiom-preserving
//! CAM weighting — the weighted map is rectified, upsampled to the input
//! size, and min-max normalized. The gradient is of the *negative* logit,
//! so bright regions are the evidence the network used to call the image
//! non-tileable (seams light up).

use ndarray::{Array2, Axis};
use textile_autograd::{bilinear_resize_array, Tape};
use thiserror::Error;

use super::{NetError, Network};
use crate::img::TextureImage;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("saliency requires a trained network (zero training steps recorded)")]
    Untrained,
    #[error("network parameters contain non-finite values")]
    NonFinite,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Heatmap in `[0,1]` of where the network looked when scoring `img` as
/// non-tileable; same height/width as the input. A degenerate (constant)
/// attribution map normalizes to all zeros.
pub fn saliency(net: &Network, img: &TextureImage) -> Result<Array2<f64>, SaliencyError> {
    if net.train_steps() == 0 {
        return Err(SaliencyError::Untrained);
    }
    if !net.is_finite() {
        return Err(SaliencyError::NonFinite);
    }
    let tape = Tape::new();
    let x = img.data().clone().insert_axis(Axis(0)).into_dyn();
    let out = net.forward(&tape, &x)?;
    // gradient of the non-tileable direction
    let objective = out.logits.sum_all().neg();
    let grads = tape.backward(objective);
    let activations = out.features.value();
    let grad = grads
        .wrt(out.features)
        .expect("features participate in the logit")
        .clone();

    let shape = activations.shape().to_vec();
    let (h, w, c) = (shape[1], shape[2], shape[3]);
    let eps = 1e-12;
    // per-channel weight: sum(A * G) / (sum(A) + eps)
    let mut weights = vec![0.0f64; c];
    for ch in 0..c {
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..h {
            for x_ in 0..w {
                let a = activations[[0, y, x_, ch]];
                num += a * grad[[0, y, x_, ch]];
                den += a;
            }
        }
        weights[ch] = num / (den + eps);
    }
    let mut map = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x_ in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += weights[ch] * activations[[0, y, x_, ch]];
            }
            map[(y, x_)] = acc.max(0.0);
        }
    }

    let upsampled = bilinear_resize_array(
        &map.insert_axis(Axis(2)).into_dyn(),
        img.height(),
        img.width(),
    );
    let mut flat = upsampled
        .into_dimensionality::<ndarray::Ix3>()
        .expect("resize keeps rank 3")
        .index_axis_move(Axis(2), 0);
    let min = flat.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-12 {
        flat.fill(0.0);
    } else {
        flat.mapv_inplace(|v| (v - min) / (max - min));
    }
    Ok(flat)
}
