//! Patch-input softmax segmenter: per-pixel 20-way part classification
//! from a small square of contrast-normalized depth, trained by
//! negative log-likelihood with plain SGD and a per-step decay schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{DepthMap, LabelMap, NUM_PARTS};

use super::mlp::{check_finite, softmax, Grads, Mlp};
use super::SegTrainConfig;

/// Pixel classifier over `patch x patch` depth neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub patch: usize,
    pub mlp: Mlp,
    /// Total SGD steps taken so far; the decay schedule continues from here.
    pub steps: u64,
}

impl SegModel {
    pub fn init(patch: usize, hidden: usize, seed: u64) -> Self {
        SegModel {
            patch,
            mlp: Mlp::init(patch * patch, hidden, NUM_PARTS, seed),
            steps: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }
}

/// Reads the depth patch centered on (u, v); cells outside the image are 0.
pub fn depth_patch(depth: &DepthMap, u: usize, v: usize, patch: usize) -> Vec<f64> {
    let r = (patch / 2) as isize;
    let mut out = Vec::with_capacity(patch * patch);
    for dv in -r..=r {
        for du in -r..=r {
            let (cu, cv) = (u as isize + du, v as isize + dv);
            if cu < 0 || cv < 0 || cu >= depth.width as isize || cv >= depth.height as isize {
                out.push(0.0);
            } else {
                out.push(depth.values[cv as usize * depth.width + cu as usize]);
            }
        }
    }
    out
}

/// Class probabilities for one foreground pixel.
pub fn seg_forward(model: &SegModel, depth: &DepthMap, u: usize, v: usize) -> Result<Vec<f64>> {
    if u >= depth.width || v >= depth.height {
        return Err(Error::Contract(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            depth.width, depth.height
        )));
    }
    if !depth.foreground[v * depth.width + u] {
        return Err(Error::Contract(format!(
            "segmenter queried on background pixel ({u}, {v})"
        )));
    }
    let x = depth_patch(depth, u, v, model.patch);
    let (_, y) = model.mlp.forward(&x);
    Ok(softmax(&y))
}

/// One training example: an input patch and a part label in 1..=20.
pub type SegExample = (Vec<f64>, u8);

/// Mean NLL and its gradient over a batch.
pub fn seg_loss_grad(model: &SegModel, batch: &[SegExample]) -> Result<(f64, Grads)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty segmenter batch".into()));
    }
    let mut g = Grads::zeros(&model.mlp);
    let mut loss = 0.0;
    for (i, (x, target)) in batch.iter().enumerate() {
        if !(1..=NUM_PARTS as u8).contains(target) {
            return Err(Error::Contract(format!(
                "target label {target} out of range in batch item {i}"
            )));
        }
        let t = (*target - 1) as usize;
        let (h, y) = model.mlp.forward(x);
        let p = softmax(&y);
        let item_loss = -p[t].ln();
        if !item_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite NLL on batch item {i} (target {target})"
            )));
        }
        loss += item_loss;
        // d(NLL)/dy = p - onehot(target)
        let mut dy = p;
        dy[t] -= 1.0;
        model.mlp.backward(x, &h, &dy, &mut g);
    }
    let inv = 1.0 / batch.len() as f64;
    g.scale(inv);
    Ok((loss * inv, g))
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainCurve {
    pub epoch_loss: Vec<f64>,
}

impl TrainCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_nll\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{i},{l:.17e}\n"));
        }
        s
    }
}

/// Labeled image pair used for both pre-training and fine-tuning. The label
/// map may be sparser than the depth foreground (e.g. pseudo-labels);
/// pixels labeled background contribute nothing.
pub struct SegItem<'a> {
    pub depth: &'a DepthMap,
    pub labels: &'a LabelMap,
}

fn trainable_pixels(item: &SegItem) -> Vec<usize> {
    let d = item.depth;
    (0..d.values.len())
        .filter(|&i| d.foreground[i] && (1..=NUM_PARTS as u8).contains(&item.labels.labels[i]))
        .collect()
}

/// Runs SGD over `items` for `epochs`, continuing the decay schedule from
/// `model.steps`: lr_t = lr / (1 + decay * t).
fn sgd_epochs(
    mut model: SegModel,
    items: &[SegItem],
    cfg: &SegTrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<(SegModel, TrainCurve)> {
    let pixel_lists: Vec<Vec<usize>> = items.iter().map(trainable_pixels).collect();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xA24BAED4963EE407));
        let mut order: Vec<(usize, usize)> = Vec::new();
        for (it, pixels) in pixel_lists.iter().enumerate() {
            let mut px = pixels.clone();
            px.shuffle(&mut rng);
            let take = if cfg.pixels_per_image == 0 {
                px.len()
            } else {
                px.len().min(cfg.pixels_per_image)
            };
            order.extend(px[..take].iter().map(|&p| (it, p)));
        }
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut batch: Vec<SegExample> = Vec::with_capacity(cfg.batch);
        let flush = |batch: &mut Vec<SegExample>,
                         model: &mut SegModel,
                         epoch_loss: &mut f64,
                         batches: &mut usize|
         -> Result<()> {
            if batch.is_empty() {
                return Ok(());
            }
            let (loss, g) = seg_loss_grad(model, batch)?;
            check_finite(loss, &format!("segmenter epoch {epoch} step {}", model.steps))?;
            let lr = cfg.lr / (1.0 + cfg.lr_decay * model.steps as f64);
            model.mlp.sgd_step(&g, lr);
            model.steps += 1;
            *epoch_loss += loss;
            *batches += 1;
            batch.clear();
            Ok(())
        };
        for (it, p) in order {
            let d = items[it].depth;
            let (u, v) = (p % d.width, p / d.width);
            batch.push((depth_patch(d, u, v, cfg.patch), items[it].labels.labels[p]));
            if batch.len() == cfg.batch {
                flush(&mut batch, &mut model, &mut epoch_loss, &mut batches)?;
            }
        }
        flush(&mut batch, &mut model, &mut epoch_loss, &mut batches)?;
        curve.push(if batches == 0 {
            0.0
        } else {
            epoch_loss / batches as f64
        });
    }
    if !model.mlp.all_finite() {
        return Err(Error::Divergence("segmenter parameters non-finite".into()));
    }
    Ok((model, TrainCurve { epoch_loss: curve }))
}

/// Supervised pre-training from scratch on densely labeled images.
pub fn train_segmenter(
    items: &[SegItem],
    cfg: &SegTrainConfig,
    seed: u64,
) -> Result<(SegModel, TrainCurve)> {
    let model = SegModel::init(cfg.patch, cfg.hidden, seed);
    sgd_epochs(model, items, cfg, cfg.epochs, seed)
}

/// Continues SGD on a mixed synthetic + pseudo-labeled stream. With no
/// pseudo items this is bit-identical to running `sgd_epochs` on the
/// synthetic items alone, because it is exactly that call.
pub fn finetune_segmenter(
    model: SegModel,
    items: &[SegItem],
    cfg: &SegTrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<(SegModel, TrainCurve)> {
    sgd_epochs(model, items, cfg, epochs, seed)
}

/// Per-pixel argmax labels on the depth foreground; ties break toward the
/// smallest label; background pixels stay 0.
pub fn predict_labelmap(model: &SegModel, depth: &DepthMap) -> LabelMap {
    let w = depth.width;
    let rows: Vec<Vec<u8>> = (0..depth.height)
        .into_par_iter()
        .map(|v| {
            let mut row = vec![0u8; w];
            for u in 0..w {
                if !depth.foreground[v * w + u] {
                    continue;
                }
                let x = depth_patch(depth, u, v, model.patch);
                let (_, y) = model.mlp.forward(&x);
                let mut best = 0usize;
                for (c, &score) in y.iter().enumerate() {
                    if score > y[best] {
                        best = c;
                    }
                }
                row[u] = (best + 1) as u8;
            }
            row
        })
        .collect();
    LabelMap {
        width: w,
        height: depth.height,
        labels: rows.concat(),
    }
}
