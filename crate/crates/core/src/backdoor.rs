//! Pixel-pattern triggers and the poisoned data they induce.
//!
//! Every built-in trigger is a solid rectangle of 24 pixels anchored at the
//! top-left corner; trigger `i` (1-based) has shape `SHAPES[i - 1]` and by
//! default targets class `i - 1`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// `(rows, cols)` of built-in triggers 1..=8.
pub const SHAPES: [(usize, usize); 8] = [(1, 24), (2, 12), (3, 8), (4, 6), (6, 4), (8, 3), (12, 2), (24, 1)];

pub const TRIGGER_PIXELS: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(row, col)` of the rectangle's top-left pixel.
    pub origin: (usize, usize),
    pub pixel_value: f32,
    pub target_class: usize,
}

impl TriggerSpec {
    /// Built-in trigger `id` (1..=8) with its default target `id - 1`.
    pub fn builtin(id: usize) -> Result<TriggerSpec> {
        let &(rows, cols) = id
            .checked_sub(1)
            .and_then(|i| SHAPES.get(i))
            .ok_or_else(|| Error::Parameter(format!("built-in trigger ids are 1..=8, got {id}")))?;
        Ok(TriggerSpec {
            id,
            rows,
            cols,
            origin: (0, 0),
            pixel_value: 1.0,
            target_class: id - 1,
        })
    }

    pub fn with_target(mut self, target_class: usize) -> Self {
        self.target_class = target_class;
        self
    }

    fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        let (r0, c0) = self.origin;
        if r0 + self.rows > h || c0 + self.cols > w {
            return Err(Error::Geometry(format!(
                "trigger {} ({}x{} at {:?}) does not fit a {h}x{w} image",
                self.id, self.rows, self.cols, self.origin
            )));
        }
        Ok(())
    }

    /// Writes the trigger into one `[channels, h, w]` sample in place.
    pub(crate) fn stamp(&self, sample: &mut [f32], dims: [usize; 3]) {
        let [c, h, w] = dims;
        let (r0, c0) = self.origin;
        for ch in 0..c {
            for r in r0..r0 + self.rows {
                let row = (ch * h + r) * w;
                sample[row + c0..row + c0 + self.cols].fill(self.pixel_value);
            }
        }
    }
}

/// The eight fixed 24-pixel triggers in id order.
pub fn builtin_triggers(num_classes: usize) -> Result<Vec<TriggerSpec>> {
    if num_classes < SHAPES.len() {
        return Err(Error::Parameter(format!(
            "default targets 0..=7 need at least 8 classes, got {num_classes}"
        )));
    }
    (1..=SHAPES.len()).map(TriggerSpec::builtin).collect()
}

fn image_dims(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        [_, c, h, w] => Ok([c, h, w]),
        _ => Err(Error::dim(format!("expected an image tensor, got shape {:?}", t.shape()))),
    }
}

/// Returns a copy of `image` (`[c, h, w]` or `[n, c, h, w]`) with the trigger
/// rectangle set to `pixel_value` on every channel.
pub fn apply_trigger(image: &Tensor, t: &TriggerSpec) -> Result<Tensor> {
    let dims = image_dims(image)?;
    t.check_fits(dims[1], dims[2])?;
    let mut out = image.clone();
    let per = dims.iter().product::<usize>();
    for sample in out.data_mut().chunks_mut(per) {
        t.stamp(sample, dims);
    }
    Ok(out)
}

/// Stamps the trigger on `round(fraction * batch)` distinct samples chosen by
/// `rng` and relabels them to the trigger's target class.
pub fn poison_batch<R: Rng + ?Sized>(
    images: &Tensor,
    labels: &[usize],
    t: &TriggerSpec,
    fraction: f64,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>)> {
    let mut images = images.clone();
    let mut labels = labels.to_vec();
    poison_in_place(&mut images, &mut labels, t, fraction, rng)?;
    Ok((images, labels))
}

pub(crate) fn poison_in_place<R: Rng + ?Sized>(
    images: &mut Tensor,
    labels: &mut [usize],
    t: &TriggerSpec,
    fraction: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("poison fraction must be in [0, 1], got {fraction}")));
    }
    let dims = image_dims(images)?;
    t.check_fits(dims[1], dims[2])?;
    let n = labels.len();
    if images.batch_size() != n {
        return Err(Error::dim(format!("{} images but {n} labels", images.batch_size())));
    }
    let k = ((fraction * n as f64).round() as usize).min(n);
    for i in sample(rng, n, k).into_iter() {
        t.stamp(images.sample_mut(i), dims);
        labels[i] = t.target_class;
    }
    Ok(k)
}

/// Triggered copies of every test sample whose true label differs from the
/// target, all relabelled to the target.
pub fn backdoor_testset(test: &Dataset, t: &TriggerSpec) -> Result<Dataset> {
    if t.target_class >= test.num_classes {
        return Err(Error::Parameter(format!(
            "target class {} outside [0, {})",
            t.target_class, test.num_classes
        )));
    }
    let keep: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] != t.target_class).collect();
    if keep.is_empty() {
        return Err(Error::Input(format!(
            "every test sample already has target class {}",
            t.target_class
        )));
    }
    let images = apply_trigger(&test.images.gather(&keep), t)?;
    let labels = vec![t.target_class; keep.len()];
    Dataset::new(format!("{}+trigger{}", test.name, t.id), images, labels, test.num_classes)
}

/// JSON catalogue of triggers.
pub fn triggers_json(triggers: &[TriggerSpec]) -> String {
    serde_json::to_string_pretty(triggers).expect("trigger specs serialize")
}
