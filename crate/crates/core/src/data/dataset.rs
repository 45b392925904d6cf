use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::ItemShape;
use crate::tensor::Tensor;

/// In-memory labelled images, each `c x h x w` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    item_shape: ItemShape,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(item_shape: ItemShape, images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let item = item_shape.0 * item_shape.1 * item_shape.2;
        if images.len() != item * labels.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} items of {item_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            item_shape,
            images,
            labels,
        })
    }

    pub fn empty(item_shape: ItemShape) -> Self {
        Dataset {
            item_shape,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn item_shape(&self) -> ItemShape {
        self.item_shape
    }

    fn item_len(&self) -> usize {
        self.item_shape.0 * self.item_shape.1 * self.item_shape.2
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Image `i` as a `(1, c, h, w)` tensor.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        let (c, h, w) = self.item_shape;
        Tensor::from_vec([1, c, h, w], self.image(i).to_vec()).expect("item length")
    }

    pub fn push(&mut self, image: &[f32], label: usize) -> Result<()> {
        if image.len() != self.item_len() {
            return Err(Error::Dimension(format!(
                "image has {} values, dataset items are {:?}",
                image.len(),
                self.item_shape
            )));
        }
        self.images.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    /// Stack the selected items into one batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (c, h, w) = self.item_shape;
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!(
                    "sample index {i} out of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec([indices.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (t, labels) = self.batch(indices)?;
        Dataset::new(self.item_shape, t.into_vec(), labels)
    }

    /// Seeded shuffle, then the first `round(ratio * len)` items go to the
    /// first set and the rest to the second.
    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Argument(format!(
                "split ratio must be in [0, 1], got {ratio}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (ratio * self.len() as f64).round() as usize;
        Ok((self.subset(&order[..cut])?, self.subset(&order[cut..])?))
    }

    /// Sample count per class, `num_classes` bins.
    pub fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &l in &self.labels {
            if l < num_classes {
                h[l] += 1;
            }
        }
        h
    }
}
