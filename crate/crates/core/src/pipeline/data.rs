use crate::autodiff::{Scalar, Tensor};
use crate::datagen::{normalize_event, DataError, Dataset, Split, IMAGE_PIXELS, IMAGE_SIDE};

/// One split converted to model layout: normalized kinematics and
/// channels-last images.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    len: usize,
    /// `[2n, 4]`, row `2i + k` is candidate `k` of event `i`.
    jets: Vec<f32>,
    /// `[2n, 16, 16, 3]`.
    images: Vec<f32>,
    /// `[n, 6]`.
    truth: Vec<f32>,
    labels: Vec<f32>,
}

/// A mini-batch of `B` events.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// Event indices into the source split.
    pub idx: Vec<usize>,
    pub jets: Tensor<T>,
    pub images: Tensor<T>,
    pub truth: Tensor<T>,
    /// `[B, 1]` with values 0 or 1.
    pub labels: Tensor<T>,
}

impl<T: crate::autodiff::Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const IMAGE_FLOATS: usize = 3 * IMAGE_PIXELS;

impl Prepared {
    pub fn from_dataset(ds: &Dataset, split: Split) -> Result<Self, DataError> {
        Self::from_rows(ds, &ds.rows(split))
    }

    pub fn from_rows(ds: &Dataset, rows: &[usize]) -> Result<Self, DataError> {
        let n = rows.len();
        let mut out = Self {
            len: n,
            jets: Vec::with_capacity(8 * n),
            images: Vec::with_capacity(2 * IMAGE_FLOATS * n),
            truth: Vec::with_capacity(6 * n),
            labels: Vec::with_capacity(n),
        };
        for &row in rows {
            let ev = ds.event(row);
            let norm = normalize_event(&ev)?;
            for k in 0..2 {
                out.jets.extend_from_slice(&norm.jets[k]);
                let channels = [ev.image(k, 0), ev.image(k, 1), ev.image(k, 2)];
                for p in 0..IMAGE_SIDE * IMAGE_SIDE {
                    out.images.extend(channels.iter().map(|c| c[p]));
                }
            }
            for k in 0..2 {
                out.truth.extend_from_slice(&norm.truth[k]);
            }
            out.labels.push(norm.label);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Copy without images, for stages that never look at them.
    pub fn without_images(&self) -> Self {
        Self {
            images: Vec::new(),
            ..self.clone()
        }
    }

    /// Copy without images whose truth columns are replaced by `features`
    /// (`[n, 6]`), e.g. frozen Task1 outputs feeding a Task2 model.
    pub fn with_features(&self, features: Vec<f32>) -> Self {
        assert_eq!(features.len(), 6 * self.len, "feature layout");
        Self {
            len: self.len,
            jets: self.jets.clone(),
            images: Vec::new(),
            truth: features,
            labels: self.labels.clone(),
        }
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    /// `[n, 6]` normalized truth of every event.
    pub fn truth(&self) -> &[f32] {
        &self.truth
    }

    /// `[2n, 4]` normalized jets of every candidate.
    pub fn jets(&self) -> &[f32] {
        &self.jets
    }

    /// Gathers events `idx` into a batch.
    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Batch<T> {
        let b = idx.len();
        let mut jets = Vec::with_capacity(8 * b);
        let mut images = Vec::with_capacity(2 * IMAGE_FLOATS * b);
        let mut truth = Vec::with_capacity(6 * b);
        let mut labels = Vec::with_capacity(b);
        let cast = |v: &f32| T::from_f64(*v as f64);
        for &i in idx {
            jets.extend(self.jets[8 * i..8 * i + 8].iter().map(cast));
            if !self.images.is_empty() {
                images.extend(self.images[2 * IMAGE_FLOATS * i..2 * IMAGE_FLOATS * (i + 1)].iter().map(cast));
            }
            truth.extend(self.truth[6 * i..6 * i + 6].iter().map(cast));
            labels.push(cast(&self.labels[i]));
        }
        let image_shape = if self.images.is_empty() {
            vec![0]
        } else {
            vec![2 * b, IMAGE_SIDE, IMAGE_SIDE, 3]
        };
        Batch {
            idx: idx.to_vec(),
            jets: Tensor::new(vec![2 * b, 4], jets).expect("jet layout"),
            images: Tensor::new(image_shape, images).expect("image layout"),
            truth: Tensor::new(vec![b, 6], truth).expect("truth layout"),
            labels: Tensor::new(vec![b, 1], labels).expect("label layout"),
        }
    }

    /// Consecutive batches of at most `size` events over `order`.
    pub fn batches<'a>(&'a self, order: &'a [usize], size: usize) -> impl Iterator<Item = &'a [usize]> + 'a {
        order.chunks(size.max(1))
    }
}
