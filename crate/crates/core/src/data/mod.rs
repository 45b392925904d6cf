//! Datasets: benchmark ingestion, preprocessing, augmentation, class
//! balancing, noise degradation and a synthetic stand-in.

mod augment;
mod dataset;
mod degrade;
mod gtsrb;
mod synth;

use std::path::Path;

pub use augment::{augment, AugmentPolicy, Technique, SYMMETRIC_CLASSES};
pub use dataset::Dataset;
pub use degrade::degrade;
pub use gtsrb::{
    crop_resize, crop_resize_to, load_gtsrb, write_gtsrb, GtsrbStream, ImageSample, Roi, Split,
    INPUT_SIZE, NUM_CLASSES,
};
pub use synth::{synth_dataset, synth_sample, synth_samples};

use crate::error::{Error, Result};

/// Extra augmented copies per original sample so that every class reaches
/// `target` samples: `ceil(target / count) - 1`, or 0 once a class already
/// has `target`.
pub fn balance_plan(histogram: &[usize], target: usize) -> Result<Vec<usize>> {
    histogram
        .iter()
        .enumerate()
        .map(|(class, &count)| match count {
            0 if target > 0 => Err(Error::Argument(format!(
                "class {class} has no samples; cannot reach {target}"
            ))),
            0 => Ok(0),
            c if c >= target => Ok(0),
            c => Ok(target.div_ceil(c) - 1),
        })
        .collect()
}

/// Originals followed by their augmented copies per [`balance_plan`].
/// Copy `j` of sample `i` uses draw seed `i * 1024 + j`.
pub fn balanced(
    data: &Dataset,
    num_classes: usize,
    target: usize,
    policy: &AugmentPolicy,
) -> Result<Dataset> {
    policy.validate()?;
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= num_classes) {
        return Err(Error::Argument(format!(
            "label {bad} >= {num_classes} classes"
        )));
    }
    let plan = balance_plan(&data.label_histogram(num_classes), target)?;
    let mut out = data.clone();
    for i in 0..data.len() {
        let label = data.labels()[i];
        let image = data.image_tensor(i);
        for j in 0..plan[label] {
            let copy = augment(&image, label, policy, (i as u64) * 1024 + j as u64)?;
            out.push(copy.data(), label)?;
        }
    }
    Ok(out)
}

/// Load a benchmark split fully into memory, cropped and resized to
/// `size x size`.
pub fn load_dataset(root: &Path, split: Split, size: usize) -> Result<Dataset> {
    let mut ds = Dataset::empty((3, size, size));
    for sample in load_gtsrb(root, split)? {
        let sample = sample?;
        ds.push(crop_resize_to(&sample, size)?.data(), sample.label)?;
    }
    if ds.is_empty() {
        return Err(Error::Ingestion(format!(
            "no samples under {}",
            root.display()
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_examples() {
        assert_eq!(balance_plan(&[2100, 2100], 2100).unwrap(), vec![0, 0]);
        assert_eq!(balance_plan(&[210], 2100).unwrap(), vec![9]);
        assert_eq!(
            balance_plan(&[211, 3000, 1], 2100).unwrap(),
            vec![9, 0, 2099]
        );
        assert!(matches!(balance_plan(&[5, 0], 10), Err(Error::Argument(_))));
    }

    #[test]
    fn plan_is_minimal() {
        for count in 1..300 {
            for target in [1, 50, 299, 2100] {
                let m = balance_plan(&[count], target).unwrap()[0];
                assert!(count * (m + 1) >= target);
                assert!(m == 0 || count * m < target);
            }
        }
    }

    #[test]
    fn balanced_reaches_target() {
        let base = synth_dataset(1, 0, 16).unwrap().subset(&[0, 1, 2]).unwrap();
        let out = balanced(&base, 3, 4, &AugmentPolicy::default()).unwrap();
        assert_eq!(out.len(), 12);
        assert_eq!(out.label_histogram(3), vec![4, 4, 4]);
        assert_eq!(
            out,
            balanced(&base, 3, 4, &AugmentPolicy::default()).unwrap()
        );
    }
}
