//! Patch decomposition of spectra and random patch masking.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `N × P` matrix of consecutive, non-overlapping spectral patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    patches: Tensor,
}

impl PatchSequence {
    pub fn patches(&self) -> &Tensor {
        &self.patches
    }

    pub fn into_tensor(self) -> Tensor {
        self.patches
    }

    pub fn n_patches(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn patch_size(&self) -> usize {
        self.patches.shape()[1]
    }

    pub fn source_length(&self) -> usize {
        self.patches.len()
    }
}

pub fn check_divisible(length: usize, patch: usize) -> Result<usize> {
    if patch == 0 || length == 0 || length % patch != 0 {
        return Err(Error::Divisibility { length, patch });
    }
    Ok(length / patch)
}

/// Splits a spectrum into rows of `patch_size` consecutive intensities.
pub fn patchify(spectrum: &[f64], patch_size: usize) -> Result<PatchSequence> {
    let n = check_divisible(spectrum.len(), patch_size)?;
    Ok(PatchSequence {
        patches: Tensor::new(vec![n, patch_size], spectrum.to_vec())?,
    })
}

/// Concatenates patch rows back into a spectrum.
pub fn unpatchify(patches: &Tensor) -> Vec<f64> {
    patches.data().to_vec()
}

/// Which patches of an `N`-patch spectrum are hidden from the encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    n_patches: usize,
    masked: Vec<usize>,
}

impl MaskPlan {
    /// Plan that hides nothing.
    pub fn none(n_patches: usize) -> Self {
        MaskPlan {
            n_patches,
            masked: Vec::new(),
        }
    }

    pub fn all(n_patches: usize) -> Self {
        MaskPlan {
            n_patches,
            masked: (0..n_patches).collect(),
        }
    }

    /// Plan from explicit indices, in any order.
    pub fn from_indices(n_patches: usize, indices: &[usize]) -> Result<Self> {
        let mut masked = indices.to_vec();
        masked.sort_unstable();
        masked.dedup();
        if masked.len() != indices.len() {
            return Err(Error::Contract("mask indices must be unique".into()));
        }
        if let Some(&bad) = masked.last().filter(|&&i| i >= n_patches) {
            return Err(Error::Contract(format!("mask index {bad} out of range for {n_patches} patches")));
        }
        Ok(MaskPlan { n_patches, masked })
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    /// Sorted masked patch indices.
    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    pub fn is_masked(&self, patch: usize) -> bool {
        self.masked.binary_search(&patch).is_ok()
    }

    /// Sorted indices of the patches the encoder sees.
    pub fn visible(&self) -> Vec<usize> {
        (0..self.n_patches).filter(|&i| !self.is_masked(i)).collect()
    }

    pub fn ratio(&self) -> f64 {
        if self.n_patches == 0 {
            0.0
        } else {
            self.masked.len() as f64 / self.n_patches as f64
        }
    }

    /// Flat spectrum positions covered by masked patches.
    pub fn masked_positions(&self, patch_size: usize) -> Vec<usize> {
        self.masked
            .iter()
            .flat_map(|&p| p * patch_size..(p + 1) * patch_size)
            .collect()
    }
}

/// Number of patches hidden at ratio `r`: `round(r·N)`.
pub fn mask_count(n_patches: usize, ratio: f64) -> usize {
    ((ratio * n_patches as f64).round() as usize).min(n_patches)
}

/// Draws exactly `round(r·N)` distinct patch indices uniformly at random.
pub fn sample_mask(n_patches: usize, ratio: f64, rng: &mut Rng) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let k = mask_count(n_patches, ratio);
    let mut pool: Vec<usize> = (0..n_patches).collect();
    for i in 0..k {
        let j = rng.random_range(i..n_patches);
        pool.swap(i, j);
    }
    let mut masked = pool[..k].to_vec();
    masked.sort_unstable();
    Ok(MaskPlan { n_patches, masked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;

    #[test]
    fn thousand_points_in_hundreds_make_ten_patches() {
        let p = patchify(&vec![0.0; 1000], 100).unwrap();
        assert_eq!(p.n_patches(), 10);
    }

    #[test]
    fn small_patchify() {
        let p = patchify(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(p.patches(), &Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        assert_eq!(unpatchify(p.patches()), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn indivisible_length() {
        match patchify(&[0.0; 10], 3) {
            Err(Error::Divisibility { length, patch }) => assert_eq!((length, patch), (10, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extreme_ratios() {
        let mut rng = rng_for(1, &[]);
        assert!(sample_mask(10, 0.0, &mut rng).unwrap().masked().is_empty());
        assert_eq!(sample_mask(10, 1.0, &mut rng).unwrap().masked(), (0..10).collect::<Vec<_>>());
        assert!(sample_mask(10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn cardinality_sweep() {
        let mut rng = rng_for(2, &[]);
        for n in [1, 7, 10, 33] {
            for step in 0..=10 {
                let r = step as f64 / 10.0;
                let plan = sample_mask(n, r, &mut rng).unwrap();
                assert_eq!(plan.n_masked(), (r * n as f64).round() as usize);
                assert!(plan.masked().windows(2).all(|w| w[0] < w[1]));
                assert!(plan.masked().iter().all(|&i| i < n));
            }
        }
    }

    #[test]
    fn uniform_inclusion_frequency() {
        let mut rng = rng_for(3, &[]);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            let plan = sample_mask(10, 0.5, &mut rng).unwrap();
            assert_eq!(plan.n_masked(), 5);
            for &i in plan.masked() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn draws_differ_across_spectra() {
        let plans: Vec<MaskPlan> = (0..64)
            .map(|i| sample_mask(10, 0.5, &mut rng_for(4, &[i])).unwrap())
            .collect();
        let distinct: std::collections::HashSet<_> = plans.iter().map(|p| p.masked().to_vec()).collect();
        // 252 possible plans; 64 draws should be mostly distinct
        assert!(distinct.len() > 48, "{}", distinct.len());
    }

    #[test]
    fn plan_helpers() {
        let plan = MaskPlan::from_indices(4, &[3, 1]).unwrap();
        assert_eq!(plan.masked(), &[1, 3]);
        assert_eq!(plan.visible(), vec![0, 2]);
        assert_eq!(plan.masked_positions(2), vec![2, 3, 6, 7]);
        assert!(MaskPlan::from_indices(4, &[1, 1]).is_err());
        assert!(MaskPlan::from_indices(4, &[4]).is_err());
    }

    proptest! {
        #[test]
        fn patch_round_trip_is_bitwise(n in 1usize..12, p in 1usize..20, seed in 0u64..10_000) {
            let mut rng = rng_for(seed, &[]);
            let x: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>() * 1e3 - 500.0).collect();
            let back = unpatchify(patchify(&x, p).unwrap().patches());
            prop_assert!(x.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
