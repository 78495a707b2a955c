//! Shared fixtures for the criterion benches.

use mpsams::data::{generate_sample, SyntheticConfig};
use mpsams::patching::ImageTensor;

/// A synthetic `size x size` image and its lesion mask. Lesion radii scale
/// with the image so the area bound holds at every size.
pub fn image(size: usize, seed: u64) -> (ImageTensor, Vec<bool>) {
    let base = SyntheticConfig::default();
    let k = size as f64 / base.image_size as f64;
    let cfg = SyntheticConfig {
        image_size: size,
        lesion_radius: ((base.lesion_radius.0 * k).max(1.0), (base.lesion_radius.1 * k).max(1.0)),
        ..base
    };
    generate_sample(&cfg, seed).expect("valid synthetic config")
}

/// Two masks of `len` pixels that overlap on roughly half their support.
pub fn mask_pair(len: usize) -> (Vec<bool>, Vec<bool>) {
    let pred = (0..len).map(|i| i % 7 < 3).collect();
    let gt = (0..len).map(|i| i % 5 < 2).collect();
    (pred, gt)
}

#[cfg(test)]
mod tests {
    #[test]
    fn fixtures_have_requested_shape() {
        let (img, mask) = super::image(32, 1);
        assert_eq!(img.shape(), (1, 32, 32));
        assert_eq!(mask.len(), 1024);
        let (p, g) = super::mask_pair(100);
        assert_eq!((p.len(), g.len()), (100, 100));
    }
}
