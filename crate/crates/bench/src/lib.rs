//! Fixtures shared by the benchmarks.

use steglab::jpeg::{decompress_real, CoefficientImage};
use steglab::synth::Benchmark;
use steglab::{RealImage, Shape4, Tensor4};

/// `pairs` cover/stego pairs of the desk benchmark at `size × size`.
pub fn pairs(pairs: usize, size: usize) -> Vec<(CoefficientImage, CoefficientImage)> {
    Benchmark { covers: pairs, size, ..Benchmark::default() }.pairs().expect("benchmark pairs")
}

/// Decompressed images, cover then stego, with labels 0/1.
pub fn images(pairs_: &[(CoefficientImage, CoefficientImage)]) -> (Vec<RealImage>, Vec<usize>) {
    let images = pairs_.iter().flat_map(|(c, s)| [decompress_real(c), decompress_real(s)]).collect();
    let labels = pairs_.iter().flat_map(|_| [0, 1]).collect();
    (images, labels)
}

pub fn batch(images: &[RealImage]) -> Tensor4 {
    let (h, w) = (images[0].height(), images[0].width());
    let data = images.iter().flat_map(|i| i.values().iter().copied()).collect();
    Tensor4::new(Shape4::new(images.len(), 1, h, w), data).expect("batch shape")
}
