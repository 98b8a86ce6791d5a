#![allow(dead_code)]

use std::path::PathBuf;

use satrestore::cae::CaeModel;
use satrestore::nn::build::*;
use satrestore::nn::{Network, Shape};
use satrestore::Rng;

pub const TOY_CAE_SEED: u64 = 20_240_601;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Three-layer autoencoder with a hyperprior, 8x8 reference images.
pub fn toy_cae(rng: &mut Rng) -> CaeModel {
    let mut w = |n: usize, fan: usize| random_weights(rng, n, fan, 1.0);
    CaeModel::new(
        Network::new(vec![
            conv2d("e0", 1, 3, 3, 2, 1, w(27, 9)),
            leaky_relu("e1", 0.2),
            conv2d("e2", 3, 2, 3, 1, 1, w(54, 27)),
        ]),
        Network::new(vec![
            conv_transpose2d("d0", 2, 3, 3, 2, 1, w(54, 18)),
            leaky_relu("d1", 0.2),
            conv2d("d2", 3, 1, 3, 1, 1, w(27, 27)),
        ]),
        Network::new(vec![
            conv_transpose2d("v0", 2, 1, 3, 2, 1, w(18, 18)),
            bias("v1", vec![-1.0]),
        ]),
        Network::new(vec![
            conv2d("he0", 2, 2, 3, 2, 1, w(36, 18)),
            leaky_relu("he1", 0.2),
        ]),
        Network::new(vec![
            conv_transpose2d("hd0", 2, 4, 3, 2, 1, w(72, 18)),
            bias("hd1", vec![0.0, 0.0, 0.5, 0.5]),
        ]),
        Shape(1, 8, 8),
    )
    .unwrap()
}

pub const TINY_DENOISER_SEED: u64 = 77;

/// Three-layer denoiser over `[image, sigma plane]`: a residual 3x3 smoother
/// plus small random features.
pub fn tiny_denoiser(rng: &mut Rng) -> Network {
    let blur = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0];
    let mut w0 = random_weights(rng, 2 * 3 * 9, 18, 0.1);
    // first output channel: binomial blur of the image, ignoring sigma
    for (k, b) in blur.iter().enumerate() {
        w0[k] = b / 16.0;
        w0[9 + k] = 0.0;
    }
    let mut w2 = random_weights(rng, 3 * 9, 27, 0.1);
    w2[..9].iter_mut().for_each(|v| *v = 0.0);
    w2[4] = 1.0;
    Network::new(vec![
        conv2d("c0", 2, 3, 3, 1, 1, w0),
        leaky_relu("a0", 0.1),
        conv2d("c1", 3, 1, 3, 1, 1, w2),
    ])
}
