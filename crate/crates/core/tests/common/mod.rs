#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use cryptopix::image::PlainImage;
use cryptopix::paillier::{seeded_rng, Keypair};

pub const GRAY: [&str; 4] = ["radial.pgm", "blocks.pgm", "waves.pgm", "dim.pgm"];
pub const BINARY: [&str; 2] = ["shapes.pbm", "blobs.pbm"];

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

pub fn load(name: &str) -> PlainImage {
    PlainImage::read(testdata(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn gray_images() -> Vec<(&'static str, PlainImage)> {
    GRAY.iter().map(|n| (*n, load(n))).collect()
}

pub fn binary_images() -> Vec<(&'static str, PlainImage)> {
    BINARY.iter().map(|n| (*n, load(n))).collect()
}

pub fn key256() -> &'static Keypair {
    static KEY: OnceLock<Keypair> = OnceLock::new();
    KEY.get_or_init(|| Keypair::generate(256, &mut seeded_rng(0x256)).unwrap())
}

pub fn key512() -> &'static Keypair {
    static KEY: OnceLock<Keypair> = OnceLock::new();
    KEY.get_or_init(|| Keypair::generate(512, &mut seeded_rng(0x512)).unwrap())
}
