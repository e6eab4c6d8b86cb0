//! Writes the built-in smooth test image as an ASCII PGM.
//!
//! `cargo run -p dipgd --example write_test_image -- <side> <path>`

use std::path::Path;

fn main() -> dipgd::Result<()> {
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let path = args.next().unwrap_or_else(|| format!("test{side}.pgm"));
    dipgd::pgm::write_pgm(Path::new(&path), &dipgd::pgm::synthetic_test_image(side))
}
