//! Float archive in, quantized archive out, with a size report.
//!
//! Convolution weights go to 1.58-bit indexed storage; the embedding is
//! kept in float32 by name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ternq::format::{quantize_archive, size_report, FloatArchive, QuantArchive, QuantizeOptions};
use ternq::FloatTensor;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> ternq::Result<FloatTensor> {
    let n = shape.iter().product();
    let d = Normal::new(0.0f32, 0.05).unwrap();
    FloatTensor::new(shape, (0..n).map(|_| d.sample(rng)).collect())
}

fn main() -> ternq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = FloatArchive::new();
    model.push("embed.weight", random(vec![64, 32], &mut rng)?);
    model.push("encoder.0.conv", random(vec![256, 256, 5], &mut rng)?);
    model.push("encoder.1.conv", random(vec![256, 256, 5], &mut rng)?);
    model.push("proj.weight", random(vec![80, 256], &mut rng)?);

    let opts =
        QuantizeOptions { keep_float: vec![glob::Pattern::new("embed.*").unwrap()], ..QuantizeOptions::default() };
    let archive = quantize_archive(&model, &opts)?;
    print!("{}", size_report(&archive)?);

    let bytes = archive.write()?;
    let back = QuantArchive::read(&bytes)?;
    assert_eq!(back, archive);
    println!("float archive {} bytes, quantized archive {} bytes", model.write()?.len(), bytes.len());
    Ok(())
}
