//! Huffman-coding an index stream dominated by the all-zero, all-one and
//! all-minus-one patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ternq::codec::{huffman_decode, huffman_encode};

fn main() -> ternq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols: Vec<u8> = (0..10_000)
        .map(|_| if rng.gen_bool(0.7) { [0, 121, 242][rng.gen_range(0..3)] } else { rng.gen_range(0..243) })
        .collect();

    let coded = huffman_encode(&symbols)?;
    let bits = coded.payload_bits(&symbols);
    println!("raw:      {} bytes", symbols.len());
    println!("coded:    {} bits ({:.3} bits/index)", bits, bits as f64 / symbols.len() as f64);
    println!("stored:   {} bytes including the code table", coded.to_bytes().len());
    for s in [0u8, 121, 242, 7] {
        println!("  code length of {s:>3}: {}", coded.code_lengths[s as usize]);
    }
    assert_eq!(huffman_decode(&coded)?, symbols);
    Ok(())
}
