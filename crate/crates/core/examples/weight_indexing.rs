//! Packing ternary weights five to a byte and reading them back.

use ternq::codec::{decode, encode, PatternTable};
use ternq::quant::quantize_ternary;
use ternq::{FloatTensor, QuantConfig};

fn main() -> ternq::Result<()> {
    let w = FloatTensor::new(
        vec![2, 6],
        vec![
            0.5, -0.2, 0.1, -0.9, 0.0, 0.7, //
            -0.6, 0.3, 0.05, 0.8, -0.4, 0.0,
        ],
    )?;
    let ternary = quantize_ternary(&w, &QuantConfig::ternary())?;
    println!("beta   = {}", ternary.beta());
    println!("values = {:?}", ternary.values());

    let packed = encode(&ternary, 5)?;
    println!("indices = {:?} ({} bytes for {} weights)", packed.indices(), packed.indices().len(), ternary.len());

    let table = PatternTable::new(5)?;
    for &i in packed.indices() {
        println!("  {i:>3} -> {:?}", table.pattern(i)?);
    }

    let back = decode(&packed, ternary.beta())?;
    assert_eq!(back, ternary);
    println!("decoded tensor matches");
    Ok(())
}
