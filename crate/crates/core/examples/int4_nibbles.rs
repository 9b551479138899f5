//! 4-bit quantization with two weights per byte.

use ternq::format::{pack_int4, unpack_int4};
use ternq::quant::quantize_b_bit;
use ternq::{FloatTensor, QuantConfig};

fn main() -> ternq::Result<()> {
    let w = FloatTensor::from_vec(vec![0.9, -1.4, 0.05, 0.3, -0.2, 2.5, -3.0])?;
    let q = quantize_b_bit(&w, &QuantConfig::int(4))?;
    println!("beta = {}, values = {:?}", q.beta(), q.values());

    let bytes = pack_int4(q.values());
    println!("{} weights -> {} bytes: {:02x?}", q.len(), bytes.len(), bytes);
    assert_eq!(unpack_int4(&bytes, q.len())?, q.values());
    println!("dequantized: {:?}", q.dequantize().data());
    Ok(())
}
