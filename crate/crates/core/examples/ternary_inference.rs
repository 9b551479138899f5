//! A ternary convolution run three ways: straight from the packed index
//! stream, from the decoded ternary tensor, and from 4-bit weights.

use ternq::codec::encode;
use ternq::kernels::{int_conv1d_forward, packed_forward, ternary_conv1d_forward, Conv1dSpec};
use ternq::quant::{quantize_b_bit, quantize_ternary};
use ternq::{FloatTensor, QuantConfig};

fn main() -> ternq::Result<()> {
    let spec = Conv1dSpec::new(2, 3, 3).with_padding(1);
    let w: Vec<f32> = (0..18).map(|i| ((i * 7 % 11) as f32 - 5.0) / 10.0).collect();
    let w = FloatTensor::new(spec.weight_shape(), w)?;
    let x = FloatTensor::new(
        vec![2, 6],
        vec![
            0.1, 0.4, -0.3, 0.8, 0.0, -0.5, //
            1.2, -0.7, 0.2, 0.3, -1.1, 0.6,
        ],
    )?;

    let cfg = QuantConfig::ternary();
    let ternary = quantize_ternary(&w, &cfg)?;
    let packed = encode(&ternary, 5)?;
    let from_packed = packed_forward(&x, &spec, &packed, ternary.beta(), &cfg)?;
    let dense = ternary_conv1d_forward(&x, &spec, &ternary, &cfg)?;
    assert_eq!(from_packed, dense);
    println!("ternary: {:?}", from_packed.data());

    let cfg4 = QuantConfig::int(4);
    let int4 = quantize_b_bit(&w, &cfg4)?;
    println!("int4:    {:?}", int_conv1d_forward(&x, &spec, &int4, &cfg4)?.data());
    Ok(())
}
