//! Acceptance gate. Each criterion prints one PASS/FAIL line; any failure
//! makes the process exit nonzero.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ternq::codec::{
    decode_values, encode, encode_values, huffman_decode, huffman_encode, packed_size_bytes, PatternTable, StorageMode,
};
use ternq::format::{
    reduction_percent, FloatArchive, LayerKind, LayerRecord, LayerWeights, QuantArchive, SizeEntry, SizeReport,
};
use ternq::kernels::{
    packed_forward, packed_linear_forward, ternary_conv1d_forward, ternary_linear_forward, Conv1dSpec,
};
use ternq::qat::{run_experiment, Activation, ExperimentConfig, FakeQuantLayer, LayerMode, LayerSpec, Model};
use ternq::quant::{quantize_b_bit, quantize_ternary, LAYER_NORM_EPS};
use ternq::{FloatTensor, IntQuantTensor, QuantConfig, TernaryTensor, WeightBits};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sd: f32) -> Vec<f32> {
    let d = Normal::new(0.0f32, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

fn random_trits(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.gen_range(-1i8..=1)).collect()
}

// 1 ------------------------------------------------------------------------

fn size_arithmetic() -> Outcome {
    let n = 256 * 256 * 5;
    let ideal = packed_size_bytes(n, StorageMode::Ideal);
    let raw = packed_size_bytes(n, StorageMode::RawInt8);
    let indexed = packed_size_bytes(n, StorageMode::Indexed);
    // Independent evaluation: ln(3)/ln(2) bits per weight.
    let expected_ideal = n as f64 * (3f64.ln() / 2f64.ln()) / 8.0;
    ensure((ideal - expected_ideal).abs() < 1e-6, || format!("ideal {ideal} vs {expected_ideal}"))?;
    ensure(format!("{ideal:.2}") == "64920.06", || format!("ideal {ideal:.2} != 64920.06"))?;
    ensure((ideal / 1024.0 - 63.4).abs() <= 0.05, || format!("ideal {:.3} KiB", ideal / 1024.0))?;
    ensure(raw == 327_680.0, || format!("raw {raw}"))?;
    ensure(indexed == 65_536.0, || format!("indexed {indexed}"))?;
    ensure(format!("{:.0}", raw / 1024.0) == "320", || "raw KiB".into())?;
    ensure(format!("{:.1}", indexed / 1024.0) == "64.0", || "indexed KiB".into())?;
    Ok(format!("ideal {ideal:.2} B ({:.1} KiB), raw-int8 {raw} B, indexed {indexed} B", ideal / 1024.0))
}

// 2 ------------------------------------------------------------------------

fn reduction_formula() -> Outcome {
    let pct = reduction_percent(25.66, 4.39);
    ensure(format!("{pct:.1}") == "82.9", || format!("{pct:.1} != 82.9"))?;
    ensure(format!("{pct:.0}") == "83", || format!("{pct:.0} != 83"))?;
    // Same figure through a size report (bytes in units of 10 kB).
    let report = SizeReport::from_entries(vec![SizeEntry {
        name: "model".into(),
        kind: LayerKind::TernaryIndexed,
        num_weights: 641_500,
        raw_float_bytes: 2_566_000,
        payload_bytes: 439_000,
        stored_bytes: 439_000,
    }]);
    let shown = format!("{:.1}", report.reduction_percent());
    ensure(shown == "82.9", || format!("report shows {shown}"))?;
    let csv = report.to_csv();
    ensure(csv.lines().last().unwrap().ends_with(",82.89"), || format!("csv total row {:?}", csv.lines().last()))?;
    Ok(format!("25.66 MB -> 4.39 MB: {pct:.1}% ({pct:.0}%)"))
}

// 3 ------------------------------------------------------------------------

fn codec_exhaustive() -> Outcome {
    let mut cases = 0u64;
    for len in 1..=12usize {
        let total = 3usize.pow(len as u32);
        let mut v = vec![-1i8; len];
        for _ in 0..total {
            let packed = encode_values(&v, vec![len], 5).map_err(|e| e.to_string())?;
            ensure(packed.indices().len() == len.div_ceil(5), || format!("index count for length {len}"))?;
            let back = decode_values(&packed).map_err(|e| e.to_string())?;
            ensure(back == v, || format!("round trip failed for {v:?}"))?;
            cases += 1;
            // Odometer over {-1, 0, 1}.
            for d in v.iter_mut() {
                if *d < 1 {
                    *d += 1;
                    break;
                }
                *d = -1;
            }
        }
    }
    ensure(cases == 797_160, || format!("{cases} cases"))?;
    let table = PatternTable::new(5).map_err(|e| e.to_string())?;
    for (block, index) in [([0i8; 5], 0u8), ([1; 5], 121), ([-1; 5], 242)] {
        ensure(table.index_of(&block).ok() == Some(index), || format!("{block:?} -> {index}"))?;
        ensure(table.pattern(index).ok() == Some(&block[..]), || format!("{index} -> {block:?}"))?;
    }
    Ok(format!("{cases} vectors round-trip; 0/121/242 map to zeros/ones/minus-ones"))
}

// 4 ------------------------------------------------------------------------

/// Brute-force absmean quantizer: f64 mean, f32 division, explicit
/// half-away-from-zero rounding.
fn oracle_quantize(w: &[f32], lo: f32, hi: f32, eps: f32) -> (Vec<i8>, f32) {
    let mut sum = 0.0f64;
    for &x in w {
        sum += if x < 0.0 { -x as f64 } else { x as f64 };
    }
    let beta = (sum / w.len() as f64) as f32;
    let q = w
        .iter()
        .map(|&x| {
            let mut v = x / (beta + eps);
            if v < lo {
                v = lo;
            }
            if v > hi {
                v = hi;
            }
            let m = ((v.abs() as f64) + 0.5).floor();
            (if v < 0.0 { -m } else { m }) as i8
        })
        .collect();
    (q, beta)
}

fn random_weights(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = rng.gen_range(1..=600);
    let scale = 10f32.powf(rng.gen_range(-4.0..2.0));
    let mut w: Vec<f32> = match rng.gen_range(0..4) {
        0 => normal_vec(rng, n, scale),
        1 => (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
        2 => (0..n).map(|_| scale * (rng.gen::<f32>() - 0.5).powi(5) * 32.0).collect(),
        _ => (0..n).map(|_| scale * rng.gen_range(-3i32..=3) as f32 / 2.0).collect(),
    };
    if rng.gen_bool(0.2) {
        for v in w.iter_mut().step_by(3) {
            *v = 0.0;
        }
    }
    w
}

fn quantization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut int_checks = 0usize;
    let mut int4_min = i8::MAX;
    let mut int4_max = i8::MIN;
    for case in 0..10_000 {
        let w = random_weights(&mut rng);
        let t = FloatTensor::new(vec![w.len()], w.clone()).map_err(|e| e.to_string())?;
        let cfg = QuantConfig::ternary();

        let got = quantize_ternary(&t, &cfg).map_err(|e| e.to_string())?;
        let (want, beta) = oracle_quantize(&w, -1.0, 1.0, cfg.epsilon);
        ensure(got.values() == want.as_slice(), || format!("case {case}: ternary values differ"))?;
        ensure((got.beta() - beta).abs() <= 1e-7 * beta.abs(), || {
            format!("case {case}: beta {} vs {beta}", got.beta())
        })?;

        let bits = if case % 2 == 0 { 4 } else { rng.gen_range(2..=8) };
        let cfg = QuantConfig::int(bits);
        let q = (1i32 << (bits - 1)) as f32;
        let got = quantize_b_bit(&t, &cfg).map_err(|e| e.to_string())?;
        let (want, beta) = oracle_quantize(&w, -q, q - 1.0, cfg.epsilon);
        ensure(got.values() == want.as_slice(), || format!("case {case}: {bits}-bit values differ"))?;
        ensure((got.beta() - beta).abs() <= 1e-7 * beta.abs(), || format!("case {case}: {bits}-bit beta"))?;
        if bits == 4 {
            for &v in got.values() {
                int4_min = int4_min.min(v);
                int4_max = int4_max.max(v);
            }
        }
        int_checks += 1;
    }
    ensure(int4_min >= -8 && int4_max <= 7, || format!("4-bit range [{int4_min}, {int4_max}]"))?;
    Ok(format!("10000 tensors ternary + {int_checks} b-bit exact; 4-bit range [{int4_min}, {int4_max}]"))
}

// 5 ------------------------------------------------------------------------

fn oracle_layer_norm(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| o * len * inner + k * inner + i;
            let mean = (0..len).map(|k| x[idx(k)]).sum::<f64>() / len as f64;
            let var = (0..len).map(|k| (x[idx(k)] - mean).powi(2)).sum::<f64>() / len as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
            for k in 0..len {
                out[idx(k)] = (x[idx(k)] - mean) * r;
            }
        }
    }
    out
}

/// Layer norm, activation scaling and clipping, then returns `(x~, gamma)`.
fn oracle_activation(x: &[f64], outer: usize, len: usize, inner: usize) -> (Vec<f64>, f64) {
    let u = oracle_layer_norm(x, outer, len, inner);
    let gamma = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let qp = 128.0;
    let eps = 1e-5;
    let lim = qp - eps;
    (u.iter().map(|v| (v * qp / gamma.max(eps)).clamp(-lim, lim)).collect(), gamma)
}

fn oracle_conv(x: &[f64], w: &[i8], beta: f64, spec: &Conv1dSpec, t: usize) -> Vec<f64> {
    let (xq, gamma) = oracle_activation(x, 1, spec.c_in, t);
    let t_out = (t + 2 * spec.padding - spec.kernel_size) / spec.stride + 1;
    let mut y = vec![0.0; spec.c_out * t_out];
    for o in 0..spec.c_out {
        for to in 0..t_out {
            let mut acc = 0.0;
            for i in 0..spec.c_in {
                for k in 0..spec.kernel_size {
                    let pos = (to * spec.stride + k) as isize - spec.padding as isize;
                    if pos >= 0 && (pos as usize) < t {
                        acc += w[(o * spec.c_in + i) * spec.kernel_size + k] as f64 * xq[i * t + pos as usize];
                    }
                }
            }
            y[o * t_out + to] = acc * gamma * beta / 128.0;
        }
    }
    y
}

fn oracle_linear(x: &[f64], w: &[i8], beta: f64, rows: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let (xq, gamma) = oracle_activation(x, rows, n_in, 1);
    let mut y = vec![0.0; rows * n_out];
    for r in 0..rows {
        for o in 0..n_out {
            let acc: f64 = (0..n_in).map(|i| w[o * n_in + i] as f64 * xq[r * n_in + i]).sum();
            y[r * n_out + o] = acc * gamma * beta / 128.0;
        }
    }
    y
}

fn inf_norm_ratio(got: &[f32], want: &[f64]) -> f64 {
    let err = got.iter().zip(want).fold(0.0f64, |m, (g, w)| m.max((*g as f64 - w).abs()));
    let scale = want.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

fn packed_inference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = QuantConfig::default();
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let block = rng.gen_range(1..=5);
        let beta = rng.gen_range(0.01f32..2.0);
        let bits = |v: &FloatTensor| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let err = if case % 2 == 0 {
            let spec = Conv1dSpec::new(rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=5))
                .with_stride(rng.gen_range(1..=3))
                .with_padding(rng.gen_range(0..=2));
            let t = rng.gen_range(spec.kernel_size.saturating_sub(2 * spec.padding).max(1)..=40);
            let w = TernaryTensor::new(
                spec.weight_shape(),
                random_trits(&mut rng, spec.c_out * spec.c_in * spec.kernel_size),
                beta,
            )
            .map_err(|e| e.to_string())?;
            let x = FloatTensor::new(vec![spec.c_in, t], normal_vec(&mut rng, spec.c_in * t, 3.0))
                .map_err(|e| e.to_string())?;
            let packed = encode(&w, block).map_err(|e| e.to_string())?;
            let a = packed_forward(&x, &spec, &packed, beta, &cfg).map_err(|e| e.to_string())?;
            let b = ternary_conv1d_forward(&x, &spec, &w, &cfg).map_err(|e| e.to_string())?;
            ensure(a.shape() == b.shape() && bits(&a) == bits(&b), || format!("case {case}: conv not bit-exact"))?;
            let xf: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            inf_norm_ratio(a.data(), &oracle_conv(&xf, w.values(), beta as f64, &spec, t))
        } else {
            let (rows, n_in, n_out) = (rng.gen_range(1..=6), rng.gen_range(1..=48), rng.gen_range(1..=24));
            let w = TernaryTensor::new(vec![n_out, n_in], random_trits(&mut rng, n_out * n_in), beta)
                .map_err(|e| e.to_string())?;
            let x = FloatTensor::new(vec![rows, n_in], normal_vec(&mut rng, rows * n_in, 3.0))
                .map_err(|e| e.to_string())?;
            let packed = encode(&w, block).map_err(|e| e.to_string())?;
            let a = packed_linear_forward(&x, &packed, beta, &cfg).map_err(|e| e.to_string())?;
            let b = ternary_linear_forward(&x, &w, &cfg).map_err(|e| e.to_string())?;
            ensure(a.shape() == b.shape() && bits(&a) == bits(&b), || format!("case {case}: linear not bit-exact"))?;
            let xf: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            inf_norm_ratio(a.data(), &oracle_linear(&xf, w.values(), beta as f64, rows, n_in, n_out))
        };
        worst = worst.max(err);
        ensure(err <= 1e-5, || format!("case {case}: oracle relative error {err:.3e}"))?;
    }
    Ok(format!("1000 triples bit-exact; worst oracle error {worst:.2e} (limit 1e-5)"))
}

// 6 ------------------------------------------------------------------------

fn random_layer(rng: &mut ChaCha8Rng, i: usize) -> Result<LayerRecord, String> {
    let rank = rng.gen_range(1..=3);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=9)).collect();
    let n: usize = shape.iter().product();
    let beta = rng.gen_range(0.0f32..3.0);
    let weights = match i % 4 {
        0 => {
            let values = random_trits(rng, n);
            let packed = encode_values(&values, shape, rng.gen_range(1..=5)).map_err(|e| e.to_string())?;
            LayerWeights::Ternary { packed, beta }
        }
        1 => {
            let values = (0..n).map(|_| rng.gen_range(-8i8..=7)).collect();
            LayerWeights::Int4(IntQuantTensor::new(shape, values, 4, beta).map_err(|e| e.to_string())?)
        }
        2 => {
            let values = (0..n).map(|_| rng.gen_range(-128i8..=127)).collect();
            LayerWeights::Int8(IntQuantTensor::new(shape, values, 8, beta).map_err(|e| e.to_string())?)
        }
        _ => LayerWeights::Float32(FloatTensor::new(shape, normal_vec(rng, n, 1.0)).map_err(|e| e.to_string())?),
    };
    Ok(LayerRecord::new(format!("block{i}.w{}", rng.gen_range(0..100)), weights).with_huffman(rng.gen_bool(0.5)))
}

fn format_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut short_blocks = 0;
    let mut huffman_layers = 0;
    let mut layers_seen = 0;
    for case in 0..300 {
        let n_layers = rng.gen_range(0..=8);
        let layers = (0..n_layers).map(|i| random_layer(&mut rng, i + case)).collect::<Result<Vec<_>, _>>()?;
        for l in &layers {
            if let LayerWeights::Ternary { packed, .. } = &l.weights {
                if packed.total_length() % packed.block_size() != 0 {
                    short_blocks += 1;
                }
            }
            huffman_layers += l.huffman as usize;
        }
        layers_seen += layers.len();
        let archive = QuantArchive::new(layers);
        let bytes = archive.write().map_err(|e| e.to_string())?;
        ensure(archive.write().map_err(|e| e.to_string())? == bytes, || format!("case {case}: nondeterministic"))?;
        let back = QuantArchive::read(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == archive, || format!("case {case}: structural mismatch"))?;
        ensure(back.write().map_err(|e| e.to_string())? == bytes, || format!("case {case}: rewrite differs"))?;

        let mut floats = FloatArchive::new();
        for (i, l) in archive.layers.iter().enumerate() {
            floats.push(format!("t{i}"), l.weights.dequantize().map_err(|e| e.to_string())?);
        }
        let fbytes = floats.write().map_err(|e| e.to_string())?;
        ensure(FloatArchive::read(&fbytes).map_err(|e| e.to_string())? == floats, || format!("case {case}: btw"))?;
        ensure(floats.write().map_err(|e| e.to_string())? == fbytes, || format!("case {case}: btw nondeterministic"))?;
    }
    ensure(short_blocks > 0 && huffman_layers > 0, || "coverage".into())?;
    Ok(format!(
        "300 archives, {layers_seen} layers ({short_blocks} short final blocks, {huffman_layers} Huffman-coded)"
    ))
}

// 7 ------------------------------------------------------------------------

fn huffman_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut details = Vec::new();
    for trial in 0..5 {
        let n = 10_000usize;
        let symbols: Vec<u8> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    [0u8, 121, 242][rng.gen_range(0..3)]
                } else {
                    let mut s = rng.gen_range(1u8..=239);
                    if s >= 121 {
                        s += 1;
                    }
                    s
                }
            })
            .collect();
        let mut counts = [0u64; 256];
        for &s in &symbols {
            counts[s as usize] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.log2()
            })
            .sum();
        let coded = huffman_encode(&symbols).map_err(|e| e.to_string())?;
        let bits = coded.payload_bits(&symbols) as f64;
        ensure(h * n as f64 <= bits && bits <= (h + 1.0) * n as f64, || {
            format!("trial {trial}: {bits} bits outside [{:.0}, {:.0}]", h * n as f64, (h + 1.0) * n as f64)
        })?;
        ensure(huffman_decode(&coded).map_err(|e| e.to_string())? == symbols, || "decode".into())?;
        let payload = (bits / 8.0).ceil() as usize;
        ensure(payload + 256 < n, || format!("trial {trial}: {payload} + 256 >= {n}"))?;
        let serialized = coded.to_bytes().len();
        ensure(serialized < n, || format!("trial {trial}: serialized {serialized} >= {n}"))?;
        if trial == 0 {
            details.push(format!(
                "H={h:.3} bits/sym, {:.3} bits/sym coded, {} B stored vs {n} B raw",
                bits / n as f64,
                serialized
            ));
        }
    }
    Ok(format!("5 streams; {}", details.join("")))
}

// 8 ------------------------------------------------------------------------

fn qat_vs_ptq() -> Outcome {
    let cfg = ExperimentConfig::default();
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    ensure(report.records.len() >= 5 && report.all_finite(), || "report incomplete".into())?;
    for r in &report.records {
        println!(
            "    seed {}: float {:.5}  ptq {:.5}  qat {:.5}{}",
            r.seed,
            r.float_loss,
            r.ptq_loss,
            r.qat_loss,
            if r.float_loss <= r.qat_loss { "" } else { "  (qat below float)" }
        );
    }
    let (ptq, qat) = (report.ptq_summary(), report.qat_summary());
    let msg = format!(
        "{} seeds, {} steps: ptq {ptq}, qat {qat}, gap {:.5} vs qat std {:.5}",
        report.records.len(),
        cfg.steps,
        ptq.mean - qat.mean,
        qat.std
    );
    ensure(report.qat_beats_ptq(), || msg.clone())?;
    Ok(msg)
}

// 9 ------------------------------------------------------------------------

#[derive(Clone)]
enum OracleLayer {
    Linear { n_in: usize, n_out: usize },
    Conv { spec: Conv1dSpec },
}

/// Float64 surrogate network: layer norm, then linear or conv, tanh between layers.
fn oracle_loss(
    layers: &[OracleLayer],
    weights: &[Vec<f64>],
    x: &[f64],
    x_shape: (usize, usize),
    target: &[f64],
) -> f64 {
    let (mut a, mut b) = x_shape;
    let mut h = x.to_vec();
    for (li, (layer, w)) in layers.iter().zip(weights).enumerate() {
        match layer {
            OracleLayer::Linear { n_in, n_out } => {
                let u = oracle_layer_norm(&h, a, *n_in, 1);
                let mut y = vec![0.0; a * n_out];
                for r in 0..a {
                    for o in 0..*n_out {
                        y[r * n_out + o] = (0..*n_in).map(|i| w[o * n_in + i] * u[r * n_in + i]).sum();
                    }
                }
                b = *n_out;
                h = y;
            }
            OracleLayer::Conv { spec } => {
                let t = b;
                let u = oracle_layer_norm(&h, 1, spec.c_in, t);
                let t_out = (t + 2 * spec.padding - spec.kernel_size) / spec.stride + 1;
                let mut y = vec![0.0; spec.c_out * t_out];
                for o in 0..spec.c_out {
                    for to in 0..t_out {
                        let mut acc = 0.0;
                        for i in 0..spec.c_in {
                            for k in 0..spec.kernel_size {
                                let pos = (to * spec.stride + k) as isize - spec.padding as isize;
                                if pos >= 0 && (pos as usize) < t {
                                    acc += w[(o * spec.c_in + i) * spec.kernel_size + k] * u[i * t + pos as usize];
                                }
                            }
                        }
                        y[o * t_out + to] = acc;
                    }
                }
                a = spec.c_out;
                b = t_out;
                h = y;
            }
        }
        if li + 1 < layers.len() {
            h.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    h.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / h.len() as f64
}

struct GradCheck {
    worst: f64,
}

/// Relative error with a floor tied to the gradient's own scale, so entries
/// that are numerically zero do not dominate.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn check_network(rng: &mut ChaCha8Rng, stats: &mut GradCheck) -> Result<(), String> {
    let depth = rng.gen_range(1..=3);
    let conv = rng.gen_bool(0.5);
    let cfg = QuantConfig::default();
    let mut specs = Vec::new();
    let mut oracle = Vec::new();
    let (x_shape, out_len);
    if conv {
        let t = rng.gen_range(6..=12);
        let mut c = rng.gen_range(2..=4);
        let mut len = t;
        for _ in 0..depth {
            let k = rng.gen_range(1..=3);
            let spec = Conv1dSpec::new(c, rng.gen_range(2..=4), k).with_padding(rng.gen_range(0..=k / 2));
            len = (len + 2 * spec.padding - k) / spec.stride + 1;
            c = spec.c_out;
            specs.push(LayerSpec::Conv1d(spec));
            oracle.push(OracleLayer::Conv { spec });
        }
        let c_in = match specs[0] {
            LayerSpec::Conv1d(s) => s.c_in,
            _ => unreachable!(),
        };
        x_shape = (c_in, t);
        out_len = c * len;
    } else {
        let rows = rng.gen_range(1..=3);
        let mut n = rng.gen_range(2..=6);
        let n0 = n;
        for _ in 0..depth {
            let out = rng.gen_range(2..=6);
            specs.push(LayerSpec::Linear(ternq::kernels::LinearSpec::new(n, out)));
            oracle.push(OracleLayer::Linear { n_in: n, n_out: out });
            n = out;
        }
        x_shape = (rows, n0);
        out_len = rows * n;
    }

    let mut model =
        Model::init(&specs, Activation::Tanh, cfg, LayerMode::FloatPassthrough, rng).map_err(|e| e.to_string())?;
    let x = normal_vec(rng, x_shape.0 * x_shape.1, 1.0);
    let target = normal_vec(rng, out_len, 1.0);
    let xt = FloatTensor::new(vec![x_shape.0, x_shape.1], x.clone()).map_err(|e| e.to_string())?;

    let y = model.forward(&xt).map_err(|e| e.to_string())?;
    ensure(y.len() == out_len, || "output length".into())?;
    let scale = 2.0 / out_len as f32;
    let g: Vec<f32> = y.data().iter().zip(&target).map(|(a, b)| (a - b) * scale).collect();
    model.zero_grad();
    model.backward(&FloatTensor::new(y.shape().to_vec(), g).unwrap()).map_err(|e| e.to_string())?;

    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let tf: Vec<f64> = target.iter().map(|&v| v as f64).collect();
    let mut w64: Vec<Vec<f64>> =
        model.layers.iter().map(|l| l.weights().data().iter().map(|&v| v as f64).collect()).collect();

    let mut numeric = Vec::new();
    let mut analytic = Vec::new();
    let h = 1e-6;
    for li in 0..w64.len() {
        for wi in 0..w64[li].len() {
            let orig = w64[li][wi];
            w64[li][wi] = orig + h;
            let up = oracle_loss(&oracle, &w64, &xf, x_shape, &tf);
            w64[li][wi] = orig - h;
            let down = oracle_loss(&oracle, &w64, &xf, x_shape, &tf);
            w64[li][wi] = orig;
            numeric.push((up - down) / (2.0 * h));
            analytic.push(model.layers[li].grad()[wi] as f64);
        }
    }
    let floor = 1e-3 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, n) in analytic.iter().zip(&numeric) {
        let e = rel_err(*a, *n, floor);
        stats.worst = stats.worst.max(e);
        ensure(e < 1e-3, || format!("analytic {a:.6e} vs numeric {n:.6e} (rel {e:.2e})"))?;
    }
    Ok(())
}

/// Quantized layer vs. a float layer holding the dequantized weights: the
/// weight gradients must be bitwise identical for any upstream gradient.
fn ste_identity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let spec = LayerSpec::Conv1d(Conv1dSpec::new(3, 4, 3).with_padding(1));
    for bits in [WeightBits::Ternary, WeightBits::Int(4), WeightBits::Int(8)] {
        let cfg = QuantConfig { weight_bits: bits, ..QuantConfig::default() };
        let mut q = FakeQuantLayer::init(spec, cfg, LayerMode::Quantized, rng).map_err(|e| e.to_string())?;
        let eff = q.quantized().map_err(|e| e.to_string())?.unwrap().dequantize();
        let mut f = FakeQuantLayer::new(spec, cfg, LayerMode::FloatPassthrough, eff).map_err(|e| e.to_string())?;
        let x = FloatTensor::new(vec![3, 10], normal_vec(rng, 30, 1.0)).unwrap();
        let yq = q.forward(&x).map_err(|e| e.to_string())?;
        let yf = f.forward(&x).map_err(|e| e.to_string())?;
        ensure(yq.data().iter().zip(yf.data()).all(|(a, b)| (a - b).abs() <= 1e-5 * (1.0 + b.abs())), || {
            format!("{bits}: forward mismatch")
        })?;
        for _ in 0..10 {
            let g = FloatTensor::new(yq.shape().to_vec(), normal_vec(rng, yq.len(), 1.0)).unwrap();
            let gq = ternq::qat::ste_backward(&mut q, &g).map_err(|e| e.to_string())?;
            let gf = ternq::qat::ste_backward(&mut f, &g).map_err(|e| e.to_string())?;
            let same = gq.data().iter().zip(gf.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("{bits}: STE gradient differs from effective-weight gradient"))?;
        }
    }
    Ok(())
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut stats = GradCheck { worst: 0.0 };
    for net in 0..100 {
        check_network(&mut rng, &mut stats).map_err(|e| format!("network {net}: {e}"))?;
    }
    ste_identity(&mut rng)?;
    Ok(format!("100 networks, worst relative error {:.2e} (limit 1e-3); STE backward is the identity", stats.worst))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 size arithmetic", size_arithmetic),
        ("2 reduction formula", reduction_formula),
        ("3 codec exhaustive", codec_exhaustive),
        ("4 quantization oracle", quantization_oracle),
        ("5 packed inference", packed_inference),
        ("6 format round trip", format_round_trip),
        ("7 huffman bounds", huffman_bounds),
        ("8 qat beats ptq", qat_vs_ptq),
        ("9 gradient checks", gradient_checks),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
