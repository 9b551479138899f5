//! Storage cost of a 256x256x5 convolution under each storage mode.

use ternq::codec::{packed_size_bytes, StorageMode};
use ternq::format::reduction_percent;

fn main() {
    let n = 256 * 256 * 5;
    println!("{n} weights");
    for mode in StorageMode::ALL {
        let bytes = packed_size_bytes(n, mode);
        println!("  {:<11} {:>11.2} bytes  {:>6.1} KiB", mode.name(), bytes, bytes / 1024.0);
    }

    // Whole-model reduction from float32 to the indexed ternary archive.
    let pct = reduction_percent(25.66, 4.39);
    println!("25.66 MB -> 4.39 MB: {pct:.1}% smaller");
}
