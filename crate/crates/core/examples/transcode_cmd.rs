//! Prints the archive transcode command and the raw decode that feeds the
//! pipeline.
//!
//!     cargo run --example transcode_cmd -- <input> <output> [frames.rgb]

use dyadic_activity::pipeline::{raw_decode_command, transcode_command};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let input = args.first().map_or("<input>", String::as_str);
    let output = args.get(1).map_or("<output>", String::as_str);
    println!("{}", transcode_command(input, output));
    if let Some(raw) = args.get(2) {
        println!("{}", raw_decode_command(output, raw));
    }
}
