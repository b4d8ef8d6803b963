use std::path::PathBuf;

use panosum_core::synthetic;

fn main() {
    let mut args = std::env::args().skip(1);
    let kind = args.next().unwrap_or_else(|| "two-arc".into());
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let seq = match kind.as_str() {
        "two-arc" => synthetic::two_arc_sequence(0),
        "dolly" => synthetic::dolly_sequence(0),
        "orbit" => synthetic::orbit_sequence(0),
        "static" => synthetic::static_sequence(8, 0),
        other => panic!("unknown sequence {other}"),
    };
    seq.write_to(&dir.join("frames"), &dir.join("intrinsics.json")).expect("write");
    println!("{} frames -> {}", seq.frames.len(), dir.display());
}
