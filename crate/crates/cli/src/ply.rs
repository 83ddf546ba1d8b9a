use std::fmt::Write as _;

use partfuse::data::{derive_seed, Point};

const COLOR_STREAM: u64 = 0x504c_5943;

/// Fixed RGB color of an instance id.
pub fn instance_color(id: usize) -> [u8; 3] {
    let h = derive_seed(COLOR_STREAM, id as u64);
    [(h >> 16) as u8, (h >> 8) as u8, h as u8]
}

/// ASCII PLY with one colored vertex per point.
pub fn write_ply(points: &[Point], inst: &[usize]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", points.len()).unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}").unwrap();
    }
    for c in ["red", "green", "blue"] {
        writeln!(out, "property uchar {c}").unwrap();
    }
    out.push_str("end_header\n");
    for (p, &id) in points.iter().zip(inst) {
        let [r, g, b] = instance_color(id);
        writeln!(
            out,
            "{} {} {} {r} {g} {b}",
            p[0] as f32, p[1] as f32, p[2] as f32
        )
        .unwrap();
    }
    out
}
