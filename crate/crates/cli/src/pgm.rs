//! Portable graymap output.
//!
//! Values are min-max scaled to `0..=255`; a constant field maps to 0.
//! Image row `j` is field line `j`, so the picture has the field file's
//! orientation (`y` increasing downwards).

use vidgp::grid::ScalarField;

fn levels(field: &ScalarField) -> Vec<u8> {
    let (lo, hi) = field.min_max();
    let span = hi - lo;
    field
        .values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// Binary (`P5`) graymap, `nx` wide and `ny` high.
pub fn to_pgm(field: &ScalarField) -> Vec<u8> {
    let g = field.grid();
    let mut out = format!("P5\n{} {}\n255\n", g.nx(), g.ny()).into_bytes();
    out.extend(levels(field));
    out
}

/// Plain (`P2`) graymap, one image row per line.
pub fn to_plain_pgm(field: &ScalarField) -> String {
    let g = field.grid();
    let mut out = format!("P2\n{} {}\n255\n", g.nx(), g.ny());
    for row in levels(field).chunks(g.nx()) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
