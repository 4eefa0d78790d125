//! Prints the annotation tile palette and writes the HSV → hex fixture the
//! annotation UI checks itself against.
//!
//!     cargo run --example hsv_palette -- [hue_deg] [out.csv]

use emocolor::labels::{self, ColorLabel, HUE_BINS, HUE_BIN_DEG, SATURATION_STEPS, VALUE_STEPS};

fn main() -> emocolor::Result<()> {
    let mut args = std::env::args().skip(1);
    let hue: f64 = args.next().map(|s| s.parse().expect("hue in degrees")).unwrap_or(0.0);
    let out = args.next();

    println!("hue row:");
    for i in 0..HUE_BINS {
        let c = ColorLabel::new(i as f64 * HUE_BIN_DEG, 1.0, 1.0)?;
        print!("{:>4} {} ", c.hue_deg, c.to_hex());
        if i % 5 == 4 {
            println!();
        }
    }
    println!("\nsaturation/value grid at {hue} deg:");
    for v in VALUE_STEPS {
        for s in SATURATION_STEPS {
            print!("{} ", ColorLabel::new(hue, s, v)?.to_hex());
        }
        println!(" V={v}");
    }
    println!("black tile: {}", ColorLabel::new(hue, 0.0, 0.0)?.to_hex());

    let csv = labels::tile_fixture_csv(hue)?;
    match out {
        Some(path) => {
            std::fs::write(&path, &csv).map_err(|e| emocolor::Error::Io { path: path.clone().into(), source: e })?;
            println!("fixture written to {path}");
        }
        None => println!("\n{csv}"),
    }
    Ok(())
}
