//! Hue agreement for a handful of annotator sets.
//!
//!     cargo run --example circular_agreement

use emocolor::circular;

fn main() -> emocolor::Result<()> {
    let sets: [(&str, Vec<f64>); 5] = [
        ("unanimous red", vec![0.0; 10]),
        ("red across the wrap", vec![342.0, 342.0, 0.0, 0.0, 18.0, 18.0, 0.0, 342.0, 18.0, 0.0]),
        ("two camps", vec![0.0, 0.0, 0.0, 0.0, 0.0, 90.0, 90.0, 90.0, 90.0, 90.0]),
        ("blue-purple", vec![234.0, 252.0, 270.0, 252.0, 234.0, 288.0, 252.0, 270.0, 216.0, 252.0]),
        ("opposites", vec![0.0, 180.0]),
    ];
    println!("{:<22} {:>9} {:>8} {:>10}", "set", "mean", "R", "std (deg)");
    for (name, hues) in &sets {
        let r = circular::mean_resultant_length(hues)?;
        let mean = circular::circular_mean(hues).map(|m| format!("{m:.2}")).unwrap_or_else(|_| "undef".into());
        let (std, infinite) = circular::circular_std_or_inf(hues)?;
        let std = if infinite { "inf".to_string() } else { format!("{std:.3}") };
        println!("{name:<22} {mean:>9} {r:>8.4} {std:>10}");
    }

    // the arithmetic mean of 350 and 10 is 180, the circular mean is 0
    let m = circular::circular_mean(&[350.0, 10.0])?;
    println!("\ncircular mean of 350 and 10: {m:.1}");
    println!("angular error 350 vs 10: {:.1}", circular::angular_error(350.0, 10.0)?);
    Ok(())
}
