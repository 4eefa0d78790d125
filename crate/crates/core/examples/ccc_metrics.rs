//! PCC vs CCC on a few prediction patterns, plus classification scores.
//!
//!     cargo run --example ccc_metrics

use emocolor::labels::Emotion;
use emocolor::metrics::{self, PairedSeries};

fn main() -> emocolor::Result<()> {
    let truth = [0.2, 0.4, 0.5, 0.6, 0.8, 0.9];
    let cases: [(&str, Vec<f64>); 5] = [
        ("exact", truth.to_vec()),
        ("shifted +0.2", truth.iter().map(|t| t + 0.2).collect()),
        ("compressed", truth.iter().map(|t| 0.5 + 0.3 * (t - 0.5)).collect()),
        ("constant mean", vec![0.5667; 6]),
        ("noisy", vec![0.25, 0.35, 0.55, 0.5, 0.85, 0.8]),
    ];
    println!("{:<14} {:>8} {:>8} {:>9}", "prediction", "PCC", "CCC", "CCC loss");
    for (name, pred) in &cases {
        let s = PairedSeries::new(&truth, pred)?;
        let pcc = metrics::pcc(s).map(|r| format!("{r:.4}")).unwrap_or_else(|_| "undef".into());
        println!("{name:<14} {pcc:>8} {:>8.4} {:>9.4}", metrics::ccc(s), metrics::ccc_loss(s));
    }

    let hue_truth = [10.0, 350.0, 120.0, 240.0];
    let hue_pred = [350.0, 20.0, 100.0, 250.0];
    println!("\nhue AE: {:.2} deg", metrics::mean_angular_error(&hue_truth, &hue_pred)?);

    use Emotion::*;
    let t = [Ang, Ang, Dis, Fea, Hap, Hap, Sad, Sur];
    let p = [Ang, Dis, Dis, Sad, Hap, Sur, Sad, Hap];
    let cm = metrics::confusion(&t, &p)?;
    println!("accuracy: {:.3}", metrics::accuracy(&t, &p)?);
    print!("{:>5}", "");
    for e in Emotion::ALL {
        print!("{:>5}", e.as_str());
    }
    println!();
    for a in Emotion::ALL {
        print!("{:>5}", a.as_str());
        for b in Emotion::ALL {
            print!("{:>5}", cm.get(a, b));
        }
        println!();
    }
    Ok(())
}
