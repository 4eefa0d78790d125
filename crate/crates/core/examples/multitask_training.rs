//! Trains the multitask network at a few classification weights on one
//! speaker split and prints the validation curve.
//!
//!     cargo run --release --example multitask_training

use emocolor::experiment::{self, SyntheticConfig};
use emocolor::labels::Session;
use emocolor::neural::{self, Dataset, RegressionTarget, TrainConfig};
use emocolor::svr::Standardizer;

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn main() -> emocolor::Result<()> {
    let data = experiment::make_synthetic_benchmark(&SyntheticConfig::default())?;
    let split = |s: Session| -> emocolor::Result<(Vec<String>, Dataset)> {
        let ids: Vec<String> = data
            .metas
            .iter()
            .filter(|m| m.session == s)
            .map(|m| m.utterance_id.clone())
            .collect();
        let labels: Vec<_> = ids.iter().map(|i| data.labels.iter().find(|l| &l.utterance_id == i).unwrap()).collect();
        let targets = labels.iter().map(|l| RegressionTarget::from_color(&l.label)).collect::<emocolor::Result<Vec<_>>>()?;
        let emotions = ids.iter().map(|i| data.metas.iter().find(|m| &m.utterance_id == i).unwrap().emotion).collect();
        let x = data.features.matrix(&ids)?;
        Ok((ids, Dataset::new(x, &targets, emotions)?))
    };
    let (_, mut train) = split(Session::Regular)?;
    let (_, mut val) = split(Session::PhraseFree)?;
    let st = Standardizer::fit(train.features.view())?;
    train.features = st.transform(train.features.view())?;
    val.features = st.transform(val.features.view())?;

    for alpha in [0.0, 0.5, 1.0] {
        let cfg = TrainConfig { alpha, learning_rate: 1e-3, epochs: 10, ..TrainConfig::default() };
        let out = neural::train(&train, Some(&val), &cfg)?;
        println!("alpha = {alpha}: kept epoch {}", out.best_epoch);
        println!("  epoch   loss   hue AE  sat CCC  val CCC  accuracy");
        for r in &out.history {
            println!(
                "  {:>5} {:>6.3} {:>8} {:>8} {:>8} {:>9}",
                r.epoch, r.train_loss, fmt(r.hue_ae), fmt(r.sat_ccc), fmt(r.val_ccc), fmt(r.accuracy)
            );
        }
    }
    Ok(())
}
