//! RBF ε-SVR on hue components and on saturation, with grid search over
//! a train/validation split of the synthetic corpus.
//!
//!     cargo run --release --example svr_hue

use emocolor::experiment::{self, SyntheticConfig};
use emocolor::labels::Session;
use emocolor::metrics::{self, PairedSeries};
use emocolor::svr::{self, FittedSvr, GridTarget, Standardizer, SvrGrid};

fn main() -> emocolor::Result<()> {
    let data = experiment::make_synthetic_benchmark(&SyntheticConfig::default())?;
    let ids = |s: Session, held_out: bool| -> Vec<String> {
        data.metas
            .iter()
            .filter(|m| m.session == s && (m.speaker_id == "spk1") == held_out)
            .map(|m| m.utterance_id.clone())
            .collect()
    };
    let (train, val, test) = (ids(Session::Regular, false), ids(Session::PhraseFree, false), ids(Session::PhraseFree, true));
    let label = |id: &String| data.labels.iter().find(|l| &l.utterance_id == id).unwrap().label;

    let st = Standardizer::fit(data.features.matrix(&train)?.view())?;
    let x = |ids: &[String]| st.transform(data.features.matrix(ids)?.view());
    let (xt, xv, xs) = (x(&train)?, x(&val)?, x(&test)?);
    let points = SvrGrid::default().points(data.features.dimension)?;

    let hues = |ids: &[String]| ids.iter().map(|i| label(i).hue_deg).collect::<Vec<_>>();
    let hue = svr::grid_search(xt.view(), xv.view(), GridTarget::Hue { train: &hues(&train), val: &hues(&val) }, &points)?;
    println!("hue: {} grid points, best validation AE {:.2} at {:?}", hue.evaluated.len(), hue.best_score, hue.best_config);
    let FittedSvr::Hue(pair) = &hue.model else { unreachable!() };
    let pred: Vec<f64> = xs.rows().into_iter().map(|r| svr::predict_hue(pair, r)).collect::<emocolor::Result<_>>()?;
    println!("held-out speaker hue AE: {:.2} deg", metrics::mean_angular_error(&hues(&test), &pred)?);

    let sats = |ids: &[String]| ids.iter().map(|i| label(i).saturation).collect::<Vec<_>>();
    let sat = svr::grid_search(xt.view(), xv.view(), GridTarget::Scalar { train: &sats(&train), val: &sats(&val) }, &points)?;
    let FittedSvr::Scalar(model) = &sat.model else { unreachable!() };
    let pred: Vec<f64> = model.predict_batch(xs.view())?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let truth = sats(&test);
    println!(
        "saturation: validation CCC {:.4}, held-out CCC {:.4}, {} support vectors",
        sat.best_score,
        metrics::ccc(PairedSeries::new(&truth, &pred)?),
        model.support_vectors.len()
    );
    Ok(())
}
