//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use emocolor::neural::{self, LossSpec, MlpParams};
use ndarray::{Array2, ArrayView2};

// ---------------------------------------------------------------------------
// finite differences

/// Worst relative error between analytic and central-difference gradients
/// over every parameter, plus the count of parameters checked.
///
/// Entries where both gradients are below `abs_floor` are counted as exact.
pub struct GradCheck {
    pub worst_relative: f64,
    pub worst_absolute: f64,
    pub checked: usize,
    pub failures: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    labels: &[usize],
    spec: LossSpec,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> GradCheck {
    let (_, grads) = neural::backward(params, x, y, labels, spec).unwrap();
    let analytic: Vec<f64> = grads.buffers().iter().flat_map(|b| b.iter().copied()).collect();
    let loss_at = |p: &MlpParams| {
        let (r, l) = neural::forward(p, x).unwrap();
        neural::multitask_loss(r.view(), y, l.view(), labels, spec.alpha, spec.targets).unwrap()
    };
    let mut probe = params.clone();
    let mut flat = 0;
    let mut out = GradCheck {
        worst_relative: 0.0,
        worst_absolute: 0.0,
        checked: 0,
        failures: 0,
    };
    let n_buffers = probe.buffers().len();
    for b in 0..n_buffers {
        let len = probe.buffers()[b].len();
        for i in 0..len {
            let orig = probe.buffers()[b][i];
            probe.buffers_mut()[b][i] = orig + h;
            let up = loss_at(&probe);
            probe.buffers_mut()[b][i] = orig - h;
            let down = loss_at(&probe);
            probe.buffers_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat];
            flat += 1;
            out.checked += 1;
            let abs = (a - numeric).abs();
            out.worst_absolute = out.worst_absolute.max(abs);
            let scale = a.abs().max(numeric.abs());
            if scale < abs_floor {
                if abs > abs_floor {
                    out.failures += 1;
                }
                continue;
            }
            let rel = abs / scale;
            out.worst_relative = out.worst_relative.max(rel);
            if rel >= rel_tol && abs > abs_floor {
                out.failures += 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// ε-SVR dual by accelerated projected gradient
//
// Variables β = α − α*, γ = α + α* is not needed: we optimize the 2N-vector
// (α, α*) directly on the box [0, C]^{2N} intersected with Σα = Σα*.

pub fn rbf_gram(x: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
        (-gamma * d2).exp()
    })
}

/// Dual objective in minimization form:
/// `½ (α−α*)ᵀ K (α−α*) + ε Σ(α+α*) − Σ z (α−α*)`.
pub fn dual_objective(k: &Array2<f64>, z: &[f64], eps: f64, a: &[f64], a_star: &[f64]) -> f64 {
    let n = z.len();
    let beta: Vec<f64> = (0..n).map(|i| a[i] - a_star[i]).collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * k[[i, j]] * beta[j];
        }
    }
    0.5 * quad + eps * (a.iter().sum::<f64>() + a_star.iter().sum::<f64>())
        - z.iter().zip(&beta).map(|(zi, b)| zi * b).sum::<f64>()
}

/// Euclidean projection onto `{u ∈ [0,C]^N, w ∈ [0,C]^N : Σu = Σw}`.
///
/// The KKT conditions give `u = clip(p − λ)`, `w = clip(q + λ)` for a scalar
/// λ; `Σu − Σw` is non-increasing in λ, so λ is found by bisection.
fn project(p: &[f64], q: &[f64], c: f64) -> (Vec<f64>, Vec<f64>) {
    let gap = |lam: f64| -> f64 {
        p.iter().map(|v| (v - lam).clamp(0.0, c)).sum::<f64>() - q.iter().map(|v| (v + lam).clamp(0.0, c)).sum::<f64>()
    };
    let span = p.iter().chain(q).fold(0.0f64, |m, v| m.max(v.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    (
        p.iter().map(|v| (v - lam).clamp(0.0, c)).collect(),
        q.iter().map(|v| (v + lam).clamp(0.0, c)).collect(),
    )
}

pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub objective: f64,
}

/// FISTA with restart on the dual; Lipschitz bound `2·N` (RBF entries ≤ 1).
pub fn solve_dual_reference(k: &Array2<f64>, z: &[f64], c: f64, eps: f64, iterations: usize) -> DualSolution {
    let n = z.len();
    let lip = 2.0 * n as f64;
    let step = 1.0 / lip;
    let grad = |a: &[f64], s: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let beta: Vec<f64> = (0..n).map(|i| a[i] - s[i]).collect();
        let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[[i, j]] * beta[j]).sum()).collect();
        (
            (0..n).map(|i| kb[i] + eps - z[i]).collect(),
            (0..n).map(|i| -kb[i] + eps + z[i]).collect(),
        )
    };
    let mut x = (vec![0.0; n], vec![0.0; n]);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = dual_objective(k, z, eps, &x.0, &x.1);
    for _ in 0..iterations {
        let (ga, gs) = grad(&y.0, &y.1);
        let pa: Vec<f64> = (0..n).map(|i| y.0[i] - step * ga[i]).collect();
        let ps: Vec<f64> = (0..n).map(|i| y.1[i] - step * gs[i]).collect();
        let next = project(&pa, &ps, c);
        let f = dual_objective(k, z, eps, &next.0, &next.1);
        if f > f_prev {
            // adaptive restart
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        y = (
            (0..n).map(|i| next.0[i] + mom * (next.0[i] - x.0[i])).collect(),
            (0..n).map(|i| next.1[i] + mom * (next.1[i] - x.1[i])).collect(),
        );
        x = next;
        t = t_next;
        f_prev = f;
    }
    let objective = dual_objective(k, z, eps, &x.0, &x.1);
    DualSolution {
        alpha: x.0,
        alpha_star: x.1,
        objective,
    }
}

// ---------------------------------------------------------------------------
// small numeric helpers

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Plain two-pass CCC, written independently of the library.
pub fn reference_ccc(t: &[f64], p: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let vt = t.iter().map(|v| (v - mt).powi(2)).sum::<f64>() / n;
    let vp = p.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / n;
    let cov = t.iter().zip(p).map(|(a, b)| (a - mt) * (b - mp)).sum::<f64>() / n;
    2.0 * cov / (vt + vp + (mt - mp).powi(2))
}

/// Circular mean by brute force: the 0.01° grid point minimizing
/// Σ(1 − cos(θᵢ − μ)), then bisection on the stationarity condition
/// Σ sin(θᵢ − μ) = 0 inside the neighbouring cells.
pub fn brute_force_circular_mean(angles_deg: &[f64]) -> f64 {
    let cost = |mu: f64| -> f64 { angles_deg.iter().map(|a| 1.0 - (a - mu).to_radians().cos()).sum() };
    let slope = |mu: f64| -> f64 { angles_deg.iter().map(|a| (a - mu).to_radians().sin()).sum() };
    let mut best = 0.0;
    let mut best_cost = f64::INFINITY;
    for k in 0..36_000 {
        let mu = k as f64 * 0.01;
        let c = cost(mu);
        if c < best_cost {
            best_cost = c;
            best = mu;
        }
    }
    // slope > 0 left of the minimum, < 0 right of it
    let (mut lo, mut hi) = (best - 0.02, best + 0.02);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).rem_euclid(360.0)
}

// ---------------------------------------------------------------------------
// annotation service

pub mod http {
    use std::path::Path;
    use std::sync::Arc;

    use axum::body::Body;
    use axum::http::{Method, Request, StatusCode};
    use axum::Router;
    use emocolor::labels::{Emotion, Session, UtteranceMeta};
    use emocolor::service::{self, AppState, ServiceConfig};
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    /// `n` utterances `u00..` from one speaker, store in `dir`.
    pub fn app(dir: &Path, n: usize, quorum: usize) -> Arc<AppState> {
        let metas = (0..n)
            .map(|i| UtteranceMeta {
                utterance_id: format!("u{i:02}"),
                speaker_id: "spk1".into(),
                session: Session::Regular,
                emotion: Emotion::ALL[i % 6],
                audio_path: format!("u{i:02}.wav"),
            })
            .collect();
        let config = ServiceConfig {
            audio_root: dir.to_path_buf(),
            store: dir.join("store.jsonl"),
            quorum,
            ..ServiceConfig::default()
        };
        Arc::new(AppState::with_manifest(config, metas).unwrap())
    }

    pub async fn call(router: Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        let resp = router.oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn submit(app: &Arc<AppState>, utterance: &str, annotator: &str, h: f64, s: f64, v: f64) -> StatusCode {
        let body = serde_json::json!({
            "utterance_id": utterance,
            "annotator_id": annotator,
            "hue_deg": h,
            "saturation": s,
            "value": v,
            "submitted_at": "2024-05-01T12:00:00Z",
        });
        call(service::router(app.clone()), Method::POST, "/api/annotations", Some(body.to_string()))
            .await
            .0
    }

    pub async fn export(app: &Arc<AppState>) -> String {
        let (status, bytes) = call(service::router(app.clone()), Method::GET, "/api/export", None).await;
        assert_eq!(status, StatusCode::OK);
        String::from_utf8(bytes).unwrap()
    }

    /// Fires `attempts` identical submissions at once; returns the statuses.
    pub async fn concurrent_duplicates(app: &Arc<AppState>, attempts: usize) -> Vec<StatusCode> {
        let handles: Vec<_> = (0..attempts)
            .map(|_| {
                let app = app.clone();
                tokio::spawn(async move { submit(&app, "u00", "racer", 36.0, 0.5, 0.6).await })
            })
            .collect();
        let mut out = Vec::with_capacity(attempts);
        for h in handles {
            out.push(h.await.unwrap());
        }
        out
    }
}
