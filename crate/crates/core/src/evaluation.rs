//! Quantitative evaluation of trained representations.
//!
//! Everything operates on a fixed set of randomly sampled states (1000 in
//! shipped configs): Pearson correlations between latent units and the
//! controllable object's coordinates, the averaged accumulated Euclidean
//! distance between obstacle coordinates of latent-space neighbors, the
//! normalized absolute concentration (inverse covariance) matrix, mean policy
//! tables, and an IoU score for how cleanly a two-branch model splits the
//! objects between its decoders.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{Gridworld, Image, Scenario, IMAGE_PIXELS, NUM_ACTIONS};
use crate::models::{uncontrollable_latent_width, DualModel, SingleModel};
use crate::report::write_csv;
use crate::{Error, Result};

/// Number of evaluation states in shipped configs.
pub const EVAL_SAMPLES: usize = 1000;
/// Neighbor ranks reported by the distance metric.
pub const DEFAULT_NEIGHBORS: usize = 10;
/// Ridge added to a near-singular covariance before inversion.
pub const RIDGE_EPS: f64 = 1e-6;

/// One evaluation state: the image plus the true anchors behind it. Anchors
/// are ground truth for metrics only and are never fed to a model.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub image: Image,
    pub c_anchor: (f64, f64),
    pub obstacle_anchors: Vec<(f64, f64)>,
}

/// Draw `count` uniformly random legal states.
pub fn sample_states(gw: &Gridworld, count: usize, seed: u64) -> Vec<EvalSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let state = gw.random_state(&mut rng);
            let c = gw.config.controllable_index();
            EvalSample {
                image: gw.render(&state),
                c_anchor: (state.anchors[c].0 as f64, state.anchors[c].1 as f64),
                obstacle_anchors: gw
                    .config
                    .obstacle_indices()
                    .into_iter()
                    .map(|o| (state.anchors[o].0 as f64, state.anchors[o].1 as f64))
                    .collect(),
            }
        })
        .collect()
}

/// Batched value-only encoding of sample images through a closure.
pub fn encode_samples(
    samples: &[EvalSample],
    latent: usize,
    mut encode: impl FnMut(&[f32], usize) -> Vec<f32>,
) -> Vec<Vec<f64>> {
    let chunk = 250;
    let mut out = Vec::with_capacity(samples.len());
    for group in samples.chunks(chunk) {
        let mut flat = Vec::with_capacity(group.len() * IMAGE_PIXELS);
        for s in group {
            flat.extend_from_slice(&s.image);
        }
        let z = encode(&flat, group.len());
        for row in z.chunks(latent) {
            out.push(row.iter().map(|&v| v as f64).collect());
        }
    }
    out
}

// ----- correlations -----------------------------------------------------------

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    // Constant columns are degenerate even when float rounding leaves the
    // centered sum of squares slightly nonzero.
    if xs.iter().all(|v| *v == xs[0]) || ys.iter().all(|v| *v == ys[0]) {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Correlation of each latent unit against the x and y coordinates.
/// Degenerate (constant) columns yield `None` entries rather than an error.
pub fn correlation_table(
    latents: &[Vec<f64>],
    coords: &[(f64, f64)],
) -> Vec<(Option<f64>, Option<f64>)> {
    assert!(latents.len() >= 2, "need at least two samples");
    let k = latents[0].len();
    let xs: Vec<f64> = coords.iter().map(|c| c.0).collect();
    let ys: Vec<f64> = coords.iter().map(|c| c.1).collect();
    (0..k)
        .map(|unit| {
            let col: Vec<f64> = latents.iter().map(|z| z[unit]).collect();
            (pearson(&col, &xs), pearson(&col, &ys))
        })
        .collect()
}

// ----- averaged accumulated Euclidean distance ---------------------------------

#[derive(Debug, Clone, Copy)]
pub struct DistancePoint {
    pub rank: usize,
    /// Mean obstacle-coordinate distance to the rank-j latent neighbor.
    pub per_rank: f64,
    /// Running mean over ranks 1..=j — the accumulated curve.
    pub accumulated: f64,
}

/// For every sample, find its `j_max` nearest neighbors in latent space
/// (excluding itself, ties broken by index) and average the true Euclidean
/// distance between obstacle coordinate vectors per neighbor rank.
pub fn accumulated_distance(
    latents: &[Vec<f64>],
    obstacles: &[Vec<(f64, f64)>],
    j_max: usize,
) -> Result<Vec<DistancePoint>> {
    let s = latents.len();
    if s <= j_max {
        return Err(Error::Config(format!(
            "need more than {j_max} samples for {j_max} neighbors, got {s}"
        )));
    }
    let l = obstacles.first().map_or(0, |o| o.len());
    if l == 0 {
        return Err(Error::Config("distance metric needs at least one obstacle".into()));
    }
    let mut per_rank_sums = vec![0.0f64; j_max];
    for i in 0..s {
        // Partial selection of the j_max nearest neighbors of i.
        let mut dists: Vec<(f64, usize)> = (0..s)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = latents[i]
                    .iter()
                    .zip(&latents[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, j)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (rank, &(_, j)) in dists.iter().take(j_max).enumerate() {
            let mut coord_dist = 0.0;
            for (oi, oj) in obstacles[i].iter().zip(&obstacles[j]) {
                coord_dist += ((oi.0 - oj.0).powi(2) + (oi.1 - oj.1).powi(2)).sqrt();
            }
            per_rank_sums[rank] += coord_dist / l as f64;
        }
    }
    let mut out = Vec::with_capacity(j_max);
    let mut running = 0.0;
    for (idx, sum) in per_rank_sums.iter().enumerate() {
        let per_rank = sum / s as f64;
        running += per_rank;
        out.push(DistancePoint {
            rank: idx + 1,
            per_rank,
            accumulated: running / (idx + 1) as f64,
        });
    }
    Ok(out)
}

// ----- concentration matrix -----------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConcentrationReport {
    /// Normalized absolute precision: |P_ij| / sqrt(P_ii * P_jj).
    pub matrix: Vec<Vec<f64>>,
    pub ridge_used: bool,
}

impl ConcentrationReport {
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let m = self.matrix.len();
        if m < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sum += self.matrix[i][j];
                }
            }
        }
        sum / (m * (m - 1)) as f64
    }
}

fn covariance(latents: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = latents.len() as f64;
    let m = latents[0].len();
    let mut mean = vec![0.0; m];
    for z in latents {
        for (mu, v) in mean.iter_mut().zip(z) {
            *mu += v;
        }
    }
    for mu in &mut mean {
        *mu /= s;
    }
    let mut cov = vec![vec![0.0; m]; m];
    for z in latents {
        for i in 0..m {
            let di = z[i] - mean[i];
            for j in 0..m {
                cov[i][j] += di * (z[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= s - 1.0;
        }
    }
    cov
}

/// Gauss-Jordan inverse with partial pivoting. Returns `None` on a pivot
/// below `tol`.
pub fn invert(matrix: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let m = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut ext = row.clone();
            ext.extend((0..m).map(|j| if i == j { 1.0 } else { 0.0 }));
            ext
        })
        .collect();
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < tol {
            return None;
        }
        a.swap(col, pivot_row);
        let pivot = a[col][col];
        for v in &mut a[col] {
            *v /= pivot;
        }
        for row in 0..m {
            if row != col {
                let factor = a[row][col];
                if factor != 0.0 {
                    for j in 0..2 * m {
                        let sub = factor * a[col][j];
                        a[row][j] -= sub;
                    }
                }
            }
        }
    }
    Some(a.into_iter().map(|row| row[m..].to_vec()).collect())
}

/// Precision of the sample covariance, normalized to unit diagonal, absolute
/// values. Falls back to a ridge when the covariance is near-singular and
/// errors (with a condition estimate) if even that fails.
pub fn concentration_matrix(latents: &[Vec<f64>]) -> Result<ConcentrationReport> {
    let m = latents[0].len();
    if latents.len() <= m {
        return Err(Error::Config(format!(
            "need more samples than features: {} <= {m}",
            latents.len()
        )));
    }
    let mut cov = covariance(latents);
    let tol = 1e-12;
    let (precision, ridge_used) = match invert(&cov, tol) {
        Some(p) => (p, false),
        None => {
            for (i, row) in cov.iter_mut().enumerate() {
                row[i] += RIDGE_EPS;
            }
            let p = invert(&cov, tol).ok_or_else(|| {
                let diag_max = (0..m).map(|i| cov[i][i].abs()).fold(0.0f64, f64::max);
                Error::Config(format!(
                    "covariance singular even with ridge {RIDGE_EPS}; max diagonal {diag_max:.3e}, condition beyond {:.3e}",
                    diag_max / tol
                ))
            })?;
            (p, true)
        }
    };
    let mut matrix = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            matrix[i][j] = precision[i][j].abs() / (precision[i][i] * precision[j][j]).sqrt();
        }
    }
    Ok(ConcentrationReport { matrix, ridge_used })
}

// ----- policy table --------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PolicyTable {
    /// mean_probs[k][a]: average probability head k assigns to action a.
    pub mean_probs: Vec<Vec<f64>>,
    /// Argmax action index per head.
    pub argmax: Vec<usize>,
}

/// Mean action probabilities per head over the sampled latents.
pub fn policy_table(latents: &[Vec<f64>], probs_of: impl Fn(&[f32]) -> Vec<Vec<f32>>) -> PolicyTable {
    let k = NUM_ACTIONS;
    let mut mean = vec![vec![0.0f64; k]; k];
    for z in latents {
        let zf: Vec<f32> = z.iter().map(|&v| v as f32).collect();
        let probs = probs_of(&zf);
        for (head, row) in probs.iter().enumerate() {
            for (a, p) in row.iter().enumerate() {
                mean[head][a] += *p as f64;
            }
        }
    }
    for row in &mut mean {
        for v in row.iter_mut() {
            *v /= latents.len() as f64;
        }
    }
    let argmax = mean
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        })
        .collect();
    PolicyTable { mean_probs: mean, argmax }
}

// ----- decomposition IoU ------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct DecompositionIou {
    /// Controllable decoder vs true controllable mask.
    pub iou_c: f64,
    /// Uncontrollable decoder vs union of obstacle masks.
    pub iou_u: f64,
    /// Controllable decoder vs obstacle union (should be low).
    pub cross_c: f64,
    /// Uncontrollable decoder vs controllable mask (should be low).
    pub cross_u: f64,
}

fn mask_iou(pred: &[bool], truth: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if *p && *t {
            inter += 1;
        }
        if *p || *t {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Threshold each branch's output at 0.5 and score it against the true pixel
/// sets, averaged over samples.
pub fn decomposition_iou(
    dual: &DualModel<f32>,
    gw: &Gridworld,
    samples: &[EvalSample],
) -> DecompositionIou {
    let c_idx = gw.config.controllable_index();
    let mut sums = [0.0f64; 4];
    for group in samples.chunks(250) {
        let mut flat = Vec::with_capacity(group.len() * IMAGE_PIXELS);
        for s in group {
            flat.extend_from_slice(&s.image);
        }
        let zc = dual.encode_c_values(&flat, group.len());
        let zu = dual.encode_u_values(&flat, group.len());
        let xc = dual.decode_c_values(&zc, group.len());
        let xu = dual.decode_u_values(&zu, group.len());
        for (idx, s) in group.iter().enumerate() {
            let pix = &xc[idx * IMAGE_PIXELS..(idx + 1) * IMAGE_PIXELS];
            let pred_c: Vec<bool> = pix.iter().map(|&v| v >= 0.5).collect();
            let pix = &xu[idx * IMAGE_PIXELS..(idx + 1) * IMAGE_PIXELS];
            let pred_u: Vec<bool> = pix.iter().map(|&v| v >= 0.5).collect();
            let mut true_c = vec![false; IMAGE_PIXELS];
            for &(dx, dy) in &gw.config.objects[c_idx].mask {
                let x = s.c_anchor.0 as usize + dx as usize;
                let y = s.c_anchor.1 as usize + dy as usize;
                true_c[y * 24 + x] = true;
            }
            let mut true_u = vec![false; IMAGE_PIXELS];
            for (o, anchor) in gw.config.obstacle_indices().into_iter().zip(&s.obstacle_anchors) {
                for &(dx, dy) in &gw.config.objects[o].mask {
                    let x = anchor.0 as usize + dx as usize;
                    let y = anchor.1 as usize + dy as usize;
                    true_u[y * 24 + x] = true;
                }
            }
            sums[0] += mask_iou(&pred_c, &true_c);
            sums[1] += mask_iou(&pred_u, &true_u);
            sums[2] += mask_iou(&pred_c, &true_u);
            sums[3] += mask_iou(&pred_u, &true_c);
        }
    }
    let n = samples.len() as f64;
    DecompositionIou {
        iou_c: sums[0] / n,
        iou_u: sums[1] / n,
        cross_c: sums[2] / n,
        cross_u: sums[3] / n,
    }
}

// ----- full evaluation driver ----------------------------------------------------------

/// A model under evaluation.
pub enum EvalModel<'a> {
    Single(&'a SingleModel<f32>),
    Dual(&'a DualModel<f32>),
}

/// Everything the metrics produced, in memory; `write` puts it on disk.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub correlations: Vec<(Option<f64>, Option<f64>)>,
    pub distance: Option<Vec<DistancePoint>>,
    pub concentration: Option<ConcentrationReport>,
    pub policy: Option<PolicyTable>,
    pub decomposition: Option<DecompositionIou>,
}

/// Run the full metric set for one model. Correlations and the policy table
/// use the controllable-branch latent; the distance metric and concentration
/// matrix use the uncontrollable-branch latent for dual models and the plain
/// latent otherwise.
pub fn evaluate(
    model: &EvalModel,
    scenario: Scenario,
    sample_count: usize,
    neighbors: usize,
    seed: u64,
) -> Result<EvalReport> {
    let gw = Gridworld::new(scenario);
    let samples = sample_states(&gw, sample_count, seed);
    let coords: Vec<(f64, f64)> = samples.iter().map(|s| s.c_anchor).collect();
    let obstacles: Vec<Vec<(f64, f64)>> = samples.iter().map(|s| s.obstacle_anchors.clone()).collect();
    let has_obstacles = !gw.config.obstacle_indices().is_empty();

    let (lat_main, lat_aux, policy, decomposition) = match model {
        EvalModel::Single(m) => {
            let z = encode_samples(&samples, m.latent, |imgs, b| m.encode_values(imgs, b));
            let policy = m.with_policies.then(|| policy_table(&z, |lat| m.policy_probs(lat)));
            (z, None, policy, None)
        }
        EvalModel::Dual(m) => {
            let zc = encode_samples(&samples, m.latent_c, |imgs, b| m.encode_c_values(imgs, b));
            let zu = encode_samples(&samples, m.latent_u, |imgs, b| m.encode_u_values(imgs, b));
            let policy = Some(policy_table(&zc, |lat| m.policy_probs(lat)));
            let iou = has_obstacles.then(|| decomposition_iou(m, &gw, &samples));
            (zc, Some(zu), policy, iou)
        }
    };

    let correlations = correlation_table(&lat_main, &coords);
    let uncontrollable_latent = lat_aux.as_ref().unwrap_or(&lat_main);
    let distance = if has_obstacles {
        Some(accumulated_distance(uncontrollable_latent, &obstacles, neighbors)?)
    } else {
        None
    };
    let concentration = Some(concentration_matrix(uncontrollable_latent)?);

    Ok(EvalReport {
        scenario,
        correlations,
        distance,
        concentration,
        policy,
        decomposition,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "undefined".to_string(),
    }
}

impl EvalReport {
    /// Write one CSV per metric into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows: Vec<String> = self
            .correlations
            .iter()
            .enumerate()
            .map(|(i, (cx, cy))| format!("{},{},{}", i + 1, fmt_opt(*cx), fmt_opt(*cy)))
            .collect();
        write_csv(&dir.join("correlation.csv"), "head,corr_x,corr_y", &rows)?;

        if let Some(points) = &self.distance {
            let rows: Vec<String> = points
                .iter()
                .map(|p| format!("{},{},{}", p.rank, p.per_rank, p.accumulated))
                .collect();
            write_csv(&dir.join("distance.csv"), "rank,mean_distance,accumulated_mean", &rows)?;
        }
        if let Some(report) = &self.concentration {
            let mut rows = Vec::new();
            for (i, row) in report.matrix.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    rows.push(format!("{i},{j},{v}"));
                }
            }
            write_csv(&dir.join("concentration.csv"), "i,j,value", &rows)?;
        }
        if let Some(policy) = &self.policy {
            let rows: Vec<String> = policy
                .mean_probs
                .iter()
                .enumerate()
                .map(|(head, row)| {
                    format!(
                        "{},{},{},{},{},{}",
                        head + 1,
                        row[0],
                        row[1],
                        row[2],
                        row[3],
                        crate::gridworld::Action::from_index(policy.argmax[head]).name()
                    )
                })
                .collect();
            write_csv(&dir.join("policy.csv"), "head,p_left,p_right,p_up,p_down,argmax", &rows)?;
        }
        if let Some(iou) = &self.decomposition {
            write_csv(
                &dir.join("decomposition.csv"),
                "iou_c,iou_u,cross_c,cross_u",
                &[format!("{},{},{},{}", iou.iou_c, iou.iou_u, iou.cross_c, iou.cross_u)],
            )?;
        }
        Ok(())
    }
}

/// Latent width the plain autoencoder uses for a scenario (the same as the
/// uncontrollable branch).
pub fn autoencoder_latent_width(scenario: Scenario) -> usize {
    uncontrollable_latent_width(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_latent_correlates_perfectly() {
        let coords: Vec<(f64, f64)> = (0..50).map(|i| ((i % 10) as f64, (i / 10) as f64)).collect();
        let latents: Vec<Vec<f64>> = coords.iter().map(|c| vec![2.0 * c.0 + 3.0]).collect();
        let table = correlation_table(&latents, &coords);
        let cx = table[0].0.unwrap();
        assert!((cx - 1.0).abs() < 1e-9);
        // Negation flips the sign.
        let neg: Vec<Vec<f64>> = latents.iter().map(|z| vec![-z[0]]).collect();
        let table = correlation_table(&neg, &coords);
        assert!((table[0].0.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_latent_is_undefined() {
        let coords: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        let latents: Vec<Vec<f64>> = coords.iter().map(|_| vec![0.7]).collect();
        let table = correlation_table(&latents, &coords);
        assert!(table[0].0.is_none());
    }

    #[test]
    fn identical_obstacles_give_zero_distance() {
        let latents: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let obstacles = vec![vec![(3.0, 4.0)]; 5];
        let points = accumulated_distance(&latents, &obstacles, 2).unwrap();
        for p in points {
            assert_eq!(p.per_rank, 0.0);
            assert_eq!(p.accumulated, 0.0);
        }
    }

    #[test]
    fn three_four_five_neighbor_distance() {
        // S=2, L=1, J=1: the only neighbor pair is (0,0) vs (3,4) -> 5.
        let latents = vec![vec![0.0], vec![1.0]];
        let obstacles = vec![vec![(0.0, 0.0)], vec![(3.0, 4.0)]];
        let points = accumulated_distance(&latents, &obstacles, 1).unwrap();
        assert_eq!(points[0].per_rank, 5.0);
        assert_eq!(points[0].accumulated, 5.0);
    }

    #[test]
    fn distance_matches_brute_force_reference() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = 20;
        let j_max = 4;
        let latents: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let obstacles: Vec<Vec<(f64, f64)>> = (0..s)
            .map(|_| {
                (0..2)
                    .map(|_| (rng.gen_range(0.0..24.0), rng.gen_range(0.0..24.0)))
                    .collect()
            })
            .collect();
        let points = accumulated_distance(&latents, &obstacles, j_max).unwrap();

        // Independent reference: full sort per sample, direct triple loop.
        let mut want_per_rank = vec![0.0f64; j_max];
        for i in 0..s {
            let mut order: Vec<usize> = (0..s).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                let da: f64 = latents[i].iter().zip(&latents[a]).map(|(x, y)| (x - y) * (x - y)).sum();
                let db: f64 = latents[i].iter().zip(&latents[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            for (rank, &j) in order.iter().take(j_max).enumerate() {
                let mut d = 0.0;
                for l in 0..2 {
                    let (ax, ay) = obstacles[i][l];
                    let (bx, by) = obstacles[j][l];
                    d += ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
                }
                want_per_rank[rank] += d / 2.0;
            }
        }
        for (p, want_sum) in points.iter().zip(&want_per_rank) {
            assert!((p.per_rank - want_sum / s as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_features_give_identity_concentration() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let latents: Vec<Vec<f64>> = (0..4000)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let report = concentration_matrix(&latents).unwrap();
        assert!(!report.ridge_used);
        for i in 0..3 {
            assert!((report.matrix[i][i] - 1.0).abs() < 1e-9);
            for j in 0..3 {
                if i != j {
                    assert!(report.matrix[i][j] < 0.1, "{}", report.matrix[i][j]);
                }
            }
        }
    }

    #[test]
    fn correlated_pair_shows_in_concentration() {
        // Two features with correlation rho: normalized precision off-diagonal
        // equals |rho| in closed form for the 2x2 case.
        use rand::Rng;
        let rho: f64 = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let latents: Vec<Vec<f64>> = (0..60000)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                vec![a, rho * a + (1.0f64 - rho * rho).sqrt() * b]
            })
            .collect();
        let report = concentration_matrix(&latents).unwrap();
        assert!((report.matrix[0][1] - rho).abs() < 0.02, "{}", report.matrix[0][1]);
    }

    #[test]
    fn concentration_matches_direct_inverse_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let latents: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let report = concentration_matrix(&latents).unwrap();
        // Oracle: cofactor-expansion inverse of the 4x4 covariance.
        let cov = covariance(&latents);
        let inv = cofactor_inverse_4x4(&cov);
        for i in 0..4 {
            for j in 0..4 {
                let want = inv[i][j].abs() / (inv[i][i] * inv[j][j]).sqrt();
                assert!((report.matrix[i][j] - want).abs() < 1e-8);
            }
        }
    }

    fn det3(m: &[[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    fn cofactor_inverse_4x4(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let minor = |r: usize, c: usize| {
            let mut m = [[0.0; 3]; 3];
            let mut ri = 0;
            for i in 0..4 {
                if i == r {
                    continue;
                }
                let mut ci = 0;
                for j in 0..4 {
                    if j == c {
                        continue;
                    }
                    m[ri][ci] = a[i][j];
                    ci += 1;
                }
                ri += 1;
            }
            det3(&m)
        };
        let mut det = 0.0;
        for j in 0..4 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            det += sign * a[0][j] * minor(0, j);
        }
        let mut inv = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[j][i] = sign * minor(i, j) / det;
            }
        }
        inv
    }

    #[test]
    fn concentration_permutation_equivariance() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let latents: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                let c: f64 = rng.gen_range(-1.0..1.0);
                vec![a, 0.5 * a + b, c]
            })
            .collect();
        let base = concentration_matrix(&latents).unwrap();
        let perm: Vec<Vec<f64>> = latents.iter().map(|z| vec![z[2], z[0], z[1]]).collect();
        let permuted = concentration_matrix(&perm).unwrap();
        let p = [2usize, 0, 1]; // permuted feature j is original p[j]
        for i in 0..3 {
            for j in 0..3 {
                assert!((permuted.matrix[i][j] - base.matrix[p[i]][p[j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zeroed_policy_head_reports_uniform_row() {
        let mut model = SingleModel::<f32>::thomas(4, 3);
        for head in 1..=4 {
            let w = model.params.get_mut(&format!("policy.k{head}.w")).unwrap();
            for v in w.data_mut() {
                *v = 0.0;
            }
        }
        let latents = vec![vec![0.3, -0.2, 0.5, 0.0]; 3];
        let table = policy_table(&latents, |lat| model.policy_probs(lat));
        for row in &table.mean_probs {
            for p in row {
                assert!((p - 0.25).abs() < 1e-6);
            }
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn decomposition_iou_oracle_cases() {
        // Perfect and swapped decompositions via hand-built pixel sets.
        let pred: Vec<bool> = (0..IMAGE_PIXELS).map(|i| i < 9).collect();
        let truth = pred.clone();
        assert_eq!(mask_iou(&pred, &truth), 1.0);
        let disjoint: Vec<bool> = (0..IMAGE_PIXELS).map(|i| (9..12).contains(&i)).collect();
        assert_eq!(mask_iou(&pred, &disjoint), 0.0);
        // Half overlap: pred {0..9}, truth {0..6}: inter 6, union 9.
        let part: Vec<bool> = (0..IMAGE_PIXELS).map(|i| i < 6).collect();
        assert!((mask_iou(&pred, &part) - 6.0 / 9.0).abs() < 1e-12);
    }
}
