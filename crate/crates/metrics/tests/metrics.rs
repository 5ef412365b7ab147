use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use gauss::normal;
use wsd_avatar::{unet_init, UNetConfig};
use wsd_metrics::*;
use wsd_weights::{save_record, WeightRecord};

mod gauss {
    use rand::Rng;

    /// Box–Muller.
    pub fn normal(rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let v: f64 = rng.random();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }
}

fn rng(seed: u64) -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(seed)
}

#[test]
fn psnr_values() {
    let a: Vec<f32> = (0..300).map(|i| (i % 7) as f32 / 10.0).collect();
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let b: Vec<f32> = a.iter().map(|v| v + 0.1).collect();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    let mut r = rng(3);
    let x: Vec<f32> = (0..1000).map(|_| r.random()).collect();
    let y: Vec<f32> = (0..1000).map(|_| r.random()).collect();
    let mut sse = 0.0f64;
    for i in 0..x.len() {
        let d = x[i] as f64 - y[i] as f64;
        sse += d * d;
    }
    let want = -10.0 * (sse / 1000.0).log10();
    assert!((psnr(&x, &y).unwrap() - want).abs() < 1e-9);
    assert!(psnr(&x, &y[..10]).is_err());
}

/// Independent reimplementations over the full `(g+r)²` matrix, using
/// `(distance, index)` lexicographic minima.
mod brute {
    pub fn mmd(d: &[Vec<f64>]) -> f64 {
        let (g, r) = (d.len(), d[0].len());
        let mut s = 0.0;
        for j in 0..r {
            let mut col: Vec<f64> = (0..g).map(|i| d[i][j]).collect();
            col.sort_by(f64::total_cmp);
            s += col[0];
        }
        s / r as f64
    }

    pub fn cov(d: &[Vec<f64>]) -> f64 {
        let r = d[0].len();
        let mut matched = std::collections::BTreeSet::new();
        for row in d {
            let mut idx: Vec<(f64, usize)> = row.iter().copied().zip(0..).collect();
            idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            matched.insert(idx[0].1);
        }
        100.0 * matched.len() as f64 / r as f64
    }

    pub fn nna(cross: &[Vec<f64>], wg: &[Vec<f64>], wr: &[Vec<f64>]) -> f64 {
        let (g, r) = (wg.len(), wr.len());
        let n = g + r;
        let full = |a: usize, b: usize| -> f64 {
            match (a < g, b < g) {
                (true, true) => wg[a][b],
                (true, false) => cross[a][b - g],
                (false, true) => cross[b][a - g],
                (false, false) => wr[a - g][b - g],
            }
        };
        let mut correct = 0;
        for a in 0..n {
            let own = full(a, a);
            let mut cands: Vec<(f64, usize)> = (0..n).filter(|&b| b != a && full(a, b) > own).map(|b| (full(a, b), b)).collect();
            cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if (cands[0].1 < g) == (a < g) {
                correct += 1;
            }
        }
        100.0 * correct as f64 / n as f64
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DistanceMatrix {
    DistanceMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]).unwrap()
}

fn symmetric(n: usize, r: &mut impl Rng, quantize: bool) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = if quantize { r.random_range(1..5) as f64 } else { r.random_range(0.1..10.0) };
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

#[test]
fn set_metrics_match_brute_force_on_random_matrices() {
    for seed in 0..50 {
        let mut r = rng(seed);
        // Quantized entries exercise the tie-breaking rules.
        let quantize = seed % 2 == 0;
        let cross: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..8).map(|_| if quantize { r.random_range(1..5) as f64 } else { r.random_range(0.1..10.0) }).collect())
            .collect();
        let wg = symmetric(8, &mut r, quantize);
        let wr = symmetric(8, &mut r, quantize);
        let (c, g, w) = (to_matrix(&cross), to_matrix(&wg), to_matrix(&wr));
        assert_eq!(mmd(&c), brute::mmd(&cross), "seed {seed}");
        assert_eq!(cov(&c), brute::cov(&cross), "seed {seed}");
        assert_eq!(one_nna(&c, &g, &w).unwrap(), brute::nna(&cross, &wg, &wr), "seed {seed}");
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn matrices(g: &[Vec<f64>], r: &[Vec<f64>]) -> (DistanceMatrix, DistanceMatrix, DistanceMatrix) {
    let m = |a: &[Vec<f64>], b: &[Vec<f64>]| DistanceMatrix::from_fn(a.len(), b.len(), |i, j| euclid(&a[i], &b[j])).unwrap();
    (m(g, r), m(g, g), m(r, r))
}

fn gaussian_points(n: usize, dim: usize, shift: f64, r: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| normal(r) + shift).collect()).collect()
}

#[test]
fn identical_sets() {
    let pts = gaussian_points(12, 5, 0.0, &mut rng(1));
    let (c, g, w) = matrices(&pts, &pts);
    assert_eq!(cov(&c), 100.0);
    assert_eq!(mmd(&c), 0.0);
    assert_eq!(one_nna(&c, &g, &w).unwrap(), 50.0);
}

#[test]
fn separated_sets_are_fully_classified() {
    let mut r = rng(2);
    let a = gaussian_points(10, 3, 0.0, &mut r);
    let b = gaussian_points(10, 3, 100.0, &mut r);
    let (c, g, w) = matrices(&a, &b);
    assert_eq!(one_nna(&c, &g, &w).unwrap(), 100.0);
}

#[test]
fn iid_samples_are_near_chance() {
    let mut r = rng(7);
    let a = gaussian_points(50, 8, 0.0, &mut r);
    let b = gaussian_points(50, 8, 0.0, &mut r);
    let (c, g, w) = matrices(&a, &b);
    let v = one_nna(&c, &g, &w).unwrap();
    assert!((35.0..=65.0).contains(&v), "1-NNA {v}");
}

#[test]
fn shape_and_empty_errors() {
    let c = DistanceMatrix::new(2, 3, vec![1.0; 6]).unwrap();
    let g = DistanceMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!(one_nna(&c, &g, &g).is_err());
    let same = DistanceMatrix::new(1, 1, vec![0.0]).unwrap();
    assert!(one_nna(&same, &same, &same).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_ranges(seed in 0u64..10_000, g in 1usize..7, r in 1usize..7) {
        let mut rr = rng(seed);
        let a = gaussian_points(g + 1, 3, 0.0, &mut rr);
        let b = gaussian_points(r + 1, 3, 0.5, &mut rr);
        let (c, wg, wr) = matrices(&a, &b);
        let cv = cov(&c);
        let nna = one_nna(&c, &wg, &wr).unwrap();
        prop_assert!((0.0..=100.0).contains(&cv) && cv > 0.0);
        prop_assert!((0.0..=100.0).contains(&nna));
        prop_assert!(mmd(&c) >= 0.0);
    }
}

fn probes() -> ProbeSet {
    ProbeSet::new(ProbeConfig { poses: 2, cameras: 2, resolution: 32, ..ProbeConfig::desk(5) }).unwrap()
}

fn perturbed(rec: &WeightRecord, scale: f64, seed: u64) -> WeightRecord {
    let mut r = rng(seed);
    let flat: Vec<f32> = rec.flatten().iter().map(|&v| v + (scale * normal(&mut r)) as f32).collect();
    WeightRecord::from_flat(&rec.shapes(), &flat).unwrap()
}

#[test]
fn avatar_distance_properties() {
    let p = probes();
    let net = UNetConfig::desk();
    let a = unet_init(&net, 0).unwrap();
    let near = perturbed(&a, 1e-3, 1);
    let other = unet_init(&net, 1).unwrap();
    assert_eq!(avatar_distance(&a, &a, &p, Metric::NegPsnr).unwrap(), -PSNR_CAP_DB);
    assert_eq!(avatar_distance(&a, &a, &p, Metric::PerceptualProxy).unwrap(), 0.0);
    for m in [Metric::NegPsnr, Metric::PerceptualProxy] {
        let ab = avatar_distance(&a, &other, &p, m).unwrap();
        let ba = avatar_distance(&other, &a, &p, m).unwrap();
        assert!((ab - ba).abs() <= 1e-9, "{m:?}: {ab} vs {ba}");
        let close = avatar_distance(&a, &near, &p, m).unwrap();
        assert!(close < ab, "{m:?}: near {close} vs different {ab}");
    }
    let q = probes();
    assert_eq!(p.hash(), q.hash());
    let r = ProbeSet::new(ProbeConfig { poses: 2, cameras: 2, resolution: 32, ..ProbeConfig::desk(6) }).unwrap();
    assert_ne!(p.hash(), r.hash());
}

fn write_set(dir: &std::path::Path, recs: &[WeightRecord], names: &[&str]) {
    for (r, n) in recs.iter().zip(names) {
        save_record(r, &dir.join(n)).unwrap();
    }
}

#[test]
fn evaluate_identical_sets_and_ordering() {
    let p = probes();
    let net = UNetConfig::desk();
    let recs: Vec<WeightRecord> = (0..3).map(|s| unet_init(&net, s).unwrap()).collect();
    let g = tempfile::tempdir().unwrap();
    let r = tempfile::tempdir().unwrap();
    write_set(g.path(), &recs, &["a.wsdw", "b.wsdw", "c.wsdw"]);
    write_set(r.path(), &recs, &["a.wsdw", "b.wsdw", "c.wsdw"]);
    std::fs::write(g.path().join("broken.wsdw"), b"not a record").unwrap();
    std::fs::write(g.path().join("notes.txt"), b"ignored").unwrap();
    let rep = evaluate(g.path(), r.path(), &p).unwrap();
    assert_eq!(rep.cov_percent, 100.0);
    assert_eq!(rep.one_nna_percent, 50.0);
    assert_eq!(rep.mmd_psnr, PSNR_CAP_DB);
    assert_eq!(rep.mmd_proxy, 0.0);
    assert_eq!((rep.n_generated, rep.n_reference, rep.seed), (3, 3, 5));
    assert_eq!(rep.probe_hash, p.hash());

    let out = g.path().join("report.json");
    rep.save(&out).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for k in ["mmd_psnr", "mmd_proxy", "cov_percent", "one_nna_percent", "n_generated", "n_reference", "probe_hash", "seed"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }

    let extra: Vec<WeightRecord> = (10..14).map(|s| unet_init(&net, s).unwrap()).collect();
    let mut order: Vec<usize> = (0..4).collect();
    let base = {
        let d = tempfile::tempdir().unwrap();
        write_set(d.path(), &extra, &["0.wsdw", "1.wsdw", "2.wsdw", "3.wsdw"]);
        evaluate(d.path(), r.path(), &p).unwrap()
    };
    assert!([base.mmd_psnr, base.mmd_proxy, base.cov_percent, base.one_nna_percent].iter().all(|v| v.is_finite()));
    order.shuffle(&mut rng(9));
    let d = tempfile::tempdir().unwrap();
    let shuffled: Vec<WeightRecord> = order.iter().map(|&i| extra[i].clone()).collect();
    write_set(d.path(), &shuffled, &["0.wsdw", "1.wsdw", "2.wsdw", "3.wsdw"]);
    assert_eq!(evaluate(d.path(), r.path(), &p).unwrap(), base);

    let lonely = tempfile::tempdir().unwrap();
    write_set(lonely.path(), &recs[..1], &["only.wsdw"]);
    assert!(matches!(evaluate(lonely.path(), r.path(), &p), Err(MetricsError::Empty(_))));
}
