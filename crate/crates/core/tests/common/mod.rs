//! Reference implementations the integration tests compare against. Each
//! one is written from the definition and shares no code with the crate.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------- linear algebra

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        assert!(d != 0.0, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub struct RefFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub p: Vec<f64>,
    pub rss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub df: usize,
    pub aic: f64,
}

/// OLS through the normal equations `(XᵀX)β = Xᵀy`, intercept first.
pub fn ref_ols(x: &[Vec<f64>], y: &[f64]) -> RefFit {
    let n = y.len();
    let design: Vec<Vec<f64>> = x.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let p = design[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in design.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * yi;
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert(&xtx);
    let coef: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum()).collect();
    let rss: f64 = design
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let se: Vec<f64> = (0..p).map(|i| (inv[i][i] * sigma2).sqrt()).collect();
    let pv = coef.iter().zip(&se).map(|(c, s)| ref_t_two_sided(c / s, df as f64)).collect();
    let r2 = 1.0 - rss / tss;
    RefFit {
        adj_r2: 1.0 - (1.0 - r2) * (n - 1) as f64 / df as f64,
        aic: n as f64 * (rss / n as f64).ln() + 2.0 * p as f64,
        coef,
        se,
        p: pv,
        rss,
        r2,
        df,
    }
}

// ---------------------------------------------------------------- t distribution

/// Lanczos approximation (g = 7, nine terms).
pub fn lgamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn t_density(x: f64, df: f64) -> f64 {
    let c = lgamma((df + 1.0) / 2.0) - lgamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, eps, 50)
}

/// Two-sided tail probability by quadrature of the density. Small |t|
/// integrates the centre; otherwise the tail after `x = |t|/s`.
pub fn ref_t_two_sided(t: f64, df: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        1.0 - 2.0 * integrate(|x| t_density(x, df), 0.0, a, 1e-15)
    } else {
        2.0 * integrate(
            |s| match (s == 0.0, df == 1.0) {
                // limit of the integrand at s → 0
                (true, true) => 1.0 / (std::f64::consts::PI * a),
                (true, false) => 0.0,
                _ => t_density(a / s, df) * a / (s * s),
            },
            0.0,
            1.0,
            1e-16,
        )
    }
}

// ---------------------------------------------------------------- subsets

/// Exhaustive search over every subset of the candidate columns. Returns
/// the subset with the smallest AIC and that AIC.
pub fn best_subset(columns: &[Vec<f64>], y: &[f64]) -> (Vec<usize>, f64) {
    let k = columns.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for mask in 0u32..(1 << k) {
        let subset: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
        let rows: Vec<Vec<f64>> = (0..y.len()).map(|i| subset.iter().map(|&j| columns[j][i]).collect()).collect();
        let aic = ref_ols(&rows, y).aic;
        if best.as_ref().is_none_or(|b| aic < b.1) {
            best = Some((subset, aic));
        }
    }
    best.unwrap()
}

// ---------------------------------------------------------------- geography

/// Great-circle distance by the spherical law of cosines, R = 6371 km.
pub fn ref_distance_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dl = (b.1 - a.1).to_radians();
    let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
    6371.0 * c.acos()
}

/// Strict plurality by sorting the counts; `None` on a tie for the top.
pub fn ref_plurality<S: Ord + Clone>(counts: &BTreeMap<S, u64>) -> Option<S> {
    let mut v: Vec<(u64, S)> = counts.iter().map(|(s, c)| (*c, s.clone())).collect();
    v.sort_by(|a, b| b.0.cmp(&a.0));
    match v.as_slice() {
        [] => None,
        [only] => Some(only.1.clone()),
        [first, second, ..] => (first.0 > second.0).then(|| first.1.clone()),
    }
}

// ---------------------------------------------------------------- diffusion

/// Time from the first event until the prefix first holds `k` distinct
/// keys, recounting each prefix from scratch. `None` keys never count.
pub fn ref_time_to_k<K: Eq + std::hash::Hash + Clone>(events: &[(i64, Option<K>)], k: usize) -> Option<i64> {
    let t0 = events.first()?.0;
    for end in 0..events.len() {
        let distinct: HashSet<K> = events[..=end].iter().filter_map(|e| e.1.clone()).collect();
        if distinct.len() >= k {
            return Some(events[end].0 - t0);
        }
    }
    None
}

pub fn ref_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------- graphs

/// Dense power iteration on an explicit transition matrix: rows with no
/// out-weight jump uniformly, then damping mixes in uniform teleportation.
pub fn ref_pagerank(n: usize, edges: &[(usize, usize, f64)], damping: f64) -> Vec<f64> {
    let mut m = vec![vec![0.0; n]; n];
    let mut out = vec![0.0; n];
    for &(a, b, w) in edges {
        m[a][b] += w;
        out[a] += w;
    }
    for (i, row) in m.iter_mut().enumerate() {
        if out[i] == 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0 / n as f64);
        } else {
            row.iter_mut().for_each(|v| *v /= out[i]);
        }
    }
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = damping * m[i][j] + (1.0 - damping) / n as f64;
        }
    }
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| x[i] * g[i][j]).sum()).collect();
        let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    x
}

/// Plain Pearson correlation over endpoint pairs, each edge repeated as
/// many times as its (integer) weight.
pub fn ref_assortativity(edges: &[(usize, usize, u32)], attr: &[f64]) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(a, b, w) in edges {
        for _ in 0..w {
            xs.push(attr[a]);
            ys.push(attr[b]);
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

// ---------------------------------------------------------------- catalogs

/// Independent line cleaner: keeps only the host, lowercased, without a
/// leading `www.` or trailing dots.
pub fn ref_clean(line: &str) -> Option<String> {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut s = line.trim().to_lowercase();
    for scheme in ["https://", "http://"] {
        if s.starts_with(scheme) {
            s = s[scheme.len()..].to_string();
        }
    }
    let s: String = s.chars().take_while(|c| !matches!(c, '/' | '?' | '#')).collect();
    let mut s = s.trim_end_matches('.').to_string();
    if s.starts_with("www.") {
        s = s[4..].to_string();
    }
    (!s.is_empty()).then_some(s)
}

pub fn ref_domain_set(text: &str) -> BTreeSet<String> {
    text.lines().filter_map(ref_clean).collect()
}

/// Every dot-boundary suffix of `host`, longest first; returns the first
/// one present in `domains`.
pub fn ref_suffix_match<'a, V>(host: &str, domains: &'a BTreeMap<String, V>) -> Option<(&'a str, &'a V)> {
    let labels: Vec<&str> = host.split('.').collect();
    (0..labels.len()).find_map(|i| domains.get_key_value(&labels[i..].join(".")).map(|(k, v)| (k.as_str(), v)))
}
