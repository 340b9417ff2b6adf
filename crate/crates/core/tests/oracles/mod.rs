//! Independent reference computations and data generators shared by the
//! integration tests and the acceptance harness. Nothing here calls the
//! code it is used to check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use chrono::{DateTime, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use streetpulse::geo::GeoPoint;
use streetpulse::mlm::Cell;
use streetpulse::votes::{Choice, PairKey, PairKind, Vote};

// ---- Gauss–Legendre quadrature -------------------------------------------

/// Nodes and weights on [-1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre integral of `f` over [a, b].
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in rule.0.iter().zip(&rule.1) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

// ---- two-player TrueSkill by direct moment matching -----------------------

/// Posterior Gaussian beliefs of (winner, loser) given that the winner's
/// noisy performance exceeded the loser's by more than `epsilon`.
///
/// The performance difference `d ~ N(m, c²)` is truncated to `d > epsilon`
/// and its first two moments are integrated numerically. Each skill is
/// jointly Gaussian with `d`, so its posterior mean and variance follow
/// from linear regression on `d`.
pub fn trueskill_oracle(
    winner: (f64, f64),
    loser: (f64, f64),
    beta: f64,
    tau: f64,
    epsilon: f64,
) -> ((f64, f64), (f64, f64)) {
    let var_w = winner.1 * winner.1 + tau * tau;
    let var_l = loser.1 * loser.1 + tau * tau;
    let m = winner.0 - loser.0;
    let c2 = 2.0 * beta * beta + var_w + var_l;
    let c = c2.sqrt();
    // standardized truncation point; z = z0 + u with u >= 0
    let z0 = (epsilon - m) / c;
    // density of z relative to its value at z0, so deep tails do not underflow
    let rel = |u: f64| (-z0 * u - 0.5 * u * u).exp();
    // past the mode the density falls below e^-50 within 10 units
    let upper = (-z0).max(0.0) + 10.0;
    let rule = gauss_legendre(20);
    let panels = 400;
    let z_mass = integrate(rel, 0.0, upper, panels, &rule);
    let m1 = integrate(|u| u * rel(u), 0.0, upper, panels, &rule) / z_mass;
    let m2 = integrate(|u| u * u * rel(u), 0.0, upper, panels, &rule) / z_mass;
    let mean_d = m + c * (z0 + m1);
    let var_d = c2 * (m2 - m1 * m1);

    let post = |mu: f64, var: f64, cov: f64| {
        let b = cov / c2;
        let mean = mu + b * (mean_d - m);
        let v = var - b * cov + b * b * var_d;
        (mean, v.sqrt())
    };
    (post(winner.0, var_w, var_w), post(loser.0, var_l, -var_l))
}

// ---- point in polygon by angle summation ----------------------------------

/// Winding number of `ring` around `p`: the total signed angle swept by
/// the edges, in turns.
pub fn winding_number(ring: &[GeoPoint], p: GeoPoint) -> i32 {
    let mut total = 0.0;
    for w in ring.windows(2) {
        let (ax, ay) = (w[0].lon - p.lon, w[0].lat - p.lat);
        let (bx, by) = (w[1].lon - p.lon, w[1].lat - p.lat);
        total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
    }
    (total / (2.0 * PI)).round() as i32
}

/// Inside when some polygon's outer ring winds around `p` and none of its
/// holes do.
pub fn polygon_oracle(polygons: &[Vec<Vec<GeoPoint>>], p: GeoPoint) -> bool {
    polygons.iter().any(|rings| {
        winding_number(&rings[0], p) != 0 && rings[1..].iter().all(|h| winding_number(h, p) == 0)
    })
}

/// Distance from `p` to the nearest edge of any ring.
pub fn edge_distance(polygons: &[Vec<Vec<GeoPoint>>], p: GeoPoint) -> f64 {
    let mut best = f64::INFINITY;
    for ring in polygons.iter().flatten() {
        for w in ring.windows(2) {
            let (ax, ay, bx, by) = (w[0].lon, w[0].lat, w[1].lon, w[1].lat);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((p.lon - ax) * dx + (p.lat - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (qx, qy) = (ax + t * dx, ay + t * dy);
            best = best.min(((p.lon - qx).powi(2) + (p.lat - qy).powi(2)).sqrt());
        }
    }
    best
}

/// Closed star-shaped ring: evenly spaced angles jittered by up to a
/// quarter step, random radii. Every edge stays at least
/// `r_min * cos(0.75 * 2π / vertices)` from the center.
pub fn star_ring(rng: &mut ChaCha8Rng, center: (f64, f64), r_min: f64, r_max: f64, vertices: usize) -> Vec<GeoPoint> {
    let step = 2.0 * PI / vertices as f64;
    let offset = rng.random_range(0.0..step);
    let mut ring: Vec<GeoPoint> = (0..vertices)
        .map(|i| {
            let a = offset + i as f64 * step + rng.random_range(-0.25..0.25) * step;
            let r = rng.random_range(r_min..r_max);
            GeoPoint {
                lat: center.0 + r * a.sin(),
                lon: center.1 + r * a.cos(),
            }
        })
        .collect();
    ring.push(ring[0]);
    ring
}

/// A polygon, sometimes with a hole, sometimes a two-part multipolygon
/// whose parts are disjoint.
pub fn random_area(rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<GeoPoint>>> {
    let parts = if rng.random_bool(0.2) { 2 } else { 1 };
    let origin = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    (0..parts)
        .map(|k| {
            let center = (origin.0, origin.1 + 2.0 * k as f64);
            let vertices = rng.random_range(5..16);
            let outer = star_ring(rng, center, 0.3, 0.8, vertices);
            let mut rings = vec![outer];
            if rng.random_bool(0.3) {
                // 5+ vertices at radius >= 0.3 keep every outer edge beyond 0.17
                let vertices = rng.random_range(5..8);
                rings.push(star_ring(rng, center, 0.05, 0.15, vertices));
            }
            rings
        })
        .collect()
}

// ---- votes ----------------------------------------------------------------

pub fn ts(seconds: f64) -> DateTime<Utc> {
    let micros = (seconds * 1e6).round() as i64;
    Utc.timestamp_micros(1_560_000_000_000_000 + micros).unwrap()
}

pub fn vote(id: u64, session: &str, left: &str, right: &str, choice: Choice, at_s: f64) -> Vote {
    Vote {
        vote_id: id,
        session_id: session.to_string(),
        left_image: left.to_string(),
        right_image: right.to_string(),
        choice,
        pair_kind: PairKind::Fresh,
        client_ts: None,
        server_ts: ts(at_s),
    }
}

/// Ids of votes that follow an earlier vote (by time, then id) from the
/// same session on the same unordered pair within `window_s`. Quadratic.
pub fn brute_duplicates(votes: &[Vote], window_s: f64) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    for v in votes {
        let pair = PairKey::new(&v.left_image, &v.right_image);
        for u in votes {
            let earlier = (u.server_ts, u.vote_id) < (v.server_ts, v.vote_id);
            let gap = (v.server_ts - u.server_ts).num_microseconds().unwrap() as f64 / 1e6;
            if earlier
                && u.session_id == v.session_id
                && PairKey::new(&u.left_image, &u.right_image) == pair
                && gap < window_s
            {
                out.insert(v.vote_id);
                break;
            }
        }
    }
    out
}

/// Sessions whose larger side share strictly exceeds `threshold` over at
/// least `min_games` left/right votes.
pub fn brute_one_sided(votes: &[Vote], threshold: f64, min_games: usize) -> BTreeSet<String> {
    let sessions: BTreeSet<&str> = votes.iter().map(|v| v.session_id.as_str()).collect();
    sessions
        .into_iter()
        .filter(|s| {
            let left = votes.iter().filter(|v| v.session_id == *s && v.choice == Choice::Left).count();
            let right = votes.iter().filter(|v| v.session_id == *s && v.choice == Choice::Right).count();
            let n = left + right;
            n >= min_games && (left.max(right) as f64) > threshold * n as f64
        })
        .map(str::to_string)
        .collect()
}

/// Random vote log with planted one-sided sessions and planted near-repeat
/// votes. Decisive votes only.
pub fn qa_votes(rng: &mut ChaCha8Rng, sessions: usize, images: usize) -> Vec<Vote> {
    let mut votes = Vec::new();
    let mut id = 0u64;
    for s in 0..sessions {
        let session = format!("s{s:03}");
        let bias = match s % 4 {
            0 => 1.0,
            1 => 0.93,
            _ => 0.5,
        };
        let games = rng.random_range(5..30);
        let mut t = rng.random_range(0.0..1000.0);
        for _ in 0..games {
            let a = rng.random_range(0..images);
            let mut b = rng.random_range(0..images);
            while b == a {
                b = rng.random_range(0..images);
            }
            let (l, r) = (format!("i{a:02}"), format!("i{b:02}"));
            let choice = if rng.random_bool(bias) { Choice::Left } else { Choice::Right };
            t += rng.random_range(1.0..90.0);
            votes.push(vote(id, &session, &l, &r, choice, t));
            id += 1;
            if rng.random_bool(0.2) {
                // the same pair again, possibly swapped, inside or outside the window
                let gap = rng.random_range(0.5..120.0);
                let (l2, r2) = if rng.random_bool(0.5) { (&l, &r) } else { (&r, &l) };
                votes.push(vote(id, &session, l2, r2, choice, t + gap));
                id += 1;
            }
        }
    }
    votes
}

// ---- rankings ---------------------------------------------------------------

/// `games` random pairs over `n` images where the higher index always wins.
pub fn strict_order_votes(rng: &mut ChaCha8Rng, n: usize, games: usize) -> Vec<Vote> {
    (0..games)
        .map(|g| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            let choice = if a > b { Choice::Left } else { Choice::Right };
            vote(g as u64, "s", &format!("img{a:02}"), &format!("img{b:02}"), choice, g as f64)
        })
        .collect()
}

// ---- multilevel model -----------------------------------------------------

/// One cell per pair: `votes` Bernoulli draws at `sigmoid(beta0 + u_j)`
/// with `u_j ~ N(0, sigma_u²)`. Returns the cells and the drawn effects.
pub fn simulate_cells(rng: &mut ChaCha8Rng, beta0: f64, sigma_u: f64, pairs: usize, votes: usize) -> (Vec<Cell>, Vec<f64>) {
    let mut effects = Vec::with_capacity(pairs);
    let cells = (0..pairs)
        .map(|j| {
            let u = if sigma_u > 0.0 {
                Normal::new(0.0, sigma_u).unwrap().sample(rng)
            } else {
                0.0
            };
            effects.push(u);
            let p = 1.0 / (1.0 + (-(beta0 + u)).exp());
            let k = (0..votes).filter(|_| rng.random::<f64>() < p).count();
            Cell {
                pair: PairKey::new(&format!("a{j:03}"), &format!("b{j:03}")),
                group: None,
                n: votes,
                k,
            }
        })
        .collect();
    (cells, effects)
}

/// Upper acceptance bound for a Binomial(n, p) count, `z` standard
/// deviations above the mean with continuity correction.
pub fn binomial_upper(n: u64, p: f64, z: f64) -> f64 {
    let mean = n as f64 * p;
    mean + z * (mean * (1.0 - p)).sqrt() + 0.5
}

// ---- interpretability data ------------------------------------------------

/// Rows of `d` standard normal features.
pub fn normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Labels from the sign of `w·x`, dropping rows within `margin` of the
/// boundary so the classes are linearly separable with a gap.
pub fn separable(rng: &mut ChaCha8Rng, n: usize, w: &[f64], margin: f64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    while x.len() < n {
        let row: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
        let s: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        if s.abs() > margin {
            x.push(row);
            y.push(s > 0.0);
        }
    }
    (x, y)
}

/// Central finite-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut p = at.to_vec();
            p[i] = at[i] + h;
            let up = f(&p);
            p[i] = at[i] - h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ---- correlation ----------------------------------------------------------

/// Two score tables over `n` ids with population correlation `rho`.
pub fn correlated_tables(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let id = format!("img{i:05}");
        a.insert(id.clone(), x);
        b.insert(id, rho * x + (1.0 - rho * rho).sqrt() * e);
    }
    (a, b)
}
