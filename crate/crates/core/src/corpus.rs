//! Image corpus: metadata plus dense feature vectors, k-means strata and the
//! stratified survey subset.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_SURVEY_SIZE: usize = 25_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub location: GeoPoint,
    pub year: i32,
    pub feature: Vec<f64>,
    pub cluster: Option<usize>,
}

/// Immutable once loaded; clustering results are returned separately.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    images: Vec<ImageRecord>,
    dim: Option<usize>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_records(images: Vec<ImageRecord>) -> Result<Self> {
        let mut dim = None;
        let mut index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            match dim {
                None => dim = Some(img.feature.len()),
                Some(d) if d != img.feature.len() => {
                    return Err(Error::invalid(format!(
                        "image `{}` has {} features, expected {d}",
                        img.image_id,
                        img.feature.len()
                    )))
                }
                _ => {}
            }
            if index.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateImage(img.image_id.clone()));
            }
        }
        Ok(Corpus { images, dim, index })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Feature dimension; `None` for an empty corpus.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.index.get(image_id).map(|&i| &self.images[i])
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.images.iter().map(|i| i.feature.as_slice()).collect()
    }

    /// Returns a copy with cluster labels attached.
    pub fn with_clusters(&self, assignments: &[usize]) -> Result<Corpus> {
        if assignments.len() != self.images.len() {
            return Err(Error::invalid("assignment count does not match corpus size"));
        }
        let mut c = self.clone();
        for (img, &a) in c.images.iter_mut().zip(assignments) {
            img.cluster = Some(a);
        }
        Ok(c)
    }
}

/// Loads `image_id,lat,lon,year,f0,...,f{d-1}`.
pub fn ingest_features(path: &Path) -> Result<Corpus> {
    read_features(File::open(path)?, path)
}

pub fn read_features<R: Read>(reader: R, source: &Path) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let fixed = ["image_id", "lat", "lon", "year"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::parse(source, 1, "header must start with image_id,lat,lon,year"));
    }
    let dim = headers.len() - fixed.len();
    let mut images = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(Error::parse(
                source,
                line,
                format!("expected {} features, found {}", dim, rec.len().saturating_sub(fixed.len())),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(source, line, format!("column {}: {e}", headers[j].to_owned())))
        };
        let image_id = rec[0].to_string();
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateImage(image_id));
        }
        let location = GeoPoint::new(num(1)?, num(2)?).map_err(|e| Error::parse(source, line, e.to_string()))?;
        let year = rec[3]
            .trim()
            .parse::<i32>()
            .map_err(|e| Error::parse(source, line, format!("year: {e}")))?;
        let feature = (fixed.len()..headers.len()).map(num).collect::<Result<Vec<_>>>()?;
        images.push(ImageRecord {
            image_id,
            location,
            year,
            feature,
            cluster: None,
        });
    }
    let mut corpus = Corpus::from_records(images)?;
    if corpus.is_empty() {
        corpus.dim = None;
    }
    Ok(corpus)
}

/// Writes the corpus in the layout `read_features` accepts.
pub fn write_features<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = corpus.dim().unwrap_or(0);
    let mut header: Vec<String> = ["image_id", "lat", "lon", "year"].map(String::from).to_vec();
    header.extend((0..dim).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for img in corpus.images() {
        let mut row = vec![
            img.image_id.clone(),
            format!("{:.7}", img.location.lat),
            format!("{:.7}", img.location.lon),
            img.year.to_string(),
        ];
        row.extend(img.feature.iter().map(|v| format!("{v:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `image_id,cluster`.
pub fn write_assignments<W: Write>(corpus: &Corpus, assignments: &[usize], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_id", "cluster"])?;
    for (img, a) in corpus.images().iter().zip(assignments) {
        w.write_record([img.image_id.as_str(), &a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: DEFAULT_K,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn count_distinct(points: &[&[f64]]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding: first centre uniform, later centres drawn with
/// probability proportional to squared distance from the nearest centre.
fn seed_centroids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // guard against round-off landing on an already chosen point
        if d2[pick] == 0.0 {
            pick = d2.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        }
        let c = points[pick].to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds. Deterministic for a given seed.
pub fn kmeans(points: &[&[f64]], params: KMeansParams) -> Result<KMeansFit> {
    let KMeansParams { k, seed, max_iter, tol } = params;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty corpus"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("feature vectors differ in dimension"));
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(Error::TooManyClusters { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut wcss = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            *a = j;
            wcss += d;
        }
        wcss_history.push(wcss);
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut shift_sq = 0.0;
        let mut norm_sq = 0.0;
        for j in 0..k {
            // an emptied cluster keeps its previous centre
            if counts[j] == 0 {
                norm_sq += centroids[j].iter().map(|x| x * x).sum::<f64>();
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                let updated = s * inv;
                shift_sq += (updated - *c) * (updated - *c);
                norm_sq += updated * updated;
                *c = updated;
            }
        }
        if shift_sq.sqrt() <= tol * norm_sq.sqrt().max(f64::MIN_POSITIVE) {
            let mut wcss = 0.0;
            for (a, p) in assignments.iter_mut().zip(points) {
                let (j, d) = nearest(p, &centroids);
                *a = j;
                wcss += d;
            }
            wcss_history.push(wcss);
            break;
        }
    }

    Ok(KMeansFit {
        model: ClusterModel { k, centroids, seed },
        assignments,
        wcss_history,
        iterations,
    })
}

/// Per-cluster quotas proportional to cluster sizes, rounded by largest
/// remainder (ties to the lower cluster index).
pub fn proportional_quotas(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * n / total).collect();
    let mut remainders: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(c, &s)| (s * n % total, c)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = quotas.iter().sum();
    for &(_, c) in remainders.iter().take(n - assigned) {
        quotas[c] += 1;
    }
    quotas
}

/// Draws `n` images, stratified by cluster. Returns corpus indices in
/// ascending order.
pub fn stratified_sample(assignments: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > assignments.len() {
        return Err(Error::invalid(format!(
            "sample size {n} exceeds corpus size {}",
            assignments.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = proportional_quotas(&sizes, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (m, &q) in members.iter().zip(&quotas) {
        chosen.extend(index::sample(&mut rng, m.len(), q).into_iter().map(|j| m[j]));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_counts_and_errors() {
        let src = Path::new("features.csv");
        let empty = read_features("image_id,lat,lon,year,f0\n".as_bytes(), src).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dim(), None);

        let ok = "image_id,lat,lon,year,f0,f1,f2,f3\n\
                  a,51.5,-0.1,2018,1,2,3,4\n\
                  b,51.5,-0.1,2018,1,2,3,4\n\
                  c,51.5,-0.1,2018,1,2,3,4\n";
        let c = read_features(ok.as_bytes(), src).unwrap();
        assert_eq!((c.len(), c.dim()), (3, Some(4)));

        let ragged = "image_id,lat,lon,year,f0,f1,f2,f3\na,51.5,-0.1,2018,1,2,3,4\nb,51.5,-0.1,2018,1,2,3\n";
        let err = read_features(ragged.as_bytes(), src).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let dup = "image_id,lat,lon,year,f0\na,51.5,-0.1,2018,1\na,51.5,-0.1,2018,2\n";
        assert!(matches!(read_features(dup.as_bytes(), src), Err(Error::DuplicateImage(_))));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = [vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let pts: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let fit = kmeans(&pts, KMeansParams { k: 1, ..Default::default() }).unwrap();
        assert!((fit.model.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((fit.model.centroids[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters() {
        let data = [vec![1.0], vec![1.0], vec![2.0]];
        let pts: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let err = kmeans(&pts, KMeansParams { k: 3, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::TooManyClusters { k: 3, distinct: 2 }));
        assert!(kmeans(&[], KMeansParams::default()).is_err());
    }

    #[test]
    fn quotas_largest_remainder() {
        assert_eq!(proportional_quotas(&[600, 300, 100], 100), vec![60, 30, 10]);
        assert_eq!(proportional_quotas(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(proportional_quotas(&[5, 3, 2], 10), vec![5, 3, 2]);
    }

    #[test]
    fn full_draw_is_whole_corpus() {
        let a = vec![0, 1, 0, 2, 1, 0];
        assert_eq!(stratified_sample(&a, 6, 9).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(stratified_sample(&a, 7, 9).is_err());
    }
}
