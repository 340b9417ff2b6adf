//! Output-Area aggregation and choropleth export.
//!
//! Image locations are assigned to administrative polygons, scores are
//! averaged per area, and areas are bucketed into deciles of their means.
//! Point-in-polygon runs on raw lon/lat, which is fine at the scale of a
//! few hundred metres.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use geojson::{GeoJson, Value};
use rstar::primitives::{GeomWithData, Rectangle};
use rstar::RTree;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// A closed ring, first vertex equal to the last.
pub type Ring = Vec<GeoPoint>;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputArea {
    pub oa_id: String,
    /// Polygons, each an outer ring followed by any holes.
    pub polygons: Vec<Vec<Ring>>,
}

impl OutputArea {
    pub fn new(oa_id: impl Into<String>, polygons: Vec<Vec<Ring>>) -> Result<Self> {
        let area = OutputArea {
            oa_id: oa_id.into(),
            polygons,
        };
        area.validate()?;
        Ok(area)
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedPolygon {
            oa_id: self.oa_id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.polygons.is_empty() || self.polygons.iter().any(Vec::is_empty) {
            return Err(self.malformed("no rings"));
        }
        for ring in self.polygons.iter().flatten() {
            if ring.len() < 4 {
                return Err(self.malformed(format!("ring has {} vertices, need at least 4", ring.len())));
            }
            if ring.first() != ring.last() {
                return Err(self.malformed("ring is not closed"));
            }
            if ring.iter().any(|p| !(p.lat.is_finite() && p.lon.is_finite())) {
                return Err(self.malformed("non-finite coordinate"));
            }
        }
        Ok(())
    }

    fn rings(&self) -> impl Iterator<Item = &Ring> {
        self.polygons.iter().flatten()
    }

    /// `[min_lon, min_lat]`, `[max_lon, max_lat]`.
    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in self.rings().flatten() {
            lo = [lo[0].min(p.lon), lo[1].min(p.lat)];
            hi = [hi[0].max(p.lon), hi[1].max(p.lat)];
        }
        (lo, hi)
    }

    /// Even-odd rule over every ring, with points on an edge counted inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let (x, y) = (p.lon, p.lat);
        let mut inside = false;
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (x1, y1, x2, y2) = (w[0].lon, w[0].lat, w[1].lon, w[1].lat);
                if on_segment(x, y, x1, y1, x2, y2) {
                    return true;
                }
                if (y1 > y) != (y2 > y) {
                    let xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
                    if x < xc {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

fn on_segment(x: f64, y: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
    let scale = (x2 - x1).abs().max((y2 - y1).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    x >= x1.min(x2) && x <= x1.max(x2) && y >= y1.min(y2) && y <= y1.max(y2)
}

fn ring_from_positions(oa_id: &str, ring: &[Vec<f64>]) -> Result<Ring> {
    ring.iter()
        .map(|pos| match pos.as_slice() {
            [lon, lat, ..] => Ok(GeoPoint { lat: *lat, lon: *lon }),
            _ => Err(Error::MalformedPolygon {
                oa_id: oa_id.to_string(),
                reason: "position with fewer than two coordinates".into(),
            }),
        })
        .collect()
}

fn property_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Reads a FeatureCollection of (Multi)Polygons carrying an `oa_id`
/// property. Areas come back sorted by id.
pub fn read_areas<R: Read>(mut reader: R, source: &Path) -> Result<Vec<OutputArea>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let gj: GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| Error::invalid(format!("{}: {e}", source.display())))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(Error::invalid(format!("{}: expected a FeatureCollection", source.display())));
    };
    let mut areas = BTreeMap::new();
    for (i, feature) in fc.features.iter().enumerate() {
        let oa_id = feature
            .property("oa_id")
            .and_then(property_string)
            .ok_or_else(|| Error::invalid(format!("{}: feature {i} lacks an oa_id", source.display())))?;
        let geometry = feature.geometry.as_ref().ok_or_else(|| Error::MalformedPolygon {
            oa_id: oa_id.clone(),
            reason: "missing geometry".into(),
        })?;
        let polys: Vec<&Vec<Vec<Vec<f64>>>> = match &geometry.value {
            Value::Polygon(p) => vec![p],
            Value::MultiPolygon(ps) => ps.iter().collect(),
            _ => {
                return Err(Error::MalformedPolygon {
                    oa_id,
                    reason: "geometry is not a Polygon or MultiPolygon".into(),
                })
            }
        };
        let polygons = polys
            .into_iter()
            .map(|rings| rings.iter().map(|r| ring_from_positions(&oa_id, r)).collect())
            .collect::<Result<Vec<Vec<Ring>>>>()?;
        let area = OutputArea::new(oa_id.clone(), polygons)?;
        if areas.insert(oa_id.clone(), area).is_some() {
            return Err(Error::invalid(format!("{}: duplicate oa_id {oa_id}", source.display())));
        }
    }
    Ok(areas.into_values().collect())
}

/// Assigns each image to the lowest-id area containing it. Images outside
/// every area are left out of the result.
pub fn assign_points(images: &[(String, GeoPoint)], areas: &[OutputArea]) -> Result<BTreeMap<String, String>> {
    for a in areas {
        a.validate()?;
    }
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| areas[a].oa_id.cmp(&areas[b].oa_id));
    // rank in oa_id order, so the lowest id wins among overlapping hits
    let boxes: Vec<GeomWithData<Rectangle<[f64; 2]>, usize>> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let (lo, hi) = areas[i].bbox();
            GeomWithData::new(Rectangle::from_corners(lo, hi), rank)
        })
        .collect();
    let tree = RTree::bulk_load(boxes);
    let mut out = BTreeMap::new();
    for (id, p) in images {
        let hit = tree
            .locate_all_at_point(&[p.lon, p.lat])
            .map(|g| g.data)
            .filter(|&rank| areas[order[rank]].contains(*p))
            .min();
        if let Some(rank) = hit {
            out.insert(id.clone(), areas[order[rank]].oa_id.clone());
        }
    }
    Ok(out)
}

/// Reads `image_id,score`. A ranking table is accepted too, in which case
/// its `scaled` column is used.
pub fn read_scores<R: Read>(reader: R, source: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "image_id")
        .ok_or_else(|| Error::parse(source, 1, "missing image_id column"))?;
    let score_col = headers
        .iter()
        .position(|h| h == "score")
        .or_else(|| headers.iter().position(|h| h == "scaled"))
        .ok_or_else(|| Error::parse(source, 1, "missing score column"))?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        let score: f64 = rec[score_col]
            .trim()
            .parse()
            .map_err(|e: std::num::ParseFloatError| Error::parse(source, line, e.to_string()))?;
        if !score.is_finite() {
            return Err(Error::parse(source, line, "score is not finite"));
        }
        if out.insert(rec[id_col].to_string(), score).is_some() {
            return Err(Error::DuplicateImage(rec[id_col].to_string()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaAggregate {
    pub oa_id: String,
    /// `None` when the area holds no scored image.
    pub mean_score: Option<f64>,
    pub n_images: usize,
    pub decile: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSummary {
    pub areas: usize,
    pub scored_areas: usize,
    pub images: usize,
    pub min_images: Option<usize>,
    pub median_images: Option<f64>,
    pub max_images: Option<usize>,
}

/// Mean score per area, over every area in `areas` (empty ones included).
/// Images without a score or an area are skipped.
pub fn aggregate(
    scores: &BTreeMap<String, f64>,
    assignment: &BTreeMap<String, String>,
    areas: &[OutputArea],
) -> (Vec<AreaAggregate>, AggregateSummary) {
    let mut sums: BTreeMap<&str, (f64, usize)> = areas.iter().map(|a| (a.oa_id.as_str(), (0.0, 0))).collect();
    for (image, oa) in assignment {
        if let (Some(s), Some(acc)) = (scores.get(image), sums.get_mut(oa.as_str())) {
            acc.0 += s;
            acc.1 += 1;
        }
    }
    let aggs: Vec<AreaAggregate> = sums
        .into_iter()
        .map(|(oa, (sum, n))| AreaAggregate {
            oa_id: oa.to_string(),
            mean_score: (n > 0).then(|| sum / n as f64),
            n_images: n,
            decile: None,
        })
        .collect();
    let mut counts: Vec<usize> = aggs.iter().map(|a| a.n_images).filter(|&n| n > 0).collect();
    counts.sort_unstable();
    let median = (!counts.is_empty()).then(|| {
        let m = counts.len() / 2;
        if counts.len() % 2 == 1 {
            counts[m] as f64
        } else {
            (counts[m - 1] + counts[m]) as f64 / 2.0
        }
    });
    let summary = AggregateSummary {
        areas: aggs.len(),
        scored_areas: counts.len(),
        images: counts.iter().sum(),
        min_images: counts.first().copied(),
        median_images: median,
        max_images: counts.last().copied(),
    };
    (aggs, summary)
}

/// Ranks scored areas by (mean, oa_id) and cuts the ranking into ten
/// buckets whose sizes differ by at most one.
pub fn assign_deciles(aggregates: &mut [AreaAggregate]) -> Result<()> {
    let mut scored: Vec<usize> = (0..aggregates.len())
        .filter(|&i| aggregates[i].mean_score.is_some())
        .collect();
    if scored.len() < 10 {
        return Err(Error::invalid(format!(
            "deciles need at least 10 areas with images, got {}",
            scored.len()
        )));
    }
    scored.sort_by(|&a, &b| {
        let (x, y) = (&aggregates[a], &aggregates[b]);
        x.mean_score
            .unwrap()
            .total_cmp(&y.mean_score.unwrap())
            .then_with(|| x.oa_id.cmp(&y.oa_id))
    });
    let n = scored.len();
    for a in aggregates.iter_mut() {
        a.decile = None;
    }
    for (rank, &i) in scored.iter().enumerate() {
        aggregates[i].decile = Some((rank * 10 / n) as u8 + 1);
    }
    Ok(())
}

fn push_ring(out: &mut String, ring: &Ring) {
    out.push('[');
    for (i, p) in ring.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{:.6},{:.6}]", p.lon, p.lat);
    }
    out.push(']');
}

fn push_geometry(out: &mut String, area: &OutputArea) {
    out.push_str("{\"type\":\"MultiPolygon\",\"coordinates\":[");
    for (j, poly) in area.polygons.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        out.push('[');
        for (k, ring) in poly.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            push_ring(out, ring);
        }
        out.push(']');
    }
    out.push_str("]}");
}

/// Renders a FeatureCollection with one feature per aggregate, in
/// aggregate order. Numbers carry six decimals and the text depends only
/// on the inputs.
pub fn render_geojson(aggregates: &[AreaAggregate], areas: &[OutputArea]) -> Result<String> {
    let by_id: BTreeMap<&str, &OutputArea> = areas.iter().map(|a| (a.oa_id.as_str(), a)).collect();
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
    for (i, agg) in aggregates.iter().enumerate() {
        let area = by_id
            .get(agg.oa_id.as_str())
            .ok_or_else(|| Error::invalid(format!("no polygon for area {}", agg.oa_id)))?;
        if i > 0 {
            out.push(',');
        }
        out.push_str("\n{\"type\":\"Feature\",\"properties\":{\"oa_id\":");
        out.push_str(&serde_json::to_string(&agg.oa_id)?);
        out.push_str(",\"mean_score\":");
        match agg.mean_score {
            Some(m) => {
                let _ = write!(out, "{m:.6}");
            }
            None => out.push_str("null"),
        }
        let _ = write!(out, ",\"n_images\":{},\"decile\":", agg.n_images);
        match agg.decile {
            Some(d) => {
                let _ = write!(out, "{d}");
            }
            None => out.push_str("null"),
        }
        out.push_str("},\"geometry\":");
        push_geometry(&mut out, area);
        out.push('}');
    }
    out.push_str("\n]}\n");
    Ok(out)
}

pub fn export_geojson<W: Write>(aggregates: &[AreaAggregate], areas: &[OutputArea], mut writer: W) -> Result<()> {
    writer.write_all(render_geojson(aggregates, areas)?.as_bytes())?;
    writer.flush()?;
    Ok(())
}

/// Writes bare area polygons with only an `oa_id` property.
pub fn write_areas<W: Write>(areas: &[OutputArea], mut writer: W) -> Result<()> {
    let mut out = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
    for (i, area) in areas.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("\n{\"type\":\"Feature\",\"properties\":{\"oa_id\":");
        out.push_str(&serde_json::to_string(&area.oa_id)?);
        out.push_str("},\"geometry\":");
        push_geometry(&mut out, area);
        out.push('}');
    }
    out.push_str("\n]}\n");
    writer.write_all(out.as_bytes())?;
    writer.flush()?;
    Ok(())
}

/// Reads the properties of an exported map back into aggregates.
pub fn read_aggregates<R: Read>(mut reader: R, source: &Path) -> Result<Vec<AreaAggregate>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let gj: GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| Error::invalid(format!("{}: {e}", source.display())))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(Error::invalid(format!("{}: expected a FeatureCollection", source.display())));
    };
    let bad = |i: usize, what: &str| Error::invalid(format!("{}: feature {i}: bad {what}", source.display()));
    fc.features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let oa_id = f.property("oa_id").and_then(property_string).ok_or_else(|| bad(i, "oa_id"))?;
            let mean_score = match f.property("mean_score") {
                Some(serde_json::Value::Null) => None,
                Some(v) => Some(v.as_f64().ok_or_else(|| bad(i, "mean_score"))?),
                None => return Err(bad(i, "mean_score")),
            };
            let n_images = f
                .property("n_images")
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| bad(i, "n_images"))? as usize;
            let decile = match f.property("decile") {
                Some(serde_json::Value::Null) => None,
                Some(v) => Some(
                    v.as_u64()
                        .filter(|d| (1..=10).contains(d))
                        .ok_or_else(|| bad(i, "decile"))? as u8,
                ),
                None => return Err(bad(i, "decile")),
            };
            Ok(AreaAggregate {
                oa_id,
                mean_score,
                n_images,
                decile,
            })
        })
        .collect()
}

/// CSV mirror of the map: `oa_id,mean_score,n_images,decile`.
pub fn write_aggregates_csv<W: Write>(aggregates: &[AreaAggregate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["oa_id", "mean_score", "n_images", "decile"])?;
    for a in aggregates {
        w.write_record([
            a.oa_id.clone(),
            a.mean_score.map(|m| format!("{m:.6}")).unwrap_or_default(),
            a.n_images.to_string(),
            a.decile.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(id: &str, x0: f64, y0: f64, side: f64) -> OutputArea {
        let ring = vec![
            GeoPoint { lat: y0, lon: x0 },
            GeoPoint { lat: y0, lon: x0 + side },
            GeoPoint { lat: y0 + side, lon: x0 + side },
            GeoPoint { lat: y0 + side, lon: x0 },
            GeoPoint { lat: y0, lon: x0 },
        ];
        OutputArea::new(id, vec![vec![ring]]).unwrap()
    }

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint { lat, lon }
    }

    #[test]
    fn interior_exterior_and_shared_edge() {
        let areas = vec![square("b", 0.0, 0.0, 1.0), square("a", 1.0, 0.0, 1.0)];
        let imgs = vec![
            ("centre".to_string(), pt(0.5, 0.5)),
            ("outside".to_string(), pt(5.0, 5.0)),
            ("edge".to_string(), pt(1.0, 0.5)),
            ("corner".to_string(), pt(0.0, 0.0)),
        ];
        let got = assign_points(&imgs, &areas).unwrap();
        assert_eq!(got["centre"], "b");
        assert!(!got.contains_key("outside"));
        assert_eq!(got["edge"], "a");
        assert_eq!(got["corner"], "b");
    }

    #[test]
    fn holes_are_excluded() {
        let outer = square("x", 0.0, 0.0, 4.0).polygons[0][0].clone();
        let hole = square("x", 1.0, 1.0, 2.0).polygons[0][0].clone();
        let area = OutputArea::new("x", vec![vec![outer, hole]]).unwrap();
        assert!(!area.contains(pt(2.0, 2.0)));
        assert!(area.contains(pt(0.5, 0.5)));
    }

    #[test]
    fn malformed_rings_name_the_area() {
        let open = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)];
        let err = OutputArea::new("E001", vec![vec![open]]).unwrap_err();
        assert!(err.to_string().contains("E001"));
        let short = vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 0.0)];
        assert!(OutputArea::new("E002", vec![vec![short]]).is_err());
    }

    #[test]
    fn means_and_deciles() {
        let areas: Vec<OutputArea> = (0..103).map(|i| square(&format!("oa{i:03}"), i as f64, 0.0, 1.0)).collect();
        let scores: BTreeMap<String, f64> = (0..103).map(|i| (format!("img{i}"), ((i * 37) % 103) as f64)).collect();
        let assignment: BTreeMap<String, String> =
            (0..103).map(|i| (format!("img{i}"), format!("oa{i:03}"))).collect();
        let (mut aggs, summary) = aggregate(&scores, &assignment, &areas);
        assert_eq!(summary.images, 103);
        assign_deciles(&mut aggs).unwrap();
        let mut sizes = [0usize; 10];
        for a in &aggs {
            sizes[a.decile.unwrap() as usize - 1] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 10 || s == 11), "{sizes:?}");
        for a in &aggs {
            for b in &aggs {
                if a.mean_score < b.mean_score {
                    assert!(a.decile <= b.decile);
                }
            }
        }
    }

    #[test]
    fn three_scores_average() {
        let areas = vec![square("z", 0.0, 0.0, 1.0), square("y", 3.0, 0.0, 1.0)];
        let scores: BTreeMap<String, f64> = [("a", 2.0), ("b", 4.0), ("c", 9.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let assignment: BTreeMap<String, String> = ["a", "b", "c"].iter().map(|k| (k.to_string(), "z".into())).collect();
        let (aggs, _) = aggregate(&scores, &assignment, &areas);
        let z = aggs.iter().find(|a| a.oa_id == "z").unwrap();
        assert_eq!(z.mean_score, Some(5.0));
        let y = aggs.iter().find(|a| a.oa_id == "y").unwrap();
        assert_eq!((y.mean_score, y.n_images), (None, 0));
        let mut few = aggs.clone();
        assert!(assign_deciles(&mut few).is_err());
    }

    #[test]
    fn empty_export_and_round_trip() {
        let text = render_geojson(&[], &[]).unwrap();
        let back = read_aggregates(text.as_bytes(), Path::new("m.geojson")).unwrap();
        assert!(back.is_empty());

        let areas = vec![square("E00000001", -0.1, 51.5, 0.01)];
        let aggs = vec![AreaAggregate {
            oa_id: "E00000001".into(),
            mean_score: Some(6.25),
            n_images: 3,
            decile: Some(4),
        }];
        let text = render_geojson(&aggs, &areas).unwrap();
        assert_eq!(read_aggregates(text.as_bytes(), Path::new("m.geojson")).unwrap(), aggs);
        let reread = read_areas(text.as_bytes(), Path::new("m.geojson")).unwrap();
        assert_eq!(reread[0].oa_id, "E00000001");
        assert_eq!(render_geojson(&aggs, &reread).unwrap(), text);
    }
}
