//! Browser bindings: curvature of a metric, the sector decomposition of its zero set, and the
//! embedding of a graph metric through the development map. Each op returns a JSON string.

use darboux::embed::export_mesh;
use darboux::grid::{Grid, ScalarField};
use darboux::metric::{ClosedMetric, GeometryCache, MetricField, MetricSource, PointGeometry};
use darboux::pipeline::embed_height;
use darboux::regions::{ZeroSetOptions, decompose};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// `mode` is `"graph"` (height function in `a`) or `"metric"` (components `a`, `b`, `c`).
fn metric_of(mode: &str, a: &str, b: &str, c: &str) -> darboux::Result<ClosedMetric> {
    match mode {
        "graph" => ClosedMetric::graph(a),
        "metric" => ClosedMetric::parse(a, b, c),
        other => Err(darboux::Error::Config(format!("unknown metric mode `{other}`"))),
    }
}

pub fn curvature_json(mode: &str, a: &str, b: &str, c: &str, half: f64, n: usize) -> darboux::Result<String> {
    let m = metric_of(mode, a, b, c)?;
    let geo = GeometryCache::from_source(&m, Grid::square(half, n)?, 1.0)?;
    let k = &geo.k;
    let (lo, hi) = k.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |s, &v| (s.0.min(v), s.1.max(v)));
    Ok(json!({ "n": n, "half": half, "k": k.data, "k_min": lo, "k_max": hi, "vanishing_order": geo.n }).to_string())
}

/// Zero rays and sectors from `K` sampled on `[-probe, probe]^2`; angles in the input chart.
pub fn regions_json(mode: &str, a: &str, b: &str, c: &str, probe: f64) -> darboux::Result<String> {
    let m = metric_of(mode, a, b, c)?;
    let k = ScalarField::from_fn(Grid::square(1.0, 129)?, |x, y| PointGeometry::from_jets(&m.jets(probe * x, probe * y, 2)).k());
    let d = decompose(&k, &ZeroSetOptions::default())?;
    let sectors: Vec<_> = d
        .sectors
        .iter()
        .map(|s| json!({ "label": s.label, "sign": s.sign, "start": s.start + d.rotation, "end": s.end + d.rotation }))
        .collect();
    let rays: Vec<f64> = d.zero_set.rays.iter().map(|r| r.angle).collect();
    Ok(json!({ "rotation": d.rotation, "crossing_angle": d.zero_set.angle, "rays": rays, "sectors": sectors }).to_string())
}

/// Mesh of the graph surface rebuilt from `g - dF^2` and `F`, with its isometry error.
pub fn embed_graph_json(f: &str, half: f64, n: usize) -> darboux::Result<String> {
    let m = ClosedMetric::graph(f)?;
    let fe = darboux::expr::parse(f)?;
    let grid = Grid::square(half, n)?;
    let g = MetricField::sample(&m, grid, 1.0)?;
    let z = ScalarField::from_fn(grid, |u, v| fe.eval(u, v));
    let (mesh, s) = embed_height(&g, &z, 1e-3)?;
    let mut obj = vec![];
    export_mesh(&mesh, &mut obj)?;
    let positions: Vec<f64> = mesh.positions.iter().flatten().copied().collect();
    Ok(json!({
        "n": n,
        "positions": positions,
        "rel_error": s.rel_error,
        "loop_defect": s.loop_defect,
        "obj": String::from_utf8_lossy(&obj),
    })
    .to_string())
}

fn js(r: darboux::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn curvature(mode: &str, a: &str, b: &str, c: &str, half: f64, n: usize) -> Result<String, JsError> {
    js(curvature_json(mode, a, b, c, half, n))
}

#[wasm_bindgen]
pub fn regions(mode: &str, a: &str, b: &str, c: &str, probe: f64) -> Result<String, JsError> {
    js(regions_json(mode, a, b, c, probe))
}

#[wasm_bindgen]
pub fn embed_graph(f: &str, half: f64, n: usize) -> Result<String, JsError> {
    js(embed_graph_json(f, half, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    const M1: &str = "u^2/2 + u*v^3/6";

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn sphere_curvature_is_one() {
        let v = parse(&curvature_json("metric", "1", "0", "cos(u)^2", 0.5, 33).unwrap());
        let k = v["k"].as_array().unwrap();
        assert_eq!(k.len(), 33 * 33);
        assert!(k.iter().all(|x| (x.as_f64().unwrap() - 1.0).abs() < 1e-12));
        assert_eq!(v["vanishing_order"], -1);
    }

    #[test]
    fn m1_has_four_sectors_split_by_the_axes() {
        let v = parse(&regions_json("graph", M1, "", "", 0.01).unwrap());
        assert_eq!(v["sectors"].as_array().unwrap().len(), 4);
        for r in v["rays"].as_array().unwrap() {
            let a = r.as_f64().unwrap();
            let off = (a / std::f64::consts::FRAC_PI_2 - (a / std::f64::consts::FRAC_PI_2).round()).abs();
            assert!(off < 0.02, "ray at {a}");
        }
    }

    #[test]
    fn graph_embedding_reproduces_the_metric() {
        let v = parse(&embed_graph_json(M1, 0.2, 33).unwrap());
        assert_eq!(v["positions"].as_array().unwrap().len(), 3 * 33 * 33);
        assert!(v["rel_error"].as_f64().unwrap() < 1e-4);
        assert_eq!(v["obj"].as_str().unwrap().lines().filter(|l| l.starts_with("f ")).count(), 2 * 32 * 32);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(curvature_json("metric", "sin(u", "0", "1", 0.5, 33).is_err());
        assert!(curvature_json("bogus", "1", "0", "1", 0.5, 33).is_err());
        assert!(regions_json("metric", "1", "0", "1", 0.01).is_err());
    }
}
