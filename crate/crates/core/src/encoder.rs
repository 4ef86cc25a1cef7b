//! Attention-based map encoder (forward only, randomly initialized).
//!
//! Grid features from a small CNN are fused with positional embeddings into
//! pointwise features. A max-pooled MLP over those yields global features;
//! global features plus a proprioceptive embedding form an attention query
//! over the pointwise features. The embedding is `global || attended`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::fusion::QueryResult;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub rows: usize,
    pub cols: usize,
    /// Channels per map point: 3 for `(x, y, z)`, 4 with uncertainty.
    pub d_map: usize,
    /// Proprioceptive embedding width.
    pub d_pe: usize,
    pub width: usize,
    pub heads: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(rows: usize, cols: usize, d_map: usize, d_pe: usize) -> Self {
        Self {
            rows,
            cols,
            d_map,
            d_pe,
            width: 64,
            heads: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols == 0 {
            return Err(Error::Config("map must have at least one point".into()));
        }
        if self.d_map < 3 {
            return Err(Error::Config("map points need at least (x, y, z)".into()));
        }
        if self.heads == 0 || self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide width {}",
                self.heads, self.width
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.rows * self.cols
    }

    /// Length of the concatenated embedding.
    pub fn embedding_len(&self) -> usize {
        2 * self.width
    }
}

/// Row-major grid of map points, `d_map` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPoints {
    pub rows: usize,
    pub cols: usize,
    pub d_map: usize,
    pub data: Vec<f64>,
}

impl MapPoints {
    pub fn from_query(q: &QueryResult) -> Self {
        Self {
            rows: q.rows,
            cols: q.cols,
            d_map: 4,
            data: q.points.iter().flatten().copied().collect(),
        }
    }

    /// Drops the uncertainty channel.
    pub fn without_uncertainty(&self) -> Self {
        Self {
            d_map: 3,
            data: self
                .data
                .chunks(self.d_map)
                .flat_map(|p| p[..3].to_vec())
                .collect(),
            ..*self
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_map..(i + 1) * self.d_map]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Self {
        let a = (6.0 / inp as f64).sqrt();
        Self {
            w: DMatrix::from_fn(out, inp, |_, _| rng.gen_range(-a..a)),
            b: DVector::from_fn(out, |_, _| rng.gen_range(-0.1..0.1)),
        }
    }

    /// Applies to each row of `x` (points x features).
    fn rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.w.transpose();
        for mut r in y.row_iter_mut() {
            r += self.b.transpose();
        }
        y
    }

    fn vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

/// Two dense layers with an ELU in between and after.
#[derive(Debug, Clone, PartialEq)]
struct Mlp(Dense, Dense);

impl Mlp {
    fn init<R: Rng + ?Sized>(inp: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        Self(Dense::init(inp, hidden, rng), Dense::init(hidden, out, rng))
    }

    fn rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.1.rows(&self.0.rows(x).map(elu)).map(elu)
    }

    fn vec(&self, x: &DVector<f64>) -> DVector<f64> {
        self.1.vec(&self.0.vec(x).map(elu)).map(elu)
    }
}

/// 3x3 same-padded convolution over the grid; weights `out x (in * 9)`.
#[derive(Debug, Clone, PartialEq)]
struct Conv3 {
    inp: usize,
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Conv3 {
    fn init<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Self {
        let d = Dense::init(inp * 9, out, rng);
        Self {
            inp,
            w: d.w,
            b: d.b,
        }
    }

    /// `x` is points x channels in row-major grid order.
    fn apply(&self, x: &DMatrix<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
        let n = rows * cols;
        let mut patches = DMatrix::zeros(n, self.inp * 9);
        for r in 0..rows {
            for c in 0..cols {
                for (k, (dr, dc)) in (-1i64..=1)
                    .flat_map(|a| (-1i64..=1).map(move |b| (a, b)))
                    .enumerate()
                {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                        continue;
                    }
                    let src = rr as usize * cols + cc as usize;
                    for ch in 0..self.inp {
                        patches[(r * cols + c, ch * 9 + k)] = x[(src, ch)];
                    }
                }
            }
        }
        let mut y = patches * self.w.transpose();
        for mut row in y.row_iter_mut() {
            row += self.b.transpose();
        }
        y.map(elu)
    }
}

/// Randomly initialized encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    conv1: Conv3,
    conv2: Conv3,
    positional: Mlp,
    pointwise: Mlp,
    global: Mlp,
    query: Mlp,
    key: Dense,
    value: Dense,
    output: Dense,
}

impl EncoderParams {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, 0x656e_63);
        let w = config.width;
        // The CNN sees every channel except the planar coordinates.
        let grid_channels = config.d_map - 2;
        Ok(Self {
            config,
            conv1: Conv3::init(grid_channels, w, &mut rng),
            conv2: Conv3::init(w, w, &mut rng),
            positional: Mlp::init(2, w, w, &mut rng),
            pointwise: Mlp::init(2 * w, w, w, &mut rng),
            global: Mlp::init(w, w, w, &mut rng),
            query: Mlp::init(w + config.d_pe, w, w, &mut rng),
            key: Dense::init(w, w, &mut rng),
            value: Dense::init(w, w, &mut rng),
            output: Dense::init(w, w, &mut rng),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEmbedding {
    pub global_features: Vec<f64>,
    pub weighted_local_features: Vec<f64>,
    /// `global_features || weighted_local_features`.
    pub embedding: Vec<f64>,
    /// One distribution over map points per head.
    pub attention_weights: Vec<Vec<f64>>,
    /// Point index selected by max pooling, per global feature.
    pub pool_argmax: Vec<usize>,
}

fn check_points(points: &MapPoints, cfg: &EncoderConfig) -> Result<()> {
    if (points.rows, points.cols) != (cfg.rows, cfg.cols) || points.d_map != cfg.d_map {
        return Err(Error::ShapeMismatch {
            expected: (cfg.rows, cfg.cols),
            got: (points.rows, points.cols),
        });
    }
    if points.data.len() != cfg.points() * cfg.d_map {
        return Err(Error::ShapeMismatch {
            expected: (cfg.points(), cfg.d_map),
            got: (points.data.len(), 1),
        });
    }
    Ok(())
}

/// Per-point features (points x width), the only stage that sees grid
/// adjacency.
pub fn pointwise_features(points: &MapPoints, params: &EncoderParams) -> Result<DMatrix<f64>> {
    let cfg = params.config;
    check_points(points, &cfg)?;
    let n = cfg.points();
    let grid = DMatrix::from_fn(n, cfg.d_map - 2, |i, c| points.point(i)[c + 2]);
    let xy = DMatrix::from_fn(n, 2, |i, c| points.point(i)[c]);
    let local = params.conv2.apply(
        &params.conv1.apply(&grid, cfg.rows, cfg.cols),
        cfg.rows,
        cfg.cols,
    );
    let pos = params.positional.rows(&xy);
    let mut fused = DMatrix::zeros(n, 2 * cfg.width);
    fused.columns_mut(0, cfg.width).copy_from(&local);
    fused.columns_mut(cfg.width, cfg.width).copy_from(&pos);
    Ok(params.pointwise.rows(&fused))
}

/// Pooling, query and attention over precomputed pointwise features. Any
/// row order of `features` gives the same global and attended vectors.
pub fn encode_pointwise(
    features: &DMatrix<f64>,
    proprio: &[f64],
    params: &EncoderParams,
) -> Result<MapEmbedding> {
    let cfg = params.config;
    if features.ncols() != cfg.width || features.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            expected: (cfg.points(), cfg.width),
            got: features.shape(),
        });
    }
    if proprio.len() != cfg.d_pe {
        return Err(Error::ShapeMismatch {
            expected: (cfg.d_pe, 1),
            got: (proprio.len(), 1),
        });
    }
    let n = features.nrows();
    let pre_pool = params.global.rows(features);
    let mut global = vec![f64::NEG_INFINITY; cfg.width];
    let mut pool_argmax = vec![0; cfg.width];
    for f in 0..cfg.width {
        for i in 0..n {
            if pre_pool[(i, f)] > global[f] {
                global[f] = pre_pool[(i, f)];
                pool_argmax[f] = i;
            }
        }
    }

    let qin = DVector::from_iterator(cfg.width + cfg.d_pe, global.iter().chain(proprio).copied());
    let q = params.query.vec(&qin);
    let k = params.key.rows(features);
    let v = params.value.rows(features);
    let dh = cfg.width / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attended = DVector::zeros(cfg.width);
    let mut attention_weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let cols = h * dh..(h + 1) * dh;
        let scores: Vec<f64> = (0..n)
            .map(|i| cols.clone().map(|c| q[c] * k[(i, c)]).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let a: Vec<f64> = exp.iter().map(|e| e / z).collect();
        for c in cols {
            attended[c] = (0..n).map(|i| a[i] * v[(i, c)]).sum();
        }
        attention_weights.push(a);
    }
    let weighted = params.output.vec(&attended);
    let weighted_local_features: Vec<f64> = weighted.iter().copied().collect();
    let embedding = global
        .iter()
        .chain(&weighted_local_features)
        .copied()
        .collect();
    Ok(MapEmbedding {
        global_features: global,
        weighted_local_features,
        embedding,
        attention_weights,
        pool_argmax,
    })
}

pub fn encode(points: &MapPoints, proprio: &[f64], params: &EncoderParams) -> Result<MapEmbedding> {
    let f = pointwise_features(points, params)?;
    encode_pointwise(&f, proprio, params)
}

/// Per-cell views of an embedding, both summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    pub rows: usize,
    pub cols: usize,
    /// Head-averaged attention.
    pub attention: Vec<f64>,
    /// Fraction of global features pooled from each cell.
    pub global_mask: Vec<f64>,
}

pub fn attention_heatmap(emb: &MapEmbedding, rows: usize, cols: usize) -> Result<Heatmaps> {
    let n = rows * cols;
    if emb.attention_weights.iter().any(|a| a.len() != n) || emb.pool_argmax.iter().any(|&i| i >= n)
    {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            got: (emb.attention_weights.first().map_or(0, |a| a.len()), 1),
        });
    }
    let heads = emb.attention_weights.len().max(1) as f64;
    let mut attention = vec![0.0; n];
    for a in &emb.attention_weights {
        for (acc, w) in attention.iter_mut().zip(a) {
            *acc += w / heads;
        }
    }
    let mut global_mask = vec![0.0; n];
    let f = emb.pool_argmax.len().max(1) as f64;
    for &i in &emb.pool_argmax {
        global_mask[i] += 1.0 / f;
    }
    Ok(Heatmaps {
        rows,
        cols,
        attention,
        global_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(cfg: &EncoderConfig, seed: u64) -> MapPoints {
        let mut r = stream(seed, 1);
        let mut data = Vec::new();
        for i in 0..cfg.rows {
            for j in 0..cfg.cols {
                data.push(i as f64 * 0.08);
                data.push(j as f64 * 0.08 - 0.5);
                data.push(r.gen_range(-0.8..0.2));
                if cfg.d_map == 4 {
                    data.push(r.gen_range(0.0..2.0));
                }
            }
        }
        MapPoints {
            rows: cfg.rows,
            cols: cfg.cols,
            d_map: cfg.d_map,
            data,
        }
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            width: 16,
            heads: 4,
            ..EncoderConfig::new(6, 5, 4, 8)
        }
    }

    #[test]
    fn attention_is_normalized_and_sized() {
        let cfg = small();
        let p = EncoderParams::init(cfg).unwrap();
        let e = encode(&points(&cfg, 0), &[0.1; 8], &p).unwrap();
        assert_eq!(e.embedding.len(), cfg.embedding_len());
        assert_eq!(e.attention_weights.len(), 4);
        for a in &e.attention_weights {
            assert_eq!(a.len(), 30);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small();
        let p = EncoderParams::init(cfg).unwrap();
        let m = points(&cfg, 1);
        assert_eq!(
            encode(&m, &[0.0; 8], &p).unwrap(),
            encode(&m, &[0.0; 8], &p).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let cfg = small();
        let p = EncoderParams::init(cfg).unwrap();
        let m = points(&cfg, 2);
        assert!(encode(&m, &[0.0; 7], &p).is_err());
        assert!(encode(&m.without_uncertainty(), &[0.0; 8], &p).is_err());
        assert!(EncoderParams::init(EncoderConfig { heads: 3, ..cfg }).is_err());
    }

    #[test]
    fn teacher_maps_without_uncertainty() {
        let cfg = EncoderConfig {
            d_map: 3,
            ..small()
        };
        let p = EncoderParams::init(cfg).unwrap();
        let m = points(&small(), 3).without_uncertainty();
        assert_eq!(encode(&m, &[0.0; 8], &p).unwrap().embedding.len(), 32);
    }

    #[test]
    fn translation_changes_embedding() {
        let cfg = small();
        let p = EncoderParams::init(cfg).unwrap();
        let m = points(&cfg, 4);
        let mut shifted = m.clone();
        for pt in shifted.data.chunks_mut(4) {
            pt[0] += 0.5;
            pt[1] -= 0.3;
        }
        let a = encode(&m, &[0.0; 8], &p).unwrap();
        let b = encode(&shifted, &[0.0; 8], &p).unwrap();
        assert_ne!(a.embedding, b.embedding);
    }

    fn synthetic(weights: Vec<f64>, argmax: Vec<usize>) -> MapEmbedding {
        MapEmbedding {
            global_features: vec![],
            weighted_local_features: vec![],
            embedding: vec![],
            attention_weights: vec![weights],
            pool_argmax: argmax,
        }
    }

    #[test]
    fn heatmap_of_uniform_and_one_hot() {
        let h = attention_heatmap(&synthetic(vec![0.25; 4], vec![0, 0, 3]), 2, 2).unwrap();
        assert!(h.attention.iter().all(|w| *w == 0.25));
        assert!((h.global_mask[0] - 2.0 / 3.0).abs() < 1e-15);
        let h = attention_heatmap(&synthetic(vec![0.0, 1.0, 0.0, 0.0], vec![1]), 2, 2).unwrap();
        assert_eq!(h.attention, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(attention_heatmap(&synthetic(vec![1.0], vec![0]), 2, 2).is_err());
    }
}
