//! Binary containers, PGM previews, XYZ clouds and CSV tables.
//!
//! Every binary container starts with a 4-byte magic and a little-endian
//! `u32` version. Scalars and layers are little-endian; float layers are
//! 32-bit IEEE-754.

use std::fmt::Write as _;

use nalgebra::Point3;

use crate::fusion::{FuseStats, GlobalMap};
use crate::predictor::{EpochLoss, GatedNet, NetConfig, Sample};
use crate::sensing::{Frame, GridGeometry, LocalGrid, PointCloud};
use crate::taskkernel::RewardTerm;
use crate::terrain::{Heightfield, Slab};
use crate::{Error, Result};

pub const VERSION: u32 = 1;
pub const HEIGHTFIELD_MAGIC: &[u8; 4] = b"EMHF";
pub const LOCAL_GRID_MAGIC: &[u8; 4] = b"EMLG";
pub const DATASET_MAGIC: &[u8; 4] = b"EMDS";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"EMWT";
pub const GLOBAL_MAP_MAGIC: &[u8; 4] = b"EMGM";
const OVERLAY_TAG: &[u8; 4] = b"OVLY";
const FLOOR_TAG: &[u8; 4] = b"FLOR";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn header(magic: &[u8; 4]) -> Self {
        let mut w = Self::default();
        w.bytes(magic);
        w.u32(VERSION);
        w
    }

    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn count(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }

    fn i64(&mut self, v: i64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f64) {
        self.bytes(&(v as f32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    kind: &'static str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(kind: &'static str, magic: &[u8; 4], data: &'a [u8]) -> Result<Self> {
        let mut r = Self { kind, data, pos: 0 };
        if r.take(4)? != magic {
            return Err(Error::format(kind, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                kind,
                format!("unsupported version {version}"),
            ));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::format(self.kind, "truncated"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f64::from(f32::from_le_bytes(self.array()?)))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(self.kind, "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk of 4"))))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.kind,
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

/// Heightfield container. Void cells are stored as NaN. Overlay slabs and the
/// sparse-terrain floor follow as optional tagged blocks.
pub fn encode_heightfield(field: &Heightfield) -> Vec<u8> {
    let mut w = Writer::header(HEIGHTFIELD_MAGIC);
    w.count(field.length());
    w.count(field.width());
    w.f32(field.resolution());
    for z in field.elevations_with_nan() {
        w.f32(z);
    }
    if field.has_overlay() {
        w.bytes(OVERLAY_TAG);
        for ix in 0..field.length() {
            for iy in 0..field.width() {
                let (b, t) = field
                    .overlay(ix, iy)
                    .map_or((f64::NAN, f64::NAN), |s| (s.bottom, s.top));
                w.f32(b);
                w.f32(t);
            }
        }
    }
    if let Some(floor) = field.floor() {
        w.bytes(FLOOR_TAG);
        w.f32(floor);
    }
    w.0
}

pub fn decode_heightfield(data: &[u8]) -> Result<Heightfield> {
    const KIND: &str = "heightfield";
    let mut r = Reader::open(KIND, HEIGHTFIELD_MAGIC, data)?;
    let length = r.count()?;
    let width = r.count()?;
    let resolution = r.f32()?;
    let n = length
        .checked_mul(width)
        .ok_or_else(|| Error::format(KIND, "size overflow"))?;
    let elevations = r.f32s(n)?;
    let mut field = Heightfield::from_elevations(length, width, resolution, elevations)
        .map_err(|e| Error::format(KIND, e.to_string()))?;
    while r.remaining() > 0 {
        let tag: [u8; 4] = r.array()?;
        match &tag {
            OVERLAY_TAG => {
                let slabs = r.f32s(2 * n)?;
                for ix in 0..length {
                    for iy in 0..width {
                        let k = 2 * (ix * width + iy);
                        let (bottom, top) = (slabs[k], slabs[k + 1]);
                        if bottom.is_finite() && top.is_finite() {
                            field.set_overlay(ix, iy, Some(Slab { bottom, top }));
                        }
                    }
                }
            }
            FLOOR_TAG => field.set_floor(Some(r.f32()?)),
            _ => return Err(Error::format(KIND, "unknown block tag")),
        }
    }
    Ok(field)
}

fn write_local_grid(w: &mut Writer, grid: &LocalGrid) {
    let g = grid.geometry();
    w.count(g.rows);
    w.count(g.cols);
    w.f64(g.resolution);
    w.f64(g.center_offset.0);
    w.f64(g.center_offset.1);
    w.f64(grid.sentinel());
    for &z in grid.elevations() {
        w.f32(z);
    }
    let mut bits = vec![0u8; grid.valid().len().div_ceil(8)];
    for (i, _) in grid.valid().iter().enumerate().filter(|(_, v)| **v) {
        bits[i / 8] |= 1 << (i % 8);
    }
    w.bytes(&bits);
}

fn read_local_grid(r: &mut Reader<'_>) -> Result<LocalGrid> {
    let rows = r.count()?;
    let cols = r.count()?;
    let resolution = r.f64()?;
    let center_offset = (r.f64()?, r.f64()?);
    let sentinel = r.f64()?;
    if rows == 0 || cols == 0 || !(resolution > 0.0) {
        return Err(Error::format(r.kind, "bad grid geometry"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(r.kind, "size overflow"))?;
    let elevations = r.f32s(n)?;
    let bits = r.take(n.div_ceil(8))?;
    let valid = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let geometry = GridGeometry::new(rows, cols, resolution, center_offset);
    LocalGrid::from_parts(geometry, sentinel, elevations, valid)
}

pub fn encode_local_grid(grid: &LocalGrid) -> Vec<u8> {
    let mut w = Writer::header(LOCAL_GRID_MAGIC);
    write_local_grid(&mut w, grid);
    w.0
}

pub fn decode_local_grid(data: &[u8]) -> Result<LocalGrid> {
    let mut r = Reader::open("local grid", LOCAL_GRID_MAGIC, data)?;
    let grid = read_local_grid(&mut r)?;
    r.finish()?;
    Ok(grid)
}

/// Dataset container: count and grid shape, then `(input, label)` records.
pub fn encode_dataset(samples: &[Sample], geometry: &GridGeometry) -> Vec<u8> {
    let mut w = Writer::header(DATASET_MAGIC);
    w.count(samples.len());
    w.count(geometry.rows);
    w.count(geometry.cols);
    for s in samples {
        write_local_grid(&mut w, &s.input);
        write_local_grid(&mut w, &s.label);
    }
    w.0
}

pub fn decode_dataset(data: &[u8]) -> Result<(GridGeometry, Vec<Sample>)> {
    const KIND: &str = "dataset";
    let mut r = Reader::open(KIND, DATASET_MAGIC, data)?;
    let count = r.count()?;
    let shape = (r.count()?, r.count()?);
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let input = read_local_grid(&mut r)?;
        let label = read_local_grid(&mut r)?;
        for g in [&input, &label] {
            if g.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    got: g.shape(),
                });
            }
        }
        samples.push(Sample { input, label });
    }
    r.finish()?;
    let geometry = match samples.first() {
        Some(s) => *s.label.geometry(),
        None if shape.0 > 0 && shape.1 > 0 => GridGeometry::new(shape.0, shape.1, 0.04, (0.0, 0.0)),
        None => return Err(Error::format(KIND, "empty grid shape")),
    };
    Ok((geometry, samples))
}

/// Weights container: architecture descriptor, then parameters.
pub fn encode_weights(net: &GatedNet) -> Vec<u8> {
    let mut w = Writer::header(WEIGHTS_MAGIC);
    let c = net.config();
    for v in [c.rows, c.cols, c.c1, c.c2, c.c3] {
        w.count(v);
    }
    w.f64(c.leaky_slope);
    w.count(net.params().len());
    for &p in net.params() {
        w.bytes(&p.to_le_bytes());
    }
    w.0
}

pub fn decode_weights(data: &[u8]) -> Result<GatedNet> {
    const KIND: &str = "weights";
    let mut r = Reader::open(KIND, WEIGHTS_MAGIC, data)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.count()?;
    }
    let config = NetConfig {
        rows: dims[0],
        cols: dims[1],
        c1: dims[2],
        c2: dims[3],
        c3: dims[4],
        leaky_slope: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| Error::format(KIND, e.to_string()))?;
    let n = r.count()?;
    let params = r.f32s(n)?.into_iter().map(|v| v as f32).collect();
    r.finish()?;
    GatedNet::from_params(config, params).map_err(|e| Error::format(KIND, e.to_string()))
}

/// Global map container: geometry, initialization values, then the
/// elevation and variance layers.
pub fn encode_global_map(map: &GlobalMap) -> Vec<u8> {
    let mut w = Writer::header(GLOBAL_MAP_MAGIC);
    w.count(map.extent());
    w.f64(map.resolution());
    w.i64(map.origin_cell().0);
    w.i64(map.origin_cell().1);
    w.f64(map.init_elevation());
    w.f64(map.init_variance());
    for &z in map.elevation() {
        w.f32(z);
    }
    for &v in map.variance() {
        w.f32(v);
    }
    w.0
}

pub fn decode_global_map(data: &[u8]) -> Result<GlobalMap> {
    const KIND: &str = "global map";
    let mut r = Reader::open(KIND, GLOBAL_MAP_MAGIC, data)?;
    let extent = r.count()?;
    let resolution = r.f64()?;
    let origin = (r.i64()?, r.i64()?);
    let init_elevation = r.f64()?;
    let init_variance = r.f64()?;
    let n = extent
        .checked_mul(extent)
        .ok_or_else(|| Error::format(KIND, "size overflow"))?;
    let elevation = r.f32s(n)?;
    let variance = r.f32s(n)?;
    r.finish()?;
    if !(resolution > 0.0) {
        return Err(Error::format(KIND, "resolution must be positive"));
    }
    GlobalMap::from_layers(
        extent,
        resolution,
        origin,
        init_elevation,
        init_variance,
        elevation,
        variance,
    )
    .map_err(|e| Error::format(KIND, e.to_string()))
}

/// 16-bit binary PGM of a row-major layer, linearly scaled from its finite
/// min to max. Non-finite values map to 0.
pub fn pgm16(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            got: (values.len(), 1),
        });
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for &v in values {
        let q = if v.is_finite() {
            (1.0 + (v - lo) / span * 65534.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn heightfield_pgm(field: &Heightfield) -> Vec<u8> {
    let mut top = Vec::with_capacity(field.length() * field.width());
    for ix in 0..field.length() {
        for iy in 0..field.width() {
            top.push(field.top_surface(ix, iy).unwrap_or(f64::NAN));
        }
    }
    pgm16(&top, field.length(), field.width()).expect("shape is consistent")
}

/// One `x y z` triple per line.
pub fn encode_xyz(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for p in &cloud.points {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).expect("writing to a String");
    }
    s
}

pub fn decode_xyz(text: &str, frame: Frame) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("xyz", format!("line {}: {e}", n + 1)))?;
        if v.len() != 3 {
            return Err(Error::format(
                "xyz",
                format!("line {}: expected 3 values", n + 1),
            ));
        }
        points.push(Point3::new(v[0], v[1], v[2]));
    }
    Ok(PointCloud::new(points, frame))
}

pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{}", e.epoch, e.train_loss, val).expect("writing to a String");
    }
    s
}

pub fn fusion_stats_csv(stats: &[FuseStats]) -> String {
    let mut s = String::from("frame,valid,won,rejected\n");
    for f in stats {
        writeln!(s, "{},{},{},{}", f.frame, f.valid, f.won, f.rejected)
            .expect("writing to a String");
    }
    s
}

pub fn reward_breakdown_csv(terms: &[RewardTerm]) -> String {
    let mut s = String::from("term,raw,weight,weighted\n");
    for t in terms {
        writeln!(s, "{},{},{},{}", t.name, t.raw, t.weight, t.weighted())
            .expect("writing to a String");
    }
    s
}

/// Per-point weights, one column per head.
pub fn attention_csv(weights: &[Vec<f64>]) -> String {
    let mut s = String::from("point");
    for h in 0..weights.len() {
        write!(s, ",head{h}").expect("writing to a String");
    }
    s.push('\n');
    let n = weights.first().map_or(0, Vec::len);
    for i in 0..n {
        write!(s, "{i}").expect("writing to a String");
        for w in weights {
            write!(s, ",{}", w[i]).expect("writing to a String");
        }
        s.push('\n');
    }
    s
}
