//! Epoch-versioned historical-embedding store with sliding-window retention.
//!
//! Writers stage rows for the current epoch; nothing staged becomes visible
//! to readers until `commit` runs at the epoch barrier. Reads always serve
//! the most recent committed epoch at or below the requested one, with a
//! bootstrap for cold keys: raw node features for layer 0 (features are
//! static and never stale) and zeros for deeper layers.

mod polyline;

pub use polyline::PolylineCodec;

use std::io::Write;
use std::sync::{Mutex, RwLock};

use crate::tensor::{Matrix, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("precision must be in 1..=9, got {0}")]
    BadPrecision(u8),
    #[error("value {value} overflows the fixed-point range at precision {precision}")]
    Range { value: f64, precision: u8 },
    #[error("byte {byte:#x} at offset {pos} is not a valid encoded chunk")]
    Decode { pos: usize, byte: u8 },
    #[error("layer {layer} out of range: store holds layers 0..={max}")]
    LayerOutOfRange { layer: usize, max: usize },
    #[error("layer {layer} stores vectors of dim {expected}, push has dim {got}")]
    DimensionDrift { layer: usize, expected: usize, got: usize },
    #[error("push of {rows} rows for {ids} node ids")]
    RowCountMismatch { rows: usize, ids: usize },
    #[error("node id {id} out of range for {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },
    #[error("pull at epoch {epoch} but store is committed only through {committed}")]
    NotCommitted { epoch: usize, committed: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Frobenius norm of the gap between an approximation and the exact value.
pub fn staleness(approx: &Matrix, exact: &Matrix) -> Result<f64, StoreError> {
    Ok(exact.sub(approx)?.frobenius_norm())
}

enum Payload {
    Raw(Vec<f64>),
    Encoded(Vec<u8>),
}

impl Payload {
    fn byte_len(&self) -> usize {
        match self {
            Payload::Raw(v) => v.len() * 8,
            Payload::Encoded(b) => b.len(),
        }
    }
}

struct Entry {
    epoch: usize,
    payload: Payload,
}

struct Staged {
    epoch: usize,
    layer: usize,
    node: usize,
    payload: Payload,
}

struct Committed {
    epoch: usize,
    /// series[layer][node] holds entries sorted by epoch.
    series: Vec<Vec<Vec<Entry>>>,
}

/// Storage-side byte counters, split by direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreVolume {
    pub pushed_payload_bytes: u64,
    pub raw_value_bytes: u64,
}

pub struct EmbeddingStore {
    window: usize,
    dims: Vec<usize>,
    features: Matrix,
    codec: Option<PolylineCodec>,
    committed: RwLock<Committed>,
    staging: Mutex<Vec<Staged>>,
    volume: Mutex<StoreVolume>,
}

impl EmbeddingStore {
    /// `dims` are the GCN layer widths [d_0, ..., d_L]; storable layers are
    /// 1..=L-1 (layer 0 is served from the static features).
    pub fn new(features: Matrix, dims: &[usize], window: usize, codec: Option<PolylineCodec>) -> Self {
        assert!(window >= 1, "window must be at least one epoch");
        assert!(dims.len() >= 2, "need at least one layer");
        assert_eq!(features.cols(), dims[0], "feature dim must match d_0");
        let n = features.rows();
        let series = dims.iter().map(|_| (0..n).map(|_| Vec::new()).collect()).collect();
        Self {
            window,
            dims: dims.to_vec(),
            features,
            codec,
            committed: RwLock::new(Committed { epoch: 0, series }),
            staging: Mutex::new(Vec::new()),
            volume: Mutex::new(StoreVolume::default()),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// GCN layer widths [d_0, ..., d_L] this store was configured with.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn codec(&self) -> Option<PolylineCodec> {
        self.codec
    }

    pub fn committed_epoch(&self) -> usize {
        self.committed.read().expect("store lock").epoch
    }

    fn max_layer(&self) -> usize {
        self.dims.len() - 2
    }

    fn check_layer(&self, layer: usize) -> Result<(), StoreError> {
        if layer > self.max_layer() {
            return Err(StoreError::LayerOutOfRange { layer, max: self.max_layer() });
        }
        Ok(())
    }

    /// Stages rows for epoch `t`; they become visible after `commit(t)`.
    /// Returns the payload bytes that would cross the wire.
    pub fn push(&self, t: usize, layer: usize, node_ids: &[usize], rows: &Matrix) -> Result<u64, StoreError> {
        self.check_layer(layer)?;
        if layer == 0 || rows.cols() != self.dims[layer] {
            return Err(StoreError::DimensionDrift {
                layer,
                expected: if layer == 0 { 0 } else { self.dims[layer] },
                got: rows.cols(),
            });
        }
        if rows.rows() != node_ids.len() {
            return Err(StoreError::RowCountMismatch { rows: rows.rows(), ids: node_ids.len() });
        }
        let n = self.features.rows();
        let mut bytes = 0u64;
        let mut staged = Vec::with_capacity(node_ids.len());
        for (i, &node) in node_ids.iter().enumerate() {
            if node >= n {
                return Err(StoreError::NodeOutOfRange { id: node, n });
            }
            let payload = match &self.codec {
                Some(codec) => Payload::Encoded(codec.encode(rows.row(i))?),
                None => Payload::Raw(rows.row(i).to_vec()),
            };
            bytes += payload.byte_len() as u64;
            staged.push(Staged { epoch: t, layer, node, payload });
        }
        {
            let mut vol = self.volume.lock().expect("store lock");
            vol.pushed_payload_bytes += bytes;
            vol.raw_value_bytes += (rows.rows() * rows.cols() * 8) as u64;
        }
        self.staging.lock().expect("store lock").append(&mut staged);
        Ok(bytes)
    }

    /// Epoch barrier: publishes everything staged for epoch `t`. Staged
    /// records are applied in (layer, node) order with arrival order
    /// preserved per key, so the last write wins deterministically.
    pub fn commit(&self, t: usize) {
        let mut staged = self.staging.lock().expect("store lock");
        let mut batch: Vec<Staged> = staged.drain(..).collect();
        drop(staged);
        batch.sort_by_key(|s| (s.layer, s.node));
        let mut committed = self.committed.write().expect("store lock");
        for record in batch {
            let series = &mut committed.series[record.layer][record.node];
            match series.iter().position(|e| e.epoch == record.epoch) {
                Some(pos) => series[pos].payload = record.payload,
                None => {
                    debug_assert!(series.last().is_none_or(|e| e.epoch < record.epoch));
                    series.push(Entry { epoch: record.epoch, payload: record.payload });
                }
            }
        }
        committed.epoch = committed.epoch.max(t);
    }

    /// Removes entries with epoch <= t - window, always keeping the single
    /// most recent entry per key so a value stays available.
    pub fn evict(&self, t: usize) {
        let Some(cutoff) = t.checked_sub(self.window) else { return };
        let mut committed = self.committed.write().expect("store lock");
        for layer in &mut committed.series {
            for series in layer {
                if series.len() <= 1 {
                    continue;
                }
                let last = series.len() - 1;
                let mut keep = 0;
                series.retain(|e| {
                    let retained = e.epoch > cutoff || keep == last;
                    keep += 1;
                    retained
                });
            }
        }
    }

    fn decode_payload(&self, payload: &Payload) -> Result<Vec<f64>, StoreError> {
        match payload {
            Payload::Raw(v) => Ok(v.clone()),
            Payload::Encoded(b) => {
                let codec = self.codec.expect("encoded payload implies codec");
                codec.decode(b)
            }
        }
    }

    /// Most recent committed value with epoch <= `epoch_cap` per node;
    /// bootstrap values (features for layer 0, zeros otherwise) for nodes
    /// never pushed.
    pub fn pull_as_of(&self, epoch_cap: usize, layer: usize, node_ids: &[usize]) -> Result<Matrix, StoreError> {
        self.check_layer(layer)?;
        let n = self.features.rows();
        let dim = self.dims[layer];
        if layer == 0 {
            return Ok(self.features.select_rows(node_ids).map_err(|_| {
                StoreError::NodeOutOfRange {
                    id: node_ids.iter().copied().find(|&v| v >= n).unwrap_or(n),
                    n,
                }
            })?);
        }
        let committed = self.committed.read().expect("store lock");
        let mut out = Matrix::zeros(node_ids.len(), dim);
        for (i, &node) in node_ids.iter().enumerate() {
            if node >= n {
                return Err(StoreError::NodeOutOfRange { id: node, n });
            }
            let series = &committed.series[layer][node];
            let hit = series.iter().rev().find(|e| e.epoch <= epoch_cap);
            if let Some(entry) = hit {
                let values = self.decode_payload(&entry.payload)?;
                if values.len() != dim {
                    return Err(StoreError::DimensionDrift { layer, expected: dim, got: values.len() });
                }
                out.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(&values);
            }
        }
        Ok(out)
    }

    /// Serving read for epoch `t`: most recent committed value with epoch
    /// <= t-1. The store must be committed through t-1.
    pub fn pull_out(&self, t: usize, layer: usize, node_ids: &[usize]) -> Result<Matrix, StoreError> {
        let committed = self.committed_epoch();
        if t > 0 && committed + 1 < t {
            return Err(StoreError::NotCommitted { epoch: t, committed });
        }
        self.pull_as_of(t.saturating_sub(1), layer, node_ids)
    }

    /// Payload bytes a pull of these rows would transfer: encoded length
    /// when compression is on, 8 bytes per value otherwise.
    pub fn transfer_bytes(&self, rows: &Matrix) -> Result<u64, StoreError> {
        match &self.codec {
            Some(codec) => Ok(codec.encoded_len(rows.data())? as u64),
            None => Ok((rows.len() * 8) as u64),
        }
    }

    pub fn volume(&self) -> StoreVolume {
        *self.volume.lock().expect("store lock")
    }

    /// Debug dump, one `t,layer,node,encoded_payload` line per committed
    /// entry. Payloads are re-encoded with the configured codec, or a
    /// precision-6 codec when compression is off.
    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        let codec = self.codec.unwrap_or_else(|| PolylineCodec::new(6).expect("valid precision"));
        let committed = self.committed.read().expect("store lock");
        for (layer, nodes) in committed.series.iter().enumerate() {
            for (node, series) in nodes.iter().enumerate() {
                for entry in series {
                    let text = match &entry.payload {
                        Payload::Encoded(b) => String::from_utf8_lossy(b).into_owned(),
                        Payload::Raw(v) => {
                            let bytes = codec.encode(v).map_err(std::io::Error::other)?;
                            String::from_utf8_lossy(&bytes).into_owned()
                        }
                    };
                    writeln!(w, "{},{},{},{}", entry.epoch, layer, node, text)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(window: usize, codec: Option<PolylineCodec>) -> EmbeddingStore {
        let features = Matrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64).unwrap();
        EmbeddingStore::new(features, &[2, 3, 2], window, codec)
    }

    fn rows(values: &[&[f64]]) -> Matrix {
        let cols = values[0].len();
        Matrix::new(values.len(), cols, values.concat()).unwrap()
    }

    #[test]
    fn push_then_pull_round_trips() {
        let s = store(4, None);
        s.push(1, 1, &[0, 2], &rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]])).unwrap();
        s.commit(1);
        let out = s.pull_out(2, 1, &[2, 0]).unwrap();
        assert_eq!(out.row(0), &[4.0, 5.0, 6.0]);
        assert_eq!(out.row(1), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn same_epoch_push_last_write_wins() {
        let s = store(4, None);
        s.push(1, 1, &[0], &rows(&[&[1.0, 1.0, 1.0]])).unwrap();
        s.push(1, 1, &[0], &rows(&[&[9.0, 9.0, 9.0]])).unwrap();
        s.commit(1);
        assert_eq!(s.pull_out(2, 1, &[0]).unwrap().row(0), &[9.0, 9.0, 9.0]);
    }

    #[test]
    fn compressed_pull_stays_within_codec_bound() {
        let codec = PolylineCodec::new(4).unwrap();
        let s = store(4, Some(codec));
        let original = [0.123456, -7.654321, 2.000049];
        s.push(1, 1, &[1], &rows(&[&original])).unwrap();
        s.commit(1);
        let out = s.pull_out(2, 1, &[1]).unwrap();
        for (a, b) in out.row(0).iter().zip(&original) {
            assert!((a - b).abs() <= 0.5e-4 + 1e-15);
            assert_eq!(*a, codec.round(*b));
        }
    }

    #[test]
    fn bootstrap_serves_features_and_zeros() {
        let s = store(4, None);
        let l0 = s.pull_out(1, 0, &[1, 3]).unwrap();
        assert_eq!(l0.row(0), &[2.0, 3.0]);
        assert_eq!(l0.row(1), &[6.0, 7.0]);
        let l1 = s.pull_out(1, 1, &[0, 1]).unwrap();
        assert_eq!(l1.max_abs(), 0.0);
    }

    #[test]
    fn pull_serves_most_recent_at_or_below_requested() {
        let s = store(10, None);
        for epoch in [3usize, 5] {
            s.push(epoch, 1, &[0], &rows(&[&[epoch as f64, 0.0, 0.0]])).unwrap();
            s.commit(epoch);
        }
        assert_eq!(s.pull_out(6, 1, &[0]).unwrap().get(0, 0), 5.0);
        assert_eq!(s.pull_as_of(4, 1, &[0]).unwrap().get(0, 0), 3.0);
        assert_eq!(s.pull_as_of(2, 1, &[0]).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn staged_writes_invisible_until_commit() {
        let s = store(4, None);
        s.push(1, 1, &[0], &rows(&[&[5.0, 5.0, 5.0]])).unwrap();
        assert_eq!(s.pull_as_of(1, 1, &[0]).unwrap().max_abs(), 0.0);
        assert!(matches!(s.pull_out(3, 1, &[0]), Err(StoreError::NotCommitted { .. })));
        s.commit(1);
        assert_eq!(s.pull_as_of(1, 1, &[0]).unwrap().get(0, 0), 5.0);
    }

    #[test]
    fn evict_keeps_window_and_latest() {
        let s = store(2, None);
        for epoch in 1..=5 {
            s.push(epoch, 1, &[0], &rows(&[&[epoch as f64, 0.0, 0.0]])).unwrap();
            s.commit(epoch);
        }
        // Node 1 only ever pushed at epoch 1; the latest-entry rule keeps it.
        s.push(1, 1, &[1], &rows(&[&[42.0, 0.0, 0.0]])).unwrap();
        s.commit(5);
        s.evict(5);
        assert_eq!(s.pull_as_of(5, 1, &[0]).unwrap().get(0, 0), 5.0);
        assert_eq!(s.pull_as_of(4, 1, &[0]).unwrap().get(0, 0), 4.0);
        // Epoch 3 is outside the window (3 <= 5 - 2): served value falls
        // back to the oldest retained epoch at or below the cap, which is
        // none, so the bootstrap zero applies.
        assert_eq!(s.pull_as_of(3, 1, &[0]).unwrap().get(0, 0), 0.0);
        assert_eq!(s.pull_as_of(5, 1, &[1]).unwrap().get(0, 0), 42.0);
    }

    #[test]
    fn evict_with_window_one_keeps_only_latest() {
        let s = store(1, None);
        for epoch in 1..=3 {
            s.push(epoch, 1, &[0], &rows(&[&[epoch as f64, 0.0, 0.0]])).unwrap();
            s.commit(epoch);
        }
        s.evict(3);
        assert_eq!(s.pull_as_of(2, 1, &[0]).unwrap().get(0, 0), 0.0);
        assert_eq!(s.pull_as_of(3, 1, &[0]).unwrap().get(0, 0), 3.0);
    }

    #[test]
    fn evict_with_large_window_removes_nothing() {
        let s = store(10, None);
        for epoch in 1..=3 {
            s.push(epoch, 1, &[0], &rows(&[&[epoch as f64, 0.0, 0.0]])).unwrap();
            s.commit(epoch);
        }
        s.evict(3);
        for epoch in 1..=3 {
            assert_eq!(s.pull_as_of(epoch, 1, &[0]).unwrap().get(0, 0), epoch as f64);
        }
    }

    #[test]
    fn dimension_drift_rejected() {
        let s = store(4, None);
        let err = s.push(1, 1, &[0], &rows(&[&[1.0, 2.0]])).unwrap_err();
        assert!(matches!(err, StoreError::DimensionDrift { layer: 1, expected: 3, got: 2 }));
    }

    #[test]
    fn staleness_measures_frobenius_gap() {
        let a = Matrix::zeros(3, 2);
        let mut exact = Matrix::zeros(3, 2);
        assert_eq!(staleness(&a, &exact).unwrap(), 0.0);
        for i in 0..3 {
            exact.data_mut()[i * 2] = 1.0;
        }
        assert!((staleness(&a, &exact).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let mut rng_state = 7u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x = Matrix::from_fn(4, 3, |_, _| next()).unwrap();
        let y = Matrix::from_fn(4, 3, |_, _| next()).unwrap();
        let expected: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((staleness(&x, &y).unwrap() - expected).abs() < 1e-12);
        let bad = Matrix::zeros(2, 2);
        assert!(staleness(&x, &bad).is_err());
    }

    #[test]
    fn dump_lists_entries() {
        let s = store(4, None);
        s.push(1, 1, &[0], &rows(&[&[0.5, 0.0, -0.5]])).unwrap();
        s.commit(1);
        let mut out = Vec::new();
        s.dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let line = text.lines().next().unwrap();
        assert!(line.starts_with("1,1,0,"));
        let payload = line.splitn(4, ',').nth(3).unwrap();
        let codec = PolylineCodec::new(6).unwrap();
        assert_eq!(codec.decode(payload.as_bytes()).unwrap(), vec![0.5, 0.0, -0.5]);
    }
}
