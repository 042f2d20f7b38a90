//! Tile feature vectors: extraction, import, ranking, clustering and
//! neighbour search.

mod cluster;
mod embed;
mod neighbors;
mod rank;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tiling::TileSpec;

pub use cluster::{cosine_distance, hclust, Dendrogram, Merge};
pub use embed::{
    embed_baseline, embed_tiles, BaselineEmbedder, PrecomputedEmbedder, TileEmbedder, BASELINE_DIM, BASELINE_LAYOUT,
};
pub use neighbors::{nearest_neighbors, Neighbor};
pub use rank::{rank_features, RankedFeatures};

/// A feature vector tagged with the layout that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout_id: String,
}

impl FeatureVector {
    pub fn new(layout_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature {i} is not finite")));
        }
        Ok(Self {
            values,
            layout_id: layout_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Layout id given to matrices imported from external embedders.
pub fn external_layout(dim: usize) -> String {
    format!("external:{dim}")
}

/// Rows of tile features sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    layout_id: String,
    dim: usize,
    keys: Vec<TileSpec>,
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(layout_id: impl Into<String>, dim: usize) -> Self {
        Self {
            layout_id: layout_id.into(),
            dim,
            keys: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, key: TileSpec, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} features", self.dim),
                actual: format!("{} features", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature {i} of row {} is not finite", self.rows.len())));
        }
        self.keys.push(key);
        self.rows.push(values);
        Ok(())
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn keys(&self) -> &[TileSpec] {
        &self.keys
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn key(&self, i: usize) -> &TileSpec {
        &self.keys[i]
    }

    pub fn vector(&self, i: usize) -> FeatureVector {
        FeatureVector {
            values: self.rows[i].clone(),
            layout_id: self.layout_id.clone(),
        }
    }

    pub fn position(&self, key: &TileSpec) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            layout_id: self.layout_id.clone(),
            dim: self.dim,
            keys: indices.iter().map(|&i| self.keys[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Projects onto the given feature columns; the layout id records the
    /// selection so models trained on it cannot be applied to full vectors.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.dim) {
            return Err(Error::invalid(format!("feature column {c} out of range {}", self.dim)));
        }
        let list: Vec<String> = columns.iter().map(usize::to_string).collect();
        Ok(Self {
            layout_id: format!("{}[{}]", self.layout_id, list.join(",")),
            dim: columns.len(),
            keys: self.keys.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| columns.iter().map(|&c| r[c]).collect())
                .collect(),
        })
    }

    pub fn with_layout(mut self, layout_id: impl Into<String>) -> Self {
        self.layout_id = layout_id.into();
        self
    }

    /// Header `image_id,x,y,size,f0..f{D-1}`, one row per tile.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["image_id".to_string(), "x".into(), "y".into(), "size".into()];
        header.extend((0..self.dim).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for (k, row) in self.keys.iter().zip(&self.rows) {
            let mut rec = vec![k.image_id.clone(), k.x.to_string(), k.y.to_string(), k.size.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses the CSV layout written by [`FeatureMatrix::write_csv`]. The
    /// layout id defaults to `external:D`.
    pub fn read_csv<R: Read>(reader: R, layout_id: Option<&str>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let header = r.headers()?.clone();
        const KEYS: [&str; 4] = ["image_id", "x", "y", "size"];
        for (i, name) in KEYS.iter().enumerate() {
            if header.get(i).map(str::trim) != Some(*name) {
                return Err(Error::Parse {
                    row: 0,
                    column: i,
                    message: format!("expected header column `{name}`"),
                });
            }
        }
        let dim = header.len() - KEYS.len();
        for i in 0..dim {
            let expected = format!("f{i}");
            if header.get(KEYS.len() + i).map(str::trim) != Some(expected.as_str()) {
                return Err(Error::Parse {
                    row: 0,
                    column: KEYS.len() + i,
                    message: format!("expected header column `{expected}`"),
                });
            }
        }
        if dim == 0 {
            return Err(Error::Parse {
                row: 0,
                column: KEYS.len(),
                message: "no feature columns".into(),
            });
        }

        let layout = layout_id.map_or_else(|| external_layout(dim), str::to_string);
        let mut m = Self::new(layout, dim);
        let mut seen = HashSet::new();
        for (ri, rec) in r.records().enumerate() {
            let row = ri + 1;
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    column: rec.len().min(header.len()),
                    message: format!("expected {} cells, found {}", header.len(), rec.len()),
                });
            }
            let int = |c: usize| -> Result<u32> {
                rec[c].trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: c,
                    message: format!("`{}` is not a non-negative integer", &rec[c]),
                })
            };
            let key = TileSpec::new(rec[0].trim(), int(1)?, int(2)?, int(3)?);
            let mut values = Vec::with_capacity(dim);
            for c in KEYS.len()..rec.len() {
                let v: f64 = rec[c].trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: c,
                    message: format!("`{}` is not a number", &rec[c]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: c,
                        message: format!("`{}` is not finite", &rec[c]),
                    });
                }
                values.push(v);
            }
            if !seen.insert(key.clone()) {
                return Err(Error::Parse {
                    row,
                    column: 0,
                    message: format!("duplicate tile key {} ({}, {}, {})", key.image_id, key.x, key.y, key.size),
                });
            }
            m.push(key, values)?;
        }
        Ok(m)
    }
}

/// Reads an externally produced embedding table; layout `external:D`.
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    FeatureMatrix::read_csv(std::io::BufReader::new(file), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_small_table() {
        let csv = "image_id,x,y,size,f0,f1,f2\na,0,0,64,1,2,3\na,64,0,64,4.5,-1e-3,0\n";
        let m = FeatureMatrix::read_csv(csv.as_bytes(), None).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.dim(), 3);
        assert_eq!(m.layout_id(), "external:3");
        assert_eq!(m.row(1), &[4.5, -1e-3, 0.0]);
        assert_eq!(m.key(1), &TileSpec::new("a", 64, 0, 64));
    }

    #[test]
    fn nan_cell_reports_row_and_column() {
        let csv = "image_id,x,y,size,f0,f1\na,0,0,64,1,2\na,64,0,64,NaN,3\n";
        match FeatureMatrix::read_csv(csv.as_bytes(), None) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_duplicate_rows_rejected() {
        let ragged = "image_id,x,y,size,f0,f1\na,0,0,64,1\n";
        assert!(matches!(
            FeatureMatrix::read_csv(ragged.as_bytes(), None),
            Err(Error::Parse { row: 1, .. })
        ));
        let dup = "image_id,x,y,size,f0\na,0,0,64,1\na,0,0,64,2\n";
        assert!(matches!(
            FeatureMatrix::read_csv(dup.as_bytes(), None),
            Err(Error::Parse { row: 2, column: 0, .. })
        ));
        let text = "image_id,x,y,size,f0\na,0,0,64,abc\n";
        assert!(matches!(
            FeatureMatrix::read_csv(text.as_bytes(), None),
            Err(Error::Parse { row: 1, column: 4, .. })
        ));
    }

    #[test]
    fn wide_external_table() {
        let dim = 2048;
        let mut text = String::from("image_id,x,y,size");
        for i in 0..dim {
            text.push_str(&format!(",f{i}"));
        }
        text.push('\n');
        for r in 0..3 {
            text.push_str(&format!("img,{},0,128", r * 128));
            for i in 0..dim {
                text.push_str(&format!(",{}", (i * (r + 1)) as f64 / 1000.0));
            }
            text.push('\n');
        }
        let m = FeatureMatrix::read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(m.layout_id(), "external:2048");
        assert_eq!(m.dim(), 2048);
    }

    #[test]
    fn csv_round_trip_preserves_values_exactly() {
        let mut m = FeatureMatrix::new("x", 2);
        m.push(TileSpec::new("i", 0, 0, 8), vec![0.1 + 0.2, 1.0 / 3.0]).unwrap();
        m.push(TileSpec::new("i", 8, 0, 8), vec![-2.5e-300, 7.0]).unwrap();
        let back = FeatureMatrix::read_csv(m.to_csv().as_slice(), Some("x")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn select_columns_tags_layout() {
        let mut m = FeatureMatrix::new("base", 3);
        m.push(TileSpec::new("i", 0, 0, 8), vec![1.0, 2.0, 3.0]).unwrap();
        let s = m.select_columns(&[2, 0]).unwrap();
        assert_eq!(s.row(0), &[3.0, 1.0]);
        assert_eq!(s.layout_id(), "base[2,0]");
        assert!(m.select_columns(&[3]).is_err());
    }
}
