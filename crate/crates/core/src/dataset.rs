//! Dataset ingestion, split generation, and the synthetic planted-partition
//! generator used by property tests.
//!
//! On-disk layout of a dataset directory:
//!   - `edges.tsv`: one `u<TAB>v` pair per line, 0-based ids, `#` comments
//!   - `labels.tsv`: `node-id<TAB>class`, exactly one line per node
//!   - `features.tsv`: n rows of whitespace-separated floats, or
//!   - `features.bin`: 16-byte header (8-byte magic, u32 n, u32 m) then
//!     row-major little-endian f32 values
//!   - `manifest.json` (optional): declared stats, cross-checked exactly
//!   - `splits.json` (separate file): `{"splits": [{"train": [...], ...}]}`

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_undirected, LabeledGraph};
use crate::rng::{rng_for, stream};
use crate::spectral::FeatureMatrix;

const FEATURE_BIN_MAGIC: &[u8; 8] = b"SPADFTB1";

/// Declared dataset statistics; when present, the loaded data must match
/// every field exactly. `edges` counts deduplicated undirected edges.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
}

/// A loaded dataset: labeled graph plus dense node features.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub labeled: LabeledGraph,
    pub features: FeatureMatrix,
}

impl DatasetBundle {
    pub fn n(&self) -> usize {
        self.labeled.graph.n()
    }

    pub fn classes(&self) -> usize {
        self.labeled.num_classes
    }

    pub fn feature_width(&self) -> usize {
        self.features.width()
    }
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::data(format!("{}:{line}: {msg}", path.display()))
}

/// Read `edges.tsv`: tab-separated 0-based pairs, `#` comments and blank
/// lines ignored.
pub fn read_edges_tsv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(parse_err(path, lineno + 1, "expected exactly two node ids")),
        };
        let u: usize = u
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad node id {u:?}")))?;
        let v: usize = v
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad node id {v:?}")))?;
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_labels_tsv(path: &Path) -> Result<Vec<usize>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (id, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_err(path, lineno + 1, "expected `node-id<TAB>class`")),
        };
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad node id {id:?}")))?;
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad class id {label:?}")))?;
        pairs.push((id, label));
    }
    let n = pairs.len();
    let mut labels = vec![usize::MAX; n];
    for (id, label) in pairs {
        if id >= n {
            return Err(Error::data(format!(
                "{}: node id {id} outside 0..{n} (every node needs exactly one label line)",
                path.display()
            )));
        }
        if labels[id] != usize::MAX {
            return Err(Error::data(format!("{}: duplicate label for node {id}", path.display())));
        }
        labels[id] = label;
    }
    Ok(labels)
}

fn read_features_tsv(path: &Path) -> Result<Array2<f64>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            trimmed.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| parse_err(path, lineno + 1, e))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!("row has {} values, previous rows have {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, m), flat).map_err(|e| Error::data(e.to_string()))
}

/// Binary feature blob for large datasets: magic, u32 n, u32 m, then n*m
/// row-major little-endian f32.
pub fn write_features_bin(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * x.len());
    buf.extend_from_slice(FEATURE_BIN_MAGIC);
    buf.extend_from_slice(&(x.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(x.ncols() as u32).to_le_bytes());
    for &v in x.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_features_bin(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != FEATURE_BIN_MAGIC {
        return Err(Error::data(format!("{}: not a feature blob", path.display())));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 4 * n * m {
        return Err(Error::data(format!(
            "{}: length {} does not match header ({n} x {m})",
            path.display(),
            bytes.len()
        )));
    }
    let mut x = Array2::<f64>::zeros((n, m));
    let mut off = 16;
    for i in 0..n {
        for j in 0..m {
            x[[i, j]] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            off += 4;
        }
    }
    Ok(x)
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let labels = read_labels_tsv(&dir.join("labels.tsv"))?;
    let n = labels.len();

    let raw_edges = read_edges_tsv(&dir.join("edges.tsv"))?;
    let graph = build_undirected(&raw_edges, n)?;

    let tsv = dir.join("features.tsv");
    let bin = dir.join("features.bin");
    let x = if tsv.exists() {
        read_features_tsv(&tsv)?
    } else if bin.exists() {
        read_features_bin(&bin)?
    } else {
        return Err(Error::data(format!(
            "{}: neither features.tsv nor features.bin present",
            dir.display()
        )));
    };
    if x.nrows() != n {
        return Err(Error::data(format!(
            "feature matrix has {} rows but labels define {n} nodes",
            x.nrows()
        )));
    }

    let manifest_path = dir.join("manifest.json");
    let (name, classes) = if manifest_path.exists() {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let actual = Manifest {
            name: manifest.name.clone(),
            nodes: n,
            edges: graph.edge_count(),
            features: x.ncols(),
            classes: manifest.classes,
        };
        if manifest != actual {
            return Err(Error::data(format!(
                "manifest mismatch: declared {manifest:?}, loaded nodes={n}, edges={}, features={}",
                graph.edge_count(),
                x.ncols()
            )));
        }
        let max_label = labels.iter().copied().max().unwrap_or(0);
        if manifest.classes <= max_label {
            return Err(Error::data(format!(
                "manifest declares {} classes but labels reach {max_label}",
                manifest.classes
            )));
        }
        (manifest.name, manifest.classes)
    } else {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        (name, labels.iter().copied().max().unwrap_or(0) + 1)
    };

    let labeled = LabeledGraph::new(graph, labels, classes)?;
    let features = FeatureMatrix::new(x)?;
    Ok(DatasetBundle { name, labeled, features })
}

/// Write a dataset directory in the canonical text formats.
pub fn save_dataset(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut edges = String::from("# u\tv\n");
    for &(u, v) in bundle.labeled.graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut labels = String::new();
    for (i, &l) in bundle.labeled.labels.iter().enumerate() {
        labels.push_str(&format!("{i}\t{l}\n"));
    }
    fs::write(dir.join("labels.tsv"), labels)?;

    let mut feats = String::new();
    for row in bundle.features.x.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        feats.push_str(&cells.join("\t"));
        feats.push('\n');
    }
    fs::write(dir.join("features.tsv"), feats)?;

    let manifest = Manifest {
        name: bundle.name.clone(),
        nodes: bundle.n(),
        edges: bundle.labeled.graph.edge_count(),
        features: bundle.feature_width(),
        classes: bundle.classes(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Train/validation/test index sets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Seed used to generate this split, when generated rather than loaded.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl SplitSpec {
    /// Copy with each index set sorted ascending. Training consumes the
    /// sorted form so results do not depend on the listing order of an
    /// external splits file or of a subsampled pool.
    pub fn sorted(&self) -> SplitSpec {
        let mut s = self.clone();
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        s
    }

    /// Disjointness and range validation.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (set, name) in [(&self.train, "train"), (&self.val, "val"), (&self.test, "test")] {
            if set.is_empty() {
                return Err(Error::data(format!("{name} set is empty")));
            }
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::data(format!("{name} index {i} out of range for {n} nodes")));
                }
                if seen[i] {
                    return Err(Error::data(format!("node {i} appears in more than one split set")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// Seeded random splits: a uniform permutation per (seed, index) sliced by
/// ratio prefixes, with floored train/val sizes and the remainder as test.
pub fn generate_splits(
    n: usize,
    ratios: (f64, f64, f64),
    seed: u64,
    count: usize,
) -> Result<Vec<SplitSpec>> {
    let (tr, va, te) = ratios;
    if tr + va + te > 1.0 + 1e-12 || tr <= 0.0 || va <= 0.0 || te <= 0.0 {
        return Err(Error::invalid(format!("bad split ratios ({tr}, {va}, {te})")));
    }
    let n_train = (tr * n as f64).floor() as usize;
    let n_val = (va * n as f64).floor() as usize;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "{n} nodes are too few for nonempty splits at ratios ({tr}, {va}, {te})"
        )));
    }
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rng = rng_for(seed, stream::SPLITS, idx as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        out.push(SplitSpec {
            train: perm[..n_train].to_vec(),
            val: perm[n_train..n_train + n_val].to_vec(),
            test: perm[n_train + n_val..].to_vec(),
            seed: Some(seed),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    splits: Vec<SplitSpec>,
}

/// Load explicit splits from JSON and validate them against `n`.
pub fn load_splits(path: &Path, n: usize) -> Result<Vec<SplitSpec>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let file: SplitsFile = serde_json::from_str(&text)?;
    if file.splits.is_empty() {
        return Err(Error::data(format!("{}: no splits defined", path.display())));
    }
    for (i, s) in file.splits.iter().enumerate() {
        s.validate(n)
            .map_err(|e| Error::data(format!("{} split {i}: {e}", path.display())))?;
    }
    Ok(file.splits)
}

pub fn save_splits(path: &Path, splits: &[SplitSpec]) -> Result<()> {
    let file = SplitsFile { splits: splits.to_vec() };
    fs::write(path, serde_json::to_string(&file)? + "\n")?;
    Ok(())
}

/// Planted-partition generator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    /// Edge probability within a class.
    pub p_intra: f64,
    /// Edge probability across classes; larger than `p_intra` plants
    /// heterophilic structure.
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Gaussian feature noise scale.
    pub feature_noise: f64,
    /// Add a one-hot class signal to the features; off means the features
    /// are pure noise and carry no label information.
    pub informative: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 500,
            classes: 2,
            p_intra: 0.01,
            p_inter: 0.1,
            feature_dim: 16,
            feature_noise: 1.0,
            informative: false,
            seed: 0,
        }
    }
}

/// Generate a planted-partition graph with (optionally uninformative)
/// Gaussian features. Labels cycle round-robin so classes stay balanced.
pub fn synth_heterophily(cfg: &SynthConfig) -> Result<DatasetBundle> {
    if !(0.0..=1.0).contains(&cfg.p_intra) || !(0.0..=1.0).contains(&cfg.p_inter) {
        return Err(Error::invalid("edge probabilities must lie in [0, 1]"));
    }
    if cfg.classes == 0 || cfg.n == 0 {
        return Err(Error::invalid("need at least one node and one class"));
    }
    let labels: Vec<usize> = (0..cfg.n).map(|i| i % cfg.classes).collect();

    let mut rng = rng_for(cfg.seed, stream::SYNTH, 0);
    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in (u + 1)..cfg.n {
            let p = if labels[u] == labels[v] { cfg.p_intra } else { cfg.p_inter };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = build_undirected(&edges, cfg.n)?;

    let normal = StandardNormal;
    let mut x = Array2::<f64>::zeros((cfg.n, cfg.feature_dim));
    for i in 0..cfg.n {
        for j in 0..cfg.feature_dim {
            let noise: f64 = normal.sample(&mut rng);
            let signal = if cfg.informative && j == labels[i] % cfg.feature_dim {
                1.0
            } else {
                0.0
            };
            x[[i, j]] = signal + cfg.feature_noise * noise;
        }
    }

    Ok(DatasetBundle {
        name: format!("synth-n{}-c{}-s{}", cfg.n, cfg.classes, cfg.seed),
        labeled: LabeledGraph::new(graph, labels, cfg.classes)?,
        features: FeatureMatrix::new(x)?,
    })
}
