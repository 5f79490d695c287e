//! Triplet datasets `(x, a, y)`: CSV I/O, a seeded synthetic generator with
//! controllable subgroup bias, splitting and class-and-attribute balanced
//! subsampling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::fairloss::CELLS;

#[derive(Clone, Debug, PartialEq)]
pub struct TripletDataset {
    pub name: String,
    pub x: Tensor,
    pub a: Vec<u8>,
    pub y: Vec<u8>,
}

/// Row counts of the four `(y, a)` cells in `CELLS` order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub y0_a0: usize,
    pub y0_a1: usize,
    pub y1_a0: usize,
    pub y1_a1: usize,
}

impl CellCounts {
    pub fn as_array(&self) -> [usize; 4] {
        [self.y0_a0, self.y0_a1, self.y1_a0, self.y1_a1]
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().sum()
    }

    pub fn min(&self) -> usize {
        *self.as_array().iter().min().unwrap()
    }
}

pub(crate) fn cell_index(y: u8, a: u8) -> usize {
    2 * y as usize + a as usize
}

impl TripletDataset {
    pub fn new(name: impl Into<String>, x: Tensor, a: Vec<u8>, y: Vec<u8>) -> Result<Self> {
        if x.rows() != a.len() || a.len() != y.len() {
            return Err(Error::Shape {
                op: "dataset",
                lhs: format!("x {}x{}", x.rows(), x.cols()),
                rhs: format!("{} attributes, {} labels", a.len(), y.len()),
            });
        }
        if !x.all_finite() {
            return Err(Error::Contract("features must be finite".into()));
        }
        if a.iter().chain(&y).any(|&v| v > 1) {
            return Err(Error::Contract(
                "attributes and labels must be 0 or 1".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            x,
            a,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn cell_counts(&self) -> CellCounts {
        let mut c = [0usize; 4];
        for (&y, &a) in self.y.iter().zip(&self.a) {
            c[cell_index(y, a)] += 1;
        }
        CellCounts {
            y0_a0: c[0],
            y0_a1: c[1],
            y1_a0: c[2],
            y1_a1: c[3],
        }
    }

    /// Rows `idx` in order.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> TripletDataset {
        TripletDataset {
            name: name.into(),
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(
        &self,
        other: &TripletDataset,
        name: impl Into<String>,
    ) -> Result<TripletDataset> {
        if self.dim() != other.dim() {
            return Err(Error::shape("concat", self.x.shape(), other.x.shape()));
        }
        let mut data = self.x.data().to_vec();
        data.extend_from_slice(other.x.data());
        let x = Tensor::new(self.len() + other.len(), self.dim(), data)?;
        let a = self.a.iter().chain(&other.a).copied().collect();
        let y = self.y.iter().chain(&other.y).copied().collect();
        TripletDataset::new(name, x, a, y)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn cell_rows(&self) -> [Vec<usize>; 4] {
        let mut cells: [Vec<usize>; 4] = Default::default();
        for (i, (&y, &a)) in self.y.iter().zip(&self.a).enumerate() {
            cells[cell_index(y, a)].push(i);
        }
        cells
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TripletDataset> {
    let path = path.as_ref();
    let file_label = path.display().to_string();
    let perr = |row: usize, column: &str, msg: String| Error::Parse {
        file: file_label.clone(),
        row,
        column: column.to_string(),
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| perr(0, "header", e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(perr(0, "header", "file is empty".into()));
    }
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let a_col = find("a").ok_or_else(|| perr(0, "a", "missing column".into()))?;
    let y_col = find("y").ok_or_else(|| perr(0, "y", "missing column".into()))?;
    let mut feature_cols = Vec::new();
    while let Some(c) = find(&format!("f{}", feature_cols.len())) {
        feature_cols.push(c);
    }
    let d = feature_cols.len();
    if d == 0 {
        return Err(perr(0, "f0", "no feature columns".into()));
    }
    if headers.len() != d + 2 {
        let extra = headers
            .iter()
            .find(|h| {
                let h = h.trim();
                h != "a" && h != "y" && !(0..d).any(|k| h == format!("f{k}"))
            })
            .unwrap_or("?");
        return Err(perr(0, extra, "unexpected column".into()));
    }

    let mut data = Vec::new();
    let (mut a, mut y) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| perr(row, "?", e.to_string()))?;
        for (k, &c) in feature_cols.iter().enumerate() {
            let field = rec.get(c).unwrap_or("").trim();
            let v: f64 = field
                .parse()
                .map_err(|_| perr(row, &format!("f{k}"), format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(perr(
                    row,
                    &format!("f{k}"),
                    format!("`{field}` is not finite"),
                ));
            }
            data.push(v);
        }
        for (col, name, out) in [(a_col, "a", &mut a), (y_col, "y", &mut y)] {
            let field = rec.get(col).unwrap_or("").trim();
            match field {
                "0" => out.push(0),
                "1" => out.push(1),
                other => return Err(perr(row, name, format!("`{other}` is not 0 or 1"))),
            }
        }
    }
    if y.is_empty() {
        return Err(perr(0, "-", "no data rows".into()));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    let x = Tensor::new(y.len(), d, data)?;
    TripletDataset::new(name, x, a, y)
}

/// Writes `f0..f{d-1},a,y` with 17 significant digits per feature.
pub fn save_csv(ds: &TripletDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header: Vec<String> = (0..ds.dim())
        .map(|k| format!("f{k}"))
        .chain(["a".to_string(), "y".to_string()])
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        for v in ds.x.row_slice(i) {
            line.push_str(&format!("{v:.16e},"));
        }
        line.push_str(&format!("{},{}", ds.a[i], ds.y[i]));
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parameters of the synthetic biased generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    /// Probabilities of cells `(y,a)` = `(0,0), (0,1), (1,0), (1,1)`.
    pub cell_probs: [f64; 4],
    pub class_separation: f64,
    pub attribute_shift: f64,
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let f = |field: &str, msg: String| Error::config(format!("data.synthetic.{field}"), msg);
        if self.n == 0 {
            return Err(f("n", "must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(f("d", "must be at least 1".into()));
        }
        if let Some(i) = self
            .cell_probs
            .iter()
            .position(|&p| !(p > 0.0 && p.is_finite()))
        {
            return Err(f(
                &format!("cell_probs[{i}]"),
                "each probability must be > 0".into(),
            ));
        }
        let total: f64 = self.cell_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(f("cell_probs", format!("must sum to 1, got {total}")));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(f("label_noise", "must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("attribute_shift", self.attribute_shift),
        ] {
            if !v.is_finite() {
                return Err(f(name, "must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Draws `(y, a)` from `cell_probs`, then `x ~ N(μ(y, a), I)` with
/// `μ = δ·y·e₁ + γ·a·e₂ + (γδ/2)·y·a·e₃`, then flips the emitted label with
/// probability `label_noise`. Mean components beyond `d` are dropped.
pub fn synth_biased(spec: &SynthSpec) -> Result<TripletDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cumulative = [0.0; 4];
    let mut acc = 0.0;
    for (c, p) in cumulative.iter_mut().zip(spec.cell_probs) {
        acc += p;
        *c = acc;
    }
    let (delta, gamma) = (spec.class_separation, spec.attribute_shift);
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut a = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let u: f64 = rng.random::<f64>() * acc;
        let cell = cumulative.iter().position(|&c| u < c).unwrap_or(3);
        let (yi, ai) = CELLS[cell];
        let (yf, af) = (f64::from(yi), f64::from(ai));
        let mean = [delta * yf, gamma * af, gamma * delta / 2.0 * yf * af];
        for k in 0..spec.d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(z + mean.get(k).copied().unwrap_or(0.0));
        }
        let flip = rng.random::<f64>() < spec.label_noise;
        y.push(if flip { 1 - yi } else { yi });
        a.push(ai);
    }
    let x = Tensor::new(spec.n, spec.d, data)?;
    TripletDataset::new("synthetic", x, a, y)
}

/// Pools `train` and `val` and draws, without replacement, `c` rows from every
/// `(y, a)` cell where `c` is the smallest pooled cell count.
pub fn balanced_subsample(
    train: &TripletDataset,
    val: &TripletDataset,
    seed: u64,
) -> Result<TripletDataset> {
    let pooled = train.concat(val, "pooled")?;
    let cells = pooled.cell_rows();
    for ((y, a), rows) in CELLS.iter().zip(&cells) {
        if rows.is_empty() {
            return Err(Error::EmptyGroup(format!(
                "pooled cell (y={y},a={a}) is empty"
            )));
        }
    }
    let c = cells.iter().map(Vec::len).min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(4 * c);
    for rows in &cells {
        let mut chosen: Vec<usize> = index::sample(&mut rng, rows.len(), c)
            .into_iter()
            .map(|k| rows[k])
            .collect();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    Ok(pooled.subset(&picked, "balanced"))
}

/// Largest-remainder apportionment of `n` items to `fractions`.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Disjoint, exhaustive random partition into `names.len()` parts.
///
/// With `stratify_by_cell`, each `(y, a)` cell is apportioned separately so
/// every part keeps the cell proportions up to rounding.
pub fn split_named(
    ds: &TripletDataset,
    fractions: &[f64],
    names: &[&str],
    seed: u64,
    stratify_by_cell: bool,
) -> Result<Vec<TripletDataset>> {
    if fractions.len() != names.len() || fractions.is_empty() {
        return Err(Error::config(
            "split.fractions",
            "one fraction per split is required",
        ));
    }
    if let Some(i) = fractions.iter().position(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::config(
            format!("split.fractions[{i}]"),
            "fractions must be positive",
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split.fractions",
            format!("must sum to 1, got {total}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata: Vec<Vec<usize>> = if stratify_by_cell {
        ds.cell_rows().into_iter().collect()
    } else {
        vec![(0..ds.len()).collect()]
    };
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for mut rows in strata {
        rows.shuffle(&mut rng);
        let sizes = largest_remainder(rows.len(), fractions);
        let mut offset = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&rows[offset..offset + size]);
            offset += size;
        }
    }
    for (part, name) in parts.iter().zip(names) {
        if part.is_empty() {
            return Err(Error::config(
                "split.fractions",
                format!("split `{name}` would receive no rows"),
            ));
        }
    }
    Ok(parts
        .into_iter()
        .zip(names)
        .map(|(mut idx, name)| {
            idx.sort_unstable();
            ds.subset(&idx, *name)
        })
        .collect())
}

/// Train / validation / test partition.
pub fn split(
    ds: &TripletDataset,
    fractions: [f64; 3],
    seed: u64,
    stratify_by_cell: bool,
) -> Result<[TripletDataset; 3]> {
    let parts = split_named(
        ds,
        &fractions,
        &["train", "val", "test"],
        seed,
        stratify_by_cell,
    )?;
    let [tr, va, te]: [TripletDataset; 3] = parts.try_into().expect("three parts");
    Ok([tr, va, te])
}
