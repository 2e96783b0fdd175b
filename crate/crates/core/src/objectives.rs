//! Sample sets, the completion and dense least-squares objectives, and
//! recovery metrics.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::Ambient;
use crate::matkernels::leading_eigvecs;
use crate::tenalg::{kron_rows_into, DenseTensor, Matrix, Shape};
use crate::tucker::{sample_low_rank, LowRankTensor, TuckerTensor};

/// Entries of a tensor on a set of multi-indices, sorted lexicographically
/// and free of duplicates. Indices are stored 0-based; the text format is
/// 1-based.
///
/// A sample set doubles as a sparse tensor (zero off the support), which is
/// how the completion gradient is represented.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    shape: Shape,
    idx: Vec<u32>,
    values: Vec<f64>,
}

impl SampleSet {
    /// Builds a sample set from 0-based indices, sorting them; duplicates and
    /// out-of-range indices are rejected.
    pub fn new(shape: Shape, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let d = shape.order();
        let mut entries = entries;
        for (i, v) in &entries {
            check_index(&shape, i).map_err(Error::InvalidSampling)?;
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSampling(format!("duplicate index {:?}", w[0].0)));
        }
        let mut idx = Vec::with_capacity(entries.len() * d);
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            idx.extend(i.iter().map(|&x| x as u32));
            values.push(v);
        }
        Ok(SampleSet { shape, idx, values })
    }

    /// Samples `a` at the given 0-based indices.
    pub fn from_dense(a: &DenseTensor, indices: Vec<Vec<usize>>) -> Result<Self> {
        let entries = indices
            .into_iter()
            .map(|i| {
                check_index(a.shape(), &i).map_err(Error::InvalidSampling)?;
                let v = a.get(&i);
                Ok((i, v))
            })
            .collect::<Result<Vec<_>>>()?;
        SampleSet::new(a.shape().clone(), entries)
    }

    /// Samples a Tucker tensor at the given 0-based indices.
    pub fn from_tucker(x: &TuckerTensor, indices: Vec<Vec<usize>>) -> Result<Self> {
        let zero = SampleSet::new(x.shape(), indices.into_iter().map(|i| (i, 0.0)).collect())?;
        let values = zero.sample(x);
        Ok(zero.with_values(values))
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat 0-based indices, `d` per sample.
    pub fn flat_indices(&self) -> &[u32] {
        &self.idx
    }

    pub fn index(&self, i: usize) -> Vec<usize> {
        let d = self.shape.order();
        self.idx[i * d..(i + 1) * d].iter().map(|&x| x as usize).collect()
    }

    pub fn with_values(&self, values: Vec<f64>) -> SampleSet {
        assert_eq!(values.len(), self.values.len());
        SampleSet { shape: self.shape.clone(), idx: self.idx.clone(), values }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Values of `x` on the support.
    pub fn sample(&self, x: &TuckerTensor) -> Vec<f64> {
        sample_low_rank(x.core(), x.factors(), &self.idx)
    }

    pub fn sample_form(&self, x: &LowRankTensor) -> Vec<f64> {
        sample_low_rank(&x.core, &x.factors, &self.idx)
    }

    pub fn sample_dense(&self, a: &DenseTensor) -> Vec<f64> {
        (0..self.len()).map(|i| a.get(&self.index(i))).collect()
    }

    /// Writes the text format: a `# shape n1 ... nd` header, then one line
    /// per sample with 1-based indices and the value at 17 significant
    /// digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let dims: Vec<String> = self.shape.dims().iter().map(|n| n.to_string()).collect();
        writeln!(w, "# shape {}", dims.join(" "))?;
        let d = self.shape.order();
        let mut line = String::new();
        for (s, v) in self.idx.chunks(d).zip(&self.values) {
            line.clear();
            for i in s {
                line.push_str(&(i + 1).to_string());
                line.push(' ');
            }
            line.push_str(&format!("{v:.16e}"));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut shape: Option<Shape> = None;
        let mut entries = Vec::new();
        let mut seen_lines = Vec::new();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = ln + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("shape") {
                    if shape.is_some() {
                        return Err(Error::Parse { line: lineno, msg: "second shape header".into() });
                    }
                    let dims = it
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
                    shape = Some(
                        Shape::new(dims).map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?,
                    );
                }
                continue;
            }
            let sh =
                shape.as_ref().ok_or(Error::Parse { line: lineno, msg: "missing shape header".into() })?;
            let fields: Vec<&str> = t.split_whitespace().collect();
            let d = sh.order();
            if fields.len() != d + 1 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} fields, found {}", d + 1, fields.len()),
                });
            }
            let mut idx = Vec::with_capacity(d);
            for f in &fields[..d] {
                let i: usize =
                    f.parse().map_err(|_| Error::Parse { line: lineno, msg: format!("bad index {f:?}") })?;
                if i == 0 {
                    return Err(Error::Parse { line: lineno, msg: "indices are 1-based".into() });
                }
                idx.push(i - 1);
            }
            check_index(sh, &idx).map_err(|msg| Error::Parse { line: lineno, msg })?;
            let v: f64 = fields[d]
                .parse()
                .map_err(|_| Error::Parse { line: lineno, msg: format!("bad value {:?}", fields[d]) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: lineno, msg: "non-finite value".into() });
            }
            entries.push((idx, v));
            seen_lines.push(lineno);
        }
        let shape = shape.ok_or(Error::Parse { line: 0, msg: "missing shape header".into() })?;
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| entries[a].0.cmp(&entries[b].0));
        for w in order.windows(2) {
            if entries[w[0]].0 == entries[w[1]].0 {
                return Err(Error::Parse {
                    line: seen_lines[w[0]].max(seen_lines[w[1]]),
                    msg: "duplicate index".into(),
                });
            }
        }
        SampleSet::new(shape, entries)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        SampleSet::read_text(std::io::BufReader::new(f))
    }

    fn chunk_len(&self) -> usize {
        exec::CHUNK.max(self.len().div_ceil(64))
    }
}

fn check_index(shape: &Shape, idx: &[usize]) -> std::result::Result<(), String> {
    if idx.len() != shape.order() {
        return Err(format!("index of length {} for order {}", idx.len(), shape.order()));
    }
    for (k, (&i, &n)) in idx.iter().zip(shape.dims()).enumerate() {
        if i >= n {
            return Err(format!("index {} out of range 1..={n} in mode {}", i + 1, k + 1));
        }
    }
    Ok(())
}

impl Ambient for SampleSet {
    fn shape(&self) -> &Shape {
        &self.shape
    }

    fn fro_norm(&self) -> f64 {
        self.norm()
    }

    fn contract_all_but(&self, k: usize, factors: &[Matrix]) -> Result<Matrix> {
        self.shape.check_mode(k)?;
        let d = self.shape.order();
        let nk = self.shape.dim(k);
        let width: usize = (0..d).filter(|&j| j != k).map(|j| factors[j].ncols()).product();
        let rows: Vec<Matrix> = factors.iter().map(|f| f.transpose()).collect();
        let parts = exec::map_chunks(exec::current(), self.len(), self.chunk_len(), |range| {
            // row-major accumulator: acc[i * width + c]
            let mut acc = vec![0.0; nk * width];
            let mut kr = Vec::with_capacity(width);
            let mut refs: Vec<&[f64]> = Vec::with_capacity(d - 1);
            for t in range {
                let s = &self.idx[t * d..(t + 1) * d];
                refs.clear();
                for j in 0..d {
                    if j != k {
                        let i = s[j] as usize;
                        refs.push(&rows[j].as_slice()[i * rows[j].nrows()..(i + 1) * rows[j].nrows()]);
                    }
                }
                kron_rows_into(&refs, &mut kr);
                let v = self.values[t];
                let row = &mut acc[s[k] as usize * width..(s[k] as usize + 1) * width];
                for (a, w) in row.iter_mut().zip(&kr) {
                    *a += v * w;
                }
            }
            acc
        });
        let acc = exec::sum_in_order(parts, nk * width);
        Ok(Matrix::from_row_slice(nk, width, &acc))
    }

    fn contract_all(&self, factors: &[Matrix]) -> Result<DenseTensor> {
        let d = self.shape.order();
        let dims: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
        let shape = Shape::new(dims)?;
        let total = shape.numel();
        let rows: Vec<Matrix> = factors.iter().map(|f| f.transpose()).collect();
        let parts = exec::map_chunks(exec::current(), self.len(), self.chunk_len(), |range| {
            let mut acc = vec![0.0; total];
            let mut kr = Vec::with_capacity(total);
            let mut refs: Vec<&[f64]> = Vec::with_capacity(d);
            for t in range {
                let s = &self.idx[t * d..(t + 1) * d];
                refs.clear();
                for j in 0..d {
                    let i = s[j] as usize;
                    let w = rows[j].nrows();
                    refs.push(&rows[j].as_slice()[i * w..(i + 1) * w]);
                }
                kron_rows_into(&refs, &mut kr);
                let v = self.values[t];
                for (a, w) in acc.iter_mut().zip(&kr) {
                    *a += v * w;
                }
            }
            acc
        });
        DenseTensor::new(shape, exec::sum_in_order(parts, total))
    }

    /// Leading eigenvectors of the mode-k Gram matrix `S_(k) S_(k)^T`.
    fn leading_mode_subspace(&self, k: usize, count: usize) -> Result<Matrix> {
        self.shape.check_mode(k)?;
        let d = self.shape.order();
        let nk = self.shape.dim(k);
        let key = |t: usize| -> usize {
            let s = &self.idx[t * d..(t + 1) * d];
            let mut lin = 0;
            let mut stride = 1;
            for j in 0..d {
                if j != k {
                    lin += s[j] as usize * stride;
                    stride *= self.shape.dim(j);
                }
            }
            lin
        };
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&t| (key(t), t));
        let mut gram = Matrix::zeros(nk, nk);
        let mut start = 0;
        while start < order.len() {
            let kk = key(order[start]);
            let mut end = start + 1;
            while end < order.len() && key(order[end]) == kk {
                end += 1;
            }
            for &a in &order[start..end] {
                let ia = self.idx[a * d + k] as usize;
                for &b in &order[start..end] {
                    let ib = self.idx[b * d + k] as usize;
                    gram[(ia, ib)] += self.values[a] * self.values[b];
                }
            }
            start = end;
        }
        let (vecs, vals) = leading_eigvecs(&gram, count);
        let top = vals.first().copied().unwrap_or(0.0);
        let keep = vals.iter().take_while(|&&v| top > 0.0 && v > 1e-20 * top).count();
        Ok(vecs.columns(0, keep).into_owned())
    }

    fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(self.shape.clone());
        for (i, v) in self.values.iter().enumerate() {
            out.set(&self.index(i), *v);
        }
        out
    }
}

/// Smooth objective on tensors of a fixed shape, evaluated at Tucker points.
pub trait Objective: Sync {
    /// Representation of `-grad f`.
    type Grad: Ambient;

    fn shape(&self) -> &Shape;

    /// `f(x)` and `-grad f(x)`.
    fn evaluate(&self, x: &TuckerTensor) -> Result<(f64, Self::Grad)>;

    fn value(&self, x: &TuckerTensor) -> Result<f64> {
        Ok(self.evaluate(x)?.0)
    }

    /// Relative training residual implied by the objective value.
    fn train_error(&self, f: f64) -> f64;

    /// Minimizer over `s >= 0` of `f(x + s d)`, or an error when the
    /// curvature along `d` vanishes.
    fn exact_step(&self, x: &TuckerTensor, d: &LowRankTensor, neg_grad: &Self::Grad) -> Result<f64>;

    /// Minimizer of `f(x + s (-grad f))`.
    fn exact_step_neg_grad(&self, neg_grad: &Self::Grad) -> Result<f64>;
}

/// `f(X) = 1/2 ||P_Omega(X) - P_Omega(A)||^2`.
#[derive(Debug, Clone)]
pub struct CompletionObjective {
    train: SampleSet,
    train_norm: f64,
}

impl CompletionObjective {
    pub fn new(train: SampleSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidSampling("empty training set".into()));
        }
        let train_norm = train.norm();
        if train_norm == 0.0 {
            return Err(Error::InvalidSampling("training values are all zero".into()));
        }
        Ok(CompletionObjective { train, train_norm })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.train
    }
}

impl Objective for CompletionObjective {
    type Grad = SampleSet;

    fn shape(&self) -> &Shape {
        self.train.shape()
    }

    fn evaluate(&self, x: &TuckerTensor) -> Result<(f64, SampleSet)> {
        let xv = self.train.sample(x);
        let res: Vec<f64> = self.train.values().iter().zip(&xv).map(|(a, x)| a - x).collect();
        let f = 0.5 * res.iter().map(|r| r * r).sum::<f64>();
        Ok((f, self.train.with_values(res)))
    }

    fn train_error(&self, f: f64) -> f64 {
        (2.0 * f).sqrt() / self.train_norm
    }

    fn exact_step(&self, _x: &TuckerTensor, d: &LowRankTensor, neg_grad: &SampleSet) -> Result<f64> {
        let pd = self.train.sample_form(d);
        exact_step_from_samples(&pd, neg_grad.values())
    }

    fn exact_step_neg_grad(&self, neg_grad: &SampleSet) -> Result<f64> {
        exact_step_from_samples(neg_grad.values(), neg_grad.values())
    }
}

fn exact_step_from_samples(pd: &[f64], res: &[f64]) -> Result<f64> {
    let den: f64 = pd.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let num: f64 = pd.iter().zip(res).map(|(a, b)| a * b).sum();
    Ok((num / den).max(0.0))
}

/// `s0 = <P_Omega V, P_Omega(A - X)> / <P_Omega V, P_Omega V>`, clamped at 0.
pub fn exact_initial_stepsize(train: &SampleSet, x: &TuckerTensor, v: &LowRankTensor) -> Result<f64> {
    let xv = train.sample(x);
    let res: Vec<f64> = train.values().iter().zip(&xv).map(|(a, x)| a - x).collect();
    exact_step_from_samples(&train.sample_form(v), &res)
}

/// `f(X) = scale * ||X - A||^2`; the default scale is 1 so the gradient is
/// `2 (X - A)`.
#[derive(Debug, Clone)]
pub struct DenseLeastSquares {
    target: DenseTensor,
    scale: f64,
    target_norm: f64,
}

impl DenseLeastSquares {
    pub fn new(target: DenseTensor) -> Self {
        Self::with_scale(target, 1.0)
    }

    pub fn with_scale(target: DenseTensor, scale: f64) -> Self {
        let target_norm = target.fro_norm();
        DenseLeastSquares { target, scale, target_norm }
    }

    pub fn target(&self) -> &DenseTensor {
        &self.target
    }
}

impl Objective for DenseLeastSquares {
    type Grad = DenseTensor;

    fn shape(&self) -> &Shape {
        self.target.shape()
    }

    fn evaluate(&self, x: &TuckerTensor) -> Result<(f64, DenseTensor)> {
        let mut diff = self.target.sub(&x.to_dense())?;
        let f = self.scale * diff.fro_norm().powi(2);
        diff.scale(2.0 * self.scale);
        Ok((f, diff))
    }

    fn train_error(&self, f: f64) -> f64 {
        let e = (f / self.scale).sqrt();
        if self.target_norm == 0.0 {
            e
        } else {
            e / self.target_norm
        }
    }

    fn exact_step(&self, _x: &TuckerTensor, d: &LowRankTensor, neg_grad: &DenseTensor) -> Result<f64> {
        let dd = d.to_dense();
        let den = 2.0 * self.scale * dd.fro_norm().powi(2);
        if den == 0.0 {
            return Err(Error::ZeroDirection);
        }
        Ok((dd.inner(neg_grad)? / den).max(0.0))
    }

    fn exact_step_neg_grad(&self, neg_grad: &DenseTensor) -> Result<f64> {
        if neg_grad.fro_norm() == 0.0 {
            return Err(Error::ZeroDirection);
        }
        Ok(1.0 / (2.0 * self.scale))
    }
}

/// `||P_S X - P_S A|| / ||P_S A||` on a sample set (training or test).
pub fn sampled_relative_error(samples: &SampleSet, x: &TuckerTensor) -> Result<f64> {
    let den = samples.norm();
    if den == 0.0 {
        return Err(Error::InvalidSampling("reference values are all zero".into()));
    }
    let xv = samples.sample(x);
    let num: f64 = samples.values().iter().zip(&xv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `||X - A|| / ||A||`.
pub fn relerr(x: &DenseTensor, a: &DenseTensor) -> Result<f64> {
    Ok(x.sub(a)?.fro_norm() / a.fro_norm())
}

/// `10 log10(N max(A) / ||X - A||^2)`; `+inf` for an exact recovery.
pub fn psnr(x: &DenseTensor, a: &DenseTensor) -> Result<f64> {
    let err = x.sub(a)?.fro_norm().powi(2);
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let n = a.shape().numel() as f64;
    Ok(10.0 * (n * a.max_value() / err).log10())
}
