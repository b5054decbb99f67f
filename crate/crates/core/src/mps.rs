//! Matrix product states holding spin sites and reservoir time bins in a
//! single train.
//!
//! Site tensors have shape `[left, phys, right]`. The state is kept in mixed
//! canonical form around `center`: tensors to its left are left-orthonormal,
//! tensors to its right right-orthonormal.
//!
//! Retiring the leftmost site (a measured time bin that never interacts
//! again) drops its isometry, so the left boundary bond becomes an open
//! purification index whose extent may exceed one. Expectation values, the
//! norm and [`Mps::to_dense`] all trace over that index.

use std::io::{Read, Write};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::tensor::{gemm, thin_qr, truncated_svd, ComplexTensor};

const SNAPSHOT_MAGIC: &[u8; 8] = b"CHFDMPS\0";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Spin,
    TimeBin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SiteLabel {
    pub kind: SiteKind,
    /// Chain position (1-based) for spins, time-step index for bins.
    pub index: usize,
}

impl SiteLabel {
    pub fn spin(index: usize) -> Self {
        Self { kind: SiteKind::Spin, index }
    }

    pub fn bin(index: usize) -> Self {
        Self { kind: SiteKind::TimeBin, index }
    }
}

/// Truncation policy shared by gates and swaps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    /// Relative singular-value cutoff; `0` keeps everything above round-off.
    pub cutoff: f64,
    pub max_bond: usize,
}

impl Truncation {
    pub fn exact(max_bond: usize) -> Self {
        Self { cutoff: 0.0, max_bond }
    }
}

#[derive(Clone, Debug)]
pub struct Mps {
    tensors: Vec<ComplexTensor>,
    labels: Vec<SiteLabel>,
    center: usize,
    discarded_weight: f64,
    max_bond_seen: usize,
}

impl Mps {
    /// Product state, all bonds of extent one, centre at position 0.
    pub fn from_product_state(labels: Vec<SiteLabel>, local_states: &[Vec<C64>]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("an MPS needs at least one site".into()));
        }
        if labels.len() != local_states.len() {
            return Err(Error::Validation(format!(
                "{} labels but {} local states",
                labels.len(),
                local_states.len()
            )));
        }
        check_unique(&labels)?;
        let mut tensors = Vec::with_capacity(labels.len());
        for (i, v) in local_states.iter().enumerate() {
            let t = local_tensor(v, 1)
                .map_err(|e| Error::Validation(format!("site {i} ({:?}): {e}", labels[i])))?;
            tensors.push(t);
        }
        Ok(Self {
            tensors,
            labels,
            center: 0,
            discarded_weight: 0.0,
            max_bond_seen: 1,
        })
    }

    /// Arbitrary tensors, brought into canonical form with the centre at 0
    /// and normalised. Intended for tests and snapshot loading.
    pub fn from_tensors(labels: Vec<SiteLabel>, tensors: Vec<ComplexTensor>) -> Result<Self> {
        validate_train(&labels, &tensors)?;
        let n = tensors.len();
        let mut mps = Self {
            tensors,
            labels,
            center: n - 1,
            discarded_weight: 0.0,
            max_bond_seen: 1,
        };
        mps.move_center(0)?;
        let norm = mps.tensors[0].frobenius_norm();
        if norm == 0.0 {
            return Err(Error::Validation("state has zero norm".into()));
        }
        mps.tensors[0] = mps.tensors[0].scale(C64::new(1.0 / norm, 0.0));
        mps.max_bond_seen = mps.max_bond();
        Ok(mps)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn labels(&self) -> &[SiteLabel] {
        &self.labels
    }

    pub fn tensors(&self) -> &[ComplexTensor] {
        &self.tensors
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn phys_dim(&self, pos: usize) -> usize {
        self.tensors[pos].shape()[1]
    }

    /// Extents of all `len + 1` bonds, boundaries included.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut out = vec![self.tensors[0].shape()[0]];
        out.extend(self.tensors.iter().map(|t| t.shape()[2]));
        out
    }

    /// Largest internal bond extent.
    pub fn max_bond(&self) -> usize {
        self.tensors[..self.len() - 1]
            .iter()
            .map(|t| t.shape()[2])
            .max()
            .unwrap_or(1)
    }

    pub fn max_bond_seen(&self) -> usize {
        self.max_bond_seen
    }

    /// Accumulated squared weight removed by truncations.
    pub fn discarded_weight(&self) -> f64 {
        self.discarded_weight
    }

    pub fn position_of(&self, label: SiteLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    fn check_pos(&self, pos: usize) -> Result<()> {
        if pos >= self.len() {
            return Err(Error::Index { index: pos, len: self.len() });
        }
        Ok(())
    }

    /// ⟨ψ|ψ⟩, read off the centre tensor.
    pub fn norm_squared(&self) -> f64 {
        self.tensors[self.center].norm_sqr()
    }

    pub fn move_center(&mut self, target: usize) -> Result<()> {
        self.check_pos(target)?;
        if target == self.center {
            return Ok(());
        }
        let weight = self.norm_squared();
        while self.center < target {
            let i = self.center;
            let [l, d, r] = dims3(&self.tensors[i]);
            let (q, rm) = thin_qr(self.tensors[i].data(), l * d, r);
            let k = rm.rows();
            self.tensors[i] = ComplexTensor::from_parts(vec![l, d, k], q.into_data());
            let [_, d2, r2] = dims3(&self.tensors[i + 1]);
            let next = gemm(rm.data(), self.tensors[i + 1].data(), k, r, d2 * r2);
            self.tensors[i + 1] = ComplexTensor::from_parts(vec![k, d2, r2], next);
            self.center += 1;
        }
        while self.center > target {
            let i = self.center;
            let [l, d, r] = dims3(&self.tensors[i]);
            let (lm, q) = thin_lq(self.tensors[i].data(), l, d * r);
            let k = lm.cols();
            self.tensors[i] = ComplexTensor::from_parts(vec![k, d, r], q.into_data());
            let [l0, d0, _] = dims3(&self.tensors[i - 1]);
            let prev = gemm(self.tensors[i - 1].data(), lm.data(), l0 * d0, l, k);
            self.tensors[i - 1] = ComplexTensor::from_parts(vec![l0, d0, k], prev);
            self.center -= 1;
        }
        pin_weight(self.tensors[self.center].data_mut(), weight);
        Ok(())
    }

    /// Exchanges the sites at `left` and `left + 1`. The centre must sit on
    /// one of them and follows its content.
    pub fn swap_adjacent(&mut self, left: usize, trunc: Truncation) -> Result<()> {
        if left + 1 >= self.len() {
            return Err(Error::Index { index: left + 1, len: self.len() });
        }
        if self.center != left && self.center != left + 1 {
            return Err(Error::Gauge(format!(
                "swap at {left} needs the centre at {left} or {}, found {}",
                left + 1,
                self.center
            )));
        }
        let [l, d1, _] = dims3(&self.tensors[left]);
        let [_, d2, r] = dims3(&self.tensors[left + 1]);
        let theta = self.merge(left, 2);
        // [l, d1, d2, r] -> [l, d2, d1, r]
        let mut swapped = vec![C64::new(0.0, 0.0); theta.len()];
        for a in 0..l {
            for i in 0..d1 {
                for j in 0..d2 {
                    let src = ((a * d1 + i) * d2 + j) * r;
                    let dst = ((a * d2 + j) * d1 + i) * r;
                    swapped[dst..dst + r].copy_from_slice(&theta[src..src + r]);
                }
            }
        }
        let center_after = if self.center == left { left + 1 } else { left };
        self.labels.swap(left, left + 1);
        self.split(left, &[d2, d1], l, r, swapped, trunc, center_after)
    }

    /// Applies a dense gate to a contiguous span of two or three sites.
    ///
    /// Gate rows and columns index the span's physical states row-major,
    /// leftmost site most significant. The centre must lie in the span and
    /// ends at `center_after`, which must also lie in it.
    pub fn apply_gate(
        &mut self,
        gate: &ComplexTensor,
        positions: &[usize],
        trunc: Truncation,
        center_after: usize,
    ) -> Result<()> {
        if positions.len() < 2 || positions.len() > 3 {
            return Err(Error::Usage(format!(
                "gates act on 2 or 3 sites, got {}",
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Usage(format!("span {positions:?} is not contiguous")));
        }
        let start = positions[0];
        let end = *positions.last().unwrap();
        self.check_pos(end)?;
        if self.center < start || self.center > end {
            return Err(Error::Gauge(format!(
                "centre {} outside gate span {start}..={end}",
                self.center
            )));
        }
        if center_after < start || center_after > end {
            return Err(Error::Usage(format!(
                "centre_after {center_after} outside gate span {start}..={end}"
            )));
        }
        let dims: Vec<usize> = positions.iter().map(|&p| self.phys_dim(p)).collect();
        let big: usize = dims.iter().product();
        if gate.shape() != [big, big] {
            return Err(Error::Dimension(format!(
                "gate shape {:?} does not match span dimension {big}",
                gate.shape()
            )));
        }
        let l = self.tensors[start].shape()[0];
        let r = self.tensors[end].shape()[2];
        let theta = self.merge(start, positions.len());
        let mut out = vec![C64::new(0.0, 0.0); theta.len()];
        for a in 0..l {
            let block = gemm(gate.data(), &theta[a * big * r..(a + 1) * big * r], big, big, r);
            out[a * big * r..(a + 1) * big * r].copy_from_slice(&block);
        }
        self.split(start, &dims, l, r, out, trunc, center_after)
    }

    /// ⟨ψ|op|ψ⟩ for a single-site operator.
    pub fn expect_local(&self, op: &ComplexTensor, pos: usize) -> Result<C64> {
        self.check_pos(pos)?;
        let d = self.phys_dim(pos);
        if op.shape() != [d, d] {
            return Err(Error::Validation(format!(
                "operator shape {:?} does not match physical dimension {d} at {pos}",
                op.shape()
            )));
        }
        let (a, b) = (pos.min(self.center), pos.max(self.center));
        // env[x, y] contracts ket bond x with bra bond y
        let l0 = self.tensors[a].shape()[0];
        let mut env = ComplexTensor::identity(l0).into_data();
        let mut dim = l0;
        for i in a..=b {
            let t = &self.tensors[i];
            let [l, dd, r] = dims3(t);
            debug_assert_eq!(l, dim);
            // ket step: tmp[y, s, r] = Σ_x env[x, y] t[x, s, r]
            let env_t = transpose(&env, dim, dim);
            let mut tmp = gemm(&env_t, t.data(), dim, l, dd * r);
            if i == pos {
                // tmp[y, s', r] = Σ_s op[s', s] tmp[y, s, r]
                let mut applied = vec![C64::new(0.0, 0.0); tmp.len()];
                for y in 0..dim {
                    let block = gemm(op.data(), &tmp[y * dd * r..(y + 1) * dd * r], dd, dd, r);
                    applied[y * dd * r..(y + 1) * dd * r].copy_from_slice(&block);
                }
                tmp = applied;
            }
            // bra step: new[r, r'] = Σ_{y,s} tmp[y, s, r] conj(t[y, s, r'])
            let mut next = vec![C64::new(0.0, 0.0); r * r];
            for ys in 0..dim * dd {
                let krow = &tmp[ys * r..(ys + 1) * r];
                let brow = &t.data()[ys * r..(ys + 1) * r];
                for (x, &kv) in krow.iter().enumerate() {
                    if kv == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let dst = &mut next[x * r..(x + 1) * r];
                    for (o, &bv) in dst.iter_mut().zip(brow) {
                        *o += kv * bv.conj();
                    }
                }
            }
            env = next;
            dim = r;
        }
        Ok((0..dim).map(|i| env[i * dim + i]).sum())
    }

    /// Inserts a product site at `pos`, shifting later sites right.
    /// The inserted tensor is an identity on the bond it splits, so the gauge
    /// is untouched.
    pub fn insert_product_site(&mut self, pos: usize, label: SiteLabel, state: &[C64]) -> Result<()> {
        if pos > self.len() {
            return Err(Error::Index { index: pos, len: self.len() + 1 });
        }
        if self.labels.contains(&label) {
            return Err(Error::Validation(format!("label {label:?} already present")));
        }
        let chi = if pos == self.len() {
            self.tensors[pos - 1].shape()[2]
        } else {
            self.tensors[pos].shape()[0]
        };
        let t = local_tensor(state, chi)?;
        self.tensors.insert(pos, t);
        self.labels.insert(pos, label);
        if self.center >= pos {
            self.center += 1;
        }
        Ok(())
    }

    /// Removes the leftmost site, which must be left of the centre (hence an
    /// isometry). Its physical index joins the open left boundary.
    pub fn retire_leftmost(&mut self) -> Result<SiteLabel> {
        if self.len() < 2 {
            return Err(Error::Usage("cannot retire the only site".into()));
        }
        if self.center == 0 {
            return Err(Error::Gauge("retire_leftmost needs the centre right of position 0".into()));
        }
        self.tensors.remove(0);
        self.center -= 1;
        Ok(self.labels.remove(0))
    }

    /// Dense amplitudes, indexed `[open left, phys_0, .., phys_last, open right]`
    /// row-major. Exponential in size; for tests on small trains.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut acc = self.tensors[0].data().to_vec();
        let [l0, d0, r0] = dims3(&self.tensors[0]);
        let mut rows = l0 * d0;
        let mut r = r0;
        for t in &self.tensors[1..] {
            let [_, d, rr] = dims3(t);
            acc = gemm(&acc, t.data(), rows, r, d * rr);
            rows *= d;
            r = rr;
        }
        acc
    }

    /// Largest deviation from the canonical-form conditions.
    pub fn gauge_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, t) in self.tensors.iter().enumerate() {
            let [l, d, r] = dims3(t);
            if i < self.center {
                let m = ComplexTensor::from_parts(vec![l * d, r], t.data().to_vec());
                let p = m.adjoint().unwrap().matmul(&m).unwrap();
                worst = worst.max(p.max_abs_diff(&ComplexTensor::identity(r)));
            } else if i > self.center {
                let m = ComplexTensor::from_parts(vec![l, d * r], t.data().to_vec());
                let p = m.matmul(&m.adjoint().unwrap()).unwrap();
                worst = worst.max(p.max_abs_diff(&ComplexTensor::identity(l)));
            }
        }
        worst
    }

    pub fn check_gauge(&self, tol: f64) -> Result<()> {
        let defect = self.gauge_defect();
        if defect > tol {
            return Err(Error::Gauge(format!("canonical-form defect {defect:.3e} exceeds {tol:.1e}")));
        }
        Ok(())
    }

    /// Contracts `count` sites starting at `start` into a flat
    /// `[l, d.., r]` array.
    fn merge(&self, start: usize, count: usize) -> Vec<C64> {
        let first = &self.tensors[start];
        let [l, d, r] = dims3(first);
        let mut acc = first.data().to_vec();
        let mut rows = l * d;
        let mut bond = r;
        for t in &self.tensors[start + 1..start + count] {
            let [_, dd, rr] = dims3(t);
            acc = gemm(&acc, t.data(), rows, bond, dd * rr);
            rows *= dd;
            bond = rr;
        }
        acc
    }

    /// Splits a merged block back into sites with truncated SVDs, leaving the
    /// centre at `center_after`.
    #[allow(clippy::too_many_arguments)]
    fn split(
        &mut self,
        start: usize,
        dims: &[usize],
        l: usize,
        r: usize,
        theta: Vec<C64>,
        trunc: Truncation,
        center_after: usize,
    ) -> Result<()> {
        let count = dims.len();
        // Exact gates and swaps preserve the weight carried by the centre.
        let mut weight = self.norm_squared();
        let mut lo = 0; // first unsplit site within the span
        let mut hi = count - 1; // last unsplit site
        let mut left_bond = l;
        let mut right_bond = r;
        let mut block = theta;
        while start + lo < center_after {
            let rest: usize = dims[lo + 1..=hi].iter().product::<usize>() * right_bond;
            let m = ComplexTensor::from_parts(vec![left_bond * dims[lo], rest], block);
            let svd = self.checked_svd(&m, trunc)?;
            weight -= svd.discarded_weight;
            let k = svd.singular_values.len();
            self.tensors[start + lo] =
                ComplexTensor::from_parts(vec![left_bond, dims[lo], k], svd.left_isometry.into_data());
            block = scale_rows(svd.right_isometry.into_data(), &svd.singular_values, rest);
            left_bond = k;
            lo += 1;
        }
        while start + hi > center_after {
            let rest: usize = left_bond * dims[lo..hi].iter().product::<usize>();
            let m = ComplexTensor::from_parts(vec![rest, dims[hi] * right_bond], block);
            let svd = self.checked_svd(&m, trunc)?;
            weight -= svd.discarded_weight;
            let k = svd.singular_values.len();
            self.tensors[start + hi] =
                ComplexTensor::from_parts(vec![k, dims[hi], right_bond], svd.right_isometry.into_data());
            block = scale_cols(svd.left_isometry.into_data(), &svd.singular_values, rest);
            right_bond = k;
            hi -= 1;
        }
        debug_assert_eq!(lo, hi);
        pin_weight(&mut block, weight);
        self.tensors[start + lo] = ComplexTensor::from_parts(vec![left_bond, dims[lo], right_bond], block);
        self.center = center_after;
        if !self.tensors[center_after].is_finite() {
            return Err(Error::Numeric(format!("non-finite tensor at position {center_after}")));
        }
        Ok(())
    }

    fn checked_svd(&mut self, m: &ComplexTensor, trunc: Truncation) -> Result<crate::tensor::SvdResult> {
        let svd = truncated_svd(m, trunc.cutoff, trunc.max_bond)?;
        if trunc.cutoff == 0.0 && svd.numerical_rank > trunc.max_bond {
            return Err(Error::Capacity(format!(
                "exact evolution needs bond dimension {} but max_bond is {}; raise max_bond or set a positive svd_cutoff",
                svd.numerical_rank, trunc.max_bond
            )));
        }
        self.discarded_weight += svd.discarded_weight;
        self.max_bond_seen = self.max_bond_seen.max(svd.singular_values.len());
        Ok(svd)
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.center as u64).to_le_bytes())?;
        w.write_all(&self.discarded_weight.to_le_bytes())?;
        w.write_all(&(self.max_bond_seen as u64).to_le_bytes())?;
        for (label, t) in self.labels.iter().zip(&self.tensors) {
            let kind: u8 = match label.kind {
                SiteKind::Spin => 0,
                SiteKind::TimeBin => 1,
            };
            w.write_all(&[kind])?;
            w.write_all(&(label.index as u64).to_le_bytes())?;
            for &s in t.shape() {
                w.write_all(&(s as u64).to_le_bytes())?;
            }
        }
        for t in &self.tensors {
            for z in t.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let center = read_u64(&mut r)? as usize;
        let discarded_weight = read_f64(&mut r)?;
        let max_bond_seen = read_u64(&mut r)? as usize;
        if n == 0 || n > 1 << 32 || center >= n {
            return Err(Error::Snapshot(format!("invalid site count {n} or centre {center}")));
        }
        let mut labels = Vec::with_capacity(n);
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let kind = match kind[0] {
                0 => SiteKind::Spin,
                1 => SiteKind::TimeBin,
                k => return Err(Error::Snapshot(format!("unknown site kind {k}"))),
            };
            let index = read_u64(&mut r)? as usize;
            labels.push(SiteLabel { kind, index });
            let shape = [read_u64(&mut r)? as usize, read_u64(&mut r)? as usize, read_u64(&mut r)? as usize];
            if shape.iter().any(|&s| s == 0 || s > 1 << 20) {
                return Err(Error::Snapshot(format!("implausible tensor shape {shape:?}")));
            }
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(n);
        for shape in shapes {
            let len = shape[0] * shape[1] * shape[2];
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(C64::new(re, im));
            }
            tensors.push(
                ComplexTensor::new(shape.to_vec(), data).map_err(|e| Error::Snapshot(e.to_string()))?,
            );
        }
        validate_train(&labels, &tensors).map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(Self {
            tensors,
            labels,
            center,
            discarded_weight,
            max_bond_seen,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn check_unique(labels: &[SiteLabel]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for l in labels {
        if !seen.insert(*l) {
            return Err(Error::Validation(format!("duplicate site label {l:?}")));
        }
    }
    Ok(())
}

fn validate_train(labels: &[SiteLabel], tensors: &[ComplexTensor]) -> Result<()> {
    if tensors.is_empty() || labels.len() != tensors.len() {
        return Err(Error::Validation(format!(
            "{} labels for {} tensors",
            labels.len(),
            tensors.len()
        )));
    }
    check_unique(labels)?;
    for (i, t) in tensors.iter().enumerate() {
        if t.rank() != 3 {
            return Err(Error::Dimension(format!("site {i} has rank {}", t.rank())));
        }
        if i + 1 < tensors.len() && t.shape()[2] != tensors[i + 1].shape()[0] {
            return Err(Error::Dimension(format!(
                "bond {i}-{} extents differ: {} vs {}",
                i + 1,
                t.shape()[2],
                tensors[i + 1].shape()[0]
            )));
        }
    }
    if tensors.last().unwrap().shape()[2] != 1 {
        return Err(Error::Dimension("right boundary bond must have extent 1".into()));
    }
    Ok(())
}

/// `δ_ab ⊗ v` as a `[chi, d, chi]` tensor.
fn local_tensor(v: &[C64], chi: usize) -> Result<ComplexTensor> {
    if v.len() < 2 {
        return Err(Error::Validation(format!("local dimension {} < 2", v.len())));
    }
    let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("local state has squared norm {norm}, expected 1")));
    }
    let d = v.len();
    let mut t = ComplexTensor::zeros(&[chi, d, chi]);
    for a in 0..chi {
        for (s, &x) in v.iter().enumerate() {
            t.data_mut()[(a * d + s) * chi + a] = x;
        }
    }
    Ok(t)
}

/// Rescales `block` to squared norm `weight` when they already agree to
/// round-off. Isometries are orthonormal only to O(ε), which otherwise biases
/// the norm a little on every split or centre move.
fn pin_weight(block: &mut [C64], weight: f64) {
    let have: f64 = block.iter().map(|x| x.norm_sqr()).sum();
    if have > 0.0 && weight > 0.0 {
        // x(1 + h) applied as an increment, so entries do not all snap to the
        // same representable factor next to 1.0
        let h = 0.5 * (weight - have) / have;
        if h.abs() < 1e-12 {
            block.iter_mut().for_each(|x| *x += *x * h);
        }
    }
}

fn dims3(t: &ComplexTensor) -> [usize; 3] {
    let s = t.shape();
    [s[0], s[1], s[2]]
}

fn transpose(m: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = m[i * cols + j];
        }
    }
    out
}

fn scale_rows(mut m: Vec<C64>, s: &[f64], cols: usize) -> Vec<C64> {
    for (i, &x) in s.iter().enumerate() {
        for v in &mut m[i * cols..(i + 1) * cols] {
            *v *= x;
        }
    }
    m
}

fn scale_cols(mut m: Vec<C64>, s: &[f64], rows: usize) -> Vec<C64> {
    let k = s.len();
    for i in 0..rows {
        for (v, &x) in m[i * k..(i + 1) * k].iter_mut().zip(s) {
            *v *= x;
        }
    }
    m
}

/// Thin LQ, `m = L·Q` with orthonormal rows in `Q`, via the QR of `m†`.
fn thin_lq(data: &[C64], rows: usize, cols: usize) -> (ComplexTensor, ComplexTensor) {
    let (q, r) = thin_qr(&adjoint_flat(data, rows, cols), cols, rows);
    let k = q.cols();
    (
        ComplexTensor::from_parts(vec![rows, k], adjoint_flat(r.data(), k, rows)),
        ComplexTensor::from_parts(vec![k, cols], adjoint_flat(q.data(), cols, k)),
    )
}

fn adjoint_flat(m: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); m.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = m[i * cols + j].conj();
        }
    }
    out
}
