//! Non-local grouping of similar patch tubes.
//!
//! A [`PatchGroup`] selects `k` spatial `p × p` windows; gathering it from an
//! `h × w × t` video yields a `p² × k × t` tensor whose column `j` in frame `f`
//! is the row-major vectorised patch of member `j` at frame `f`.

use crate::error::{Error, Result};
use crate::tensor::{Element, Image, Matrix, Tensor3};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGroup {
    /// Top-left corner `(row, col)` of the reference patch.
    pub exemplar: (usize, usize),
    /// Top-left corners of the members, best match first; `members[0] == exemplar`.
    pub members: Vec<(usize, usize)>,
    pub patch_size: usize,
}

impl PatchGroup {
    pub fn tube_count(&self) -> usize {
        self.patch_size * self.patch_size * self.members.len()
    }

    /// Visits `(tube index, row, col)` for every pixel covered by the group, in
    /// mode-3 unfolding column order (patch element fastest, then member).
    pub(crate) fn for_each_tube(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.patch_size;
        for (j, &(r0, c0)) in self.members.iter().enumerate() {
            for m in 0..p * p {
                f(m + j * p * p, r0 + m / p, c0 + m % p);
            }
        }
    }

    fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.members.is_empty() {
            return Err(Error::arg(
                "patch group must have a positive patch size and at least one member",
            ));
        }
        for &(r, c) in &self.members {
            if r + p > height || c + p > width {
                return Err(Error::arg(format!(
                    "member patch at ({r}, {c}) of size {p} exceeds a {height}x{width} frame"
                )));
            }
        }
        Ok(())
    }
}

/// Per-group solver state: temporal basis `Q` (`d × t`, orthonormal rows), the
/// low-rank surrogate `J` (`p² × k × d`) and the weight `λ`.
#[derive(Clone, Debug)]
pub struct GroupState {
    pub q: Matrix,
    pub j: Tensor3<f64>,
    pub lambda: f64,
    /// Cached tubal nuclear norm of `j`.
    pub j_tnn: f64,
}

/// Exemplar grid positions along one axis: `0, stride, 2·stride, …` with the
/// last position snapped to `len − p`.
fn grid(len: usize, p: usize, stride: usize) -> Vec<usize> {
    let last = len - p;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("at least position 0") != last {
        out.push(last);
    }
    out
}

fn patch_distance(img: &Image, a: (usize, usize), b: (usize, usize), p: usize, bound: f64) -> f64 {
    let mut acc = 0.0f64;
    for dr in 0..p {
        let ra = &img.row(a.0 + dr)[a.1..a.1 + p];
        let rb = &img.row(b.0 + dr)[b.1..b.1 + p];
        for (x, y) in ra.iter().zip(rb) {
            let d = (*x - *y) as f64;
            acc += d * d;
        }
        if acc > bound {
            return acc;
        }
    }
    acc
}

/// Block matching on a regular exemplar grid.
///
/// For every exemplar the `k` candidates with the smallest squared L2 patch
/// distance inside the `±search_radius` window are kept; ties are broken by
/// row-major scan order and the exemplar always comes first.
pub fn cluster_groups(
    reference: &Image,
    p: usize,
    k: usize,
    stride: usize,
    search_radius: usize,
) -> Result<Vec<PatchGroup>> {
    let (h, w) = (reference.height(), reference.width());
    if p == 0 || p > h.min(w) {
        return Err(Error::arg(format!(
            "patch size {p} must be in 1..={} for a {h}x{w} frame",
            h.min(w)
        )));
    }
    if k == 0 {
        return Err(Error::arg("group size must be at least 1"));
    }
    if stride == 0 || stride > p {
        return Err(Error::arg(format!(
            "stride must be in 1..={p} so that exemplars cover the frame, got {stride}"
        )));
    }
    let rows = grid(h, p, stride);
    let cols = grid(w, p, stride);
    let mut groups = Vec::with_capacity(rows.len() * cols.len());
    let mut scored: Vec<(f64, usize, (usize, usize))> = Vec::new();
    for &r0 in &rows {
        for &c0 in &cols {
            let rlo = r0.saturating_sub(search_radius);
            let rhi = (r0 + search_radius).min(h - p);
            let clo = c0.saturating_sub(search_radius);
            let chi = (c0 + search_radius).min(w - p);
            let candidates = (rhi - rlo + 1) * (chi - clo + 1);
            if k > candidates {
                return Err(Error::arg(format!(
                    "group size {k} exceeds the {candidates} candidates around ({r0}, {c0})"
                )));
            }
            scored.clear();
            for r in rlo..=rhi {
                for c in clo..=chi {
                    let rank = if (r, c) == (r0, c0) { 0 } else { 1 + r * w + c };
                    let d = if rank == 0 {
                        0.0
                    } else {
                        patch_distance(reference, (r0, c0), (r, c), p, f64::INFINITY)
                    };
                    scored.push((d, rank, (r, c)));
                }
            }
            let cmp = |x: &(f64, usize, (usize, usize)), y: &(f64, usize, (usize, usize))| {
                x.0.total_cmp(&y.0).then(x.1.cmp(&y.1))
            };
            if k < scored.len() {
                scored.select_nth_unstable_by(k - 1, cmp);
                scored.truncate(k);
            }
            scored.sort_by(cmp);
            groups.push(PatchGroup {
                exemplar: (r0, c0),
                members: scored.iter().map(|s| s.2).collect(),
                patch_size: p,
            });
        }
    }
    Ok(groups)
}

/// `S_i x`: the `p² × k × t` tensor of the group's patch tubes.
pub fn gather<T: Element>(video: &Tensor3<T>, group: &PatchGroup) -> Result<Tensor3<f64>> {
    group.check_fits(video.height(), video.width())?;
    let p = group.patch_size;
    let (pp, k, t) = (p * p, group.members.len(), video.frames());
    let mut out = Tensor3::<f64>::zeros(pp, k, t)?;
    for f in 0..t {
        let src = video.frame(f);
        let dst = out.frame_mut(f);
        for (j, &(r0, c0)) in group.members.iter().enumerate() {
            for m in 0..pp {
                let (r, c) = (r0 + m / p, c0 + m % p);
                dst[m * k + j] = src[r * video.width() + c].to_f64();
            }
        }
    }
    Ok(out)
}

/// Gathers a group as a row-major `(p²·k) × t` matrix of tubes (row = mode-3 column).
pub(crate) fn gather_tubes(video: &Tensor3<f64>, group: &PatchGroup) -> Vec<f64> {
    let t = video.frames();
    let mut out = vec![0.0; group.tube_count() * t];
    let w = video.width();
    let step = video.frame_len();
    let data = video.data();
    group.for_each_tube(|tube, r, c| {
        let base = r * w + c;
        let row = &mut out[tube * t..(tube + 1) * t];
        for (f, o) in row.iter_mut().enumerate() {
            *o = data[base + f * step];
        }
    });
    out
}

/// Adjoint of [`gather`] summed over groups, with per-voxel contribution counts.
pub fn scatter_accumulate(
    groups: &[(PatchGroup, Tensor3<f64>)],
    dims: [usize; 3],
) -> Result<(Tensor3<f64>, Tensor3<f64>)> {
    let [h, w, t] = dims;
    let mut sum = Tensor3::<f64>::zeros(h, w, t)?;
    let mut counts = Tensor3::<f64>::zeros(h, w, t)?;
    for (group, values) in groups {
        group.check_fits(h, w)?;
        let p = group.patch_size;
        let k = group.members.len();
        if values.dims() != [p * p, k, t] {
            return Err(Error::arg(format!(
                "group tensor has shape {:?}, expected {:?}",
                values.dims(),
                [p * p, k, t]
            )));
        }
        for f in 0..t {
            let src = values.frame(f);
            let s = sum.frame_mut(f);
            for (j, &(r0, c0)) in group.members.iter().enumerate() {
                for m in 0..p * p {
                    s[(r0 + m / p) * w + c0 + m % p] += src[m * k + j];
                }
            }
            let cnt = counts.frame_mut(f);
            for &(r0, c0) in &group.members {
                for m in 0..p * p {
                    cnt[(r0 + m / p) * w + c0 + m % p] += 1.0;
                }
            }
        }
    }
    Ok((sum, counts))
}

/// Number of member patches covering each pixel (the spatial overlap count).
pub fn coverage_counts(groups: &[PatchGroup], height: usize, width: usize) -> Vec<u32> {
    let mut counts = vec![0u32; height * width];
    for g in groups {
        g.for_each_tube(|_, r, c| counts[r * width + c] += 1);
    }
    counts
}
