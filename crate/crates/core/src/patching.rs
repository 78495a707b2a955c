//! Image tensors, non-overlapping patch decomposition, and mask application.
//!
//! Patch vectors are flattened channel-major, then row-major inside the patch:
//! element `c * p * p + dy * p + dx` of a patch holds pixel `(c, y0 + dy, x0 + dx)`.
//! Patches themselves are listed in row-major grid order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `(channels, height, width)` image of finite `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image shape ({channels}, {height}, {width}) has a zero dimension"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image data length {} does not match shape ({channels}, {height}, {width})",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("image value at flat index {i} is not finite")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// The patch grid this image decomposes into, or an error naming the axis
    /// that is not a multiple of `patch_size`.
    pub fn grid(&self, patch_size: usize) -> Result<PatchGrid> {
        if patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        if self.height % patch_size != 0 {
            return Err(Error::invalid(format!(
                "height {} is not divisible by patch size {patch_size}",
                self.height
            )));
        }
        if self.width % patch_size != 0 {
            return Err(Error::invalid(format!(
                "width {} is not divisible by patch size {patch_size}",
                self.width
            )));
        }
        PatchGrid::new(
            patch_size,
            self.height / patch_size,
            self.width / patch_size,
            self.channels,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn new(patch_size: usize, rows: usize, cols: usize, channels: usize) -> Result<Self> {
        if patch_size == 0 || channels == 0 {
            return Err(Error::invalid("patch size and channel count must be positive"));
        }
        if rows * cols < 2 {
            return Err(Error::invalid(format!(
                "a {rows}x{cols} patch grid has fewer than two patches"
            )));
        }
        Ok(Self {
            patch_size,
            rows,
            cols,
            channels,
        })
    }

    /// Total patch count `N`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn height(&self) -> usize {
        self.rows * self.patch_size
    }

    pub fn width(&self) -> usize {
        self.cols * self.patch_size
    }

    /// Top-left pixel of patch `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        let r = index / self.cols;
        let c = index % self.cols;
        (r * self.patch_size, c * self.patch_size)
    }

    /// Patch index containing pixel `(y, x)`.
    pub fn patch_of(&self, y: usize, x: usize) -> usize {
        (y / self.patch_size) * self.cols + x / self.patch_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    grid: PatchGrid,
    patches: Vec<Vec<f32>>,
}

impl PatchSet {
    pub fn new(grid: PatchGrid, patches: Vec<Vec<f32>>) -> Result<Self> {
        if patches.len() != grid.len() {
            return Err(Error::invalid(format!(
                "grid expects {} patches, got {}",
                grid.len(),
                patches.len()
            )));
        }
        if let Some((i, p)) = patches
            .iter()
            .enumerate()
            .find(|(_, p)| p.len() != grid.patch_len())
        {
            return Err(Error::invalid(format!(
                "patch {i} has length {}, grid expects {}",
                p.len(),
                grid.patch_len()
            )));
        }
        Ok(Self { grid, patches })
    }

    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn patches(&self) -> &[Vec<f32>] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

pub fn patchify(image: &ImageTensor, patch_size: usize) -> Result<PatchSet> {
    let grid = image.grid(patch_size)?;
    let p = patch_size;
    let patches = (0..grid.len())
        .map(|idx| {
            let (y0, x0) = grid.origin(idx);
            let mut v = Vec::with_capacity(grid.patch_len());
            for c in 0..grid.channels {
                for dy in 0..p {
                    let row = (c * image.height + y0 + dy) * image.width + x0;
                    v.extend_from_slice(&image.data[row..row + p]);
                }
            }
            v
        })
        .collect();
    Ok(PatchSet { grid, patches })
}

pub fn unpatchify(set: &PatchSet) -> Result<ImageTensor> {
    let grid = set.grid;
    let (h, w, p) = (grid.height(), grid.width(), grid.patch_size);
    let mut data = vec![0.0f32; grid.channels * h * w];
    for (idx, patch) in set.patches.iter().enumerate() {
        let (y0, x0) = grid.origin(idx);
        for c in 0..grid.channels {
            for dy in 0..p {
                let row = (c * h + y0 + dy) * w + x0;
                let src = (c * p + dy) * p;
                data[row..row + p].copy_from_slice(&patch[src..src + p]);
            }
        }
    }
    ImageTensor::new(grid.channels, h, w, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchLabel {
    Lesion,
    Background,
}

/// A lesion-first permutation of patch indices, before a masked-prefix length
/// is chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchOrdering {
    grid: PatchGrid,
    order: Vec<usize>,
    labels: Vec<PatchLabel>,
}

impl PatchOrdering {
    /// Validates that `order` is a permutation of `0..N` and that every
    /// lesion index precedes every background index.
    pub fn new(grid: PatchGrid, order: Vec<usize>, labels: Vec<PatchLabel>) -> Result<Self> {
        let n = grid.len();
        if order.len() != n || labels.len() != n {
            return Err(Error::invalid(format!(
                "ordering has {} indices and {} labels for a grid of {n} patches",
                order.len(),
                labels.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::invalid(format!("order is not a permutation (index {i})")));
            }
            seen[i] = true;
        }
        let mut in_background = false;
        for &i in &order {
            match labels[i] {
                PatchLabel::Background => in_background = true,
                PatchLabel::Lesion if in_background => {
                    return Err(Error::invalid(format!(
                        "lesion patch {i} follows a background patch in the order"
                    )))
                }
                PatchLabel::Lesion => {}
            }
        }
        Ok(Self {
            grid,
            order,
            labels,
        })
    }

    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn labels(&self) -> &[PatchLabel] {
        &self.labels
    }

    pub fn lesion_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == PatchLabel::Lesion).count()
    }
}

/// A patch ordering together with the masked-prefix length `n`.
///
/// The first `n` entries of the order are masked, the remainder visible.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    ordering: PatchOrdering,
    n: usize,
    seed: u64,
}

impl MaskPlan {
    pub fn new(ordering: PatchOrdering, n: usize, seed: u64) -> Result<Self> {
        let total = ordering.grid.len();
        if n > total {
            return Err(Error::invalid(format!(
                "masked count {n} exceeds patch count {total}"
            )));
        }
        Ok(Self { ordering, n, seed })
    }

    pub fn grid(&self) -> PatchGrid {
        self.ordering.grid
    }

    pub fn ordering(&self) -> &PatchOrdering {
        &self.ordering
    }

    pub fn order(&self) -> &[usize] {
        &self.ordering.order
    }

    pub fn labels(&self) -> &[PatchLabel] {
        &self.ordering.labels
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn masked(&self) -> &[usize] {
        &self.ordering.order[..self.n]
    }

    pub fn visible(&self) -> &[usize] {
        &self.ordering.order[self.n..]
    }

    /// Per-patch flag, `true` for masked patches.
    pub fn patch_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.ordering.grid.len()];
        for &i in self.masked() {
            m[i] = true;
        }
        m
    }

    /// Per-pixel (`height * width`) flag, `true` inside masked patches.
    pub fn pixel_mask(&self) -> Vec<bool> {
        let grid = self.ordering.grid;
        let (h, w) = (grid.height(), grid.width());
        let patches = self.patch_mask();
        let mut m = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                m[y * w + x] = patches[grid.patch_of(y, x)];
            }
        }
        m
    }
}

/// How masked pixels are filled before reaching the autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MaskFill {
    Constant(f32),
    /// The current value of a trainable scalar token.
    Token(f32),
}

impl Default for MaskFill {
    fn default() -> Self {
        MaskFill::Constant(0.0)
    }
}

impl MaskFill {
    pub fn value(&self) -> f32 {
        match *self {
            MaskFill::Constant(v) | MaskFill::Token(v) => v,
        }
    }
}

/// Produce the masked image `x_m`: pixels of the first `n` patches of the
/// plan are overwritten with the fill value, all other pixels are copied.
pub fn apply_mask(image: &ImageTensor, plan: &MaskPlan, fill: MaskFill) -> Result<ImageTensor> {
    let grid = image.grid(plan.grid().patch_size)?;
    if grid != plan.grid() {
        return Err(Error::invalid(format!(
            "mask plan grid {:?} does not match image grid {:?}",
            plan.grid(),
            grid
        )));
    }
    let mut data = image.data.clone();
    let v = fill.value();
    let p = grid.patch_size;
    for &idx in plan.masked() {
        let (y0, x0) = grid.origin(idx);
        for c in 0..grid.channels {
            for dy in 0..p {
                let row = (c * image.height + y0 + dy) * image.width + x0;
                data[row..row + p].iter_mut().for_each(|px| *px = v);
            }
        }
    }
    ImageTensor::new(image.channels, image.height, image.width, data)
}
