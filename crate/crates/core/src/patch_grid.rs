//! Sliding-window decomposition of an H x W grid into K x K patches.
//!
//! Windows that would extend past the grid border are dropped rather than
//! padded. Feature maps and flow fields are cut with the same [`PatchGrid`],
//! so patch `p` always covers the same pixels in both.

use thiserror::Error;

use crate::flow_codec::FlowField;

/// Default patch size.
pub const DEFAULT_PATCH_SIZE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("patch size {patch_size} does not fit a {height}x{width} grid")]
    PatchLargerThanGrid {
        patch_size: usize,
        height: usize,
        width: usize,
    },
    #[error("patch size and stride must be at least 1 (got K={patch_size}, stride={stride})")]
    ZeroSize { patch_size: usize, stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    height: usize,
    width: usize,
    patch_size: usize,
    stride: usize,
}

impl GridSpec {
    pub fn new(
        height: usize,
        width: usize,
        patch_size: usize,
        stride: usize,
    ) -> Result<Self, GridError> {
        if patch_size == 0 || stride == 0 {
            return Err(GridError::ZeroSize { patch_size, stride });
        }
        if patch_size > height || patch_size > width {
            return Err(GridError::PatchLargerThanGrid {
                patch_size,
                height,
                width,
            });
        }
        Ok(Self {
            height,
            width,
            patch_size,
            stride,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of window positions along each axis, `(rows, cols)`.
    pub fn windows_per_axis(&self) -> (usize, usize) {
        (
            (self.height - self.patch_size) / self.stride + 1,
            (self.width - self.patch_size) / self.stride + 1,
        )
    }

    /// Total number of windows `L`.
    pub fn window_count(&self) -> usize {
        let (r, c) = self.windows_per_axis();
        r * c
    }
}

/// Top-left corner of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    spec: GridSpec,
    windows: Vec<Window>,
}

/// Enumerates every fully contained window in row-major order of origin.
pub fn build_grid(spec: GridSpec) -> PatchGrid {
    let (rows, cols) = spec.windows_per_axis();
    let windows = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| Window {
                row: r * spec.stride,
                col: c * spec.stride,
            })
        })
        .collect();
    PatchGrid { spec, windows }
}

impl PatchGrid {
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Grid coordinates `(row, col)` of flattened location `i` in `window`.
    pub fn location(&self, window: Window, i: usize) -> (usize, usize) {
        let k = self.spec.patch_size;
        (window.row + i / k, window.col + i % k)
    }
}

/// A multi-channel H x W grid that patches can be cut from.
pub trait ChannelGrid {
    fn channels(&self) -> usize;
    fn grid_height(&self) -> usize;
    fn grid_width(&self) -> usize;
    fn value(&self, channel: usize, row: usize, col: usize) -> f64;
}

impl ChannelGrid for FlowField {
    fn channels(&self) -> usize {
        2
    }

    fn grid_height(&self) -> usize {
        self.height()
    }

    fn grid_width(&self) -> usize {
        self.width()
    }

    fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        let i = row * self.width() + col;
        match channel {
            0 => self.u()[i],
            1 => self.v()[i],
            _ => panic!("flow has 2 channels, asked for channel {channel}"),
        }
    }
}

/// C x K x K block, stored channel-major with row-major locations inside
/// each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    channels: usize,
    size: usize,
    values: Vec<f64>,
}

impl Patch {
    pub fn new(channels: usize, size: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            channels * size * size,
            "patch buffer has the wrong length"
        );
        Self {
            channels,
            size,
            values,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Side length K.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of locations, K².
    pub fn locations(&self) -> usize {
        self.size * self.size
    }

    /// Channel-major buffer.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Plane of one channel, flattened row-major.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.locations();
        &self.values[c * n..(c + 1) * n]
    }

    /// The C-vector at flattened location `i`.
    pub fn vector(&self, i: usize) -> Vec<f64> {
        let n = self.locations();
        (0..self.channels).map(|c| self.values[c * n + i]).collect()
    }

    /// Flow vector at location `i` of a 2-channel patch.
    pub fn flow_at(&self, i: usize) -> [f64; 2] {
        debug_assert_eq!(self.channels, 2);
        let n = self.locations();
        [self.values[i], self.values[n + i]]
    }
}

/// Copies the K x K block under `window` out of every channel of `tensor`.
pub fn extract_patch<G: ChannelGrid + ?Sized>(
    tensor: &G,
    grid: &PatchGrid,
    window: Window,
) -> Patch {
    let k = grid.spec.patch_size;
    let channels = tensor.channels();
    let mut values = Vec::with_capacity(channels * k * k);
    for c in 0..channels {
        for dr in 0..k {
            for dc in 0..k {
                values.push(tensor.value(c, window.row + dr, window.col + dc));
            }
        }
    }
    Patch::new(channels, k, values)
}

/// Frobenius norm over every component of a flow patch.
pub fn patch_flow_norm(patch: &Patch) -> f64 {
    patch.values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Plane {
        h: usize,
        w: usize,
        data: Vec<f64>,
    }

    impl ChannelGrid for Plane {
        fn channels(&self) -> usize {
            1
        }
        fn grid_height(&self) -> usize {
            self.h
        }
        fn grid_width(&self) -> usize {
            self.w
        }
        fn value(&self, _: usize, r: usize, c: usize) -> f64 {
            self.data[r * self.w + c]
        }
    }

    #[test]
    fn exact_tiling() {
        let g = build_grid(GridSpec::new(6, 6, 3, 3).unwrap());
        let origins: Vec<_> = g.windows().iter().map(|w| (w.row, w.col)).collect();
        assert_eq!(origins, vec![(0, 0), (0, 3), (3, 0), (3, 3)]);
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_grid(GridSpec::new(4, 4, 3, 1).unwrap()).len(), 4);
        assert_eq!(build_grid(GridSpec::new(3, 3, 3, 3).unwrap()).len(), 1);
        // Trailing columns that cannot hold a full window are dropped.
        assert_eq!(build_grid(GridSpec::new(3, 8, 3, 3).unwrap()).len(), 2);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(
            GridSpec::new(2, 5, 3, 1),
            Err(GridError::PatchLargerThanGrid { .. })
        ));
        assert!(matches!(
            GridSpec::new(5, 5, 0, 1),
            Err(GridError::ZeroSize { .. })
        ));
        assert!(matches!(
            GridSpec::new(5, 5, 2, 0),
            Err(GridError::ZeroSize { .. })
        ));
    }

    #[test]
    fn row_major_flattening() {
        let t = Plane {
            h: 2,
            w: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let g = build_grid(GridSpec::new(2, 2, 2, 2).unwrap());
        let p = extract_patch(&t, &g, g.windows()[0]);
        assert_eq!(p.values(), t.data.as_slice());
    }

    #[test]
    fn flow_patch_norms() {
        let f = FlowField::from_fn(2, 2, |_, _| (1.0, 0.0)).unwrap();
        let g = build_grid(GridSpec::new(2, 2, 2, 2).unwrap());
        assert_eq!(patch_flow_norm(&extract_patch(&f, &g, g.windows()[0])), 2.0);

        let f = FlowField::new(1, 1, vec![3.0], vec![4.0]).unwrap();
        let g = build_grid(GridSpec::new(1, 1, 1, 1).unwrap());
        let p = extract_patch(&f, &g, g.windows()[0]);
        assert_eq!(p.flow_at(0), [3.0, 4.0]);
        assert_eq!(patch_flow_norm(&p), 5.0);

        assert_eq!(patch_flow_norm(&Patch::new(2, 2, vec![0.0; 8])), 0.0);
    }
}
