//! im2col / col2im for 3×3 kernels with one pixel of zero padding.

pub(crate) const KERNEL: usize = 3;
pub(crate) const TAPS: usize = KERNEL * KERNEL;
const PAD: isize = 1;

/// Output extent of a padded 3×3 convolution: `ceil(extent / stride)`.
pub fn conv_output_extent(extent: usize, stride: usize) -> usize {
    (extent + 2 * PAD as usize - KERNEL) / stride + 1
}

/// Geometry of one padded 3×3 convolution over a single image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        Self {
            channels,
            height,
            width,
            stride,
            out_height: conv_output_extent(height, stride),
            out_width: conv_output_extent(width, stride),
        }
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn rows(&self) -> usize {
        self.channels * TAPS
    }

    /// Source row/column for output coordinate `o` and tap `t`, if in bounds.
    #[inline]
    fn source(o: usize, t: usize, stride: usize, extent: usize) -> Option<usize> {
        let s = (o * stride) as isize + t as isize - PAD;
        (s >= 0 && (s as usize) < extent).then_some(s as usize)
    }

    /// Unfold `image` (C×H×W) into `cols` ((C·9)×(H'·W')).
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        debug_assert_eq!(image.len(), self.image_len());
        let positions = self.positions();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * TAPS + ky * KERNEL + kx) * positions;
                    let dst = &mut cols[row..row + positions];
                    for oy in 0..self.out_height {
                        let line = &mut dst[oy * self.out_width..(oy + 1) * self.out_width];
                        match Self::source(oy, ky, self.stride, self.height) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                let src = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match Self::source(ox, kx, self.stride, self.width) {
                                        Some(ix) => src[ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-add `cols` into `image`.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        debug_assert_eq!(image.len(), self.image_len());
        let positions = self.positions();
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * TAPS + ky * KERNEL + kx) * positions;
                    let src = &cols[row..row + positions];
                    for oy in 0..self.out_height {
                        let Some(iy) = Self::source(oy, ky, self.stride, self.height) else {
                            continue;
                        };
                        let line = &src[oy * self.out_width..(oy + 1) * self.out_width];
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        for (ox, v) in line.iter().enumerate() {
                            if let Some(ix) = Self::source(ox, kx, self.stride, self.width) {
                                dst[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_follow_ceil_division() {
        assert_eq!(conv_output_extent(100, 2), 50);
        assert_eq!(conv_output_extent(50, 2), 25);
        assert_eq!(conv_output_extent(25, 2), 13);
        assert_eq!(conv_output_extent(7, 1), 7);
        assert_eq!(conv_output_extent(1, 2), 1);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geometry::new(2, 5, 4, 2);
        let x: Vec<f64> = (0..g.image_len()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.positions())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols);
        let mut back = vec![0.0; x.len()];
        g.col2im(&y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
