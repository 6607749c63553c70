use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// H x W x C feature grid of one image, channels-last.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Argument("feature map dimensions must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of grid locations H*W.
    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Feature vector at flat location `idx = i * W + j`.
    pub fn at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        self.at(i * self.width + j)
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.channels)
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn grid_matches(&self, map: &GridMap) -> bool {
        self.height == map.height() && self.width == map.width()
    }

    pub fn global_average_pool(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for cell in self.cells() {
            out.iter_mut().zip(cell).for_each(|(o, v)| *o += v);
        }
        let n = self.locations() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Splits an N x C x H x W tensor into per-image channels-last maps.
    pub fn from_nchw(t: &Tensor) -> Result<Vec<FeatureMap>> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::Argument(format!("expected NCHW tensor, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        Ok((0..n)
            .map(|img| {
                let src = &t.data()[img * c * plane..(img + 1) * c * plane];
                let mut data = vec![0.0; c * plane];
                for ch in 0..c {
                    for p in 0..plane {
                        data[p * c + ch] = src[ch * plane + p];
                    }
                }
                FeatureMap {
                    height: h,
                    width: w,
                    channels: c,
                    data,
                }
            })
            .collect())
    }

    pub fn to_nchw(maps: &[FeatureMap]) -> Result<Tensor> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Argument("no feature maps".into()))?;
        let (c, h, w) = (first.channels, first.height, first.width);
        let plane = h * w;
        let mut t = Tensor::zeros(&[maps.len(), c, h, w]);
        for (img, m) in maps.iter().enumerate() {
            if !m.same_shape(first) {
                return Err(Error::Argument("feature maps differ in shape".into()));
            }
            let dst = &mut t.data_mut()[img * c * plane..(img + 1) * c * plane];
            for p in 0..plane {
                for ch in 0..c {
                    dst[ch * plane + p] = m.data[p * c + ch];
                }
            }
        }
        Ok(t)
    }
}

/// H x W real-valued spatial map (attention, GradCAM, probabilities).
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Argument(format!(
                "grid map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(GridMap {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GridMap {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn same_shape(&self, other: &GridMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}
