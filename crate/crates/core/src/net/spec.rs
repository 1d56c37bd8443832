use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::net::layers::{conv_out_len, pool_out_len};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Convolution {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Relu,
    InnerProduct {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Convolution,
    MaxPool,
    Relu,
    InnerProduct,
    Dropout,
    Softmax,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize, stride: usize, pad: usize) -> LayerSpec {
        LayerSpec::Convolution {
            filters,
            kernel,
            stride,
            pad,
        }
    }

    pub fn pool(kernel: usize, stride: usize) -> LayerSpec {
        LayerSpec::MaxPool { kernel, stride }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Convolution { .. } => LayerKind::Convolution,
            LayerSpec::MaxPool { .. } => LayerKind::MaxPool,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::InnerProduct { .. } => LayerKind::InnerProduct,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Softmax => LayerKind::Softmax,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Convolution { .. } | LayerSpec::InnerProduct { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        match *self {
            LayerSpec::Convolution {
                filters,
                kernel,
                stride,
                ..
            } if filters == 0 || kernel == 0 || stride == 0 => {
                bad(format!("convolution needs filters, kernel and stride >= 1: {self:?}"))
            }
            LayerSpec::MaxPool { kernel, stride } if kernel == 0 || stride == 0 => {
                bad(format!("pooling needs kernel and stride >= 1: {self:?}"))
            }
            LayerSpec::InnerProduct { units: 0 } => bad("inner product needs units >= 1".into()),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                bad(format!("dropout rate {rate} outside [0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape (`[C, H, W]` or `[D]`).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let spatial = |what: &str| match input {
            [c, h, w] => Ok((*c, *h, *w)),
            _ => Err(shape_err!("{what} needs a C x H x W input, got {input:?}")),
        };
        match *self {
            LayerSpec::Convolution {
                filters,
                kernel,
                stride,
                pad,
            } => {
                let (_, h, w) = spatial("convolution")?;
                Ok(vec![
                    filters,
                    conv_out_len(h, kernel, stride, pad)?,
                    conv_out_len(w, kernel, stride, pad)?,
                ])
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let (c, h, w) = spatial("pooling")?;
                Ok(vec![c, pool_out_len(h, kernel, stride)?, pool_out_len(w, kernel, stride)?])
            }
            LayerSpec::InnerProduct { units } => Ok(vec![units]),
            LayerSpec::Softmax => match input {
                [k] if *k >= 2 => Ok(vec![*k]),
                _ => Err(shape_err!("softmax needs a vector of >= 2 scores, got {input:?}")),
            },
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Weight and bias dims for a parameterized layer.
    pub fn param_dims(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Convolution { filters, kernel, .. } => {
                Some((vec![filters, input[0], kernel, kernel], vec![filters]))
            }
            LayerSpec::InnerProduct { units } => {
                Some((vec![input.iter().product(), units], vec![units]))
            }
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Convolution {
                filters,
                kernel,
                stride,
                pad,
            } => write!(f, "conv {filters}x{kernel}x{kernel} s{stride} p{pad}"),
            LayerSpec::MaxPool { kernel, stride } => write!(f, "maxpool {kernel}x{kernel} s{stride}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::InnerProduct { units } => write!(f, "inner_product {units}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

/// An ordered layer stack over a fixed `C x H x W` input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    num_classes: usize,
    /// Per-sample shapes: `shapes[0]` is the input, `shapes[i + 1]` the output of layer `i`.
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    /// Validates the stack by running shape inference end to end.
    ///
    /// The last inner-product layer, if any, must emit `num_classes` units,
    /// and a softmax may only appear as the final layer.
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>, num_classes: usize) -> Result<NetworkSpec> {
        if input.contains(&0) {
            return Err(shape_err!("input dims {input:?} must be >= 1"));
        }
        if num_classes == 0 {
            return Err(Error::Parameter("num_classes must be >= 1".into()));
        }
        let mut shapes = vec![input.to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            if *layer == LayerSpec::Softmax && i + 1 != layers.len() {
                return Err(shape_err!("layer {i}: softmax must be the final layer"));
            }
            let out = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| at_layer(i, layer, e))?;
            shapes.push(out);
        }
        if let Some(last_ip) = layers.iter().rev().find_map(|l| match l {
            LayerSpec::InnerProduct { units } => Some(*units),
            _ => None,
        }) {
            if last_ip != num_classes {
                return Err(shape_err!(
                    "final inner product emits {last_ip} units but there are {num_classes} classes"
                ));
            }
        }
        Ok(NetworkSpec {
            input,
            layers,
            num_classes,
            shapes,
        })
    }

    pub fn input(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-sample input shape of layer `i` (`i == layers.len()` gives the network output).
    pub fn shape_before(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind() == kind).count()
    }

    pub fn ends_with_softmax(&self) -> bool {
        self.layers.last() == Some(&LayerSpec::Softmax)
    }

    /// `(layer index, weight dims, bias dims)` for every parameterized layer.
    pub fn param_layout(&self) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.param_dims(&self.shapes[i]).map(|(w, b)| (i, w, b)))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }
}

pub(crate) fn at_layer(i: usize, layer: &LayerSpec, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("layer {i} ({layer}): {m}")),
        Error::Parameter(m) => Error::Parameter(format!("layer {i} ({layer}): {m}")),
        other => other,
    }
}

pub const EMEX_MIN_INPUT: usize = 16;

/// LeNet-style stack: conv 20@5x5, pool 2, conv 50@5x5, pool 2,
/// inner product 500, relu, inner product K, softmax.
pub fn build_emex(input: [usize; 3], num_classes: usize) -> Result<NetworkSpec> {
    let [_, h, w] = input;
    if h < EMEX_MIN_INPUT || w < EMEX_MIN_INPUT {
        return Err(shape_err!(
            "EmEx needs inputs of at least {EMEX_MIN_INPUT}x{EMEX_MIN_INPUT}, got {h}x{w}"
        ));
    }
    NetworkSpec::new(
        input,
        vec![
            LayerSpec::conv(20, 5, 1, 0),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(50, 5, 1, 0),
            LayerSpec::pool(2, 2),
            LayerSpec::InnerProduct { units: 500 },
            LayerSpec::Relu,
            LayerSpec::InnerProduct { units: num_classes },
            LayerSpec::Softmax,
        ],
        num_classes,
    )
}

pub const ALEXNET_CHANNELS: [usize; 5] = [96, 256, 384, 384, 256];
pub const ALEXNET_FC: [usize; 2] = [4096, 4096];
pub const ALEXNET_MIN_WIDTH: usize = 8;
pub const ALEXNET_DROPOUT: f64 = 0.5;

/// AlexNet's layer sequence with every width multiplied by `width_scale`:
/// five convolutions with max-pools after the first, second and fifth,
/// three inner products with dropout after the first two, relu after every
/// convolution and the first two inner products.
///
/// Kernels are 5x5 (pad 2) for the first two convolutions and 3x3 (pad 1)
/// for the rest, all stride 1, with 2x2 stride-2 pools, so the stack fits
/// mouth crops of 32 pixels and up.
pub fn build_alexnet_mini(input: [usize; 3], num_classes: usize, width_scale: f64) -> Result<NetworkSpec> {
    if !(width_scale > 0.0 && width_scale <= 1.0) {
        return Err(Error::Parameter(format!(
            "width_scale {width_scale} outside (0, 1]"
        )));
    }
    let scaled = |n: usize| ((n as f64 * width_scale).round() as usize).max(ALEXNET_MIN_WIDTH);
    let ch = ALEXNET_CHANNELS.map(scaled);
    let fc = ALEXNET_FC.map(scaled);
    let layers = vec![
        LayerSpec::conv(ch[0], 5, 1, 2),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::conv(ch[1], 5, 1, 2),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::conv(ch[2], 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv(ch[3], 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::conv(ch[4], 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::InnerProduct { units: fc[0] },
        LayerSpec::Relu,
        LayerSpec::Dropout {
            rate: ALEXNET_DROPOUT,
        },
        LayerSpec::InnerProduct { units: fc[1] },
        LayerSpec::Relu,
        LayerSpec::Dropout {
            rate: ALEXNET_DROPOUT,
        },
        LayerSpec::InnerProduct { units: num_classes },
        LayerSpec::Softmax,
    ];
    NetworkSpec::new(input, layers, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emex_shapes() {
        let s = build_emex([1, 28, 28], 3).unwrap();
        assert_eq!(s.output_shape(), &[3]);
        assert_eq!(s.shape_before(4), &[50, 4, 4]);
        let last_ip = s
            .layers()
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerSpec::InnerProduct { units } => Some(*units),
                _ => None,
            })
            .unwrap();
        assert_eq!(last_ip, 3);

        // 64 -> conv 60 -> pool 30 -> conv 26 -> pool 13 -> 8450 -> 500 -> 2.
        let s = build_emex([1, 64, 64], 2).unwrap();
        assert_eq!(s.layers().len(), 8);
        assert_eq!(s.shape_before(4), &[50, 13, 13]);
        assert_eq!(s.output_shape(), &[2]);

        assert!(matches!(build_emex([1, 8, 8], 3), Err(Error::Shape(_))));
    }

    #[test]
    fn alexnet_structure() {
        let s = build_alexnet_mini([3, 224, 224], 1000, 1.0).unwrap();
        let kinds: Vec<LayerKind> = s.layers().iter().map(|l| l.kind()).collect();
        assert_eq!(s.count(LayerKind::Convolution), 5);
        assert_eq!(s.count(LayerKind::MaxPool), 3);
        assert_eq!(s.count(LayerKind::InnerProduct), 3);
        assert_eq!(s.count(LayerKind::Dropout), 2);
        // Pools follow convolutions 1, 2 and 5 (with their relu in between).
        let mut conv_seen = 0;
        let mut pools_after = vec![];
        for k in &kinds {
            match k {
                LayerKind::Convolution => conv_seen += 1,
                LayerKind::MaxPool => pools_after.push(conv_seen),
                _ => {}
            }
        }
        assert_eq!(pools_after, vec![1, 2, 5]);
        assert_eq!(s.output_shape(), &[1000]);
        assert_eq!(s.shape_before(0), &[3, 224, 224]);
        assert_eq!(s.shape_before(1), &[96, 224, 224]);
    }

    #[test]
    fn alexnet_scaled() {
        let s = build_alexnet_mini([1, 64, 64], 2, 1.0 / 16.0).unwrap();
        assert_eq!(s.count(LayerKind::Dropout), 2);
        assert_eq!(s.shape_before(1), &[8, 64, 64]);
        assert_eq!(s.shape_before(4), &[16, 32, 32]);
        assert_eq!(s.shape_before(13), &[16, 8, 8]);
        assert_eq!(s.shape_before(14), &[256]);
        assert!(matches!(
            build_alexnet_mini([1, 64, 64], 2, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(build_alexnet_mini([1, 64, 64], 2, 1.5).is_err());
        assert!(build_alexnet_mini([1, 4, 4], 2, 0.5).is_err());
    }

    #[test]
    fn mismatched_class_count() {
        let e = NetworkSpec::new([1, 4, 4], vec![LayerSpec::InnerProduct { units: 3 }], 2);
        assert!(e.is_err());
        let e = NetworkSpec::new([1, 4, 4], vec![LayerSpec::Softmax, LayerSpec::Relu], 2);
        assert!(e.is_err());
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let e = NetworkSpec::new([1, 6, 6], vec![LayerSpec::Relu, LayerSpec::conv(2, 3, 2, 0)], 2)
            .unwrap_err()
            .to_string();
        assert!(e.contains("layer 1"), "{e}");
    }
}
