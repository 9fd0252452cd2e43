//! Small CNN substrate: layer descriptors, the model graph with residual
//! add-junctions, forward inference, loss gradients and the on-disk container.

mod forward;
mod grad;
mod io;
pub mod kernels;

pub use forward::{conv2d_forward, evaluate_accuracy, fc_forward, model_forward, LayerActivations};
pub use grad::{loss_gradients, loss_gradients_f64, mean_cross_entropy_f64};
pub use io::{load_model, save_model};

use serde::{Deserialize, Serialize};

use crate::compress::quant::ActivationQuant;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvGeometry;

/// Bits per parameter of the dense floating-point model.
pub const DENSE_PARAM_BITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// Shape description of a prunable layer.
///
/// For fully-connected layers `in_channels` is `M` (input features) and
/// `out_channels` is `N` (output features); the weight matrix is `N x M`.
/// `in_height`/`in_width` describe the feature map the layer reads *after*
/// any pooling, so they are `1 x 1` for a classifier behind global pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub index: usize,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

impl LayerDescriptor {
    pub fn conv(
        index: usize,
        in_channels: usize,
        out_channels: usize,
        in_hw: (usize, usize),
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerDescriptor {
            index,
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            in_height: in_hw.0,
            in_width: in_hw.1,
            kernel,
            stride,
            padding,
        }
    }

    pub fn fc(index: usize, in_features: usize, out_features: usize) -> Self {
        LayerDescriptor {
            index,
            kind: LayerKind::Fc,
            in_channels: in_features,
            out_channels: out_features,
            in_height: 1,
            in_width: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            in_channels: self.in_channels,
            in_height: self.in_height,
            in_width: self.in_width,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn out_height(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.geometry().out_height(),
            LayerKind::Fc => 1,
        }
    }

    pub fn out_width(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.geometry().out_width(),
            LayerKind::Fc => 1,
        }
    }

    /// Weight parameter count `P_t`.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.out_channels * self.in_channels * self.kernel * self.kernel,
            LayerKind::Fc => self.out_channels * self.in_channels,
        }
    }

    /// Memory size `M_t` in bits of the dense float model.
    pub fn memory_bits(&self) -> usize {
        self.param_count() * DENSE_PARAM_BITS
    }

    /// Weights belonging to one output unit (filter or matrix row).
    pub fn unit_len(&self) -> usize {
        self.param_count() / self.out_channels
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::Fc => vec![self.out_channels, self.in_channels],
        }
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.in_channels, self.in_height, self.in_width],
            LayerKind::Fc => vec![self.in_channels],
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv => vec![self.out_channels, self.out_height(), self.out_width()],
            LayerKind::Fc => vec![self.out_channels],
        }
    }

    pub fn macs(&self) -> usize {
        self.param_count() * self.out_height() * self.out_width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "from", content = "layer")]
pub enum Source {
    Input,
    Layer(usize),
}

/// How a fully-connected layer consumes a spatial feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    #[default]
    Identity,
    GlobalAvgPool,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub desc: LayerDescriptor,
    pub source: Source,
    pub transform: InputTransform,
    pub relu: bool,
    /// Conv: `(C_o, C_in, k, k)`; fc: `(N, M)`.
    pub weights: Tensor,
    pub bias: Tensor,
    /// Structurally removed output units (filters or rows). They emit zero,
    /// bias included.
    pub dead_outputs: Option<Vec<bool>>,
    /// Fake quantization applied to this layer's input.
    pub input_quant: Option<ActivationQuant>,
}

impl Layer {
    pub fn new(
        desc: LayerDescriptor,
        source: Source,
        transform: InputTransform,
        relu: bool,
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        if weights.shape() != desc.weight_shape().as_slice() {
            return Err(Error::Shape(format!(
                "layer {}: weights {:?}, descriptor expects {:?}",
                desc.index,
                weights.shape(),
                desc.weight_shape()
            )));
        }
        if bias.shape() != [desc.out_channels] {
            return Err(Error::Shape(format!(
                "layer {}: bias {:?}, expected [{}]",
                desc.index,
                bias.shape(),
                desc.out_channels
            )));
        }
        Ok(Layer {
            desc,
            source,
            transform,
            relu,
            weights,
            bias,
            dead_outputs: None,
            input_quant: None,
        })
    }

    pub fn is_dead(&self, unit: usize) -> bool {
        self.dead_outputs.as_ref().is_some_and(|d| d[unit])
    }
}

/// Residual add: the producer's output is added to the consumer's
/// pre-activation output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Junction {
    pub producer: usize,
    pub consumer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub junctions: Vec<Junction>,
    pub num_classes: usize,
}

impl ModelGraph {
    /// Builds and validates a graph. Layer `i` may only read from the network
    /// input or from layers `< i`, so index order is a topological order.
    pub fn new(
        input_shape: [usize; 3],
        layers: Vec<Layer>,
        junctions: Vec<Junction>,
    ) -> Result<Self> {
        let num_classes = layers
            .last()
            .map(|l| l.desc.out_channels)
            .ok_or_else(|| Error::Graph("model has no layers".into()))?;
        let g = ModelGraph {
            input_shape,
            layers,
            junctions,
            num_classes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn descriptors(&self) -> Vec<LayerDescriptor> {
        self.layers.iter().map(|l| l.desc).collect()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.desc.param_count()).sum()
    }

    /// Junction whose consumer is `layer`, if any.
    pub fn junction_into(&self, layer: usize) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.consumer == layer)
    }

    /// Output shape a source produces.
    pub fn source_shape(&self, src: Source) -> Vec<usize> {
        match src {
            Source::Input => self.input_shape.to_vec(),
            Source::Layer(j) => self.layers[j].desc.output_shape(),
        }
    }

    /// Layers reading the output of `layer`.
    pub fn readers_of(&self, layer: usize) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.source == Source::Layer(layer))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.desc.index != i {
                return Err(Error::Graph(format!(
                    "layer at position {i} has index {}",
                    l.desc.index
                )));
            }
            if l.desc.stride == 0 || l.desc.kernel == 0 {
                return Err(Error::Graph(format!("layer {i}: stride and kernel must be >= 1")));
            }
            if let Source::Layer(j) = l.source {
                if j >= i {
                    return Err(Error::Graph(format!(
                        "layer {i} reads layer {j}, which is not earlier in index order"
                    )));
                }
            }
            let src_shape = self.source_shape(l.source);
            let fed = match (l.desc.kind, l.transform) {
                (LayerKind::Conv, InputTransform::Identity) => src_shape.clone(),
                (LayerKind::Conv, _) => {
                    return Err(Error::Graph(format!("conv layer {i} cannot pool its input")))
                }
                (LayerKind::Fc, InputTransform::GlobalAvgPool) => vec![src_shape[0]],
                (LayerKind::Fc, _) => vec![src_shape.iter().product()],
            };
            if fed != l.desc.input_shape() {
                return Err(Error::Shape(format!(
                    "layer {i} expects input {:?}, source provides {:?}",
                    l.desc.input_shape(),
                    fed
                )));
            }
            if l.desc.kind == LayerKind::Conv
                && (l.desc.in_height + 2 * l.desc.padding < l.desc.kernel
                    || l.desc.in_width + 2 * l.desc.padding < l.desc.kernel)
            {
                return Err(Error::Shape(format!("layer {i}: kernel larger than padded input")));
            }
        }
        for j in &self.junctions {
            if j.producer >= j.consumer || j.consumer >= self.layers.len() {
                return Err(Error::Graph(format!(
                    "dangling junction {} -> {}",
                    j.producer, j.consumer
                )));
            }
            let p = self.layers[j.producer].desc.output_shape();
            let c = self.layers[j.consumer].desc.output_shape();
            if p != c {
                return Err(Error::Shape(format!(
                    "junction {} -> {} joins {:?} with {:?}",
                    j.producer, j.consumer, p, c
                )));
            }
            if self
                .junctions
                .iter()
                .filter(|o| o.consumer == j.consumer)
                .count()
                > 1
            {
                return Err(Error::Graph(format!(
                    "layer {} consumes more than one junction",
                    j.consumer
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn conv_layer(desc: LayerDescriptor, source: Source, relu: bool) -> Layer {
        Layer::new(
            desc,
            source,
            InputTransform::Identity,
            relu,
            Tensor::zeros(desc.weight_shape()),
            Tensor::zeros(vec![desc.out_channels]),
        )
        .unwrap()
    }

    #[test]
    fn descriptor_counts() {
        let d = LayerDescriptor::conv(0, 3, 8, (6, 6), 3, 1, 0);
        assert_eq!(d.param_count(), 8 * 3 * 9);
        assert_eq!(d.memory_bits(), 32 * 216);
        assert_eq!(d.output_shape(), vec![8, 4, 4]);
        let f = LayerDescriptor::fc(1, 12, 5);
        assert_eq!(f.param_count(), 60);
        assert_eq!(f.weight_shape(), vec![5, 12]);
    }

    #[test]
    fn junction_shape_mismatch_is_rejected() {
        let a = conv_layer(LayerDescriptor::conv(0, 1, 2, (4, 4), 1, 1, 0), Source::Input, true);
        let b = conv_layer(LayerDescriptor::conv(1, 2, 3, (4, 4), 1, 1, 0), Source::Layer(0), true);
        let err = ModelGraph::new(
            [1, 4, 4],
            vec![a, b],
            vec![Junction {
                producer: 0,
                consumer: 1,
            }],
        );
        assert!(err.is_err());
    }

    #[test]
    fn forward_reference_must_be_earlier() {
        let a = conv_layer(LayerDescriptor::conv(0, 1, 1, (4, 4), 1, 1, 0), Source::Layer(0), true);
        assert!(ModelGraph::new([1, 4, 4], vec![a], vec![]).is_err());
    }

    #[test]
    fn dangling_junction_is_rejected() {
        let a = conv_layer(LayerDescriptor::conv(0, 1, 1, (4, 4), 1, 1, 0), Source::Input, true);
        let err = ModelGraph::new(
            [1, 4, 4],
            vec![a],
            vec![Junction {
                producer: 0,
                consumer: 3,
            }],
        );
        assert!(matches!(err, Err(Error::Graph(_))));
    }
}
