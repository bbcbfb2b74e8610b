//! Declarative layer stacks with shape chaining and parameter accounting.

use super::NnError;

/// Output shape of a layer, batch dimension excluded. Vector activations
/// are (1, 1, n).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn flat(n: usize) -> Self {
        Shape::new(1, 1, n)
    }

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

/// One layer of the vocabulary. Convolutions are stride 1 with zero
/// "same" padding (even kernels pad the trailing edge), so spatial dims
/// are preserved.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Input(Shape),
    Conv2d { filters: usize, kernel: usize },
    Dense { units: usize },
    BatchNorm { momentum: f64 },
    Dropout { rate: f64 },
    LeakyRelu { slope: f64 },
    Relu,
    Tanh,
    Sigmoid,
    UpSample2x,
    Flatten,
    Reshape(Shape),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Input(_) => "Input",
            LayerSpec::Conv2d { .. } => "Conv2D",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::BatchNorm { .. } => "BatchNorm",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::LeakyRelu { .. } => "LeakyReLU",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Tanh => "Tanh",
            LayerSpec::Sigmoid => "Sigmoid",
            LayerSpec::UpSample2x => "UpSample2x",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Reshape(_) => "Reshape",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

fn spec_err(index: usize, layer: &LayerSpec, message: impl Into<String>) -> NnError {
    NnError::Spec {
        index,
        kind: layer.kind().to_string(),
        message: message.into(),
    }
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            name: name.into(),
            layers,
        }
    }

    pub fn input_shape(&self) -> Result<Shape, NnError> {
        match self.layers.first() {
            Some(LayerSpec::Input(s)) => Ok(*s),
            _ => Err(NnError::Spec {
                index: 0,
                kind: "Input".to_string(),
                message: "first layer must be Input".to_string(),
            }),
        }
    }

    /// Per-layer output shapes, validating parameters and the shape
    /// chain. Errors name the offending layer.
    pub fn shapes(&self) -> Result<Vec<Shape>, NnError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape()?;
        for (index, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Input(s) => {
                    if index != 0 {
                        return Err(spec_err(index, layer, "Input only allowed first"));
                    }
                    current = s;
                }
                LayerSpec::Conv2d { filters, kernel } => {
                    if filters == 0 || kernel == 0 {
                        return Err(spec_err(index, layer, "filters and kernel must be >= 1"));
                    }
                    if kernel > current.height || kernel > current.width {
                        return Err(spec_err(
                            index,
                            layer,
                            format!(
                                "kernel {kernel} exceeds spatial dims {}x{}",
                                current.height, current.width
                            ),
                        ));
                    }
                    current = Shape::new(current.height, current.width, filters);
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(spec_err(index, layer, "units must be >= 1"));
                    }
                    if !current.is_flat() {
                        return Err(spec_err(
                            index,
                            layer,
                            format!("expects a flat input, got {current:?}"),
                        ));
                    }
                    current = Shape::flat(units);
                }
                LayerSpec::BatchNorm { momentum } => {
                    if !(0.0..1.0).contains(&momentum) {
                        return Err(spec_err(index, layer, "momentum must be in [0, 1)"));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(spec_err(index, layer, "rate must be in [0, 1)"));
                    }
                }
                LayerSpec::LeakyRelu { slope } => {
                    if !(slope > 0.0) {
                        return Err(spec_err(index, layer, "slope must be > 0"));
                    }
                }
                LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::Sigmoid => {}
                LayerSpec::UpSample2x => {
                    current = Shape::new(current.height * 2, current.width * 2, current.channels);
                }
                LayerSpec::Flatten => {
                    current = Shape::flat(current.numel());
                }
                LayerSpec::Reshape(target) => {
                    if target.numel() != current.numel() {
                        return Err(spec_err(
                            index,
                            layer,
                            format!(
                                "cannot reshape {} elements into {target:?}",
                                current.numel()
                            ),
                        ));
                    }
                    current = target;
                }
            }
            shapes.push(current);
        }
        Ok(shapes)
    }

    /// Trainable-plus-tracked parameter count per layer. BatchNorm counts
    /// scale, shift, running mean and running variance (4 per channel).
    pub fn layer_param_counts(&self) -> Result<Vec<usize>, NnError> {
        let shapes = self.shapes()?;
        let mut counts = Vec::with_capacity(self.layers.len());
        let mut prev = self.input_shape()?;
        for (index, layer) in self.layers.iter().enumerate() {
            let count = match *layer {
                LayerSpec::Conv2d { filters, kernel } => {
                    kernel * kernel * prev.channels * filters + filters
                }
                LayerSpec::Dense { units } => prev.numel() * units + units,
                LayerSpec::BatchNorm { .. } => 4 * prev.channels,
                _ => 0,
            };
            counts.push(count);
            prev = shapes[index];
        }
        Ok(counts)
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.layer_param_counts()?.iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_param_count() {
        let net = NetworkSpec::new(
            "t",
            vec![
                LayerSpec::Input(Shape::new(8, 8, 2)),
                LayerSpec::Conv2d {
                    filters: 8,
                    kernel: 2,
                },
            ],
        );
        assert_eq!(net.param_count().unwrap(), 72);
    }

    #[test]
    fn shape_chain_through_reshape_and_upsample() {
        let net = NetworkSpec::new(
            "t",
            vec![
                LayerSpec::Input(Shape::flat(100)),
                LayerSpec::Dense { units: 64 },
                LayerSpec::Reshape(Shape::new(4, 4, 4)),
                LayerSpec::UpSample2x,
                LayerSpec::Flatten,
            ],
        );
        let shapes = net.shapes().unwrap();
        assert_eq!(shapes[2], Shape::new(4, 4, 4));
        assert_eq!(shapes[3], Shape::new(8, 8, 4));
        assert_eq!(shapes[4], Shape::flat(256));
    }

    #[test]
    fn bad_reshape_names_layer() {
        let net = NetworkSpec::new(
            "t",
            vec![
                LayerSpec::Input(Shape::flat(10)),
                LayerSpec::Reshape(Shape::new(2, 2, 2)),
            ],
        );
        match net.shapes() {
            Err(NnError::Spec { index, kind, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(kind, "Reshape");
            }
            other => panic!("expected spec error, got {other:?}"),
        }
    }

    #[test]
    fn dense_rejects_spatial_input() {
        let net = NetworkSpec::new(
            "t",
            vec![
                LayerSpec::Input(Shape::new(4, 4, 2)),
                LayerSpec::Dense { units: 3 },
            ],
        );
        assert!(matches!(net.shapes(), Err(NnError::Spec { index: 1, .. })));
    }

    #[test]
    fn missing_input_layer_rejected() {
        let net = NetworkSpec::new("t", vec![LayerSpec::Relu]);
        assert!(net.shapes().is_err());
    }
}
