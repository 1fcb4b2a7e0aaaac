use crate::registry::{LayerBuilder, LayerConfig, ParamSpec, ShapeError, TensorDecl};
use crate::shape::{TensorKind, TensorShape};
use crate::value::{Params, ScalarKind};

fn positive(op: &str, params: &Params, name: &str) -> Result<usize, ShapeError> {
    match params.int(name) {
        Some(v) if v >= 1 => Ok(v as usize),
        Some(v) => Err(ShapeError::new(op, format!("{name} must be >= 1, got {v}"))),
        None => Err(ShapeError::new(
            op,
            format!("missing integer parameter {name}"),
        )),
    }
}

fn sequence_input(op: &str, input: &TensorShape) -> Result<(usize, usize), ShapeError> {
    input
        .channels_length()
        .ok_or_else(|| ShapeError::new(op, format!("expects a channelled sequence, got {input}")))
}

fn shape(op: &str, dims: Vec<usize>) -> Result<TensorShape, ShapeError> {
    TensorShape::new(dims).map_err(|e| ShapeError::new(op, e.to_string()))
}

/// Fully connected layer, `y = W x + b`. Mandatory `width`.
#[derive(Debug, Clone, Copy)]
pub struct Linear;

impl Linear {
    fn build(input: &TensorShape, width: usize) -> Result<LayerConfig, ShapeError> {
        let [features] = input.dims() else {
            return Err(ShapeError::new(
                "linear",
                format!("expects a flat vector, got {input}"),
            ));
        };
        let mut layer = LayerConfig::new("linear", input.clone(), shape("linear", vec![width])?);
        layer.params.set("width", width as i64);
        layer.tensors = vec![
            TensorDecl::new("weight", vec![width, *features]),
            TensorDecl::new("bias", vec![width]),
        ];
        layer.macs = (*features * width) as u64;
        Ok(layer)
    }
}

impl LayerBuilder for Linear {
    fn params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::required("width", ScalarKind::Int)]
    }

    fn input_kind(&self) -> Option<TensorKind> {
        Some(TensorKind::FlatVector)
    }

    fn head_capable(&self) -> bool {
        true
    }

    fn build_layer(&self, input: &TensorShape, params: &Params) -> Result<LayerConfig, ShapeError> {
        Self::build(input, positive("linear", params, "width")?)
    }

    /// The sampled `width` is ignored; the layer emits exactly `output`.
    fn build_last(
        &self,
        input: &TensorShape,
        _params: &Params,
        output: &TensorShape,
    ) -> Result<LayerConfig, ShapeError> {
        match output.dims() {
            [width] => Self::build(input, *width),
            _ => Err(ShapeError::new(
                "linear",
                format!("cannot produce non-flat output {output}"),
            )),
        }
    }
}

/// Valid 1-D cross-correlation over `[channels, length]` inputs.
///
/// Mandatory `kernel_size` and `out_channels`; optional `stride` (1) and
/// zero `padding` (0). Output length is `(L + 2p - k) / s + 1`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d;

impl LayerBuilder for Conv1d {
    fn params(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::required("kernel_size", ScalarKind::Int),
            ParamSpec::required("out_channels", ScalarKind::Int),
            ParamSpec::optional("stride", 1i64),
            ParamSpec::optional("padding", 0i64),
        ]
    }

    fn input_kind(&self) -> Option<TensorKind> {
        Some(TensorKind::ChannelledSequence)
    }

    fn build_layer(&self, input: &TensorShape, params: &Params) -> Result<LayerConfig, ShapeError> {
        let (channels, length) = sequence_input("conv1d", input)?;
        let kernel = positive("conv1d", params, "kernel_size")?;
        let out_channels = positive("conv1d", params, "out_channels")?;
        let stride = positive("conv1d", params, "stride").unwrap_or(1);
        let padding = match params.int("padding") {
            None => 0,
            Some(p) if p >= 0 => p as usize,
            Some(p) => return Err(ShapeError::new("conv1d", format!("negative padding {p}"))),
        };
        let padded = length + 2 * padding;
        if kernel > padded {
            return Err(ShapeError::new(
                "conv1d",
                format!("kernel {kernel} exceeds padded length {padded}"),
            ));
        }
        let out_len = (padded - kernel) / stride + 1;
        let mut layer = LayerConfig::new(
            "conv1d",
            input.clone(),
            shape("conv1d", vec![out_channels, out_len])?,
        );
        layer.params.set("kernel_size", kernel as i64);
        layer.params.set("out_channels", out_channels as i64);
        layer.params.set("stride", stride as i64);
        layer.params.set("padding", padding as i64);
        layer.tensors = vec![
            TensorDecl::new("weight", vec![out_channels, channels, kernel]),
            TensorDecl::new("bias", vec![out_channels]),
        ];
        layer.macs = (out_channels * out_len * channels * kernel) as u64;
        Ok(layer)
    }
}

/// Windowed max over the length axis. `kernel_size` defaults to 2 and
/// `stride` to the kernel size.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool;

impl LayerBuilder for MaxPool {
    fn params(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::optional("kernel_size", 2i64),
            ParamSpec::derived("stride", ScalarKind::Int),
        ]
    }

    fn input_kind(&self) -> Option<TensorKind> {
        Some(TensorKind::ChannelledSequence)
    }

    fn build_layer(&self, input: &TensorShape, params: &Params) -> Result<LayerConfig, ShapeError> {
        let (channels, length) = sequence_input("maxpool", input)?;
        let kernel = positive("maxpool", params, "kernel_size").unwrap_or(2);
        let stride = if params.get("stride").is_some() {
            positive("maxpool", params, "stride")?
        } else {
            kernel
        };
        if kernel > length {
            return Err(ShapeError::new(
                "maxpool",
                format!("kernel {kernel} exceeds length {length}"),
            ));
        }
        let out_len = (length - kernel) / stride + 1;
        let mut layer = LayerConfig::new(
            "maxpool",
            input.clone(),
            shape("maxpool", vec![channels, out_len])?,
        );
        layer.params.set("kernel_size", kernel as i64);
        layer.params.set("stride", stride as i64);
        Ok(layer)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl LayerBuilder for Identity {
    fn params(&self) -> Vec<ParamSpec> {
        Vec::new()
    }

    fn build_layer(&self, input: &TensorShape, _: &Params) -> Result<LayerConfig, ShapeError> {
        Ok(LayerConfig::new("identity", input.clone(), input.clone()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Relu;

impl LayerBuilder for Relu {
    fn params(&self) -> Vec<ParamSpec> {
        Vec::new()
    }

    fn build_layer(&self, input: &TensorShape, _: &Params) -> Result<LayerConfig, ShapeError> {
        Ok(LayerConfig::new("relu", input.clone(), input.clone()))
    }
}

/// Row-major reshape of any tensor to a flat vector.
#[derive(Debug, Clone, Copy)]
pub struct Flatten;

impl LayerBuilder for Flatten {
    fn params(&self) -> Vec<ParamSpec> {
        Vec::new()
    }

    fn build_layer(&self, input: &TensorShape, _: &Params) -> Result<LayerConfig, ShapeError> {
        Ok(LayerConfig::new(
            "flatten",
            input.clone(),
            shape("flatten", vec![input.numel()])?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::LayerRole;

    fn seq(c: usize, l: usize) -> TensorShape {
        TensorShape::sequence(c, l).unwrap()
    }

    fn params(pairs: &[(&str, i64)]) -> Params {
        pairs.iter().map(|(k, v)| (*k, *v)).collect()
    }

    #[test]
    fn conv1d_unpadded_shrinks_length() {
        let l = Conv1d
            .build_layer(
                &seq(4, 1250),
                &params(&[("kernel_size", 3), ("out_channels", 8)]),
            )
            .unwrap();
        assert_eq!(l.output, seq(8, 1248));
        assert_eq!(l.param_count(), 8 * 4 * 3 + 8);
        assert_eq!(l.macs, 119_808);
        assert_eq!(l.params.int("stride"), Some(1));
        assert_eq!(l.params.int("padding"), Some(0));
        assert_eq!(l.role, LayerRole::Sampled);
    }

    #[test]
    fn conv1d_stride_and_padding() {
        let l = Conv1d
            .build_layer(
                &seq(2, 10),
                &params(&[
                    ("kernel_size", 3),
                    ("out_channels", 1),
                    ("stride", 2),
                    ("padding", 1),
                ]),
            )
            .unwrap();
        // (10 + 2 - 3) / 2 + 1
        assert_eq!(l.output, seq(1, 5));
    }

    #[test]
    fn conv1d_kernel_longer_than_input() {
        let err = Conv1d
            .build_layer(
                &seq(1, 3),
                &params(&[("kernel_size", 5), ("out_channels", 8)]),
            )
            .unwrap_err();
        assert_eq!(err.op, "conv1d");
    }

    #[test]
    fn maxpool_defaults() {
        let l = MaxPool.build_layer(&seq(8, 1248), &Params::new()).unwrap();
        assert_eq!(l.output, seq(8, 624));
        assert_eq!(l.params.int("kernel_size"), Some(2));
        assert_eq!(l.params.int("stride"), Some(2));
        let odd = MaxPool
            .build_layer(&seq(3, 7), &params(&[("kernel_size", 3)]))
            .unwrap();
        assert_eq!(odd.output, seq(3, 2));
        assert!(MaxPool.build_layer(&seq(1, 1), &Params::new()).is_err());
    }

    #[test]
    fn linear_last_layer_ignores_width() {
        let input = TensorShape::flat(4992).unwrap();
        let out = TensorShape::flat(6).unwrap();
        for width in [32, 64, 128] {
            let l = Linear
                .build_last(&input, &params(&[("width", width)]), &out)
                .unwrap();
            assert_eq!(l.output, out);
            assert_eq!(l.params.int("width"), Some(6));
            assert_eq!(l.tensors[0].shape, vec![6, 4992]);
            assert_eq!(l.param_count(), 29_958);
            assert_eq!(l.macs, 29_952);
        }
    }

    #[test]
    fn linear_rejects_sequences() {
        assert!(Linear
            .build_layer(&seq(2, 2), &params(&[("width", 3)]))
            .is_err());
    }

    #[test]
    fn default_build_last_requires_exact_output() {
        let s = TensorShape::flat(10).unwrap();
        assert!(Relu.build_last(&s, &Params::new(), &s).is_ok());
        assert!(Relu
            .build_last(&s, &Params::new(), &TensorShape::flat(6).unwrap())
            .is_err());
    }

    #[test]
    fn flatten_preserves_element_count() {
        let l = Flatten.build_layer(&seq(8, 624), &Params::new()).unwrap();
        assert_eq!(l.output.dims(), &[4992]);
        let flat = TensorShape::flat(7).unwrap();
        assert_eq!(
            Flatten.build_layer(&flat, &Params::new()).unwrap().output,
            flat
        );
    }
}
