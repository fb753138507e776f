use serde::{Deserialize, Serialize};

use super::{IrError, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

fn unit_stride() -> (usize, usize) {
    (1, 1)
}

fn same_padding() -> Padding {
    Padding::Same
}

fn default_bn_epsilon() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvParams {
    pub kernel_count: usize,
    pub kernel_hw: (usize, usize),
    #[serde(default = "unit_stride")]
    pub stride: (usize, usize),
    #[serde(default = "same_padding")]
    pub padding: Padding,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolParams {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub mode: PoolMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalPoolParams {
    pub mode: PoolMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseParams {
    pub units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutParams {
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormParams {
    #[serde(default = "default_bn_epsilon")]
    pub epsilon: f64,
}

/// Layer kind together with its kind-specific hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv(ConvParams),
    Pool(PoolParams),
    GlobalPool(GlobalPoolParams),
    Dense(DenseParams),
    Dropout(DropoutParams),
    BatchNorm(BatchNormParams),
    Relu,
    Flatten,
    Concat,
    Add,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::Pool(_) => "pool",
            LayerKind::GlobalPool(_) => "global_pool",
            LayerKind::Dense(_) => "dense",
            LayerKind::Dropout(_) => "dropout",
            LayerKind::BatchNorm(_) => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
        }
    }

    pub fn is_merge(&self) -> bool {
        matches!(self, LayerKind::Concat | LayerKind::Add)
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerKind::Pool(_) | LayerKind::GlobalPool(_))
    }

    /// Number of predecessors the kind accepts: `None` means "one or more".
    pub fn arity(&self) -> Option<usize> {
        if self.is_merge() {
            None
        } else {
            Some(1)
        }
    }

    /// The width hyperparameter scaled by super-layer multipliers, if any.
    pub fn width(&self) -> Option<usize> {
        match self {
            LayerKind::Conv(p) => Some(p.kernel_count),
            LayerKind::Dense(p) => Some(p.units),
            _ => None,
        }
    }

    pub fn with_width(&self, width: usize) -> LayerKind {
        match self {
            LayerKind::Conv(p) => LayerKind::Conv(ConvParams {
                kernel_count: width,
                ..p.clone()
            }),
            LayerKind::Dense(p) => LayerKind::Dense(DenseParams {
                units: width,
                ..p.clone()
            }),
            other => other.clone(),
        }
    }

    pub(crate) fn params_value(&self) -> serde_json::Value {
        let v = match self {
            LayerKind::Conv(p) => serde_json::to_value(p),
            LayerKind::Pool(p) => serde_json::to_value(p),
            LayerKind::GlobalPool(p) => serde_json::to_value(p),
            LayerKind::Dense(p) => serde_json::to_value(p),
            LayerKind::Dropout(p) => serde_json::to_value(p),
            LayerKind::BatchNorm(p) => serde_json::to_value(p),
            LayerKind::Relu | LayerKind::Flatten | LayerKind::Concat | LayerKind::Add => {
                return serde_json::Value::Object(Default::default())
            }
        };
        v.expect("layer params are plain data")
    }

    pub(crate) fn from_parts(
        kind: &str,
        params: serde_json::Value,
        path: &str,
    ) -> Result<LayerKind, IrError> {
        fn typed<T: serde::de::DeserializeOwned>(
            params: serde_json::Value,
            path: &str,
        ) -> Result<T, IrError> {
            serde_path_to_error::deserialize(params).map_err(|e| IrError::Schema {
                path: join_path(path, &e.path().to_string()),
                message: e.inner().to_string(),
            })
        }
        let params = match params {
            serde_json::Value::Null => serde_json::Value::Object(Default::default()),
            other => other,
        };
        let kind = match kind {
            "conv" => LayerKind::Conv(typed(params, path)?),
            "pool" => LayerKind::Pool(typed(params, path)?),
            "global_pool" => LayerKind::GlobalPool(typed(params, path)?),
            "dense" => LayerKind::Dense(typed(params, path)?),
            "dropout" => LayerKind::Dropout(typed(params, path)?),
            "batchnorm" => LayerKind::BatchNorm(typed(params, path)?),
            "relu" | "flatten" | "concat" | "add" => {
                let empty = params.as_object().map(|m| m.is_empty()).unwrap_or(false);
                if !empty {
                    return Err(IrError::Schema {
                        path: path.to_string(),
                        message: format!("layer kind `{kind}` takes no params"),
                    });
                }
                match kind {
                    "relu" => LayerKind::Relu,
                    "flatten" => LayerKind::Flatten,
                    "concat" => LayerKind::Concat,
                    _ => LayerKind::Add,
                }
            }
            other => {
                return Err(IrError::Schema {
                    path: path.replace(".params", ".kind"),
                    message: format!("unknown layer kind `{other}`"),
                })
            }
        };
        Ok(kind)
    }

    /// Checks the scalar hyperparameter invariants of the kind.
    pub fn validate(&self, node: &str) -> Result<(), IrError> {
        let bad = |message: String| {
            Err(IrError::InvalidLayer {
                node: node.to_string(),
                message,
            })
        };
        match self {
            LayerKind::Conv(p) => {
                if p.kernel_count < 1 {
                    return bad("conv kernel_count must be >= 1".into());
                }
                if p.kernel_hw.0 < 1 || p.kernel_hw.1 < 1 {
                    return bad("conv kernel_hw must be positive".into());
                }
                if p.stride.0 < 1 || p.stride.1 < 1 {
                    return bad("conv stride must be positive".into());
                }
            }
            LayerKind::Pool(p) => {
                if p.window.0 < 1 || p.window.1 < 1 || p.stride.0 < 1 || p.stride.1 < 1 {
                    return bad("pool window and stride must be positive".into());
                }
            }
            LayerKind::Dense(p) => {
                if p.units < 1 {
                    return bad("dense units must be >= 1".into());
                }
            }
            LayerKind::Dropout(p) => {
                if !(0.0..=1.0).contains(&p.rate) {
                    return bad(format!("dropout rate {} outside [0, 1]", p.rate));
                }
            }
            LayerKind::BatchNorm(p) => {
                if !(p.epsilon > 0.0) {
                    return bad("batchnorm epsilon must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape given the shapes of the predecessors.
    pub fn output_shape(&self, node: &str, inputs: &[Shape3]) -> Result<Shape3, IrError> {
        let shape_err = |message: String| IrError::Shape {
            node: node.to_string(),
            message,
        };
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(shape_err(format!(
                    "{} expects {n} input(s), got {}",
                    self.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(shape_err(format!(
                "{} needs at least one input",
                self.name()
            )));
        }
        let x = inputs[0];
        let out = match self {
            LayerKind::Conv(p) => {
                let (h, w) =
                    conv_output_hw(x, p.kernel_hw, p.stride, p.padding).ok_or_else(|| {
                        shape_err(format!(
                            "conv {}x{} does not fit {}x{} input",
                            p.kernel_hw.0, p.kernel_hw.1, x.h, x.w
                        ))
                    })?;
                Shape3::new(h, w, p.kernel_count)
            }
            LayerKind::Pool(p) => {
                let (h, w) =
                    conv_output_hw(x, p.window, p.stride, Padding::Valid).ok_or_else(|| {
                        shape_err(format!(
                            "pool window {}x{} does not fit {}x{} input",
                            p.window.0, p.window.1, x.h, x.w
                        ))
                    })?;
                Shape3::new(h, w, x.c)
            }
            LayerKind::GlobalPool(_) => Shape3::new(1, 1, x.c),
            LayerKind::Dense(p) => {
                if x.h != 1 || x.w != 1 {
                    return Err(shape_err(format!(
                        "dense needs a flat input, got {x}; insert a flatten"
                    )));
                }
                Shape3::new(1, 1, p.units)
            }
            LayerKind::Dropout(_) | LayerKind::BatchNorm(_) | LayerKind::Relu => x,
            LayerKind::Flatten => Shape3::new(1, 1, x.len()),
            LayerKind::Concat => {
                if let Some(s) = inputs.iter().find(|s| s.h != x.h || s.w != x.w) {
                    return Err(shape_err(format!(
                        "concat needs equal spatial dims, got {x} and {s}"
                    )));
                }
                Shape3::new(x.h, x.w, inputs.iter().map(|s| s.c).sum())
            }
            LayerKind::Add => {
                if let Some(s) = inputs.iter().find(|s| **s != x) {
                    return Err(shape_err(format!(
                        "add needs equal shapes, got {x} and {s}"
                    )));
                }
                x
            }
        };
        Ok(out)
    }

    /// Trainable parameter count given the (single) input shape.
    pub fn parameter_count(&self, input: Shape3) -> usize {
        match self {
            LayerKind::Conv(p) => {
                p.kernel_hw.0 * p.kernel_hw.1 * input.c * p.kernel_count + p.kernel_count
            }
            LayerKind::Dense(p) => input.len() * p.units + p.units,
            LayerKind::BatchNorm(_) => 2 * input.c,
            _ => 0,
        }
    }
}

/// Output spatial size of a sliding window, `None` when it would be non-positive.
pub(crate) fn conv_output_hw(
    x: Shape3,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => Some((x.h.div_ceil(stride.0), x.w.div_ceil(stride.1))),
        Padding::Valid => {
            if x.h < kernel.0 || x.w < kernel.1 {
                None
            } else {
                Some((
                    (x.h - kernel.0) / stride.0 + 1,
                    (x.w - kernel.1) / stride.1 + 1,
                ))
            }
        }
    }
}

fn join_path(prefix: &str, inner: &str) -> String {
    if inner.is_empty() || inner == "." {
        prefix.to_string()
    } else {
        format!("{prefix}.{inner}")
    }
}

/// A node of a blueprint or lowered graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        LayerSpec {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn conv(kernel_count: usize, kh: usize, kw: usize, padding: Padding) -> LayerKind {
    LayerKind::Conv(ConvParams {
        kernel_count,
        kernel_hw: (kh, kw),
        stride: (1, 1),
        padding,
        activation: Activation::Relu,
    })
}

pub fn max_pool(size: usize) -> LayerKind {
    LayerKind::Pool(PoolParams {
        window: (size, size),
        stride: (size, size),
        mode: PoolMode::Max,
    })
}

pub fn dense(units: usize, activation: Activation) -> LayerKind {
    LayerKind::Dense(DenseParams { units, activation })
}

pub fn dropout(rate: f64) -> LayerKind {
    LayerKind::Dropout(DropoutParams { rate })
}

pub fn batchnorm() -> LayerKind {
    LayerKind::BatchNorm(BatchNormParams {
        epsilon: default_bn_epsilon(),
    })
}
