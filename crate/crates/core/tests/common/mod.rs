//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use xmodal::engine::{Scalar, Tensor};
use xmodal::ir::{
    batchnorm, dense, dropout, Activation, Blueprint, ConvParams, GlobalPoolParams, LayerKind,
    LayerSpec, Padding, PoolMode, PoolParams, Shape3, INPUT_ID,
};

/// Touches every layer kind: strided conv, batchnorm, add, both pools,
/// concat, flatten, global pool, dropout and dense.
pub fn every_kind() -> Blueprint {
    let strided = LayerKind::Conv(ConvParams {
        kernel_count: 2,
        kernel_hw: (3, 3),
        stride: (2, 2),
        padding: Padding::Same,
        activation: Activation::Relu,
    });
    let linear_1x1 = LayerKind::Conv(ConvParams {
        kernel_count: 4,
        kernel_hw: (1, 1),
        stride: (1, 1),
        padding: Padding::Same,
        activation: Activation::None,
    });
    let avg = LayerKind::Pool(PoolParams {
        window: (2, 2),
        stride: (2, 2),
        mode: PoolMode::Avg,
    });
    let nodes = vec![
        LayerSpec::new("c1", xmodal::ir::conv(4, 3, 3, Padding::Same), &[INPUT_ID]),
        LayerSpec::new("bn1", batchnorm(), &["c1"]),
        LayerSpec::new("r1", LayerKind::Relu, &["bn1"]),
        LayerSpec::new("c3", linear_1x1, &["r1"]),
        LayerSpec::new("add1", LayerKind::Add, &["c3", "c1"]),
        LayerSpec::new("p1", xmodal::ir::max_pool(2), &["add1"]),
        LayerSpec::new("p2", avg, &["c1"]),
        LayerSpec::new("cs", strided, &[INPUT_ID]),
        LayerSpec::new("cat", LayerKind::Concat, &["p1", "p2", "cs"]),
        LayerSpec::new("flat", LayerKind::Flatten, &["cat"]),
        LayerSpec::new(
            "gp",
            LayerKind::GlobalPool(GlobalPoolParams {
                mode: PoolMode::Avg,
            }),
            &["cat"],
        ),
        LayerSpec::new("head", LayerKind::Concat, &["flat", "gp"]),
        LayerSpec::new("d1", dense(5, Activation::Relu), &["head"]),
        LayerSpec::new("drop", dropout(0.3), &["d1"]),
        LayerSpec::new("out", dense(3, Activation::None), &["drop"]),
    ];
    Blueprint::new(Shape3::new(6, 6, 2), nodes, "out", None).unwrap()
}

pub fn gaussian<T: Scalar>(shape: Vec<usize>, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(v)
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// A random valid blueprint together with its parameter count, tallied one
/// parameter at a time while the graph is generated.
pub struct RandomBlueprint {
    pub blueprint: Blueprint,
    pub enumerated_parameters: usize,
}

struct Builder {
    nodes: Vec<LayerSpec>,
    count: usize,
    params: usize,
}

impl Builder {
    fn push(&mut self, kind: LayerKind, inputs: &[&str]) -> String {
        self.count += 1;
        let id = format!("{}{}", kind.name(), self.count);
        self.nodes.push(LayerSpec::new(id.clone(), kind, inputs));
        id
    }

    fn conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        from: &str,
        s: Shape3,
        cout: usize,
    ) -> (String, Shape3) {
        let k = rng.random_range(1..=3usize.min(s.h).min(s.w));
        let stride = if s.h >= 4 && s.w >= 4 && rng.random_bool(0.2) {
            2
        } else {
            1
        };
        let padding = if rng.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let out = match padding {
            Padding::Same => Shape3::new(s.h.div_ceil(stride), s.w.div_ceil(stride), cout),
            Padding::Valid => Shape3::new((s.h - k) / stride + 1, (s.w - k) / stride + 1, cout),
        };
        for _kh in 0..k {
            for _kw in 0..k {
                for _ci in 0..s.c {
                    for _co in 0..cout {
                        self.params += 1;
                    }
                }
            }
        }
        for _co in 0..cout {
            self.params += 1;
        }
        let activation = if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::None
        };
        let id = self.push(
            LayerKind::Conv(ConvParams {
                kernel_count: cout,
                kernel_hw: (k, k),
                stride: (stride, stride),
                padding,
                activation,
            }),
            &[from],
        );
        (id, out)
    }

    fn dense(&mut self, from: &str, fin: usize, units: usize, activation: Activation) -> String {
        for _i in 0..fin {
            for _o in 0..units {
                self.params += 1;
            }
        }
        for _o in 0..units {
            self.params += 1;
        }
        self.push(dense(units, activation), &[from])
    }
}

/// Chains of conv, pool, batchnorm, relu and dropout with occasional
/// residual adds and concat branches, then flatten or global pooling and a
/// dense head.
pub fn random_blueprint(seed: u64) -> RandomBlueprint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Shape3::new(
        rng.random_range(3..=10),
        rng.random_range(3..=10),
        rng.random_range(1..=4),
    );
    let mut b = Builder {
        nodes: Vec::new(),
        count: 0,
        params: 0,
    };
    let mut cur = INPUT_ID.to_string();
    let mut shape = input;
    for _ in 0..rng.random_range(1..=7) {
        match rng.random_range(0..7) {
            0 | 1 => {
                let cout = rng.random_range(1..=6);
                (cur, shape) = b.conv(&mut rng, &cur, shape, cout);
            }
            2 if shape.h >= 2 && shape.w >= 2 => {
                let mode = if rng.random_bool(0.5) {
                    PoolMode::Max
                } else {
                    PoolMode::Avg
                };
                cur = b.push(
                    LayerKind::Pool(PoolParams {
                        window: (2, 2),
                        stride: (2, 2),
                        mode,
                    }),
                    &[&cur],
                );
                shape = Shape3::new(shape.h / 2, shape.w / 2, shape.c);
            }
            3 => {
                b.params += 2 * shape.c;
                cur = b.push(batchnorm(), &[&cur]);
            }
            4 => {
                cur = if rng.random_bool(0.5) {
                    b.push(LayerKind::Relu, &[&cur])
                } else {
                    b.push(dropout(0.25), &[&cur])
                };
            }
            5 => {
                // residual: same-padded unit-stride conv back to this width
                let branch = b.push(
                    LayerKind::Conv(ConvParams {
                        kernel_count: shape.c,
                        kernel_hw: (1, 1),
                        stride: (1, 1),
                        padding: Padding::Same,
                        activation: Activation::Relu,
                    }),
                    &[&cur],
                );
                b.params += shape.c * shape.c + shape.c;
                cur = b.push(LayerKind::Add, &[&cur, &branch]);
            }
            _ => {
                let cout = rng.random_range(1..=4);
                let branch = b.push(
                    LayerKind::Conv(ConvParams {
                        kernel_count: cout,
                        kernel_hw: (1, 1),
                        stride: (1, 1),
                        padding: Padding::Same,
                        activation: Activation::None,
                    }),
                    &[&cur],
                );
                b.params += shape.c * cout + cout;
                cur = b.push(LayerKind::Concat, &[&cur, &branch]);
                shape = Shape3::new(shape.h, shape.w, shape.c + cout);
            }
        }
    }
    let fin = if rng.random_bool(0.5) {
        cur = b.push(LayerKind::Flatten, &[&cur]);
        shape.len()
    } else {
        cur = b.push(
            LayerKind::GlobalPool(GlobalPoolParams {
                mode: PoolMode::Avg,
            }),
            &[&cur],
        );
        shape.c
    };
    let classes = rng.random_range(2..=10);
    if rng.random_bool(0.5) {
        let hidden = rng.random_range(2..=16);
        cur = b.dense(&cur, fin, hidden, Activation::Relu);
        cur = b.dense(&cur, hidden, classes, Activation::None);
    } else {
        cur = b.dense(&cur, fin, classes, Activation::None);
    }
    RandomBlueprint {
        blueprint: Blueprint::new(input, b.nodes, &cur, None).unwrap(),
        enumerated_parameters: b.params,
    }
}
