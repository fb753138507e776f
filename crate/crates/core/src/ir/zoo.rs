//! Reference blueprints used by tests, examples and the default configs.

use super::{
    conv, dense, dropout, max_pool, Activation, Blueprint, LayerKind, LayerSpec, Padding, Shape3,
    INPUT_ID,
};

/// KerasNet-style CIFAR network: two conv-conv-pool-dropout blocks, then
/// flatten, dense(512), dropout, dense(classes). Boundary marked at `flatten`.
pub fn kerasnet(input: Shape3, classes: usize) -> Blueprint {
    let nodes = vec![
        LayerSpec::new("conv1", conv(32, 3, 3, Padding::Same), &[INPUT_ID]),
        LayerSpec::new("conv2", conv(32, 3, 3, Padding::Same), &["conv1"]),
        LayerSpec::new("pool1", max_pool(2), &["conv2"]),
        LayerSpec::new("drop1", dropout(0.25), &["pool1"]),
        LayerSpec::new("conv3", conv(64, 3, 3, Padding::Same), &["drop1"]),
        LayerSpec::new("conv4", conv(64, 3, 3, Padding::Same), &["conv3"]),
        LayerSpec::new("pool2", max_pool(2), &["conv4"]),
        LayerSpec::new("drop2", dropout(0.25), &["pool2"]),
        LayerSpec::new("flatten", LayerKind::Flatten, &["drop2"]),
        LayerSpec::new("dense1", dense(512, Activation::Relu), &["flatten"]),
        LayerSpec::new("drop3", dropout(0.5), &["dense1"]),
        LayerSpec::new("dense2", dense(classes, Activation::None), &["drop3"]),
    ];
    Blueprint::new(input, nodes, "dense2", Some("flatten".into())).expect("valid fixture")
}

/// Small two-block CNN sized for desk-scale training; boundary left unmarked.
pub fn desk_cnn(input: Shape3, classes: usize) -> Blueprint {
    let nodes = vec![
        LayerSpec::new("conv1", conv(16, 3, 3, Padding::Same), &[INPUT_ID]),
        LayerSpec::new("pool1", max_pool(2), &["conv1"]),
        LayerSpec::new("conv2", conv(32, 3, 3, Padding::Same), &["pool1"]),
        LayerSpec::new("pool2", max_pool(2), &["conv2"]),
        LayerSpec::new("flatten", LayerKind::Flatten, &["pool2"]),
        LayerSpec::new("dense1", dense(64, Activation::Relu), &["flatten"]),
        LayerSpec::new("dense2", dense(classes, Activation::None), &["dense1"]),
    ];
    Blueprint::new(input, nodes, "dense2", None).expect("valid fixture")
}

/// conv -> conv -> add(skip) -> pool -> flatten -> dense over 8x8x3.
pub fn residual_fragment() -> Blueprint {
    let nodes = vec![
        LayerSpec::new("conv1", conv(8, 3, 3, Padding::Same), &[INPUT_ID]),
        LayerSpec::new("conv2", conv(8, 3, 3, Padding::Same), &["conv1"]),
        LayerSpec::new("add1", LayerKind::Add, &["conv1", "conv2"]),
        LayerSpec::new("pool1", max_pool(2), &["add1"]),
        LayerSpec::new("flatten", LayerKind::Flatten, &["pool1"]),
        LayerSpec::new("dense1", dense(10, Activation::None), &["flatten"]),
    ];
    Blueprint::new(Shape3::new(8, 8, 3), nodes, "dense1", None).expect("valid fixture")
}
