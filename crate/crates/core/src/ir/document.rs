//! JSON documents for blueprints and cross-modal blueprints.
//!
//! Serialization is canonical: object keys are sorted (serde_json's default
//! map is ordered) and nodes are emitted in the graph's canonical
//! topological order, so equal values always produce identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    Blueprint, CrossConnection, IrError, LayerKind, LayerSpec, Result, Shape3, XBlueprint,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    kind: String,
    #[serde(default)]
    params: serde_json::Value,
    inputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlueprintDoc {
    format_version: u32,
    input_shape: Shape3,
    nodes: Vec<NodeDoc>,
    output: String,
    #[serde(default)]
    classifier_boundary: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct XBlueprintDoc {
    format_version: u32,
    modality_order: Vec<String>,
    superlayers: BTreeMap<String, BlueprintDoc>,
    insertion_points: Vec<String>,
    connections: Vec<CrossConnection>,
    classifier: BlueprintDoc,
}

fn decode<T: serde::de::DeserializeOwned>(document: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(document);
    serde_path_to_error::deserialize(de).map_err(|e| IrError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn encode<T: Serialize>(doc: &T) -> String {
    // Going through Value sorts every object's keys.
    let value = serde_json::to_value(doc).expect("documents are plain data");
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(IrError::UnsupportedVersion(v));
    }
    Ok(())
}

impl BlueprintDoc {
    fn from_blueprint(b: &Blueprint) -> Self {
        BlueprintDoc {
            format_version: FORMAT_VERSION,
            input_shape: b.input_shape(),
            nodes: b
                .nodes()
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    kind: n.kind.name().to_string(),
                    params: n.kind.params_value(),
                    inputs: n.inputs.clone(),
                })
                .collect(),
            output: b.output_id().to_string(),
            classifier_boundary: b.classifier_boundary().map(str::to_string),
        }
    }

    fn into_blueprint(self, prefix: &str) -> Result<Blueprint> {
        check_version(self.format_version)?;
        let nodes = self
            .nodes
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let kind = LayerKind::from_parts(
                    &n.kind,
                    n.params,
                    &format!("{prefix}nodes[{i}].params"),
                )?;
                Ok(LayerSpec {
                    id: n.id,
                    kind,
                    inputs: n.inputs,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Blueprint::new(
            self.input_shape,
            nodes,
            &self.output,
            self.classifier_boundary,
        )
    }
}

/// Parses and validates a blueprint document.
pub fn parse_blueprint(document: &str) -> Result<Blueprint> {
    decode::<BlueprintDoc>(document)?.into_blueprint("")
}

/// Parses and validates a cross-modal blueprint document.
pub fn parse_xblueprint(document: &str) -> Result<XBlueprint> {
    let doc: XBlueprintDoc = decode(document)?;
    check_version(doc.format_version)?;
    let superlayers = doc
        .superlayers
        .into_iter()
        .map(|(m, d)| {
            let b = d.into_blueprint(&format!("superlayers.{m}."))?;
            Ok((m, b))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let classifier = doc.classifier.into_blueprint("classifier.")?;
    XBlueprint::new(
        doc.modality_order,
        superlayers,
        doc.insertion_points,
        doc.connections,
        classifier,
    )
}

impl Blueprint {
    pub fn from_json(document: &str) -> Result<Blueprint> {
        parse_blueprint(document)
    }

    /// Canonical document; byte-identical for equal blueprints.
    pub fn to_json(&self) -> String {
        encode(&BlueprintDoc::from_blueprint(self))
    }
}

impl XBlueprint {
    pub fn from_json(document: &str) -> Result<XBlueprint> {
        parse_xblueprint(document)
    }

    pub fn to_json(&self) -> String {
        encode(&XBlueprintDoc {
            format_version: FORMAT_VERSION,
            modality_order: self.modality_order().to_vec(),
            superlayers: self
                .superlayers()
                .iter()
                .map(|(m, b)| (m.clone(), BlueprintDoc::from_blueprint(b)))
                .collect(),
            insertion_points: self.insertion_points().to_vec(),
            connections: self.connections().to_vec(),
            classifier: BlueprintDoc::from_blueprint(self.classifier()),
        })
    }
}
