//! Architecture descriptors and their line-oriented text form.
//!
//! ```text
//! input 3x48x48
//! conv 1x1x1 s1 p0 linear
//! conv 5x5x29 s1 p0 relu
//! pool 3x3 s2
//! fc 300
//! softmax 43
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{ConvParams, PoolParams};

/// Non-linearity applied after a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv {
        params: ConvParams,
        activation: Activation,
    },
    /// Max pooling.
    Pool(PoolParams),
    /// Fully connected, followed by ReLU.
    Fc { out_features: usize },
    /// Fully connected to `num_classes` logits, followed by softmax. Must be last.
    Classifier { num_classes: usize },
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            params: ConvParams::new(out_channels, kernel),
            activation: Activation::Relu,
        }
    }

    pub fn is_parametric(&self) -> bool {
        !matches!(self, LayerSpec::Pool(_))
    }
}

/// (channels, height, width) of one batch item.
pub type ItemShape = (usize, usize, usize);

/// Per-layer input/output shapes produced by shape inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: ItemShape,
    pub output: ItemShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    pub input: ItemShape,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// Shape inference. Accepts a spec without a classifier (useful for
    /// accounting) but rejects anything after one, and any spatial layer
    /// after a fully-connected layer.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Spec(format!(
                "input shape {:?} has a zero dimension",
                self.input
            )));
        }
        let mut cur = self.input;
        let mut flat = false;
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let ctx = |e: Error| Error::Spec(format!("layer {}: {e}", idx + 1));
            let next = match layer {
                LayerSpec::Conv { .. } | LayerSpec::Pool(_) if flat => {
                    return Err(Error::Spec(format!(
                        "layer {}: spatial layer after a fully-connected layer",
                        idx + 1
                    )));
                }
                LayerSpec::Conv { params, .. } => {
                    let (oh, ow) = params.output_hw(cur.1, cur.2).map_err(ctx)?;
                    (params.out_channels, oh, ow)
                }
                LayerSpec::Pool(p) => {
                    let (oh, ow) = p.output_hw(cur.1, cur.2).map_err(ctx)?;
                    (cur.0, oh, ow)
                }
                LayerSpec::Fc { out_features: k } | LayerSpec::Classifier { num_classes: k } => {
                    if *k == 0 {
                        return Err(Error::Spec(format!("layer {}: zero output width", idx + 1)));
                    }
                    if matches!(layer, LayerSpec::Classifier { .. }) && idx + 1 != self.layers.len()
                    {
                        return Err(Error::Spec(format!(
                            "layer {}: classifier must be the last layer",
                            idx + 1
                        )));
                    }
                    flat = true;
                    (*k, 1, 1)
                }
            };
            out.push(LayerShape {
                input: cur,
                output: next,
            });
            cur = next;
        }
        Ok(out)
    }

    /// Full type check for a trainable network: shapes chain and exactly one
    /// trailing classifier with at least two classes.
    pub fn validate(&self) -> Result<Vec<LayerShape>> {
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Classifier { num_classes }) if *num_classes >= 2 => Ok(shapes),
            Some(LayerSpec::Classifier { .. }) => {
                Err(Error::Spec("classifier needs at least 2 classes".into()))
            }
            _ => Err(Error::Spec("spec must end with a classifier".into())),
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.layers.last() {
            Some(LayerSpec::Classifier { num_classes }) => Some(*num_classes),
            _ => None,
        }
    }

    /// Stable identifier derived from the text form (FNV-1a, 64 bit).
    pub fn id(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

/// The compact traffic-sign architecture: a 1x1 spectral projection of the
/// three colour channels, three spatial conv/pool stages, two hidden FC
/// layers and a 43-way classifier.
pub fn micronnet_default() -> ArchitectureSpec {
    ArchitectureSpec {
        input: (3, 48, 48),
        layers: vec![
            LayerSpec::Conv {
                params: ConvParams::new(1, 1),
                activation: Activation::Linear,
            },
            LayerSpec::conv(29, 5),
            LayerSpec::Pool(PoolParams::new(3, 2)),
            LayerSpec::conv(59, 3),
            LayerSpec::Pool(PoolParams::new(3, 2)),
            LayerSpec::conv(74, 3),
            LayerSpec::Pool(PoolParams::new(3, 2)),
            LayerSpec::Fc { out_features: 300 },
            LayerSpec::Fc { out_features: 300 },
            LayerSpec::Classifier { num_classes: 43 },
        ],
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, h, w) = self.input;
        writeln!(f, "input {c}x{h}x{w}")?;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { params, activation } => writeln!(
                    f,
                    "conv {}x{}x{} s{} p{} {}",
                    params.kernel.0,
                    params.kernel.1,
                    params.out_channels,
                    params.stride,
                    params.pad,
                    match activation {
                        Activation::Relu => "relu",
                        Activation::Linear => "linear",
                    }
                )?,
                LayerSpec::Pool(p) => {
                    writeln!(f, "pool {}x{} s{} max", p.kernel.0, p.kernel.1, p.stride)?
                }
                LayerSpec::Fc { out_features } => writeln!(f, "fc {out_features}")?,
                LayerSpec::Classifier { num_classes } => writeln!(f, "softmax {num_classes}")?,
            }
        }
        Ok(())
    }
}

fn parse_dims(tok: &str, n: usize, line: usize) -> Result<Vec<usize>> {
    let dims: Vec<usize> = tok
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Spec(format!("line {line}: bad dimensions `{tok}`")))?;
    if dims.len() != n {
        return Err(Error::Spec(format!(
            "line {line}: expected {n} dimensions in `{tok}`"
        )));
    }
    Ok(dims)
}

fn parse_prefixed(tok: &str, prefix: char, line: usize) -> Result<usize> {
    tok.strip_prefix(prefix)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Spec(format!("line {line}: expected {prefix}<n>, got `{tok}`")))
}

fn parse_count(tok: Option<&&str>, line: usize) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Spec(format!("line {line}: expected a width")))
}

impl FromStr for ArchitectureSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = no + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            match toks[0] {
                "input" => {
                    if input.is_some() || !layers.is_empty() {
                        return Err(Error::Spec(format!(
                            "line {line}: `input` must come first, once"
                        )));
                    }
                    let d = parse_dims(toks.get(1).copied().unwrap_or(""), 3, line)?;
                    input = Some((d[0], d[1], d[2]));
                }
                "conv" => {
                    let d = parse_dims(toks.get(1).copied().unwrap_or(""), 3, line)?;
                    let mut params = ConvParams {
                        out_channels: d[2],
                        kernel: (d[0], d[1]),
                        stride: 1,
                        pad: 0,
                    };
                    let mut activation = Activation::Relu;
                    for t in &toks[2..] {
                        match *t {
                            "relu" => activation = Activation::Relu,
                            "linear" => activation = Activation::Linear,
                            t if t.starts_with('s') => {
                                params.stride = parse_prefixed(t, 's', line)?
                            }
                            t if t.starts_with('p') => params.pad = parse_prefixed(t, 'p', line)?,
                            t => {
                                return Err(Error::Spec(format!(
                                    "line {line}: unknown conv option `{t}`"
                                )))
                            }
                        }
                    }
                    layers.push(LayerSpec::Conv { params, activation });
                }
                "pool" => {
                    let d = parse_dims(toks.get(1).copied().unwrap_or(""), 2, line)?;
                    let mut p = PoolParams {
                        kernel: (d[0], d[1]),
                        stride: 1,
                    };
                    for t in &toks[2..] {
                        match *t {
                            "max" => {}
                            t if t.starts_with('s') => p.stride = parse_prefixed(t, 's', line)?,
                            t => {
                                return Err(Error::Spec(format!(
                                    "line {line}: unknown pool option `{t}`"
                                )))
                            }
                        }
                    }
                    layers.push(LayerSpec::Pool(p));
                }
                "fc" => layers.push(LayerSpec::Fc {
                    out_features: parse_count(toks.get(1), line)?,
                }),
                "softmax" => layers.push(LayerSpec::Classifier {
                    num_classes: parse_count(toks.get(1), line)?,
                }),
                other => return Err(Error::Spec(format!("line {line}: unknown layer `{other}`"))),
            }
        }
        let input = input.ok_or_else(|| Error::Spec("missing `input` line".into()))?;
        Ok(ArchitectureSpec { input, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain() {
        let shapes = micronnet_default().validate().unwrap();
        let spatial: Vec<usize> = shapes.iter().map(|s| s.input.1).collect();
        assert_eq!(spatial, vec![48, 48, 44, 22, 20, 10, 8, 4, 1, 1]);
        let fc_in = shapes[7].input;
        assert_eq!(fc_in.0 * fc_in.1 * fc_in.2, 1184);
        assert_eq!(shapes.last().unwrap().output, (43, 1, 1));
    }

    #[test]
    fn text_roundtrip() {
        let spec = micronnet_default();
        let text = spec.to_string();
        assert_eq!(text.parse::<ArchitectureSpec>().unwrap(), spec);
        assert!(
            text.starts_with("input 3x48x48\nconv 1x1x1 s1 p0 linear\nconv 5x5x29 s1 p0 relu\n")
        );
    }

    #[test]
    fn parse_comments_and_defaults() {
        let spec: ArchitectureSpec =
            "# tiny\ninput 3x12x12\nconv 3x3x4   # relu default\npool 3x3 s2\nsoftmax 5\n"
                .parse()
                .unwrap();
        assert_eq!(spec.layers[0], LayerSpec::conv(4, 3));
        assert_eq!(spec.layers[1], LayerSpec::Pool(PoolParams::new(3, 2)));
        spec.validate().unwrap();
    }

    #[test]
    fn rejects_bad_chains() {
        let cases = [
            "input 3x8x8\nfc 10\nconv 3x3x2\nsoftmax 3",
            "input 3x8x8\nsoftmax 3\nfc 10",
            "input 3x4x4\nconv 5x5x2\nsoftmax 3",
            "input 3x8x8\nfc 0\nsoftmax 3",
        ];
        for c in cases {
            let spec: ArchitectureSpec = c.parse().unwrap();
            assert!(matches!(spec.validate(), Err(Error::Spec(_))), "{c}");
        }
        let no_classifier: ArchitectureSpec = "input 3x8x8\nfc 10".parse().unwrap();
        assert!(no_classifier.shapes().is_ok());
        assert!(no_classifier.validate().is_err());
    }

    #[test]
    fn parse_errors() {
        assert!("conv 3x3x4".parse::<ArchitectureSpec>().is_err());
        assert!("input 3x8\n".parse::<ArchitectureSpec>().is_err());
        assert!("input 3x8x8\nbogus 1".parse::<ArchitectureSpec>().is_err());
        assert!("input 3x8x8\nconv 3x3x4 q9"
            .parse::<ArchitectureSpec>()
            .is_err());
    }

    #[test]
    fn ids_differ() {
        let a = micronnet_default();
        let mut b = a.clone();
        b.layers[1] = LayerSpec::conv(28, 5);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.id(), micronnet_default().id());
    }
}
