//! Parameter and multiply-accumulate accounting, information density and
//! NetScore.

use std::fmt::Write as _;

use crate::error::Result;
use crate::network::{ArchitectureSpec, LayerSpec};

/// Cost of one layer of a spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub kind: &'static str,
    pub output: (usize, usize, usize),
    pub params: u64,
    pub macs: u64,
}

/// Closed-form per-layer costs. Conv: `kh*kw*cin*cout + cout` parameters,
/// `h'*w'*kh*kw*cin*cout` MACs. FC: `m*k + k` parameters, `m*k` MACs.
/// Pooling and activations are free; bias additions are not MACs.
pub fn layer_costs(spec: &ArchitectureSpec) -> Result<Vec<LayerCost>> {
    let shapes = spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .zip(shapes)
        .map(|(layer, s)| {
            let (cin, h, w) = s.input;
            let (params, macs, kind) = match layer {
                LayerSpec::Conv { params: p, .. } => {
                    let (kh, kw) = p.kernel;
                    let per_pos = (kh * kw * cin * p.out_channels) as u64;
                    let positions = (s.output.1 * s.output.2) as u64;
                    (per_pos + p.out_channels as u64, per_pos * positions, "conv")
                }
                LayerSpec::Pool(_) => (0, 0, "pool"),
                LayerSpec::Fc { out_features: k } | LayerSpec::Classifier { num_classes: k } => {
                    let m = (cin * h * w) as u64;
                    let k = *k as u64;
                    let kind = if matches!(layer, LayerSpec::Fc { .. }) {
                        "fc"
                    } else {
                        "softmax"
                    };
                    (m * k + k, m * k, kind)
                }
            };
            LayerCost {
                kind,
                output: s.output,
                params,
                macs,
            }
        })
        .collect())
}

pub fn param_count(spec: &ArchitectureSpec) -> Result<u64> {
    Ok(layer_costs(spec)?.iter().map(|c| c.params).sum())
}

pub fn mac_count(spec: &ArchitectureSpec) -> Result<u64> {
    Ok(layer_costs(spec)?.iter().map(|c| c.macs).sum())
}

/// Accuracy percent per million parameters.
pub fn information_density(accuracy_pct: f64, params: f64) -> f64 {
    accuracy_pct / (params / 1e6)
}

/// Weights of the three NetScore terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetScoreCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for NetScoreCoefficients {
    fn default() -> Self {
        NetScoreCoefficients {
            alpha: 2.0,
            beta: 0.5,
            gamma: 0.5,
        }
    }
}

/// `20 * log10(a^alpha / (p^beta * m^gamma))` with `a` in percent, `p` in
/// millions of parameters and `m` in billions of MACs.
pub fn netscore(accuracy_pct: f64, params: f64, macs: f64, c: NetScoreCoefficients) -> f64 {
    let p = params / 1e6;
    let m = macs / 1e9;
    20.0 * (c.alpha * accuracy_pct.log10() - c.beta * p.log10() - c.gamma * m.log10())
}

/// Efficiency summary for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    /// Bytes to store the parameters at the given width (2 for 16-bit formats).
    pub bytes_per_param: usize,
    pub accuracy_pct: Option<f64>,
    pub coefficients: NetScoreCoefficients,
    pub layers: Vec<LayerCost>,
}

impl EfficiencyReport {
    pub fn new(
        name: impl Into<String>,
        spec: &ArchitectureSpec,
        bytes_per_param: usize,
    ) -> Result<Self> {
        let layers = layer_costs(spec)?;
        Ok(EfficiencyReport {
            name: name.into(),
            params: layers.iter().map(|c| c.params).sum(),
            macs: layers.iter().map(|c| c.macs).sum(),
            bytes_per_param,
            accuracy_pct: None,
            coefficients: NetScoreCoefficients::default(),
            layers,
        })
    }

    pub fn with_accuracy(mut self, accuracy_pct: f64) -> Self {
        self.accuracy_pct = Some(accuracy_pct);
        self
    }

    pub fn model_bytes(&self) -> u64 {
        self.params * self.bytes_per_param as u64
    }

    pub fn information_density(&self) -> Option<f64> {
        self.accuracy_pct
            .map(|a| information_density(a, self.params as f64))
    }

    pub fn netscore(&self) -> Option<f64> {
        self.accuracy_pct
            .map(|a| netscore(a, self.params as f64, self.macs as f64, self.coefficients))
    }

    /// Aligned text table: per-layer costs, then totals and metrics.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "network: {}", self.name);
        let _ = writeln!(
            s,
            "{:<4} {:<8} {:>14} {:>12} {:>14}",
            "#", "type", "output", "params", "MACs"
        );
        for (i, l) in self.layers.iter().enumerate() {
            let out = format!("{}x{}x{}", l.output.0, l.output.1, l.output.2);
            let _ = writeln!(
                s,
                "{:<4} {:<8} {:>14} {:>12} {:>14}",
                i + 1,
                l.kind,
                out,
                l.params,
                l.macs
            );
        }
        let _ = writeln!(s, "{:<28} {:>12} {:>14}", "total", self.params, self.macs);
        let _ = writeln!(
            s,
            "model size: {} bytes ({:.2} MB) at {} bytes/param",
            self.model_bytes(),
            self.model_bytes() as f64 / 1e6,
            self.bytes_per_param
        );
        let _ = writeln!(
            s,
            "params: {:.2}M  MACs: {:.1}M",
            self.params as f64 / 1e6,
            self.macs as f64 / 1e6
        );
        if let (Some(a), Some(d), Some(n)) = (
            self.accuracy_pct,
            self.information_density(),
            self.netscore(),
        ) {
            let rounded_p = round_sig(self.params as f64, 2);
            let rounded_m = round_sig(self.macs as f64, 3);
            let _ = writeln!(s, "top-1 accuracy: {a:.2}%");
            let _ = writeln!(s, "information density: {d:.1} %/MParams (exact count)");
            let _ = writeln!(
                s,
                "information density: {:.1} %/MParams ({:.2}M rounded)",
                information_density(a, rounded_p),
                rounded_p / 1e6
            );
            let c = self.coefficients;
            let _ = writeln!(
                s,
                "NetScore (alpha={}, beta={}, gamma={}; p in M params, m in G MACs): {n:.2} (exact), {:.2} (rounded {:.2}M / {:.1}M)",
                c.alpha,
                c.beta,
                c.gamma,
                netscore(a, rounded_p, rounded_m, c),
                rounded_p / 1e6,
                rounded_m / 1e6
            );
        }
        s
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "name,{}", self.name);
        let _ = writeln!(s, "params,{}", self.params);
        let _ = writeln!(s, "macs,{}", self.macs);
        let _ = writeln!(s, "model_bytes,{}", self.model_bytes());
        if let (Some(a), Some(d), Some(n)) = (
            self.accuracy_pct,
            self.information_density(),
            self.netscore(),
        ) {
            let _ = writeln!(s, "accuracy_pct,{a}");
            let _ = writeln!(s, "information_density,{d:.4}");
            let _ = writeln!(s, "netscore,{n:.4}");
            let _ = writeln!(s, "alpha,{}", self.coefficients.alpha);
            let _ = writeln!(s, "beta,{}", self.coefficients.beta);
            let _ = writeln!(s, "gamma,{}", self.coefficients.gamma);
        }
        s
    }
}

/// Round to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}
