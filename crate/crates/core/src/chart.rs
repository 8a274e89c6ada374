//! Structured chart payloads. Rendering happens client side (or in the
//! transcript exporter); the wire only carries data.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Text(String),
}

impl From<f64> for AxisValue {
    fn from(x: f64) -> Self {
        AxisValue::Number(x)
    }
}

impl From<&str> for AxisValue {
    fn from(s: &str) -> Self {
        AxisValue::Text(s.to_string())
    }
}

impl From<String> for AxisValue {
    fn from(s: String) -> Self {
        AxisValue::Text(s)
    }
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Number(x) => write!(f, "{x}"),
            AxisValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub x: Vec<AxisValue>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_error: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub label: String,
    /// Label on the edge from the parent ("yes" / "no"); empty at the root.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub edge: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_action: Option<String>,
}

impl TreeNode {
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::node_count).sum::<usize>()
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        if self.children.is_empty() {
            vec![self]
        } else {
            self.children.iter().flat_map(|c| c.leaves()).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartSpec {
    Bar {
        title: String,
        #[serde(default)]
        x_label: String,
        #[serde(default)]
        y_label: String,
        series: Vec<Series>,
    },
    Line {
        title: String,
        #[serde(default)]
        x_label: String,
        #[serde(default)]
        y_label: String,
        series: Vec<Series>,
    },
    Tree {
        title: String,
        root: TreeNode,
    },
}

impl ChartSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ChartSpec::Bar { .. } => "bar",
            ChartSpec::Line { .. } => "line",
            ChartSpec::Tree { .. } => "tree",
        }
    }

    pub fn title(&self) -> &str {
        match self {
            ChartSpec::Bar { title, .. }
            | ChartSpec::Line { title, .. }
            | ChartSpec::Tree { title, .. } => title,
        }
    }

    pub fn series(&self) -> &[Series] {
        match self {
            ChartSpec::Bar { series, .. } | ChartSpec::Line { series, .. } => series,
            ChartSpec::Tree { .. } => &[],
        }
    }

    /// Checks the structural invariants: equal x/y lengths and labelled leaves.
    pub fn is_well_formed(&self) -> bool {
        match self {
            ChartSpec::Bar { series, .. } | ChartSpec::Line { series, .. } => {
                series.iter().all(|s| {
                    s.x.len() == s.y.len()
                        && s.y_error.as_ref().is_none_or(|e| e.len() == s.y.len())
                })
            }
            ChartSpec::Tree { root, .. } => root.leaves().iter().all(|l| l.leaf_action.is_some()),
        }
    }
}

/// Formats `x` with at most `digits` significant digits, trimming trailing
/// zeros ("4.96", "0.0839", "12").
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" { "0".into() } else { s }
}
