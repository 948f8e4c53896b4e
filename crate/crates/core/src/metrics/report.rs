use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::perturbation::Curve;
use super::MetricError;
use crate::cam::Method;

/// Per-image, per-method evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub method: Method,
    pub pcc: Option<f64>,
    pub rmse: Option<f64>,
    pub d_auc: Option<f64>,
    pub i_auc: Option<f64>,
}

impl ImageResult {
    fn measures(&self) -> [Option<f64>; 4] {
        [self.pcc, self.rmse, self.d_auc, self.i_auc]
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `image_id,method,pcc,rmse,d_auc,i_auc`; missing values are empty.
pub fn results_csv(results: &[ImageResult]) -> String {
    let mut out = String::from("image_id,method,pcc,rmse,d_auc,i_auc\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.image_id,
            r.method,
            cell(r.pcc),
            cell(r.rmse),
            cell(r.d_auc),
            cell(r.i_auc)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub images: usize,
    pub pcc: Option<MeanStd>,
    pub rmse: Option<MeanStd>,
    pub d_auc: Option<MeanStd>,
    pub i_auc: Option<MeanStd>,
}

fn by_method(results: &[ImageResult]) -> BTreeMap<Method, Vec<&ImageResult>> {
    let mut groups: BTreeMap<Method, Vec<&ImageResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.method).or_default().push(r);
    }
    groups
}

fn column(rows: &[&ImageResult], k: usize) -> Vec<f64> {
    rows.iter().filter_map(|r| r.measures()[k]).collect()
}

/// Mean and standard deviation of each measure per method.
pub fn summarize(results: &[ImageResult]) -> Vec<MethodSummary> {
    by_method(results)
        .into_iter()
        .map(|(method, rows)| MethodSummary {
            method,
            images: rows.len(),
            pcc: MeanStd::of(&column(&rows, 0)),
            rmse: MeanStd::of(&column(&rows, 1)),
            d_auc: MeanStd::of(&column(&rows, 2)),
            i_auc: MeanStd::of(&column(&rows, 3)),
        })
        .collect()
}

/// Human-rated image conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionLabel {
    pub image_id: String,
    pub occlusion: bool,
    pub degradation: bool,
}

pub fn load_condition_labels(path: &std::path::Path) -> Result<Vec<ConditionLabel>, MetricError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricError::Labels {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_condition_labels(&text)
}

/// Parses `image_id,occlusion,degradation` with 0/1 flags.
pub fn parse_condition_labels(text: &str) -> Result<Vec<ConditionLabel>, MetricError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let err = |line: u64, message: String| MetricError::Labels { line, message };
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let pos = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, format!("missing column {name}")))
    };
    let (ci, co, cd) = (pos("image_id")?, pos("occlusion")?, pos("degradation")?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let flag = |k: usize, name: &str| match row.get(k).unwrap_or("") {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(err(line, format!("{name} must be 0 or 1, got {other:?}"))),
        };
        out.push(ConditionLabel {
            image_id: row.get(ci).unwrap_or("").to_string(),
            occlusion: flag(co, "occlusion")?,
            degradation: flag(cd, "degradation")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionGroup {
    All,
    Occlusion(bool),
    Degradation(bool),
    Cell { occlusion: bool, degradation: bool },
}

impl ConditionGroup {
    fn contains(&self, label: &ConditionLabel) -> bool {
        match *self {
            ConditionGroup::All => true,
            ConditionGroup::Occlusion(o) => label.occlusion == o,
            ConditionGroup::Degradation(d) => label.degradation == d,
            ConditionGroup::Cell {
                occlusion,
                degradation,
            } => label.occlusion == occlusion && label.degradation == degradation,
        }
    }

    pub fn label(&self) -> String {
        let yn = |b: bool| if b { "Y" } else { "N" };
        match *self {
            ConditionGroup::All => "all".into(),
            ConditionGroup::Occlusion(o) => format!("occlusion={}", yn(o)),
            ConditionGroup::Degradation(d) => format!("degradation={}", yn(d)),
            ConditionGroup::Cell {
                occlusion,
                degradation,
            } => format!("occlusion={};degradation={}", yn(occlusion), yn(degradation)),
        }
    }

    /// Overall, the four marginals, then the four cells.
    pub fn table_order() -> Vec<ConditionGroup> {
        let mut groups = vec![ConditionGroup::All];
        for b in [true, false] {
            groups.push(ConditionGroup::Occlusion(b));
        }
        for b in [true, false] {
            groups.push(ConditionGroup::Degradation(b));
        }
        for occlusion in [true, false] {
            for degradation in [true, false] {
                groups.push(ConditionGroup::Cell {
                    occlusion,
                    degradation,
                });
            }
        }
        groups
    }
}

/// Means of each measure over the images of one method in one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub method: Method,
    pub group: ConditionGroup,
    pub images: usize,
    pub pcc: Option<f64>,
    pub rmse: Option<f64>,
    pub d_auc: Option<f64>,
    pub i_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub rows: Vec<ConditionRow>,
}

impl ConditionTable {
    pub fn row(&self, method: Method, group: ConditionGroup) -> Option<&ConditionRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.group == group)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,condition,images,pcc,rmse,d_auc,i_auc\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method,
                r.group.label(),
                r.images,
                cell(r.pcc),
                cell(r.rmse),
                cell(r.d_auc),
                cell(r.i_auc)
            );
        }
        out
    }
}

/// Per-method means split by occlusion and degradation.
pub fn stratified_eval(
    results: &[ImageResult],
    labels: &[ConditionLabel],
) -> Result<ConditionTable, MetricError> {
    let by_id: BTreeMap<&str, &ConditionLabel> =
        labels.iter().map(|l| (l.image_id.as_str(), l)).collect();
    let missing: BTreeSet<String> = results
        .iter()
        .filter(|r| !by_id.contains_key(r.image_id.as_str()))
        .map(|r| r.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingLabels(missing.into_iter().collect()));
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut rows = Vec::new();
    for (method, method_rows) in by_method(results) {
        for group in ConditionGroup::table_order() {
            let members: Vec<&ImageResult> = method_rows
                .iter()
                .copied()
                .filter(|r| group.contains(by_id[r.image_id.as_str()]))
                .collect();
            rows.push(ConditionRow {
                method,
                group,
                images: members.len(),
                pcc: mean(column(&members, 0)),
                rmse: mean(column(&members, 1)),
                d_auc: mean(column(&members, 2)),
                i_auc: mean(column(&members, 3)),
            });
        }
    }
    Ok(ConditionTable { rows })
}

/// `label,direction,fraction,score` for every sample of every curve.
pub fn curves_csv(curves: &[(String, Curve)]) -> String {
    let mut out = String::from("label,direction,fraction,score\n");
    for (label, c) in curves {
        let dir = match c.direction {
            super::Direction::Deletion => "deletion",
            super::Direction::Insertion => "insertion",
        };
        for (f, s) in &c.samples {
            let _ = writeln!(out, "{label},{dir},{f},{s}");
        }
    }
    out
}

const PALETTE: [&str; 6] = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725", "#d95f02"];

/// Line plot of score against modified fraction.
pub fn curves_svg(title: &str, curves: &[(String, Curve)]) -> String {
    let (w, h, m) = (480.0, 320.0, 40.0);
    let (lo, hi) = curves
        .iter()
        .flat_map(|(_, c)| c.samples.iter().map(|s| s.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    };
    let px = |f: f64| m + f * (w - 2.0 * m);
    let py = |s: f64| h - m - (s - lo) / (hi - lo) * (h - 2.0 * m);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{m}" y="{}" font-size="10">0</text><text x="{}" y="{}" font-size="10" text-anchor="end">1</text>"#,
        h - m + 14.0,
        w - m,
        h - m + 14.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{lo:.3}</text><text x="{}" y="{m}" font-size="10" text-anchor="end">{hi:.3}</text>"#,
        m - 4.0,
        h - m,
        m - 4.0
    );
    for (k, (label, c)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = c
            .samples
            .iter()
            .map(|&(f, s)| format!("{:.2},{:.2}", px(f), py(s)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#,
            w - m + 4.0 - 80.0,
            m + 12.0 * (k as f64 + 1.0),
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, method: Method, pcc: f64, d_auc: Option<f64>) -> ImageResult {
        ImageResult {
            image_id: id.into(),
            method,
            pcc: Some(pcc),
            rmse: Some(1.0 - pcc),
            d_auc,
            i_auc: None,
        }
    }

    #[test]
    fn csv_leaves_missing_measures_empty() {
        let csv = results_csv(&[result("a", Method::Gc, 0.5, None)]);
        assert_eq!(csv, "image_id,method,pcc,rmse,d_auc,i_auc\na,gc,0.5,0.5,,\n");
    }

    #[test]
    fn summary_mean_and_std() {
        let rs = vec![
            result("a", Method::Hag, 0.2, Some(0.1)),
            result("b", Method::Hag, 0.4, None),
        ];
        let s = summarize(&rs);
        assert_eq!(s.len(), 1);
        let pcc = s[0].pcc.unwrap();
        assert!((pcc.mean - 0.3).abs() < 1e-12);
        assert!((pcc.std - (0.02f64).sqrt()).abs() < 1e-12);
        assert_eq!(s[0].d_auc.unwrap().n, 1);
        assert!(s[0].i_auc.is_none());
    }

    #[test]
    fn labels_parse_and_reject_bad_flags() {
        let l = parse_condition_labels("image_id,occlusion,degradation\na,1,0\nb,0,0\n").unwrap();
        assert_eq!(l.len(), 2);
        assert!(l[0].occlusion && !l[0].degradation);
        let err = parse_condition_labels("image_id,occlusion,degradation\na,yes,0\n").unwrap_err();
        assert!(matches!(err, MetricError::Labels { line: 2, .. }));
    }

    #[test]
    fn single_condition_equals_overall_mean() {
        let rs = vec![
            result("a", Method::Gc, 0.2, None),
            result("b", Method::Gc, 0.6, None),
        ];
        let labels: Vec<ConditionLabel> = ["a", "b"]
            .iter()
            .map(|id| ConditionLabel {
                image_id: id.to_string(),
                occlusion: true,
                degradation: false,
            })
            .collect();
        let t = stratified_eval(&rs, &labels).unwrap();
        let all = t.row(Method::Gc, ConditionGroup::All).unwrap().pcc;
        let cell = t
            .row(
                Method::Gc,
                ConditionGroup::Cell {
                    occlusion: true,
                    degradation: false,
                },
            )
            .unwrap()
            .pcc;
        assert_eq!(all, cell);
        let empty = t.row(Method::Gc, ConditionGroup::Occlusion(false)).unwrap();
        assert_eq!((empty.images, empty.pcc), (0, None));
    }

    #[test]
    fn missing_labels_listed() {
        let rs = vec![result("a", Method::Gc, 0.2, None), result("z", Method::Gc, 0.2, None)];
        let err = stratified_eval(&rs, &[]).unwrap_err();
        assert_eq!(err, MetricError::MissingLabels(vec!["a".into(), "z".into()]));
    }

    #[test]
    fn svg_has_one_polyline_per_curve() {
        let c = Curve {
            direction: super::super::Direction::Deletion,
            samples: vec![(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)],
        };
        let svg = curves_svg("a <b>", &[("gc".into(), c.clone()), ("hag".into(), c)]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt;b&gt;"));
    }
}
