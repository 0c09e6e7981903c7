use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EncodeError;

/// Dotted key paths into the metric tool's JSON report. Numeric segments
/// index into arrays.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricKeys {
    pub msssim: String,
    #[serde(default)]
    pub vmaf: Option<String>,
    #[serde(default)]
    pub vmaf_required: bool,
}

impl Default for MetricKeys {
    /// Pooled means as laid out by libvmaf's `--json` output.
    fn default() -> Self {
        MetricKeys {
            msssim: "pooled_metrics.float_ms_ssim.mean".into(),
            vmaf: Some("pooled_metrics.vmaf.mean".into()),
            vmaf_required: false,
        }
    }
}

fn lookup<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, seg| match v {
        Value::Object(map) => map.get(seg),
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

/// Extracts `(msssim, vmaf)` from a metric report.
pub fn parse_metric_report(report: &[u8], keys: &MetricKeys) -> Result<(f64, Option<f64>), EncodeError> {
    let doc: Value = serde_json::from_slice(report).map_err(|e| EncodeError::ReportParse(e.to_string()))?;
    let number = |path: &str| lookup(&doc, path).and_then(Value::as_f64);
    let msssim = number(&keys.msssim).ok_or_else(|| EncodeError::MissingKey(keys.msssim.clone()))?;
    let vmaf = match &keys.vmaf {
        Some(path) => match number(path) {
            Some(v) => Some(v),
            None if keys.vmaf_required => return Err(EncodeError::MissingKey(path.clone())),
            None => None,
        },
        None => None,
    };
    Ok((msssim, vmaf))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"{
        "version": "2.3.1",
        "frames": [{"frameNum": 0, "metrics": {"float_ms_ssim": 0.98}}],
        "pooled_metrics": {
            "float_ms_ssim": {"min": 0.95, "max": 0.99, "mean": 0.987, "harmonic_mean": 0.986},
            "vmaf": {"min": 80.0, "max": 95.0, "mean": 91.25, "harmonic_mean": 91.0}
        }
    }"#;

    #[test]
    fn extracts_pooled_means() {
        let (ms, vmaf) = parse_metric_report(FULL.as_bytes(), &MetricKeys::default()).unwrap();
        assert_eq!(ms, 0.987);
        assert_eq!(vmaf, Some(91.25));
    }

    #[test]
    fn array_paths() {
        let keys = MetricKeys { msssim: "frames.0.metrics.float_ms_ssim".into(), vmaf: None, vmaf_required: false };
        assert_eq!(parse_metric_report(FULL.as_bytes(), &keys).unwrap(), (0.98, None));
    }

    #[test]
    fn optional_vmaf() {
        let doc = r#"{"pooled_metrics": {"float_ms_ssim": {"mean": 0.987}}}"#;
        assert_eq!(parse_metric_report(doc.as_bytes(), &MetricKeys::default()).unwrap(), (0.987, None));
        let strict = MetricKeys { vmaf_required: true, ..Default::default() };
        match parse_metric_report(doc.as_bytes(), &strict) {
            Err(EncodeError::MissingKey(p)) => assert_eq!(p, "pooled_metrics.vmaf.mean"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_document() {
        let truncated = &FULL[..FULL.len() / 2];
        assert!(matches!(
            parse_metric_report(truncated.as_bytes(), &MetricKeys::default()),
            Err(EncodeError::ReportParse(_))
        ));
    }

    #[test]
    fn missing_msssim_names_path() {
        let err = parse_metric_report(br#"{"pooled_metrics": {}}"#, &MetricKeys::default()).unwrap_err();
        assert!(err.to_string().contains("pooled_metrics.float_ms_ssim.mean"));
    }
}
