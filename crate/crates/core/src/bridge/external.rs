use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{parse_metric_report, sha256_hex, ClipSpec, CommandTemplate, EncodeError, EncodeJob, EncoderBackend, MetricKeys};
use crate::curve::RDPoint;

const OUTPUT_TAIL: usize = 2048;

fn tail(bytes: &[u8]) -> String {
    let s = String::from_utf8_lossy(bytes);
    let start = s.len().saturating_sub(OUTPUT_TAIL);
    let start = (start..s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(s.len());
    s[start..].trim().to_string()
}

fn run(stage: &'static str, argv: &[String], cwd: &Path) -> Result<(), EncodeError> {
    let (program, args) = argv.split_first().ok_or_else(|| EncodeError::Template(format!("{stage} command is empty")))?;
    tracing::debug!(stage, cmd = argv.join(" "), "running");
    let out = Command::new(program)
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .output()
        .map_err(|source| EncodeError::Spawn { program: program.clone(), source })?;
    if !out.status.success() {
        let mut captured = tail(&out.stderr);
        if captured.is_empty() {
            captured = tail(&out.stdout);
        }
        return Err(EncodeError::ProcessFailed { stage, status: out.status.to_string(), output: captured });
    }
    Ok(())
}

/// Runs the encoder then the metric tool for `job` inside `job.work_dir`
/// and assembles the RD point. Bitrate is the encoded size over the clip
/// duration.
pub fn encode_measure(job: &EncodeJob, templates: &CommandTemplate, keys: &MetricKeys) -> Result<RDPoint, EncodeError> {
    templates.validate()?;
    let input = job.input_path();
    if !input.is_file() {
        return Err(EncodeError::io(input, std::io::Error::new(std::io::ErrorKind::NotFound, "input clip not found")));
    }
    std::fs::create_dir_all(&job.work_dir).map_err(|e| EncodeError::io(&job.work_dir, e))?;
    let output = job.work_dir.join("encoded.bin");
    let report = job.work_dir.join("metric.json");

    run("encoder", &templates.render_encoder(job, &output), &job.work_dir)?;
    let size = std::fs::metadata(&output).map_err(|e| EncodeError::io(&output, e))?.len();
    if size == 0 {
        return Err(EncodeError::Domain(format!("encoder produced an empty file at {}", output.display())));
    }

    run("metric", &templates.render_metric(job, &output, &report), &job.work_dir)?;
    let bytes = std::fs::read(&report).map_err(|e| EncodeError::io(&report, e))?;
    let (msssim, vmaf) = parse_metric_report(&bytes, keys)?;

    let kbps = size as f64 * 8.0 / job.clip.duration_seconds() / 1000.0;
    Ok(RDPoint::new(job.qp, kbps, msssim, vmaf)?)
}

/// Patched encoders driven through command templates.
pub struct ExternalBackend {
    templates: CommandTemplate,
    keys: MetricKeys,
    identities: Mutex<HashMap<PathBuf, String>>,
}

impl ExternalBackend {
    pub fn new(templates: CommandTemplate, keys: MetricKeys) -> Result<Self, EncodeError> {
        templates.validate()?;
        Ok(ExternalBackend { templates, keys, identities: Mutex::new(HashMap::new()) })
    }
}

impl EncoderBackend for ExternalBackend {
    fn encode(&self, job: &EncodeJob) -> Result<RDPoint, EncodeError> {
        encode_measure(job, &self.templates, &self.keys)
    }

    fn template_digest(&self) -> String {
        let keys = serde_json::to_vec(&self.keys).unwrap_or_default();
        sha256_hex(&[
            b"external",
            self.templates.encoder_template.as_bytes(),
            self.templates.metric_template.as_bytes(),
            &keys,
        ])
    }

    /// SHA-256 of the clip file, computed once per path.
    fn clip_identity(&self, clip: &ClipSpec) -> Result<String, EncodeError> {
        if let Some(id) = self.identities.lock().expect("identity cache poisoned").get(&clip.path) {
            return Ok(id.clone());
        }
        let mut file = std::fs::File::open(&clip.path).map_err(|e| EncodeError::io(&clip.path, e))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let n = file.read(&mut buf).map_err(|e| EncodeError::io(&clip.path, e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
        let id = hex::encode(h.finalize());
        self.identities.lock().expect("identity cache poisoned").insert(clip.path.clone(), id.clone());
        Ok(id)
    }
}
